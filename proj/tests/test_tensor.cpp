#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dennlm/tensor.hpp"
#include "oracles.hpp"

using namespace dennlm;

TEST_CASE("matmul identity and scalar case") {
  Rng rng(1);
  Mat<double> a = gaussian_init<double>(rng, 4, 6, 1.0);
  Mat<double> eye = Mat<double>::Identity(6, 6);
  CHECK((matmul(a, eye) - a).cwiseAbs().maxCoeff() == 0.0);

  Mat<double> x(1, 1), y(1, 1);
  x << 2.0;
  y << 3.0;
  CHECK(matmul(x, y)(0, 0) == 6.0);
}

TEST_CASE("matmul dimension mismatch throws") {
  Mat<double> a = Mat<double>::Zero(2, 3), b = Mat<double>::Zero(4, 2);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul matches the naive triple loop") {
  Rng rng(7);
  Mat<double> a = gaussian_init<double>(rng, 7, 5, 1.0);
  Mat<double> b = gaussian_init<double>(rng, 5, 3, 1.0);
  CHECK((matmul(a, b) - oracles::naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    Index m = 1 + static_cast<Index>(rng.below(16));
    Index k = 1 + static_cast<Index>(rng.below(16));
    Index n = 1 + static_cast<Index>(rng.below(16));
    Mat<double> x = gaussian_init<double>(rng, m, k, 1.0);
    Mat<double> y = gaussian_init<double>(rng, k, n, 1.0);
    CHECK((matmul(x, y) - oracles::naive_matmul(x, y)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("activations at reference points") {
  Mat<double> z = Mat<double>::Zero(1, 1);
  CHECK(tanh_elem(z)(0, 0) == 0.0);
  CHECK(sigmoid_elem(z)(0, 0) == 0.5);

  // odd symmetry
  Rng rng(3);
  Mat<double> x = gaussian_init<double>(rng, 4, 4, 2.0);
  CHECK((tanh_elem(Mat<double>(-x)) + tanh_elem(x)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("activations match a high-precision reference on a grid") {
  Mat<double> x(1, 100);
  for (int i = 0; i < 100; ++i) x(0, i) = -5.0 + 10.0 * i / 99.0;
  Mat<double> t = tanh_elem(x), s = sigmoid_elem(x);
  for (int i = 0; i < 100; ++i) {
    long double v = static_cast<long double>(x(0, i));
    CHECK(std::abs(t(0, i) - static_cast<double>(std::tanh(v))) < 1e-12);
    CHECK(std::abs(s(0, i) - static_cast<double>(1.0L / (1.0L + std::exp(-v)))) < 1e-12);
  }
}

TEST_CASE("softmax of a zero row is uniform") {
  Mat<double> x = Mat<double>::Zero(1, 5);
  Mat<double> p = softmax_rows(x);
  for (int j = 0; j < 5; ++j) CHECK(p(0, j) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("softmax is shift invariant and normalized") {
  Rng rng(11);
  Mat<double> x = gaussian_init<double>(rng, 6, 9, 3.0);
  Mat<double> shifted = x;
  shifted.array() += 123.5;
  Mat<double> p = softmax_rows(x), q = softmax_rows(shifted);
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
  for (Index i = 0; i < p.rows(); ++i) {
    CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
    CHECK(p.row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("softmax survives huge logits") {
  Mat<double> x(1, 2);
  x << 1000.0, 0.0;
  Mat<double> p = softmax_rows(x);
  CHECK(all_finite(p));
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("cross entropy basics") {
  Mat<double> onehot = Mat<double>::Zero(2, 4);
  onehot(0, 2) = 1.0;
  onehot(1, 0) = 1.0;
  IdVec targets(2);
  targets << 2, 0;
  CHECK(cross_entropy_rows(onehot, targets) == 0.0);

  Mat<double> uniform = Mat<double>::Constant(3, 4, 0.25);
  IdVec t3(3);
  t3 << 0, 1, 3;
  CHECK(cross_entropy_rows(uniform, t3) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // two mixed rows against direct arithmetic
  Mat<double> p(2, 3);
  p << 0.5, 0.25, 0.25, 0.1, 0.2, 0.7;
  IdVec t2(2);
  t2 << 0, 2;
  double expected = -(std::log(0.5) + std::log(0.7)) / 2.0;
  CHECK(cross_entropy_rows(p, t2) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross entropy clamps zero probabilities with a warning") {
  Mat<double> p = Mat<double>::Zero(1, 2);
  p(0, 1) = 1.0;
  IdVec t(1);
  t << 0;
  std::vector<std::string> warnings;
  double loss = cross_entropy_rows(p, t, &warnings);
  CHECK(loss == doctest::Approx(-std::log(1e-30)));
  CHECK(warnings.size() == 1);
}

TEST_CASE("gaussian_init determinism and degenerate stddev") {
  Rng a(42), b(42);
  Mat<float> m1 = gaussian_init<float>(a, 5, 7, 0.3);
  Mat<float> m2 = gaussian_init<float>(b, 5, 7, 0.3);
  CHECK((m1 - m2).cwiseAbs().maxCoeff() == 0.0f);

  Rng c(1);
  Mat<double> zeros = gaussian_init<double>(c, 3, 3, 0.0);
  CHECK(zeros.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gaussian_init sample statistics") {
  Rng rng(2024);
  const double stddev = 0.7;
  Mat<double> m = gaussian_init<double>(rng, 250, 400, stddev);  // 1e5 draws
  double mean = m.mean();
  double var = (m.array() - mean).square().sum() / static_cast<double>(m.size() - 1);
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(std::sqrt(var) - stddev) / stddev < 0.02);
}

TEST_CASE("rng streams are stable across instances") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(9).below(100) == Rng(9).below(100));
}

TEST_CASE("sample_without_replacement yields distinct in-range ids") {
  Rng rng(5);
  auto s = rng.sample_without_replacement(20, 50);
  std::set<int32_t> seen(s.begin(), s.end());
  CHECK(seen.size() == 20);
  for (int32_t v : s) {
    CHECK(v >= 0);
    CHECK(v < 50);
  }
}
