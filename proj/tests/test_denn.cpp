#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dennlm/denn.hpp"
#include "oracles.hpp"

using namespace dennlm;

namespace {

DennParams<double> random_denn(uint64_t seed, int order, int branches, Index dim,
                               Index hidden, Index vocab) {
  std::vector<std::pair<int, int>> dims(static_cast<size_t>(branches),
                                        {static_cast<int>(dim), static_cast<int>(hidden)});
  return init_denn<double>(order, dims, vocab, Activation::kTanh, seed);
}

std::vector<int32_t> iota_sample(int32_t k) {
  std::vector<int32_t> s(static_cast<size_t>(k));
  for (int32_t i = 0; i < k; ++i) s[static_cast<size_t>(i)] = i;
  return s;
}

}  // namespace

TEST_CASE("cosine matrix of orthonormal columns is the identity") {
  Mat<double> r = Mat<double>::Zero(4, 6);
  r(0, 0) = 1.0;
  r(1, 1) = 1.0;
  r(2, 2) = 1.0;
  r(3, 3) = 1.0;
  auto c = cosine_matrix(r, iota_sample(4));
  CHECK((c - Mat<double>::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cosine matrix ignores positive scaling") {
  Rng rng(5);
  Mat<double> r = gaussian_init<double>(rng, 6, 10, 1.0);
  auto sample = iota_sample(8);
  Mat<double> scaled = 3.7 * r;
  CHECK((cosine_matrix(r, sample) - cosine_matrix(scaled, sample)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("cosine matrix is invariant under orthogonal maps") {
  Rng rng(6);
  Mat<double> r = gaussian_init<double>(rng, 8, 12, 1.0);
  // orthogonal factor from a QR decomposition of a random matrix
  Mat<double> a = gaussian_init<double>(rng, 8, 8, 1.0);
  Eigen::HouseholderQR<Mat<double>> qr(a);
  Mat<double> q = qr.householderQ();
  Mat<double> rotated = q * r;
  auto sample = iota_sample(10);
  CHECK((cosine_matrix(r, sample) - cosine_matrix(rotated, sample)).cwiseAbs().maxCoeff() <
        1e-10);
}

TEST_CASE("cosine matrix properties: symmetry, unit diagonal, range") {
  Rng rng(7);
  Mat<double> r = gaussian_init<double>(rng, 5, 30, 1.0);
  Rng srng(8);
  auto sample = srng.sample_without_replacement(12, 30);
  Mat<double> c = cosine_matrix(r, sample);
  CHECK((c - Mat<double>(c.transpose())).cwiseAbs().maxCoeff() < 1e-15);
  for (Index i = 0; i < c.rows(); ++i) CHECK(c(i, i) == 1.0);
  CHECK(c.maxCoeff() <= 1.0 + 1e-12);
  CHECK(c.minCoeff() >= -1.0 - 1e-12);
}

TEST_CASE("zero embedding columns produce zero off-diagonals") {
  Mat<double> r = Mat<double>::Zero(3, 4);
  r(0, 1) = 1.0;
  auto c = cosine_matrix(r, iota_sample(3));
  CHECK(c(0, 0) == 1.0);
  CHECK(c(0, 1) == 0.0);
  CHECK(c(0, 2) == 0.0);
}

TEST_CASE("d_rep closed-form values") {
  Mat<double> eye = Mat<double>::Identity(4, 4);
  CHECK(d_rep(eye, eye) == doctest::Approx(-0.25).epsilon(1e-15));
  Mat<double> neg = -eye;
  CHECK(d_rep(eye, neg) == doctest::Approx(0.25).epsilon(1e-15));

  Mat<double> wrong = Mat<double>::Identity(5, 5);
  CHECK_THROWS_AS(d_rep(eye, wrong), std::invalid_argument);
}

TEST_CASE("d_rep matches a naive double loop and is symmetric") {
  Rng rng(9);
  Mat<double> r1 = gaussian_init<double>(rng, 8, 25, 1.0);
  Mat<double> r2 = gaussian_init<double>(rng, 8, 25, 1.0);
  auto sample = rng.sample_without_replacement(20, 25);
  Mat<double> c1 = cosine_matrix(r1, sample), c2 = cosine_matrix(r2, sample);

  double naive = 0;
  for (Index a = 0; a < 20; ++a)
    for (Index b = 0; b < 20; ++b) naive += c1(a, b) * c2(a, b);
  naive = -naive / 400.0;
  CHECK(d_rep(c1, c2) == doctest::Approx(naive).epsilon(1e-12));
  CHECK(d_rep(c1, c2) == d_rep(c2, c1));
  CHECK(d_rep(c1, c2) >= -1.0);
  CHECK(d_rep(c1, c2) <= 1.0);
}

TEST_CASE("multi_d_rep degenerate and pairwise cases") {
  Mat<double> eye = Mat<double>::Identity(4, 4);
  std::vector<Mat<double>> one{eye};
  CHECK(multi_d_rep(one) == 0.0);

  Rng rng(10);
  Mat<double> c2 = cosine_matrix(gaussian_init<double>(rng, 4, 4, 1.0), iota_sample(4));
  std::vector<Mat<double>> two{eye, c2};
  CHECK(multi_d_rep(two) == d_rep(eye, c2));

  std::vector<Mat<double>> three{eye, eye, eye};
  CHECK(multi_d_rep(three) == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("single-branch loss collapses to plain cross-entropy for any beta") {
  DennParams<double> p = random_denn(20, 3, 1, 5, 6, 12);
  Rng brng(21);
  NGramBatch batch = oracles::random_batch(brng, 8, 3, 12);
  double reference = nll(p.branches[0], batch);
  for (double beta : {0.0, 0.3, 1.0}) {
    LossWeights w;
    w.beta = beta;
    w.gamma = 4.0;  // no pairs, so the diversity term stays zero
    w.sample_size = 5;
    Rng rng(1);
    LossBreakdown loss = denn_loss(p, batch, w, rng);
    CHECK(loss.total == doctest::Approx(reference).epsilon(1e-12));
    CHECK(loss.diversity == 0.0);
  }
}

TEST_CASE("beta=1, gamma=0 is the mixture negative log-likelihood") {
  DennParams<double> p = random_denn(22, 3, 2, 4, 5, 10);
  Rng brng(23);
  NGramBatch batch = oracles::random_batch(brng, 6, 3, 10);
  LossWeights w;
  w.beta = 1.0;
  w.gamma = 0.0;
  w.sample_size = 4;
  Rng rng(2);
  LossBreakdown loss = denn_loss(p, batch, w, rng);

  double manual = 0;
  for (Index b = 0; b < batch.size(); ++b) {
    double mix = 0;
    for (Index m = 0; m < 2; ++m) {
      std::vector<int32_t> ctx{batch.contexts(b, 0), batch.contexts(b, 1)};
      mix += p.alpha(m) * distribution(p.branches[static_cast<size_t>(m)], ctx)(batch.targets(b));
    }
    manual -= std::log(mix);
  }
  manual /= static_cast<double>(batch.size());
  CHECK(loss.total == doctest::Approx(manual).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(loss.mixture_nll).epsilon(1e-15));
}

TEST_CASE("identical branches: mixture equals individual, diversity maximal") {
  DennParams<double> p = random_denn(24, 3, 2, 4, 5, 9);
  p.branches[1] = p.branches[0];
  Rng brng(25);
  NGramBatch batch = oracles::random_batch(brng, 5, 3, 9);
  LossWeights w;
  w.beta = 0.5;
  w.gamma = 2.0;
  w.sample_size = 6;
  Rng rng(3);
  LossBreakdown loss = denn_loss(p, batch, w, rng);
  CHECK(loss.mixture_nll == doctest::Approx(loss.individual_nll).epsilon(1e-12));

  // d_rep of a matrix with itself: -mean of squared entries
  Rng rng2(3);
  auto sample = rng2.sample_without_replacement(6, 9);
  Mat<double> c = cosine_matrix(p.branches[0].embed, sample);
  double self = -(c.array() * c.array()).sum() / 36.0;
  CHECK(loss.diversity == doctest::Approx(self).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(0.5 * loss.mixture_nll + 0.5 * loss.individual_nll -
                                      2.0 * loss.diversity)
                          .epsilon(1e-10));
}

TEST_CASE("mixture nll never exceeds individual nll (Jensen)") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    DennParams<double> p = random_denn(seed, 3, 3, 3, 4, 8);
    Rng brng(seed + 50);
    NGramBatch batch = oracles::random_batch(brng, 6, 3, 8);
    LossWeights w;
    Rng rng(seed);
    LossBreakdown loss = denn_loss(p, batch, w, rng);
    CHECK(loss.mixture_nll <= loss.individual_nll + 1e-12);
  }
}

TEST_CASE("oversized diversity sample is rejected") {
  DennParams<double> p = random_denn(26, 3, 2, 3, 4, 5);
  Rng brng(27);
  NGramBatch batch = oracles::random_batch(brng, 4, 3, 5);
  LossWeights w;
  w.sample_size = 6;  // > V
  Rng rng(4);
  CHECK_THROWS_AS(denn_loss(p, batch, w, rng), std::invalid_argument);
}

TEST_CASE("full gradient matches finite differences, diversity included") {
  DennParams<double> p = random_denn(30, 3, 2, 4, 5, 12);
  Rng brng(31);
  NGramBatch batch = oracles::random_batch(brng, 5, 3, 12);
  LossWeights w;
  w.beta = 0.5;
  w.gamma = 2.0;
  w.sample_size = 6;
  auto r = oracles::finite_difference_check(p, batch, w, 777);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("raw diversity mode also passes the gradient check") {
  DennParams<double> p = random_denn(90, 3, 2, 3, 4, 9);
  Rng brng(91);
  NGramBatch batch = oracles::random_batch(brng, 4, 3, 9);
  LossWeights w;
  w.beta = 0.4;
  w.gamma = 0.01;  // raw values are large, keep the step sane
  w.sample_size = 5;
  w.raw_diversity = true;
  auto r = oracles::finite_difference_check(p, batch, w, 778);
  CHECK(r.max_rel_err < 1e-4);

  // raw value = mean value * K^2 * pairs
  Rng r1(11), r2(11);
  LossWeights mean_w = w;
  mean_w.raw_diversity = false;
  double raw = denn_loss(p, batch, w, r1).diversity;
  double mean = denn_loss(p, batch, mean_w, r2).diversity;
  CHECK(raw == doctest::Approx(mean * 25.0).epsilon(1e-10));
}

TEST_CASE("gamma=0 gradients equal alpha-weighted per-branch backprop") {
  DennParams<double> p = random_denn(33, 3, 2, 4, 5, 10);
  p.alpha << 0.3, 0.7;
  Rng brng(34);
  NGramBatch batch = oracles::random_batch(brng, 6, 3, 10);
  LossWeights w;
  w.beta = 0.0;  // pure individual term: exactly alpha-weighted backprop
  w.gamma = 0.0;
  Rng rng(5);
  auto grads = denn_backward(p, batch, w, rng);
  for (Index m = 0; m < 2; ++m) {
    NnlmGrads<double> ref = backward(p.branches[static_cast<size_t>(m)], batch);
    double a = p.alpha(m);
    CHECK((grads[static_cast<size_t>(m)].embed - a * ref.embed).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((grads[static_cast<size_t>(m)].out_w - a * ref.out_w).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((grads[static_cast<size_t>(m)].hidden_w - a * ref.hidden_w).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("embedding columns outside batch and sample get zero gradient") {
  DennParams<double> p = random_denn(35, 2, 2, 3, 4, 40);
  NGramBatch batch;
  batch.contexts.resize(2, 1);
  batch.contexts << 1, 2;
  batch.targets.resize(2);
  batch.targets << 3, 4;
  LossWeights w;
  w.beta = 0.5;
  w.gamma = 1.5;
  w.sample_size = 5;
  Rng rng(6);
  auto grads = denn_backward(p, batch, w, rng);
  Rng replay(6);
  auto sample = replay.sample_without_replacement(5, 40);
  std::set<int32_t> touched(sample.begin(), sample.end());
  touched.insert({1, 2});
  for (int32_t col = 0; col < 40; ++col) {
    double norm = grads[0].embed.col(col).cwiseAbs().maxCoeff();
    if (touched.count(col) == 0) CHECK(norm == 0.0);
  }
}

TEST_CASE("loss and gradients are deterministic given the seed") {
  DennParams<double> p = random_denn(40, 3, 2, 4, 5, 11);
  Rng brng(41);
  NGramBatch batch = oracles::random_batch(brng, 5, 3, 11);
  LossWeights w;
  w.gamma = 1.0;
  w.sample_size = 6;
  Rng r1(123), r2(123);
  auto [l1, g1] = denn_loss_and_backward(p, batch, w, r1);
  auto [l2, g2] = denn_loss_and_backward(p, batch, w, r2);
  CHECK(l1.total == l2.total);
  CHECK((g1[0].embed - g2[0].embed).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g1[1].embed - g2[1].embed).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fuse_predict mixes branch distributions") {
  DennParams<double> p = random_denn(42, 3, 2, 4, 5, 7);
  std::vector<int32_t> ctx{1, 2};
  Vec<double> fused = fuse_predict(p, ctx);
  Vec<double> manual = 0.5 * distribution(p.branches[0], ctx) +
                       0.5 * distribution(p.branches[1], ctx);
  CHECK((fused - manual).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(fused.sum() - 1.0) < 1e-12);

  DennParams<double> single = random_denn(43, 3, 1, 4, 5, 7);
  CHECK((fuse_predict(single, ctx) - distribution(single.branches[0], ctx))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("block matrices reproduce concatenated hidden activations") {
  for (int branches : {1, 2, 4}) {
    DennParams<double> p = random_denn(50 + static_cast<uint64_t>(branches), 3, branches, 3, 4, 8);
    // vary per-branch sizes when there are two branches
    if (branches == 2) {
      Rng rng(99);
      p.branches[1] = init_nnlm<double>(3, 5, 6, 8, Activation::kTanh, rng);
    }
    BlockMatrices<double> blocks = to_block_matrices(p);

    Rng brng(60);
    NGramBatch batch = oracles::random_batch(brng, 6, 3, 8);

    // stacked one-hots, newest history word first
    Mat<double> onehot = Mat<double>::Zero(batch.size(), 2 * 8);
    for (Index b = 0; b < batch.size(); ++b) {
      onehot(b, batch.contexts(b, 1)) = 1.0;       // newest
      onehot(b, 8 + batch.contexts(b, 0)) = 1.0;   // oldest
    }
    Mat<double> embedded = matmul(onehot, Mat<double>(blocks.embed_block.transpose()));
    Mat<double> pre = matmul(embedded, Mat<double>(blocks.hidden_block.transpose()));
    pre.rowwise() += blocks.hidden_bias.transpose();
    Mat<double> hidden = tanh_elem(pre);

    Index offset = 0;
    for (const auto& branch : p.branches) {
      Mat<double> expect = forward(branch, batch).hidden;
      CHECK((hidden.middleCols(offset, branch.hidden_size()) - expect)
                .cwiseAbs()
                .maxCoeff() < 1e-12);
      offset += branch.hidden_size();
    }
  }
}

TEST_CASE("block form parameter count undercuts the dense equivalent") {
  DennParams<double> p = random_denn(70, 3, 2, 4, 5, 20);
  Index sum_d = 0, sum_h = 0, block_params = 0;
  for (const auto& b : p.branches) {
    sum_d += b.embed_dim();
    sum_h += b.hidden_size();
    block_params += b.embed.size() + b.hidden_w.size() + b.out_w.size();
  }
  const Index width = 2, vocab = 20;
  Index dense_params = sum_d * vocab + sum_h * (width * sum_d) + vocab * sum_h;
  CHECK(block_params < dense_params);

  // single branch: the block view is the plain parameter set
  DennParams<double> single = random_denn(71, 3, 1, 4, 5, 9);
  BlockMatrices<double> blocks = to_block_matrices(single);
  CHECK((blocks.hidden_block - single.branches[0].hidden_w).cwiseAbs().maxCoeff() == 0.0);
  CHECK((blocks.out_block - single.branches[0].out_w).cwiseAbs().maxCoeff() == 0.0);
}
