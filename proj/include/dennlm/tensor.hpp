#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dennlm/rng.hpp"

namespace dennlm {

// Dense numeric types. Everything numeric is templated on the scalar so the
// same code runs in 32-bit (training default) and 64-bit (gradient checks,
// oracles). Storage is row-major, which is also the serialization layout.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatXd = Mat<double>;
using MatXf = Mat<float>;
using VecXd = Vec<double>;

// Word-id containers.
using IdMat = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IdVec = Eigen::Matrix<int32_t, Eigen::Dynamic, 1>;

using Eigen::Index;

// Probabilities below this are clamped before taking logs.
inline constexpr double kProbFloor = 1e-30;

template <class S>
bool all_finite(const Mat<S>& x) {
  return x.allFinite();
}

template <class S>
Mat<S> matmul(const Mat<S>& a, const Mat<S>& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  return a * b;
}

// Activations go through std:: scalar calls, not Eigen's vectorized
// approximations, so 64-bit results hit reference accuracy.
template <class S>
Mat<S> tanh_elem(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return static_cast<S>(std::tanh(static_cast<double>(v))); });
}

template <class S>
Mat<S> sigmoid_elem(const Mat<S>& x) {
  return x.unaryExpr([](S v) {
    double d = static_cast<double>(v);
    double r = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    return static_cast<S>(r);
  });
}

/// Row-wise softmax with per-row max subtraction.
template <class S>
Mat<S> softmax_rows(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    S m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Mean negative log-likelihood (natural log) of the target column of each
/// row. Rows of `probs` are probability simplices; zero target probabilities
/// are clamped at kProbFloor and reported through `warnings` when given.
template <class S>
double cross_entropy_rows(const Mat<S>& probs, const IdVec& targets,
                          std::vector<std::string>* warnings = nullptr) {
  if (probs.rows() != targets.size())
    throw std::invalid_argument("cross_entropy_rows: batch size mismatch");
  double acc = 0.0;
  for (Index b = 0; b < probs.rows(); ++b) {
    int32_t t = targets(b);
    if (t < 0 || t >= probs.cols())
      throw std::invalid_argument("cross_entropy_rows: target id out of range");
    double p = static_cast<double>(probs(b, t));
    if (p < kProbFloor) {
      if (warnings)
        warnings->push_back("cross_entropy_rows: clamped zero probability at row " +
                            std::to_string(b));
      p = kProbFloor;
    }
    acc += std::log(p);
  }
  return -acc / static_cast<double>(probs.rows());
}

/// I.i.d. Normal(0, stddev^2) matrix, filled row by row so the layout of the
/// draw stream is pinned.
template <class S>
Mat<S> gaussian_init(Rng& rng, Index rows, Index cols, double stddev) {
  if (stddev < 0) throw std::invalid_argument("gaussian_init: stddev must be >= 0");
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>(stddev * rng.gaussian());
  return m;
}

}  // namespace dennlm
