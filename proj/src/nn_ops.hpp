#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "angdiff/precision.hpp"

namespace angdiff::nn {

inline constexpr double kLayerNormEps = 1e-6;

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline Eigen::MatrixXd silu(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return silu(v); });
}

inline Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return silu_grad(v); });
}

inline void maybe_round(Eigen::MatrixXd& m, bool on) {
  if (!on) return;
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = round_bf16(m.data()[i]);
}

// Column-wise layer norm without affine parameters.
struct LayerNormOut {
  Eigen::MatrixXd normed;
  Eigen::RowVectorXd inv_std;
};

inline LayerNormOut layer_norm(const Eigen::MatrixXd& h) {
  const double rows = static_cast<double>(h.rows());
  const Eigen::RowVectorXd mean = h.colwise().mean();
  Eigen::MatrixXd centered = h.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.colwise().squaredNorm() / rows;
  LayerNormOut out;
  out.inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  out.normed = centered.array().rowwise() * out.inv_std.array();
  return out;
}

inline Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& d_normed,
                                           const Eigen::MatrixXd& normed,
                                           const Eigen::RowVectorXd& inv_std) {
  const double rows = static_cast<double>(normed.rows());
  const Eigen::RowVectorXd mean_d = d_normed.colwise().mean();
  const Eigen::RowVectorXd mean_dn = d_normed.cwiseProduct(normed).colwise().sum() / rows;
  Eigen::MatrixXd dx = d_normed.rowwise() - mean_d;
  dx -= (normed.array().rowwise() * mean_dn.array()).matrix();
  dx.array().rowwise() *= inv_std.array();
  return dx;
}

}  // namespace angdiff::nn
