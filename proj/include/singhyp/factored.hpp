#pragma once

#include "singhyp/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace singhyp {

/// A d x k matrix held as Q * diag(exp(log_diag)) * U: Q has orthonormal
/// columns, U is unit upper triangular. Long products of expanding and
/// contracting steps keep every singular direction representable, which a
/// single scale factor cannot do once the spread exceeds the double range.
struct FactoredMatrix {
  Matrix q;
  Matrix u;
  Vector log_diag;

  Eigen::Index cols() const { return u.cols(); }

  /// this <- step * this.
  void left_multiply(const Matrix& step) {
    const Eigen::Index k = q.cols();
    Eigen::HouseholderQR<Matrix> qr(step * q);
    Matrix r = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
    Matrix qq = qr.householderQ() * Matrix::Identity(step.rows(), k);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (r(i, i) < 0) {
        r.row(i) *= -1.0;
        qq.col(i) *= -1.0;
      }
    }
    // r * D * U = D' * (D'^-1 r D) * U with D' = diag(r_ii) * D.
    Matrix mixed = Matrix::Identity(k, k);
    Vector next = log_diag;
    for (Eigen::Index i = 0; i < k; ++i) {
      next[i] += std::log(r(i, i));
      for (Eigen::Index j = i + 1; j < k; ++j) {
        const double spread = std::min(log_diag[j] - log_diag[i], 700.0);
        mixed(i, j) = r(i, j) / r(i, i) * std::exp(spread);
      }
    }
    q = std::move(qq);
    u = mixed * u;
    log_diag = std::move(next);
  }

  Matrix value() const { return q * log_diag.array().exp().matrix().asDiagonal() * u; }

  /// Triangular factor scaled by exp(-shift).
  Matrix scaled_r(double shift) const {
    Matrix r = u;
    for (Eigen::Index i = 0; i < r.rows(); ++i) r.row(i) *= std::exp(log_diag[i] - shift);
    return r;
  }

  /// Inverse of the triangular factor scaled by exp(-shift).
  Matrix scaled_r_inverse(double shift) const {
    const Eigen::Index k = u.cols();
    Matrix uinv = u.template triangularView<Eigen::UnitUpper>().solve(Matrix::Identity(k, k));
    for (Eigen::Index j = 0; j < k; ++j) uinv.col(j) *= std::exp(-log_diag[j] - shift);
    return uinv;
  }

  double log_norm() const {
    const double m = log_diag.maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r(m));
    return m + std::log(svd.singularValues()(0));
  }

  double log_min_singular() const {
    const double m = (-log_diag).maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r_inverse(m));
    return -(m + std::log(svd.singularValues()(0)));
  }

  /// log of the k-dimensional volume stretch.
  double log_volume() const { return log_diag.sum(); }

  /// Log singular values, descending. Extremes are computed from R and R^-1;
  /// interior values come from the scaled factor.
  Vector log_singular_values() const {
    const Eigen::Index k = cols();
    Vector out(k);
    const double m = log_diag.maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r(m));
    Vector ld = log_diag;
    std::sort(ld.data(), ld.data() + k, std::greater<>());
    for (Eigen::Index i = 0; i < k; ++i) {
      const double s = svd.singularValues()(i);
      out[i] = s > 1e-280 ? m + std::log(s) : ld[i];
    }
    out[0] = log_norm();
    out[k - 1] = log_min_singular();
    return out;
  }

  /// The n most contracted right singular directions, in the coordinates of
  /// the initial frame (k x n).
  Matrix contracted_directions(Eigen::Index n) const {
    const double m = (-log_diag).maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r_inverse(m), Eigen::ComputeFullU);
    return svd.matrixU().leftCols(n);
  }

  /// The n most expanded right singular directions, initial coordinates.
  Matrix expanded_directions(Eigen::Index n) const {
    const double m = log_diag.maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r(m), Eigen::ComputeFullV);
    return svd.matrixV().leftCols(n);
  }

  /// The n most expanded left singular directions, ambient coordinates (d x n).
  Matrix expanded_images(Eigen::Index n) const {
    const double m = log_diag.maxCoeff();
    Eigen::JacobiSVD<Matrix> svd(scaled_r(m), Eigen::ComputeFullU);
    return q * svd.matrixU().leftCols(n);
  }
};

/// Factored product initialised with the frame F (d x k, full column rank).
inline FactoredMatrix factored_frame(const Matrix& frame) {
  FactoredMatrix f;
  const Eigen::Index k = frame.cols();
  f.q = frame;
  f.u = Matrix::Identity(k, k);
  f.log_diag = Vector::Zero(k);
  Eigen::HouseholderQR<Matrix> qr(frame);
  Matrix r = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  f.q = qr.householderQ() * Matrix::Identity(frame.rows(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (r(i, i) < 0) {
      r.row(i) *= -1.0;
      f.q.col(i) *= -1.0;
    }
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    f.log_diag[i] = std::log(r(i, i));
    for (Eigen::Index j = i + 1; j < k; ++j) f.u(i, j) = r(i, j) / r(i, i);
  }
  return f;
}

/// Orthonormal basis of the orthogonal complement of span(a) in R^d.
inline Matrix orthogonal_complement(const Matrix& a, Eigen::Index d) {
  if (a.cols() == 0) return Matrix::Identity(d, d);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix full = qr.householderQ() * Matrix::Identity(d, d);
  return full.rightCols(d - a.cols());
}

/// Orthonormalize the columns of a (thin QR).
inline Matrix orthonormalize(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

/// Largest principal angle between the column spans of two orthonormal frames
/// of equal dimension.
inline double principal_angle(const Matrix& a, const Matrix& b) {
  if (a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a.transpose() * b);
  const double c = std::clamp(svd.singularValues().minCoeff(), 0.0, 1.0);
  // asin of the residual is accurate for tiny angles where acos is not.
  const Matrix resid = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<Matrix> rs(resid);
  const double s = std::clamp(rs.singularValues().maxCoeff(), 0.0, 1.0);
  return c > 0.7 ? std::asin(s) : std::acos(c);
}

}  // namespace singhyp
