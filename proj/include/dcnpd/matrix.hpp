#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcnpd {

/// Dense row-major real matrix. Rows are examples, columns are features/units.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IndexVector = Eigen::VectorXi;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace detail

/// One feature vector as a 1-row matrix.
inline Matrix as_row(const Vector& x) {
  return Matrix(x.transpose());
}

/// Rows of `src` selected by `idx`, in order.
template <class IndexRange>
Matrix gather_rows(const Matrix& src, const IndexRange& idx) {
  Matrix out(static_cast<Eigen::Index>(std::size(idx)), src.cols());
  Eigen::Index r = 0;
  for (auto i : idx) out.row(r++) = src.row(static_cast<Eigen::Index>(i));
  return out;
}

template <class Vec, class IndexRange>
Vec gather(const Vec& src, const IndexRange& idx) {
  Vec out(static_cast<Eigen::Index>(std::size(idx)));
  Eigen::Index r = 0;
  for (auto i : idx) out(r++) = src(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace dcnpd
