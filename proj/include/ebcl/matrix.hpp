#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ebcl/error.hpp"

namespace ebcl {

/// Row-major dense matrix of doubles.
///
/// Zero-width shapes (d x 0) are admitted so an empty constraint basis can be
/// carried by the same type; every numerical entry point rejects non-finite
/// data via require_finite().
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::InvalidInput,
            "DenseMatrix: data length does not match shape");
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Leading `cols` columns of the n x n identity.
  static DenseMatrix eye(std::size_t rows, std::size_t cols) {
    DenseMatrix m(rows, cols);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    DenseMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::InvalidInput, "from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> values) {
    DenseMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  void set_col(std::size_t j, std::span<const double> values) {
    require(values.size() == rows_, ErrorKind::InvalidInput, "set_col: length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = values[i];
  }

  /// Columns [first, last).
  DenseMatrix columns(std::size_t first, std::size_t last) const {
    require(first <= last && last <= cols_, ErrorKind::InvalidInput, "columns: range out of bounds");
    DenseMatrix out(rows_, last - first);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = first; j < last; ++j) out(i, j - first) = (*this)(i, j);
    return out;
  }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    check_same(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    check_same(o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  DenseMatrix& operator*=(double a) noexcept {
    for (double& v : data_) v *= a;
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
  friend DenseMatrix operator-(DenseMatrix a) { return a *= -1.0; }

  /// Bitwise equality of shape and entries.
  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void check_same(const DenseMatrix& o, const char* op) const {
    require(same_shape(o), ErrorKind::InvalidInput,
            std::string(op) + ": shape mismatch " + shape_string() + " vs " + o.shape_string());
  }

 public:
  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_finite(const DenseMatrix& m, const char* where) {
  require(m.all_finite(), ErrorKind::InvalidInput, std::string(where) + ": non-finite entry");
}

/// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::InvalidInput,
          "matmul: " + a.shape_string() + " * " + b.shape_string());
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// aᵀ * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), ErrorKind::InvalidInput,
          "matmul_tn: " + a.shape_string() + "ᵀ * " + b.shape_string());
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// a * bᵀ
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.cols(), ErrorKind::InvalidInput,
          "matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "ᵀ");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ai[k] * bj[k];
      c(i, j) = acc;
    }
  }
  return c;
}

/// [a b]
inline DenseMatrix hconcat(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), ErrorKind::InvalidInput, "hconcat: row mismatch");
  DenseMatrix c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), c.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), c.row(i).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Text format: "rows cols" then `rows` lines of `cols` space-separated values
// printed with 17 significant digits, which round-trips any finite double.

inline std::string format_double(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline void write_matrix(std::ostream& os, const DenseMatrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(line, "malformed number '" + std::string(tok) + "'");
  return v;
}

template <typename Int>
Int parse_count(std::string_view tok, std::size_t line) {
  Int v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "malformed integer '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

/// Reads one matrix block. `line_no` tracks the 1-based line for diagnostics
/// when several blocks share a stream.
inline DenseMatrix read_matrix(std::istream& is, std::size_t& line_no) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(line_no + 1, "missing matrix header");
  ++line_no;
  auto head = detail::split_ws(line);
  if (head.size() != 2) throw ParseError(line_no, "matrix header must be 'rows cols'");
  const auto rows = detail::parse_count<std::size_t>(head[0], line_no);
  const auto cols = detail::parse_count<std::size_t>(head[1], line_no);
  DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) throw ParseError(line_no + 1, "truncated matrix body");
    ++line_no;
    auto toks = detail::split_ws(line);
    if (toks.size() != cols)
      throw ParseError(line_no, "expected " + std::to_string(cols) + " values, got " +
                                    std::to_string(toks.size()));
    for (std::size_t j = 0; j < cols; ++j) {
      m(i, j) = detail::parse_double(toks[j], line_no);
      if (!std::isfinite(m(i, j))) throw ParseError(line_no, "non-finite value");
    }
  }
  return m;
}

inline DenseMatrix read_matrix(std::istream& is) {
  std::size_t line_no = 0;
  return read_matrix(is, line_no);
}

inline void save_matrix(const std::string& path, const DenseMatrix& m) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::IoError, "cannot open " + path + " for writing");
  write_matrix(os, m);
}

inline DenseMatrix load_matrix(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path);
  return read_matrix(is);
}

}  // namespace ebcl
