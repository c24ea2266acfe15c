#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ebcl/error.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/manifold.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

struct GpmUpdateResult;

/// Orthonormal basis of retained past-task gradient directions.
class GradientMemory {
 public:
  static GradientMemory init(std::size_t d, double epsilon = 0.95) {
    require(d >= 1, ErrorKind::InvalidInput, "GradientMemory: d must be >= 1");
    require(epsilon > 0.0 && epsilon <= 1.0, ErrorKind::InvalidInput,
            "GradientMemory: epsilon must lie in (0, 1]");
    return GradientMemory(ConstraintBasis::empty(d), epsilon);
  }

  /// Rebuilds a memory from a stored basis (used when loading checkpoints).
  static GradientMemory from_basis(DenseMatrix g, double epsilon) {
    require(epsilon > 0.0 && epsilon <= 1.0, ErrorKind::InvalidInput,
            "GradientMemory: epsilon must lie in (0, 1]");
    return GradientMemory(ConstraintBasis(std::move(g)), epsilon);
  }

  const ConstraintBasis& basis() const noexcept { return basis_; }
  double epsilon() const noexcept { return epsilon_; }
  std::size_t d() const noexcept { return basis_.d(); }
  std::size_t k() const noexcept { return basis_.k(); }

  DenseMatrix project_out(const DenseMatrix& z) const { return complement_project(basis_, z); }

  GpmUpdateResult update(const DenseMatrix& snapshot) const;

 private:
  GradientMemory(ConstraintBasis basis, double epsilon)
      : basis_(std::move(basis)), epsilon_(epsilon) {}

  ConstraintBasis basis_;
  double epsilon_;
};

struct GpmUpdateResult {
  GradientMemory memory;
  std::size_t added = 0;
};

/// Smallest prefix count r such that captured + Σ_{i<r} σ_i² ≥ ε·total,
/// capped at the number of supplied values.
inline std::size_t energy_prefix(double captured, const std::vector<double>& sigma, double total,
                                 double epsilon) {
  const double target = epsilon * total * (1.0 - 1e-12);
  double acc = captured;
  std::size_t r = 0;
  while (acc < target && r < sigma.size()) {
    acc += sigma[r] * sigma[r];
    ++r;
  }
  return r;
}

inline GpmUpdateResult GradientMemory::update(const DenseMatrix& snapshot) const {
  require(snapshot.rows() == d() && snapshot.cols() >= 1, ErrorKind::InvalidInput,
          "gpm update: snapshot is " + snapshot.shape_string() + ", memory has d = " +
              std::to_string(d()));
  require_finite(snapshot, "gpm update");
  const double norm = fro_norm(snapshot);
  require(norm > 0.0, ErrorKind::InvalidInput, "gpm update: zero snapshot");
  const double total = norm * norm;

  double captured = 0.0;
  if (k() > 0) {
    const double c = fro_norm(matmul_tn(basis_.matrix(), snapshot));
    captured = c * c;
  }
  const DenseMatrix residual = project_out(snapshot);
  const ThinSvd svd = thin_svd(residual);
  std::vector<double> sigma;
  for (double s : svd.sigma)
    if (s > 1e-10 * norm) sigma.push_back(s);

  const std::size_t r = energy_prefix(captured, sigma, total, epsilon_);
  if (r == 0) return {*this, 0};
  if (k() + r > d())
    fail(ErrorKind::CapacityExhausted, "gpm update: k + r_t = " + std::to_string(k() + r) +
                                           " exceeds d = " + std::to_string(d()));
  const DenseMatrix joint = hconcat(basis_.matrix(), svd.u.columns(0, r));
  return {GradientMemory(ConstraintBasis(orthonormalize(joint)), epsilon_), r};
}

/// Concatenates per-minibatch gradient blocks side by side after scaling each
/// block to unit Frobenius norm. Zero blocks are skipped.
inline DenseMatrix build_snapshot(const std::vector<DenseMatrix>& blocks) {
  require(!blocks.empty(), ErrorKind::InvalidInput, "build_snapshot: no gradient blocks");
  DenseMatrix out(blocks.front().rows(), 0);
  for (const DenseMatrix& b : blocks) {
    require(b.rows() == out.rows(), ErrorKind::InvalidInput, "build_snapshot: row mismatch");
    const double n = fro_norm(b);
    if (n == 0.0) continue;
    out = hconcat(out, b * (1.0 / n));
  }
  return out;
}

/// Header `epsilon k d`, then the d x k basis.
inline void write_memory(std::ostream& os, const GradientMemory& m) {
  os << format_double(m.epsilon()) << ' ' << m.k() << ' ' << m.d() << '\n';
  write_matrix(os, m.basis().matrix());
}

inline GradientMemory read_memory(std::istream& is, std::size_t& line_no) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(line_no + 1, "missing memory header");
  ++line_no;
  const auto toks = detail::split_ws(line);
  if (toks.size() != 3) throw ParseError(line_no, "memory header must be 'epsilon k d'");
  const double eps = detail::parse_double(toks[0], line_no);
  const auto k = detail::parse_count<std::size_t>(toks[1], line_no);
  const auto d = detail::parse_count<std::size_t>(toks[2], line_no);
  const std::size_t header_line = line_no;
  DenseMatrix g = read_matrix(is, line_no);
  if (g.rows() != d || g.cols() != k)
    throw ParseError(header_line, "memory basis shape disagrees with header");
  try {
    return GradientMemory::from_basis(std::move(g), eps);
  } catch (const Error& e) {
    throw ParseError(header_line, e.what());
  }
}

}  // namespace ebcl
