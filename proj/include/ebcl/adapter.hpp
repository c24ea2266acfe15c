#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ebcl/error.hpp"
#include "ebcl/gpm.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/manifold.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

inline constexpr double kDefaultScaleMin = 0.002;
inline constexpr double kDefaultScaleMax = 0.010;

using LayerStack = std::vector<DenseMatrix>;

/// ΔW = s·U·Vᵀ for one layer.
struct TaskUpdate {
  double s = 0.0;
  RestrictedStiefelPoint u;
  RestrictedStiefelPoint v;
  std::size_t layer_index = 0;

  std::size_t rank() const noexcept { return u.r(); }
};

struct Directions {
  RestrictedStiefelPoint u0;
  RestrictedStiefelPoint v0;
  std::size_t padded = 0;
};

namespace detail {

inline std::size_t numerical_rank(const std::vector<double>& sigma) {
  if (sigma.empty() || sigma.front() <= 0.0) return 0;
  std::size_t q = 0;
  for (double s : sigma)
    if (s > 1e-10 * sigma.front()) ++q;
  return q;
}

}  // namespace detail

/// Leading r singular pairs of (I − GGᵀ)·snapshot. Throws RankDeficient when
/// the projected snapshot has fewer than r significant directions.
inline Directions init_directions(const DenseMatrix& snapshot, const GradientMemory& memory,
                                  std::size_t r) {
  require(r >= 1, ErrorKind::InvalidInput, "init_directions: r must be >= 1");
  require(snapshot.rows() == memory.d(), ErrorKind::InvalidInput,
          "init_directions: snapshot rows do not match memory dimension");
  require(r <= snapshot.cols(), ErrorKind::InvalidInput, "init_directions: r exceeds n");
  if (r + memory.k() > memory.d())
    fail(ErrorKind::InfeasibleDimensions, "init_directions: r + k exceeds d");
  const ThinSvd svd = thin_svd(memory.project_out(snapshot));
  const std::size_t q = detail::numerical_rank(svd.sigma);
  if (q < r)
    fail(ErrorKind::RankDeficient, "init_directions: projected snapshot has rank " +
                                       std::to_string(q) + " < r = " + std::to_string(r));
  return {RestrictedStiefelPoint::make(memory.basis(), svd.u.columns(0, r)),
          RestrictedStiefelPoint::make(ConstraintBasis::empty(snapshot.cols()), svd.v.columns(0, r)),
          0};
}

/// As init_directions, but when only q < r directions are available the
/// remaining r − q columns of U are drawn at random from the complement of G
/// and the chosen columns.
inline Directions init_directions_padded(const DenseMatrix& snapshot, const GradientMemory& memory,
                                         std::size_t r, std::uint64_t seed) {
  require(r >= 1, ErrorKind::InvalidInput, "init_directions: r must be >= 1");
  require(snapshot.rows() == memory.d(), ErrorKind::InvalidInput,
          "init_directions: snapshot rows do not match memory dimension");
  require(r <= snapshot.cols(), ErrorKind::InvalidInput, "init_directions: r exceeds n");
  if (r + memory.k() > memory.d())
    fail(ErrorKind::InfeasibleDimensions, "init_directions: r + k exceeds d");
  const ThinSvd svd = thin_svd(memory.project_out(snapshot));
  const std::size_t q = std::min(detail::numerical_rank(svd.sigma), r);
  DenseMatrix u = svd.u.columns(0, q);
  if (q < r) {
    const ConstraintBasis taken(hconcat(memory.basis().matrix(), u));
    const auto extra = random_feasible(taken, memory.d(), r - q, seed);
    u = hconcat(u, extra.u());
  }
  return {RestrictedStiefelPoint::make(memory.basis(), std::move(u)),
          RestrictedStiefelPoint::make(ConstraintBasis::empty(snapshot.cols()), svd.v.columns(0, r)),
          r - q};
}

/// Linear interpolation from s_min at the first layer to s_max at the last.
inline double init_scale(std::size_t layer, std::size_t num_layers, double s_min = kDefaultScaleMin,
                         double s_max = kDefaultScaleMax) {
  require(num_layers >= 1 && layer >= 1 && layer <= num_layers, ErrorKind::InvalidInput,
          "init_scale: layer " + std::to_string(layer) + " outside 1.." + std::to_string(num_layers));
  if (num_layers == 1) return s_min;
  const double t = static_cast<double>(layer - 1) / static_cast<double>(num_layers - 1);
  return s_min + t * (s_max - s_min);
}

inline DenseMatrix materialize(const TaskUpdate& update) {
  return matmul_nt(update.u.u(), update.v.u()) * update.s;
}

inline DenseMatrix apply(const DenseMatrix& w_prev, const TaskUpdate& update) {
  const DenseMatrix delta = materialize(update);
  require(w_prev.same_shape(delta), ErrorKind::InvalidInput,
          "apply: weight " + w_prev.shape_string() + " vs update " + delta.shape_string());
  return w_prev + delta;
}

/// Raw contents of one adapter checkpoint block.
struct AdapterRecord {
  std::size_t layer = 0;
  std::size_t rank = 0;
  double s = 0.0;
  DenseMatrix u;
  DenseMatrix v;
};

inline void write_adapter(std::ostream& os, const TaskUpdate& t) {
  os << t.layer_index << ' ' << t.rank() << ' ' << format_double(t.s) << '\n';
  write_matrix(os, t.u.u());
  write_matrix(os, t.v.u());
}

inline AdapterRecord read_adapter(std::istream& is, std::size_t& line_no) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(line_no + 1, "missing adapter header");
  ++line_no;
  const auto toks = detail::split_ws(line);
  if (toks.size() != 3) throw ParseError(line_no, "adapter header must be 'layer r s'");
  AdapterRecord rec;
  rec.layer = detail::parse_count<std::size_t>(toks[0], line_no);
  rec.rank = detail::parse_count<std::size_t>(toks[1], line_no);
  rec.s = detail::parse_double(toks[2], line_no);
  const std::size_t header_line = line_no;
  rec.u = read_matrix(is, line_no);
  rec.v = read_matrix(is, line_no);
  if (rec.u.cols() != rec.rank || rec.v.cols() != rec.rank)
    throw ParseError(header_line, "adapter factor ranks disagree with header");
  return rec;
}

/// Reads every adapter block until end of stream.
inline std::vector<AdapterRecord> read_adapters(std::istream& is) {
  std::vector<AdapterRecord> out;
  std::size_t line_no = 0;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_adapter(is, line_no));
  return out;
}

}  // namespace ebcl
