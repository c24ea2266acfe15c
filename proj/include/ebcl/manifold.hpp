#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>

#include "ebcl/error.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/matrix.hpp"
#include "ebcl/rng.hpp"

namespace ebcl {

inline constexpr double kTolFeas = 1e-8;
inline constexpr double kDriftAccept = 1e-6;
inline constexpr double kDriftRepairLimit = 1e-2;

/// Process-wide warning counters. Incremented, never reset by the library.
struct Diagnostics {
  std::atomic<std::uint64_t> drift_repairs{0};
  std::atomic<std::uint64_t> degenerate_dimensions{0};
};

inline Diagnostics& diagnostics() {
  static Diagnostics d;
  return d;
}

/// Orthonormal d x k basis G; k = 0 means no constraint.
class ConstraintBasis {
 public:
  ConstraintBasis() : g_(std::make_shared<const DenseMatrix>(0, 0)) {}

  explicit ConstraintBasis(DenseMatrix g, double tol = 1e-10) {
    require_finite(g, "ConstraintBasis");
    require(g.cols() <= g.rows(), ErrorKind::InvalidInput,
            "ConstraintBasis: more columns than rows (" + g.shape_string() + ")");
    if (g.cols() > 0) {
      const double res = orthonormality_residual(g);
      require(res <= tol, ErrorKind::InvalidInput,
              "ConstraintBasis: columns not orthonormal (residual " + format_double(res) + ")");
    }
    g_ = std::make_shared<const DenseMatrix>(std::move(g));
  }

  static ConstraintBasis empty(std::size_t d) { return ConstraintBasis(DenseMatrix(d, 0)); }

  std::size_t d() const noexcept { return g_->rows(); }
  std::size_t k() const noexcept { return g_->cols(); }
  const DenseMatrix& matrix() const noexcept { return *g_; }

  friend bool operator==(const ConstraintBasis& a, const ConstraintBasis& b) {
    return a.g_ == b.g_ || *a.g_ == *b.g_;
  }

 private:
  std::shared_ptr<const DenseMatrix> g_;
};

/// (I − GGᵀ)·z
inline DenseMatrix complement_project(const ConstraintBasis& basis, const DenseMatrix& z) {
  require(z.rows() == basis.d(), ErrorKind::InvalidInput,
          "complement_project: z has " + std::to_string(z.rows()) + " rows, basis has d = " +
              std::to_string(basis.d()));
  if (basis.k() == 0) return z;
  const DenseMatrix& g = basis.matrix();
  return z - matmul(g, matmul_tn(g, z));
}

/// ‖UᵀU − I‖_F
inline double stiefel_residual(const DenseMatrix& u) { return orthonormality_residual(u); }

/// ‖GᵀU‖_F
inline double constraint_residual(const ConstraintBasis& basis, const DenseMatrix& u) {
  if (basis.k() == 0) return 0.0;
  return fro_norm(matmul_tn(basis.matrix(), u));
}

inline bool is_feasible(const ConstraintBasis& basis, const DenseMatrix& u, double tol = kTolFeas) {
  if (u.rows() != basis.d()) return false;
  return stiefel_residual(u) <= tol && constraint_residual(basis, u) <= tol;
}

enum class RetractRoute { Auto, Polar, Whitening };

class RestrictedStiefelPoint;
RestrictedStiefelPoint retract(const ConstraintBasis& basis, const DenseMatrix& u_tilde,
                               RetractRoute route);

/// Orthonormal-column d x r matrix in the null space of a stored basis.
class RestrictedStiefelPoint {
 public:
  /// Validates at kTolFeas; throws InfeasiblePoint otherwise.
  static RestrictedStiefelPoint make(ConstraintBasis basis, DenseMatrix u) {
    check_dims(basis, u);
    const double so = stiefel_residual(u);
    const double co = constraint_residual(basis, u);
    if (so > kTolFeas || co > kTolFeas)
      fail(ErrorKind::InfeasiblePoint, "point violates feasibility: ‖UᵀU−I‖=" + format_double(so) +
                                           " ‖GᵀU‖=" + format_double(co));
    return RestrictedStiefelPoint(std::move(basis), std::move(u));
  }

  /// Drift policy for externally supplied iterates: up to kDriftAccept the
  /// point is quietly re-retracted, up to kDriftRepairLimit it is re-retracted
  /// and counted, beyond that it is rejected.
  static RestrictedStiefelPoint adopt(ConstraintBasis basis, DenseMatrix u) {
    check_dims(basis, u);
    const double drift = std::max(stiefel_residual(u), constraint_residual(basis, u));
    if (drift <= kTolFeas) return RestrictedStiefelPoint(std::move(basis), std::move(u));
    if (drift > kDriftRepairLimit)
      fail(ErrorKind::InfeasiblePoint, "point drifted beyond repair (" + format_double(drift) + ")");
    if (drift > kDriftAccept) diagnostics().drift_repairs.fetch_add(1, std::memory_order_relaxed);
    return retract(basis, u, RetractRoute::Polar);
  }

  const DenseMatrix& u() const noexcept { return u_; }
  const ConstraintBasis& basis() const noexcept { return basis_; }
  std::size_t d() const noexcept { return u_.rows(); }
  std::size_t r() const noexcept { return u_.cols(); }

 private:
  friend RestrictedStiefelPoint retract(const ConstraintBasis&, const DenseMatrix&, RetractRoute);

  RestrictedStiefelPoint(ConstraintBasis basis, DenseMatrix u)
      : basis_(std::move(basis)), u_(std::move(u)) {}

  static void check_dims(const ConstraintBasis& basis, const DenseMatrix& u) {
    require_finite(u, "RestrictedStiefelPoint");
    require(u.rows() == basis.d(), ErrorKind::InvalidInput,
            "point has " + std::to_string(u.rows()) + " rows, basis has d = " +
                std::to_string(basis.d()));
    require(u.cols() >= 1, ErrorKind::InvalidInput, "point must have rank r >= 1");
    if (u.cols() + basis.k() > basis.d())
      fail(ErrorKind::InfeasibleDimensions,
           "r + k = " + std::to_string(u.cols() + basis.k()) + " exceeds d = " +
               std::to_string(basis.d()));
  }

  ConstraintBasis basis_;
  DenseMatrix u_;
};

/// Tangent-space test: ‖UᵀZ + ZᵀU‖_F ≤ tol and ‖GᵀZ‖_F ≤ tol.
inline bool is_tangent(const RestrictedStiefelPoint& point, const DenseMatrix& z,
                       double tol = kTolFeas) {
  if (!z.same_shape(point.u())) return false;
  const DenseMatrix utz = matmul_tn(point.u(), z);
  return fro_norm(utz + utz.transpose()) <= tol && constraint_residual(point.basis(), z) <= tol;
}

/// Z₀ − U·sym(UᵀZ₀) with Z₀ = (I − GGᵀ)Z.
inline DenseMatrix tangent_project(const RestrictedStiefelPoint& point, const DenseMatrix& z) {
  require(z.same_shape(point.u()), ErrorKind::InvalidInput,
          "tangent_project: z is " + z.shape_string() + ", point is " + point.u().shape_string());
  require_finite(z, "tangent_project");
  const DenseMatrix z0 = complement_project(point.basis(), z);
  return z0 - matmul(point.u(), sym_part(matmul_tn(point.u(), z0)));
}

/// Polar factor Q·Pᵀ of Y = (I − GGᵀ)ũ = Q·Σ·Pᵀ.
inline DenseMatrix polar_factor(const DenseMatrix& y) {
  const ThinSvd svd = thin_svd(y);
  const double smax = svd.sigma.front();
  const double smin = svd.sigma.back();
  if (smin * smin < whitening_floor(smax * smax))
    fail(ErrorKind::RankDeficient, "retract: projected iterate lost column rank (sigma_min = " +
                                       format_double(smin) + ")");
  return matmul_nt(svd.u, svd.v);
}

/// Y·(YᵀY)^{-1/2}.
inline DenseMatrix whitening_factor(const DenseMatrix& y) {
  try {
    return matmul(y, inv_sqrt_spd(matmul_tn(y, y)));
  } catch (const NearSingularError& e) {
    fail(ErrorKind::RankDeficient,
         "retract: projected iterate lost column rank (Gram eigenvalue " +
             format_double(e.eigenvalue()) + ")");
  }
}

/// Nearest feasible point to ũ. Auto whitens small well-conditioned Grams and
/// otherwise takes the SVD polar factor.
inline RestrictedStiefelPoint retract(const ConstraintBasis& basis, const DenseMatrix& u_tilde,
                                      RetractRoute route = RetractRoute::Auto) {
  require(u_tilde.rows() == basis.d() && u_tilde.cols() >= 1, ErrorKind::InvalidInput,
          "retract: ũ is " + u_tilde.shape_string() + ", basis has d = " + std::to_string(basis.d()));
  require_finite(u_tilde, "retract");
  if (u_tilde.cols() + basis.k() > basis.d())
    fail(ErrorKind::InfeasibleDimensions, "retract: r + k exceeds d");
  const DenseMatrix y = complement_project(basis, u_tilde);

  DenseMatrix u;
  if (route == RetractRoute::Polar) {
    u = polar_factor(y);
  } else if (route == RetractRoute::Whitening) {
    u = whitening_factor(y);
  } else {
    bool whitened = false;
    if (y.cols() <= 8) {
      const SymEig e = sym_eig(matmul_tn(y, y));
      const double lmax = e.lambda.front();
      const double lmin = e.lambda.back();
      if (lmax > 0.0 && lmin >= 1e-8 * lmax) {
        u = whitening_factor(y);
        whitened = true;
      }
    }
    if (!whitened) u = polar_factor(y);
  }
  return RestrictedStiefelPoint::make(basis, std::move(u));
}

inline RestrictedStiefelPoint retract_polar(const ConstraintBasis& basis, const DenseMatrix& u_tilde) {
  return retract(basis, u_tilde, RetractRoute::Polar);
}

inline RestrictedStiefelPoint retract_whitening(const ConstraintBasis& basis,
                                                const DenseMatrix& u_tilde) {
  return retract(basis, u_tilde, RetractRoute::Whitening);
}

/// Gaussian draw pushed through the retraction; deterministic per seed.
inline RestrictedStiefelPoint random_feasible(const ConstraintBasis& basis, std::size_t d,
                                              std::size_t r, std::uint64_t seed) {
  require(basis.d() == d, ErrorKind::InvalidInput, "random_feasible: basis dimension mismatch");
  require(r >= 1, ErrorKind::InvalidInput, "random_feasible: r must be >= 1");
  if (r + basis.k() > d)
    fail(ErrorKind::InfeasibleDimensions, "random_feasible: r + k = " +
                                              std::to_string(r + basis.k()) + " exceeds d = " +
                                              std::to_string(d));
  if (r + basis.k() == d)
    diagnostics().degenerate_dimensions.fetch_add(1, std::memory_order_relaxed);
  Rng rng(seed);
  for (int attempt = 0; attempt < 8; ++attempt) {
    try {
      return retract(basis, rng.normal_matrix(d, r), RetractRoute::Polar);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RankDeficient) throw;
    }
  }
  fail(ErrorKind::RankDeficient, "random_feasible: repeated rank-deficient draws");
}

}  // namespace ebcl
