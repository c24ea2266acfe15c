#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "ebcl/error.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

struct ThinSvd {
  DenseMatrix u;
  std::vector<double> sigma;
  DenseMatrix v;
};

struct SymEig {
  DenseMatrix q;
  std::vector<double> lambda;
};

inline double fro_inner(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.same_shape(b), ErrorKind::InvalidInput,
          "fro_inner: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  double acc = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) acc += da[i] * db[i];
  return acc;
}

inline double fro_norm(const DenseMatrix& a) {
  // Scaled accumulation keeps tiny and huge entries from under/overflowing.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : a.data()) {
    if (v == 0.0) continue;
    const double av = std::abs(v);
    if (scale < av) {
      ssq = 1.0 + ssq * (scale / av) * (scale / av);
      scale = av;
    } else {
      ssq += (av / scale) * (av / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

/// ½(A + Aᵀ), with mirrored entries computed once so the result is exactly symmetric.
inline DenseMatrix sym_part(const DenseMatrix& a) {
  require(a.rows() == a.cols(), ErrorKind::InvalidInput, "sym_part: matrix is not square");
  const std::size_t n = a.rows();
  DenseMatrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, i) = a(i, i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return s;
}

/// ‖AᵀA − I‖_F.
inline double orthonormality_residual(const DenseMatrix& a) {
  DenseMatrix g = matmul_tn(a, a);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return fro_norm(g);
}

namespace detail {

inline double dot_cols(const DenseMatrix& a, std::size_t i, std::size_t j) {
  double acc = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) acc += a(r, i) * a(r, j);
  return acc;
}

inline double col_norm(const DenseMatrix& a, std::size_t j) {
  double acc = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) acc += a(r, j) * a(r, j);
  return std::sqrt(acc);
}

/// Removes from column j its components along columns [0, j) of `a`, twice.
inline void mgs_against_previous(DenseMatrix& a, std::size_t j, std::size_t first = 0) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t p = first; p < j; ++p) {
      const double c = dot_cols(a, p, j);
      for (std::size_t r = 0; r < a.rows(); ++r) a(r, j) -= c * a(r, p);
    }
  }
}

/// Fills column j with the canonical vector that keeps the most norm after
/// projecting out columns [0, j), then normalizes it.
inline void complete_column(DenseMatrix& a, std::size_t j) {
  const std::size_t m = a.rows();
  std::size_t best = 0;
  double best_norm = -1.0;
  std::vector<double> cand(m);
  for (std::size_t e = 0; e < m; ++e) {
    for (std::size_t r = 0; r < m; ++r) a(r, j) = (r == e) ? 1.0 : 0.0;
    mgs_against_previous(a, j);
    const double nrm = col_norm(a, j);
    if (nrm > best_norm + 1e-12) {
      best_norm = nrm;
      best = e;
    }
  }
  for (std::size_t r = 0; r < m; ++r) a(r, j) = (r == best) ? 1.0 : 0.0;
  mgs_against_previous(a, j);
  const double nrm = col_norm(a, j);
  for (std::size_t r = 0; r < m; ++r) a(r, j) /= nrm;
}

/// Flips columns so each one's largest-magnitude entry (lowest row on ties)
/// is nonnegative; `partner` columns are flipped in step.
inline void fix_signs(DenseMatrix& a, DenseMatrix* partner) {
  for (std::size_t j = 0; j < a.cols(); ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double v = std::abs(a(r, j));
      if (v > best) {
        best = v;
        arg = r;
      }
    }
    if (a.rows() > 0 && a(arg, j) < 0.0) {
      for (std::size_t r = 0; r < a.rows(); ++r) a(r, j) = -a(r, j);
      if (partner)
        for (std::size_t r = 0; r < partner->rows(); ++r) (*partner)(r, j) = -(*partner)(r, j);
    }
  }
}

/// One-sided Jacobi on a tall (m >= n) matrix.
inline ThinSvd jacobi_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  DenseMatrix w = a;
  DenseMatrix v = DenseMatrix::identity(n);
  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 80;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double wi = w(r, i);
          const double wj = w(r, j);
          alpha += wi * wi;
          beta += wj * wj;
          gamma += wi * wj;
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double wi = w(r, i);
          const double wj = w(r, j);
          w(r, i) = c * wi - s * wj;
          w(r, j) = s * wi + c * wj;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vi = v(r, i);
          const double vj = v(r, j);
          v(r, i) = c * vi - s * vj;
          v(r, j) = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = col_norm(w, j);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  ThinSvd out{DenseMatrix(m, n), std::vector<double>(n), DenseMatrix(n, n)};
  const double smax = n ? norms[order[0]] : 0.0;
  const double floor = smax * 1e-13;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.sigma[k] = norms[src];
    for (std::size_t r = 0; r < n; ++r) out.v(r, k) = v(r, src);
    if (norms[src] > floor && norms[src] > 0.0) {
      for (std::size_t r = 0; r < m; ++r) out.u(r, k) = w(r, src) / norms[src];
    }
  }
  // Re-orthonormalize U in descending-sigma order; columns whose sigma sits
  // at roundoff level are rebuilt from the canonical basis.
  for (std::size_t k = 0; k < n; ++k) {
    if (out.sigma[k] <= floor || out.sigma[k] == 0.0) {
      complete_column(out.u, k);
      continue;
    }
    mgs_against_previous(out.u, k);
    const double nrm = col_norm(out.u, k);
    if (nrm < 0.5) {
      complete_column(out.u, k);
    } else {
      for (std::size_t r = 0; r < m; ++r) out.u(r, k) /= nrm;
    }
  }
  return out;
}

}  // namespace detail

/// Compact SVD A = U·diag(σ)·Vᵀ with σ descending and the sign convention
/// applied to U (V follows).
inline ThinSvd thin_svd(const DenseMatrix& a) {
  require(a.rows() >= 1 && a.cols() >= 1, ErrorKind::InvalidInput, "thin_svd: empty matrix");
  require_finite(a, "thin_svd");
  ThinSvd out;
  if (a.rows() >= a.cols()) {
    out = detail::jacobi_svd_tall(a);
  } else {
    ThinSvd t = detail::jacobi_svd_tall(a.transpose());
    out.u = std::move(t.v);
    out.v = std::move(t.u);
    out.sigma = std::move(t.sigma);
  }
  detail::fix_signs(out.u, &out.v);
  return out;
}

/// Symmetric eigendecomposition by cyclic Jacobi; eigenvalues descending.
inline SymEig sym_eig(const DenseMatrix& s_in) {
  require(s_in.rows() == s_in.cols(), ErrorKind::InvalidInput, "sym_eig: matrix is not square");
  require_finite(s_in, "sym_eig");
  const std::size_t n = s_in.rows();
  DenseMatrix a = sym_part(s_in);
  DenseMatrix q = DenseMatrix::identity(n);
  const double scale = fro_norm(a);

  for (int sweep = 0; sweep < 100 && scale > 0.0; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= 1e-16 * scale) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t r = p + 1; r < n; ++r) {
        const double apr = a(p, r);
        if (apr == 0.0) continue;
        const double theta = (a(r, r) - a(p, p)) / (2.0 * apr);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akr = a(k, r);
          a(k, p) = c * akp - s * akr;
          a(k, r) = s * akp + c * akr;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double ark = a(r, k);
          a(p, k) = c * apk - s * ark;
          a(r, k) = s * apk + c * ark;
        }
        a(p, r) = 0.0;
        a(r, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double qkp = q(k, p);
          const double qkr = q(k, r);
          q(k, p) = c * qkp - s * qkr;
          q(k, r) = s * qkp + c * qkr;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymEig out{DenseMatrix(n, n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.lambda[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.q(r, k) = q(r, order[k]);
  }
  detail::fix_signs(out.q, nullptr);
  return out;
}

/// Eigenvalue floor below which the inverse square root refuses to whiten.
inline double whitening_floor(double lambda_max) {
  return 1e-12 * std::max(1.0, lambda_max);
}

/// S^{-1/2} for symmetric positive definite S.
inline DenseMatrix inv_sqrt_spd(const DenseMatrix& s) {
  SymEig e = sym_eig(s);
  const std::size_t n = s.rows();
  if (n == 0) return DenseMatrix(0, 0);
  const double lmax = e.lambda.front();
  const double lmin = e.lambda.back();
  if (lmin < whitening_floor(lmax))
    throw NearSingularError(lmin, "inv_sqrt_spd: eigenvalue " + format_double(lmin) +
                                      " below whitening floor");
  DenseMatrix scaled = e.q;
  for (std::size_t k = 0; k < n; ++k) {
    const double f = 1.0 / std::sqrt(e.lambda[k]);
    for (std::size_t r = 0; r < n; ++r) scaled(r, k) *= f;
  }
  return sym_part(matmul_nt(scaled, e.q));
}

/// Orthonormal basis for the columns of `a` by two-pass modified Gram-Schmidt.
/// Throws RankDeficient when a column loses more than `rel_tol` of its norm.
inline DenseMatrix orthonormalize(const DenseMatrix& a, double rel_tol = 1e-10) {
  DenseMatrix q = a;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    const double before = detail::col_norm(q, j);
    detail::mgs_against_previous(q, j);
    const double after = detail::col_norm(q, j);
    if (!(after > rel_tol * before) || after == 0.0)
      fail(ErrorKind::RankDeficient, "orthonormalize: column " + std::to_string(j) +
                                         " is linearly dependent on its predecessors");
    for (std::size_t r = 0; r < q.rows(); ++r) q(r, j) /= after;
  }
  return q;
}

/// Orthonormalizes columns [first, cols) against the already-orthonormal
/// columns [0, first), leaving the leading block untouched.
inline DenseMatrix orthonormalize_tail(const DenseMatrix& a, std::size_t first,
                                       double rel_tol = 1e-10) {
  DenseMatrix q = a;
  for (std::size_t j = first; j < q.cols(); ++j) {
    const double before = detail::col_norm(q, j);
    detail::mgs_against_previous(q, j);
    const double after = detail::col_norm(q, j);
    if (!(after > rel_tol * before) || after == 0.0)
      fail(ErrorKind::RankDeficient, "orthonormalize_tail: column " + std::to_string(j) +
                                         " is linearly dependent on its predecessors");
    for (std::size_t r = 0; r < q.rows(); ++r) q(r, j) /= after;
  }
  return q;
}

}  // namespace ebcl
