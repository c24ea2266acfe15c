#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "ebcl/error.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

inline constexpr double kEpsNai = 1e-9;

struct SpectrumReport {
  std::vector<double> sigma;
  std::vector<double> normalized;
  double variance = 0.0;
  double variance_normalized = 0.0;
  double cv = 0.0;
};

inline double mean_of(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

/// Population variance.
inline double variance_of(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  const double m = mean_of(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size());
}

/// Standard deviation over mean; 0 when the mean is 0.
inline double coefficient_of_variation(const std::vector<double>& x) {
  const double m = mean_of(x);
  if (m == 0.0) return 0.0;
  return std::sqrt(variance_of(x)) / std::abs(m);
}

inline SpectrumReport report_from_sigma(std::vector<double> sigma) {
  SpectrumReport r;
  r.sigma = std::move(sigma);
  r.normalized.resize(r.sigma.size(), 0.0);
  if (!r.sigma.empty() && r.sigma.front() > 0.0)
    for (std::size_t i = 0; i < r.sigma.size(); ++i) r.normalized[i] = r.sigma[i] / r.sigma.front();
  r.variance = variance_of(r.sigma);
  r.variance_normalized = variance_of(r.normalized);
  r.cv = coefficient_of_variation(r.sigma);
  return r;
}

/// Singular-value statistics of ΔW. With `rank` set only the leading `rank`
/// values are kept (the spectrum of a known rank-r adapter product).
inline SpectrumReport spectrum(const DenseMatrix& delta_w, std::optional<std::size_t> rank = {}) {
  std::vector<double> sigma = thin_svd(delta_w).sigma;
  if (rank) {
    require(*rank >= 1 && *rank <= sigma.size(), ErrorKind::InvalidInput,
            "spectrum: rank outside 1..min(d, n)");
    sigma.resize(*rank);
  }
  return report_from_sigma(std::move(sigma));
}

/// (1 − α)·σ_i + α·mean(σ)
inline std::vector<double> smooth(const std::vector<double>& sigma, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidInput, "smooth: alpha outside [0, 1]");
  require(!sigma.empty(), ErrorKind::InvalidInput, "smooth: empty spectrum");
  if (alpha == 0.0) return sigma;
  const double m = mean_of(sigma);
  std::vector<double> out(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) out[i] = (1.0 - alpha) * sigma[i] + alpha * m;
  return out;
}

/// U·diag(σ')·Vᵀ
inline DenseMatrix rebuild(const DenseMatrix& u, const std::vector<double>& sigma,
                           const DenseMatrix& v) {
  require(u.cols() == sigma.size() && v.cols() == sigma.size(), ErrorKind::InvalidInput,
          "rebuild: factor widths do not match spectrum length");
  DenseMatrix us = u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= sigma[j];
  return matmul_nt(us, v);
}

/// Smooths the leading `rank` components of ΔW and rebuilds it.
inline DenseMatrix smooth_matrix(const DenseMatrix& delta_w, double alpha, std::size_t rank) {
  const ThinSvd svd = thin_svd(delta_w);
  require(rank >= 1 && rank <= svd.sigma.size(), ErrorKind::InvalidInput,
          "smooth_matrix: rank outside 1..min(d, n)");
  std::vector<double> head(svd.sigma.begin(), svd.sigma.begin() + static_cast<std::ptrdiff_t>(rank));
  return rebuild(svd.u.columns(0, rank), smooth(head, alpha), svd.v.columns(0, rank));
}

/// Task-arithmetic sum.
inline DenseMatrix merge(const std::vector<DenseMatrix>& deltas) {
  require(!deltas.empty(), ErrorKind::InvalidInput, "merge: no matrices");
  DenseMatrix acc = deltas.front();
  for (std::size_t i = 1; i < deltas.size(); ++i) acc += deltas[i];
  return acc;
}

/// Fraction of the fine-tuning gain that survives merging.
inline double nai(double merged, double zero_shot, double individual) {
  const double denom = individual - zero_shot;
  if (!(std::abs(denom) >= kEpsNai))
    fail(ErrorKind::DegenerateBaseline, "nai: individual and zero-shot accuracies coincide");
  return (merged - zero_shot) / denom;
}

inline void write_spectrum_csv(std::ostream& os, const SpectrumReport& r) {
  os << "index,sigma,normalized\n";
  for (std::size_t i = 0; i < r.sigma.size(); ++i)
    os << i << ',' << format_double(r.sigma[i]) << ',' << format_double(r.normalized[i]) << '\n';
  os << "# variance=" << format_double(r.variance)
     << " variance_normalized=" << format_double(r.variance_normalized)
     << " cv=" << format_double(r.cv) << '\n';
}

}  // namespace ebcl
