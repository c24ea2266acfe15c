#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

#include "ebcl/error.hpp"
#include "ebcl/manifold.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

enum class OptimizerKind { SgdMomentum, Adam };

inline std::string_view to_string(OptimizerKind k) noexcept {
  return k == OptimizerKind::Adam ? "adam" : "sgd_momentum";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::SgdMomentum;
  fail(ErrorKind::ConfigError, "unknown optimizer kind '" + std::string(s) + "'");
}

struct InnerOptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 0.0;
  /// Project the first-moment buffer onto the tangent space after each step.
  bool project_moments = false;

  void validate() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::ConfigError,
            "optimizer: learning_rate must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::ConfigError,
            "optimizer: momentum must lie in [0, 1)");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::ConfigError,
            "optimizer: beta1 and beta2 must lie in [0, 1)");
    require(eps_adam > 0.0, ErrorKind::ConfigError, "optimizer: eps_adam must be positive");
    require(weight_decay >= 0.0, ErrorKind::ConfigError, "optimizer: weight_decay must be >= 0");
  }
};

/// Moment buffers live in ambient coordinates; empty until the first step.
struct OptState {
  std::uint64_t step_count = 0;
  DenseMatrix m;
  DenseMatrix v;
};

struct InnerStepResult {
  DenseMatrix delta;
  OptState state;
};

inline InnerStepResult inner_step(const DenseMatrix& g, OptState state,
                                  const InnerOptimizerConfig& cfg) {
  require_finite(g, "inner_step");
  if (state.step_count == 0 && state.m.empty()) {
    state.m = DenseMatrix(g.rows(), g.cols());
    if (cfg.kind == OptimizerKind::Adam) state.v = DenseMatrix(g.rows(), g.cols());
  }
  require(state.m.same_shape(g), ErrorKind::InvalidInput,
          "inner_step: gradient " + g.shape_string() + " does not match state " +
              state.m.shape_string());
  if (cfg.kind == OptimizerKind::Adam)
    require(state.v.same_shape(g), ErrorKind::InvalidInput,
            "inner_step: second-moment buffer shape mismatch");

  state.step_count += 1;
  DenseMatrix delta(g.rows(), g.cols());
  auto gd = g.data();
  auto md = state.m.data();
  auto dd = delta.data();
  if (cfg.kind == OptimizerKind::SgdMomentum) {
    for (std::size_t i = 0; i < gd.size(); ++i) {
      md[i] = cfg.momentum * md[i] + gd[i];
      dd[i] = -cfg.learning_rate * md[i];
    }
  } else {
    auto vd = state.v.data();
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < gd.size(); ++i) {
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      dd[i] = -cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps_adam);
    }
  }
  return {std::move(delta), std::move(state)};
}

struct ConstrainedStepResult {
  RestrictedStiefelPoint point;
  OptState state;
};

/// One projected step on the restricted Stiefel manifold:
/// project gradient, inner step, re-project increment, apply, retract.
inline ConstrainedStepResult step_constrained(const RestrictedStiefelPoint& point,
                                              const DenseMatrix& euclid_grad, OptState state,
                                              const InnerOptimizerConfig& cfg) {
  require(euclid_grad.same_shape(point.u()), ErrorKind::InvalidInput,
          "step_constrained: gradient " + euclid_grad.shape_string() + " vs point " +
              point.u().shape_string());
  const DenseMatrix g = tangent_project(point, euclid_grad);
  InnerStepResult inner = inner_step(g, std::move(state), cfg);
  const DenseMatrix delta = tangent_project(point, inner.delta);
  if (cfg.project_moments) inner.state.m = tangent_project(point, inner.state.m);
  RestrictedStiefelPoint next = retract(point.basis(), point.u() + delta);
  return {std::move(next), std::move(inner.state)};
}

/// The same step on a plain Stiefel point (empty constraint).
inline ConstrainedStepResult step_v(const RestrictedStiefelPoint& v, const DenseMatrix& euclid_grad,
                                    OptState state, const InnerOptimizerConfig& cfg) {
  require(v.basis().k() == 0, ErrorKind::InvalidInput, "step_v: V must be unconstrained");
  return step_constrained(v, euclid_grad, std::move(state), cfg);
}

struct ScaleStepResult {
  double s;
  OptState state;
};

/// Euclidean step on the scalar scale with decoupled weight decay.
inline ScaleStepResult step_scale(double s, double grad, OptState state,
                                  const InnerOptimizerConfig& cfg) {
  require(std::isfinite(s) && std::isfinite(grad), ErrorKind::InvalidInput,
          "step_scale: non-finite input");
  InnerStepResult inner = inner_step(DenseMatrix(1, 1, grad), std::move(state), cfg);
  const double next = s + inner.delta(0, 0) - cfg.learning_rate * cfg.weight_decay * s;
  return {next, std::move(inner.state)};
}

}  // namespace ebcl
