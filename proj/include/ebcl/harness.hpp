#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ebcl/adapter.hpp"
#include "ebcl/error.hpp"
#include "ebcl/gpm.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/manifold.hpp"
#include "ebcl/matrix.hpp"
#include "ebcl/metrics.hpp"
#include "ebcl/optimizer.hpp"
#include "ebcl/rng.hpp"
#include "ebcl/spectral.hpp"

namespace ebcl {

/// Every knob of the synthetic benchmark, the method and the baseline.
/// Layer ℓ < L maps d → d; the last layer maps d → n.
struct HarnessConfig {
  std::uint64_t seed = 0;
  std::size_t tasks = 4;
  std::size_t d = 16;
  std::size_t n = 16;
  std::size_t layers = 1;
  std::size_t rank = 2;

  std::size_t r_plant = 2;
  double plant_decay = 0.5;
  double perturbation_ratio = 0.5;
  double input_focus = 0.1;
  double overlap = 0.0;
  double noise_std = 0.05;
  std::size_t n_train = 1024;
  std::size_t n_eval = 512;

  std::size_t steps_per_task = 500;
  std::size_t n_snapshot = 8;
  InnerOptimizerConfig optimizer{};
  InnerOptimizerConfig baseline_optimizer{};

  double epsilon = 0.95;
  bool use_gpm = true;
  double s_min = kDefaultScaleMin;
  double s_max = kDefaultScaleMax;
  bool depth_aware = true;

  std::vector<double> alpha_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  bool smooth_target = false;

  std::size_t layer_rows(std::size_t) const { return d; }
  std::size_t layer_cols(std::size_t l) const { return l + 1 == layers ? n : d; }

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::ConfigError, msg); };
    if (tasks < 2) bad("task.count must be >= 2");
    if (d < 1 || n < 1 || layers < 1) bad("dims.d, dims.n and dims.layers must be >= 1");
    if (rank < 1 || rank > std::min(d, n)) bad("rank must lie in 1..min(d, n)");
    if (r_plant < 1) bad("task.r_plant must be >= 1");
    if (tasks * r_plant > std::min(d, n)) bad("task.count * task.r_plant must not exceed min(d, n)");
    if (!(plant_decay > 0.0 && plant_decay <= 1.0)) bad("task.plant_decay must lie in (0, 1]");
    if (!(perturbation_ratio > 0.0)) bad("task.perturbation_ratio must be positive");
    if (!(input_focus > 0.0 && input_focus <= 1.0)) bad("task.input_focus must lie in (0, 1]");
    if (!(overlap >= 0.0 && overlap < 1.0)) bad("task.overlap must lie in [0, 1)");
    if (!(noise_std >= 0.0)) bad("task.noise_std must be >= 0");
    if (n_eval < 32) bad("task.n_eval must be >= 32");
    if (n_snapshot < 1 || n_train < n_snapshot) bad("gpm.n_snapshot must lie in 1..n_train");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) bad("gpm.epsilon must lie in (0, 1]");
    if (!(s_min >= 0.0 && s_max >= 0.0)) bad("scale.s_min and scale.s_max must be >= 0");
    if (alpha_grid.empty()) bad("alpha_grid must not be empty");
    for (double a : alpha_grid)
      if (!(a >= 0.0 && a <= 1.0)) bad("alpha_grid values must lie in [0, 1]");
    optimizer.validate();
    baseline_optimizer.validate();
  }
};

struct SyntheticTask {
  std::size_t task_id = 0;
  LayerStack teacher;
  DenseMatrix x_train, y_train;  // samples are columns
  DenseMatrix x_eval, y_eval;
  double eval_variance = 0.0;  // mean per-output population variance of y_eval
  double noise_std = 0.0;
};

struct TaskSequence {
  LayerStack base;
  std::vector<SyntheticTask> tasks;
};

// ---------------------------------------------------------------------------
// Model evaluation

/// Activations of y = W_Lᵀ ⋯ W_1ᵀ x for every layer boundary.
inline std::vector<DenseMatrix> forward(const LayerStack& ws, const DenseMatrix& x) {
  std::vector<DenseMatrix> acts{x};
  acts.reserve(ws.size() + 1);
  for (const DenseMatrix& w : ws) acts.push_back(matmul_tn(w, acts.back()));
  return acts;
}

inline DenseMatrix predict(const LayerStack& ws, const DenseMatrix& x) {
  DenseMatrix h = x;
  for (const DenseMatrix& w : ws) h = matmul_tn(w, h);
  return h;
}

inline double mean_output_variance(const DenseMatrix& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const auto row = y.row(i);
    double m = 0.0;
    for (double v : row) m += v;
    m /= static_cast<double>(row.size());
    double s = 0.0;
    for (double v : row) s += (v - m) * (v - m);
    acc += s / static_cast<double>(row.size());
  }
  return acc / static_cast<double>(y.rows());
}

/// 100·max(0, 1 − MSE/Var) on the task's evaluation set.
inline double accuracy(const LayerStack& model, const SyntheticTask& task) {
  require(task.x_eval.cols() > 0, ErrorKind::InvalidInput, "accuracy: empty evaluation set");
  require(model.size() == task.teacher.size(), ErrorKind::InvalidInput,
          "accuracy: model depth does not match task");
  for (std::size_t l = 0; l < model.size(); ++l)
    require(model[l].same_shape(task.teacher[l]), ErrorKind::InvalidInput,
            "accuracy: layer " + std::to_string(l + 1) + " shape mismatch");
  const DenseMatrix err = predict(model, task.x_eval) - task.y_eval;
  const double mse = fro_inner(err, err) / static_cast<double>(err.size());
  if (task.eval_variance <= 0.0) return mse == 0.0 ? 100.0 : 0.0;
  return 100.0 * std::max(0.0, 1.0 - mse / task.eval_variance);
}

struct LossGrad {
  double loss = 0.0;
  std::vector<DenseMatrix> grads;  // ∂loss/∂W_ℓ
};

/// loss = ½·mean over samples of ‖f(x) − y‖², with per-layer weight gradients.
inline LossGrad loss_and_grads(const LayerStack& ws, const DenseMatrix& x, const DenseMatrix& y) {
  const auto acts = forward(ws, x);
  DenseMatrix delta = acts.back() - y;
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  LossGrad out;
  out.loss = 0.5 * fro_inner(delta, delta) * inv_n;
  delta *= inv_n;
  out.grads.resize(ws.size());
  for (std::size_t l = ws.size(); l-- > 0;) {
    out.grads[l] = matmul_nt(acts[l], delta);
    if (l > 0) delta = matmul(ws[l], delta);
  }
  return out;
}

struct AdapterGrad {
  double ds = 0.0;
  DenseMatrix du;
  DenseMatrix dv;
};

/// Chain rule through W = W_prev + s·U·Vᵀ.
inline AdapterGrad adapter_grads(const DenseMatrix& g_w, double s, const DenseMatrix& u,
                                 const DenseMatrix& v) {
  AdapterGrad out;
  const DenseMatrix gv = matmul(g_w, v);
  out.ds = fro_inner(u, gv);
  out.du = gv * s;
  out.dv = matmul_tn(g_w, u) * s;
  return out;
}

struct LoraGrad {
  DenseMatrix db;
  DenseMatrix da;
};

/// Chain rule through W = W_prev + B·A.
inline LoraGrad lora_grads(const DenseMatrix& g_w, const DenseMatrix& b, const DenseMatrix& a) {
  return {matmul_nt(g_w, a), matmul_tn(b, g_w)};
}

// ---------------------------------------------------------------------------
// Task generation

namespace detail {

inline DenseMatrix select_columns(const DenseMatrix& m, const std::vector<std::size_t>& idx) {
  DenseMatrix out(m.rows(), idx.size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = m(i, idx[j]);
  return out;
}

inline DenseMatrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
  return orthonormalize(rng.normal_matrix(rows, cols));
}

}  // namespace detail

/// Teachers W*_t = W₀ + P_t with P_t of rank r_plant living in task-specific
/// blocks of orthonormal row and column directions. Inputs for task t are
/// Gaussian with variance shrunk to `input_focus` along the other tasks'
/// input directions of the first layer.
inline TaskSequence make_task_sequence(const HarnessConfig& cfg) {
  cfg.validate();
  const SeedSequence seeds(cfg.seed);
  Rng gen(seeds.derive("task-gen"));
  const std::size_t t_count = cfg.tasks;
  const std::size_t rp = cfg.r_plant;

  TaskSequence seq;
  std::vector<DenseMatrix> in_dirs, out_dirs;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t rows = cfg.layer_rows(l);
    const std::size_t cols = cfg.layer_cols(l);
    seq.base.push_back(gen.normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows))));
    in_dirs.push_back(detail::random_orthonormal(gen, rows, t_count * rp));
    out_dirs.push_back(detail::random_orthonormal(gen, cols, t_count * rp));
  }

  std::vector<double> sv(rp);
  for (std::size_t k = 0; k < rp; ++k) sv[k] = std::pow(cfg.plant_decay, static_cast<double>(k));

  auto block = [&](const DenseMatrix& dirs, std::size_t t) {
    DenseMatrix b = dirs.columns(t * rp, (t + 1) * rp);
    if (cfg.overlap > 0.0 && t > 0) {
      b = b * (1.0 - cfg.overlap) + dirs.columns(0, rp) * cfg.overlap;
      b = orthonormalize(b);
    }
    return b;
  };

  std::vector<LayerStack> teachers(t_count);
  std::vector<DenseMatrix> first_in(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const DenseMatrix a = block(in_dirs[l], t);
      const DenseMatrix b = block(out_dirs[l], t);
      const double target = cfg.perturbation_ratio * fro_norm(seq.base[l]);
      double norm = 0.0;
      for (double v : sv) norm += v * v;
      const double scale = target / std::sqrt(norm);
      std::vector<double> scaled(sv);
      for (double& v : scaled) v *= scale;
      teachers[t].push_back(seq.base[l] + rebuild(a, scaled, b));
      if (l == 0) first_in[t] = a;
    }
  }

  for (std::size_t s = 0; s < t_count; ++s)
    for (std::size_t t = s + 1; t < t_count; ++t) {
      double dist = 0.0, base = 0.0;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        const double dl = fro_norm(teachers[s][l] - teachers[t][l]);
        const double bl = fro_norm(seq.base[l]);
        dist += dl * dl;
        base += bl * bl;
      }
      if (!(std::sqrt(dist) > 0.1 * std::sqrt(base)))
        fail(ErrorKind::InvalidInput, "make_task_sequence: teachers " + std::to_string(s + 1) +
                                          " and " + std::to_string(t + 1) + " are not distinct");
    }

  const std::size_t d0 = cfg.layer_rows(0);
  const double shrink = 1.0 - std::sqrt(cfg.input_focus);
  for (std::size_t t = 0; t < t_count; ++t) {
    DenseMatrix others(d0, 0);
    for (std::size_t s = 0; s < t_count; ++s)
      if (s != t) others = hconcat(others, first_in[s]);
    DenseMatrix mix = DenseMatrix::identity(d0);
    if (others.cols() > 0) {
      const DenseMatrix q = orthonormalize(others, 1e-8);
      mix -= matmul_nt(q, q) * shrink;
    }

    Rng data(seeds.derive("data", t));
    auto sample = [&](std::size_t count, DenseMatrix& x, DenseMatrix& y) {
      x = matmul(mix, data.normal_matrix(d0, count));
      y = predict(teachers[t], x);
      if (cfg.noise_std > 0.0) y += data.normal_matrix(y.rows(), y.cols(), cfg.noise_std);
    };
    SyntheticTask task;
    task.task_id = t + 1;
    task.teacher = teachers[t];
    task.noise_std = cfg.noise_std;
    sample(cfg.n_train, task.x_train, task.y_train);
    sample(cfg.n_eval, task.x_eval, task.y_eval);
    task.eval_variance = mean_output_variance(task.y_eval);
    seq.tasks.push_back(std::move(task));
  }
  return seq;
}

/// Per-minibatch layer gradients at `model` on a seeded partition of the
/// training set: result[ℓ][b] is the gradient of layer ℓ on minibatch b.
inline std::vector<std::vector<DenseMatrix>> gradient_blocks(const LayerStack& model,
                                                             const SyntheticTask& task,
                                                             std::size_t n_batches,
                                                             std::uint64_t seed) {
  std::vector<std::size_t> perm(task.x_train.cols());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.next_u64() % i]);

  std::vector<std::vector<DenseMatrix>> out(model.size());
  const std::size_t total = perm.size();
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t lo = b * total / n_batches;
    const std::size_t hi = (b + 1) * total / n_batches;
    const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                       perm.begin() + static_cast<std::ptrdiff_t>(hi));
    LossGrad lg = loss_and_grads(model, detail::select_columns(task.x_train, idx),
                                 detail::select_columns(task.y_train, idx));
    for (std::size_t l = 0; l < model.size(); ++l) out[l].push_back(std::move(lg.grads[l]));
  }
  return out;
}

inline DenseMatrix mean_of_blocks(const std::vector<DenseMatrix>& blocks) {
  DenseMatrix acc = blocks.front();
  for (std::size_t i = 1; i < blocks.size(); ++i) acc += blocks[i];
  return acc * (1.0 / static_cast<double>(blocks.size()));
}

// ---------------------------------------------------------------------------
// Sequential runs

struct TaskRecord {
  std::vector<TaskUpdate> updates;    // method only
  std::vector<DenseMatrix> deltas;    // ΔW per layer, both arms
  std::vector<double> cv;             // per layer, over the leading r singular values
  std::vector<std::size_t> padded;    // method only: random directions added at init
  std::vector<std::size_t> gpm_added; // method only: directions appended to memory
  double init_accuracy = 0.0;         // accuracy on this task right after initialization
  double final_loss = 0.0;
};

struct RunResult {
  AccuracyMatrix accuracy;
  std::vector<TaskRecord> tasks;
  std::vector<GradientMemory> memories;  // method only, final state per layer
};

namespace detail {

inline AccuracyMatrix empty_matrix(std::size_t t) { return AccuracyMatrix::with_size(t); }

inline void evaluate_row(const LayerStack& model, const TaskSequence& seq, std::size_t j,
                         AccuracyMatrix& a) {
  for (std::size_t i = 0; i < seq.tasks.size(); ++i) a.set(j, i, accuracy(model, seq.tasks[i]));
}

template <typename F>
auto with_context(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), where + ": " + e.what());
  }
}

struct LayerState {
  double s;
  RestrictedStiefelPoint u;
  RestrictedStiefelPoint v;
  OptState os, ou, ov;
};

}  // namespace detail

/// The continual loop on restricted-manifold updates ΔW = s·U·Vᵀ with
/// gradient projection memory.
inline RunResult run_sequence(const HarnessConfig& cfg, const TaskSequence& seq) {
  cfg.validate();
  const SeedSequence seeds(cfg.seed);
  const std::size_t t_count = seq.tasks.size();
  const std::size_t L = seq.base.size();

  RunResult out;
  out.accuracy = detail::empty_matrix(t_count);
  LayerStack model = seq.base;
  for (std::size_t l = 0; l < L; ++l) out.memories.push_back(GradientMemory::init(model[l].rows(), cfg.epsilon));

  for (std::size_t t = 0; t < t_count; ++t) {
    const SyntheticTask& task = seq.tasks[t];
    const std::string tag = "task " + std::to_string(t + 1);
    TaskRecord rec;

    const auto blocks = gradient_blocks(model, task, cfg.n_snapshot, seeds.derive("snapshot", t));

    std::vector<detail::LayerState> st;
    for (std::size_t l = 0; l < L; ++l) {
      const std::string where = tag + " layer " + std::to_string(l + 1) + " init";
      detail::with_context(where, [&] {
        const DenseMatrix g = mean_of_blocks(blocks[l]);
        Directions dir = init_directions_padded(g, out.memories[l], cfg.rank,
                                                seeds.derive("init", t * 1000 + l));
        const double s0 = cfg.depth_aware ? init_scale(l + 1, L, cfg.s_min, cfg.s_max) : cfg.s_min;
        rec.padded.push_back(dir.padded);
        st.push_back({s0, std::move(dir.u0), std::move(dir.v0), {}, {}, {}});
      });
    }

    auto current = [&] {
      LayerStack cur = model;
      for (std::size_t l = 0; l < L; ++l)
        cur[l] += matmul_nt(st[l].u.u(), st[l].v.u()) * st[l].s;
      return cur;
    };
    rec.init_accuracy = accuracy(current(), task);

    for (std::size_t step = 0; step < cfg.steps_per_task; ++step) {
      const LossGrad lg = loss_and_grads(current(), task.x_train, task.y_train);
      rec.final_loss = lg.loss;
      for (std::size_t l = 0; l < L; ++l) {
        const std::string where =
            tag + " layer " + std::to_string(l + 1) + " step " + std::to_string(step + 1);
        detail::with_context(where, [&] {
          auto& p = st[l];
          const AdapterGrad ag = adapter_grads(lg.grads[l], p.s, p.u.u(), p.v.u());
          auto nu = step_constrained(p.u, ag.du, std::move(p.ou), cfg.optimizer);
          auto nv = step_v(p.v, ag.dv, std::move(p.ov), cfg.optimizer);
          auto ns = step_scale(p.s, ag.ds, std::move(p.os), cfg.optimizer);
          p.u = std::move(nu.point);
          p.ou = std::move(nu.state);
          p.v = std::move(nv.point);
          p.ov = std::move(nv.state);
          p.s = ns.s;
          p.os = std::move(ns.state);
        });
      }
    }
    if (cfg.steps_per_task > 0)
      rec.final_loss = loss_and_grads(current(), task.x_train, task.y_train).loss;

    for (std::size_t l = 0; l < L; ++l) {
      TaskUpdate upd{st[l].s, st[l].u, st[l].v, l + 1};
      const DenseMatrix delta = materialize(upd);
      model[l] = apply(model[l], upd);
      rec.cv.push_back(spectrum(delta, cfg.rank).cv);
      rec.deltas.push_back(delta);
      rec.updates.push_back(std::move(upd));
    }

    for (std::size_t l = 0; l < L; ++l) {
      if (!cfg.use_gpm) {
        rec.gpm_added.push_back(0);
        continue;
      }
      const std::string where = tag + " layer " + std::to_string(l + 1) + " memory";
      detail::with_context(where, [&] {
        GpmUpdateResult res = out.memories[l].update(build_snapshot(blocks[l]));
        rec.gpm_added.push_back(res.added);
        out.memories[l] = std::move(res.memory);
      });
    }

    detail::evaluate_row(model, seq, t, out.accuracy);
    out.tasks.push_back(std::move(rec));
  }
  return out;
}

struct LoraTrainResult {
  std::vector<DenseMatrix> deltas;
  double init_accuracy = 0.0;
  double final_loss = 0.0;
};

/// Unconstrained ΔW = B·A per layer (B: d×r zero, A: r×n Gaussian), trained
/// with the baseline optimizer from `base`.
inline LoraTrainResult train_lora(const HarnessConfig& cfg, const LayerStack& base,
                                  const SyntheticTask& task, std::uint64_t seed) {
  const std::size_t L = base.size();
  Rng rng(seed);
  std::vector<DenseMatrix> bs, as;
  std::vector<OptState> obs(L), oas(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t cols = base[l].cols();
    bs.emplace_back(base[l].rows(), cfg.rank);
    as.push_back(rng.normal_matrix(cfg.rank, cols, 1.0 / std::sqrt(static_cast<double>(cols))));
  }
  auto current = [&] {
    LayerStack cur = base;
    for (std::size_t l = 0; l < L; ++l) cur[l] += matmul(bs[l], as[l]);
    return cur;
  };
  LoraTrainResult out;
  out.init_accuracy = accuracy(current(), task);
  for (std::size_t step = 0; step < cfg.steps_per_task; ++step) {
    const LossGrad lg = loss_and_grads(current(), task.x_train, task.y_train);
    for (std::size_t l = 0; l < L; ++l) {
      const LoraGrad g = lora_grads(lg.grads[l], bs[l], as[l]);
      auto sb = inner_step(g.db, std::move(obs[l]), cfg.baseline_optimizer);
      auto sa = inner_step(g.da, std::move(oas[l]), cfg.baseline_optimizer);
      bs[l] += sb.delta;
      as[l] += sa.delta;
      obs[l] = std::move(sb.state);
      oas[l] = std::move(sa.state);
    }
  }
  out.final_loss = loss_and_grads(current(), task.x_train, task.y_train).loss;
  for (std::size_t l = 0; l < L; ++l) out.deltas.push_back(matmul(bs[l], as[l]));
  return out;
}

/// Sequential fine-tuning with the unconstrained low-rank baseline.
inline RunResult baseline_run(const HarnessConfig& cfg, const TaskSequence& seq) {
  cfg.validate();
  const SeedSequence seeds(cfg.seed);
  RunResult out;
  out.accuracy = detail::empty_matrix(seq.tasks.size());
  LayerStack model = seq.base;
  for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
    const std::string tag = "task " + std::to_string(t + 1) + " baseline";
    TaskRecord rec;
    LoraTrainResult tr = detail::with_context(
        tag, [&] { return train_lora(cfg, model, seq.tasks[t], seeds.derive("init", t)); });
    rec.init_accuracy = tr.init_accuracy;
    rec.final_loss = tr.final_loss;
    for (std::size_t l = 0; l < model.size(); ++l) {
      model[l] += tr.deltas[l];
      rec.cv.push_back(spectrum(tr.deltas[l], cfg.rank).cv);
    }
    rec.deltas = std::move(tr.deltas);
    detail::evaluate_row(model, seq, t, out.accuracy);
    out.tasks.push_back(std::move(rec));
  }
  return out;
}

inline RunResult run_sequence(const HarnessConfig& cfg) {
  return run_sequence(cfg, make_task_sequence(cfg));
}

inline RunResult baseline_run(const HarnessConfig& cfg) {
  return baseline_run(cfg, make_task_sequence(cfg));
}

// ---------------------------------------------------------------------------
// Merging

struct MergeReport {
  std::vector<double> alphas;
  std::vector<double> zero_shot;           // per task
  std::vector<double> individual;          // per task
  std::vector<std::vector<double>> merged; // [alpha][task]
  std::vector<std::vector<double>> nai;    // [alpha][task]
  std::vector<double> mean_nai;            // per alpha
};

/// NAI of every task when its own adapter is added to `base` together with
/// the other tasks' adapters smoothed at `alpha` over `rank` components.
/// deltas[t][ℓ] is task t's update of layer ℓ. Works for a single task.
inline std::vector<double> score_merge(const LayerStack& base,
                                       const std::vector<std::vector<DenseMatrix>>& deltas,
                                       const std::vector<SyntheticTask>& tasks, double alpha,
                                       std::size_t rank, bool smooth_target,
                                       std::vector<double>* merged_acc = nullptr) {
  require(!deltas.empty() && deltas.size() == tasks.size(), ErrorKind::InvalidInput,
          "score_merge: need one adapter per task");
  auto smoothed = [&](const DenseMatrix& dw) {
    return alpha == 0.0 ? dw : smooth_matrix(dw, alpha, rank);
  };
  std::vector<std::vector<DenseMatrix>> smooth_all(deltas.size());
  for (std::size_t j = 0; j < deltas.size(); ++j)
    for (const DenseMatrix& dw : deltas[j]) smooth_all[j].push_back(smoothed(dw));

  std::vector<double> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    LayerStack individual = base;
    LayerStack merged = base;
    for (std::size_t l = 0; l < base.size(); ++l) {
      individual[l] += deltas[i][l];
      merged[l] += smooth_target ? smooth_all[i][l] : deltas[i][l];
      for (std::size_t j = 0; j < deltas.size(); ++j)
        if (j != i) merged[l] += smooth_all[j][l];
    }
    const double z = accuracy(base, tasks[i]);
    const double ind = accuracy(individual, tasks[i]);
    const double m = accuracy(merged, tasks[i]);
    if (merged_acc) merged_acc->push_back(m);
    out.push_back(nai(m, z, ind));
  }
  return out;
}

/// Adapters trained independently from W₀ on each task, then merged under
/// every smoothing ratio in the grid.
inline MergeReport merge_experiment(const HarnessConfig& cfg, const TaskSequence& seq) {
  cfg.validate();
  require(seq.tasks.size() >= 2, ErrorKind::InvalidInput, "merge_experiment: needs >= 2 tasks");
  const SeedSequence seeds(cfg.seed);
  std::vector<std::vector<DenseMatrix>> deltas;
  MergeReport rep;
  rep.alphas = cfg.alpha_grid;
  for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
    LoraTrainResult tr = train_lora(cfg, seq.base, seq.tasks[t], seeds.derive("merge-init", t));
    LayerStack ind = seq.base;
    for (std::size_t l = 0; l < ind.size(); ++l) ind[l] += tr.deltas[l];
    rep.zero_shot.push_back(accuracy(seq.base, seq.tasks[t]));
    rep.individual.push_back(accuracy(ind, seq.tasks[t]));
    deltas.push_back(std::move(tr.deltas));
  }
  for (double alpha : rep.alphas) {
    std::vector<double> merged;
    auto scores = score_merge(seq.base, deltas, seq.tasks, alpha, cfg.rank, cfg.smooth_target, &merged);
    rep.mean_nai.push_back(mean_of(scores));
    rep.nai.push_back(std::move(scores));
    rep.merged.push_back(std::move(merged));
  }
  return rep;
}

inline MergeReport merge_experiment(const HarnessConfig& cfg) {
  return merge_experiment(cfg, make_task_sequence(cfg));
}

}  // namespace ebcl
