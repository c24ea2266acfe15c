// Acceptance gate: one PASS/FAIL line per criterion. `--criterion N` runs a
// single criterion; the exit status is nonzero if any selected one fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ebcl/ebcl.hpp"
#include "fixture_table.hpp"
#include "gradient_check.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace ebcl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ConstraintBasis basis_from(const oracle::Mat& g) {
  if (g.cols() == 0) return ConstraintBasis::empty(static_cast<std::size_t>(g.rows()));
  return ConstraintBasis(oracle::from_eigen(g));
}

struct Instance {
  std::size_t d, r, k;
  oracle::Mat g, u;
};

/// Random (d, r, k) with d ≤ 32, r ≤ 4, k ≤ 4 and a feasible point built from
/// the Eigen complement basis.
Instance random_instance(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> rk(1, 4), kk(0, 4);
  Instance in;
  in.r = static_cast<std::size_t>(rk(gen));
  in.k = static_cast<std::size_t>(kk(gen));
  std::uniform_int_distribution<int> dd(static_cast<int>(in.r + in.k + 1), 32);
  in.d = static_cast<std::size_t>(dd(gen));
  const auto d = static_cast<Eigen::Index>(in.d);
  in.g = in.k ? oracle::orth(oracle::gaussian(gen, d, static_cast<Eigen::Index>(in.k)))
              : oracle::Mat(d, 0);
  const oracle::Mat c = oracle::complement(in.g);
  in.u = c * oracle::orth(oracle::gaussian(gen, c.cols(), static_cast<Eigen::Index>(in.r)));
  return in;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, std::map<std::string, double>> computed;
  const auto rows = fixture::load_expectations();
  for (const auto& e : rows) {
    if (computed.count(e.fixture)) continue;
    std::ostringstream out;
    if (cmd_metrics(fixture::dir() + "/" + e.fixture + ".csv", out) != kExitOk)
      return {false, "cmd_metrics failed on " + e.fixture};
    std::istringstream is(out.str());
    std::string line;
    while (std::getline(is, line)) {
      const auto f = detail::split_csv(line);
      if (f.size() == 3 && f[2] != "undefined") computed[e.fixture][f[0]] = std::stod(f[2]);
    }
  }
  std::size_t ok = 0;
  std::string misses;
  for (const auto& e : rows) {
    const double got = computed[e.fixture].at(e.metric);
    if (fixture::within_rounding(got, e.expected)) {
      ++ok;
    } else {
      misses += " " + e.fixture + "." + e.metric + "(" + e.source + ") got " + fmt("%.3f", got) +
                " want " + fmt("%.1f", e.expected) + ";";
    }
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(ok) + "/" + std::to_string(rows.size()) +
                       " aggregates within 0.1 over " + std::to_string(computed.size()) +
                       " fixtures, " + fmt("%.3f", secs) + " s";
  if (!misses.empty()) detail += "; mismatches:" + misses;
  return {ok == rows.size() && secs < 1.0, detail};
}

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(20240502);
  double worst_ls = 0.0, worst_orth = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(gen);
    const auto point = RestrictedStiefelPoint::make(basis_from(in.g), oracle::from_eigen(in.u));
    const oracle::Mat z = oracle::gaussian(gen, in.u.rows(), in.u.cols());
    const oracle::Mat p = oracle::to_eigen(tangent_project(point, oracle::from_eigen(z)));
    worst_ls = std::max(worst_ls, (p - oracle::tangent_least_squares(in.u, in.g, z)).norm());
    const oracle::Mat resid = z - p;
    for (int j = 0; j < 100; ++j) {
      const oracle::Mat xi = oracle::random_tangent(gen, in.u, in.g);
      const double denom = resid.norm() * xi.norm();
      if (denom > 0.0) worst_orth = std::max(worst_orth, std::abs((resid.array() * xi.array()).sum()) / denom);
    }
  }
  const double secs = seconds_since(t0);
  return {worst_ls <= 1e-7 && worst_orth <= 1e-8 && secs < 10.0,
          "200 instances: max |P(Z) - oracle|_F = " + fmt("%.2e", worst_ls) +
              ", max residual/tangent cosine = " + fmt("%.2e", worst_orth) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(77);
  double worst_polar = 0.0, worst_white = 0.0, worst_pyth = 0.0;
  int beaten = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(gen);
    const ConstraintBasis basis = basis_from(in.g);
    // An ambient iterate near the manifold, with a component along G.
    const oracle::Mat ut = in.u + 0.3 * oracle::gaussian(gen, in.u.rows(), in.u.cols());
    const oracle::Mat gg = in.g * in.g.transpose();
    const oracle::Mat y = ut - gg * ut;
    const oracle::Mat ref = oracle::polar(y);

    const oracle::Mat r_auto = oracle::to_eigen(retract(basis, oracle::from_eigen(ut)).u());
    const oracle::Mat r_polar = oracle::to_eigen(retract_polar(basis, oracle::from_eigen(ut)).u());
    const oracle::Mat r_white = oracle::to_eigen(retract_whitening(basis, oracle::from_eigen(ut)).u());
    worst_polar = std::max({worst_polar, (r_auto - ref).norm(), (r_polar - ref).norm()});
    worst_white = std::max(worst_white, (r_white - ref).norm());

    const double dist = (ut - r_auto).norm();
    const oracle::Mat c = oracle::complement(in.g);
    bool ok = true;
    for (int j = 0; j < 1000 && ok; ++j) {
      const oracle::Mat cand = c * oracle::orth(oracle::gaussian(gen, c.cols(), in.u.cols()));
      if ((ut - cand).norm() < dist) ok = false;
    }
    beaten += ok ? 0 : 1;

    const double lhs = (ut - r_auto).squaredNorm();
    const double rhs = (gg * ut).squaredNorm() + (y - r_auto).squaredNorm();
    worst_pyth = std::max(worst_pyth, std::abs(lhs - rhs) / std::max(lhs, 1e-300));
  }
  const double secs = seconds_since(t0);
  return {worst_polar <= 1e-8 && worst_white <= 1e-8 && beaten == 0 && worst_pyth <= 1e-8 && secs < 30.0,
          "200 instances: vs SVD polar " + fmt("%.2e", worst_polar) + ", whitening route " +
              fmt("%.2e", worst_white) + ", instances beaten by a random candidate " +
              std::to_string(beaten) + ", Pythagorean rel err " + fmt("%.2e", worst_pyth) + ", " +
              fmt("%.2f", secs) + " s"};
}

Outcome criterion4() {
  Rng rng(4);
  const ConstraintBasis g(orthonormalize(rng.normal_matrix(16, 3)));
  auto p = random_feasible(g, 16, 4, 5);
  InnerOptimizerConfig adam;
  OptState st;
  double worst_s = 0.0, worst_g = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto r = step_constrained(p, rng.normal_matrix(16, 4), std::move(st), adam);
    p = std::move(r.point);
    st = std::move(r.state);
    worst_s = std::max(worst_s, stiefel_residual(p.u()));
    worst_g = std::max(worst_g, constraint_residual(g, p.u()));
  }
  return {worst_s < 1e-8 && worst_g < 1e-8,
          "1000 Adam steps at (16,4,3): max |U^T U - I|_F = " + fmt("%.2e", worst_s) +
              ", max |G^T U|_F = " + fmt("%.2e", worst_g)};
}

Outcome criterion5() {
  std::vector<HarnessConfig> cfgs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    HarnessConfig c;
    c.seed = s;
    cfgs.push_back(c);
  }
  HarnessConfig deep;
  deep.seed = 11;
  deep.layers = 3;
  deep.steps_per_task = 200;
  cfgs.push_back(deep);
  double worst = 0.0;
  std::size_t count = 0;
  for (const auto& c : cfgs) {
    const RunResult r = run_sequence(c);
    for (const auto& t : r.tasks)
      for (const auto& u : t.updates) {
        worst = std::max(worst, spectrum(materialize(u), u.rank()).cv);
        ++count;
      }
  }
  return {count > 0 && worst <= 1e-8,
          std::to_string(count) + " materialized updates, max cv = " + fmt("%.2e", worst)};
}

Outcome criterion6() {
  Rng rng(6);
  auto m = GradientMemory::init(256, 0.95);
  double worst = -1.0;
  for (int i = 0; i < 50; ++i) {
    const DenseMatrix snap =
        matmul(rng.normal_matrix(256, 2), rng.normal_matrix(2, 8)) + rng.normal_matrix(256, 8) * 0.02;
    GpmUpdateResult res = m.update(snap);
    const double total = fro_norm(snap) * fro_norm(snap);
    const double resid = fro_norm(res.memory.project_out(snap));
    worst = std::max(worst, (resid * resid - (1 - 0.95) * total) / total);
    m = std::move(res.memory);
  }
  return {worst <= 1e-8, "50 updates at eps 0.95 (final k = " + std::to_string(m.k()) +
                             "): max (residual - 0.05 total)/total = " + fmt("%.3e", worst)};
}

/// One-sided sign test: P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int k, int n) {
  double p = 0.0;
  for (int i = k; i <= n; ++i) p += std::exp(std::lgamma(n + 1) - std::lgamma(i + 1) - std::lgamma(n - i + 1) - n * std::log(2.0));
  return p;
}

struct SeedOutcome {
  bool bwt = false, cv = false, nai = false, diag = false;
  double bwt_m = 0, bwt_b = 0, cv_m = 0, cv_b = 0, nai0 = 0, nai1 = 0, worst_diag = 0;
};

SeedOutcome directional_seed(std::uint64_t seed) {
  HarnessConfig c;
  c.seed = seed;
  c.alpha_grid = {0.0, 1.0};
  const TaskSequence seq = make_task_sequence(c);
  const RunResult m = run_sequence(c, seq);
  const RunResult b = baseline_run(c, seq);
  const MergeReport rep = merge_experiment(c, seq);
  auto mean_cv = [](const RunResult& r) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& t : r.tasks)
      for (double v : t.cv) acc += v, ++n;
    return acc / static_cast<double>(n);
  };
  SeedOutcome o;
  o.bwt_m = bwt(m.accuracy);
  o.bwt_b = bwt(b.accuracy);
  o.cv_m = mean_cv(m);
  o.cv_b = mean_cv(b);
  o.nai0 = rep.mean_nai.front();
  o.nai1 = rep.mean_nai.back();
  const auto dm = m.accuracy.diagonal(), db = b.accuracy.diagonal();
  for (std::size_t i = 0; i < dm.size(); ++i)
    o.worst_diag = std::max(o.worst_diag, std::abs(dm[i] - db[i]) / std::max(std::abs(db[i]), 1e-12));
  o.bwt = o.bwt_m > o.bwt_b;
  o.cv = o.cv_b > o.cv_m;
  o.nai = o.nai1 >= o.nai0;
  o.diag = o.worst_diag <= 0.15;
  return o;
}

Outcome criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 10;
  std::vector<std::future<SeedOutcome>> jobs;
  for (int s = 0; s < kSeeds; ++s)
    jobs.push_back(std::async(std::launch::async, directional_seed, static_cast<std::uint64_t>(s)));
  std::vector<SeedOutcome> res;
  for (auto& j : jobs) res.push_back(j.get());

  auto verdict = [&](const char* name, auto field) {
    int k = 0;
    for (const auto& r : res) k += (r.*field) ? 1 : 0;
    const double p = sign_test_p(k, kSeeds);
    const bool ok = p < 0.05 || 10 * k >= 9 * kSeeds;
    return std::make_pair(ok, std::string(name) + " " + std::to_string(k) + "/" + std::to_string(kSeeds) +
                                  " (p=" + fmt("%.4f", p) + ")");
  };
  const auto a = verdict("(a) BWT", &SeedOutcome::bwt);
  const auto b = verdict("(b) cv", &SeedOutcome::cv);
  const auto c = verdict("(c) NAI", &SeedOutcome::nai);
  const auto d = verdict("(d) diagonal", &SeedOutcome::diag);
  double bm = 0, bb = 0, n0 = 0, n1 = 0, wd = 0;
  for (const auto& r : res) {
    bm += r.bwt_m / kSeeds;
    bb += r.bwt_b / kSeeds;
    n0 += r.nai0 / kSeeds;
    n1 += r.nai1 / kSeeds;
    wd = std::max(wd, r.worst_diag);
  }
  const double secs = seconds_since(t0);
  return {a.first && b.first && c.first && d.first && secs < 600.0,
          a.second + ", " + b.second + ", " + c.second + ", " + d.second + "; mean BWT method " +
              fmt("%.2f", bm) + " vs baseline " + fmt("%.2f", bb) + ", mean NAI " + fmt("%.3f", n0) +
              " -> " + fmt("%.3f", n1) + ", worst diagonal gap " + fmt("%.3f", wd) + ", " +
              fmt("%.1f", secs) + " s"};
}

Outcome criterion8() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const std::size_t r = 1 + i % 4;
    worst = std::max(worst, gradcheck::check(gradcheck::random_problem(1000 + i, 8, 4, r), 1e-6).worst());
  }
  return {worst <= 1e-4, "20 problems (8x4, ranks 1-4): max relative error vs central differences = " +
                             fmt("%.2e", worst)};
}

Outcome criterion9() {
  const fs::path root = fs::temp_directory_path() / "ebcl_acceptance_c9";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.json";
  std::ofstream(cfg) << R"({"seed": 42, "task": {"count": 4}, "steps_per_task": 200})";
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  bool ok = true;
  std::string detail;
  for (const char* mode : {"run", "baseline"}) {
    std::string texts[2];
    for (int k = 0; k < 2; ++k) {
      CliArgs a;
      a.config_path = cfg.string();
      a.mode = mode;
      a.out = (root / (std::string(mode) + std::to_string(k))).string();
      std::ostringstream out, err;
      if (dispatch(a, out, err) != kExitOk) return {false, std::string(mode) + ": " + err.str()};
      texts[k] = slurp(fs::path(*a.out) / "accuracy.csv");
    }
    const bool same = !texts[0].empty() && texts[0] == texts[1];
    ok = ok && same;
    detail += std::string(mode) + (same ? " identical" : " DIFFERENT") + " (" +
              std::to_string(texts[0].size()) + " bytes); ";
  }
  fs::remove_all(root);
  return {ok, detail + "two CLI runs per mode, seed 42"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric fixture reproduction", criterion1},
      {"tangent projection property suite", criterion2},
      {"retraction property suite", criterion3},
      {"feasibility drift", criterion4},
      {"spectral flatness", criterion5},
      {"GPM coverage bound", criterion6},
      {"directional desk-scale experiments", criterion7},
      {"gradient correctness", criterion8},
      {"determinism", criterion9},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
