#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ebcl/adapter.hpp"
#include "ebcl/config.hpp"
#include "ebcl/error.hpp"
#include "ebcl/gpm.hpp"
#include "ebcl/harness.hpp"
#include "ebcl/metrics.hpp"
#include "ebcl/spectral.hpp"

namespace ebcl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitParse = 4;

/// Command-line inputs after flag parsing; flags override config values.
struct CliArgs {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::vector<std::string> positionals;
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError: return kExitConfig;
    case ErrorKind::ParseError: return kExitParse;
    default: return kExitRuntime;
  }
}

inline void report_error(std::ostream& err, std::string_view kind, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  err << "error: " << kind << ": " << msg << '\n';
}

namespace cli_detail {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot write " + p.string());
  return os;
}

inline AccuracyMatrix load_accuracy(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::IoError, "cannot open " + path);
  return read_accuracy_csv(is);
}

inline void write_metric_line(std::ostream& os, const std::string& name, double v) {
  os << name << ',' << format_fixed(v, 1) << ',' << format_double(v) << '\n';
}

inline void write_metrics(std::ostream& os, const AccuracyMatrix& a) {
  const MetricsReport r = compute_metrics(a);
  write_metric_line(os, "mfn", r.mfn);
  write_metric_line(os, "maa", r.maa);
  write_metric_line(os, "bwt", r.bwt);
  if (r.fwt)
    write_metric_line(os, "fwt", *r.fwt);
  else
    os << "fwt,undefined,undefined\n";
  write_metric_line(os, "avg", r.avg);
}

inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  fs::path base(*c.out);
  if (c.seeds.size() > 1) base /= "seed_" + std::to_string(seed);
  return base;
}

/// Runs `job(i)` for every seed index on up to hardware_concurrency threads.
/// The first failure in seed order is rethrown after all workers finish.
inline void for_each_seed(std::size_t count, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(count, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= count) return;
            i = next++;
          }
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_spectra(std::ostream& os, const RunResult& r, std::size_t rank) {
  for (std::size_t t = 0; t < r.tasks.size(); ++t)
    for (std::size_t l = 0; l < r.tasks[t].deltas.size(); ++l) {
      os << "# task " << (t + 1) << " layer " << (l + 1) << '\n';
      write_spectrum_csv(os, spectrum(r.tasks[t].deltas[l], rank));
    }
}

inline nlohmann::json run_info(const RunResult& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const TaskRecord& t : r.tasks) {
    nlohmann::json cv = nlohmann::json::array();
    for (double v : t.cv) cv.push_back(v);
    tasks.push_back({{"init_accuracy", t.init_accuracy},
                     {"final_train_loss", t.final_loss},
                     {"padded_directions", t.padded},
                     {"memory_added", t.gpm_added},
                     {"spectrum_cv", cv}});
  }
  return {{"tasks", tasks}};
}

}  // namespace cli_detail

/// Sequential method run (mode "run") or baseline run (mode "baseline").
inline int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  const bool method = cfg.mode == "run";
  std::vector<std::optional<RunResult>> results(cfg.seeds.size());
  cli_detail::for_each_seed(cfg.seeds.size(), [&](std::size_t i) {
    HarnessConfig h = cfg.harness;
    h.seed = cfg.seeds[i];
    const TaskSequence seq = make_task_sequence(h);
    results[i] = method ? run_sequence(h, seq) : baseline_run(h, seq);
  });

  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const std::uint64_t seed = cfg.seeds[i];
    const RunResult& r = *results[i];
    const fs::path dir = cli_detail::seed_dir(cfg, seed);
    fs::create_directories(dir);
    {
      auto os = cli_detail::open_out(dir / "accuracy.csv");
      write_accuracy_csv(os, r.accuracy);
    }
    {
      auto os = cli_detail::open_out(dir / "metrics.txt");
      cli_detail::write_metrics(os, r.accuracy);
    }
    {
      auto os = cli_detail::open_out(dir / "spectra.csv");
      cli_detail::write_spectra(os, r, cfg.harness.rank);
    }
    if (method) {
      auto os = cli_detail::open_out(dir / "adapters.txt");
      for (const TaskRecord& t : r.tasks)
        for (const TaskUpdate& u : t.updates) write_adapter(os, u);
      auto ms = cli_detail::open_out(dir / "memory.txt");
      for (const GradientMemory& m : r.memories) write_memory(ms, m);
    } else {
      auto os = cli_detail::open_out(dir / "deltas.txt");
      for (const TaskRecord& t : r.tasks)
        for (const DenseMatrix& d : t.deltas) write_matrix(os, d);
    }
    {
      auto os = cli_detail::open_out(dir / "manifest.json");
      os << manifest_json(cfg, seed, cli_detail::run_info(r)).dump(2) << '\n';
    }
    log << "# " << cfg.mode << " seed " << seed << '\n';
    cli_detail::write_metrics(log, r.accuracy);
  }
  return kExitOk;
}

/// NAI table for every smoothing ratio.
inline int cmd_merge_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  std::vector<std::optional<MergeReport>> reports(cfg.seeds.size());
  cli_detail::for_each_seed(cfg.seeds.size(), [&](std::size_t i) {
    HarnessConfig h = cfg.harness;
    h.seed = cfg.seeds[i];
    reports[i] = merge_experiment(h);
  });
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const MergeReport& rep = *reports[i];
    const fs::path dir = cli_detail::seed_dir(cfg, cfg.seeds[i]);
    fs::create_directories(dir);
    auto os = cli_detail::open_out(dir / "merge.csv");
    os << "alpha,mean_nai";
    for (std::size_t t = 0; t < rep.zero_shot.size(); ++t) os << ",nai_task_" << (t + 1);
    os << '\n';
    for (std::size_t a = 0; a < rep.alphas.size(); ++a) {
      os << format_fixed(rep.alphas[a], 4) << ',' << format_fixed(rep.mean_nai[a], 6);
      for (double v : rep.nai[a]) os << ',' << format_fixed(v, 6);
      os << '\n';
    }
    os << "# zero_shot";
    for (double v : rep.zero_shot) os << ',' << format_fixed(v, 4);
    os << "\n# individual";
    for (double v : rep.individual) os << ',' << format_fixed(v, 4);
    os << '\n';
    auto ms = cli_detail::open_out(dir / "manifest.json");
    ms << manifest_json(cfg, cfg.seeds[i]).dump(2) << '\n';
    log << "merge-experiment seed " << cfg.seeds[i] << ": mean NAI";
    for (std::size_t a = 0; a < rep.alphas.size(); ++a)
      log << ' ' << format_fixed(rep.alphas[a], 2) << "->" << format_fixed(rep.mean_nai[a], 4);
    log << '\n';
  }
  return kExitOk;
}

/// Prints the five aggregate metrics of an accuracy CSV.
inline int cmd_metrics(const std::string& path, std::ostream& out) {
  cli_detail::write_metrics(out, cli_detail::load_accuracy(path));
  return kExitOk;
}

/// Spectrum of every adapter block in a checkpoint, over its stored rank.
inline int cmd_spectrum(const std::string& path, std::ostream& out) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::IoError, "cannot open " + path);
  const auto records = read_adapters(is);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AdapterRecord& r = records[i];
    out << "# adapter " << (i + 1) << " layer " << r.layer << " rank " << r.rank << '\n';
    write_spectrum_csv(out, spectrum(matmul_nt(r.u, r.v) * r.s, r.rank));
  }
  return kExitOk;
}

/// Metric deltas (b − a) between the accuracy CSVs of two run directories.
inline int cmd_compare(const std::string& dir_a, const std::string& dir_b, std::ostream& out) {
  namespace fs = std::filesystem;
  const MetricsReport a = compute_metrics(cli_detail::load_accuracy((fs::path(dir_a) / "accuracy.csv").string()));
  const MetricsReport b = compute_metrics(cli_detail::load_accuracy((fs::path(dir_b) / "accuracy.csv").string()));
  std::vector<std::pair<std::string, std::pair<double, double>>> rows{
      {"mfn", {a.mfn, b.mfn}}, {"maa", {a.maa, b.maa}}, {"bwt", {a.bwt, b.bwt}}, {"avg", {a.avg, b.avg}}};
  if (a.fwt && b.fwt) rows.insert(rows.begin() + 3, {"fwt", {*a.fwt, *b.fwt}});
  int up = 0, down = 0, same = 0;
  out << "metric,a,b,delta\n";
  for (const auto& [name, v] : rows) {
    const double delta = v.second - v.first;
    out << name << ',' << format_fixed(v.first, 4) << ',' << format_fixed(v.second, 4) << ','
        << format_fixed(delta, 4) << '\n';
    if (delta > 0.0)
      ++up;
    else if (delta < 0.0)
      ++down;
    else
      ++same;
  }
  out << "# summary higher=" << up << " lower=" << down << " equal=" << same << '\n';
  return kExitOk;
}

/// Resolves config and flags, validates everything up front, then runs the
/// selected command. Errors become one `error: <Kind>: message` line.
inline int dispatch(const CliArgs& args, std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig cfg;
    if (args.config_path) cfg = load_config(*args.config_path);
    if (args.mode) cfg.mode = *args.mode;
    if (args.seed) cfg.seeds = {*args.seed};
    if (args.out) cfg.out = *args.out;
    if (!args.positionals.empty()) cfg.inputs = args.positionals;

    if (cfg.mode.empty()) fail(ErrorKind::ConfigError, "mode is required (--mode or config.mode)");
    const auto& modes = known_modes();
    if (std::find(modes.begin(), modes.end(), cfg.mode) == modes.end())
      fail(ErrorKind::ConfigError, "unknown mode '" + cfg.mode + "'");

    if (mode_writes_directory(cfg.mode)) {
      if (!cfg.out) fail(ErrorKind::ConfigError, "an output directory is required (--out or paths.out)");
      cfg.harness.validate();
      if (cfg.mode == "run" || cfg.mode == "baseline") return cmd_run(cfg, out);
      return cmd_merge_experiment(cfg, out);
    }
    if (cfg.mode == "metrics") {
      if (cfg.inputs.size() != 1) fail(ErrorKind::ConfigError, "metrics takes one accuracy CSV");
      return cmd_metrics(cfg.inputs[0], out);
    }
    if (cfg.mode == "spectrum") {
      if (cfg.inputs.size() != 1) fail(ErrorKind::ConfigError, "spectrum takes one adapter checkpoint");
      if (cfg.out) {
        std::filesystem::create_directories(*cfg.out);
        auto os = cli_detail::open_out(std::filesystem::path(*cfg.out) / "spectrum.csv");
        return cmd_spectrum(cfg.inputs[0], os);
      }
      return cmd_spectrum(cfg.inputs[0], out);
    }
    if (cfg.inputs.size() != 2) fail(ErrorKind::ConfigError, "compare takes two run directories");
    return cmd_compare(cfg.inputs[0], cfg.inputs[1], out);
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(err, to_string(ErrorKind::IoError), e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    report_error(err, "InternalError", e.what());
    return kExitRuntime;
  }
}

}  // namespace ebcl
