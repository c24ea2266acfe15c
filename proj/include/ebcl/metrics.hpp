#pragma once

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ebcl/error.hpp"
#include "ebcl/matrix.hpp"

namespace ebcl {

/// a[j][i]: accuracy (percent) on task i after training through task j.
/// Cells may be missing; each metric names the cells it needs.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;

  explicit AccuracyMatrix(std::vector<std::string> task_ids)
      : ids_(std::move(task_ids)),
        cells_(ids_.size(), std::vector<std::optional<double>>(ids_.size())) {}

  static AccuracyMatrix with_size(std::size_t t) {
    std::vector<std::string> ids;
    for (std::size_t i = 1; i <= t; ++i) ids.push_back("task_" + std::to_string(i));
    return AccuracyMatrix(std::move(ids));
  }

  static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix a = with_size(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      require(rows[j].size() == rows.size(), ErrorKind::InvalidInput,
              "AccuracyMatrix: rows must form a square table");
      for (std::size_t i = 0; i < rows.size(); ++i) a.set(j, i, rows[j][i]);
    }
    return a;
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& task_ids() const noexcept { return ids_; }

  void set(std::size_t j, std::size_t i, double value) {
    require(std::isfinite(value), ErrorKind::InvalidInput, "AccuracyMatrix: non-finite cell");
    cells_.at(j).at(i) = value;
  }
  const std::optional<double>& cell(std::size_t j, std::size_t i) const { return cells_.at(j).at(i); }

  /// Value at (j, i); InvalidInput naming `metric` if the cell is missing.
  double at(std::size_t j, std::size_t i, const char* metric) const {
    const auto& c = cells_.at(j).at(i);
    if (!c)
      fail(ErrorKind::InvalidInput, std::string(metric) + ": missing entry A[" +
                                        std::to_string(j + 1) + "][" + std::to_string(i + 1) + "]");
    return *c;
  }

  std::vector<double> final_row() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(size() - 1, i, "final_row"));
    return out;
  }

  std::vector<double> diagonal() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i, i, "diagonal"));
    return out;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<std::optional<double>>> cells_;
};

namespace detail {
inline void require_nonempty(const AccuracyMatrix& a, const char* metric) {
  require(a.size() >= 1, ErrorKind::InvalidInput, std::string(metric) + ": empty matrix");
}
}  // namespace detail

/// Mean of the final row.
inline double mfn(const AccuracyMatrix& a) {
  detail::require_nonempty(a, "mfn");
  const std::size_t t = a.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < t; ++i) acc += a.at(t - 1, i, "mfn");
  return acc / static_cast<double>(t);
}

/// Mean over checkpoints of the mean accuracy on tasks seen so far.
inline double maa(const AccuracyMatrix& a) {
  detail::require_nonempty(a, "maa");
  const std::size_t t = a.size();
  double outer = 0.0;
  for (std::size_t j = 0; j < t; ++j) {
    double inner = 0.0;
    for (std::size_t i = 0; i <= j; ++i) inner += a.at(j, i, "maa");
    outer += inner / static_cast<double>(j + 1);
  }
  return outer / static_cast<double>(t);
}

/// Mean of final accuracy minus just-learned accuracy.
inline double bwt(const AccuracyMatrix& a) {
  detail::require_nonempty(a, "bwt");
  const std::size_t t = a.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < t; ++i) acc += a.at(t - 1, i, "bwt") - a.at(i, i, "bwt");
  return acc / static_cast<double>(t);
}

/// Mean over tasks 2..T of the mean accuracy on that task before it was learned.
inline double fwt(const AccuracyMatrix& a) {
  const std::size_t t = a.size();
  require(t >= 2, ErrorKind::InvalidInput, "fwt: needs at least two tasks");
  double outer = 0.0;
  for (std::size_t i = 1; i < t; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < i; ++j) inner += a.at(j, i, "fwt");
    outer += inner / static_cast<double>(i);
  }
  return outer / static_cast<double>(t - 1);
}

/// Mean of every cell.
inline double avg(const AccuracyMatrix& a) {
  detail::require_nonempty(a, "avg");
  const std::size_t t = a.size();
  double acc = 0.0;
  for (std::size_t j = 0; j < t; ++j)
    for (std::size_t i = 0; i < t; ++i) acc += a.at(j, i, "avg");
  return acc / static_cast<double>(t * t);
}

struct MetricsReport {
  double mfn = 0.0;
  double maa = 0.0;
  double bwt = 0.0;
  std::optional<double> fwt;
  double avg = 0.0;
  std::vector<double> final_accuracies;
};

inline MetricsReport compute_metrics(const AccuracyMatrix& a) {
  MetricsReport r;
  r.mfn = mfn(a);
  r.maa = maa(a);
  r.bwt = bwt(a);
  if (a.size() >= 2) r.fwt = fwt(a);
  r.avg = avg(a);
  r.final_accuracies = a.final_row();
  return r;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf, static_cast<std::size_t>(n));
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

/// Header `checkpoint,<ids>`; one row per checkpoint; cells with 4 decimals,
/// missing cells left blank.
inline void write_accuracy_csv(std::ostream& os, const AccuracyMatrix& a) {
  os << "checkpoint";
  for (const auto& id : a.task_ids()) os << ',' << id;
  os << '\n';
  for (std::size_t j = 0; j < a.size(); ++j) {
    os << a.task_ids()[j];
    for (std::size_t i = 0; i < a.size(); ++i) {
      os << ',';
      if (a.cell(j, i)) os << format_fixed(*a.cell(j, i), 4);
    }
    os << '\n';
  }
}

namespace detail {
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}
}  // namespace detail

/// Reads the CSV written by write_accuracy_csv. Lines starting with '#' and
/// blank lines are skipped.
inline AccuracyMatrix read_accuracy_csv(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<AccuracyMatrix> a;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view sv(line);
    while (!sv.empty() && (sv.back() == '\r' || sv.back() == ' ')) sv.remove_suffix(1);
    if (sv.empty() || sv.front() == '#') continue;
    auto fields = detail::split_csv(sv);
    if (!a) {
      if (fields.size() < 2) throw ParseError(line_no, "header must list at least one task");
      a.emplace(std::vector<std::string>(fields.begin() + 1, fields.end()));
      continue;
    }
    if (row >= a->size()) throw ParseError(line_no, "more checkpoint rows than tasks");
    if (fields.size() != a->size() + 1)
      throw ParseError(line_no, "expected " + std::to_string(a->size() + 1) + " fields, got " +
                                    std::to_string(fields.size()));
    for (std::size_t i = 0; i < a->size(); ++i) {
      const std::string& f = fields[i + 1];
      if (f.empty()) continue;
      const double v = detail::parse_double(f, line_no);
      if (!std::isfinite(v) || v < 0.0 || v > 100.0)
        throw ParseError(line_no, "accuracy '" + f + "' outside [0, 100]");
      a->set(row, i, v);
    }
    ++row;
  }
  if (!a) throw ParseError(line_no, "no header row");
  if (row != a->size())
    throw ParseError(line_no, "expected " + std::to_string(a->size()) + " checkpoint rows, got " +
                                  std::to_string(row));
  return *a;
}

}  // namespace ebcl
