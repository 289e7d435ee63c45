#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ibm/mask_manager.hpp"
#include "ibm/metrics.hpp"

namespace ibm {

struct GammaRecord {
  int task = 0;
  int epoch = 0;
  std::size_t layer = 0;
  double gamma = 0.0;

  friend bool operator==(const GammaRecord&, const GammaRecord&) = default;
};

/// Outcome of one run. Everything except `wall_clock_seconds` is a pure
/// function of the configuration and is what gets written to the report file.
struct RunReport {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t layers = 0;
  AccuracyMatrix accuracy;
  std::optional<double> acc;
  std::optional<double> bwt;
  std::optional<double> fwt;
  FwtRange fwt_range = FwtRange::first_t_minus_1;
  std::vector<double> baseline_mt;
  std::vector<std::vector<LayerMaskCount>> mask_counts;  // [task][layer]
  std::vector<GammaRecord> gamma_history;
  std::vector<double> final_epoch_loss;  // mean training loss over each task's last epoch
  std::vector<CapacityWarning> capacity_warnings;
  std::vector<double> wall_clock_seconds;

  std::size_t tasks() const { return accuracy.tasks(); }

  void recompute_metrics() {
    acc = accuracy.tasks() ? std::optional<double>(ibm::acc(accuracy)) : std::nullopt;
    bwt = ibm::bwt(accuracy);
    fwt = baseline_mt.size() == accuracy.tasks() ? ibm::fwt(accuracy, baseline_mt, fwt_range) : std::nullopt;
  }
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_opt(const std::optional<double>& v) { return v ? format_real(*v) : "null"; }

inline const char* fwt_range_name(FwtRange r) {
  return r == FwtRange::all_tasks ? "all_tasks" : "first_t_minus_1";
}

/// Key/value header followed by CSV sections, each introduced by [name].
inline std::string render_report(const RunReport& r) {
  std::ostringstream os;
  os << "# ibm run report\n";
  os << "format = ibm-report-1\n";
  os << "strategy = " << r.strategy << "\n";
  os << "seed = " << r.seed << "\n";
  os << "tasks = " << r.tasks() << "\n";
  os << "layers = " << r.layers << "\n";
  os << "acc = " << format_opt(r.acc) << "\n";
  os << "bwt = " << format_opt(r.bwt) << "\n";
  os << "fwt = " << format_opt(r.fwt) << "\n";
  os << "fwt_range = " << fwt_range_name(r.fwt_range) << "\n";

  os << "\n[accuracy_matrix]\nafter_task";
  for (std::size_t j = 0; j < r.tasks(); ++j) os << ",task_" << j;
  os << "\n";
  for (std::size_t i = 0; i < r.tasks(); ++i) {
    os << i;
    for (std::size_t j = 0; j < r.tasks(); ++j) os << "," << (j <= i ? format_real(r.accuracy.at(i, j)) : "");
    os << "\n";
  }

  os << "\n[baseline_mt]\ntask,accuracy\n";
  for (std::size_t i = 0; i < r.baseline_mt.size(); ++i) os << i << "," << format_real(r.baseline_mt[i]) << "\n";

  os << "\n[mask_counts]\ntask,layer,selected,total\n";
  for (std::size_t t = 0; t < r.mask_counts.size(); ++t)
    for (std::size_t l = 0; l < r.mask_counts[t].size(); ++l)
      os << t << "," << l << "," << r.mask_counts[t][l].selected << "," << r.mask_counts[t][l].total << "\n";

  os << "\n[gamma_history]\ntask,epoch,layer,gamma\n";
  for (const auto& g : r.gamma_history)
    os << g.task << "," << g.epoch << "," << g.layer << "," << format_real(g.gamma) << "\n";

  os << "\n[train_loss]\ntask,final_epoch_mean_loss\n";
  for (std::size_t t = 0; t < r.final_epoch_loss.size(); ++t) os << t << "," << format_real(r.final_epoch_loss[t]) << "\n";

  os << "\n[capacity_warnings]\nafter_task,layer,free,total\n";
  for (const auto& w : r.capacity_warnings)
    os << w.after_task << "," << w.layer << "," << w.free << "," << w.total << "\n";
  return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double to_real(const std::string& s, const std::string& ctx) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("report: bad number '" + s + "' in " + ctx);
  }
}

inline std::size_t to_count(const std::string& s, const std::string& ctx) {
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error("report: bad integer '" + s + "' in " + ctx);
  }
}

}  // namespace detail

/// Inverse of render_report for the deterministic fields.
inline RunReport parse_report(const std::string& text) {
  std::map<std::string, std::string> header;
  std::map<std::string, std::vector<std::vector<std::string>>> sections;
  std::istringstream is(text);
  std::string line, section;
  bool expect_columns = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      sections[section];
      expect_columns = true;
      continue;
    }
    if (section.empty()) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw Error("report: malformed header line '" + line + "'");
      header[line.substr(0, eq)] = line.substr(eq + 3);
      continue;
    }
    if (expect_columns) {
      expect_columns = false;
      continue;
    }
    sections[section].push_back(detail::split_csv(line));
  }
  if (header["format"] != "ibm-report-1") throw Error("report: unsupported or missing format tag");

  RunReport r;
  r.strategy = header["strategy"];
  r.seed = detail::to_count(header["seed"], "seed");
  r.layers = detail::to_count(header["layers"], "layers");
  const std::size_t T = detail::to_count(header["tasks"], "tasks");
  r.fwt_range = header["fwt_range"] == "all_tasks" ? FwtRange::all_tasks : FwtRange::first_t_minus_1;

  const auto& am = sections["accuracy_matrix"];
  if (am.size() != T) throw Error("report: accuracy matrix has " + std::to_string(am.size()) + " rows, expected " + std::to_string(T));
  r.accuracy = AccuracyMatrix(T);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      if (am[i].size() < j + 2) throw Error("report: accuracy row " + std::to_string(i) + " too short");
      r.accuracy.set(i, j, detail::to_real(am[i][j + 1], "accuracy_matrix"));
    }
  for (const auto& row : sections["baseline_mt"]) r.baseline_mt.push_back(detail::to_real(row.at(1), "baseline_mt"));
  for (const auto& row : sections["mask_counts"]) {
    const std::size_t t = detail::to_count(row.at(0), "mask_counts");
    if (r.mask_counts.size() <= t) r.mask_counts.resize(t + 1);
    r.mask_counts[t].push_back({detail::to_count(row.at(2), "mask_counts"), detail::to_count(row.at(3), "mask_counts")});
  }
  for (const auto& row : sections["gamma_history"])
    r.gamma_history.push_back({static_cast<int>(detail::to_count(row.at(0), "gamma_history")),
                               static_cast<int>(detail::to_count(row.at(1), "gamma_history")),
                               detail::to_count(row.at(2), "gamma_history"), detail::to_real(row.at(3), "gamma_history")});
  for (const auto& row : sections["train_loss"]) r.final_epoch_loss.push_back(detail::to_real(row.at(1), "train_loss"));
  for (const auto& row : sections["capacity_warnings"])
    r.capacity_warnings.push_back({static_cast<int>(detail::to_count(row.at(0), "capacity_warnings")),
                                   detail::to_count(row.at(1), "capacity_warnings"),
                                   detail::to_count(row.at(2), "capacity_warnings"),
                                   detail::to_count(row.at(3), "capacity_warnings")});
  r.recompute_metrics();
  return r;
}

}  // namespace ibm
