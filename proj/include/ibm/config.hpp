#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ibm/data.hpp"
#include "ibm/idx.hpp"
#include "ibm/metrics.hpp"

namespace ibm {

struct IdxSource {
  std::string images;
  std::string labels;
  IdxSplit split;
};

using DataSource = std::variant<SplitGaussianSpec, IdxSource>;

/// Coefficient on the data-fit term of the training objective.
struct CeScale {
  enum class Mode { layers, layers_x_batch, fixed };
  Mode mode = Mode::layers_x_batch;
  double value = 0.0;  // used when mode == fixed

  double resolve(std::size_t layers, std::size_t batch_size) const {
    switch (mode) {
      case Mode::layers: return static_cast<double>(layers);
      case Mode::layers_x_batch: return static_cast<double>(layers * batch_size);
      case Mode::fixed: return value;
    }
    return value;
  }
};

/// Everything a run depends on. Every field has a default; see
/// configs/desk.json for the file form.
struct RunConfig {
  std::uint64_t seed = 1;
  int epochs_per_task = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double delta = 0.97;
  int fd_interval = 10;
  double kl_scale = 1.0;
  CeScale ce_scale;
  double alpha_threshold = 1.0;
  std::vector<std::size_t> hidden_widths{64, 64, 64};
  std::size_t probe_rows = 256;
  bool reinit = true;
  bool compute_fwt = true;
  FwtRange fwt_range = FwtRange::first_t_minus_1;
  std::optional<std::uint64_t> data_seed;  // unset: same as seed
  DataSource data = SplitGaussianSpec{};
  std::string output_dir;

  void validate() const {
    auto bad = [](const std::string& what) { throw Error("config: " + what); };
    if (epochs_per_task < 1) bad("epochs_per_task must be >= 1");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) bad("delta must lie in (0,1)");
    if (fd_interval < 1) bad("fd_interval must be >= 1");
    if (!(kl_scale >= 0.0)) bad("kl_scale must be >= 0");
    if (ce_scale.mode == CeScale::Mode::fixed && !(ce_scale.value > 0.0)) bad("ce_scale must be > 0");
    if (!(alpha_threshold >= 0.0)) bad("alpha_threshold must be >= 0");
    if (hidden_widths.empty()) bad("hidden_widths must name at least one layer");
    for (auto w : hidden_widths)
      if (w == 0) bad("hidden_widths entries must be > 0");
    if (probe_rows < 1) bad("probe_rows must be >= 1");
  }

  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
  double effective_ce_scale() const { return ce_scale.resolve(hidden_widths.size(), batch_size); }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline DataSource parse_data_source(const nlohmann::json& j) {
  std::string kind = "split_gaussians";
  detail::read_key(j, "kind", kind);
  if (kind == "split_gaussians") {
    detail::reject_unknown(j, {"kind", "tasks", "dims", "informative_per_task", "train_samples", "test_samples",
                               "separation"},
                           "data");
    SplitGaussianSpec s;
    detail::read_key(j, "tasks", s.tasks);
    detail::read_key(j, "dims", s.dims);
    detail::read_key(j, "informative_per_task", s.informative_per_task);
    detail::read_key(j, "train_samples", s.train_samples);
    detail::read_key(j, "test_samples", s.test_samples);
    detail::read_key(j, "separation", s.separation);
    return s;
  }
  if (kind == "idx") {
    detail::reject_unknown(j, {"kind", "images", "labels", "class_groups", "test_fraction"}, "data");
    IdxSource s;
    detail::read_key(j, "images", s.images);
    detail::read_key(j, "labels", s.labels);
    detail::read_key(j, "class_groups", s.split.class_groups);
    detail::read_key(j, "test_fraction", s.split.test_fraction);
    if (s.images.empty() || s.labels.empty()) throw Error("config: idx data needs 'images' and 'labels'");
    return s;
  }
  throw Error("config: unknown data kind '" + kind + "'");
}

inline RunConfig parse_config(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"seed", "epochs_per_task", "batch_size", "learning_rate", "delta", "fd_interval", "kl_scale",
                          "ce_scale", "alpha_threshold", "hidden_widths", "probe_rows", "reinit", "compute_fwt",
                          "fwt_range", "data_seed", "data", "output_dir"},
                         "config");
  RunConfig c;
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "epochs_per_task", c.epochs_per_task);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "delta", c.delta);
  detail::read_key(j, "fd_interval", c.fd_interval);
  detail::read_key(j, "kl_scale", c.kl_scale);
  if (j.contains("ce_scale")) {
    const auto& v = j.at("ce_scale");
    if (v.is_string() && v.get<std::string>() == "layers")
      c.ce_scale = {CeScale::Mode::layers, 0.0};
    else if (v.is_string() && v.get<std::string>() == "layers_x_batch")
      c.ce_scale = {CeScale::Mode::layers_x_batch, 0.0};
    else if (v.is_number())
      c.ce_scale = {CeScale::Mode::fixed, v.get<double>()};
    else
      throw Error("config: ce_scale must be a number, \"layers\" or \"layers_x_batch\"");
  }
  detail::read_key(j, "alpha_threshold", c.alpha_threshold);
  detail::read_key(j, "hidden_widths", c.hidden_widths);
  detail::read_key(j, "probe_rows", c.probe_rows);
  detail::read_key(j, "reinit", c.reinit);
  detail::read_key(j, "compute_fwt", c.compute_fwt);
  if (j.contains("fwt_range")) {
    std::string r;
    detail::read_key(j, "fwt_range", r);
    if (r == "first_t_minus_1")
      c.fwt_range = FwtRange::first_t_minus_1;
    else if (r == "all_tasks")
      c.fwt_range = FwtRange::all_tasks;
    else
      throw Error("config: fwt_range must be \"first_t_minus_1\" or \"all_tasks\"");
  }
  if (j.contains("data_seed")) {
    std::uint64_t s = 0;
    detail::read_key(j, "data_seed", s);
    c.data_seed = s;
  }
  if (j.contains("data")) c.data = parse_data_source(j.at("data"));
  detail::read_key(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

inline constexpr const char* kOutputDirEnv = "IBM_OUTPUT_DIR";

/// config.output_dir if set, else $IBM_OUTPUT_DIR, else "runs".
inline std::string resolve_output_dir(const RunConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "runs";
}

inline std::vector<TaskDataset> load_tasks(const RunConfig& c) {
  std::vector<TaskDataset> tasks;
  if (const auto* g = std::get_if<SplitGaussianSpec>(&c.data))
    tasks = generate_split_gaussians(c.effective_data_seed(), *g);
  else {
    const auto& s = std::get<IdxSource>(c.data);
    tasks = ingest_idx(s.images, s.labels, s.split);
  }
  for (const auto& t : tasks) t.validate();
  return tasks;
}

}  // namespace ibm
