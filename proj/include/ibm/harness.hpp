#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ibm/config.hpp"
#include "ibm/feature_decomposer.hpp"
#include "ibm/mask_manager.hpp"
#include "ibm/network.hpp"
#include "ibm/pool_io.hpp"
#include "ibm/report.hpp"

namespace ibm {

enum class Strategy { ibm, finetune, multitask };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::ibm: return "ibm";
    case Strategy::finetune: return "finetune";
    case Strategy::multitask: return "multitask";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "ibm") return Strategy::ibm;
  if (s == "finetune") return Strategy::finetune;
  if (s == "multitask") return Strategy::multitask;
  throw Error("unknown strategy '" + s + "' (expected ibm, finetune or multitask)");
}

/// Report plus the trained state. For multitask, `net` holds the last task's
/// network only and `pool` is empty.
struct RunResult {
  RunReport report;
  Network net;
  MemoryPool pool;
};

/// Optional observer for progress output; called after each task.
using TaskCallback = std::function<void(const RunReport&, int task)>;

namespace detail {

// Independent random streams of a run, all derived from the config seed so
// that every strategy starts from the same initialization.
struct RunStreams {
  SeededRng init, heads, reinit, shuffle, noise;

  explicit RunStreams(std::uint64_t seed)
      : init(0), heads(0), reinit(0), shuffle(0), noise(0) {
    SeededRng root(seed);
    init = root.split();
    heads = root.split();
    reinit = root.split();
    shuffle = root.split();
    noise = root.split();
  }
};

inline std::vector<std::size_t> layer_widths(const RunConfig& c, std::size_t input_width) {
  std::vector<std::size_t> w{input_width};
  w.insert(w.end(), c.hidden_widths.begin(), c.hidden_widths.end());
  return w;
}

inline Matrix probe_batch(const TaskDataset& ds, std::size_t rows) {
  std::vector<std::size_t> idx(std::min(rows, ds.train_x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  return gather_rows(ds.train_x, idx);
}

struct TaskTrainingOutcome {
  double final_epoch_loss = 0.0;
  std::vector<GammaRecord> gamma;
};

// Trains the network on one task. When `schedule` is non-null the per-layer
// KL multipliers follow it and are refreshed every `interval` epochs.
inline TaskTrainingOutcome train_task(Network& net, const TaskDataset& ds, const RunConfig& c,
                                      const CumulativeMask* m_all, CompressionSchedule* schedule,
                                      SeededRng& shuffle_rng, SeededRng& noise_rng) {
  TaskTrainingOutcome out;
  AdamState adam;
  adam.lr = c.learning_rate;
  LossOptions opts{c.effective_ce_scale()};
  const Matrix probe = schedule ? probe_batch(ds, c.probe_rows) : Matrix();
  if (schedule) apply_schedule(net, *schedule);

  const std::size_t n = ds.train_x.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= c.epochs_per_task; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += c.batch_size) {
      const std::size_t stop = std::min(n, start + c.batch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix x = gather_rows(ds.train_x, idx);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = ds.train_y[idx[i]];
      loss_sum += train_step(net, adam, x, y, ds.task_id, m_all, noise_rng, opts);
      ++batches;
    }
    out.final_epoch_loss = loss_sum / static_cast<double>(batches);
    if (schedule) {
      for (const auto& e : update_schedule(net, *schedule, probe, epoch))
        out.gamma.push_back({ds.task_id, e.epoch, e.layer, e.gamma});
      apply_schedule(net, *schedule);
    }
  }
  return out;
}

inline void set_gamma(Network& net, double g) {
  for (auto& l : net.layers) l.gamma = g;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void check_tasks(const std::vector<TaskDataset>& tasks) {
  if (tasks.empty()) throw Error("run: no tasks");
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].task_id != static_cast<int>(t)) throw Error("run: task ids must be 0..T-1 in order");
    if (tasks[t].train_x.cols() != tasks.front().train_x.cols()) throw Error("run: tasks disagree on input width");
    tasks[t].validate();
  }
}

}  // namespace detail

/// Baselines without masks or information-bottleneck pressure (gamma = 0):
/// finetune trains one shared backbone through the whole sequence;
/// multitask trains a fresh network for every task.
inline RunResult run_baseline(const RunConfig& c, const std::vector<TaskDataset>& tasks, Strategy strategy,
                              const TaskCallback& on_task = {}) {
  if (strategy == Strategy::ibm) throw Error("run_baseline: use run_sequence for the ibm strategy");
  c.validate();
  detail::check_tasks(tasks);
  const auto widths = detail::layer_widths(c, tasks.front().train_x.cols());
  detail::RunStreams rs(c.seed);

  RunResult res;
  RunReport& rep = res.report;
  rep.strategy = strategy_name(strategy);
  rep.seed = c.seed;
  rep.layers = c.hidden_widths.size();
  rep.fwt_range = c.fwt_range;
  rep.accuracy = AccuracyMatrix(tasks.size());

  std::vector<double> own_accuracy;  // multitask: accuracy of each task's own network
  Network shared = make_network(widths, 0.0, rs.init);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const TaskDataset& ds = tasks[t];
    Network fresh;
    Network* net = &shared;
    if (strategy == Strategy::multitask) {
      if (t > 0) {
        SeededRng task_init(c.seed ^ (0xA24BAED4963EE407ULL * (t + 1)));
        fresh = make_network(widths, 0.0, task_init);
        net = &fresh;
      }
    }
    add_head(*net, ds.task_id, ds.class_count, rs.heads);
    detail::set_gamma(*net, 0.0);
    const auto outcome = detail::train_task(*net, ds, c, nullptr, nullptr, rs.shuffle, rs.noise);
    rep.final_epoch_loss.push_back(outcome.final_epoch_loss);

    if (strategy == Strategy::multitask) {
      own_accuracy.push_back(accuracy(predict_unmasked(*net, ds.test_x, ds.task_id), ds.test_y));
      for (std::size_t j = 0; j <= t; ++j) rep.accuracy.set(t, j, own_accuracy[j]);
      if (t > 0) shared = std::move(fresh);
    } else {
      for (std::size_t j = 0; j <= t; ++j)
        rep.accuracy.set(t, j, accuracy(predict_unmasked(shared, tasks[j].test_x, tasks[j].task_id), tasks[j].test_y));
    }
    rep.wall_clock_seconds.push_back(detail::seconds_since(t0));
    if (on_task) on_task(rep, static_cast<int>(t));
  }
  if (strategy == Strategy::multitask) rep.baseline_mt = own_accuracy;
  rep.recompute_metrics();
  res.net = std::move(shared);
  return res;
}

/// The sequential sub-network protocol. For each task in order:
///  1. OR the pool's masks into the frozen-weight mask,
///  2. re-draw va-params outside it (from the second task on, if enabled),
///  3. train with frozen weights and the feature-decomposing schedule,
///  4. extract the task's masks and snapshot its va-params and head,
///  5. re-evaluate every task seen so far through its own artifact.
inline RunResult run_sequence(const RunConfig& c, const std::vector<TaskDataset>& tasks,
                              const TaskCallback& on_task = {}) {
  c.validate();
  detail::check_tasks(tasks);
  const auto widths = detail::layer_widths(c, tasks.front().train_x.cols());
  detail::RunStreams rs(c.seed);
  const std::size_t L = c.hidden_widths.size();

  RunResult res;
  RunReport& rep = res.report;
  rep.strategy = strategy_name(Strategy::ibm);
  rep.seed = c.seed;
  rep.layers = L;
  rep.fwt_range = c.fwt_range;
  rep.accuracy = AccuracyMatrix(tasks.size());

  Network& net = res.net;
  net = make_network(widths, kInitialGammaFraction * c.kl_scale, rs.init);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const TaskDataset& ds = tasks[t];
    const CumulativeMask m_all = combine_masks(res.pool, net);
    if (t > 0) {
      require_trainable(net, m_all, ds.task_id);
      if (c.reinit)
        for (std::size_t l = 0; l < L; ++l) reinit_va_params(net.layers[l], m_all.layers[l], rs.reinit);
    }
    add_head(net, ds.task_id, ds.class_count, rs.heads);

    CompressionSchedule schedule = make_schedule(L, c.delta, c.fd_interval, c.kl_scale);
    auto outcome = detail::train_task(net, ds, c, &m_all, &schedule, rs.shuffle, rs.noise);
    rep.final_epoch_loss.push_back(outcome.final_epoch_loss);
    rep.gamma_history.insert(rep.gamma_history.end(), outcome.gamma.begin(), outcome.gamma.end());

    const TaskArtifact& art = finalize_task(net, ds.task_id, res.pool, c.alpha_threshold);
    rep.mask_counts.push_back(mask_counts(art));
    for (const auto& w : capacity_warnings(combine_masks(res.pool, net), ds.task_id))
      rep.capacity_warnings.push_back(w);

    for (std::size_t j = 0; j <= t; ++j)
      rep.accuracy.set(t, j, accuracy(predict(net, tasks[j].test_x, tasks[j].task_id, res.pool[j]), tasks[j].test_y));
    rep.wall_clock_seconds.push_back(detail::seconds_since(t0));
    if (on_task) on_task(rep, static_cast<int>(t));
  }
  if (c.compute_fwt) {
    const RunResult mt = run_baseline(c, tasks, Strategy::multitask);
    rep.baseline_mt = mt.report.baseline_mt;
  }
  rep.recompute_metrics();
  return res;
}

inline RunResult run_strategy(const RunConfig& c, const std::vector<TaskDataset>& tasks, Strategy s,
                              const TaskCallback& on_task = {}) {
  if (s == Strategy::ibm) return run_sequence(c, tasks, on_task);
  RunResult r = run_baseline(c, tasks, s, on_task);
  if (s == Strategy::finetune && c.compute_fwt) {
    r.report.baseline_mt = run_baseline(c, tasks, Strategy::multitask).report.baseline_mt;
    r.report.recompute_metrics();
  }
  return r;
}

inline constexpr const char* kReportFile = "report.txt";
inline constexpr const char* kPoolFile = "pool.ibm";
inline constexpr const char* kTimingFile = "timing.csv";

/// Writes report.txt, timing.csv and (for ibm runs) pool.ibm into `dir`.
inline void write_run_dir(const std::string& dir, const RunResult& r) {
  std::filesystem::create_directories(dir);
  const std::string text = render_report(r.report);
  write_file_bytes((std::filesystem::path(dir) / kReportFile).string(), std::vector<std::uint8_t>(text.begin(), text.end()));
  std::ofstream timing(std::filesystem::path(dir) / kTimingFile, std::ios::trunc);
  timing << "task,wall_clock_seconds\n";
  for (std::size_t t = 0; t < r.report.wall_clock_seconds.size(); ++t)
    timing << t << "," << format_real(r.report.wall_clock_seconds[t]) << "\n";
  if (!r.pool.empty()) save_pool((std::filesystem::path(dir) / kPoolFile).string(), r.net, r.pool);
}

/// Per-task accuracy of every artifact in a loaded pool on matching tasks.
inline std::vector<double> evaluate_pool(const LoadedPool& lp, const std::vector<TaskDataset>& tasks) {
  std::vector<double> out;
  for (const auto& art : lp.pool) {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskDataset& d) { return d.task_id == art.task_id; });
    if (it == tasks.end()) throw Error("eval: no data for task " + std::to_string(art.task_id));
    if (it->class_count != art.head.classes())
      throw Error("eval: task " + std::to_string(art.task_id) + " class count differs from its head");
    out.push_back(accuracy(predict(lp.net, it->test_x, art.task_id, art), it->test_y));
  }
  return out;
}

}  // namespace ibm
