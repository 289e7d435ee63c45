// Command-line front end: train, eval, baseline, report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ibm/ibm.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigCopy = "config.json";

std::string run_dir_for(const ibm::RunConfig& c, const std::string& config_path, ibm::Strategy s) {
  const std::string stem = fs::path(config_path).stem().string();
  return (fs::path(ibm::resolve_output_dir(c)) /
          (stem + "-" + ibm::strategy_name(s) + "-s" + std::to_string(c.seed)))
      .string();
}

void print_progress(const ibm::RunReport& r, int task) {
  const auto t = static_cast<std::size_t>(task);
  std::fprintf(stderr, "task %d: acc %.4f, loss %.4f, %.1fs\n", task, r.accuracy.at(t, t), r.final_epoch_loss.back(),
               r.wall_clock_seconds.back());
}

void print_summary(const ibm::RunReport& r) {
  std::printf("strategy = %s\nseed = %llu\ntasks = %zu\nacc = %s\nbwt = %s\nfwt = %s\n", r.strategy.c_str(),
              static_cast<unsigned long long>(r.seed), r.tasks(), ibm::format_opt(r.acc).c_str(),
              ibm::format_opt(r.bwt).c_str(), ibm::format_opt(r.fwt).c_str());
}

int do_run(const std::string& config_path, ibm::Strategy s) {
  const ibm::RunConfig c = ibm::load_config(config_path);
  const auto tasks = ibm::load_tasks(c);
  const ibm::RunResult r = ibm::run_strategy(c, tasks, s, print_progress);
  const std::string dir = run_dir_for(c, config_path, s);
  ibm::write_run_dir(dir, r);
  fs::copy_file(config_path, fs::path(dir) / kConfigCopy, fs::copy_options::overwrite_existing);
  for (const auto& w : r.report.capacity_warnings)
    std::fprintf(stderr, "warning: after task %d layer %zu has %zu of %zu weights free\n", w.after_task, w.layer, w.free,
                 w.total);
  print_summary(r.report);
  std::printf("run_dir = %s\n", dir.c_str());
  return 0;
}

int do_eval(const std::string& pool_path, const std::string& data_spec) {
  const ibm::LoadedPool lp = ibm::load_pool(pool_path);
  const ibm::RunConfig c = ibm::load_config(data_spec);
  const auto tasks = ibm::load_tasks(c);
  const auto accs = ibm::evaluate_pool(lp, tasks);
  std::printf("task,accuracy\n");
  for (std::size_t i = 0; i < accs.size(); ++i)
    std::printf("%d,%s\n", lp.pool[i].task_id, ibm::format_real(accs[i]).c_str());
  return 0;
}

int do_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const auto bytes = ibm::read_file_bytes((dir / ibm::kReportFile).string());
  const ibm::RunReport r = ibm::parse_report(std::string(bytes.begin(), bytes.end()));
  print_summary(r);
  std::printf("\n[accuracy_matrix]\n");
  for (std::size_t i = 0; i < r.tasks(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) std::printf("%s%.4f", j ? "," : "", r.accuracy.at(i, j));
    std::printf("\n");
  }
  if (!r.mask_counts.empty()) {
    std::printf("\n[selected_weights]\ntask,selected,total\n");
    for (std::size_t t = 0; t < r.mask_counts.size(); ++t) {
      std::size_t sel = 0, tot = 0;
      for (const auto& m : r.mask_counts[t]) {
        sel += m.selected;
        tot += m.total;
      }
      std::printf("%zu,%zu,%zu\n", t, sel, tot);
    }
  }
  // Re-evaluate the stored pool when the run directory has everything needed.
  if (fs::exists(dir / ibm::kPoolFile) && fs::exists(dir / kConfigCopy)) {
    const auto accs =
        ibm::evaluate_pool(ibm::load_pool((dir / ibm::kPoolFile).string()), ibm::load_tasks(ibm::load_config((dir / kConfigCopy).string())));
    bool same = accs.size() == r.tasks();
    for (std::size_t i = 0; same && i < accs.size(); ++i) same = accs[i] == r.accuracy.at(r.tasks() - 1, i);
    std::printf("\npool_check = %s\n", same ? "match" : "MISMATCH");
    if (!same) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential sub-network continual learning on dense networks"};
  app.require_subcommand(1);

  std::string config_path, pool_path, data_spec, run_dir, strategy = "finetune";
  auto* train = app.add_subcommand("train", "Train the task sequence described by a config file");
  train->add_option("config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a saved memory pool on a task sequence");
  eval->add_option("pool", pool_path, "Memory-pool file")->required()->check(CLI::ExistingFile);
  eval->add_option("data-spec", data_spec, "Config file whose seed and data section give the tasks")
      ->required()
      ->check(CLI::ExistingFile);

  auto* baseline = app.add_subcommand("baseline", "Train a baseline without masks");
  baseline->add_option("config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  baseline->add_option("--strategy", strategy, "finetune or multitask")
      ->check(CLI::IsMember({"finetune", "multitask"}));

  auto* report = app.add_subcommand("report", "Print the metrics stored in a run directory");
  report->add_option("run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return do_run(config_path, ibm::Strategy::ibm);
    if (*baseline) return do_run(config_path, ibm::parse_strategy(strategy));
    if (*eval) return do_eval(pool_path, data_spec);
    if (*report) return do_report(run_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
