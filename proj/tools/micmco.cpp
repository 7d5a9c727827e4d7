#include "micmco/audit.hpp"
#include "micmco/config.hpp"
#include "micmco/metrics.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;
using namespace micmco;

namespace {

// Large activation buffers churn every step; keep them on the heap instead of
// round-tripping through mmap.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct RunOutputs {
  MetricsRow final_row;
  bool has_row = false;
};

RunOutputs run_training(const ConfigFile& cf, const std::string& out_dir,
                        std::ostream* log) {
  fs::create_directories(out_dir);
  TrainConfig tc = cf.train_config();
  TrainResult res = train(tc, log);
  write_metrics_csv(out_dir + "/metrics.csv", res.history);
  write_checkpoint_file(res.params, out_dir + "/checkpoint.bin");
  if (res.aborted) throw TrainError(res.abort_reason);
  RunOutputs out;
  if (!res.history.empty()) {
    out.final_row = res.history.back();
    out.has_row = true;
  }
  return out;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed) {
  ConfigFile cf = ConfigFile::parse_file(config_path);
  if (seed) cf.seed = *seed;
  try {
    RunOutputs out = run_training(cf, cf.out_dir, &std::cerr);
    if (out.has_row)
      std::cout << "final nll=" << format_double(out.final_row.nll)
                << " avg_kl=" << format_double(out.final_row.avg_kl) << "\n";
    std::cout << "wrote " << cf.out_dir << "/metrics.csv and " << cf.out_dir
              << "/checkpoint.bin\n";
  } catch (const TrainError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, int eval_k, uint64_t seed,
             const std::string& config_path) {
  ModelParams params;
  if (!config_path.empty()) {
    ConfigFile cf = ConfigFile::parse_file(config_path);
    LatentSpec expect = cf.latent_spec();
    params = load_checkpoint_file(checkpoint, &expect);
  } else {
    params = load_checkpoint_file(checkpoint);
  }
  std::vector<int> xs = eval_symbols(Dataset::synthetic(params.vocab), 1024);
  RngStream rng(seed, derive_stream_id(seed, 40));
  EvalResult er = eval_nll_mi(params, xs, eval_k, rng);
  std::cout << "nll=" << format_double(er.nll) << " avg_kl=" << format_double(er.avg_kl)
            << "\n";
  return 0;
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

std::vector<GridAxis> parse_grid(const std::string& spec) {
  std::vector<GridAxis> axes;
  if (spec.empty()) throw ConfigError("empty grid spec");
  size_t pos = 0;
  while (pos <= spec.size()) {
    size_t semi = spec.find(';', pos);
    std::string part = spec.substr(pos, semi == std::string::npos ? std::string::npos
                                                                  : semi - pos);
    pos = semi == std::string::npos ? spec.size() + 1 : semi + 1;
    if (part.empty()) continue;
    size_t eq = part.find('=');
    if (eq == std::string::npos)
      throw ConfigError("grid axis '" + part + "' is not key=v1,v2,...");
    GridAxis ax;
    ax.key = part.substr(0, eq);
    if (ax.key != "lambda" && ax.key != "alpha" && ax.key != "lr" && ax.key != "seed")
      throw ConfigError("grid key must be one of lambda, alpha, lr, seed; got '" +
                        ax.key + "'");
    std::string vals = part.substr(eq + 1);
    size_t vpos = 0;
    while (vpos <= vals.size()) {
      size_t comma = vals.find(',', vpos);
      std::string v = vals.substr(vpos, comma == std::string::npos ? std::string::npos
                                                                   : comma - vpos);
      vpos = comma == std::string::npos ? vals.size() + 1 : comma + 1;
      if (v.empty()) throw ConfigError("empty value in grid axis '" + ax.key + "'");
      ax.values.push_back(v);
    }
    if (ax.values.empty()) throw ConfigError("grid axis '" + ax.key + "' has no values");
    axes.push_back(std::move(ax));
  }
  if (axes.empty()) throw ConfigError("grid spec has no axes");
  return axes;
}

struct SweepRun {
  ConfigFile cf;
  std::string run_id;
  std::string label;
};

int cmd_sweep(const std::string& config_path, const std::string& grid_spec, int jobs) {
  ConfigFile base = ConfigFile::parse_file(config_path);
  std::vector<GridAxis> axes = parse_grid(grid_spec);

  std::vector<SweepRun> runs;
  std::vector<size_t> idx(axes.size(), 0);
  bool grid_has_seed = false;
  for (const auto& ax : axes) grid_has_seed |= ax.key == "seed";
  for (;;) {
    ConfigFile cf = base;
    std::string label;
    for (size_t i = 0; i < axes.size(); ++i) {
      const std::string& v = axes[i].values[idx[i]];
      label += "_" + axes[i].key + "=" + v;
      if (axes[i].key == "lambda") {
        cf.lambda = std::stod(v);
        cf.lambda_was_set = true;
      } else if (axes[i].key == "alpha") {
        cf.alpha = std::stod(v);
        cf.alpha_was_set = true;
      } else if (axes[i].key == "lr") {
        cf.lr = std::stod(v);
      } else if (axes[i].key == "seed") {
        cf.seed = std::stoull(v);
      }
    }
    size_t gi = runs.size();
    if (!grid_has_seed) cf.seed = base.seed + gi;  // derived, replayable
    char id[16];
    std::snprintf(id, sizeof(id), "run_%03zu", gi);
    runs.push_back({std::move(cf), id, id + label});

    size_t pos = axes.size();
    while (pos > 0 && ++idx[pos - 1] == axes[pos - 1].values.size()) idx[--pos] = 0;
    if (pos == 0) break;
  }

  fs::create_directories(base.out_dir);
  std::vector<std::optional<MetricsRow>> final_rows(runs.size());
  std::vector<std::string> failures(runs.size());
  std::atomic<size_t> next{0};
  std::mutex io_mutex;

  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      const SweepRun& r = runs[i];
      {
        std::lock_guard<std::mutex> lk(io_mutex);
        std::cerr << "[" << r.run_id << "] start " << r.label << "\n";
      }
      try {
        if (r.cf.objective == ObjectiveKind::power && r.cf.lambda_was_set)
          throw ConfigError("lambda may not be set with objective=power");
        r.cf.objective_config().validate(r.cf.latent_kind);
        RunOutputs out = run_training(r.cf, base.out_dir + "/" + r.run_id, nullptr);
        if (out.has_row) final_rows[i] = out.final_row;
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
      {
        std::lock_guard<std::mutex> lk(io_mutex);
        std::cerr << "[" << r.run_id << "] "
                  << (failures[i].empty() ? "done" : "FAILED: " + failures[i]) << "\n";
      }
    }
  };
  jobs = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::ofstream combined(base.out_dir + "/sweep.csv", std::ios::binary);
  combined << "run_id," << kMetricsCsvHeader << '\n';
  for (size_t i = 0; i < runs.size(); ++i)
    if (final_rows[i]) combined << runs[i].run_id << ',' << metrics_row_csv(*final_rows[i]) << '\n';
  combined.close();

  int failed = 0;
  std::ofstream flog(base.out_dir + "/failures.txt", std::ios::binary);
  for (size_t i = 0; i < runs.size(); ++i) {
    if (failures[i].empty()) continue;
    ++failed;
    flog << runs[i].run_id << " " << runs[i].label << ": " << failures[i] << '\n';
  }
  std::cout << "sweep complete: " << (runs.size() - size_t(failed)) << "/" << runs.size()
            << " runs succeeded; combined CSV at " << base.out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_pareto(const std::string& input, const std::string& output) {
  std::vector<ParetoPoint> pts = read_points_csv(input);
  std::vector<ParetoPoint> frontier = pareto_frontier(pts);
  write_frontier_csv(output, frontier);
  std::cout << "frontier: " << frontier.size() << " of " << pts.size() << " points\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"mutual-information constrained Monte-Carlo objectives"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, grid, input, output;
  std::optional<uint64_t> seed_opt;
  uint64_t seed = 0;
  int eval_k = 100;
  int jobs = 1;

  CLI::App* train_cmd = app.add_subcommand("train", "train one model from a config");
  train_cmd->add_option("--config", config_path, "key=value config file")->required();
  train_cmd->add_option("--seed", seed_opt, "override the config seed");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--eval-k", eval_k, "IWAE sample count");
  eval_cmd->add_option("--seed", seed, "evaluation sampling seed");
  std::string eval_config;
  eval_cmd->add_option("--config", eval_config, "config to cross-check the latent spec");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid of training runs");
  sweep_cmd->add_option("--config", config_path, "base config file")->required();
  sweep_cmd->add_option("--grid", grid, "e.g. lambda=0.2,0.4;seed=0,1")->required();
  sweep_cmd->add_option("--jobs", jobs, "parallel runs");

  CLI::App* pareto_cmd = app.add_subcommand("pareto", "extract the frontier from a CSV");
  pareto_cmd->add_option("--input", input, "CSV with nll and avg_kl columns")->required();
  pareto_cmd->add_option("--output", output, "frontier CSV")->required();

  CLI::App* audit_cmd = app.add_subcommand("audit", "run the oracle property suite");
  audit_cmd->add_option("--seed", seed, "random model seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, seed_opt);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, eval_k, seed, eval_config);
    if (sweep_cmd->parsed()) return cmd_sweep(config_path, grid, jobs);
    if (pareto_cmd->parsed()) return cmd_pareto(input, output);
    if (audit_cmd->parsed()) {
      AuditResult r = run_audit(seed == 0 ? 42 : seed, std::cout);
      std::cout << r.passed << " passed, " << r.failed << " failed\n";
      return r.ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
