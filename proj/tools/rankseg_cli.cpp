// Command-line driver: dataset generation, training, evaluation, ablation
// sweeps, and report inspection.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rankseg/run_config.hpp"
#include "rankseg/runner.hpp"

namespace {

using namespace rankseg;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
  cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set kappa=32")
      ->take_all();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "seed override");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  auto cfg = config_from_file(opts.config_path, opts.overrides);
  if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
  return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
}

int cmd_gen_data(const CommonOpts& opts) {
  auto cfg = resolve_config(opts);
  cfg.synth = true;
  cfg.synth_cfg.validate();
  std::filesystem::create_directories(opts.out_dir);
  auto [train, test] = load_or_generate_datasets(cfg);
  write_dataset(train, opts.out_dir + "/train.rseg");
  write_dataset(test, opts.out_dir + "/test.rseg");
  write_text_file(opts.out_dir + "/dist.csv", distribution_report_csv(train));
  std::printf("wrote %s/train.rseg (%zu samples), %s/test.rseg (%zu samples), %s/dist.csv\n",
              opts.out_dir.c_str(), train.samples.size(), opts.out_dir.c_str(),
              test.samples.size(), opts.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  auto cfg = resolve_config(opts);
  auto report = run_train(cfg, opts.out_dir);
  std::printf("miou %.4f", report.miou);
  if (report.has_map) std::printf("  map %.4f", report.map);
  if (report.has_spearman) std::printf("  spearman(rank,1/tau) %.3f", report.spearman_rank_inv_tau);
  std::printf("  (%.1fs)\n", report.wallclock_sec);
  std::printf("outputs in %s: report.json, model.bin%s\n", opts.out_dir.c_str(),
              report.inv_tau.empty() ? "" : ", tau.csv");
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_path, const std::string& data_path,
             const std::string& selection, int64_t kappa, double threshold) {
  auto how = eval_selection_from_name(selection);
  SelectionMode sel_mode = SelectionMode::kFixedK;
  if (threshold > 0) sel_mode = SelectionMode::kDynamicThreshold;
  auto metrics = run_eval_file(model_path, data_path, how, kappa, sel_mode,
                               threshold > 0 ? threshold : 0.05);
  std::filesystem::create_directories(opts.out_dir);
  nlohmann::json j;
  j["miou"] = metrics.miou;
  j["per_class_iou"] = metrics.per_class_iou;
  if (metrics.has_map) j["map"] = metrics.map; else j["map"] = nullptr;
  j["selection"] = selection;
  j["kappa"] = kappa;
  write_text_file(opts.out_dir + "/eval.json", j.dump(2) + "\n");
  std::printf("miou %.4f", metrics.miou);
  if (metrics.has_map) std::printf("  map %.4f", metrics.map);
  std::printf("\n");
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis, const std::string& values_csv,
              const std::string& seeds_csv, int workers) {
  auto cfg = resolve_config(opts);
  std::vector<std::string> values;
  std::stringstream vs(values_csv);
  std::string item;
  while (std::getline(vs, item, ',')) {
    if (!item.empty()) values.push_back(item);
  }
  std::vector<uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  std::filesystem::create_directories(opts.out_dir);
  auto rows = ablation_sweep(cfg, axis, values, seeds, workers, opts.out_dir);
  write_text_file(opts.out_dir + "/sweep.csv", sweep_rows_csv(rows));
  for (const auto& r : rows) {
    if (r.seed != "mean") continue;
    std::printf("%s=%s  mean miou %s\n", axis.c_str(), r.value.c_str(),
                r.has_miou ? std::to_string(r.miou).c_str() : "n/a");
  }
  std::printf("wrote %s/sweep.csv\n", opts.out_dir.c_str());
  return 0;
}

int cmd_dump_tau(const CommonOpts& opts, const std::string& model_path) {
  auto rows = dump_tau_file(model_path);
  std::filesystem::create_directories(opts.out_dir);
  auto csv = tau_rows_csv(rows);
  write_text_file(opts.out_dir + "/tau.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_report(const CommonOpts& opts, const std::string& run_path, const std::string& data_path) {
  if (!run_path.empty()) {
    std::ifstream f(run_path);
    if (!f) throw std::runtime_error("cannot open report: " + run_path);
    std::stringstream ss;
    ss << f.rdbuf();
    auto report = RunReport::from_json(nlohmann::json::parse(ss.str()));
    std::printf("mode %s  scheme %s  oracle %s  seed %llu\n",
                report.config_echo.at("mode").get<std::string>().c_str(),
                report.config_echo.at("scheme").get<std::string>().c_str(),
                report.config_echo.at("oracle").get<std::string>().c_str(),
                static_cast<unsigned long long>(report.seed));
    std::printf("epochs %zu  final miou %.4f", report.epochs.size(), report.miou);
    if (report.has_map) std::printf("  map %.4f", report.map);
    std::printf("\n");
    if (report.has_spearman) {
      std::printf("spearman(rank,1/tau) %.3f\n", report.spearman_rank_inv_tau);
    }
    std::printf("params total %lld (backbone %lld, ml %lld, seg %lld)  flops/img %lld\n",
                static_cast<long long>(report.params_total),
                static_cast<long long>(report.params_backbone),
                static_cast<long long>(report.params_ml_head),
                static_cast<long long>(report.params_seg_head),
                report.flops_per_image_forward);
    if (!report.epochs.empty()) {
      std::printf("final losses: seg %.4f  ml %.4f  total %.4f\n", report.epochs.back().seg_loss,
                  report.epochs.back().ml_loss, report.epochs.back().total_loss);
    }
    return 0;
  }
  if (!data_path.empty()) {
    auto dataset = read_dataset(data_path);
    std::filesystem::create_directories(opts.out_dir);
    auto csv = distribution_report_csv(dataset);
    write_text_file(opts.out_dir + "/dist.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
  }
  throw ConfigError("report needs --run <report.json> or --data <dataset.rseg>");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-adaptive selected-label segmentation experiments"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, sweep_opts, tau_opts, report_opts;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset pair and its class-count curve");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train a model and write report.json, model.bin, tau.csv");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset file");
  add_common(eval, eval_opts);
  std::string eval_model, eval_data, eval_selection = "predicted";
  int64_t eval_kappa = 16;
  double eval_threshold = 0.0;
  eval->add_option("--model", eval_model, "model.bin path")->required();
  eval->add_option("--data", eval_data, "dataset .rseg path")->required();
  eval->add_option("--selection", eval_selection, "predicted | oracle_gt | complete");
  eval->add_option("--kappa", eval_kappa, "evaluation kappa for predicted selection");
  eval->add_option("--threshold", eval_threshold, "dynamic selection threshold (enables dynamic mode)");

  auto* sweep = app.add_subcommand("sweep", "cross-product ablation sweep over one axis");
  add_common(sweep, sweep_opts);
  std::string sweep_axis, sweep_values, sweep_seeds = "0";
  int sweep_workers = 1;
  sweep->add_option("--axis", sweep_axis, "kappa | ml_weight | head_variant | tau_mode")->required();
  sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");
  sweep->add_option("--workers", sweep_workers, "concurrent runs");

  auto* tau = app.add_subcommand("dump-tau", "dump learned inverse temperatures from a model");
  add_common(tau, tau_opts);
  std::string tau_model;
  tau->add_option("--model", tau_model, "model.bin path")->required();

  auto* report = app.add_subcommand("report", "summarize a report.json or emit dist.csv for a dataset");
  add_common(report, report_opts);
  std::string report_run, report_data;
  report->add_option("--run", report_run, "report.json path");
  report->add_option("--data", report_data, "dataset .rseg path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) {
      return cmd_eval(eval_opts, eval_model, eval_data, eval_selection, eval_kappa, eval_threshold);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_opts, sweep_axis, sweep_values, sweep_seeds, sweep_workers);
    }
    if (tau->parsed()) return cmd_dump_tau(tau_opts, tau_model);
    if (report->parsed()) return cmd_report(report_opts, report_run, report_data);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
