#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rankseg/experiment.hpp"
#include "rankseg/synth_data.hpp"

namespace rankseg {

// Precision-dispatched drivers shared by the CLI, the python module, and the
// acceptance suite. out_dir may be empty to skip writing files.

std::pair<Dataset, Dataset> load_or_generate_datasets(const ExperimentConfig& cfg);

RunReport run_train(const ExperimentConfig& cfg, const std::string& out_dir);

Precision bundle_precision(const std::string& model_path);

EvalMetrics run_eval_file(const std::string& model_path, const std::string& data_path,
                          EvalSelection how, int64_t kappa_eval,
                          SelectionMode selection_mode = SelectionMode::kFixedK,
                          double dynamic_threshold = 0.05);

std::vector<TauRow> dump_tau_file(const std::string& model_path);

struct SweepRow {
  std::string axis;
  std::string value;
  std::string seed;  // "0", "1", ... or "mean"
  bool ok = false;
  bool has_miou = false;
  double miou = 0.0;
  bool has_map = false;
  double map = 0.0;
  bool has_spearman = false;
  double spearman = 0.0;
  bool has_loss = false;
  double final_total_loss = 0.0;
  std::string error;

  bool operator==(const SweepRow&) const = default;
};

// Cross-product of axis values and seeds. Per-run failures become error rows
// without aborting the sweep. workers > 1 runs trials concurrently, each with
// isolated streams and output directories.
std::vector<SweepRow> ablation_sweep(const ExperimentConfig& base, const std::string& axis,
                                     const std::vector<std::string>& values,
                                     const std::vector<uint64_t>& seeds, int workers = 1,
                                     const std::string& out_dir = "");

std::string sweep_rows_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

}  // namespace rankseg
