#include "rankseg/runner.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "rankseg/run_config.hpp"

namespace rankseg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

template <typename T>
RunReport run_train_typed(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                          const std::string& out_dir) {
  auto outcome = train_model<T>(cfg, train, test);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/report.json", outcome.report.to_json().dump(2) + "\n");
    save_bundle(outcome.bundle, out_dir + "/model.bin");
    if (outcome.bundle.seg_model.temps.has_value()) {
      write_text(out_dir + "/tau.csv", tau_rows_csv(dump_tau(outcome.bundle.seg_model)));
    }
  }
  return outcome.report;
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::pair<Dataset, Dataset> load_or_generate_datasets(const ExperimentConfig& cfg) {
  if (!cfg.train_data.empty() || !cfg.test_data.empty()) {
    if (cfg.train_data.empty()) throw ConfigError("missing dataset path: train_data");
    if (cfg.test_data.empty()) throw ConfigError("missing dataset path: test_data");
    return {read_dataset(cfg.train_data), read_dataset(cfg.test_data)};
  }
  if (!cfg.synth) {
    throw ConfigError("missing dataset path: train_data (or set synth = 1)");
  }
  SyntheticConfig synth = cfg.synth_cfg;
  auto train = generate_dataset(synth, cfg.synth_train_n, 0);
  auto test = generate_dataset(synth, cfg.synth_test_n, 1ull << 32);
  return {std::move(train), std::move(test)};
}

RunReport run_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  auto [train, test] = load_or_generate_datasets(cfg);
  if (cfg.precision == Precision::kF64) {
    return run_train_typed<double>(cfg, train, test, out_dir);
  }
  return run_train_typed<float>(cfg, train, test, out_dir);
}

Precision bundle_precision(const std::string& model_path) {
  std::ifstream f(model_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model: " + model_path);
  char magic[5];
  f.read(magic, 5);
  uint8_t len_bytes[4];
  f.read(reinterpret_cast<char*>(len_bytes), 4);
  if (!f || std::string(magic, 5) != "RSMD1") {
    throw std::runtime_error("bad model magic: " + model_path);
  }
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(len_bytes[i]) << (8 * i);
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (!f) throw std::runtime_error("model file truncated: " + model_path);
  auto j = nlohmann::json::parse(header);
  if (j.contains("precision")) return precision_from_name(j.at("precision"));
  return Precision::kF32;
}

namespace {

template <typename T>
EvalMetrics run_eval_typed(const std::string& model_path, const std::string& data_path,
                           EvalSelection how, int64_t kappa_eval, SelectionMode selection_mode,
                           double dynamic_threshold) {
  auto bundle = load_bundle<T>(model_path);
  auto data = read_dataset(data_path);
  if (data.num_classes != bundle.seg_model.hyper.num_classes) {
    throw std::runtime_error("dataset class count does not match the model");
  }
  return evaluate_model(bundle, data, how, kappa_eval, selection_mode, dynamic_threshold);
}

}  // namespace

EvalMetrics run_eval_file(const std::string& model_path, const std::string& data_path,
                          EvalSelection how, int64_t kappa_eval, SelectionMode selection_mode,
                          double dynamic_threshold) {
  if (bundle_precision(model_path) == Precision::kF64) {
    return run_eval_typed<double>(model_path, data_path, how, kappa_eval, selection_mode,
                                  dynamic_threshold);
  }
  return run_eval_typed<float>(model_path, data_path, how, kappa_eval, selection_mode,
                               dynamic_threshold);
}

std::vector<TauRow> dump_tau_file(const std::string& model_path) {
  if (bundle_precision(model_path) == Precision::kF64) {
    return dump_tau(load_bundle<double>(model_path).seg_model);
  }
  return dump_tau(load_bundle<float>(model_path).seg_model);
}

namespace {

ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis,
                            const std::string& value) {
  ExperimentConfig cfg = base;
  if (axis == "kappa") {
    apply_config_kv(cfg, "kappa", value);
  } else if (axis == "ml_weight") {
    apply_config_kv(cfg, "ml_loss_weight", value);
  } else if (axis == "head_variant") {
    apply_config_kv(cfg, "head_variant", value);
  } else if (axis == "tau_mode") {
    if (!base.uses_selection()) {
      throw ConfigError("tau_mode axis needs a base mode with label selection (mt_ls or mt_ls_ra)");
    }
    if (value == "shared") cfg.mode = Mode::kMtLs;
    else if (value == "rank_adaptive") cfg.mode = Mode::kMtLsRa;
    else throw ConfigError("tau_mode value must be shared or rank_adaptive, got '" + value + "'");
  } else {
    throw ConfigError("unknown sweep axis: " + axis +
                      " (expected kappa, ml_weight, head_variant, or tau_mode)");
  }
  return cfg;
}

std::string sanitize_csv(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(c == ',' || c == '\n' || c == '\r' ? ';' : c);
  return out;
}

}  // namespace

std::vector<SweepRow> ablation_sweep(const ExperimentConfig& base, const std::string& axis,
                                     const std::vector<std::string>& values,
                                     const std::vector<uint64_t>& seeds, int workers,
                                     const std::string& out_dir) {
  if (values.empty() || seeds.empty()) throw ConfigError("sweep needs at least one value and one seed");
  struct Job {
    std::string value;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : values)
    for (uint64_t s : seeds) jobs.push_back({v, s});

  std::vector<SweepRow> rows(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      SweepRow row;
      row.axis = axis;
      row.value = jobs[i].value;
      row.seed = std::to_string(jobs[i].seed);
      try {
        ExperimentConfig cfg = apply_axis(base, axis, jobs[i].value);
        cfg.seed = jobs[i].seed;
        std::string run_dir;
        if (!out_dir.empty()) {
          run_dir = out_dir + "/run_" + axis + "_" + jobs[i].value + "_s" + row.seed;
        }
        auto report = run_train(cfg, run_dir);
        row.ok = true;
        row.has_miou = true;
        row.miou = report.miou;
        row.has_map = report.has_map;
        row.map = report.map;
        row.has_spearman = report.has_spearman;
        row.spearman = report.spearman_rank_inv_tau;
        if (!report.epochs.empty()) {
          row.has_loss = true;
          row.final_total_loss = report.epochs.back().total_loss;
        }
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      rows[i] = std::move(row);
    }
  };

  int nthreads = std::max(1, workers);
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // per-value means over successful runs
  std::vector<SweepRow> out = rows;
  for (const auto& v : values) {
    SweepRow mean;
    mean.axis = axis;
    mean.value = v;
    mean.seed = "mean";
    int64_t n_miou = 0, n_map = 0, n_sp = 0, n_loss = 0;
    for (const auto& r : rows) {
      if (r.value != v || !r.ok) continue;
      mean.ok = true;
      if (r.has_miou) {
        mean.miou += r.miou;
        ++n_miou;
      }
      if (r.has_map) {
        mean.map += r.map;
        ++n_map;
      }
      if (r.has_spearman) {
        mean.spearman += r.spearman;
        ++n_sp;
      }
      if (r.has_loss) {
        mean.final_total_loss += r.final_total_loss;
        ++n_loss;
      }
    }
    if (n_miou > 0) {
      mean.has_miou = true;
      mean.miou /= static_cast<double>(n_miou);
    }
    if (n_map > 0) {
      mean.has_map = true;
      mean.map /= static_cast<double>(n_map);
    }
    if (n_sp > 0) {
      mean.has_spearman = true;
      mean.spearman /= static_cast<double>(n_sp);
    }
    if (n_loss > 0) {
      mean.has_loss = true;
      mean.final_total_loss /= static_cast<double>(n_loss);
    }
    if (!mean.ok) mean.error = "all runs failed";
    out.push_back(std::move(mean));
  }
  return out;
}

std::string sweep_rows_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "axis,value,seed,status,miou,map,spearman_inv_tau,final_total_loss\n";
  for (const auto& r : rows) {
    out << r.axis << "," << r.value << "," << r.seed << ",";
    out << (r.ok ? "ok" : "error:" + sanitize_csv(r.error)) << ",";
    out << (r.has_miou ? fmt_double(r.miou) : "") << ",";
    out << (r.has_map ? fmt_double(r.map) : "") << ",";
    out << (r.has_spearman ? fmt_double(r.spearman) : "") << ",";
    out << (r.has_loss ? fmt_double(r.final_total_loss) : "") << "\n";
  }
  return out.str();
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      trim(line) != "axis,value,seed,status,miou,map,spearman_inv_tau,final_total_loss") {
    throw std::runtime_error("sweep csv: bad header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    while (fields.size() < 8) fields.push_back("");
    if (fields.size() != 8) throw std::runtime_error("sweep csv: bad row: " + line);
    SweepRow r;
    r.axis = fields[0];
    r.value = fields[1];
    r.seed = fields[2];
    if (fields[3] == "ok") {
      r.ok = true;
    } else if (fields[3].rfind("error:", 0) == 0) {
      r.ok = false;
      r.error = fields[3].substr(6);
    } else {
      throw std::runtime_error("sweep csv: bad status: " + fields[3]);
    }
    if (!fields[4].empty()) {
      r.has_miou = true;
      r.miou = std::stod(fields[4]);
    }
    if (!fields[5].empty()) {
      r.has_map = true;
      r.map = std::stod(fields[5]);
    }
    if (!fields[6].empty()) {
      r.has_spearman = true;
      r.spearman = std::stod(fields[6]);
    }
    if (!fields[7].empty()) {
      r.has_loss = true;
      r.final_total_loss = std::stod(fields[7]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace rankseg
