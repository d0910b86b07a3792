#include "rankseg/run_config.hpp"

#include <fstream>
#include <sstream>

namespace rankseg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + value + "'");
}

}  // namespace

void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "mode") cfg.mode = mode_from_name(value);
    else if (key == "scheme") cfg.scheme = scheme_from_name(value);
    else if (key == "oracle") cfg.oracle = oracle_from_name(value);
    else if (key == "kappa") cfg.kappa = parse_int(key, value);
    else if (key == "kappa_eval") cfg.kappa_eval = parse_int(key, value);
    else if (key == "selection") {
      if (value == "fixed") cfg.selection_mode = SelectionMode::kFixedK;
      else if (value == "dynamic") cfg.selection_mode = SelectionMode::kDynamicThreshold;
      else throw ConfigError("config key selection: expected fixed or dynamic, got '" + value + "'");
    } else if (key == "dynamic_threshold") cfg.dynamic_threshold = parse_double(key, value);
    else if (key == "head_variant") cfg.head_variant = head_variant_from_name(value);
    else if (key == "seg_loss_weight") cfg.loss_weights.seg_weight = parse_double(key, value);
    else if (key == "ml_loss_weight") cfg.loss_weights.ml_weight = parse_double(key, value);
    else if (key == "gamma_pos") cfg.asym.gamma_pos = parse_double(key, value);
    else if (key == "gamma_neg") cfg.asym.gamma_neg = parse_double(key, value);
    else if (key == "clip_margin") cfg.asym.clip_margin = parse_double(key, value);
    else if (key == "base_lr") cfg.base_lr = parse_double(key, value);
    else if (key == "ml_head_lr_multiplier") cfg.ml_head_lr_multiplier = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = parse_int(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
    else if (key == "eval_every") cfg.eval_every = parse_int(key, value);
    else if (key == "precision") cfg.precision = precision_from_name(value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "train_data") cfg.train_data = value;
    else if (key == "test_data") cfg.test_data = value;
    else if (key == "synth") cfg.synth = parse_bool(key, value);
    else if (key == "synth_classes") cfg.synth_cfg.num_classes = parse_int(key, value);
    else if (key == "synth_height") cfg.synth_cfg.height = parse_int(key, value);
    else if (key == "synth_width") cfg.synth_cfg.width = parse_int(key, value);
    else if (key == "synth_channels") cfg.synth_cfg.channels = parse_int(key, value);
    else if (key == "synth_max_classes") cfg.synth_cfg.max_classes_per_image = parse_int(key, value);
    else if (key == "synth_zipf") cfg.synth_cfg.class_frequency_skew = parse_double(key, value);
    else if (key == "synth_noise") cfg.synth_cfg.noise_sigma = parse_double(key, value);
    else if (key == "synth_group_size") cfg.synth_cfg.signature_group_size = parse_int(key, value);
    else if (key == "synth_contrast") cfg.synth_cfg.signature_contrast = parse_double(key, value);
    else if (key == "synth_blobs_min") cfg.synth_cfg.blobs_min = parse_int(key, value);
    else if (key == "synth_blobs_max") cfg.synth_cfg.blobs_max = parse_int(key, value);
    else if (key == "synth_seed") cfg.synth_cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "synth_train_n") cfg.synth_train_n = parse_int(key, value);
    else if (key == "synth_test_n") cfg.synth_test_n = parse_int(key, value);
    else if (key == "patch") cfg.patch = parse_int(key, value);
    else if (key == "dim") cfg.dim = parse_int(key, value);
    else if (key == "depth") cfg.depth = parse_int(key, value);
    else if (key == "heads") cfg.heads = parse_int(key, value);
    else if (key == "mlp_ratio") cfg.mlp_ratio = parse_int(key, value);
    else if (key == "downsample_factor") cfg.downsample_factor = parse_int(key, value);
    else if (key == "score_original_embeddings") cfg.score_original_embeddings = parse_bool(key, value);
    else throw ConfigError("unknown config key: " + key);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key " + key + ": " + e.what());
  }
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig config_from_file(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = parse_config_text(ss.str());
  }
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    apply_config_kv(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return cfg;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = mode_name(mode);
  j["scheme"] = scheme_name(scheme);
  j["oracle"] = oracle_name(oracle);
  j["kappa"] = kappa;
  j["kappa_eval"] = kappa_eval;
  j["selection"] = selection_mode == SelectionMode::kDynamicThreshold ? "dynamic" : "fixed";
  j["dynamic_threshold"] = dynamic_threshold;
  j["head_variant"] = head_variant_name(head_variant);
  j["seg_loss_weight"] = loss_weights.seg_weight;
  j["ml_loss_weight"] = loss_weights.ml_weight;
  j["gamma_pos"] = asym.gamma_pos;
  j["gamma_neg"] = asym.gamma_neg;
  j["clip_margin"] = asym.clip_margin;
  j["base_lr"] = base_lr;
  j["ml_head_lr_multiplier"] = ml_head_lr_multiplier;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["eval_every"] = eval_every;
  j["precision"] = precision_name(precision);
  j["seed"] = seed;
  j["train_data"] = train_data;
  j["test_data"] = test_data;
  j["synth"] = synth;
  j["synth_classes"] = synth_cfg.num_classes;
  j["synth_height"] = synth_cfg.height;
  j["synth_width"] = synth_cfg.width;
  j["synth_channels"] = synth_cfg.channels;
  j["synth_max_classes"] = synth_cfg.max_classes_per_image;
  j["synth_zipf"] = synth_cfg.class_frequency_skew;
  j["synth_noise"] = synth_cfg.noise_sigma;
  j["synth_group_size"] = synth_cfg.signature_group_size;
  j["synth_contrast"] = synth_cfg.signature_contrast;
  j["synth_blobs_min"] = synth_cfg.blobs_min;
  j["synth_blobs_max"] = synth_cfg.blobs_max;
  j["synth_seed"] = synth_cfg.seed;
  j["synth_train_n"] = synth_train_n;
  j["synth_test_n"] = synth_test_n;
  j["patch"] = patch;
  j["dim"] = dim;
  j["depth"] = depth;
  j["heads"] = heads;
  j["mlp_ratio"] = mlp_ratio;
  j["downsample_factor"] = downsample_factor;
  j["score_original_embeddings"] = score_original_embeddings;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.mode = mode_from_name(j.at("mode"));
  cfg.scheme = scheme_from_name(j.at("scheme"));
  cfg.oracle = oracle_from_name(j.at("oracle"));
  cfg.kappa = j.at("kappa");
  cfg.kappa_eval = j.at("kappa_eval");
  cfg.selection_mode = j.at("selection") == "dynamic" ? SelectionMode::kDynamicThreshold
                                                      : SelectionMode::kFixedK;
  cfg.dynamic_threshold = j.at("dynamic_threshold");
  cfg.head_variant = head_variant_from_name(j.at("head_variant"));
  cfg.loss_weights.seg_weight = j.at("seg_loss_weight");
  cfg.loss_weights.ml_weight = j.at("ml_loss_weight");
  cfg.asym.gamma_pos = j.at("gamma_pos");
  cfg.asym.gamma_neg = j.at("gamma_neg");
  cfg.asym.clip_margin = j.at("clip_margin");
  cfg.base_lr = j.at("base_lr");
  cfg.ml_head_lr_multiplier = j.at("ml_head_lr_multiplier");
  cfg.epochs = j.at("epochs");
  cfg.batch_size = j.at("batch_size");
  cfg.eval_every = j.at("eval_every");
  cfg.precision = precision_from_name(j.at("precision"));
  cfg.seed = j.at("seed");
  cfg.train_data = j.at("train_data");
  cfg.test_data = j.at("test_data");
  cfg.synth = j.at("synth");
  cfg.synth_cfg.num_classes = j.at("synth_classes");
  cfg.synth_cfg.height = j.at("synth_height");
  cfg.synth_cfg.width = j.at("synth_width");
  cfg.synth_cfg.channels = j.at("synth_channels");
  cfg.synth_cfg.max_classes_per_image = j.at("synth_max_classes");
  cfg.synth_cfg.class_frequency_skew = j.at("synth_zipf");
  cfg.synth_cfg.noise_sigma = j.at("synth_noise");
  cfg.synth_cfg.signature_group_size = j.at("synth_group_size");
  cfg.synth_cfg.signature_contrast = j.at("synth_contrast");
  cfg.synth_cfg.blobs_min = j.at("synth_blobs_min");
  cfg.synth_cfg.blobs_max = j.at("synth_blobs_max");
  cfg.synth_cfg.seed = j.at("synth_seed");
  cfg.synth_train_n = j.at("synth_train_n");
  cfg.synth_test_n = j.at("synth_test_n");
  cfg.patch = j.at("patch");
  cfg.dim = j.at("dim");
  cfg.depth = j.at("depth");
  cfg.heads = j.at("heads");
  cfg.mlp_ratio = j.at("mlp_ratio");
  cfg.downsample_factor = j.at("downsample_factor");
  cfg.score_original_embeddings = j.at("score_original_embeddings");
  return cfg;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["config"] = config_echo;
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    eps.push_back({{"seg_loss", e.seg_loss}, {"ml_loss", e.ml_loss}, {"total_loss", e.total_loss}});
  }
  j["epochs"] = eps;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& c : eval_curve) {
    nlohmann::json cj{{"epoch", c.epoch}, {"miou", c.miou}};
    if (c.has_map) cj["map"] = c.map; else cj["map"] = nullptr;
    curve.push_back(cj);
  }
  j["eval_curve"] = curve;
  j["miou"] = miou;
  j["per_class_iou"] = per_class_iou;
  if (has_map) j["map"] = map; else j["map"] = nullptr;
  if (!inv_tau.empty()) {
    j["inv_tau"] = inv_tau;
    j["shared_tau"] = shared_tau;
  } else {
    j["inv_tau"] = nullptr;
    j["shared_tau"] = nullptr;
  }
  if (has_spearman) j["spearman_rank_inv_tau"] = spearman_rank_inv_tau;
  else j["spearman_rank_inv_tau"] = nullptr;
  j["ml_head_evals"] = ml_head_evals;
  j["params"] = {{"total", params_total},
                 {"backbone", params_backbone},
                 {"ml_head", params_ml_head},
                 {"seg_head", params_seg_head}};
  j["flops_per_image_forward"] = flops_per_image_forward;
  j["wallclock_sec"] = wallclock_sec;
  j["seed"] = seed;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  r.config_echo = j.at("config");
  for (const auto& e : j.at("epochs")) {
    r.epochs.push_back({e.at("seg_loss"), e.at("ml_loss"), e.at("total_loss")});
  }
  for (const auto& c : j.at("eval_curve")) {
    EvalCurvePoint p2;
    p2.epoch = c.at("epoch");
    p2.miou = c.at("miou");
    p2.has_map = !c.at("map").is_null();
    if (p2.has_map) p2.map = c.at("map");
    r.eval_curve.push_back(p2);
  }
  r.miou = j.at("miou");
  r.per_class_iou = j.at("per_class_iou").get<std::vector<double>>();
  r.has_map = !j.at("map").is_null();
  if (r.has_map) r.map = j.at("map");
  if (!j.at("inv_tau").is_null()) {
    r.inv_tau = j.at("inv_tau").get<std::vector<double>>();
    r.shared_tau = j.at("shared_tau");
  }
  r.has_spearman = !j.at("spearman_rank_inv_tau").is_null();
  if (r.has_spearman) r.spearman_rank_inv_tau = j.at("spearman_rank_inv_tau");
  r.ml_head_evals = j.at("ml_head_evals");
  r.params_total = j.at("params").at("total");
  r.params_backbone = j.at("params").at("backbone");
  r.params_ml_head = j.at("params").at("ml_head");
  r.params_seg_head = j.at("params").at("seg_head");
  r.flops_per_image_forward = j.at("flops_per_image_forward");
  r.wallclock_sec = j.at("wallclock_sec");
  r.seed = j.at("seed");
  return r;
}

std::string tau_rows_csv(const std::vector<TauRow>& rows) {
  std::ostringstream out;
  out << "rank,inv_tau\n";
  out.precision(17);
  for (const auto& row : rows) out << row.rank << "," << row.inv_tau << "\n";
  return out.str();
}

std::vector<TauRow> parse_tau_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "rank,inv_tau") {
    throw std::runtime_error("tau csv: bad header");
  }
  std::vector<TauRow> rows;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("tau csv: bad row: " + line);
    rows.push_back({line.substr(0, comma), std::stod(line.substr(comma + 1))});
  }
  return rows;
}

}  // namespace rankseg
