// Python bindings for the main operations: selection, the rank-adaptive
// softmax, losses, metrics, synthetic data, and full training runs.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

#include "rankseg/losses.hpp"
#include "rankseg/metrics.hpp"
#include "rankseg/run_config.hpp"
#include "rankseg/runner.hpp"

namespace py = pybind11;
using namespace rankseg;

namespace {

Tensor64 tensor_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("expected at least one row");
  int64_t n = static_cast<int64_t>(rows.size());
  int64_t d = static_cast<int64_t>(rows[0].size());
  std::vector<double> data;
  data.reserve(static_cast<size_t>(n * d));
  for (const auto& r : rows) {
    if (static_cast<int64_t>(r.size()) != d) throw std::invalid_argument("ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor64::from_data({n, d}, std::move(data));
}

std::vector<std::vector<double>> rows_from_tensor(const Tensor64& t) {
  std::vector<std::vector<double>> rows(static_cast<size_t>(t.dim(0)));
  int64_t d = t.dim(1);
  for (int64_t i = 0; i < t.dim(0); ++i) {
    rows[static_cast<size_t>(i)].assign(t.data().begin() + i * d, t.data().begin() + (i + 1) * d);
  }
  return rows;
}

py::dict selection_to_dict(const SelectionResult& sel) {
  py::dict out;
  out["indices"] = sel.indices;
  out["scores"] = sel.scores;
  out["mode"] = selection_mode_name(sel.mode);
  return out;
}

}  // namespace

PYBIND11_MODULE(_rankseg, m) {
  m.doc() = "rank-adaptive selected-label segmentation core";

  m.def("sigmoid", [](double x) { return rankseg::sigmoid(Tensor64::scalar(x)).item(); });

  m.def("softmax", [](const std::vector<double>& row) {
    auto y = softmax_last_dim(Tensor64::from_data({static_cast<int64_t>(row.size())}, row));
    return y.data();
  });

  m.def(
      "top_k_select",
      [](const std::vector<double>& probs, int64_t kappa, const std::string& mode,
         double threshold, const std::vector<int>& gt) {
        SelectionMode sm;
        if (mode == "fixed_k") sm = SelectionMode::kFixedK;
        else if (mode == "dynamic_threshold") sm = SelectionMode::kDynamicThreshold;
        else if (mode == "oracle_gt") sm = SelectionMode::kOracleGt;
        else throw std::invalid_argument("mode must be fixed_k, dynamic_threshold, or oracle_gt");
        std::vector<uint8_t> gt8(gt.begin(), gt.end());
        return selection_to_dict(top_k_select(
            probs, kappa, sm, threshold > 0 ? std::optional<double>(threshold) : std::nullopt,
            gt.empty() ? nullptr : &gt8));
      },
      py::arg("probs"), py::arg("kappa") = 0, py::arg("mode") = "fixed_k",
      py::arg("threshold") = 0.0, py::arg("gt") = std::vector<int>{});

  m.def("build_multilabel_target",
        [](const std::vector<int64_t>& seg, int64_t num_classes, int64_t ignore_index) {
          auto t = build_multilabel_target(seg, num_classes, ignore_index);
          return std::vector<int>(t.begin(), t.end());
        });

  m.def("rank_softmax",
        [](const std::vector<std::vector<double>>& raw_logits, const std::vector<double>& inv_tau) {
          auto logits = tensor_from_rows(raw_logits);
          int64_t kp = logits.dim(1);
          if (static_cast<int64_t>(inv_tau.size()) != kp) {
            throw std::invalid_argument("inv_tau length must match logit columns");
          }
          ParameterRegistryT<double> reg;
          auto temps = RankTemperaturesT<double>::create(reg, "temps", kp, false);
          for (int64_t r = 0; r < kp; ++r) {
            temps.log_inverse_tau.data()[static_cast<size_t>(r)] = std::log(inv_tau[static_cast<size_t>(r)]);
          }
          return rows_from_tensor(rank_scaled_softmax(logits, temps, kp));
        });

  m.def(
      "asymmetric_loss",
      [](const std::vector<double>& probs, const std::vector<int>& target, double gamma_pos,
         double gamma_neg, double clip_margin) {
        AsymmetricLossParams params{gamma_pos, gamma_neg, clip_margin};
        std::vector<uint8_t> t8(target.begin(), target.end());
        return asymmetric_loss(Tensor64::from_data({static_cast<int64_t>(probs.size())}, probs),
                               t8, params)
            .item();
      },
      py::arg("probs"), py::arg("target"), py::arg("gamma_pos") = 0.0, py::arg("gamma_neg") = 4.0,
      py::arg("clip_margin") = 0.05);

  m.def("selected_ce",
        [](const std::vector<std::vector<double>>& z, const std::vector<int64_t>& seg_tokens,
           const std::vector<int64_t>& indices, int64_t ignore_index) {
          SelectionResult sel;
          sel.indices = indices;
          sel.scores.assign(indices.size(), 0.0);
          auto res = selected_ce(tensor_from_rows(z), seg_tokens, sel, ignore_index);
          return py::make_tuple(res.loss.item(), res.included);
        });

  m.def("miou", [](const std::vector<int64_t>& pred, const std::vector<int64_t>& gt,
                   int64_t num_classes, int64_t ignore_index) {
    auto res = rankseg::miou(pred, gt, num_classes, ignore_index);
    return py::make_tuple(res.miou, res.per_class_iou);
  });

  m.def("mean_average_precision",
        [](const std::vector<double>& scores, const std::vector<int>& targets, int64_t n, int64_t k) {
          return mean_average_precision(scores, targets, n, k);
        });

  m.def("spearman", &spearman_correlation);

  m.def(
      "generate_dataset",
      [](const std::string& path, int64_t n, int64_t num_classes, int64_t height, int64_t width,
         int64_t channels, int64_t max_classes, double zipf, double noise, uint64_t seed,
         uint64_t stream_offset) {
        SyntheticConfig cfg;
        cfg.num_classes = num_classes;
        cfg.height = height;
        cfg.width = width;
        cfg.channels = channels;
        cfg.max_classes_per_image = max_classes;
        cfg.class_frequency_skew = zipf;
        cfg.noise_sigma = noise;
        cfg.seed = seed;
        write_dataset(generate_dataset(cfg, n, stream_offset), path);
      },
      py::arg("path"), py::arg("n"), py::arg("num_classes") = 64, py::arg("height") = 32,
      py::arg("width") = 32, py::arg("channels") = 8, py::arg("max_classes") = 6,
      py::arg("zipf") = 1.0, py::arg("noise") = 0.25, py::arg("seed") = 0,
      py::arg("stream_offset") = 0);

  m.def("dataset_stats", [](const std::string& path) {
    auto d = read_dataset(path);
    py::dict out;
    out["num_samples"] = d.samples.size();
    out["num_classes"] = d.num_classes;
    out["channels"] = d.channels;
    out["height"] = d.height;
    out["width"] = d.width;
    return out;
  });

  m.def("distribution_report", [](const std::string& path) {
    return distribution_report(read_dataset(path));
  });

  m.def(
      "train",
      [](const std::string& config_text, const std::string& out_dir) {
        auto cfg = parse_config_text(config_text);
        return run_train(cfg, out_dir).to_json().dump();
      },
      py::arg("config_text"), py::arg("out_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& model_path, const std::string& data_path, const std::string& selection,
         int64_t kappa) {
        auto metrics = run_eval_file(model_path, data_path, eval_selection_from_name(selection), kappa);
        py::dict out;
        out["miou"] = metrics.miou;
        out["per_class_iou"] = metrics.per_class_iou;
        if (metrics.has_map) out["map"] = metrics.map;
        return out;
      },
      py::arg("model_path"), py::arg("data_path"), py::arg("selection") = "predicted",
      py::arg("kappa") = 16);

  m.def("dump_tau", [](const std::string& model_path) {
    py::list out;
    for (const auto& row : dump_tau_file(model_path)) {
      out.append(py::make_tuple(row.rank, row.inv_tau));
    }
    return out;
  });
}
