#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "spatialkd/dataset.hpp"
#include "spatialkd/losses.hpp"
#include "spatialkd/metrics.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/trainer.hpp"

namespace skd {

// The single run configuration file: sections dataset/model/train/loss/eval,
// every field defaulted, unknown keys rejected. Shape-determining fields live
// in the dataset section only; finalize() propagates them into the model and
// loss configs so they cannot drift apart.
struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  metrics::EvalConfig eval;
  std::string raw_text;  // verbatim file contents for echoing into run dirs

  void finalize(int vocab_size = 0) {
    model.n_categories = static_cast<int>(dataset.scene.catalog.size());
    model.view_h = dataset.grid_h;
    model.view_w = dataset.grid_w;
    model.n_views = dataset.n_views;
    model.depth_bins = dataset.teacher.depth_bins;
    model.spat_h = dataset.teacher.spat_h;
    model.spat_w = dataset.teacher.spat_w;
    model.spat_c = dataset.teacher.spat_c;
    model.max_objects = dataset.scene.max_objects;
    loss.depth_bins = dataset.teacher.depth_bins;
    loss.d_max = dataset.teacher.d_max;
    if (vocab_size > 0) model.vocab_size = vocab_size;
  }

  nlohmann::json to_json() const {
    nlohmann::json mj = {{"n_layers", model.n_layers},
                         {"hidden_size", model.hidden_size},
                         {"n_heads", model.n_heads},
                         {"mlp_dim", model.mlp_dim},
                         {"k", model.k},
                         {"max_seq_len", model.max_seq_len},
                         {"scratchpad_after_question", model.scratchpad_after_question}};
    nlohmann::json lj = {{"tau", loss.tau},
                         {"lambda_cross", loss.lambda_cross},
                         {"focal_gamma", loss.focal_gamma},
                         {"focal_alpha", loss.focal_alpha},
                         {"tau_squared_scale", loss.tau_squared_scale},
                         {"cross_view_cosine", loss.cross_view_cosine},
                         {"hard_label_mix", loss.hard_label_mix},
                         {"static_weights", loss.static_weights}};
    return {{"dataset", dataset.to_json()},
            {"model", mj},
            {"train", train.to_json()},
            {"loss", lj},
            {"eval", eval.to_json()}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    cfgdetail::require_known_keys(j, {"dataset", "model", "train", "loss", "eval"}, "run config");
    RunConfig c;
    using cfgdetail::get_or;
    if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
    if (j.contains("model")) {
      const auto& mj = j.at("model");
      cfgdetail::require_known_keys(mj,
                                    {"n_layers", "hidden_size", "n_heads", "mlp_dim", "k",
                                     "max_seq_len", "scratchpad_after_question"},
                                    "model");
      c.model.n_layers = get_or<int>(mj, "n_layers", c.model.n_layers);
      c.model.hidden_size = get_or<int>(mj, "hidden_size", c.model.hidden_size);
      c.model.n_heads = get_or<int>(mj, "n_heads", c.model.n_heads);
      c.model.mlp_dim = get_or<int>(mj, "mlp_dim", c.model.mlp_dim);
      c.model.k = get_or<int>(mj, "k", c.model.k);
      c.model.max_seq_len = get_or<int>(mj, "max_seq_len", c.model.max_seq_len);
      c.model.scratchpad_after_question =
          get_or<bool>(mj, "scratchpad_after_question", c.model.scratchpad_after_question);
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("loss")) {
      const auto& lj = j.at("loss");
      cfgdetail::require_known_keys(lj,
                                    {"tau", "lambda_cross", "focal_gamma", "focal_alpha",
                                     "tau_squared_scale", "cross_view_cosine", "hard_label_mix",
                                     "static_weights"},
                                    "loss");
      c.loss.tau = get_or<double>(lj, "tau", c.loss.tau);
      c.loss.lambda_cross = get_or<double>(lj, "lambda_cross", c.loss.lambda_cross);
      c.loss.focal_gamma = get_or<double>(lj, "focal_gamma", c.loss.focal_gamma);
      c.loss.focal_alpha = get_or<double>(lj, "focal_alpha", c.loss.focal_alpha);
      c.loss.tau_squared_scale = get_or<bool>(lj, "tau_squared_scale", c.loss.tau_squared_scale);
      c.loss.cross_view_cosine =
          get_or<bool>(lj, "cross_view_cosine", c.loss.cross_view_cosine);
      c.loss.hard_label_mix = get_or<double>(lj, "hard_label_mix", c.loss.hard_label_mix);
      c.loss.static_weights = get_or<std::map<std::string, double>>(lj, "static_weights",
                                                                    c.loss.static_weights);
    }
    if (j.contains("eval")) c.eval = metrics::EvalConfig::from_json(j.at("eval"));
    c.finalize();
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "config: cannot open '", path, "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    RunConfig c = from_json(nlohmann::json::parse(text));
    c.raw_text = text;
    return c;
  }

  static RunConfig defaults() {
    RunConfig c;
    c.finalize();
    c.raw_text = c.to_json().dump(2) + "\n";
    return c;
  }
};

// Shape-compatibility check between a loaded checkpoint and a dataset; errors
// name both sides.
inline void check_checkpoint_data_compat(const ModelConfig& mc, const Dataset& ds) {
  check(mc.vocab_size == ds.vocab.size(), "checkpoint/data mismatch: checkpoint vocab_size ",
        mc.vocab_size, " vs dataset vocabulary ", ds.vocab.size());
  check(mc.n_views == ds.cfg.n_views, "checkpoint/data mismatch: checkpoint n_views ",
        mc.n_views, " vs dataset n_views ", ds.cfg.n_views);
  check(mc.view_h == ds.cfg.grid_h && mc.view_w == ds.cfg.grid_w,
        "checkpoint/data mismatch: checkpoint grid ", mc.view_h, "x", mc.view_w,
        " vs dataset grid ", ds.cfg.grid_h, "x", ds.cfg.grid_w);
  check(mc.depth_bins == ds.cfg.teacher.depth_bins,
        "checkpoint/data mismatch: checkpoint depth_bins ", mc.depth_bins, " vs dataset ",
        ds.cfg.teacher.depth_bins);
  check(mc.n_categories == static_cast<int>(ds.cfg.scene.catalog.size()),
        "checkpoint/data mismatch: checkpoint n_categories ", mc.n_categories,
        " vs dataset catalog ", ds.cfg.scene.catalog.size());
  check(mc.spat_h == ds.cfg.teacher.spat_h && mc.spat_w == ds.cfg.teacher.spat_w &&
            mc.spat_c == ds.cfg.teacher.spat_c,
        "checkpoint/data mismatch: checkpoint spatial shape (", mc.spat_h, ",", mc.spat_w, ",",
        mc.spat_c, ") vs dataset (", ds.cfg.teacher.spat_h, ",", ds.cfg.teacher.spat_w, ",",
        ds.cfg.teacher.spat_c, ")");
}

}  // namespace skd
