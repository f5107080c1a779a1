#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatialkd/dataset.hpp"
#include "spatialkd/metrics.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/trainer.hpp"

namespace skd {

struct AblationRow {
  std::string name;
  int k = 0;
  std::string loss_mode;
  std::vector<std::string> disabled;
  double best_val_loss = 0.0;
  double rouge1_f = 0.0;
  double spatial_acc = 0.0;
  double depth_rmse = 0.0;

  nlohmann::json to_json() const {
    return {{"name", name},
            {"k", k},
            {"loss_mode", loss_mode},
            {"disabled", disabled},
            {"best_val_loss", best_val_loss},
            {"rouge_1_f", rouge1_f},
            {"spatial_acc", spatial_acc},
            {"depth_rmse", depth_rmse}};
  }
};

struct AblationReport {
  std::vector<AblationRow> loss_rows;  // loss-component and weighting grid
  std::vector<AblationRow> k_rows;     // thinking-token sweep
};

namespace ablation_detail {

inline AblationRow run_one(const Dataset& ds, ModelConfig mc, TrainConfig tc, LossConfig lc,
                           const metrics::EvalConfig& ec, const std::string& name) {
  mc.validate();
  Model model = Model::init(mc, tc.seed);
  Trainer trainer(model, ds, tc, lc);
  RunRecord rec = trainer.train();
  metrics::EvalConfig row_ec = ec;
  row_ec.latency_runs = 1;  // rows need metric columns, not a timing benchmark
  metrics::MetricsReport rep =
      metrics::evaluate_model(model, ds, trainer.val_indices(), row_ec);
  AblationRow row;
  row.name = name;
  row.k = mc.k;
  row.loss_mode = tc.loss_mode;
  row.disabled = tc.disabled_losses;
  row.best_val_loss = rec.best_val_loss;
  row.rouge1_f = rep.rouge1.f1;
  row.spatial_acc = rep.spatial.overall;
  row.depth_rmse = rep.depth.rmse;
  return row;
}

}  // namespace ablation_detail

// Loss-component/weighting grid: baseline without the scratchpad, the
// scratchpad model, five single-loss removals, and static weighting.
inline std::vector<AblationRow> ablate_losses(const Dataset& ds, const ModelConfig& base_mc,
                                              const TrainConfig& base_tc, const LossConfig& lc,
                                              const metrics::EvalConfig& ec) {
  std::vector<AblationRow> rows;
  auto with = [&](const std::string& name, auto mutate) {
    ModelConfig mc = base_mc;
    TrainConfig tc = base_tc;
    mutate(mc, tc);
    rows.push_back(ablation_detail::run_one(ds, mc, tc, lc, ec, name));
  };
  with("baseline", [](ModelConfig& mc, TrainConfig&) { mc.k = 0; });
  with("hidden_cot", [](ModelConfig&, TrainConfig&) {});
  with("no_detection", [](ModelConfig&, TrainConfig& tc) {
    tc.disabled_losses = {"detection"};
  });
  with("no_depth", [](ModelConfig&, TrainConfig& tc) {
    tc.disabled_losses = {"depth_reg", "depth_ce", "depth_kl"};
  });
  with("no_spatial", [](ModelConfig&, TrainConfig& tc) { tc.disabled_losses = {"spatial"}; });
  with("no_multiview", [](ModelConfig&, TrainConfig& tc) {
    tc.disabled_losses = {"multiview"};
  });
  with("no_feature", [](ModelConfig&, TrainConfig& tc) { tc.disabled_losses = {"feature"}; });
  with("static_weights", [](ModelConfig&, TrainConfig& tc) { tc.loss_mode = "static"; });
  return rows;
}

inline std::vector<AblationRow> ablate_k(const Dataset& ds, const ModelConfig& base_mc,
                                         const TrainConfig& base_tc, const LossConfig& lc,
                                         const metrics::EvalConfig& ec,
                                         const std::vector<int>& ks = {2, 4, 8, 16}) {
  std::vector<AblationRow> rows;
  for (int k : ks) {
    ModelConfig mc = base_mc;
    mc.k = k;
    rows.push_back(
        ablation_detail::run_one(ds, mc, base_tc, lc, ec, "k" + std::to_string(k)));
  }
  return rows;
}

inline void write_ablation_artifacts(const AblationReport& rep, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto dump = [&](const std::vector<AblationRow>& rows, const std::string& stem,
                  const std::string& title) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(r.to_json());
    std::ofstream jf(fs::path(dir) / (stem + ".json"));
    jf << arr.dump(2) << "\n";

    std::ofstream tf(fs::path(dir) / (stem + ".txt"));
    tf << title << "\n";
    tf << std::left << std::setw(16) << "config" << std::setw(4) << "K" << std::setw(14)
       << "best_val" << std::setw(10) << "rouge1" << std::setw(13) << "spatial_acc"
       << std::setw(12) << "depth_rmse" << "\n";
    for (const auto& r : rows) {
      tf << std::left << std::setw(16) << r.name << std::setw(4) << r.k << std::fixed
         << std::setprecision(4) << std::setw(14) << r.best_val_loss << std::setw(10)
         << r.rouge1_f << std::setw(13) << r.spatial_acc << std::setw(12) << r.depth_rmse
         << "\n";
    }
  };
  if (!rep.loss_rows.empty())
    dump(rep.loss_rows, "ablation_losses", "Loss-component and weighting ablation");
  if (!rep.k_rows.empty()) dump(rep.k_rows, "ablation_k", "Thinking-token count ablation");
}

}  // namespace skd
