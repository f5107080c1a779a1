#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatialkd/common.hpp"
#include "spatialkd/container.hpp"
#include "spatialkd/dataset.hpp"
#include "spatialkd/losses.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/optimizer.hpp"
#include "spatialkd/rng.hpp"

namespace skd {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 5;
  int batch_size = 8;
  int warmup_steps = -1;  // -1 => 5% of total steps
  uint64_t seed = 0;
  std::string loss_mode = "uncertainty";  // "uncertainty" | "static"
  std::vector<std::string> disabled_losses;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double val_fraction = 0.2;
  int patience = 10;  // early stopping; configured but rarely triggered
  double init_log_sigma = 0.0;

  std::set<std::string> enabled_tasks() const {
    std::set<std::string> tasks(all_loss_tasks().begin(), all_loss_tasks().end());
    for (const auto& d : disabled_losses) {
      check(tasks.count(d), "train config: cannot disable unknown loss '", d, "'");
      tasks.erase(d);
    }
    check(!tasks.empty(), "train config: all losses disabled");
    return tasks;
  }

  void validate() const {
    check(learning_rate > 0.0, "train config: learning_rate must be > 0");
    check(epochs >= 1, "train config: epochs must be >= 1");
    check(batch_size >= 1, "train config: batch_size must be >= 1");
    check(loss_mode == "uncertainty" || loss_mode == "static",
          "train config: loss_mode must be 'uncertainty' or 'static', got '", loss_mode, "'");
    check(val_fraction > 0.0 && val_fraction < 1.0, "train config: val_fraction must be in (0,1)");
    enabled_tasks();
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"warmup_steps", warmup_steps},
            {"seed", seed},
            {"loss_mode", loss_mode},
            {"disabled_losses", disabled_losses},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm},
            {"val_fraction", val_fraction},
            {"patience", patience},
            {"init_log_sigma", init_log_sigma}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    using cfgdetail::get_or;
    cfgdetail::require_known_keys(
        j, {"learning_rate", "epochs", "batch_size", "warmup_steps", "seed", "loss_mode",
            "disabled_losses", "weight_decay", "clip_norm", "val_fraction", "patience",
            "init_log_sigma"},
        "train");
    TrainConfig c;
    c.learning_rate = get_or<double>(j, "learning_rate", c.learning_rate);
    c.epochs = get_or<int>(j, "epochs", c.epochs);
    c.batch_size = get_or<int>(j, "batch_size", c.batch_size);
    c.warmup_steps = get_or<int>(j, "warmup_steps", c.warmup_steps);
    c.seed = get_or<uint64_t>(j, "seed", c.seed);
    c.loss_mode = get_or<std::string>(j, "loss_mode", c.loss_mode);
    c.disabled_losses =
        get_or<std::vector<std::string>>(j, "disabled_losses", c.disabled_losses);
    c.weight_decay = get_or<double>(j, "weight_decay", c.weight_decay);
    c.clip_norm = get_or<double>(j, "clip_norm", c.clip_norm);
    c.val_fraction = get_or<double>(j, "val_fraction", c.val_fraction);
    c.patience = get_or<int>(j, "patience", c.patience);
    c.init_log_sigma = get_or<double>(j, "init_log_sigma", c.init_log_sigma);
    return c;
  }
};

struct StepLog {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  std::map<std::string, double> losses;
  std::map<std::string, double> weights;  // effective 1/(2 sigma^2) or static weight
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"epoch", epoch},     {"lr", lr},
            {"losses", losses}, {"weights", weights}, {"total", total}};
  }
};

struct RunRecord {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  int best_epoch = -1;  // 0-based
  double best_val_loss = 0.0;
  std::vector<StepLog> steps;
  double wall_clock_ms = 0.0;
  bool early_stopped = false;

  nlohmann::json to_json() const {
    return {{"epoch_train_loss", epoch_train_loss},
            {"epoch_val_loss", epoch_val_loss},
            {"best_epoch", best_epoch},
            {"best_val_loss", best_val_loss},
            {"wall_clock_ms", wall_clock_ms},
            {"early_stopped", early_stopped},
            {"n_steps", steps.size()}};
  }
};

struct TrainState {
  int64_t step = 0;
  int epoch = 0;
  double best_val_loss = 0.0;
  std::map<std::string, double> log_sigma;
  std::vector<Tensor> adam_m, adam_v;
  int64_t adam_t = 0;
};

// --- checkpointing ----------------------------------------------------------

inline void save_checkpoint(const std::string& path, const Model& model,
                            const TrainState& state) {
  Container c;
  c.put_bytes("model_config", model.cfg.to_json().dump());
  for (const auto& [name, t] : model.params.items) c.put_f64("param." + name, t);
  nlohmann::json st = {{"step", state.step},
                       {"epoch", state.epoch},
                       {"best_val_loss", state.best_val_loss},
                       {"log_sigma", state.log_sigma},
                       {"adam_t", state.adam_t},
                       {"adam_slots", state.adam_m.size()}};
  c.put_bytes("train_state", st.dump());
  for (size_t i = 0; i < state.adam_m.size(); ++i) {
    c.put_f64("adam_m." + std::to_string(i), state.adam_m[i]);
    c.put_f64("adam_v." + std::to_string(i), state.adam_v[i]);
  }
  c.save(path);
}

struct LoadedCheckpoint {
  Model model;
  TrainState state;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  Container c = Container::load(path);
  LoadedCheckpoint out;
  out.model.cfg = ModelConfig::from_json(nlohmann::json::parse(c.get_bytes("model_config")));
  Model fresh = Model::init(out.model.cfg, 0);  // registry shape only
  out.model.params = std::move(fresh.params);
  for (auto& [name, t] : out.model.params.items) {
    Tensor loaded = c.get_tensor("param." + name);
    check(loaded.shape == t.shape, "checkpoint: shape mismatch for '", name, "': file ",
          shape_str(loaded.shape), " vs model ", shape_str(t.shape));
    t = std::move(loaded);
  }
  nlohmann::json st = nlohmann::json::parse(c.get_bytes("train_state"));
  out.state.step = st.at("step");
  out.state.epoch = st.at("epoch");
  out.state.best_val_loss = st.at("best_val_loss");
  out.state.log_sigma = st.at("log_sigma").get<std::map<std::string, double>>();
  out.state.adam_t = st.at("adam_t");
  size_t slots = st.at("adam_slots");
  for (size_t i = 0; i < slots; ++i) {
    out.state.adam_m.push_back(c.get_tensor("adam_m." + std::to_string(i)));
    out.state.adam_v.push_back(c.get_tensor("adam_v." + std::to_string(i)));
  }
  return out;
}

// --- trainer ----------------------------------------------------------------

class Trainer {
 public:
  Trainer(Model& model, const Dataset& data, TrainConfig train_cfg, LossConfig loss_cfg)
      : model_(model), data_(data), tcfg_(std::move(train_cfg)), lcfg_(std::move(loss_cfg)) {
    tcfg_.validate();
    lcfg_.validate();
    enabled_ = tcfg_.enabled_tasks();
    for (const auto& t : enabled_) {
      log_sigma_[t] = tcfg_.init_log_sigma;
      if (!lcfg_.static_weights.count(t)) lcfg_.static_weights[t] = 1.0;
    }
    split();
  }

  const std::vector<int>& train_indices() const { return train_idx_; }
  const std::vector<int>& val_indices() const { return val_idx_; }
  const std::map<std::string, double>& log_sigma() const { return log_sigma_; }
  void set_log_sigma(const std::map<std::string, double>& ls) { log_sigma_ = ls; }

  // Builds every enabled per-sample loss term on the given graph.
  std::map<std::string, ad::Node*> sample_losses(ad::Graph& g, const Model::Leaves& lv,
                                                 const DataSample& sample) const {
    const SceneBundle& b = data_.bundle_of(sample);
    const ModelConfig& mc = model_.cfg;
    bool aux = enabled_.size() > 1 || !enabled_.count("text");
    TokenSequence seq = build_sequence(mc.k, sample.q_ids, sample.answer_ids, mc.max_seq_len,
                                       mc.scratchpad_after_question);
    Model::Forward f = model_.forward(g, lv, b.pooled, seq, aux);
    double d_max = data_.cfg.d_max_for(b.scene);

    std::map<std::string, ad::Node*> out;
    if (enabled_.count("text")) {
      ad::Node* rows = g.slice_rows(f.lm_logits, seq.a_start() - 1, seq.a_len);
      Tensor soft = data_.soft_targets_for(sample);
      ad::Node* text =
          losses::text_distill_loss(g, rows, soft, lcfg_.tau, lcfg_.tau_squared_scale);
      if (lcfg_.hard_label_mix > 0.0) {
        ad::Node* hard = losses::text_hard_ce(g, rows, sample.answer_ids);
        text = g.add(g.scale(text, 1.0 - lcfg_.hard_label_mix),
                     g.scale(hard, lcfg_.hard_label_mix));
      }
      out["text"] = text;
    }

    bool need_depth = enabled_.count("depth_reg") || enabled_.count("depth_ce") ||
                      enabled_.count("depth_kl");
    if (need_depth) {
      ad::Node *reg = nullptr, *ce = nullptr, *kl = nullptr;
      for (size_t v = 0; v < b.views.size(); ++v) {
        auto dl = losses::depth_losses(g, g.scale(f.depth_norm[v], d_max),
                                       f.depth_bin_logits[v], b.views[v].depth,
                                       b.teacher_depth_bins[v], mc.depth_bins, d_max, nullptr);
        reg = reg ? g.add(reg, dl.reg) : dl.reg;
        ce = ce ? g.add(ce, dl.ce) : dl.ce;
        kl = kl ? g.add(kl, dl.kl) : dl.kl;
      }
      double inv = 1.0 / static_cast<double>(b.views.size());
      if (enabled_.count("depth_reg")) out["depth_reg"] = g.scale(reg, inv);
      if (enabled_.count("depth_ce")) out["depth_ce"] = g.scale(ce, inv);
      if (enabled_.count("depth_kl")) out["depth_kl"] = g.scale(kl, inv);
    }

    int n_obj = static_cast<int>(b.scene.objects.size());
    check(n_obj <= mc.max_objects, "trainer: scene ", b.scene.scene_id, " has ", n_obj,
          " objects but the model supports ", mc.max_objects);
    if (enabled_.count("detection")) {
      ad::Node* cls = g.softmax_rows(g.slice_rows(f.det_cls_logits, 0, n_obj));
      ad::Node* boxes = g.slice_rows(f.det_boxes, 0, n_obj);
      out["detection"] = losses::detection_loss(g, cls, boxes, b.det_class_probs, b.det_boxes,
                                                lcfg_.focal_gamma, lcfg_.focal_alpha);
    }
    if (enabled_.count("spatial")) {
      out["spatial"] = losses::spatial_corresponding_loss(
          g, f.spatial, b.teacher_spatial, lcfg_.lambda_cross, lcfg_.cross_view_cosine);
    }
    if (enabled_.count("multiview")) {
      std::vector<ad::Node*> pooled;
      for (size_t v = 0; v < f.spatial.size(); ++v) {
        ad::Node* sp = g.mean_rows(f.spatial[v]);
        ad::Node* dmean = g.reshape(g.mean_all(f.depth_norm[v]), {1, 1});
        pooled.push_back(g.concat_cols({sp, dmean}));
      }
      out["multiview"] = losses::multiview_consistency(g, pooled);
    }
    if (enabled_.count("feature")) {
      losses::FeatureAlignmentInputs in;
      losses::FeatureAlignmentTargets tg;
      in.det_probs = g.softmax_rows(g.slice_rows(f.det_cls_logits, 0, n_obj));
      tg.det_probs = b.det_class_probs;
      in.depth_hist_probs = g.softmax_rows(f.depth_hist_logits);
      tg.depth_hist = b.teacher_depth_hist;
      int ra = -1, rb = -1;
      if (sample.qa.referenced_object_ids.size() == 2) {
        ra = sample.qa.referenced_object_ids[0];
        rb = sample.qa.referenced_object_ids[1];
      } else if (n_obj >= 2) {
        ra = b.scene.objects[0].id;
        rb = b.scene.objects[1].id;
      }
      if (ra >= 0) {
        auto dists = pair_relation_dists(b.scene, ra, rb);
        in.left_right_probs = g.softmax_rows(f.lr_logits);
        tg.left_right = dists.left_right;
        in.above_below_probs = g.softmax_rows(f.ab_logits);
        tg.above_below = dists.above_below;
      }
      out["feature"] = losses::feature_alignment(g, in, tg);
    }
    return out;
  }

  // Objective value for the current weighting mode, in plain doubles.
  double combine(const std::map<std::string, double>& bundle) const {
    double total = 0.0;
    for (const auto& [task, L] : bundle) {
      if (tcfg_.loss_mode == "uncertainty") {
        double s = log_sigma_.at(task);
        total += 0.5 * std::exp(-2.0 * s) * L + s;
      } else {
        total += lcfg_.static_weights.at(task) * L;
      }
    }
    return total;
  }

  double effective_weight(const std::string& task) const {
    if (tcfg_.loss_mode == "uncertainty") return 0.5 * std::exp(-2.0 * log_sigma_.at(task));
    return lcfg_.static_weights.at(task);
  }

  // Mean loss bundle over a set of samples, without gradients.
  std::map<std::string, double> eval_bundle(const std::vector<int>& indices) const {
    check(!indices.empty(), "trainer: empty evaluation split");
    std::map<std::string, double> acc;
    for (const auto& t : enabled_) acc[t] = 0.0;
    for (int idx : indices) {
      ad::Graph g;
      Model::Leaves lv = model_.leaves(g, false);
      auto terms = sample_losses(g, lv, data_.samples[idx]);
      for (const auto& [task, node] : terms) acc[task] += node->value[0];
    }
    for (auto& [task, v] : acc) v /= static_cast<double>(indices.size());
    return acc;
  }

  double validate() const { return combine(eval_bundle(val_idx_)); }

  RunRecord train(const std::string& out_dir = "") {
    auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    std::ofstream log_file;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      log_file.open(fs::path(out_dir) / "loss_log.jsonl");
    }

    RunRecord rec;
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(train_idx_.size()) + tcfg_.batch_size - 1) / tcfg_.batch_size;
    const int64_t total_steps = steps_per_epoch * tcfg_.epochs;
    const int64_t warmup = tcfg_.warmup_steps >= 0
                               ? tcfg_.warmup_steps
                               : static_cast<int64_t>(0.05 * static_cast<double>(total_steps));

    std::vector<Tensor*> opt_params = optimizer_params();
    AdamW adam;
    adam.init(opt_params);

    int64_t step = 0;
    int stale_epochs = 0;
    rec.best_val_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < tcfg_.epochs; ++epoch) {
      std::vector<int> order = train_idx_;
      shuffle(order, Rng(Rng::derive(tcfg_.seed, 1000 + epoch)));

      double epoch_loss_sum = 0.0;
      for (int64_t b = 0; b < steps_per_epoch; ++b) {
        size_t begin = static_cast<size_t>(b) * tcfg_.batch_size;
        size_t end = std::min(begin + tcfg_.batch_size, order.size());
        double lr = lr_at(step, total_steps, warmup, tcfg_.learning_rate);

        ad::Graph g;
        Model::Leaves lv = model_.leaves(g, true);
        std::map<std::string, ad::Node*> sigma_leaves;
        for (const auto& t : enabled_)
          sigma_leaves[t] = g.leaf(Tensor::from({1, 1}, {log_sigma_[t]}), true);

        std::map<std::string, ad::Node*> acc;
        for (size_t i = begin; i < end; ++i) {
          auto terms = sample_losses(g, lv, data_.samples[order[i]]);
          for (const auto& [task, node] : terms)
            acc[task] = acc.count(task) ? g.add(acc[task], node) : node;
        }
        double inv = 1.0 / static_cast<double>(end - begin);
        std::map<std::string, ad::Node*> bundle;
        for (const auto& [task, node] : acc) bundle[task] = g.scale(node, inv);

        ad::Node* total = tcfg_.loss_mode == "uncertainty"
                              ? losses::uncertainty_total(g, bundle, sigma_leaves)
                              : losses::static_total(g, bundle, lcfg_.static_weights);

        StepLog sl;
        sl.step = step;
        sl.epoch = epoch;
        sl.lr = lr;
        sl.total = total->value[0];
        for (const auto& [task, node] : bundle) {
          sl.losses[task] = node->value[0];
          sl.weights[task] = effective_weight(task);
        }
        if (!std::isfinite(sl.total) || !LossBundle{sl.losses}.all_finite())
          fail("training aborted: non-finite loss at step ", step, "; bundle: ",
               LossBundle{sl.losses}.dump());

        g.backward(total);

        std::vector<Tensor> grads;
        grads.reserve(opt_params.size());
        for (const auto& [name, t] : model_.params.items) {
          ad::Node* leaf = lv.at(name);
          grads.push_back(leaf->grad.numel() ? leaf->grad : Tensor(t.shape));
        }
        if (tcfg_.loss_mode == "uncertainty")
          for (const auto& t : enabled_) {
            ad::Node* s = sigma_leaves[t];
            grads.push_back(s->grad.numel() ? s->grad : Tensor({1, 1}));
          }
        clip_gradients(grads, tcfg_.clip_norm);
        adam.step(opt_params, grads, lr, tcfg_.weight_decay);
        if (tcfg_.loss_mode == "uncertainty") sync_sigma_from_params();

        epoch_loss_sum += sl.total;
        rec.steps.push_back(sl);
        if (log_file.is_open()) log_file << sl.to_json().dump() << "\n";
        ++step;
      }

      rec.epoch_train_loss.push_back(epoch_loss_sum / static_cast<double>(steps_per_epoch));
      double val = validate();
      rec.epoch_val_loss.push_back(val);
      if (val < rec.best_val_loss) {
        rec.best_val_loss = val;
        rec.best_epoch = epoch;
        stale_epochs = 0;
        if (!out_dir.empty())
          save_checkpoint((fs::path(out_dir) / "checkpoint_best.skdc").string(), model_,
                          make_state(step, epoch, rec.best_val_loss, adam));
      } else {
        ++stale_epochs;
      }
      if (!out_dir.empty())
        save_checkpoint((fs::path(out_dir) / "checkpoint_last.skdc").string(), model_,
                        make_state(step, epoch, rec.best_val_loss, adam));
      if (stale_epochs >= tcfg_.patience) {
        rec.early_stopped = true;
        break;
      }
    }

    rec.wall_clock_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    if (!out_dir.empty()) {
      std::ofstream rr(fs::path(out_dir) / "run_record.json");
      rr << rec.to_json().dump(2) << "\n";
    }
    return rec;
  }

 private:
  void split() {
    std::vector<int> idx(data_.samples.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    shuffle(idx, Rng(Rng::derive(tcfg_.seed, 999)));
    size_t n_val = std::max<size_t>(1, static_cast<size_t>(tcfg_.val_fraction * idx.size()));
    check(n_val < idx.size(), "trainer: dataset too small for the requested split");
    val_idx_.assign(idx.end() - n_val, idx.end());
    train_idx_.assign(idx.begin(), idx.end() - n_val);
  }

  static void shuffle(std::vector<int>& v, Rng rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(static_cast<int>(i))]);
  }

  // log-sigma values live in sigma_store_ tensors appended to the optimizer
  // parameter list, in enabled-task order.
  std::vector<Tensor*> optimizer_params() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : model_.params.items) out.push_back(&t);
    if (tcfg_.loss_mode == "uncertainty") {
      sigma_store_.clear();
      sigma_order_.clear();
      for (const auto& t : enabled_) {
        sigma_order_.push_back(t);
        sigma_store_.push_back(Tensor::from({1, 1}, {log_sigma_[t]}));
      }
      for (auto& t : sigma_store_) out.push_back(&t);
    }
    return out;
  }

  void sync_sigma_from_params() {
    for (size_t i = 0; i < sigma_order_.size(); ++i)
      log_sigma_[sigma_order_[i]] = sigma_store_[i][0];
  }

  TrainState make_state(int64_t step, int epoch, double best_val, AdamW& adam) const {
    TrainState st;
    st.step = step;
    st.epoch = epoch;
    st.best_val_loss = best_val;
    st.log_sigma = log_sigma_;
    st.adam_m = adam.moments_m();
    st.adam_v = adam.moments_v();
    st.adam_t = adam.step_count();
    return st;
  }

  Model& model_;
  const Dataset& data_;
  TrainConfig tcfg_;
  LossConfig lcfg_;
  std::set<std::string> enabled_;
  std::map<std::string, double> log_sigma_;
  std::vector<Tensor> sigma_store_;
  std::vector<std::string> sigma_order_;
  std::vector<int> train_idx_, val_idx_;
};

}  // namespace skd
