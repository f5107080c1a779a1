// spatialkd: desk-scale multi-task distillation pipeline for 3D spatial QA
// with a latent thinking-token scratchpad.
//
// Subcommands: generate, train, eval, ablate, diagnose.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spatialkd/ablation.hpp"
#include "spatialkd/config.hpp"
#include "spatialkd/dataset.hpp"
#include "spatialkd/metrics.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace skd;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  int64_t seed = -1;
  int k = -1;
  std::string loss_mode;
  std::vector<std::string> disable_losses;
};

RunConfig load_config(const CommonOpts& o) {
  RunConfig rc = o.config_path.empty() ? RunConfig::defaults() : RunConfig::load(o.config_path);
  if (o.seed >= 0) {
    rc.dataset.seed = static_cast<uint64_t>(o.seed);
    rc.train.seed = static_cast<uint64_t>(o.seed);
  }
  if (o.k >= 0) rc.model.k = o.k;
  if (!o.loss_mode.empty()) rc.train.loss_mode = o.loss_mode;
  for (const auto& d : o.disable_losses) rc.train.disabled_losses.push_back(d);
  return rc;
}

void echo_config(const RunConfig& rc, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "run_config.json");
  f << rc.raw_text;
  if (!rc.raw_text.empty() && rc.raw_text.back() != '\n') f << "\n";
}

std::vector<int> split_indices(const Dataset& ds, const std::string& split, uint64_t seed,
                               double val_fraction) {
  std::vector<int> idx(ds.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  if (split == "all") return idx;
  Rng rng(Rng::derive(seed, 999));
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(val_fraction * idx.size()));
  check(n_val < idx.size(), "split: dataset too small");
  if (split == "val") return {idx.end() - n_val, idx.end()};
  if (split == "train") return {idx.begin(), idx.end() - n_val};
  fail("unknown split '", split, "' (use all|train|val)");
}

int cmd_generate(const CommonOpts& o) {
  RunConfig rc = load_config(o);
  Dataset ds = build_dataset(rc.dataset);
  save_dataset(ds, o.out_dir);
  echo_config(rc, o.out_dir);
  std::cout << "generated " << ds.scenes.size() << " scenes, " << ds.samples.size()
            << " samples, vocab " << ds.vocab.size() << " -> " << o.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  RunConfig rc = load_config(o);
  Dataset ds = load_dataset(o.data_dir);
  rc.dataset = ds.cfg;
  rc.finalize(ds.vocab.size());
  rc.model.validate();

  Model model = Model::init(rc.model, rc.train.seed);
  Trainer trainer(model, ds, rc.train, rc.loss);
  echo_config(rc, o.out_dir);
  RunRecord rec = trainer.train(o.out_dir);

  std::cout << "trained " << rec.epoch_train_loss.size() << " epochs in "
            << static_cast<int>(rec.wall_clock_ms) << " ms\n";
  for (size_t e = 0; e < rec.epoch_train_loss.size(); ++e)
    std::cout << "epoch " << (e + 1) << ": train " << rec.epoch_train_loss[e] << " val "
              << rec.epoch_val_loss[e] << "\n";
  std::cout << "best val " << rec.best_val_loss << " at epoch " << (rec.best_epoch + 1)
            << "; checkpoints in " << o.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& split) {
  RunConfig rc = load_config(o);
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  Dataset ds = load_dataset(o.data_dir);
  check_checkpoint_data_compat(ck.model.cfg, ds);
  std::vector<int> idx = split_indices(ds, split, rc.train.seed, rc.train.val_fraction);
  metrics::MetricsReport rep = metrics::evaluate_model(ck.model, ds, idx, rc.eval);

  std::cout << rep.to_json().dump(2) << "\n";
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    std::ofstream rf(fs::path(o.out_dir) / "report.json");
    rf << rep.to_json().dump(2) << "\n";
    std::ofstream qf(fs::path(o.out_dir) / "qualitative.jsonl");
    for (const auto& q : rep.qualitative) qf << q.to_json().dump() << "\n";
  }
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& sweep) {
  check(sweep == "all" || sweep == "losses" || sweep == "k", "unknown sweep '", sweep,
        "' (use all|losses|k)");
  RunConfig rc = load_config(o);
  Dataset ds = load_dataset(o.data_dir);
  rc.dataset = ds.cfg;
  rc.finalize(ds.vocab.size());

  AblationReport rep;
  if (sweep == "all" || sweep == "losses")
    rep.loss_rows = ablate_losses(ds, rc.model, rc.train, rc.loss, rc.eval);
  if (sweep == "all" || sweep == "k")
    rep.k_rows = ablate_k(ds, rc.model, rc.train, rc.loss, rc.eval);
  write_ablation_artifacts(rep, o.out_dir);

  auto print_rows = [](const std::vector<AblationRow>& rows, const std::string& title) {
    if (rows.empty()) return;
    std::cout << title << "\n";
    for (const auto& r : rows)
      std::cout << "  " << r.name << " (K=" << r.k << "): best_val " << r.best_val_loss
                << " rouge1 " << r.rouge1_f << " spatial " << r.spatial_acc << " depth_rmse "
                << r.depth_rmse << "\n";
  };
  print_rows(rep.loss_rows, "loss ablation");
  print_rows(rep.k_rows, "thinking-token sweep");
  std::cout << "artifacts in " << o.out_dir << "\n";
  return 0;
}

int cmd_diagnose(const CommonOpts& o, int sample_idx, bool diagnostic) {
  RunConfig rc = load_config(o);
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  Dataset ds = load_dataset(o.data_dir);
  check_checkpoint_data_compat(ck.model.cfg, ds);
  check(sample_idx >= 0 && sample_idx < static_cast<int>(ds.samples.size()),
        "diagnose: sample ", sample_idx, " out of range [0,", ds.samples.size(), ")");
  const DataSample& s = ds.samples[sample_idx];
  const SceneBundle& b = ds.bundle_of(s);

  std::vector<int> out_ids = ck.model.generate(b.pooled, s.q_ids, rc.eval.max_new_tokens);
  std::cout << "question: " << s.qa.question_text << "\n";
  std::cout << "answer: " << ds.vocab.decode(out_ids) << "\n";

  if (diagnostic) {
    std::vector<std::string> thinking = ck.model.decode_thinking(b.pooled, s.q_ids, ds.vocab);
    for (size_t i = 0; i < thinking.size(); ++i)
      std::cout << "thinking[" << i << "]: " << thinking[i] << "\n";
    TokenSequence seq = build_sequence(ck.model.cfg.k, s.q_ids, {}, ck.model.cfg.max_seq_len,
                                       ck.model.cfg.scratchpad_after_question);
    std::cout << "spans: v=[0,1) t=[" << seq.t_start() << "," << seq.t_start() + seq.k
              << ") q=[" << seq.q_start() << "," << seq.q_start() + seq.q_len << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatialkd: multi-task distillation for 3D spatial QA with a latent scratchpad"};
  app.require_subcommand(1);
  CommonOpts o;
  std::string split = "all";
  std::string sweep = "all";
  int sample_idx = 0;
  bool diagnostic = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "run configuration file (JSON)");
    cmd->add_option("--seed", o.seed, "override dataset/train seed");
  };

  CLI::App* gen = app.add_subcommand("generate", "build a synthetic dataset with teacher signals");
  add_common(gen);
  gen->add_option("--out", o.out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "train the student model");
  add_common(train);
  train->add_option("--data", o.data_dir, "dataset directory")->required();
  train->add_option("--out", o.out_dir, "run directory")->required();
  train->add_option("--k", o.k, "thinking-token count override");
  train->add_option("--loss-mode", o.loss_mode, "uncertainty|static");
  train->add_option("--disable-loss", o.disable_losses, "drop a loss term (repeatable)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", o.data_dir, "dataset directory")->required();
  eval->add_option("--out", o.out_dir, "report directory");
  eval->add_option("--split", split, "all|train|val");

  CLI::App* abl = app.add_subcommand("ablate", "loss-component and thinking-token sweeps");
  add_common(abl);
  abl->add_option("--data", o.data_dir, "dataset directory")->required();
  abl->add_option("--out", o.out_dir, "artifact directory")->required();
  abl->add_option("--sweep", sweep, "all|losses|k");

  CLI::App* diag = app.add_subcommand("diagnose", "print a sample's answer (and the scratchpad)");
  add_common(diag);
  diag->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  diag->add_option("--data", o.data_dir, "dataset directory")->required();
  diag->add_option("--sample", sample_idx, "sample index");
  diag->add_flag("--diagnostic", diagnostic, "decode the hidden thinking tokens");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o, split);
    if (abl->parsed()) return cmd_ablate(o, sweep);
    if (diag->parsed()) return cmd_diagnose(o, sample_idx, diagnostic);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
