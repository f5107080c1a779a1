#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spatialkd/common.hpp"
#include "spatialkd/dataset.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/tokenizer.hpp"
#include "spatialkd/trainer.hpp"

namespace skd::metrics {

using Tokens = std::vector<std::string>;

inline Tokens tokenize(const std::string& s) { return Vocab::normalize(s); }

// --- BLEU -------------------------------------------------------------------

namespace detail {

inline std::unordered_map<std::string, int> ngram_counts(const Tokens& t, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(t.size()) < n) return counts;
  for (size_t i = 0; i + n <= t.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      key += t[i + j];
      key.push_back('\x1f');
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// Cumulative BLEU-n: geometric mean of modified (clipped) 1..n gram
// precisions with the brevity penalty against the closest reference length.
inline double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  check(n >= 1 && n <= 4, "bleu: order must be in [1,4]");
  check(!references.empty(), "bleu: need at least one reference");
  const int c = static_cast<int>(candidate.size());
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    auto cand = detail::ngram_counts(candidate, k);
    int total = 0, clipped = 0;
    for (const auto& [g, cnt] : cand) total += cnt;
    if (total == 0) return 0.0;
    std::unordered_map<std::string, int> max_ref;
    for (const auto& ref : references)
      for (const auto& [g, cnt] : detail::ngram_counts(ref, k))
        max_ref[g] = std::max(max_ref[g], cnt);
    for (const auto& [g, cnt] : cand) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(cnt, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }

  int r = static_cast<int>(references[0].size());
  for (const auto& ref : references) {
    int len = static_cast<int>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r))
      r = len;
  }
  double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  return bp * std::exp(log_sum / n);
}

// --- ROUGE ------------------------------------------------------------------

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline PRF rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
  auto cand = detail::ngram_counts(candidate, n);
  auto ref = detail::ngram_counts(reference, n);
  int cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [g, cnt] : cand) cand_total += cnt;
  for (const auto& [g, cnt] : ref) ref_total += cnt;
  for (const auto& [g, cnt] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(cnt, it->second);
  }
  PRF out;
  out.precision = cand_total > 0 ? static_cast<double>(overlap) / cand_total : 0.0;
  out.recall = ref_total > 0 ? static_cast<double>(overlap) / ref_total : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

inline PRF rouge_l(const Tokens& candidate, const Tokens& reference) {
  const size_t n = candidate.size(), m = reference.size();
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      dp[i][j] = candidate[i - 1] == reference[j - 1] ? dp[i - 1][j - 1] + 1
                                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
  int lcs = dp[n][m];
  PRF out;
  out.precision = n > 0 ? static_cast<double>(lcs) / n : 0.0;
  out.recall = m > 0 ? static_cast<double>(lcs) / m : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

// --- METEOR -----------------------------------------------------------------

namespace detail {

// Light suffix stemmer: ing/ed/es/s, keeping stems of >= 3 characters.
inline std::string stem(const std::string& w) {
  auto try_strip = [&](const char* suf) -> std::string {
    size_t sl = std::strlen(suf);
    if (w.size() > sl + 2 && w.compare(w.size() - sl, sl, suf) == 0)
      return w.substr(0, w.size() - sl);
    return "";
  };
  for (const char* suf : {"ing", "ed", "es", "s"}) {
    std::string s = try_strip(suf);
    if (!s.empty()) return s;
  }
  return w;
}

}  // namespace detail

// METEOR variant with exact + suffix-stem matching and the fragmentation
// penalty normalized as (chunks-1)/(matches-1), so an exact copy scores 1.0.
// No external lexical resources.
inline double meteor(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;

  std::vector<int> cand_to_ref(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);
  // Pass 1: exact matches, greedy left to right.
  for (size_t i = 0; i < candidate.size(); ++i)
    for (size_t j = 0; j < reference.size(); ++j) {
      if (ref_used[j] || candidate[i] != reference[j]) continue;
      cand_to_ref[i] = static_cast<int>(j);
      ref_used[j] = true;
      break;
    }
  // Pass 2: stem matches for what remains.
  for (size_t i = 0; i < candidate.size(); ++i) {
    if (cand_to_ref[i] >= 0) continue;
    std::string cs = detail::stem(candidate[i]);
    for (size_t j = 0; j < reference.size(); ++j) {
      if (ref_used[j] || cs != detail::stem(reference[j])) continue;
      cand_to_ref[i] = static_cast<int>(j);
      ref_used[j] = true;
      break;
    }
  }

  int m = 0;
  for (int j : cand_to_ref)
    if (j >= 0) ++m;
  if (m == 0) return 0.0;

  double p = static_cast<double>(m) / candidate.size();
  double r = static_cast<double>(m) / reference.size();
  double f_mean = 10.0 * p * r / (r + 9.0 * p);

  int chunks = 0, prev_ref = -2;
  for (size_t i = 0; i < candidate.size(); ++i) {
    if (cand_to_ref[i] < 0) {
      prev_ref = -2;
      continue;
    }
    if (cand_to_ref[i] != prev_ref + 1) ++chunks;
    prev_ref = cand_to_ref[i];
  }
  double penalty =
      m > 1 ? 0.5 * std::pow(static_cast<double>(chunks - 1) / (m - 1), 3.0) : 0.0;
  return f_mean * (1.0 - penalty);
}

// --- depth ------------------------------------------------------------------

struct DepthMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double delta_125 = 0.0;
  int64_t excluded_cells = 0;  // nonpositive ground truth, excluded from delta
};

inline DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt) {
  check(pred.shape == gt.shape, "depth metrics: shape mismatch ", shape_str(pred.shape), " vs ",
        shape_str(gt.shape));
  check(pred.numel() > 0, "depth metrics: empty input");
  DepthMetrics out;
  double sq = 0.0, ab = 0.0;
  int64_t delta_ok = 0, delta_n = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    double d = pred[i] - gt[i];
    sq += d * d;
    ab += std::abs(d);
    if (gt[i] > 0.0) {
      double p = std::max(pred[i], 1e-9);
      double ratio = std::max(p / gt[i], gt[i] / p);
      if (ratio < 1.25) ++delta_ok;
      ++delta_n;
    } else {
      ++out.excluded_cells;
    }
  }
  out.rmse = std::sqrt(sq / pred.numel());
  out.mae = ab / pred.numel();
  out.delta_125 = delta_n > 0 ? static_cast<double>(delta_ok) / delta_n : 0.0;
  return out;
}

// --- spatial accuracy ---------------------------------------------------------

// Extracts the discrete choice a templated answer commits to. Returns "" when
// the answer does not commit to any choice (counted as unparseable).
inline std::string extract_choice(Relation rel, const Tokens& toks,
                                  const std::vector<std::string>& catalog) {
  switch (rel) {
    case Relation::Proximity:
    case Relation::Contact:
      if (!toks.empty() && (toks[0] == "yes" || toks[0] == "no")) return toks[0];
      return "";
    case Relation::Size:
      for (const auto& t : toks)
        if (t == "first" || t == "second") return t;
      return "";
    case Relation::Orientation:
      for (const auto& t : toks)
        if (t == "left" || t == "right" || t == "front" || t == "behind") return t;
      return "";
    case Relation::Describe:
      return "";
  }
  return "";
}

struct SpatialAccuracy {
  std::map<std::string, double> per_category;  // the four spatial relations
  std::map<std::string, int> counts;
  double overall = 0.0;  // arithmetic mean of the four category accuracies
  int unparseable = 0;
  int total_judged = 0;

  nlohmann::json to_json() const {
    return {{"per_category", per_category},
            {"counts", counts},
            {"overall", overall},
            {"unparseable", unparseable},
            {"total_judged", total_judged}};
  }
};

// Judges each answer by matching its extracted choice against the relation
// oracle's recomputed answer. Describe samples are not judged here.
inline SpatialAccuracy spatial_accuracy(const std::vector<std::string>& answers,
                                        const std::vector<const DataSample*>& samples,
                                        const Dataset& ds) {
  check(answers.size() == samples.size(), "spatial accuracy: answer/sample count mismatch");
  RelationOracle oracle{ds.cfg.scene.thresholds};
  const auto& catalog = ds.cfg.scene.catalog;
  std::map<std::string, int> correct, total;
  SpatialAccuracy out;
  for (size_t i = 0; i < samples.size(); ++i) {
    const DataSample& s = *samples[i];
    if (s.qa.relation == Relation::Describe) continue;
    const std::string rel = relation_name(s.qa.relation);
    ++total[rel];
    ++out.total_judged;
    std::string truth = extract_choice(
        s.qa.relation, tokenize(oracle_answer(ds.scenes[s.scene_index].scene, s.qa, oracle)),
        catalog);
    std::string got = extract_choice(s.qa.relation, tokenize(answers[i]), catalog);
    if (got.empty()) {
      ++out.unparseable;
      continue;
    }
    if (got == truth) ++correct[rel];
  }
  double sum = 0.0;
  int cats = 0;
  for (const auto& rel : {"proximity", "contact", "size", "orientation"}) {
    if (!total.count(rel)) continue;
    double acc = static_cast<double>(correct[rel]) / total[rel];
    out.per_category[rel] = acc;
    out.counts[rel] = total[rel];
    sum += acc;
    ++cats;
  }
  out.overall = cats > 0 ? sum / cats : 0.0;
  return out;
}

// --- efficiency ---------------------------------------------------------------

struct EfficiencyReport {
  int64_t param_count = 0;
  int64_t model_bytes = 0;
  double mean_latency_ms = 0.0;
  double throughput_per_s = 0.0;
  double param_ratio_vs_reference = 0.0;  // reference_params / param_count

  nlohmann::json to_json() const {
    return {{"param_count", param_count},
            {"model_bytes", model_bytes},
            {"mean_latency_ms", mean_latency_ms},
            {"throughput_per_s", throughput_per_s},
            {"param_ratio_vs_reference", param_ratio_vs_reference}};
  }
};

inline EfficiencyReport efficiency_report(const Model& model, const Dataset& ds,
                                          const std::vector<int>& sample_indices, int runs,
                                          int64_t reference_param_count, int max_new_tokens) {
  check(!sample_indices.empty(), "efficiency: need at least one sample");
  check(runs >= 1, "efficiency: need at least one timed run");
  EfficiencyReport out;
  out.param_count = model.params.total_count();

  namespace fs = std::filesystem;
  fs::path tmp = fs::temp_directory_path() / ("skd_size_probe_" +
                                              std::to_string(
                                                  std::chrono::steady_clock::now()
                                                      .time_since_epoch()
                                                      .count()) +
                                              ".skdc");
  save_checkpoint(tmp.string(), model, TrainState{});
  out.model_bytes = static_cast<int64_t>(fs::file_size(tmp));
  fs::remove(tmp);

  auto run_once = [&](int idx) {
    const DataSample& s = ds.samples[idx];
    model.generate(ds.bundle_of(s).pooled, s.q_ids, max_new_tokens);
  };
  for (int w = 0; w < 3; ++w) run_once(sample_indices[w % sample_indices.size()]);
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < runs; ++r) run_once(sample_indices[r % sample_indices.size()]);
  double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  out.mean_latency_ms = ms / runs;
  out.throughput_per_s = out.mean_latency_ms > 0.0 ? 1000.0 / out.mean_latency_ms : 0.0;
  out.param_ratio_vs_reference =
      reference_param_count > 0
          ? static_cast<double>(reference_param_count) / static_cast<double>(out.param_count)
          : 0.0;
  return out;
}

// --- whole-model evaluation -----------------------------------------------------

struct EvalConfig {
  int max_new_tokens = 16;
  int latency_runs = 20;
  int64_t reference_param_count = 0;

  nlohmann::json to_json() const {
    return {{"max_new_tokens", max_new_tokens},
            {"latency_runs", latency_runs},
            {"reference_param_count", reference_param_count}};
  }

  static EvalConfig from_json(const nlohmann::json& j) {
    using cfgdetail::get_or;
    cfgdetail::require_known_keys(
        j, {"max_new_tokens", "latency_runs", "reference_param_count"}, "eval");
    EvalConfig c;
    c.max_new_tokens = get_or<int>(j, "max_new_tokens", c.max_new_tokens);
    c.latency_runs = get_or<int>(j, "latency_runs", c.latency_runs);
    c.reference_param_count = get_or<int64_t>(j, "reference_param_count",
                                              c.reference_param_count);
    return c;
  }
};

struct QualRecord {
  int sample_id = 0;
  std::string relation;
  std::string question;
  std::string teacher_answer;
  std::string student_answer;
  double rouge1_f = 0.0;
  double bleu1 = 0.0;
  double meteor_score = 0.0;

  nlohmann::json to_json() const {
    return {{"sample_id", sample_id},       {"relation", relation},
            {"question", question},         {"teacher_answer", teacher_answer},
            {"student_answer", student_answer}, {"rouge1_f", rouge1_f},
            {"bleu1", bleu1},               {"meteor", meteor_score}};
  }
};

struct MetricsReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  PRF rouge1, rouge2, rougeL;
  double meteor_score = 0;
  DepthMetrics depth;
  SpatialAccuracy spatial;
  SpatialAccuracy teacher_spatial;  // oracle answers judged the same way
  EfficiencyReport efficiency;
  double mean_candidate_words = 0;
  double mean_reference_words = 0;
  double length_normalized_rouge1 = 0;
  bool empty_candidates_flagged = false;
  std::vector<QualRecord> qualitative;

  nlohmann::json to_json() const {
    auto prf = [](const PRF& p) {
      return nlohmann::json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
    };
    nlohmann::json spatial_relative;
    for (const auto& [k, v] : spatial.per_category) {
      double t = teacher_spatial.per_category.count(k) ? teacher_spatial.per_category.at(k) : 0.0;
      spatial_relative[k] = t > 0.0 ? v / t : 0.0;
    }
    return {{"bleu_1", bleu1},
            {"bleu_2", bleu2},
            {"bleu_3", bleu3},
            {"bleu_4", bleu4},
            {"rouge_1", prf(rouge1)},
            {"rouge_2", prf(rouge2)},
            {"rouge_l", prf(rougeL)},
            {"meteor", meteor_score},
            {"depth",
             {{"rmse", depth.rmse},
              {"mae", depth.mae},
              {"delta_1_25", depth.delta_125},
              {"excluded_cells", depth.excluded_cells}}},
            {"spatial", spatial.to_json()},
            {"teacher_spatial", teacher_spatial.to_json()},
            {"spatial_teacher_relative", spatial_relative},
            {"efficiency", efficiency.to_json()},
            {"length",
             {{"mean_candidate_words", mean_candidate_words},
              {"mean_reference_words", mean_reference_words},
              {"length_normalized_rouge_1", length_normalized_rouge1},
              {"empty_candidates_flagged", empty_candidates_flagged}}}};
  }
};

// Runs greedy generation over the given samples and assembles the full
// metrics report. Per-sample text scores are macro-averaged.
inline MetricsReport evaluate_model(const Model& model, const Dataset& ds,
                                    const std::vector<int>& indices, const EvalConfig& cfg) {
  check(!indices.empty(), "evaluate: no samples");
  MetricsReport rep;

  std::vector<std::string> answers;
  std::vector<const DataSample*> sample_ptrs;
  double cand_words = 0.0, ref_words = 0.0;
  int n = 0;
  for (int idx : indices) {
    const DataSample& s = ds.samples[idx];
    std::vector<int> out_ids =
        model.generate(ds.bundle_of(s).pooled, s.q_ids, cfg.max_new_tokens);
    std::string answer = ds.vocab.decode(out_ids);
    answers.push_back(answer);
    sample_ptrs.push_back(&s);

    Tokens cand = tokenize(answer);
    Tokens ref = tokenize(s.qa.answer_text);
    rep.bleu1 += bleu_n(cand, {ref}, 1);
    rep.bleu2 += bleu_n(cand, {ref}, 2);
    rep.bleu3 += bleu_n(cand, {ref}, 3);
    rep.bleu4 += bleu_n(cand, {ref}, 4);
    auto add_prf = [](PRF& acc, const PRF& x) {
      acc.precision += x.precision;
      acc.recall += x.recall;
      acc.f1 += x.f1;
    };
    PRF r1 = rouge_n(cand, ref, 1);
    add_prf(rep.rouge1, r1);
    add_prf(rep.rouge2, rouge_n(cand, ref, 2));
    add_prf(rep.rougeL, rouge_l(cand, ref));
    double met = meteor(cand, ref);
    rep.meteor_score += met;
    cand_words += static_cast<double>(cand.size());
    ref_words += static_cast<double>(ref.size());
    ++n;

    QualRecord q;
    q.sample_id = s.sample_id;
    q.relation = relation_name(s.qa.relation);
    q.question = s.qa.question_text;
    q.teacher_answer = s.qa.answer_text;
    q.student_answer = answer;
    q.rouge1_f = r1.f1;
    q.bleu1 = bleu_n(cand, {ref}, 1);
    q.meteor_score = met;
    rep.qualitative.push_back(std::move(q));
  }
  double inv = 1.0 / n;
  rep.bleu1 *= inv;
  rep.bleu2 *= inv;
  rep.bleu3 *= inv;
  rep.bleu4 *= inv;
  for (PRF* p : {&rep.rouge1, &rep.rouge2, &rep.rougeL}) {
    p->precision *= inv;
    p->recall *= inv;
    p->f1 *= inv;
  }
  rep.meteor_score *= inv;
  rep.mean_candidate_words = cand_words * inv;
  rep.mean_reference_words = ref_words * inv;
  if (rep.mean_candidate_words > 0.0) {
    rep.length_normalized_rouge1 = rep.rouge1.f1 / rep.mean_candidate_words;
  } else {
    rep.length_normalized_rouge1 = 0.0;
    rep.empty_candidates_flagged = true;
  }

  rep.spatial = spatial_accuracy(answers, sample_ptrs, ds);
  std::vector<std::string> oracle_answers;
  for (const DataSample* s : sample_ptrs) oracle_answers.push_back(s->qa.answer_text);
  rep.teacher_spatial = spatial_accuracy(oracle_answers, sample_ptrs, ds);

  // Depth metrics over the unique scenes in the split.
  std::vector<int> scene_ids;
  for (const DataSample* s : sample_ptrs) scene_ids.push_back(s->scene_index);
  std::sort(scene_ids.begin(), scene_ids.end());
  scene_ids.erase(std::unique(scene_ids.begin(), scene_ids.end()), scene_ids.end());
  std::vector<double> pred_cells, gt_cells;
  for (int sc : scene_ids) {
    const SceneBundle& b = ds.scenes[sc];
    double d_max = ds.cfg.d_max_for(b.scene);
    ad::Graph g;
    Model::Leaves lv = model.leaves(g, false);
    TokenSequence seq = build_sequence(model.cfg.k, {Vocab::kBos, Vocab::kEos}, {},
                                       model.cfg.max_seq_len,
                                       model.cfg.scratchpad_after_question);
    Model::Forward f = model.forward(g, lv, b.pooled, seq, true);
    for (size_t v = 0; v < b.views.size(); ++v)
      for (int i = 0; i < b.views[v].depth.rows(); ++i) {
        pred_cells.push_back(f.depth_norm[v]->value.at(i, 0) * d_max);
        gt_cells.push_back(b.views[v].depth.at(i, 0));
      }
  }
  int cells = static_cast<int>(pred_cells.size());
  rep.depth = depth_metrics(Tensor::from({cells, 1}, pred_cells),
                            Tensor::from({cells, 1}, gt_cells));

  rep.efficiency = efficiency_report(model, ds, indices, cfg.latency_runs,
                                     cfg.reference_param_count, cfg.max_new_tokens);
  return rep;
}

}  // namespace skd::metrics
