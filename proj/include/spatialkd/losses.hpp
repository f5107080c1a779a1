#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "spatialkd/autodiff.hpp"
#include "spatialkd/common.hpp"
#include "spatialkd/tensor.hpp"

namespace skd {

// Task names as they appear in loss bundles, uncertainty parameters, logs and
// ablation reports.
inline const std::vector<std::string>& all_loss_tasks() {
  static const std::vector<std::string> tasks{"text",      "depth_reg", "depth_ce",
                                              "depth_kl",  "detection", "spatial",
                                              "multiview", "feature"};
  return tasks;
}

struct LossConfig {
  double tau = 2.0;            // distillation temperature
  double lambda_cross = 0.1;   // cross-view weight in the spatial loss
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  int depth_bins = 8;
  double d_max = 0.0;          // 0 => bound to the scene diagonal downstream
  bool tau_squared_scale = true;   // multiply the soft text loss by tau^2
  bool cross_view_cosine = false;  // literal similarity reading of the cross-view term
  double hard_label_mix = 0.0;     // weight of hard-label CE mixed into the text loss
  std::map<std::string, double> static_weights;  // "static" mode weight table

  void validate() const {
    check(tau > 0.0, "loss config: tau must be > 0");
    check(lambda_cross >= 0.0, "loss config: lambda_cross must be >= 0");
    check(focal_gamma >= 0.0, "loss config: focal gamma must be >= 0");
    check(focal_alpha > 0.0 && focal_alpha < 1.0, "loss config: focal alpha must be in (0,1)");
    check(depth_bins >= 2, "loss config: depth_bins must be >= 2");
    check(hard_label_mix >= 0.0 && hard_label_mix <= 1.0,
          "loss config: hard_label_mix must be in [0,1]");
  }
};

// Scalar snapshot of one step's loss terms, for logging and NaN dumps.
struct LossBundle {
  std::map<std::string, double> values;

  bool all_finite() const {
    for (const auto& [k, v] : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string dump() const {
    std::string s;
    for (const auto& [k, v] : values) s += k + "=" + std::to_string(v) + " ";
    return s;
  }
};

namespace losses {

namespace detail {

// Temperature-sharpened teacher rows: t^(1/tau) renormalized; zeros stay zero.
inline Tensor sharpen_rows(const Tensor& probs, double tau) {
  Tensor out = probs;
  for (int i = 0; i < out.rows(); ++i) {
    double z = 0.0;
    for (int j = 0; j < out.cols(); ++j) {
      double p = probs.at(i, j);
      out.at(i, j) = p > 0.0 ? std::pow(p, 1.0 / tau) : 0.0;
      z += out.at(i, j);
    }
    check(z > 0.0, "text loss: teacher row ", i, " has no mass");
    for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= z;
  }
  return out;
}

inline void check_rows_normalized(const Tensor& t, const char* what) {
  for (int i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < t.cols(); ++j) {
      check(t.at(i, j) >= 0.0, what, ": negative probability in row ", i);
      s += t.at(i, j);
    }
    check(std::abs(s - 1.0) <= 1e-6, what, ": row ", i, " sums to ", s, ", not 1");
  }
}

inline void check_node_rows_normalized(ad::Node* n, const char* what) {
  check_rows_normalized(n->value, what);
}

}  // namespace detail

// Soft-target distillation over answer positions:
//   tau^2 * mean_rows KL( sharpen(teacher, 1/tau) || softmax(student / tau) ).
// Zero iff the distributions match. The tau^2 factor keeps gradient magnitude
// temperature-invariant and can be disabled.
inline ad::Node* text_distill_loss(ad::Graph& g, ad::Node* student_logits_A,
                                   const Tensor& teacher_probs_A, double tau,
                                   bool tau_squared_scale = true) {
  check(tau > 0.0, "text loss: tau must be > 0");
  check(student_logits_A->value.shape == teacher_probs_A.shape,
        "text loss: position count mismatch, student ", shape_str(student_logits_A->value.shape),
        " vs teacher ", shape_str(teacher_probs_A.shape));
  check(student_logits_A->value.rows() > 0, "text loss: no answer positions");
  Tensor sharp = detail::sharpen_rows(teacher_probs_A, tau);
  ad::Node* lsm = g.log_softmax_rows(g.scale(student_logits_A, 1.0 / tau));
  ad::Node* kl = g.kl_const_rows(sharp, lsm);
  return tau_squared_scale ? g.scale(kl, tau * tau) : kl;
}

// Same value computed from full-sequence logits and a per-position label
// array: positions labelled l != mask contribute the logits of the preceding
// position. Numerically identical to slicing the answer span first.
inline ad::Node* text_distill_loss_masked(ad::Graph& g, ad::Node* full_logits,
                                          const Tensor& teacher_probs_A,
                                          const std::vector<int>& label_ids, double tau,
                                          bool tau_squared_scale = true, int mask = -100) {
  std::vector<int> pred_rows;
  for (size_t p = 0; p < label_ids.size(); ++p) {
    if (label_ids[p] == mask) continue;
    check(p > 0, "text loss: labelled position 0 has no predicting position");
    pred_rows.push_back(static_cast<int>(p) - 1);
  }
  check(static_cast<int>(pred_rows.size()) == teacher_probs_A.rows(),
        "text loss: unmasked count ", pred_rows.size(), " != teacher rows ",
        teacher_probs_A.rows());
  ad::Node* rows = g.gather_rows(full_logits, pred_rows);
  return text_distill_loss(g, rows, teacher_probs_A, tau, tau_squared_scale);
}

// Hard-label cross entropy over the same prediction rows (optional mix-in).
inline ad::Node* text_hard_ce(ad::Graph& g, ad::Node* student_logits_A,
                              const std::vector<int>& answer_ids) {
  check(student_logits_A->value.rows() == static_cast<int>(answer_ids.size()),
        "text ce: position count mismatch");
  ad::Node* lsm = g.log_softmax_rows(student_logits_A);
  return g.neg(g.mean_all(g.pick(lsm, answer_ids)));
}

struct DepthLosses {
  ad::Node* reg = nullptr;
  ad::Node* ce = nullptr;
  ad::Node* kl = nullptr;
  int clamped_cells = 0;
};

// pred_scalar is in meters; depth_ce/kl act on bin logits. Ground truth
// outside [0, d_max] is clamped with a warning.
inline DepthLosses depth_losses(ad::Graph& g, ad::Node* pred_scalar, ad::Node* bin_logits,
                                const Tensor& gt_depth, const Tensor& teacher_bin_dist, int bins,
                                double d_max, std::ostream* warn = &std::cerr) {
  check(pred_scalar->value.shape == gt_depth.shape, "depth loss: pred/gt shape mismatch ",
        shape_str(pred_scalar->value.shape), " vs ", shape_str(gt_depth.shape));
  check(bin_logits->value.rows() == gt_depth.rows() && bin_logits->value.cols() == bins,
        "depth loss: bin logits shape mismatch");
  check(teacher_bin_dist.shape == bin_logits->value.shape,
        "depth loss: teacher bin shape mismatch");
  check(d_max > 0.0, "depth loss: d_max must be > 0");

  DepthLosses out;
  Tensor gt = gt_depth;
  for (auto& v : gt.data) {
    if (v < 0.0 || v > d_max) {
      v = std::min(std::max(v, 0.0), d_max);
      ++out.clamped_cells;
    }
  }
  if (out.clamped_cells > 0 && warn)
    (*warn) << "[depth_losses] clamped " << out.clamped_cells << " gt cells into [0," << d_max
            << "]\n";

  std::vector<int> bin_idx(gt.rows());
  for (int i = 0; i < gt.rows(); ++i) {
    int b = static_cast<int>(std::floor(gt.at(i, 0) / d_max * bins));
    bin_idx[i] = std::min(std::max(b, 0), bins - 1);
  }

  out.reg = g.l1_mean(pred_scalar, gt);
  ad::Node* lsm = g.log_softmax_rows(bin_logits);
  out.ce = g.neg(g.mean_all(g.pick(lsm, bin_idx)));
  out.kl = g.kl_const_rows(teacher_bin_dist, lsm);
  return out;
}

// Focal classification (from class probabilities) plus mean L1 localization.
// Object correspondence is positional: row i of every input is object i.
inline ad::Node* detection_loss(ad::Graph& g, ad::Node* cls_probs, ad::Node* boxes,
                                const Tensor& teacher_class_probs, const Tensor& gt_boxes,
                                double gamma, double alpha) {
  check(cls_probs->value.shape == teacher_class_probs.shape,
        "detection loss: object count mismatch, student ",
        shape_str(cls_probs->value.shape), " vs teacher ",
        shape_str(teacher_class_probs.shape));
  check(boxes->value.shape == gt_boxes.shape, "detection loss: box shape mismatch, student ",
        shape_str(boxes->value.shape), " vs teacher ", shape_str(gt_boxes.shape));
  detail::check_node_rows_normalized(cls_probs, "detection loss: student probs");

  std::vector<int> labels(teacher_class_probs.rows());
  for (int i = 0; i < teacher_class_probs.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < teacher_class_probs.cols(); ++j)
      if (teacher_class_probs.at(i, j) > teacher_class_probs.at(i, best)) best = j;
    labels[i] = best;
  }

  ad::Node* p_t = g.pick(cls_probs, labels);
  ad::Node* one_minus = g.add_scalar(g.neg(p_t), 1.0);
  ad::Node* modulator = g.pow_const(one_minus, gamma);
  ad::Node* log_pt = g.log_(g.clamp_min(p_t, 1e-300));
  ad::Node* focal = g.mean_all(g.scale(g.mul(modulator, log_pt), -alpha));
  ad::Node* loc = g.l1_mean(boxes, gt_boxes);
  return g.add(focal, loc);
}

// Spatial corresponding distillation:
//   sum_{v,i,j} ||F_s - F_t||^2  +  lambda_cross * sum_{v1 != v2} D(pool_s^v1, pool_s^v2)
// where pooling is the per-view channel mean. D defaults to the mean squared
// distance (a dissimilarity, so minimizing enforces cross-view consistency);
// the literal cosine-similarity reading is available behind a flag.
inline ad::Node* spatial_corresponding_loss(ad::Graph& g,
                                            const std::vector<ad::Node*>& student_views,
                                            const std::vector<Tensor>& teacher_views,
                                            double lambda_cross, bool cosine = false) {
  check(!student_views.empty(), "spatial loss: need at least one view");
  check(student_views.size() == teacher_views.size(), "spatial loss: view count mismatch, ",
        student_views.size(), " vs ", teacher_views.size());

  ad::Node* total = nullptr;
  for (size_t v = 0; v < student_views.size(); ++v) {
    check(student_views[v]->value.shape == teacher_views[v].shape,
          "spatial loss: view ", v, " shape mismatch ",
          shape_str(student_views[v]->value.shape), " vs ", shape_str(teacher_views[v].shape));
    ad::Node* term = g.sq_diff_sum(student_views[v], teacher_views[v]);
    total = total ? g.add(total, term) : term;
  }

  if (student_views.size() >= 2 && lambda_cross != 0.0) {
    std::vector<ad::Node*> pooled;
    for (ad::Node* fs : student_views) pooled.push_back(g.mean_rows(fs));
    ad::Node* cross = nullptr;
    for (size_t v1 = 0; v1 < pooled.size(); ++v1)
      for (size_t v2 = 0; v2 < pooled.size(); ++v2) {
        if (v1 == v2) continue;
        ad::Node* d;
        if (cosine) {
          ad::Node* dot = g.sum_all(g.mul(pooled[v1], pooled[v2]));
          ad::Node* nx = g.sqrt_(g.add_scalar(g.sum_all(g.mul(pooled[v1], pooled[v1])), 1e-12));
          ad::Node* ny = g.sqrt_(g.add_scalar(g.sum_all(g.mul(pooled[v2], pooled[v2])), 1e-12));
          d = g.mul(dot, g.recip(g.mul(nx, ny)));
        } else {
          ad::Node* diff = g.sub(pooled[v1], pooled[v2]);
          d = g.mean_all(g.mul(diff, diff));
        }
        cross = cross ? g.add(cross, d) : d;
      }
    total = g.add(total, g.scale(cross, lambda_cross));
  }
  return total;
}

// Mean squared difference of per-view pooled prediction vectors over all
// unordered view pairs; 0 by definition with fewer than two views.
inline ad::Node* multiview_consistency(ad::Graph& g,
                                       const std::vector<ad::Node*>& per_view_pooled) {
  if (per_view_pooled.size() < 2) return g.constant(Tensor({1, 1}));
  ad::Node* acc = nullptr;
  int pairs = 0;
  for (size_t v1 = 0; v1 < per_view_pooled.size(); ++v1)
    for (size_t v2 = v1 + 1; v2 < per_view_pooled.size(); ++v2) {
      check(per_view_pooled[v1]->value.shape == per_view_pooled[v2]->value.shape,
            "multiview loss: pooled shape mismatch between views");
      ad::Node* diff = g.sub(per_view_pooled[v1], per_view_pooled[v2]);
      ad::Node* d = g.mean_all(g.mul(diff, diff));
      acc = acc ? g.add(acc, d) : d;
      ++pairs;
    }
  return g.scale(acc, 1.0 / pairs);
}

// Student-side distributions aligned to the teacher's: detector classes, the
// left/right and above/below relation distributions, and the pooled depth-bin
// histogram. Sum of KL(teacher || student) over the components; inputs must
// be normalized.
struct FeatureAlignmentInputs {
  ad::Node* det_probs = nullptr;        // [n, C]
  ad::Node* left_right_probs = nullptr; // [1, 2]
  ad::Node* above_below_probs = nullptr;// [1, 2]
  ad::Node* depth_hist_probs = nullptr; // [1, B]
};

struct FeatureAlignmentTargets {
  Tensor det_probs;
  Tensor left_right;
  Tensor above_below;
  Tensor depth_hist;
};

inline ad::Node* feature_alignment(ad::Graph& g, const FeatureAlignmentInputs& student,
                                   const FeatureAlignmentTargets& teacher) {
  ad::Node* total = nullptr;
  auto add_kl = [&](ad::Node* s, const Tensor& t, const char* what) {
    if (s == nullptr || t.numel() == 0) return;  // component absent for this sample
    check(s->value.shape == t.shape, "feature alignment: ", what, " shape mismatch");
    detail::check_rows_normalized(t, what);
    detail::check_node_rows_normalized(s, what);
    ad::Node* term = g.kl_const_rows(t, g.log_(g.clamp_min(s, 1e-300)));
    total = total ? g.add(total, term) : term;
  };
  add_kl(student.det_probs, teacher.det_probs, "detector distribution");
  add_kl(student.left_right_probs, teacher.left_right, "left/right distribution");
  add_kl(student.above_below_probs, teacher.above_below, "above/below distribution");
  add_kl(student.depth_hist_probs, teacher.depth_hist, "depth histogram");
  check(total != nullptr, "feature alignment: no components provided");
  return total;
}

// Eq-style uncertainty weighting: sum_i exp(-2 s_i)/2 * L_i + s_i with
// s_i = log sigma_i. Differentiable in both the losses and the sigmas.
inline ad::Node* uncertainty_total(ad::Graph& g, const std::map<std::string, ad::Node*>& bundle,
                                   const std::map<std::string, ad::Node*>& log_sigma) {
  check(!bundle.empty(), "uncertainty total: empty bundle");
  ad::Node* total = nullptr;
  for (const auto& [task, loss] : bundle) {
    auto it = log_sigma.find(task);
    check(it != log_sigma.end(), "uncertainty total: missing log_sigma for task '", task, "'");
    ad::Node* w = g.scale(g.exp_(g.scale(it->second, -2.0)), 0.5);  // 1/(2 sigma^2)
    ad::Node* term = g.add(g.mul(w, loss), it->second);
    total = total ? g.add(total, term) : term;
  }
  return total;
}

inline ad::Node* static_total(ad::Graph& g, const std::map<std::string, ad::Node*>& bundle,
                              const std::map<std::string, double>& weights) {
  check(!bundle.empty(), "static total: empty bundle");
  ad::Node* total = nullptr;
  for (const auto& [task, loss] : bundle) {
    auto it = weights.find(task);
    check(it != weights.end(), "static total: missing weight for task '", task, "'");
    check(it->second >= 0.0, "static total: weight for '", task, "' must be >= 0");
    ad::Node* term = g.scale(loss, it->second);
    total = total ? g.add(total, term) : term;
  }
  return total;
}

}  // namespace losses
}  // namespace skd
