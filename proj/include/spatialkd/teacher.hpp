#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/render.hpp"
#include "spatialkd/rng.hpp"
#include "spatialkd/scene.hpp"
#include "spatialkd/tensor.hpp"
#include "spatialkd/tokenizer.hpp"

namespace skd {

// Per-sample teacher supervision produced by the programmatic oracle teacher:
// exact answer tokens with label-smoothed soft targets, spatial feature maps
// projected to the student head shape, per-pixel depth bin distributions, and
// per-object detection targets.
struct TeacherSignal {
  std::vector<int> answer_token_ids;        // answer words + EOS
  Tensor soft_targets;                      // [|A|, vocab], rows sum to 1
  std::vector<Tensor> spatial_features;     // per view, [spat_h*spat_w, spat_c]
  std::vector<Tensor> depth_bin_dist;       // per view, [h*w, bins], rows sum to 1
  Tensor det_class_probs;                   // [n_objects, n_categories], rows sum to 1
  Tensor det_boxes;                         // [n_objects, 7] normalized center/size/yaw
};

struct TeacherConfig {
  double smoothing_eps = 0.05;   // label smoothing for answer soft targets
  double depth_smoothing = 0.0;  // optional smoothing of depth bin one-hots
  int depth_bins = 8;
  double d_max = 0.0;            // 0 => scene diagonal
  int spat_h = 4;
  int spat_w = 4;
  int spat_c = 8;
  uint64_t projection_seed = 12345;  // seeds the fixed channel-mix matrix
};

namespace teacher_detail {

// Fixed channel-mix matrix [in_c, out_c]; deterministic in the seed, scaled
// like 1/sqrt(in_c) so projected features stay O(1).
inline Tensor projection_matrix(int in_c, int out_c, uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x7e4c));
  Tensor m({in_c, out_c});
  double s = 1.0 / std::sqrt(static_cast<double>(in_c));
  for (auto& v : m.data) v = rng.normal() * s;
  return m;
}

}  // namespace teacher_detail

inline int depth_bin_index(double depth, double d_max, int bins) {
  int idx = static_cast<int>(std::floor(depth / d_max * bins));
  return std::min(std::max(idx, 0), bins - 1);
}

// Block-average spatial pooling followed by the fixed channel mix. This is the
// teacher-side stand-in for real encoder features, matching the student
// spatial head output shape.
inline Tensor project_spatial_features(const ViewRender& view, const TeacherConfig& cfg) {
  check(view.h % cfg.spat_h == 0 && view.w % cfg.spat_w == 0,
        "teacher: view grid ", view.h, "x", view.w, " not divisible by spatial shape ",
        cfg.spat_h, "x", cfg.spat_w);
  const int bh = view.h / cfg.spat_h, bw = view.w / cfg.spat_w;
  Tensor pooled({cfg.spat_h * cfg.spat_w, view.c});
  for (int i = 0; i < cfg.spat_h; ++i)
    for (int j = 0; j < cfg.spat_w; ++j) {
      for (int bi = 0; bi < bh; ++bi)
        for (int bj = 0; bj < bw; ++bj) {
          int cell = view.cell(i * bh + bi, j * bw + bj);
          for (int c = 0; c < view.c; ++c)
            pooled.at(i * cfg.spat_w + j, c) += view.features.at(cell, c);
        }
      for (int c = 0; c < view.c; ++c) pooled.at(i * cfg.spat_w + j, c) /= bh * bw;
    }
  Tensor mix = teacher_detail::projection_matrix(view.c, cfg.spat_c, cfg.projection_seed);
  Tensor out({cfg.spat_h * cfg.spat_w, cfg.spat_c});
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < cfg.spat_c; ++c) {
      double acc = 0.0;
      for (int k = 0; k < view.c; ++k) acc += pooled.at(r, k) * mix.at(k, c);
      out.at(r, c) = acc;
    }
  return out;
}

// Label-smoothed one-hot rows: correct token mass (1-eps) + eps/V.
inline Tensor smoothed_token_targets(const std::vector<int>& token_ids, int vocab_size,
                                     double eps) {
  Tensor t({static_cast<int>(token_ids.size()), vocab_size});
  for (int i = 0; i < t.rows(); ++i) {
    check(token_ids[i] >= 0 && token_ids[i] < vocab_size, "teacher: token id out of range");
    for (int j = 0; j < vocab_size; ++j) t.at(i, j) = eps / vocab_size;
    t.at(i, token_ids[i]) += 1.0 - eps;
  }
  return t;
}

inline TeacherSignal teacher_signals(const SceneGraph& scene,
                                     const std::vector<ViewRender>& views, const QASample& qa,
                                     const Vocab& vocab, const RenderConfig& render_cfg,
                                     const TeacherConfig& cfg) {
  TeacherSignal sig;
  double d_max = cfg.d_max > 0.0 ? cfg.d_max : scene.diagonal();

  // Answer tokens; every template word must be in the vocabulary.
  std::vector<int> ids = vocab.encode_words(qa.answer_text);
  for (size_t i = 0; i < ids.size(); ++i)
    check(ids[i] != Vocab::kUnk, "teacher: answer word missing from vocabulary in '",
          qa.answer_text, "'");
  ids.push_back(Vocab::kEos);
  sig.answer_token_ids = ids;
  sig.soft_targets = smoothed_token_targets(ids, vocab.size(), cfg.smoothing_eps);

  for (const auto& view : views) {
    sig.spatial_features.push_back(project_spatial_features(view, cfg));
    Tensor bins({view.h * view.w, cfg.depth_bins});
    for (int cell = 0; cell < view.h * view.w; ++cell) {
      int b = depth_bin_index(view.depth.at(cell, 0), d_max, cfg.depth_bins);
      for (int j = 0; j < cfg.depth_bins; ++j)
        bins.at(cell, j) = cfg.depth_smoothing / cfg.depth_bins;
      bins.at(cell, b) += 1.0 - cfg.depth_smoothing;
    }
    sig.depth_bin_dist.push_back(std::move(bins));
  }

  const int n_cat = static_cast<int>(render_cfg.catalog.size());
  const int n_obj = static_cast<int>(scene.objects.size());
  sig.det_class_probs = Tensor({n_obj, n_cat});
  sig.det_boxes = Tensor({n_obj, 7});
  for (int i = 0; i < n_obj; ++i) {
    const SceneObject& o = scene.objects[i];
    sig.det_class_probs.at(i, render_cfg.category_index(o.category)) = 1.0;
    sig.det_boxes.at(i, 0) = (o.center.x - scene.room_min.x) / scene.room_size.x;
    sig.det_boxes.at(i, 1) = (o.center.y - scene.room_min.y) / scene.room_size.y;
    sig.det_boxes.at(i, 2) = (o.center.z - scene.room_min.z) / scene.room_size.z;
    sig.det_boxes.at(i, 3) = o.size.x / scene.room_size.x;
    sig.det_boxes.at(i, 4) = o.size.y / scene.room_size.y;
    sig.det_boxes.at(i, 5) = o.size.z / scene.room_size.z;
    sig.det_boxes.at(i, 6) = o.yaw / (2.0 * 3.14159265358979323846);
  }
  return sig;
}

// Ground-truth binary relation distributions for a pair of objects, used by
// the feature-alignment loss: [left-of, right-of] in x and [above, below] in z.
struct PairRelationDists {
  Tensor left_right;  // [1,2]
  Tensor above_below; // [1,2]
};

inline PairRelationDists pair_relation_dists(const SceneGraph& scene, int id_a, int id_b) {
  const SceneObject& a = scene.object_by_id(id_a);
  const SceneObject& b = scene.object_by_id(id_b);
  PairRelationDists d;
  d.left_right = Tensor({1, 2});
  d.above_below = Tensor({1, 2});
  d.left_right.at(0, a.center.x < b.center.x ? 0 : 1) = 1.0;
  d.above_below.at(0, a.center.z > b.center.z ? 0 : 1) = 1.0;
  return d;
}

}  // namespace skd
