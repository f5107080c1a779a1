#pragma once

#include <string>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/scene.hpp"
#include "spatialkd/tensor.hpp"

namespace skd {

// Orthographic viewing directions. Top looks down -z over the (x,y) plane,
// Front looks along +y over (x,z), Side looks along +x over (y,z).
enum class ViewAxis { Top = 0, Front = 1, Side = 2 };

inline const char* view_axis_name(ViewAxis a) {
  switch (a) {
    case ViewAxis::Top: return "top";
    case ViewAxis::Front: return "front";
    case ViewAxis::Side: return "side";
  }
  return "?";
}

struct RenderConfig {
  int grid_h = 16;
  int grid_w = 16;
  std::vector<std::string> catalog{"table", "chair", "cabinet", "box", "window", "bed"};

  int channels() const { return 2 + static_cast<int>(catalog.size()); }

  int category_index(const std::string& cat) const {
    for (size_t i = 0; i < catalog.size(); ++i)
      if (catalog[i] == cat) return static_cast<int>(i);
    fail("render: category '", cat, "' not in catalog");
  }
};

// Coarse orthographic render: per-cell depth to the nearest object surface
// along the view axis, plus a feature grid of
//   [occupancy, normalized depth, category one-hot...].
// Object silhouettes use the yaw-expanded AABB; cells with no object hit the
// room boundary at the far plane.
struct ViewRender {
  int view_id = 0;
  ViewAxis axis = ViewAxis::Top;
  Vec3 camera_pos;
  double far_plane = 0.0;
  int h = 0, w = 0, c = 0;
  Tensor features;  // [h*w, c]
  Tensor depth;     // [h*w, 1], meters

  int cell(int row, int col) const { return row * w + col; }
};

inline ViewRender render_view(const SceneGraph& scene, ViewAxis axis, int view_id,
                              const RenderConfig& cfg) {
  ViewRender r;
  r.view_id = view_id;
  r.axis = axis;
  r.h = cfg.grid_h;
  r.w = cfg.grid_w;
  r.c = cfg.channels();
  r.features = Tensor({r.h * r.w, r.c});

  const Vec3& rm = scene.room_min;
  const Vec3& rs = scene.room_size;
  switch (axis) {
    case ViewAxis::Top:
      r.far_plane = rs.z;
      r.camera_pos = {rm.x + 0.5 * rs.x, rm.y + 0.5 * rs.y, rm.z + rs.z};
      break;
    case ViewAxis::Front:
      r.far_plane = rs.y;
      r.camera_pos = {rm.x + 0.5 * rs.x, rm.y, rm.z + 0.5 * rs.z};
      break;
    case ViewAxis::Side:
      r.far_plane = rs.x;
      r.camera_pos = {rm.x, rm.y + 0.5 * rs.y, rm.z + 0.5 * rs.z};
      break;
  }
  r.depth = Tensor::full({r.h * r.w, 1}, r.far_plane);

  for (int row = 0; row < r.h; ++row) {
    for (int col = 0; col < r.w; ++col) {
      // Cell center in the two in-plane coordinates. Rows advance along the
      // second in-plane axis (y for top, z for front/side).
      double u, v;  // u: first axis, v: second axis
      switch (axis) {
        case ViewAxis::Top:
          u = rm.x + (col + 0.5) * rs.x / r.w;
          v = rm.y + (row + 0.5) * rs.y / r.h;
          break;
        case ViewAxis::Front:
          u = rm.x + (col + 0.5) * rs.x / r.w;
          v = rm.z + (row + 0.5) * rs.z / r.h;
          break;
        case ViewAxis::Side:
          u = rm.y + (col + 0.5) * rs.y / r.w;
          v = rm.z + (row + 0.5) * rs.z / r.h;
          break;
      }

      double best = r.far_plane;
      int best_cat = -1;
      for (const auto& o : scene.objects) {
        Vec3 e = o.aabb_extent();
        double d;
        bool covered;
        switch (axis) {
          case ViewAxis::Top:
            covered = std::abs(u - o.center.x) <= 0.5 * e.x &&
                      std::abs(v - o.center.y) <= 0.5 * e.y;
            d = (rm.z + rs.z) - (o.center.z + 0.5 * e.z);
            break;
          case ViewAxis::Front:
            covered = std::abs(u - o.center.x) <= 0.5 * e.x &&
                      std::abs(v - o.center.z) <= 0.5 * e.z;
            d = (o.center.y - 0.5 * e.y) - rm.y;
            break;
          case ViewAxis::Side:
            covered = std::abs(u - o.center.y) <= 0.5 * e.y &&
                      std::abs(v - o.center.z) <= 0.5 * e.z;
            d = (o.center.x - 0.5 * e.x) - rm.x;
            break;
        }
        if (covered && d < best) {
          best = d;
          best_cat = cfg.category_index(o.category);
        }
      }

      int idx = r.cell(row, col);
      r.depth.at(idx, 0) = best;
      if (best_cat >= 0) {
        r.features.at(idx, 0) = 1.0;                 // occupancy
        r.features.at(idx, 2 + best_cat) = 1.0;      // category one-hot
      }
      r.features.at(idx, 1) = best / r.far_plane;    // normalized depth
    }
  }
  return r;
}

// n_views orthographic renders in the fixed order top, front, side.
inline std::vector<ViewRender> render_views(const SceneGraph& scene, int n_views,
                                            const RenderConfig& cfg = {}) {
  check(n_views >= 1 && n_views <= 3, "render_views: n_views must be in [1,3], got ", n_views);
  std::vector<ViewRender> out;
  for (int v = 0; v < n_views; ++v)
    out.push_back(render_view(scene, static_cast<ViewAxis>(v), v, cfg));
  return out;
}

// Dimension of the pooled per-view summary for a given catalog size.
inline constexpr int kFocusBlockCopies = 4;
inline int pooled_feature_dim(int n_cat) {
  return 4 * n_cat + 4 + 5 * n_cat * (n_cat - 1) + 5 * kFocusBlockCopies;
}

// Deterministic pooled summary of one view, consumed by the student's vision
// trunk. Four blocks:
//   per category: [area fraction, centroid row, centroid col, mean depth]
//   global:       [occupancy, depth mean, depth row moment, depth col moment]
//   per ordered category pair (i != j), zero unless both are visible:
//                 [d_col, d_row, |d_col|-|d_row|, planar distance, d_area]
//   focus pair:   the same statistics for the scene's canonical object pair
//                 with the signed entries passed through a saturating
//                 tanh so their polarity stays salient, replicated
//                 kFocusBlockCopies times (zeros when absent)
// Centroids use normalized cell coordinates. All values are region statistics
// of the visible geometry; thresholding and polarity are left to the model.
inline std::vector<double> pooled_view_features(const ViewRender& r, const RenderConfig& cfg,
                                                int focus_cat_a = -1, int focus_cat_b = -1) {
  const int n_cat = static_cast<int>(cfg.catalog.size());
  std::vector<double> out(pooled_feature_dim(n_cat), 0.0);
  const double cells = static_cast<double>(r.h * r.w);
  std::vector<double> area(n_cat, 0.0), row_sum(n_cat, 0.0), col_sum(n_cat, 0.0),
      depth_sum(n_cat, 0.0);
  double occ = 0.0, dmean = 0.0, drow = 0.0, dcol = 0.0;
  for (int row = 0; row < r.h; ++row) {
    double rn = r.h > 1 ? static_cast<double>(row) / (r.h - 1) : 0.0;
    for (int col = 0; col < r.w; ++col) {
      double cn = r.w > 1 ? static_cast<double>(col) / (r.w - 1) : 0.0;
      int idx = r.cell(row, col);
      double nd = r.features.at(idx, 1);
      occ += r.features.at(idx, 0);
      dmean += nd;
      drow += nd * rn;
      dcol += nd * cn;
      for (int c = 0; c < n_cat; ++c) {
        double hit = r.features.at(idx, 2 + c);
        if (hit > 0.0) {
          area[c] += 1.0;
          row_sum[c] += rn;
          col_sum[c] += cn;
          depth_sum[c] += nd;
        }
      }
    }
  }
  for (int c = 0; c < n_cat; ++c) {
    out[4 * c + 0] = area[c] / cells;
    if (area[c] > 0.0) {
      out[4 * c + 1] = row_sum[c] / area[c];
      out[4 * c + 2] = col_sum[c] / area[c];
      out[4 * c + 3] = depth_sum[c] / area[c];
    }
  }
  out[4 * n_cat + 0] = occ / cells;
  out[4 * n_cat + 1] = dmean / cells;
  out[4 * n_cat + 2] = drow / cells;
  out[4 * n_cat + 3] = dcol / cells;

  auto pair_stats = [&](int i, int j, int offset, bool saturate) {
    if (i < 0 || j < 0 || area[i] <= 0.0 || area[j] <= 0.0) return;
    double dc = col_sum[i] / area[i] - col_sum[j] / area[j];
    double dr = row_sum[i] / area[i] - row_sum[j] / area[j];
    double da = (area[i] - area[j]) / cells;
    if (saturate) {
      out[offset + 0] = std::tanh(6.0 * dc);
      out[offset + 1] = std::tanh(6.0 * dr);
      out[offset + 2] = std::tanh(6.0 * (std::abs(dc) - std::abs(dr)));
      out[offset + 3] = std::sqrt(dc * dc + dr * dr);
      out[offset + 4] = std::tanh(12.0 * da);
    } else {
      out[offset + 0] = dc;
      out[offset + 1] = dr;
      out[offset + 2] = std::abs(dc) - std::abs(dr);
      out[offset + 3] = std::sqrt(dc * dc + dr * dr);
      out[offset + 4] = da;
    }
  };

  int base = 4 * n_cat + 4;
  for (int i = 0; i < n_cat; ++i)
    for (int j = 0; j < n_cat; ++j) {
      if (i == j) continue;
      pair_stats(i, j, base, false);
      base += 5;
    }
  for (int rep = 0; rep < kFocusBlockCopies; ++rep) {
    pair_stats(focus_cat_a, focus_cat_b, base, true);
    base += 5;
  }
  return out;
}

}  // namespace skd
