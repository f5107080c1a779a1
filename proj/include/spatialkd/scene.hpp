#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/rng.hpp"

namespace skd {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline double distance(const Vec3& a, const Vec3& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Objects are yawed boxes; all spatial predicates and renders work on the
// yaw-expanded axis-aligned extents, which keeps every oracle closed-form.
struct SceneObject {
  int id = 0;
  std::string category;
  Vec3 center;
  Vec3 size;   // full extents before yaw expansion
  double yaw = 0.0;  // radians in [0, 2pi)

  // Axis-aligned extents of the yawed footprint.
  Vec3 aabb_extent() const {
    double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
    return {size.x * c + size.y * s, size.x * s + size.y * c, size.z};
  }

  double volume() const { return size.x * size.y * size.z; }
};

struct SceneGraph {
  int scene_id = 0;
  Vec3 room_min;
  Vec3 room_size;
  std::vector<SceneObject> objects;

  double diagonal() const {
    return std::sqrt(room_size.x * room_size.x + room_size.y * room_size.y +
                     room_size.z * room_size.z);
  }

  const SceneObject& object_by_id(int id) const {
    for (const auto& o : objects)
      if (o.id == id) return o;
    fail("scene ", scene_id, ": no object with id ", id);
  }
};

// Euclidean separation between the yaw-expanded AABBs; 0 when touching or
// overlapping.
inline double box_gap(const SceneObject& a, const SceneObject& b) {
  Vec3 ea = a.aabb_extent(), eb = b.aabb_extent();
  double gx = std::max(0.0, std::abs(a.center.x - b.center.x) - 0.5 * (ea.x + eb.x));
  double gy = std::max(0.0, std::abs(a.center.y - b.center.y) - 0.5 * (ea.y + eb.y));
  double gz = std::max(0.0, std::abs(a.center.z - b.center.z) - 0.5 * (ea.z + eb.z));
  return std::sqrt(gx * gx + gy * gy + gz * gz);
}

// Penetration depth of the two AABBs: 0 unless they overlap on all axes, in
// which case it is the smallest axis overlap.
inline double box_penetration(const SceneObject& a, const SceneObject& b) {
  Vec3 ea = a.aabb_extent(), eb = b.aabb_extent();
  double ox = 0.5 * (ea.x + eb.x) - std::abs(a.center.x - b.center.x);
  double oy = 0.5 * (ea.y + eb.y) - std::abs(a.center.y - b.center.y);
  double oz = 0.5 * (ea.z + eb.z) - std::abs(a.center.z - b.center.z);
  if (ox <= 0.0 || oy <= 0.0 || oz <= 0.0) return 0.0;
  return std::min({ox, oy, oz});
}

inline bool box_inside_room(const SceneGraph& scene, const SceneObject& o, double slack = 1e-9) {
  Vec3 e = o.aabb_extent();
  auto inside = [&](double c, double ext, double lo, double sz) {
    return c - 0.5 * ext >= lo - slack && c + 0.5 * ext <= lo + sz + slack;
  };
  return inside(o.center.x, e.x, scene.room_min.x, scene.room_size.x) &&
         inside(o.center.y, e.y, scene.room_min.y, scene.room_size.y) &&
         inside(o.center.z, e.z, scene.room_min.z, scene.room_size.z);
}

// ---------------------------------------------------------------------------
// Relation oracle
// ---------------------------------------------------------------------------

enum class Relation { Proximity, Contact, Size, Orientation, Describe };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Proximity: return "proximity";
    case Relation::Contact: return "contact";
    case Relation::Size: return "size";
    case Relation::Orientation: return "orientation";
    case Relation::Describe: return "describe";
  }
  return "?";
}

inline Relation relation_from_name(const std::string& s) {
  if (s == "proximity") return Relation::Proximity;
  if (s == "contact") return Relation::Contact;
  if (s == "size") return Relation::Size;
  if (s == "orientation") return Relation::Orientation;
  if (s == "describe") return Relation::Describe;
  fail("unknown relation '", s, "'");
}

struct RelationThresholds {
  double proximity_threshold = 1.0;  // meters, center distance
  double contact_eps = 0.02;         // meters, box gap
};

enum class Sector { Left, Right, Front, Behind };

inline const char* sector_word(Sector s) {
  switch (s) {
    case Sector::Left: return "left";
    case Sector::Right: return "right";
    case Sector::Front: return "front";
    case Sector::Behind: return "behind";
  }
  return "?";
}

// Ground-truth spatial predicates. QA answers are produced by these and every
// emitted sample is re-checked against them.
struct RelationOracle {
  RelationThresholds thr;

  bool near(const SceneObject& a, const SceneObject& b) const {
    return distance(a.center, b.center) < thr.proximity_threshold;
  }

  bool touching(const SceneObject& a, const SceneObject& b) const {
    return box_gap(a, b) <= thr.contact_eps;
  }

  // true if a is strictly larger than b by volume
  bool larger(const SceneObject& a, const SceneObject& b) const {
    return a.volume() > b.volume();
  }

  // Bearing of a relative to b in the room frame, quantized to 4 sectors.
  // +x is right, +y is front; the dominant horizontal axis wins, x on ties.
  Sector sector_of(const SceneObject& a, const SceneObject& b) const {
    double dx = a.center.x - b.center.x;
    double dy = a.center.y - b.center.y;
    if (std::abs(dx) >= std::abs(dy)) return dx < 0.0 ? Sector::Left : Sector::Right;
    return dy > 0.0 ? Sector::Front : Sector::Behind;
  }
};

// ---------------------------------------------------------------------------
// QA templates
// ---------------------------------------------------------------------------

struct QASample {
  int sample_id = 0;
  int scene_id = 0;
  Relation relation = Relation::Describe;
  std::string question_text;
  std::string answer_text;
  std::vector<int> referenced_object_ids;
};

namespace qa_templates {

inline std::string proximity_question(const std::string& a, const std::string& b) {
  return "is the " + a + " near the " + b;
}
inline std::string proximity_answer(bool yes, const std::string& a, const std::string& b) {
  return yes ? "yes the " + a + " is near the " + b : "no the " + a + " is not near the " + b;
}
inline std::string contact_question(const std::string& a, const std::string& b) {
  return "is the " + a + " touching the " + b;
}
inline std::string contact_answer(bool yes, const std::string& a, const std::string& b) {
  return yes ? "yes the " + a + " is touching the " + b
             : "no the " + a + " is not touching the " + b;
}
inline std::string size_question(const std::string& a, const std::string& b) {
  return "which is larger the " + a + " or the " + b;
}
// Ordinal phrasing: naming the winner category would let the answer be copied
// from the question without consulting the scene.
inline std::string size_answer(bool first_is_larger) {
  return first_is_larger ? "the first one is larger" : "the second one is larger";
}
// Asked along one axis; the generator picks the pair's dominant axis so the
// sector answer and the asked axis agree. The sector words themselves must
// not appear in the question, or the answer degenerates into a copy task.
inline std::string orientation_question_lr(const std::string& a, const std::string& b) {
  return "what side of the " + b + " is the " + a;
}
inline std::string orientation_question_fb(const std::string& a, const std::string& b) {
  return "what direction of the " + b + " is the " + a;
}
inline std::string orientation_answer(Sector s, const std::string& a, const std::string& b) {
  // The sector word leads so the decisive token is generated first.
  (void)a;
  return std::string(sector_word(s)) + " of the " + b;
}
inline std::string describe_question() { return "describe the scene"; }
inline std::string describe_answer(const std::vector<std::string>& categories) {
  // Mentions at most four objects so answers stay within twelve words.
  size_t n = std::min<size_t>(categories.size(), 4);
  std::string out = "the room contains a " + categories[0];
  for (size_t i = 1; i < n; ++i) {
    out += (i + 1 == n) ? " and a " + categories[i] : " a " + categories[i];
  }
  return out;
}

}  // namespace qa_templates

// Recomputes the ground-truth answer for a sample from its scene. Used both
// by make_qa and by the round-trip invariant check.
inline std::string oracle_answer(const SceneGraph& scene, const QASample& qa,
                                 const RelationOracle& oracle) {
  if (qa.relation == Relation::Describe) {
    std::vector<std::string> cats;
    for (const auto& o : scene.objects) cats.push_back(o.category);
    return qa_templates::describe_answer(cats);
  }
  check(qa.referenced_object_ids.size() == 2, "oracle_answer: relational sample needs 2 refs");
  const SceneObject& a = scene.object_by_id(qa.referenced_object_ids[0]);
  const SceneObject& b = scene.object_by_id(qa.referenced_object_ids[1]);
  switch (qa.relation) {
    case Relation::Proximity:
      return qa_templates::proximity_answer(oracle.near(a, b), a.category, b.category);
    case Relation::Contact:
      return qa_templates::contact_answer(oracle.touching(a, b), a.category, b.category);
    case Relation::Size:
      return qa_templates::size_answer(oracle.larger(a, b));
    case Relation::Orientation:
      return qa_templates::orientation_answer(oracle.sector_of(a, b), a.category, b.category);
    default:
      fail("oracle_answer: unreachable");
  }
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

struct SceneConfig {
  Vec3 room_size{4.0, 4.0, 2.5};
  int min_objects = 2;
  int max_objects = 3;
  std::vector<std::string> catalog{"table", "chair", "cabinet", "box", "window", "bed"};
  double min_extent = 0.3;
  double max_extent = 0.9;
  double overlap_tol = 0.0;  // max allowed AABB penetration depth (m)
  int max_attempts = 4000;   // per object
  int layout_attempts = 400; // budget for the pair-layout constraint before falling back
  bool distinct_categories = true;
  // Pair-layout mix for objects 0 and 1; balances contact/proximity answers.
  double p_touching = 0.25;
  double p_near = 0.30;
  double p_far = 0.30;  // remainder: unconstrained placement
  RelationThresholds thresholds;

  void validate() const {
    check(room_size.x > 0 && room_size.y > 0 && room_size.z > 0, "scene config: bad room size");
    check(min_objects >= 1 && max_objects >= min_objects, "scene config: bad object count range");
    check(catalog.size() >= 6, "scene config: catalog must have >= 6 categories, has ",
          catalog.size());
    check(min_extent > 0 && max_extent >= min_extent, "scene config: bad extent range");
    check(max_extent < std::min({room_size.x, room_size.y, room_size.z}),
          "scene config: objects cannot exceed the room");
    check(!distinct_categories || max_objects <= static_cast<int>(catalog.size()),
          "scene config: distinct categories need catalog >= max_objects");
  }
};

namespace detail {

// Floats for windows, rests on the floor otherwise.
inline double sample_center_z(Rng& rng, const SceneConfig& cfg, const std::string& category,
                              double ext_z) {
  if (category == "window")
    return rng.uniform(0.5 * cfg.room_size.z, cfg.room_size.z - 0.5 * ext_z);
  return 0.5 * ext_z;
}

inline bool fits_and_clear(const SceneGraph& scene, const SceneObject& cand, double overlap_tol,
                           int skip_id = -1) {
  if (!box_inside_room(scene, cand)) return false;
  for (const auto& o : scene.objects) {
    if (o.id == cand.id || o.id == skip_id) continue;
    if (box_penetration(o, cand) > overlap_tol) return false;
  }
  return true;
}

}  // namespace detail

// Deterministic rejection-sampling scene generator. Throws "scene infeasible"
// when the attempt budget is exhausted.
inline SceneGraph generate_scene(uint64_t seed, const SceneConfig& cfg, int scene_id = 0) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0x5ce9e));
  SceneGraph scene;
  scene.scene_id = scene_id;
  scene.room_min = {0, 0, 0};
  scene.room_size = cfg.room_size;

  int n = cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);

  // Categories.
  std::vector<std::string> cats;
  if (cfg.distinct_categories) {
    std::vector<std::string> pool = cfg.catalog;
    for (int i = 0; i < n; ++i) {
      int j = rng.uniform_int(static_cast<int>(pool.size()));
      cats.push_back(pool[j]);
      pool.erase(pool.begin() + j);
    }
  } else {
    for (int i = 0; i < n; ++i) cats.push_back(cfg.catalog[rng.uniform_int(
        static_cast<int>(cfg.catalog.size()))]);
  }

  auto sample_shape = [&](int id, const std::string& cat) {
    SceneObject o;
    o.id = id;
    o.category = cat;
    o.size = {rng.uniform(cfg.min_extent, cfg.max_extent),
              rng.uniform(cfg.min_extent, cfg.max_extent),
              rng.uniform(cfg.min_extent, cfg.max_extent)};
    o.yaw = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return o;
  };

  auto place_uniform = [&](SceneObject& o) {
    Vec3 e = o.aabb_extent();
    o.center.x = rng.uniform(0.5 * e.x, cfg.room_size.x - 0.5 * e.x);
    o.center.y = rng.uniform(0.5 * e.y, cfg.room_size.y - 0.5 * e.y);
    o.center.z = detail::sample_center_z(rng, cfg, o.category, e.z);
  };

  auto place_unconstrained = [&](SceneObject& o) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      place_uniform(o);
      if (detail::fits_and_clear(scene, o, cfg.overlap_tol)) return;
    }
    fail("scene infeasible: seed ", seed, " exhausted ", cfg.max_attempts,
         " placement attempts for object ", o.id);
  };

  // Object 0: unconstrained.
  SceneObject first = sample_shape(0, cats[0]);
  place_unconstrained(first);
  scene.objects.push_back(first);

  // Object 1: layout-constrained relative to object 0 when possible. The
  // constraint gets a bounded budget; infeasible geometry falls back to an
  // unconstrained spot.
  if (n >= 2) {
    double u = rng.uniform();
    enum class Layout { Touching, Near, Far, Random } layout;
    if (u < cfg.p_touching) layout = Layout::Touching;
    else if (u < cfg.p_touching + cfg.p_near) layout = Layout::Near;
    else if (u < cfg.p_touching + cfg.p_near + cfg.p_far) layout = Layout::Far;
    else layout = Layout::Random;

    SceneObject second = sample_shape(1, cats[1]);
    const RelationThresholds& thr = cfg.thresholds;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.layout_attempts && !placed; ++attempt) {
      Vec3 e0 = scene.objects[0].aabb_extent();
      Vec3 e1 = second.aabb_extent();
      switch (layout) {
        case Layout::Touching: {
          // Adjacent along a random horizontal axis, gap within contact_eps.
          double delta = rng.uniform(0.0, 0.4 * thr.contact_eps);
          double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
          second.center = scene.objects[0].center;
          if (rng.uniform() < 0.5)
            second.center.x += sign * (0.5 * (e0.x + e1.x) + delta);
          else
            second.center.y += sign * (0.5 * (e0.y + e1.y) + delta);
          second.center.z = detail::sample_center_z(rng, cfg, second.category, e1.z);
          break;
        }
        case Layout::Near: {
          double d = rng.uniform(0.35 * thr.proximity_threshold, 0.9 * thr.proximity_threshold);
          double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
          second.center.x = scene.objects[0].center.x + d * std::cos(ang);
          second.center.y = scene.objects[0].center.y + d * std::sin(ang);
          second.center.z = detail::sample_center_z(rng, cfg, second.category, e1.z);
          break;
        }
        case Layout::Far:
        case Layout::Random:
          place_uniform(second);
          break;
      }
      if (!detail::fits_and_clear(scene, second, cfg.overlap_tol)) continue;
      double cd = distance(scene.objects[0].center, second.center);
      if (layout == Layout::Near && (cd >= thr.proximity_threshold ||
                                     box_gap(scene.objects[0], second) <= thr.contact_eps))
        continue;  // must be near but not touching
      if (layout == Layout::Far && cd < 1.15 * thr.proximity_threshold) continue;
      placed = true;
    }
    if (!placed) place_unconstrained(second);
    scene.objects.push_back(second);
  }

  // Remaining objects: unconstrained.
  for (int i = 2; i < n; ++i) {
    SceneObject o = sample_shape(i, cats[i]);
    place_unconstrained(o);
    scene.objects.push_back(o);
  }

  return scene;
}

// Emits one sample per relation category (plus describe) for scenes with at
// least two objects; single-object scenes yield only a describe sample.
inline std::vector<QASample> make_qa(const SceneGraph& scene, uint64_t seed,
                                     const RelationThresholds& thr = {}) {
  Rng rng(Rng::derive(seed, 0x9a5e));
  RelationOracle oracle{thr};
  std::vector<QASample> out;
  const int n = static_cast<int>(scene.objects.size());

  auto push = [&](Relation rel, int ia, int ib, const std::string& q) {
    QASample s;
    s.scene_id = scene.scene_id;
    s.relation = rel;
    s.question_text = q;
    if (ia >= 0) s.referenced_object_ids = {scene.objects[ia].id, scene.objects[ib].id};
    s.answer_text = oracle_answer(scene, s, oracle);
    out.push_back(std::move(s));
  };

  if (n >= 2) {
    // Every relational question targets the scene's canonical pair (0,1) in
    // canonical order. The pair's geometry is layout-seeded, so both answer
    // polarities occur; the featurizer exposes the same pair's statistics.
    const std::string& ca = scene.objects[0].category;
    const std::string& cb = scene.objects[1].category;
    push(Relation::Proximity, 0, 1, qa_templates::proximity_question(ca, cb));
    push(Relation::Contact, 0, 1, qa_templates::contact_question(ca, cb));
    push(Relation::Size, 0, 1, qa_templates::size_question(ca, cb));
    double dx = std::abs(scene.objects[0].center.x - scene.objects[1].center.x);
    double dy = std::abs(scene.objects[0].center.y - scene.objects[1].center.y);
    push(Relation::Orientation, 0, 1,
         dx >= dy ? qa_templates::orientation_question_lr(ca, cb)
                  : qa_templates::orientation_question_fb(ca, cb));
  }
  push(Relation::Describe, -1, -1, qa_templates::describe_question());
  (void)rng;
  return out;
}

}  // namespace skd
