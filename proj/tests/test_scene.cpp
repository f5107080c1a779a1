#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "spatialkd/render.hpp"
#include "spatialkd/scene.hpp"
#include "spatialkd/teacher.hpp"
#include "spatialkd/tokenizer.hpp"

using namespace skd;

namespace {

SceneObject make_box(int id, const std::string& cat, Vec3 center, Vec3 size, double yaw = 0.0) {
  SceneObject o;
  o.id = id;
  o.category = cat;
  o.center = center;
  o.size = size;
  o.yaw = yaw;
  return o;
}

SceneGraph empty_room() {
  SceneGraph s;
  s.room_min = {0, 0, 0};
  s.room_size = {4, 4, 2.5};
  return s;
}

}  // namespace

TEST_CASE("generate_scene: max_objects=1 yields one object inside bounds") {
  SceneConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  SceneGraph s = generate_scene(0, cfg);
  REQUIRE(s.objects.size() == 1);
  CHECK(box_inside_room(s, s.objects[0]));
}

TEST_CASE("generate_scene: deterministic per seed") {
  SceneConfig cfg;
  SceneGraph a = generate_scene(42, cfg);
  SceneGraph b = generate_scene(42, cfg);
  REQUIRE(a.objects.size() == b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].category == b.objects[i].category);
    CHECK(a.objects[i].center.x == b.objects[i].center.x);
    CHECK(a.objects[i].center.y == b.objects[i].center.y);
    CHECK(a.objects[i].center.z == b.objects[i].center.z);
    CHECK(a.objects[i].yaw == b.objects[i].yaw);
  }
  SceneGraph c = generate_scene(43, cfg);
  bool differs = a.objects.size() != c.objects.size();
  if (!differs) differs = a.objects[0].center.x != c.objects[0].center.x;
  CHECK(differs);
}

TEST_CASE("generate_scene: 5 objects all contained, ids unique, no interpenetration") {
  SceneConfig cfg;
  cfg.min_objects = 5;
  cfg.max_objects = 5;
  cfg.distinct_categories = true;
  SceneGraph s = generate_scene(7, cfg);
  REQUIRE(s.objects.size() == 5);
  std::set<int> ids;
  for (const auto& o : s.objects) {
    ids.insert(o.id);
    // independent containment oracle: corner arithmetic on the expanded AABB
    Vec3 e = o.aabb_extent();
    CHECK(o.center.x - 0.5 * e.x >= -1e-9);
    CHECK(o.center.x + 0.5 * e.x <= s.room_size.x + 1e-9);
    CHECK(o.center.y - 0.5 * e.y >= -1e-9);
    CHECK(o.center.y + 0.5 * e.y <= s.room_size.y + 1e-9);
    CHECK(o.center.z - 0.5 * e.z >= -1e-9);
    CHECK(o.center.z + 0.5 * e.z <= s.room_size.z + 1e-9);
    CHECK(o.size.x > 0);
    CHECK(o.size.y > 0);
    CHECK(o.size.z > 0);
  }
  CHECK(ids.size() == 5);
  for (size_t i = 0; i < s.objects.size(); ++i)
    for (size_t j = i + 1; j < s.objects.size(); ++j)
      CHECK(box_penetration(s.objects[i], s.objects[j]) <= cfg.overlap_tol + 1e-9);
}

TEST_CASE("generate_scene: infeasible config throws") {
  SceneConfig cfg;
  cfg.min_objects = 5;
  cfg.max_objects = 5;
  cfg.room_size = {1.2, 1.2, 2.5};  // five 0.4-1.2 m objects cannot fit
  cfg.min_extent = 1.0;
  cfg.max_extent = 1.1;
  cfg.max_attempts = 200;
  CHECK_THROWS_AS(generate_scene(0, cfg), Error);
}

TEST_CASE("relation oracle: contact at zero gap, volume comparison, far proximity") {
  RelationOracle oracle;
  SceneObject a = make_box(0, "box", {1.0, 1.0, 0.5}, {1, 1, 1});
  SceneObject b = make_box(1, "chair", {2.0, 1.0, 0.5}, {1, 1, 1});  // touching faces
  CHECK(box_gap(a, b) == doctest::Approx(0.0));
  CHECK(oracle.touching(a, b));

  SceneObject big = make_box(2, "bed", {1, 1, 1}, {2, 2, 2});    // 8 m^3
  SceneObject small = make_box(3, "box", {3, 3, 0.5}, {1, 1, 1});  // 1 m^3
  CHECK(oracle.larger(big, small));
  CHECK_FALSE(oracle.larger(small, big));

  SceneObject far_a = make_box(4, "table", {0, 0, 0.5}, {0.5, 0.5, 1});
  SceneObject far_b = make_box(5, "chair", {5, 0, 0.5}, {0.5, 0.5, 1});
  CHECK_FALSE(oracle.near(far_a, far_b));  // distance 5 > threshold 1
}

TEST_CASE("orientation sectors") {
  RelationOracle oracle;
  SceneObject b = make_box(0, "table", {2, 2, 0.5}, {0.5, 0.5, 1});
  CHECK(oracle.sector_of(make_box(1, "x", {0.5, 2, 0.5}, {0.5, 0.5, 1}), b) == Sector::Left);
  CHECK(oracle.sector_of(make_box(1, "x", {3.5, 2, 0.5}, {0.5, 0.5, 1}), b) == Sector::Right);
  CHECK(oracle.sector_of(make_box(1, "x", {2, 3.5, 0.5}, {0.5, 0.5, 1}), b) == Sector::Front);
  CHECK(oracle.sector_of(make_box(1, "x", {2, 0.5, 0.5}, {0.5, 0.5, 1}), b) == Sector::Behind);
}

TEST_CASE("make_qa: round trip against the oracle, category coverage") {
  SceneConfig cfg;
  cfg.min_objects = 3;
  cfg.max_objects = 3;
  RelationOracle oracle{cfg.thresholds};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SceneGraph s = generate_scene(seed, cfg, static_cast<int>(seed));
    auto samples = make_qa(s, seed, cfg.thresholds);
    REQUIRE(samples.size() == 5);
    std::set<Relation> rels;
    for (const auto& qa : samples) {
      rels.insert(qa.relation);
      CHECK(qa.answer_text == oracle_answer(s, qa, oracle));
      // answers stay within the 12-word template budget
      CHECK(Vocab::normalize(qa.answer_text).size() <= 12);
    }
    CHECK(rels.size() == 5);
  }
}

TEST_CASE("make_qa: single-object scene emits only describe") {
  SceneConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  SceneGraph s = generate_scene(3, cfg);
  auto samples = make_qa(s, 3, cfg.thresholds);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].relation == Relation::Describe);
}

TEST_CASE("relation category balance over 500+ samples") {
  SceneConfig cfg;
  std::map<Relation, int> counts;
  int total = 0;
  for (uint64_t seed = 0; seed < 110; ++seed) {
    SceneGraph s = generate_scene(seed, cfg, static_cast<int>(seed));
    for (const auto& qa : make_qa(s, seed, cfg.thresholds)) {
      ++counts[qa.relation];
      ++total;
    }
  }
  REQUIRE(total >= 500);
  for (Relation r : {Relation::Proximity, Relation::Contact, Relation::Size,
                     Relation::Orientation})
    CHECK(static_cast<double>(counts[r]) / total >= 0.10);
}

TEST_CASE("contact and proximity answers both occur") {
  SceneConfig cfg;
  int contact_yes = 0, contact_no = 0, prox_yes = 0, prox_no = 0;
  for (uint64_t seed = 0; seed < 120; ++seed) {
    SceneGraph s = generate_scene(seed, cfg, static_cast<int>(seed));
    for (const auto& qa : make_qa(s, seed, cfg.thresholds)) {
      bool yes = qa.answer_text.rfind("yes", 0) == 0;
      if (qa.relation == Relation::Contact) (yes ? contact_yes : contact_no)++;
      if (qa.relation == Relation::Proximity) (yes ? prox_yes : prox_no)++;
    }
  }
  CHECK(contact_yes >= 10);
  CHECK(contact_no >= 10);
  CHECK(prox_yes >= 10);
  CHECK(prox_no >= 10);
}

TEST_CASE("render: empty scene shows the far plane everywhere") {
  SceneGraph s = empty_room();
  RenderConfig rc;
  auto views = render_views(s, 3, rc);
  REQUIRE(views.size() == 3);
  for (const auto& v : views) {
    for (int i = 0; i < v.h * v.w; ++i) {
      CHECK(v.depth.at(i, 0) == doctest::Approx(v.far_plane));
      CHECK(v.features.at(i, 0) == 0.0);  // no occupancy
    }
  }
}

TEST_CASE("render: unit cube at distance 2 gives center depth 1.5") {
  // Front view looks along +y from y=0; cube center at y=2 with extent 1.
  SceneGraph s = empty_room();
  s.objects.push_back(make_box(0, "box", {2.0, 2.0, 1.25}, {1, 1, 1}));
  RenderConfig rc;
  ViewRender v = render_view(s, ViewAxis::Front, 0, rc);
  // center cell: u (x) = 2.0 -> col 7 or 8; v (z) = 1.25 -> row 7 or 8
  int row = 7, col = 7;
  CHECK(v.depth.at(v.cell(row, col), 0) == doctest::Approx(1.5));
  CHECK(v.features.at(v.cell(row, col), 0) == 1.0);
  CHECK(v.features.at(v.cell(row, col), 2 + rc.category_index("box")) == 1.0);
}

TEST_CASE("render: deterministic and depth bounded by scene diagonal") {
  SceneConfig cfg;
  SceneGraph s = generate_scene(9, cfg);
  RenderConfig rc;
  ViewRender a = render_view(s, ViewAxis::Top, 0, rc);
  ViewRender b = render_view(s, ViewAxis::Top, 0, rc);
  CHECK(a.depth.data == b.depth.data);
  CHECK(a.features.data == b.features.data);
  for (int i = 0; i < a.h * a.w; ++i) {
    CHECK(a.depth.at(i, 0) >= 0.0);
    CHECK(a.depth.at(i, 0) <= s.diagonal());
  }
  CHECK(a.features.all_finite());
}

TEST_CASE("pooled view features encode category area and centroid") {
  SceneGraph s = empty_room();
  s.objects.push_back(make_box(0, "table", {1.0, 1.0, 0.5}, {1, 1, 1}));
  RenderConfig rc;
  ViewRender v = render_view(s, ViewAxis::Top, 0, rc);
  auto pooled = pooled_view_features(v, rc);
  REQUIRE(pooled.size() == static_cast<size_t>(pooled_feature_dim(6)));
  int ti = rc.category_index("table");
  CHECK(pooled[4 * ti + 0] > 0.0);                         // area fraction
  CHECK(pooled[4 * ti + 1] == doctest::Approx(0.233).epsilon(0.35));  // centroid row ~ 1.0/4.0
  int bi = rc.category_index("bed");
  CHECK(pooled[4 * bi + 0] == 0.0);  // absent category
}

TEST_CASE("teacher: soft targets and depth bins") {
  Vocab vocab = Vocab::build({"yes no the box is near not touching chair"});
  SceneGraph s = empty_room();
  s.objects.push_back(make_box(0, "box", {1, 1, 0.5}, {1, 1, 1}));
  s.objects.push_back(make_box(1, "chair", {3, 3, 0.5}, {1, 1, 1}));
  RenderConfig rc;
  auto views = render_views(s, 2, rc);
  QASample qa;
  qa.scene_id = 0;
  qa.relation = Relation::Proximity;
  qa.question_text = "is the box near the chair";
  qa.answer_text = "no the box is not near the chair";
  qa.referenced_object_ids = {0, 1};

  TeacherConfig tc;
  SUBCASE("eps=0 gives exact one-hots") {
    tc.smoothing_eps = 0.0;
    TeacherSignal sig = teacher_signals(s, views, qa, vocab, rc, tc);
    for (int i = 0; i < sig.soft_targets.rows(); ++i) {
      double sum = 0.0;
      int ones = 0;
      for (int j = 0; j < sig.soft_targets.cols(); ++j) {
        sum += sig.soft_targets.at(i, j);
        if (sig.soft_targets.at(i, j) == 1.0) ++ones;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(ones == 1);
    }
    CHECK(sig.answer_token_ids.back() == Vocab::kEos);
    CHECK(vocab.decode(sig.answer_token_ids) == qa.answer_text);
  }

  SUBCASE("label smoothing formula") {
    tc.smoothing_eps = 0.1;
    TeacherSignal sig = teacher_signals(s, views, qa, vocab, rc, tc);
    int vsize = vocab.size();
    double expected = 0.9 + 0.1 / vsize;
    CHECK(sig.soft_targets.at(0, sig.answer_token_ids[0]) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("all distributions sum to one and spatial shape matches") {
    tc.smoothing_eps = 0.05;
    TeacherSignal sig = teacher_signals(s, views, qa, vocab, rc, tc);
    for (const auto& bins : sig.depth_bin_dist)
      for (int i = 0; i < bins.rows(); ++i) {
        double sum = 0.0;
        for (int j = 0; j < bins.cols(); ++j) {
          CHECK(bins.at(i, j) >= 0.0);
          sum += bins.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    for (const auto& fs : sig.spatial_features) {
      CHECK(fs.rows() == tc.spat_h * tc.spat_w);
      CHECK(fs.cols() == tc.spat_c);
      CHECK(fs.all_finite());
    }
    for (int i = 0; i < sig.det_class_probs.rows(); ++i) {
      double sum = 0.0;
      for (int j = 0; j < sig.det_class_probs.cols(); ++j)
        sum += sig.det_class_probs.at(i, j);
      CHECK(sum == doctest::Approx(1.0));
    }
  }

  SUBCASE("missing vocabulary word is a hard error") {
    QASample bad = qa;
    bad.answer_text = "no the box is not near the zeppelin";
    CHECK_THROWS_AS(teacher_signals(s, views, bad, vocab, rc, tc), Error);
  }
}

TEST_CASE("depth bin index: zero depth with 4 bins over [0,8] is bin 0") {
  CHECK(depth_bin_index(0.0, 8.0, 4) == 0);
  CHECK(depth_bin_index(7.99, 8.0, 4) == 3);
  CHECK(depth_bin_index(8.0, 8.0, 4) == 3);  // clamped at the top edge
}

TEST_CASE("pair relation dists are one-hot") {
  SceneGraph s = empty_room();
  s.objects.push_back(make_box(0, "box", {1, 1, 0.5}, {1, 1, 1}));
  s.objects.push_back(make_box(1, "chair", {3, 1, 1.5}, {1, 1, 1}));
  auto d = pair_relation_dists(s, 0, 1);
  CHECK(d.left_right.at(0, 0) == 1.0);   // 0 is left of 1
  CHECK(d.above_below.at(0, 1) == 1.0);  // 0 is below 1
}
