#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatialkd/common.hpp"
#include "spatialkd/container.hpp"
#include "spatialkd/model.hpp"
#include "spatialkd/render.hpp"
#include "spatialkd/rng.hpp"
#include "spatialkd/scene.hpp"
#include "spatialkd/teacher.hpp"
#include "spatialkd/tokenizer.hpp"

namespace skd {

namespace cfgdetail {

inline void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                               const std::string& what) {
  check(j.is_object(), "config: section '", what, "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const auto& k : known) ok |= (k == key);
    check(ok, "config: unknown key '", key, "' in section '", what, "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

}  // namespace cfgdetail

struct DatasetConfig {
  uint64_t seed = 0;
  int n_scenes = 120;
  int n_views = 2;
  SceneConfig scene;
  int grid_h = 16;
  int grid_w = 16;
  TeacherConfig teacher;

  RenderConfig render_config() const {
    RenderConfig rc;
    rc.grid_h = grid_h;
    rc.grid_w = grid_w;
    rc.catalog = scene.catalog;
    return rc;
  }

  double d_max_for(const SceneGraph& s) const {
    return teacher.d_max > 0.0 ? teacher.d_max : s.diagonal();
  }

  void validate() const {
    check(n_scenes >= 1, "dataset config: n_scenes must be >= 1");
    check(n_views >= 1 && n_views <= 3, "dataset config: n_views must be in [1,3]");
    scene.validate();
    check(grid_h % teacher.spat_h == 0 && grid_w % teacher.spat_w == 0,
          "dataset config: grid must be divisible by the teacher spatial shape");
  }

  nlohmann::json to_json() const {
    return {
        {"seed", seed},
        {"n_scenes", n_scenes},
        {"n_views", n_views},
        {"grid_h", grid_h},
        {"grid_w", grid_w},
        {"room_size", {scene.room_size.x, scene.room_size.y, scene.room_size.z}},
        {"min_objects", scene.min_objects},
        {"max_objects", scene.max_objects},
        {"catalog", scene.catalog},
        {"min_extent", scene.min_extent},
        {"max_extent", scene.max_extent},
        {"overlap_tol", scene.overlap_tol},
        {"max_attempts", scene.max_attempts},
        {"layout_attempts", scene.layout_attempts},
        {"distinct_categories", scene.distinct_categories},
        {"p_touching", scene.p_touching},
        {"p_near", scene.p_near},
        {"p_far", scene.p_far},
        {"proximity_threshold", scene.thresholds.proximity_threshold},
        {"contact_eps", scene.thresholds.contact_eps},
        {"smoothing_eps", teacher.smoothing_eps},
        {"depth_smoothing", teacher.depth_smoothing},
        {"depth_bins", teacher.depth_bins},
        {"d_max", teacher.d_max},
        {"spat_h", teacher.spat_h},
        {"spat_w", teacher.spat_w},
        {"spat_c", teacher.spat_c},
        {"projection_seed", teacher.projection_seed},
    };
  }

  static DatasetConfig from_json(const nlohmann::json& j) {
    using cfgdetail::get_or;
    cfgdetail::require_known_keys(
        j,
        {"seed",        "n_scenes",      "n_views",            "grid_h",
         "grid_w",      "room_size",     "min_objects",        "max_objects",
         "catalog",     "min_extent",    "max_extent",         "overlap_tol",
         "max_attempts", "layout_attempts", "distinct_categories", "p_touching",
         "p_near",      "p_far",         "proximity_threshold", "contact_eps",
         "smoothing_eps", "depth_smoothing", "depth_bins",     "d_max",
         "spat_h",      "spat_w",        "spat_c",             "projection_seed"},
        "dataset");
    DatasetConfig c;
    c.seed = get_or<uint64_t>(j, "seed", c.seed);
    c.n_scenes = get_or<int>(j, "n_scenes", c.n_scenes);
    c.n_views = get_or<int>(j, "n_views", c.n_views);
    c.grid_h = get_or<int>(j, "grid_h", c.grid_h);
    c.grid_w = get_or<int>(j, "grid_w", c.grid_w);
    if (j.contains("room_size")) {
      auto r = j.at("room_size");
      c.scene.room_size = {r.at(0), r.at(1), r.at(2)};
    }
    c.scene.min_objects = get_or<int>(j, "min_objects", c.scene.min_objects);
    c.scene.max_objects = get_or<int>(j, "max_objects", c.scene.max_objects);
    c.scene.catalog = get_or<std::vector<std::string>>(j, "catalog", c.scene.catalog);
    c.scene.min_extent = get_or<double>(j, "min_extent", c.scene.min_extent);
    c.scene.max_extent = get_or<double>(j, "max_extent", c.scene.max_extent);
    c.scene.overlap_tol = get_or<double>(j, "overlap_tol", c.scene.overlap_tol);
    c.scene.max_attempts = get_or<int>(j, "max_attempts", c.scene.max_attempts);
    c.scene.layout_attempts = get_or<int>(j, "layout_attempts", c.scene.layout_attempts);
    c.scene.distinct_categories =
        get_or<bool>(j, "distinct_categories", c.scene.distinct_categories);
    c.scene.p_touching = get_or<double>(j, "p_touching", c.scene.p_touching);
    c.scene.p_near = get_or<double>(j, "p_near", c.scene.p_near);
    c.scene.p_far = get_or<double>(j, "p_far", c.scene.p_far);
    c.scene.thresholds.proximity_threshold =
        get_or<double>(j, "proximity_threshold", c.scene.thresholds.proximity_threshold);
    c.scene.thresholds.contact_eps =
        get_or<double>(j, "contact_eps", c.scene.thresholds.contact_eps);
    c.teacher.smoothing_eps = get_or<double>(j, "smoothing_eps", c.teacher.smoothing_eps);
    c.teacher.depth_smoothing = get_or<double>(j, "depth_smoothing", c.teacher.depth_smoothing);
    c.teacher.depth_bins = get_or<int>(j, "depth_bins", c.teacher.depth_bins);
    c.teacher.d_max = get_or<double>(j, "d_max", c.teacher.d_max);
    c.teacher.spat_h = get_or<int>(j, "spat_h", c.teacher.spat_h);
    c.teacher.spat_w = get_or<int>(j, "spat_w", c.teacher.spat_w);
    c.teacher.spat_c = get_or<int>(j, "spat_c", c.teacher.spat_c);
    c.teacher.projection_seed =
        get_or<uint64_t>(j, "projection_seed", c.teacher.projection_seed);
    return c;
  }
};

// Everything derived from one scene and shared by its QA samples.
struct SceneBundle {
  SceneGraph scene;
  std::vector<ViewRender> views;
  std::vector<Tensor> teacher_spatial;     // per view [spat_h*spat_w, spat_c]
  std::vector<Tensor> teacher_depth_bins;  // per view [cells, bins]
  Tensor det_class_probs;                  // [n_obj, n_cat]
  Tensor det_boxes;                        // [n_obj, 7]
  Tensor teacher_depth_hist;               // [1, bins], scene-level histogram
  std::vector<ViewInput> pooled;           // student vision inputs
};

struct DataSample {
  int sample_id = 0;
  int scene_index = 0;
  QASample qa;
  std::vector<int> q_ids;       // [BOS, words..., EOS]
  std::vector<int> answer_ids;  // words + EOS
};

struct Dataset {
  DatasetConfig cfg;
  Vocab vocab;
  std::vector<SceneBundle> scenes;
  std::vector<DataSample> samples;

  const SceneBundle& bundle_of(const DataSample& s) const { return scenes[s.scene_index]; }

  Tensor soft_targets_for(const DataSample& s) const {
    return smoothed_token_targets(s.answer_ids, vocab.size(), cfg.teacher.smoothing_eps);
  }

  // Materializes the full per-sample teacher supervision record.
  TeacherSignal teacher_signal_for(int sample_idx) const {
    const DataSample& s = samples.at(sample_idx);
    const SceneBundle& b = bundle_of(s);
    TeacherSignal sig;
    sig.answer_token_ids = s.answer_ids;
    sig.soft_targets = soft_targets_for(s);
    sig.spatial_features = b.teacher_spatial;
    sig.depth_bin_dist = b.teacher_depth_bins;
    sig.det_class_probs = b.det_class_probs;
    sig.det_boxes = b.det_boxes;
    return sig;
  }
};

namespace detail {

inline SceneBundle build_scene_bundle(const SceneGraph& scene, const DatasetConfig& cfg,
                                      const Vocab& vocab, const QASample& any_qa) {
  SceneBundle b;
  b.scene = scene;
  RenderConfig rc = cfg.render_config();
  b.views = render_views(scene, cfg.n_views, rc);
  TeacherConfig tc = cfg.teacher;
  tc.d_max = cfg.d_max_for(scene);
  TeacherSignal sig = teacher_signals(scene, b.views, any_qa, vocab, rc, tc);
  b.teacher_spatial = sig.spatial_features;
  b.teacher_depth_bins = sig.depth_bin_dist;
  b.det_class_probs = sig.det_class_probs;
  b.det_boxes = sig.det_boxes;
  b.teacher_depth_hist = Tensor({1, tc.depth_bins});
  double cells = 0.0;
  for (const auto& bins : b.teacher_depth_bins) {
    for (int i = 0; i < bins.rows(); ++i)
      for (int j = 0; j < bins.cols(); ++j) b.teacher_depth_hist.at(0, j) += bins.at(i, j);
    cells += bins.rows();
  }
  for (int j = 0; j < tc.depth_bins; ++j) b.teacher_depth_hist.at(0, j) /= cells;
  int focus_a = -1, focus_b = -1;
  if (scene.objects.size() >= 2) {
    focus_a = rc.category_index(scene.objects[0].category);
    focus_b = rc.category_index(scene.objects[1].category);
  }
  for (const auto& v : b.views)
    b.pooled.push_back(ViewInput{pooled_view_features(v, rc, focus_a, focus_b)});
  return b;
}

}  // namespace detail

// Pure function of (seed, config): scenes, QA, teacher signals, vocabulary.
inline Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.cfg = cfg;

  std::vector<SceneGraph> scenes;
  std::vector<std::vector<QASample>> scene_qas;
  std::vector<std::string> corpus;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    uint64_t scene_seed = Rng::derive(cfg.seed, static_cast<uint64_t>(i));
    SceneGraph s = generate_scene(scene_seed, cfg.scene, i);
    auto qas = make_qa(s, scene_seed, cfg.scene.thresholds);
    for (const auto& qa : qas) {
      corpus.push_back(qa.question_text);
      corpus.push_back(qa.answer_text);
    }
    scenes.push_back(std::move(s));
    scene_qas.push_back(std::move(qas));
  }
  ds.vocab = Vocab::build(corpus);

  int sample_id = 0;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    ds.scenes.push_back(detail::build_scene_bundle(scenes[i], cfg, ds.vocab, scene_qas[i][0]));
    for (auto& qa : scene_qas[i]) {
      DataSample s;
      s.sample_id = sample_id++;
      s.scene_index = i;
      qa.sample_id = s.sample_id;
      s.qa = qa;
      s.q_ids = ds.vocab.encode(qa.question_text);
      s.answer_ids = ds.vocab.encode_words(qa.answer_text);
      s.answer_ids.push_back(Vocab::kEos);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// --- persistence -----------------------------------------------------------
//
// A dataset directory contains:
//   dataset_config.json   the generating config (exact echo)
//   vocab.txt             one token per line, line index = id
//   scenes.jsonl          one scene graph per line
//   samples.jsonl         one QA record per line with container references
//   tensors/scene_<id>.bin named-array containers (f32) with render features,
//                         depth, teacher spatial features and depth bins,
//                         pooled view vectors and detection targets

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "tensors");

  {
    std::ofstream f(fs::path(dir) / "dataset_config.json");
    check(f.good(), "dataset: cannot write config to ", dir);
    f << ds.cfg.to_json().dump(2) << "\n";
  }
  ds.vocab.save((fs::path(dir) / "vocab.txt").string());

  {
    std::ofstream f(fs::path(dir) / "scenes.jsonl");
    for (const auto& b : ds.scenes) {
      nlohmann::json objs = nlohmann::json::array();
      for (const auto& o : b.scene.objects)
        objs.push_back({{"id", o.id},
                        {"category", o.category},
                        {"center", {o.center.x, o.center.y, o.center.z}},
                        {"size", {o.size.x, o.size.y, o.size.z}},
                        {"yaw", o.yaw}});
      nlohmann::json j = {
          {"scene_id", b.scene.scene_id},
          {"room_min", {b.scene.room_min.x, b.scene.room_min.y, b.scene.room_min.z}},
          {"room_size", {b.scene.room_size.x, b.scene.room_size.y, b.scene.room_size.z}},
          {"objects", objs}};
      f << j.dump() << "\n";
    }
  }

  {
    std::ofstream f(fs::path(dir) / "samples.jsonl");
    for (const auto& s : ds.samples) {
      std::string container =
          "tensors/scene_" + std::to_string(ds.scenes[s.scene_index].scene.scene_id) + ".bin";
      std::vector<int> view_ids;
      for (const auto& v : ds.scenes[s.scene_index].views) view_ids.push_back(v.view_id);
      nlohmann::json j = {{"sample_id", s.sample_id},
                          {"scene_id", ds.scenes[s.scene_index].scene.scene_id},
                          {"relation", relation_name(s.qa.relation)},
                          {"question", s.qa.question_text},
                          {"answer", s.qa.answer_text},
                          {"ref_ids", s.qa.referenced_object_ids},
                          {"answer_ids", s.answer_ids},
                          {"container", container},
                          {"view_ids", view_ids}};
      f << j.dump() << "\n";
    }
  }

  for (const auto& b : ds.scenes) {
    Container c;
    for (size_t v = 0; v < b.views.size(); ++v) {
      std::string p = "view" + std::to_string(v) + ".";
      const ViewRender& vr = b.views[v];
      Tensor feat = vr.features;
      feat.shape = {vr.h, vr.w, vr.c};
      c.put_f32(p + "features", feat);
      Tensor dep = vr.depth;
      dep.shape = {vr.h, vr.w};
      c.put_f32(p + "depth", dep);
      c.put_f32(p + "teacher_spatial", b.teacher_spatial[v]);
      c.put_f32(p + "teacher_depth_bins", b.teacher_depth_bins[v]);
      c.put_f32(p + "pooled",
                Tensor::from({static_cast<int>(b.pooled[v].pooled.size())}, b.pooled[v].pooled));
    }
    c.put_f32("det.class_probs", b.det_class_probs);
    c.put_f32("det.boxes", b.det_boxes);
    c.put_f32("teacher.depth_hist", b.teacher_depth_hist);
    c.save((fs::path(dir) / "tensors" /
            ("scene_" + std::to_string(b.scene.scene_id) + ".bin")).string());
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  {
    std::ifstream f(fs::path(dir) / "dataset_config.json");
    check(f.good(), "dataset: cannot open ", dir, "/dataset_config.json");
    nlohmann::json j;
    f >> j;
    ds.cfg = DatasetConfig::from_json(j);
  }
  ds.vocab = Vocab::load((fs::path(dir) / "vocab.txt").string());
  RenderConfig rc = ds.cfg.render_config();

  std::unordered_map<int, int> scene_index;
  {
    std::ifstream f(fs::path(dir) / "scenes.jsonl");
    check(f.good(), "dataset: cannot open ", dir, "/scenes.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      SceneBundle b;
      b.scene.scene_id = j.at("scene_id");
      auto rm = j.at("room_min");
      auto rs = j.at("room_size");
      b.scene.room_min = {rm.at(0), rm.at(1), rm.at(2)};
      b.scene.room_size = {rs.at(0), rs.at(1), rs.at(2)};
      for (const auto& oj : j.at("objects")) {
        SceneObject o;
        o.id = oj.at("id");
        o.category = oj.at("category");
        auto ce = oj.at("center");
        auto sz = oj.at("size");
        o.center = {ce.at(0), ce.at(1), ce.at(2)};
        o.size = {sz.at(0), sz.at(1), sz.at(2)};
        o.yaw = oj.at("yaw");
        b.scene.objects.push_back(o);
      }
      scene_index[b.scene.scene_id] = static_cast<int>(ds.scenes.size());
      ds.scenes.push_back(std::move(b));
    }
  }

  for (auto& b : ds.scenes) {
    Container c = Container::load(
        (fs::path(dir) / "tensors" / ("scene_" + std::to_string(b.scene.scene_id) + ".bin"))
            .string());
    for (int v = 0; c.has("view" + std::to_string(v) + ".features"); ++v) {
      std::string p = "view" + std::to_string(v) + ".";
      ViewRender vr;
      vr.view_id = v;
      vr.axis = static_cast<ViewAxis>(v);
      Tensor feat = c.get_tensor(p + "features");
      check(feat.shape.size() == 3, "dataset: bad feature dims in scene container");
      vr.h = feat.shape[0];
      vr.w = feat.shape[1];
      vr.c = feat.shape[2];
      feat.shape = {vr.h * vr.w, vr.c};
      vr.features = std::move(feat);
      Tensor dep = c.get_tensor(p + "depth");
      dep.shape = {vr.h * vr.w, 1};
      vr.depth = std::move(dep);
      switch (vr.axis) {
        case ViewAxis::Top: vr.far_plane = b.scene.room_size.z; break;
        case ViewAxis::Front: vr.far_plane = b.scene.room_size.y; break;
        case ViewAxis::Side: vr.far_plane = b.scene.room_size.x; break;
      }
      b.views.push_back(std::move(vr));
      b.teacher_spatial.push_back(c.get_tensor(p + "teacher_spatial"));
      b.teacher_depth_bins.push_back(c.get_tensor(p + "teacher_depth_bins"));
      Tensor pooled = c.get_tensor(p + "pooled");
      b.pooled.push_back(ViewInput{pooled.data});
    }
    b.det_class_probs = c.get_tensor("det.class_probs");
    b.det_boxes = c.get_tensor("det.boxes");
    b.teacher_depth_hist = c.get_tensor("teacher.depth_hist");
    check(static_cast<int>(b.views.size()) == ds.cfg.n_views,
          "dataset: scene ", b.scene.scene_id, " has ", b.views.size(), " views, config says ",
          ds.cfg.n_views);
  }

  {
    std::ifstream f(fs::path(dir) / "samples.jsonl");
    check(f.good(), "dataset: cannot open ", dir, "/samples.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      DataSample s;
      s.sample_id = j.at("sample_id");
      int scene_id = j.at("scene_id");
      check(scene_index.count(scene_id), "dataset: sample references unknown scene ", scene_id);
      s.scene_index = scene_index[scene_id];
      s.qa.sample_id = s.sample_id;
      s.qa.scene_id = scene_id;
      s.qa.relation = relation_from_name(j.at("relation"));
      s.qa.question_text = j.at("question");
      s.qa.answer_text = j.at("answer");
      s.qa.referenced_object_ids = j.at("ref_ids").get<std::vector<int>>();
      s.answer_ids = j.at("answer_ids").get<std::vector<int>>();
      s.q_ids = ds.vocab.encode(s.qa.question_text);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace skd
