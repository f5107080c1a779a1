#include <doctest.h>

#include <cmath>

#include "spatialkd/dataset.hpp"
#include "spatialkd/metrics.hpp"

using namespace skd;
using namespace skd::metrics;

namespace {
Tokens tok(const std::string& s) { return tokenize(s); }
}

TEST_CASE("bleu: identical, partial, empty") {
  CHECK(bleu_n(tok("a b c"), {tok("a b c")}, 1) == doctest::Approx(1.0));
  CHECK(bleu_n(tok("a b c"), {tok("a x c")}, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(bleu_n(tok(""), {tok("a b c")}, 1) == 0.0);
  CHECK(bleu_n(tok("a b c d"), {tok("a b c d")}, 4) == doctest::Approx(1.0));
  // no shared bigram -> BLEU-2 is 0
  CHECK(bleu_n(tok("a x b"), {tok("a y b")}, 2) == 0.0);
}

TEST_CASE("bleu: brevity penalty") {
  // candidate 2 words, reference 4: p1 = 1, BP = exp(1 - 4/2)
  double expected = std::exp(1.0 - 2.0);
  CHECK(bleu_n(tok("a b"), {tok("a b c d")}, 1) == doctest::Approx(expected).epsilon(1e-12));
  // longer candidate than reference: no penalty
  CHECK(bleu_n(tok("a b c d"), {tok("a b")}, 1) == doctest::Approx(0.5));
}

TEST_CASE("rouge: hand counts") {
  PRF r = rouge_n(tok("a b"), tok("a c"), 1);
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.f1 == doctest::Approx(0.5));

  for (int n : {1, 2}) {
    PRF same = rouge_n(tok("a b c"), tok("a b c"), n);
    CHECK(same.f1 == doctest::Approx(1.0));
  }
  CHECK(rouge_l(tok("a b c"), tok("a b c")).f1 == doctest::Approx(1.0));

  PRF rl = rouge_l(tok("a b c"), tok("a x c"));
  CHECK(rl.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));  // LCS "a c"
  CHECK(rl.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("meteor: identity, disjoint, fragmentation") {
  CHECK(meteor(tok("the red box"), tok("the red box")) == doctest::Approx(1.0));
  CHECK(meteor(tok("a b c"), tok("x y z")) == 0.0);

  // "the red box" vs "the box": m=2, P=2/3, R=1, F=10PR/(R+9P)=20/21,
  // chunks=2 -> penalty 0.5 -> 10/21.
  CHECK(meteor(tok("the red box"), tok("the box")) ==
        doctest::Approx(10.0 / 21.0).epsilon(1e-12));

  // stem matching: "boxes" matches "box"
  CHECK(meteor(tok("boxes"), tok("box")) > 0.0);
}

TEST_CASE("depth metrics") {
  Tensor gt = Tensor::from({4, 1}, {1.0, 2.0, 3.0, 4.0});
  SUBCASE("exact prediction") {
    DepthMetrics m = depth_metrics(gt, gt);
    CHECK(m.rmse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.delta_125 == doctest::Approx(1.0));
  }
  SUBCASE("doubled prediction fails the delta threshold") {
    Tensor pred = gt;
    for (auto& v : pred.data) v *= 2.0;
    DepthMetrics m = depth_metrics(pred, gt);
    CHECK(m.delta_125 == doctest::Approx(0.0));
  }
  SUBCASE("constant offset") {
    Tensor pred = gt;
    for (auto& v : pred.data) v += 1.0;
    DepthMetrics m = depth_metrics(pred, gt);
    CHECK(m.mae == doctest::Approx(1.0));
  }
  SUBCASE("nonpositive gt excluded from delta with a count") {
    Tensor gt2 = Tensor::from({3, 1}, {0.0, 2.0, 2.0});
    Tensor pred = Tensor::from({3, 1}, {1.0, 2.0, 2.0});
    DepthMetrics m = depth_metrics(pred, gt2);
    CHECK(m.excluded_cells == 1);
    CHECK(m.delta_125 == doctest::Approx(1.0));
  }
}

namespace {

// Dataset with scene graphs and QA only; enough for spatial_accuracy.
Dataset qa_only_dataset(int n_scenes, uint64_t seed) {
  Dataset ds;
  ds.cfg.seed = seed;
  ds.cfg.n_scenes = n_scenes;
  std::vector<std::string> corpus;
  int sample_id = 0;
  for (int i = 0; i < n_scenes; ++i) {
    uint64_t s_seed = Rng::derive(seed, i);
    SceneBundle b;
    b.scene = generate_scene(s_seed, ds.cfg.scene, i);
    ds.scenes.push_back(b);
    for (auto& qa : make_qa(ds.scenes.back().scene, s_seed, ds.cfg.scene.thresholds)) {
      DataSample sm;
      sm.sample_id = sample_id++;
      sm.scene_index = i;
      sm.qa = qa;
      ds.samples.push_back(sm);
      corpus.push_back(qa.answer_text);
    }
  }
  ds.vocab = Vocab::build(corpus);
  return ds;
}

}  // namespace

TEST_CASE("spatial accuracy: oracle answers score 1.0 in every category") {
  Dataset ds = qa_only_dataset(30, 3);
  std::vector<std::string> answers;
  std::vector<const DataSample*> ptrs;
  for (const auto& s : ds.samples) {
    answers.push_back(s.qa.answer_text);
    ptrs.push_back(&s);
  }
  SpatialAccuracy acc = spatial_accuracy(answers, ptrs, ds);
  CHECK(acc.overall == doctest::Approx(1.0));
  REQUIRE(acc.per_category.size() == 4);
  for (const auto& [cat, a] : acc.per_category) CHECK(a == doctest::Approx(1.0));
  CHECK(acc.unparseable == 0);
  // overall equals the arithmetic mean of the four category accuracies
  double mean = 0.0;
  for (const auto& [cat, a] : acc.per_category) mean += a;
  CHECK(acc.overall == doctest::Approx(mean / 4.0));
}

TEST_CASE("spatial accuracy: empty answers are unparseable and score 0") {
  Dataset ds = qa_only_dataset(10, 4);
  std::vector<std::string> answers(ds.samples.size(), "");
  std::vector<const DataSample*> ptrs;
  for (const auto& s : ds.samples) ptrs.push_back(&s);
  SpatialAccuracy acc = spatial_accuracy(answers, ptrs, ds);
  CHECK(acc.overall == doctest::Approx(0.0));
  CHECK(acc.unparseable == acc.total_judged);
}

TEST_CASE("spatial accuracy: coin-flip answers on binary questions sit near chance") {
  Dataset ds = qa_only_dataset(250, 5);
  std::vector<std::string> answers;
  std::vector<const DataSample*> ptrs;
  Rng flip(99);
  int binary = 0;
  for (const auto& s : ds.samples) {
    if (s.qa.relation != Relation::Proximity && s.qa.relation != Relation::Contact) continue;
    ptrs.push_back(&s);
    answers.push_back(flip.uniform() < 0.5 ? "yes" : "no");
    ++binary;
  }
  REQUIRE(binary >= 400);
  SpatialAccuracy acc = spatial_accuracy(answers, ptrs, ds);
  CHECK(acc.per_category.at("proximity") == doctest::Approx(0.5).epsilon(0.30));
  CHECK(acc.per_category.at("contact") == doctest::Approx(0.5).epsilon(0.30));
}

TEST_CASE("length-normalized score arithmetic") {
  // rouge 0.3 over mean length 10 -> 0.03
  CHECK(0.3 / 10.0 == doctest::Approx(0.03));
}
