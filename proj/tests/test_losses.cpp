#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "spatialkd/autodiff.hpp"
#include "spatialkd/losses.hpp"
#include "spatialkd/rng.hpp"
#include "spatialkd/sequence.hpp"

using namespace skd;
using ad::Graph;
using ad::Node;

namespace {

Tensor random_probs(Rng& rng, int rows, int cols) {
  Tensor t({rows, cols});
  for (int i = 0; i < rows; ++i) {
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      t.at(i, j) = rng.uniform() + 0.01;
      z += t.at(i, j);
    }
    for (int j = 0; j < cols; ++j) t.at(i, j) /= z;
  }
  return t;
}

}  // namespace

TEST_CASE("text distillation: matched logits give zero") {
  Graph g;
  Tensor logits = Tensor::from({2, 4}, {1.0, 2.0, 0.5, -1.0, 0.0, 0.3, 0.1, 2.0});
  // teacher = softmax of the same logits
  Tensor teacher({2, 4});
  for (int i = 0; i < 2; ++i) {
    double z = 0;
    for (int j = 0; j < 4; ++j) z += std::exp(logits.at(i, j));
    for (int j = 0; j < 4; ++j) teacher.at(i, j) = std::exp(logits.at(i, j)) / z;
  }
  Node* s = g.leaf(logits, true);
  Node* loss = losses::text_distill_loss(g, s, teacher, 2.0);
  CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("text distillation: one-hot teacher vs uniform student at tau=1 is ln V") {
  Graph g;
  Node* s = g.leaf(Tensor({1, 4}), true);  // uniform logits
  Tensor teacher = Tensor::from({1, 4}, {1.0, 0.0, 0.0, 0.0});
  Node* loss = losses::text_distill_loss(g, s, teacher, 1.0);
  CHECK(loss->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("text distillation: temperature limit") {
  Rng rng(5);
  Tensor logits({3, 6});
  for (auto& v : logits.data) v = rng.normal();
  Tensor teacher = random_probs(rng, 3, 6);

  auto value_at = [&](double tau, bool scaled) {
    Graph g;
    Node* s = g.leaf(logits, false);
    return losses::text_distill_loss(g, s, teacher, tau, scaled)->value[0];
  };

  // Without the tau^2 factor the distributions flatten together and the loss
  // vanishes.
  double raw1 = value_at(1.0, false);
  double raw100 = value_at(100.0, false);
  CHECK(raw100 < 1e-3 * raw1);

  // With the tau^2 factor the loss approaches a finite nonzero constant.
  double s100 = value_at(100.0, true);
  double s1000 = value_at(1000.0, true);
  CHECK(s100 > 0.0);
  CHECK(s1000 == doctest::Approx(s100).epsilon(0.02));
}

TEST_CASE("text distillation: position count mismatch is an error") {
  Graph g;
  Node* s = g.leaf(Tensor({3, 4}), false);
  Tensor teacher = random_probs(*(new Rng(1)), 2, 4);
  CHECK_THROWS_AS(losses::text_distill_loss(g, s, teacher, 1.0), Error);
}

TEST_CASE("masked text loss equals sliced text loss") {
  Rng rng(6);
  const int total = 12, vocab = 9, a_len = 4, a_start = total - a_len;
  Tensor full({total, vocab});
  for (auto& v : full.data) v = rng.normal();
  Tensor teacher = random_probs(rng, a_len, vocab);
  std::vector<int> labels(total, kMaskLabel);
  for (int j = 0; j < a_len; ++j) labels[a_start + j] = 5;

  Graph g;
  Node* fl = g.leaf(full, true);
  Node* masked = losses::text_distill_loss_masked(g, fl, teacher, labels, 2.0);

  Graph g2;
  Node* sliced_in = g2.leaf(full, true);
  Node* rows = g2.slice_rows(sliced_in, a_start - 1, a_len);
  Node* sliced = losses::text_distill_loss(g2, rows, teacher, 2.0);

  CHECK(masked->value[0] == doctest::Approx(sliced->value[0]).epsilon(1e-12));
}

TEST_CASE("depth losses: zero cases and hand values") {
  const int cells = 6, bins = 4;
  const double d_max = 8.0;
  Graph g;

  SUBCASE("pred == gt gives zero regression") {
    Tensor gt = Tensor::full({cells, 1}, 3.0);
    Node* pred = g.leaf(gt, true);
    Node* bin_logits = g.leaf(Tensor({cells, bins}), true);
    Tensor teacher_bins = Tensor::full({cells, bins}, 0.25);
    auto dl = losses::depth_losses(g, pred, bin_logits, gt, teacher_bins, bins, d_max, nullptr);
    CHECK(dl.reg->value[0] == 0.0);
    CHECK(dl.kl->value[0] == doctest::Approx(0.0).epsilon(1e-12));  // uniform == uniform
  }

  SUBCASE("pred 2 vs gt 3 gives L1 of exactly 1") {
    Tensor gt = Tensor::full({cells, 1}, 3.0);
    Node* pred = g.leaf(Tensor::full({cells, 1}, 2.0), true);
    Node* bin_logits = g.leaf(Tensor({cells, bins}), true);
    Tensor teacher_bins = Tensor::full({cells, bins}, 0.25);
    auto dl = losses::depth_losses(g, pred, bin_logits, gt, teacher_bins, bins, d_max, nullptr);
    CHECK(dl.reg->value[0] == doctest::Approx(1.0));
    // uniform bin logits vs gt bin 1 (3.0/8*4 = 1.5 -> bin 1): CE = ln 4
    CHECK(dl.ce->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  SUBCASE("out-of-range gt is clamped and counted") {
    Tensor gt = Tensor::from({2, 1}, {-1.0, 9.0});
    Node* pred = g.leaf(Tensor({2, 1}), true);
    Node* bin_logits = g.leaf(Tensor({2, bins}), true);
    Tensor teacher_bins = Tensor::full({2, bins}, 0.25);
    std::ostringstream warn;
    auto dl = losses::depth_losses(g, pred, bin_logits, gt, teacher_bins, bins, d_max, &warn);
    CHECK(dl.clamped_cells == 2);
    CHECK(warn.str().find("clamped") != std::string::npos);
    CHECK(dl.reg->value[0] == doctest::Approx(4.0));  // |0-0| and |0-8| averaged
  }
}

TEST_CASE("detection loss: exact zero at p_t == 1, focal hand values") {
  const int C = 4;
  SUBCASE("p_t exactly 1 and exact boxes give exactly zero") {
    Graph g;
    Tensor probs({2, C});
    probs.at(0, 1) = 1.0;
    probs.at(1, 2) = 1.0;
    Node* p = g.leaf(probs, true);
    Tensor teacher = probs;
    Tensor boxes = Tensor::full({2, 7}, 0.3);
    Node* b = g.leaf(boxes, true);
    Node* loss = losses::detection_loss(g, p, b, teacher, boxes, 2.0, 0.25);
    CHECK(loss->value[0] == 0.0);
  }

  SUBCASE("gamma=0 alpha=1 p_t=0.5 reduces to plain CE ln 2") {
    Graph g;
    Tensor probs = Tensor::from({1, 2}, {0.5, 0.5});
    Node* p = g.leaf(probs, true);
    Tensor teacher = Tensor::from({1, 2}, {1.0, 0.0});
    Tensor boxes({1, 7});
    Node* b = g.leaf(boxes, true);
    Node* loss = losses::detection_loss(g, p, b, teacher, boxes, 0.0, 1.0);
    CHECK(loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("gamma=2 alpha=1 p_t=0.9") {
    Graph g;
    Tensor probs = Tensor::from({1, 2}, {0.9, 0.1});
    Node* p = g.leaf(probs, true);
    Tensor teacher = Tensor::from({1, 2}, {1.0, 0.0});
    Tensor boxes({1, 7});
    Node* b = g.leaf(boxes, true);
    Node* loss = losses::detection_loss(g, p, b, teacher, boxes, 2.0, 1.0);
    CHECK(loss->value[0] == doctest::Approx(0.01 * -std::log(0.9)).epsilon(1e-9));
  }

  SUBCASE("object count mismatch is an error") {
    Graph g;
    Node* p = g.leaf(Tensor::full({2, C}, 0.25), false);
    Node* b = g.leaf(Tensor({2, 7}), false);
    Tensor teacher({3, C});
    Tensor gt_boxes({3, 7});
    CHECK_THROWS_AS(losses::detection_loss(g, p, b, teacher, gt_boxes, 2.0, 0.25), Error);
  }
}

TEST_CASE("spatial corresponding loss") {
  SUBCASE("matched single view is zero") {
    Graph g;
    Tensor f = Tensor::from({4, 1}, {0.5, -0.25, 1.0, 2.0});
    Node* fs = g.leaf(f, true);
    Node* loss = losses::spatial_corresponding_loss(g, {fs}, {f}, 0.1);
    CHECK(loss->value[0] == 0.0);
  }

  SUBCASE("2x2x1 zeros vs ones sums to 4") {
    Graph g;
    Node* fs = g.leaf(Tensor({4, 1}), true);
    Tensor ft = Tensor::full({4, 1}, 1.0);
    Node* loss = losses::spatial_corresponding_loss(g, {fs}, {ft}, 0.0);
    CHECK(loss->value[0] == doctest::Approx(4.0));
  }

  SUBCASE("identical pooled student views zero the cross term") {
    Graph g;
    Tensor f = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor f2 = Tensor::from({2, 2}, {3.0, 4.0, 1.0, 2.0});  // same column means
    Node* a = g.leaf(f, true);
    Node* b = g.leaf(f2, true);
    Node* with_cross = losses::spatial_corresponding_loss(g, {a, b}, {f, f2}, 5.0);
    CHECK(with_cross->value[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("matches a brute-force triple loop on random inputs") {
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor fs1({9, 2}), fs2({9, 2}), ft1({9, 2}), ft2({9, 2});
      for (auto* t : {&fs1, &fs2, &ft1, &ft2})
        for (auto& v : t->data) v = rng.normal();
      Graph g;
      Node* a = g.leaf(fs1, true);
      Node* b = g.leaf(fs2, true);
      double lambda = 0.37;
      Node* loss = losses::spatial_corresponding_loss(g, {a, b}, {ft1, ft2}, lambda);

      // brute force: sum over views, cells, channels
      double first = 0.0;
      for (int i = 0; i < 9; ++i)
        for (int c = 0; c < 2; ++c) {
          first += (fs1.at(i, c) - ft1.at(i, c)) * (fs1.at(i, c) - ft1.at(i, c));
          first += (fs2.at(i, c) - ft2.at(i, c)) * (fs2.at(i, c) - ft2.at(i, c));
        }
      double p1[2] = {0, 0}, p2[2] = {0, 0};
      for (int i = 0; i < 9; ++i)
        for (int c = 0; c < 2; ++c) {
          p1[c] += fs1.at(i, c) / 9.0;
          p2[c] += fs2.at(i, c) / 9.0;
        }
      double d = 0.5 * ((p1[0] - p2[0]) * (p1[0] - p2[0]) + (p1[1] - p2[1]) * (p1[1] - p2[1]));
      double expected = first + lambda * 2.0 * d;  // ordered pairs count each pair twice
      CHECK(loss->value[0] == doctest::Approx(expected).epsilon(1e-9));
    }
  }

  SUBCASE("no views is an error") {
    Graph g;
    CHECK_THROWS_AS(losses::spatial_corresponding_loss(g, {}, {}, 0.1), Error);
  }
}

TEST_CASE("multiview consistency") {
  Graph g;
  SUBCASE("identical predictions give zero") {
    Tensor v = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
    Node* a = g.leaf(v, true);
    Node* b = g.leaf(v, true);
    CHECK(losses::multiview_consistency(g, {a, b})->value[0] == 0.0);
  }
  SUBCASE("hand value for (0,0) vs (2,0)") {
    Node* a = g.leaf(Tensor::from({1, 2}, {0.0, 0.0}), true);
    Node* b = g.leaf(Tensor::from({1, 2}, {2.0, 0.0}), true);
    CHECK(losses::multiview_consistency(g, {a, b})->value[0] == doctest::Approx(2.0));
  }
  SUBCASE("single view is zero by definition") {
    Node* a = g.leaf(Tensor::from({1, 2}, {5.0, 5.0}), true);
    CHECK(losses::multiview_consistency(g, {a})->value[0] == 0.0);
  }
}

TEST_CASE("feature alignment") {
  SUBCASE("matched distributions give zero") {
    Graph g;
    losses::FeatureAlignmentInputs in;
    losses::FeatureAlignmentTargets t;
    t.det_probs = Tensor::from({1, 2}, {0.7, 0.3});
    t.left_right = Tensor::from({1, 2}, {1.0, 0.0});
    t.above_below = Tensor::from({1, 2}, {0.5, 0.5});
    t.depth_hist = Tensor::from({1, 4}, {0.25, 0.25, 0.25, 0.25});
    in.det_probs = g.leaf(t.det_probs, true);
    in.left_right_probs = g.leaf(t.left_right, true);
    in.above_below_probs = g.leaf(t.above_below, true);
    in.depth_hist_probs = g.leaf(t.depth_hist, true);
    CHECK(losses::feature_alignment(g, in, t)->value[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("one-hot teacher vs coin-flip student contributes ln 2") {
    Graph g;
    losses::FeatureAlignmentInputs in;
    losses::FeatureAlignmentTargets t;
    t.left_right = Tensor::from({1, 2}, {1.0, 0.0});
    in.left_right_probs = g.leaf(Tensor::from({1, 2}, {0.5, 0.5}), true);
    CHECK(losses::feature_alignment(g, in, t)->value[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("unnormalized input is an error") {
    Graph g;
    losses::FeatureAlignmentInputs in;
    losses::FeatureAlignmentTargets t;
    t.left_right = Tensor::from({1, 2}, {0.9, 0.3});
    in.left_right_probs = g.leaf(Tensor::from({1, 2}, {0.5, 0.5}), true);
    CHECK_THROWS_AS(losses::feature_alignment(g, in, t), Error);
  }
}

TEST_CASE("uncertainty total") {
  SUBCASE("all sigma 1 gives half the plain sum") {
    Graph g;
    std::map<std::string, Node*> bundle{
        {"a", g.leaf(Tensor::from({1, 1}, {2.0}), false)},
        {"b", g.leaf(Tensor::from({1, 1}, {4.0}), false)}};
    std::map<std::string, Node*> ls{{"a", g.leaf(Tensor({1, 1}), true)},
                                    {"b", g.leaf(Tensor({1, 1}), true)}};
    Node* total = losses::uncertainty_total(g, bundle, ls);
    CHECK(total->value[0] == doctest::Approx(0.5 * (2.0 + 4.0)));
  }

  SUBCASE("optimum of the single-task objective sits at sigma^2 = L") {
    // grid-search oracle over log sigma for L = 2
    const double L = 2.0;
    double best_s = 0.0, best_v = 1e100;
    for (double s = -2.0; s <= 2.0; s += 1e-5) {
      double v = 0.5 * std::exp(-2.0 * s) * L + s;
      if (v < best_v) {
        best_v = v;
        best_s = s;
      }
    }
    CHECK(std::exp(2.0 * best_s) == doctest::Approx(L).epsilon(1e-3));
    CHECK(best_v == doctest::Approx(0.5 + 0.5 * std::log(L)).epsilon(1e-6));

    // autodiff value at the optimum matches the oracle
    Graph g;
    std::map<std::string, Node*> bundle{{"t", g.leaf(Tensor::from({1, 1}, {L}), false)}};
    std::map<std::string, Node*> ls{{"t", g.leaf(Tensor::from({1, 1}, {best_s}), true)}};
    CHECK(losses::uncertainty_total(g, bundle, ls)->value[0] ==
          doctest::Approx(best_v).epsilon(1e-9));
  }

  SUBCASE("weight readout: 1/(2 sigma^2) = 100 means sigma^2 = 0.005") {
    double s = 0.5 * std::log(0.005);  // log sigma
    double w = 0.5 * std::exp(-2.0 * s);
    CHECK(w == doctest::Approx(100.0).epsilon(1e-9));
  }

  SUBCASE("increasing sigma strictly decreases the task weight") {
    Graph g;
    std::map<std::string, Node*> bundle{{"t", g.leaf(Tensor::from({1, 1}, {1.0}), false)}};
    std::map<std::string, Node*> ls{{"t", g.leaf(Tensor::from({1, 1}, {0.3}), true)}};
    Node* total = losses::uncertainty_total(g, bundle, ls);
    g.backward(total);
    // d total / d s = -2 * w * L + 1; with L fixed the weight term is strictly
    // decreasing in s, so the loss-coupling part of the gradient is negative.
    double w = 0.5 * std::exp(-2.0 * 0.3);
    CHECK(ls.at("t")->grad[0] == doctest::Approx(-2.0 * w * 1.0 + 1.0).epsilon(1e-12));
    double w_up = 0.5 * std::exp(-2.0 * 0.4);
    CHECK(w_up < w);
  }

  SUBCASE("gradient descent on log sigma converges to sigma^2 = L") {
    const double L = 3.7;
    double s = 0.0;
    int steps = 0;
    for (; steps < 2000; ++steps) {
      Graph g;
      std::map<std::string, Node*> bundle{{"t", g.leaf(Tensor::from({1, 1}, {L}), false)}};
      Node* sv = g.leaf(Tensor::from({1, 1}, {s}), true);
      std::map<std::string, Node*> ls{{"t", sv}};
      Node* total = losses::uncertainty_total(g, bundle, ls);
      g.backward(total);
      s -= 0.05 * sv->grad[0];
    }
    CHECK(std::exp(2.0 * s) == doctest::Approx(L).epsilon(1e-3));
  }

  SUBCASE("missing task entry is an error") {
    Graph g;
    std::map<std::string, Node*> bundle{{"t", g.leaf(Tensor::from({1, 1}, {1.0}), false)}};
    std::map<std::string, Node*> ls;
    CHECK_THROWS_AS(losses::uncertainty_total(g, bundle, ls), Error);
  }
}

TEST_CASE("static total") {
  Graph g;
  std::map<std::string, Node*> bundle{{"text", g.leaf(Tensor::from({1, 1}, {1.5}), false)},
                                      {"depth", g.leaf(Tensor::from({1, 1}, {2.5}), false)}};
  SUBCASE("unit weights give the plain sum") {
    std::map<std::string, double> w{{"text", 1.0}, {"depth", 1.0}};
    CHECK(losses::static_total(g, bundle, w)->value[0] == doctest::Approx(4.0));
  }
  SUBCASE("zeroing all but one leaves that loss") {
    std::map<std::string, double> w{{"text", 1.0}, {"depth", 0.0}};
    CHECK(losses::static_total(g, bundle, w)->value[0] == doctest::Approx(1.5));
  }
  SUBCASE("hand-weighted sum") {
    std::map<std::string, Node*> b2{{"a", g.leaf(Tensor::from({1, 1}, {1.0}), false)},
                                    {"b", g.leaf(Tensor::from({1, 1}, {1.0}), false)}};
    std::map<std::string, double> w{{"a", 2.0}, {"b", 3.0}};
    CHECK(losses::static_total(g, b2, w)->value[0] == doctest::Approx(5.0));
  }
  SUBCASE("missing weight is an error") {
    std::map<std::string, double> w{{"text", 1.0}};
    CHECK_THROWS_AS(losses::static_total(g, bundle, w), Error);
  }
}

TEST_CASE("KL-based terms are zero iff distributions are equal") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_probs(rng, 1, 5);
    Graph g;
    // equal: loss 0
    Tensor logits({1, 5});
    for (int j = 0; j < 5; ++j) logits.at(0, j) = std::log(t.at(0, j));
    Node* same = g.kl_const_rows(t, g.log_softmax_rows(g.leaf(logits, false)));
    CHECK(std::abs(same->value[0]) < 1e-9);
    // perturbed: strictly positive
    Tensor bumped = logits;
    bumped.at(0, trial % 5) += 0.3;
    Node* diff = g.kl_const_rows(t, g.log_softmax_rows(g.leaf(bumped, false)));
    CHECK(diff->value[0] > 1e-9);
  }
}
