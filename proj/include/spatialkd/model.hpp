#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spatialkd/autodiff.hpp"
#include "spatialkd/common.hpp"
#include "spatialkd/rng.hpp"
#include "spatialkd/sequence.hpp"
#include "spatialkd/tensor.hpp"
#include "spatialkd/tokenizer.hpp"

namespace skd {

struct ModelConfig {
  int n_layers = 2;
  int hidden_size = 64;
  int n_heads = 4;
  int mlp_dim = 256;
  int vocab_size = 0;
  int k = 8;  // thinking tokens
  int depth_bins = 8;
  int n_categories = 6;
  int max_seq_len = 64;
  int n_views = 2;
  int view_h = 16;
  int view_w = 16;
  int spat_h = 4;
  int spat_w = 4;
  int spat_c = 8;
  int max_objects = 4;  // detection slots
  bool scratchpad_after_question = false;

  int view_c() const { return 2 + n_categories; }
  int pooled_dim() const {
    return 4 * n_categories + 4 + 5 * n_categories * (n_categories - 1) + 5 * 4;
  }
  int head_dim() const { return hidden_size / n_heads; }

  void validate() const {
    check(n_layers >= 1, "model config: n_layers must be >= 1");
    check(hidden_size >= 1 && hidden_size % n_heads == 0,
          "model config: hidden_size ", hidden_size, " not divisible by n_heads ", n_heads);
    check(mlp_dim >= hidden_size, "model config: mlp_dim ", mlp_dim, " < hidden_size ",
          hidden_size);
    check(k >= 0, "model config: K must be >= 0");
    check(vocab_size > 4, "model config: vocab_size must exceed the 4 specials");
    check(depth_bins >= 2, "model config: depth_bins must be >= 2");
    check(max_seq_len >= 2 + k, "model config: max_seq_len too small for K=", k);
    check(n_views >= 1 && n_views <= 3, "model config: n_views must be in [1,3]");
    check(view_h % spat_h == 0 && view_w % spat_w == 0,
          "model config: view grid must be divisible by spatial head shape");
    check(max_objects >= 1, "model config: max_objects must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"n_layers", n_layers},       {"hidden_size", hidden_size},
            {"n_heads", n_heads},         {"mlp_dim", mlp_dim},
            {"vocab_size", vocab_size},   {"k", k},
            {"depth_bins", depth_bins},   {"n_categories", n_categories},
            {"max_seq_len", max_seq_len}, {"n_views", n_views},
            {"view_h", view_h},           {"view_w", view_w},
            {"spat_h", spat_h},           {"spat_w", spat_w},
            {"spat_c", spat_c},           {"max_objects", max_objects},
            {"scratchpad_after_question", scratchpad_after_question}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.hidden_size = j.at("hidden_size");
    c.n_heads = j.at("n_heads");
    c.mlp_dim = j.at("mlp_dim");
    c.vocab_size = j.at("vocab_size");
    c.k = j.at("k");
    c.depth_bins = j.at("depth_bins");
    c.n_categories = j.at("n_categories");
    c.max_seq_len = j.at("max_seq_len");
    c.n_views = j.at("n_views");
    c.view_h = j.at("view_h");
    c.view_w = j.at("view_w");
    c.spat_h = j.at("spat_h");
    c.spat_w = j.at("spat_w");
    c.spat_c = j.at("spat_c");
    c.max_objects = j.at("max_objects");
    c.scratchpad_after_question = j.at("scratchpad_after_question");
    return c;
  }
};

// Ordered parameter registry; iteration order is creation order, which also
// fixes the RNG draw order at init and the optimizer slot order.
struct Params {
  std::vector<std::pair<std::string, Tensor>> items;
  std::unordered_map<std::string, int> index;

  void add(const std::string& name, Tensor t) {
    check(!index.count(name), "params: duplicate '", name, "'");
    index[name] = static_cast<int>(items.size());
    items.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const { return index.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index.find(name);
    check(it != index.end(), "params: missing '", name, "'");
    return items[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index.find(name);
    check(it != index.end(), "params: missing '", name, "'");
    return items[it->second].second;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [k, t] : items) n += t.numel();
    return n;
  }
};

// Pooled per-view featurization of one scene (see pooled_view_features).
struct ViewInput {
  std::vector<double> pooled;
};

class Model {
 public:
  ModelConfig cfg;
  Params params;

  // Thinking table: N(0, 0.02^2) per contract. Embeddings: N(0, 0.02^2).
  // Matrices: N(0, 1/fan_in). Biases zero, layer-norm gain one.
  static Model init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.cfg = config;
    Rng rng(Rng::derive(seed, 0x30de1));
    const int h = config.hidden_size;

    auto gaussian = [&rng](std::vector<int> shape, double stddev) {
      Tensor t(shape);
      for (auto& v : t.data) v = rng.normal() * stddev;
      return t;
    };
    auto xavier = [&gaussian](int in, int out) {
      return gaussian({in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    };

    m.params.add("embed.token", gaussian({config.vocab_size, h}, 0.02));
    m.params.add("embed.pos", gaussian({config.max_seq_len, h}, 0.02));
    if (config.k > 0) m.params.add("thinking.table", gaussian({config.k, h}, 0.02));

    // The vision token projects straight from the pooled features; the trunk
    // below feeds the auxiliary heads. Both consume the same featurization.
    m.params.add("vision.trunk.w", xavier(config.pooled_dim(), h));
    m.params.add("vision.proj.w", xavier(config.n_views * config.pooled_dim(), h));
    m.params.add("vision.proj.b", Tensor({1, h}));

    for (int l = 0; l < config.n_layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      m.params.add(p + "ln1.g", Tensor::full({1, h}, 1.0));
      m.params.add(p + "ln1.b", Tensor({1, h}));
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
        m.params.add(p + w, xavier(h, h));
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
        m.params.add(p + b, Tensor({1, h}));
      m.params.add(p + "ln2.g", Tensor::full({1, h}, 1.0));
      m.params.add(p + "ln2.b", Tensor({1, h}));
      m.params.add(p + "mlp.w1", xavier(h, config.mlp_dim));
      m.params.add(p + "mlp.b1", Tensor({1, config.mlp_dim}));
      m.params.add(p + "mlp.w2", xavier(config.mlp_dim, h));
      m.params.add(p + "mlp.b2", Tensor({1, h}));
    }
    m.params.add("final_ln.g", Tensor::full({1, h}, 1.0));
    m.params.add("final_ln.b", Tensor({1, h}));
    m.params.add("lm_head.w", xavier(h, config.vocab_size));
    // Vision-conditioned vocabulary bias: a direct cross-modal path from the
    // vision embedding to the logits of every position. Zero-initialized, so
    // the untrained model matches a pure attention readout.
    m.params.add("lm_head.vision.w", Tensor({h, config.vocab_size}));

    // Per-view heads read the view's trunk embedding; sample-level heads read
    // the concatenation of all view embeddings.
    const int cells = config.view_h * config.view_w;
    const int hv = config.n_views * h;
    m.params.add("head.depth.w", xavier(h, cells));
    m.params.add("head.depth.b", Tensor({1, cells}));
    m.params.add("head.depthbins.w", xavier(h, cells * config.depth_bins));
    m.params.add("head.depthbins.b", Tensor({1, cells * config.depth_bins}));
    m.params.add("head.spatial.w", xavier(h, config.spat_h * config.spat_w * config.spat_c));
    m.params.add("head.spatial.b", Tensor({1, config.spat_h * config.spat_w * config.spat_c}));
    m.params.add("head.det_cls.w", xavier(hv, config.max_objects * config.n_categories));
    m.params.add("head.det_cls.b", Tensor({1, config.max_objects * config.n_categories}));
    m.params.add("head.det_box.w", xavier(hv, config.max_objects * 7));
    m.params.add("head.det_box.b", Tensor({1, config.max_objects * 7}));
    m.params.add("head.lr.w", xavier(hv, 2));
    m.params.add("head.lr.b", Tensor({1, 2}));
    m.params.add("head.ab.w", xavier(hv, 2));
    m.params.add("head.ab.b", Tensor({1, 2}));
    m.params.add("head.depthhist.w", xavier(hv, config.depth_bins));
    m.params.add("head.depthhist.b", Tensor({1, config.depth_bins}));
    return m;
  }

  // One leaf per parameter, shared by all forwards in the same graph so batch
  // gradients accumulate in a single place.
  struct Leaves {
    std::unordered_map<std::string, ad::Node*> map;
    ad::Node* at(const std::string& name) const {
      auto it = map.find(name);
      check(it != map.end(), "leaves: missing '", name, "'");
      return it->second;
    }
  };

  Leaves leaves(ad::Graph& g, bool requires_grad) const {
    Leaves lv;
    for (const auto& [name, t] : params.items) lv.map[name] = g.leaf(t, requires_grad);
    return lv;
  }

  struct Forward {
    ad::Node* lm_logits = nullptr;            // [total_len, vocab]
    ad::Node* pooled_vision = nullptr;        // [1, hidden]
    std::vector<ad::Node*> view_features;     // per view [1, hidden]
    std::vector<ad::Node*> spatial;           // per view [spat_h*spat_w, spat_c]
    std::vector<ad::Node*> depth_norm;        // per view [cells, 1], in (0,1)
    std::vector<ad::Node*> depth_bin_logits;  // per view [cells, bins]
    ad::Node* det_cls_logits = nullptr;       // [max_objects, n_categories]
    ad::Node* det_boxes = nullptr;            // [max_objects, 7]
    ad::Node* lr_logits = nullptr;            // [1, 2]
    ad::Node* ab_logits = nullptr;            // [1, 2]
    ad::Node* depth_hist_logits = nullptr;    // [1, bins]
  };

  // Vision trunk + projection shared by the language path and all auxiliary
  // heads. The heads read only vision features, never sequence hidden states.
  Forward forward(ad::Graph& g, const Leaves& lv, const std::vector<ViewInput>& views,
                  const TokenSequence& seq, bool with_heads = true) const {
    check(!views.empty(), "forward: need at least one view");
    check(seq.total_len() <= cfg.max_seq_len, "forward: sequence length ", seq.total_len(),
          " exceeds max_seq_len ", cfg.max_seq_len);
    check(seq.k == cfg.k, "forward: sequence K=", seq.k, " but model K=", cfg.k);

    check(static_cast<int>(views.size()) == cfg.n_views, "forward: got ", views.size(),
          " views, model expects ", cfg.n_views);
    Forward f;
    std::vector<ad::Node*> e_views, p_views;
    for (const auto& view : views) {
      check(static_cast<int>(view.pooled.size()) == cfg.pooled_dim(),
            "forward: pooled view dim ", view.pooled.size(), " expected ", cfg.pooled_dim());
      ad::Node* p = g.constant(Tensor::from({1, cfg.pooled_dim()}, view.pooled));
      p_views.push_back(p);
      e_views.push_back(g.tanh_(g.matmul(p, lv.at("vision.trunk.w"))));
    }
    f.view_features = e_views;
    ad::Node* e_all = e_views.size() == 1 ? e_views[0] : g.concat_cols(e_views);
    ad::Node* p_all = p_views.size() == 1 ? p_views[0] : g.concat_cols(p_views);
    f.pooled_vision = g.add_rowvec(
        g.matmul(g.tanh_(p_all), lv.at("vision.proj.w")), lv.at("vision.proj.b"));

    // Sequence assembly in span order.
    std::vector<int> q_ids(seq.input_ids.begin() + seq.q_start(),
                           seq.input_ids.begin() + seq.q_start() + seq.q_len);
    std::vector<int> a_ids(seq.input_ids.begin() + seq.a_start(),
                           seq.input_ids.begin() + seq.a_start() + seq.a_len);
    std::vector<ad::Node*> parts{f.pooled_vision};
    ad::Node* q_emb = g.gather_rows(lv.at("embed.token"), q_ids);
    if (cfg.k > 0 && !seq.scratchpad_after_question) parts.push_back(lv.at("thinking.table"));
    if (seq.scratchpad_after_question) {
      parts.push_back(q_emb);
      if (cfg.k > 0) parts.push_back(lv.at("thinking.table"));
    } else {
      parts.push_back(q_emb);
    }
    if (seq.a_len > 0) parts.push_back(g.gather_rows(lv.at("embed.token"), a_ids));
    ad::Node* x = g.concat_rows(parts);
    x = g.add(x, g.slice_rows(lv.at("embed.pos"), 0, seq.total_len()));

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      ad::Node* n1 = g.layer_norm(x, lv.at(p + "ln1.g"), lv.at(p + "ln1.b"));
      ad::Node* q = g.add_rowvec(g.matmul(n1, lv.at(p + "attn.wq")), lv.at(p + "attn.bq"));
      ad::Node* kk = g.add_rowvec(g.matmul(n1, lv.at(p + "attn.wk")), lv.at(p + "attn.bk"));
      ad::Node* v = g.add_rowvec(g.matmul(n1, lv.at(p + "attn.wv")), lv.at(p + "attn.bv"));
      std::vector<ad::Node*> heads;
      for (int hd = 0; hd < cfg.n_heads; ++hd) {
        ad::Node* qh = g.slice_cols(q, hd * cfg.head_dim(), cfg.head_dim());
        ad::Node* kh = g.slice_cols(kk, hd * cfg.head_dim(), cfg.head_dim());
        ad::Node* vh = g.slice_cols(v, hd * cfg.head_dim(), cfg.head_dim());
        ad::Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), att_scale);
        ad::Node* probs = g.softmax_rows(g.causal_masked_fill(scores));
        heads.push_back(g.matmul(probs, vh));
      }
      ad::Node* att = g.concat_cols(heads);
      att = g.add_rowvec(g.matmul(att, lv.at(p + "attn.wo")), lv.at(p + "attn.bo"));
      x = g.add(x, att);
      ad::Node* n2 = g.layer_norm(x, lv.at(p + "ln2.g"), lv.at(p + "ln2.b"));
      ad::Node* m1 = g.gelu(g.add_rowvec(g.matmul(n2, lv.at(p + "mlp.w1")), lv.at(p + "mlp.b1")));
      ad::Node* m2 = g.add_rowvec(g.matmul(m1, lv.at(p + "mlp.w2")), lv.at(p + "mlp.b2"));
      x = g.add(x, m2);
      check(x->value.all_finite(), "forward: non-finite activation at layer ", l);
    }
    x = g.layer_norm(x, lv.at("final_ln.g"), lv.at("final_ln.b"));
    ad::Node* vocab_bias = g.matmul(f.pooled_vision, lv.at("lm_head.vision.w"));
    f.lm_logits = g.add_rowvec(g.matmul(x, lv.at("lm_head.w")), vocab_bias);
    check(f.lm_logits->value.all_finite(), "forward: non-finite lm logits");

    if (with_heads) {
      const int cells = cfg.view_h * cfg.view_w;
      for (ad::Node* ev : e_views) {
        ad::Node* d = g.sigmoid_(
            g.add_rowvec(g.matmul(ev, lv.at("head.depth.w")), lv.at("head.depth.b")));
        f.depth_norm.push_back(g.reshape(d, {cells, 1}));
        ad::Node* bl =
            g.add_rowvec(g.matmul(ev, lv.at("head.depthbins.w")), lv.at("head.depthbins.b"));
        f.depth_bin_logits.push_back(g.reshape(bl, {cells, cfg.depth_bins}));
        ad::Node* sp =
            g.add_rowvec(g.matmul(ev, lv.at("head.spatial.w")), lv.at("head.spatial.b"));
        f.spatial.push_back(g.reshape(sp, {cfg.spat_h * cfg.spat_w, cfg.spat_c}));
      }
      ad::Node* dc =
          g.add_rowvec(g.matmul(e_all, lv.at("head.det_cls.w")), lv.at("head.det_cls.b"));
      f.det_cls_logits = g.reshape(dc, {cfg.max_objects, cfg.n_categories});
      ad::Node* db =
          g.add_rowvec(g.matmul(e_all, lv.at("head.det_box.w")), lv.at("head.det_box.b"));
      f.det_boxes = g.reshape(db, {cfg.max_objects, 7});
      f.lr_logits = g.add_rowvec(g.matmul(e_all, lv.at("head.lr.w")), lv.at("head.lr.b"));
      f.ab_logits = g.add_rowvec(g.matmul(e_all, lv.at("head.ab.w")), lv.at("head.ab.b"));
      f.depth_hist_logits =
          g.add_rowvec(g.matmul(e_all, lv.at("head.depthhist.w")), lv.at("head.depthhist.b"));
    }
    return f;
  }

  // Greedy decoding; the thinking positions stay in the attended context but
  // are never emitted. Returns answer ids ending with EOS when it fired.
  std::vector<int> generate(const std::vector<ViewInput>& views, const std::vector<int>& q_ids,
                            int max_new_tokens) const {
    std::vector<int> out;
    for (int step = 0; step < max_new_tokens; ++step) {
      TokenSequence seq =
          build_sequence(cfg.k, q_ids, out, cfg.max_seq_len, cfg.scratchpad_after_question);
      if (seq.total_len() + 1 > cfg.max_seq_len) break;
      ad::Graph g;
      Leaves lv = leaves(g, false);
      Forward f = forward(g, lv, views, seq, /*with_heads=*/false);
      int last = seq.total_len() - 1;
      int best = 0;
      double best_v = f.lm_logits->value.at(last, 0);
      for (int j = 1; j < cfg.vocab_size; ++j) {
        double v = f.lm_logits->value.at(last, j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out.push_back(best);
      if (best == Vocab::kEos) break;
    }
    return out;
  }

  // Diagnostic decoding of the scratchpad: argmax of the LM head at each of
  // the K thinking positions. Read-only; generation is unaffected.
  std::vector<std::string> decode_thinking(const std::vector<ViewInput>& views,
                                           const std::vector<int>& q_ids,
                                           const Vocab& vocab) const {
    if (cfg.k == 0) return {};
    TokenSequence seq =
        build_sequence(cfg.k, q_ids, {}, cfg.max_seq_len, cfg.scratchpad_after_question);
    ad::Graph g;
    Leaves lv = leaves(g, false);
    Forward f = forward(g, lv, views, seq, /*with_heads=*/false);
    std::vector<std::string> out;
    for (int t = 0; t < cfg.k; ++t) {
      int row = seq.t_start() + t;
      int best = 0;
      double best_v = f.lm_logits->value.at(row, 0);
      for (int j = 1; j < cfg.vocab_size; ++j) {
        double v = f.lm_logits->value.at(row, j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out.push_back(vocab.token_of(best));
    }
    return out;
  }
};

}  // namespace skd
