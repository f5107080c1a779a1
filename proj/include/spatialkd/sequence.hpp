#pragma once

#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/tensor.hpp"

namespace skd {

// Sentinel for positions that carry no language-model label.
constexpr int kMaskLabel = -100;

// The student's input layout: one vision position, K thinking positions, the
// question tokens, then the answer tokens. Labels exist only on answer
// positions; the loss pairs the logits at position p-1 with the label at p.
//
// An alternative layout with the scratchpad after the question is available
// behind a flag (off by default).
struct TokenSequence {
  int k = 0;
  int q_len = 0;
  int a_len = 0;
  bool scratchpad_after_question = false;

  std::vector<int> input_ids;  // total_len; vision/thinking slots hold 0 (unused)
  std::vector<int> label_ids;  // total_len; kMaskLabel except answer positions

  int total_len() const { return 1 + k + q_len + a_len; }
  int v_pos() const { return 0; }
  int t_start() const { return scratchpad_after_question ? 1 + q_len : 1; }
  int q_start() const { return scratchpad_after_question ? 1 : 1 + k; }
  int a_start() const { return 1 + k + q_len; }

  int unmasked_count() const {
    int n = 0;
    for (int l : label_ids)
      if (l != kMaskLabel) ++n;
    return n;
  }
};

// q_ids must be nonempty; a_ids may be empty at inference time. Sequences that
// exceed max_seq_len are rejected outright: the answer span is never silently
// truncated.
inline TokenSequence build_sequence(int k, const std::vector<int>& q_ids,
                                    const std::vector<int>& a_ids, int max_seq_len,
                                    bool scratchpad_after_question = false) {
  check(k >= 0, "build_sequence: K must be >= 0, got ", k);
  check(!q_ids.empty(), "build_sequence: question span is empty");
  TokenSequence seq;
  seq.k = k;
  seq.q_len = static_cast<int>(q_ids.size());
  seq.a_len = static_cast<int>(a_ids.size());
  seq.scratchpad_after_question = scratchpad_after_question;
  check(seq.total_len() <= max_seq_len, "build_sequence: total length ", seq.total_len(),
        " exceeds max_seq_len ", max_seq_len, "; refusing to truncate");

  seq.input_ids.assign(seq.total_len(), 0);
  seq.label_ids.assign(seq.total_len(), kMaskLabel);
  for (int i = 0; i < seq.q_len; ++i) seq.input_ids[seq.q_start() + i] = q_ids[i];
  for (int i = 0; i < seq.a_len; ++i) {
    seq.input_ids[seq.a_start() + i] = a_ids[i];
    seq.label_ids[seq.a_start() + i] = a_ids[i];
  }
  return seq;
}

// Lower-triangular visibility: position i attends to positions j <= i.
inline Tensor causal_mask(int total_len) {
  check(total_len >= 1, "causal_mask: length must be >= 1");
  Tensor m({total_len, total_len});
  for (int i = 0; i < total_len; ++i)
    for (int j = 0; j <= i; ++j) m.at(i, j) = 1.0;
  return m;
}

}  // namespace skd
