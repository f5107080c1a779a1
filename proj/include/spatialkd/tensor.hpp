#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "spatialkd/common.hpp"

namespace skd {

// Dense row-major tensor of doubles. Most of the codebase treats tensors as
// 2-D matrices [rows, cols]; higher-rank grids are stored flattened with the
// logical dims kept in `shape`.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<int> s) : shape(s) { data.assign(numel_of(shape), 0.0); }
  explicit Tensor(const std::vector<int>& s) : shape(s) { data.assign(numel_of(shape), 0.0); }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      check(d >= 0, "tensor: negative dim ", d);
      n *= d;
    }
    return n;
  }

  static Tensor zeros(const std::vector<int>& s) { return Tensor(s); }

  static Tensor full(const std::vector<int>& s, double v) {
    Tensor t(s);
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor from(const std::vector<int>& s, std::vector<double> values) {
    Tensor t;
    t.shape = s;
    check(static_cast<int64_t>(values.size()) == numel_of(s), "tensor: value count ",
          values.size(), " does not match shape numel ", numel_of(s));
    t.data = std::move(values);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  int rows() const {
    check(shape.size() == 2, "tensor: rows() on rank-", shape.size(), " tensor");
    return shape[0];
  }
  int cols() const {
    check(shape.size() == 2, "tensor: cols() on rank-", shape.size(), " tensor");
    return shape[1];
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
  }

  double mean() const { return data.empty() ? 0.0 : sum() / static_cast<double>(data.size()); }

  // Population standard deviation.
  double stddev() const {
    if (data.empty()) return 0.0;
    double m = mean();
    double acc = 0.0;
    for (double v : data) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(data.size()));
  }

  double norm2() const {
    double acc = 0.0;
    for (double v : data) acc += v * v;
    return std::sqrt(acc);
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  out += ")";
  return out;
}

}  // namespace skd
