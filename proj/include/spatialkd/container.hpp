#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/tensor.hpp"

namespace skd {

// Named-array binary container.
//
// Layout (all integers little-endian):
//   magic   "SKDC" (4 bytes)
//   version u32        (currently 1)
//   count   u32        number of entries
//   entry*  count times:
//     name_len u16, name bytes (UTF-8)
//     dtype    u8   0 = f32, 1 = f64, 2 = i64, 3 = raw bytes
//     ndim     u8
//     dims     i64 * ndim
//     payload  dtype-sized elements, little-endian, row-major
//
// Dataset tensor payloads use f32 entries; checkpoints use f64 so that a
// save/load round trip is bit-exact.
class Container {
 public:
  enum class DType : uint8_t { F32 = 0, F64 = 1, I64 = 2, Bytes = 3 };

  void put_f32(const std::string& name, const Tensor& t) {
    Entry e;
    e.dtype = DType::F32;
    e.dims.assign(t.shape.begin(), t.shape.end());
    e.bytes.resize(t.data.size() * 4);
    for (size_t i = 0; i < t.data.size(); ++i) {
      float f = static_cast<float>(t.data[i]);
      std::memcpy(e.bytes.data() + i * 4, &f, 4);
    }
    entries_[name] = std::move(e);
  }

  void put_f64(const std::string& name, const Tensor& t) {
    Entry e;
    e.dtype = DType::F64;
    e.dims.assign(t.shape.begin(), t.shape.end());
    e.bytes.resize(t.data.size() * 8);
    std::memcpy(e.bytes.data(), t.data.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_i64(const std::string& name, const std::vector<int64_t>& v) {
    Entry e;
    e.dtype = DType::I64;
    e.dims = {static_cast<int64_t>(v.size())};
    e.bytes.resize(v.size() * 8);
    std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_bytes(const std::string& name, const std::string& s) {
    Entry e;
    e.dtype = DType::Bytes;
    e.dims = {static_cast<int64_t>(s.size())};
    e.bytes.assign(s.begin(), s.end());
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  Tensor get_tensor(const std::string& name) const {
    const Entry& e = find(name);
    check(e.dtype == DType::F32 || e.dtype == DType::F64, "container: entry '", name,
          "' is not a float tensor");
    std::vector<int> shape(e.dims.begin(), e.dims.end());
    Tensor t(shape);
    if (e.dtype == DType::F32) {
      for (int64_t i = 0; i < t.numel(); ++i) {
        float f;
        std::memcpy(&f, e.bytes.data() + i * 4, 4);
        t[i] = static_cast<double>(f);
      }
    } else {
      std::memcpy(t.data.data(), e.bytes.data(), e.bytes.size());
    }
    return t;
  }

  std::vector<int64_t> get_i64(const std::string& name) const {
    const Entry& e = find(name);
    check(e.dtype == DType::I64, "container: entry '", name, "' is not i64");
    std::vector<int64_t> v(e.dims.empty() ? 0 : e.dims[0]);
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
  }

  std::string get_bytes(const std::string& name) const {
    const Entry& e = find(name);
    check(e.dtype == DType::Bytes, "container: entry '", name, "' is not bytes");
    return std::string(e.bytes.begin(), e.bytes.end());
  }

  void save(const std::string& path) const {
    check(host_is_little_endian(), "container: big-endian hosts unsupported");
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "container: cannot open '", path, "' for writing");
    out.write("SKDC", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      check(name.size() < 65536, "container: name too long");
      write_u16(out, static_cast<uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      uint8_t dt = static_cast<uint8_t>(e.dtype);
      out.write(reinterpret_cast<const char*>(&dt), 1);
      uint8_t nd = static_cast<uint8_t>(e.dims.size());
      out.write(reinterpret_cast<const char*>(&nd), 1);
      for (int64_t d : e.dims) out.write(reinterpret_cast<const char*>(&d), 8);
      out.write(reinterpret_cast<const char*>(e.bytes.data()),
                static_cast<std::streamsize>(e.bytes.size()));
    }
    check(out.good(), "container: write to '", path, "' failed");
  }

  static Container load(const std::string& path) {
    check(host_is_little_endian(), "container: big-endian hosts unsupported");
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "container: cannot open '", path, "'");
    char magic[4];
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, "SKDC", 4) == 0, "container: bad magic in '", path, "'");
    uint32_t version = read_u32(in);
    check(version == 1, "container: unsupported version ", version);
    uint32_t count = read_u32(in);
    Container c;
    for (uint32_t i = 0; i < count; ++i) {
      uint16_t name_len = read_u16(in);
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      Entry e;
      uint8_t dt = 0, nd = 0;
      in.read(reinterpret_cast<char*>(&dt), 1);
      in.read(reinterpret_cast<char*>(&nd), 1);
      e.dtype = static_cast<DType>(dt);
      e.dims.resize(nd);
      for (auto& d : e.dims) in.read(reinterpret_cast<char*>(&d), 8);
      int64_t n = 1;
      for (int64_t d : e.dims) n *= d;
      size_t elem = e.dtype == DType::F32 ? 4 : (e.dtype == DType::Bytes ? 1 : 8);
      e.bytes.resize(static_cast<size_t>(n) * elem);
      in.read(reinterpret_cast<char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
      check(in.good(), "container: truncated entry '", name, "' in '", path, "'");
      c.entries_[name] = std::move(e);
    }
    return c;
  }

 private:
  struct Entry {
    DType dtype = DType::F32;
    std::vector<int64_t> dims;
    std::vector<uint8_t> bytes;
  };

  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "container: missing entry '", name, "'");
    return it->second;
  }

  static bool host_is_little_endian() {
    uint16_t x = 1;
    uint8_t b;
    std::memcpy(&b, &x, 1);
    return b == 1;
  }

  static void write_u32(std::ofstream& o, uint32_t v) {
    o.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u16(std::ofstream& o, uint16_t v) {
    o.write(reinterpret_cast<const char*>(&v), 2);
  }
  static uint32_t read_u32(std::ifstream& i) {
    uint32_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint16_t read_u16(std::ifstream& i) {
    uint16_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 2);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace skd
