#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillarmatch/autodiff/tape.hpp"
#include "pillarmatch/error.hpp"

namespace pillarmatch {

// Versioned binary container for checkpoints and preprocessed pairs.
//
//   offset 0   8 bytes   magic "PILLARMC"
//   offset 8   u32 LE    format version
//   offset 12  u32 LE    header length H
//   offset 16  H bytes   UTF-8 JSON header:
//                        {"kind": str, "manifest": {...},
//                         "tensors": [{"name", "dtype": "f32"|"f64"|"i64",
//                                      "shape": [..], "offset", "bytes"}]}
//   16 + H     payload   tensor data, little-endian, row-major; offsets are
//                        relative to the payload start
class Container {
 public:
  static constexpr char kMagic[8] = {'P', 'I', 'L', 'L', 'A', 'R', 'M', 'C'};
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  nlohmann::json manifest = nlohmann::json::object();

  template <class S>
  void put_matrix(const std::string& name, const ad::Matrix<S>& m) {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    Entry e{name, std::is_same_v<S, float> ? "f32" : "f64", {m.rows(), m.cols()}, {}};
    append_le(e.data, m.data(), static_cast<std::size_t>(m.size()));
    add(std::move(e));
  }

  void put_ints(const std::string& name, const std::vector<std::int64_t>& v, std::vector<std::int64_t> shape = {}) {
    if (shape.empty()) shape = {static_cast<std::int64_t>(v.size())};
    Entry e{name, "i64", std::move(shape), {}};
    append_le(e.data, v.data(), v.size());
    add(std::move(e));
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  std::vector<std::int64_t> shape(const std::string& name) const { return get(name).shape; }

  // Reads f32 or f64 payloads into the requested scalar type.
  template <class S>
  ad::Matrix<S> matrix(const std::string& name) const {
    const Entry& e = get(name);
    if (e.shape.size() != 2) fail(ErrorKind::format, "tensor '" + name + "' is not rank 2");
    ad::Matrix<S> m(e.shape[0], e.shape[1]);
    if (e.dtype == "f32") {
      std::vector<float> tmp(static_cast<std::size_t>(m.size()));
      read_le(e, tmp.data(), tmp.size());
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(tmp[static_cast<std::size_t>(k)]);
    } else if (e.dtype == "f64") {
      std::vector<double> tmp(static_cast<std::size_t>(m.size()));
      read_le(e, tmp.data(), tmp.size());
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(tmp[static_cast<std::size_t>(k)]);
    } else {
      fail(ErrorKind::format, "tensor '" + name + "' is not floating point");
    }
    return m;
  }

  std::vector<std::int64_t> ints(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != "i64") fail(ErrorKind::format, "tensor '" + name + "' is not i64");
    std::vector<std::int64_t> v(e.data.size() / 8);
    read_le(e, v.data(), v.size());
    return v;
  }

  std::string serialize() const {
    nlohmann::json header;
    header["kind"] = kind;
    header["manifest"] = manifest;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t off = 0;
    for (const auto& e : entries_) {
      header["tensors"].push_back(
          {{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", off}, {"bytes", e.data.size()}});
      off += e.data.size();
    }
    const std::string h = header.dump();
    std::string out(kMagic, 8);
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    for (const auto& e : entries_) out += e.data;
    return out;
  }

  static Container parse(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) fail(ErrorKind::format, "not a container file (bad magic)");
    const std::uint32_t version = read_u32(bytes, 8);
    if (version != kVersion) fail(ErrorKind::format, "unsupported container version " + std::to_string(version));
    const std::uint32_t hlen = read_u32(bytes, 12);
    if (16 + std::size_t(hlen) > bytes.size()) fail(ErrorKind::format, "truncated container header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const std::exception& ex) {
      fail(ErrorKind::format, std::string("container header: ") + ex.what());
    }
    Container c;
    const std::size_t payload = 16 + hlen;
    try {
      c.kind = header.at("kind").get<std::string>();
      c.manifest = header.at("manifest");
      for (const auto& t : header.at("tensors")) {
        Entry e{t.at("name").get<std::string>(), t.at("dtype").get<std::string>(),
                t.at("shape").get<std::vector<std::int64_t>>(), {}};
        const auto off = t.at("offset").get<std::uint64_t>();
        const auto len = t.at("bytes").get<std::uint64_t>();
        if (payload + off + len > bytes.size()) fail(ErrorKind::format, "truncated tensor '" + e.name + "'");
        e.data = bytes.substr(payload + off, len);
        std::int64_t count = 1;
        for (auto s : e.shape) count *= s;
        const std::size_t width = e.dtype == "f32" ? 4 : 8;
        if (static_cast<std::uint64_t>(count) * width != len) fail(ErrorKind::format, "tensor '" + e.name + "' size mismatch");
        c.add(std::move(e));
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::format, std::string("container header: ") + ex.what());
    }
    return c;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write failed: " + path.string());
  }

  static Container read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

 private:
  struct Entry {
    std::string name;
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::string data;
  };

  void add(Entry e) {
    if (has(e.name)) fail(ErrorKind::format, "duplicate tensor '" + e.name + "'");
    entries_.push_back(std::move(e));
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  const Entry& get(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) fail(ErrorKind::format, "missing tensor '" + name + "'");
    return *e;
  }

  template <class T>
  static void append_le(std::string& out, const T* v, std::size_t count) {
    const std::size_t start = out.size();
    out.resize(start + count * sizeof(T));
    std::memcpy(out.data() + start, v, count * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t k = 0; k < count; ++k) {
        char* p = out.data() + start + k * sizeof(T);
        std::reverse(p, p + sizeof(T));
      }
    }
  }

  template <class T>
  static void read_le(const Entry& e, T* v, std::size_t count) {
    if (e.data.size() != count * sizeof(T)) fail(ErrorKind::format, "tensor '" + e.name + "' size mismatch");
    std::string tmp = e.data;
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t k = 0; k < count; ++k) std::reverse(tmp.data() + k * sizeof(T), tmp.data() + (k + 1) * sizeof(T));
    }
    std::memcpy(v, tmp.data(), tmp.size());
  }

  static void append_u32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
  }

  static std::uint32_t read_u32(const std::string& b, std::size_t off) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(static_cast<unsigned char>(b[off + std::size_t(k)])) << (8 * k);
    return v;
  }

  std::vector<Entry> entries_;
};

}  // namespace pillarmatch
