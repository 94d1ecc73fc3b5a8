#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "patchforge/nn/params.hpp"
#include "patchforge/nn/tensor.hpp"

namespace patchforge::nn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "PFCKPT1";

/// Flat container of named tensors, scalars and text blobs.
///
/// Layout (all integers u64 little-endian, reals as raw IEEE-754 bits):
///   "PFCKPT1" '\0'
///   tensor count, then per tensor: name, rows, cols, rows*cols reals
///   scalar count, then per scalar: name, real
///   text count, then per text: name, body
/// Strings are a u64 length followed by bytes. Entries are sorted by name.
struct Checkpoint {
  std::map<std::string, Tensor2> tensors;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> texts;

  bool operator==(const Checkpoint&) const = default;

  const Tensor2& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    return it->second;
  }
  double scalar(const std::string& name) const {
    auto it = scalars.find(name);
    if (it == scalars.end()) throw CheckpointError("checkpoint has no scalar '" + name + "'");
    return it->second;
  }
  double scalar_or(const std::string& name, double fallback) const {
    auto it = scalars.find(name);
    return it == scalars.end() ? fallback : it->second;
  }
  const std::string& text(const std::string& name) const {
    auto it = texts.find(name);
    if (it == texts.end()) throw CheckpointError("checkpoint has no text '" + name + "'");
    return it->second;
  }

  /// Stores values, gradients-free, plus Adam moments and step counts under
  /// `prefix`.
  void put_params(const std::string& prefix, const ParamSet& params) {
    for (const Parameter& p : params) {
      tensors[prefix + p.name] = p.value;
      tensors[prefix + p.name + "#m"] = p.m;
      tensors[prefix + p.name + "#v"] = p.v;
      scalars[prefix + p.name + "#steps"] = static_cast<double>(p.steps);
    }
  }

  void get_params(const std::string& prefix, ParamSet& params) const {
    for (Parameter& p : params) {
      const Tensor2& v = tensor(prefix + p.name);
      if (!v.same_shape(p.value))
        throw CheckpointError("shape mismatch for '" + p.name + "': " + v.shape_string() + " vs " +
                              p.value.shape_string());
      p.value = v;
      p.m = tensor(prefix + p.name + "#m");
      p.v = tensor(prefix + p.name + "#v");
      p.steps = static_cast<std::uint64_t>(scalar(prefix + p.name + "#steps"));
      p.grad.fill(0.0);
    }
  }

  std::string serialize() const {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto u64 = [&out](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    auto str = [&](const std::string& s) {
      u64(s.size());
      out += s;
    };
    auto real = [&](double d) { u64(std::bit_cast<std::uint64_t>(d)); };
    u64(tensors.size());
    for (const auto& [name, t] : tensors) {
      str(name);
      u64(t.rows);
      u64(t.cols);
      for (double d : t.data) real(d);
    }
    u64(scalars.size());
    for (const auto& [name, v] : scalars) {
      str(name);
      real(v);
    }
    u64(texts.size());
    for (const auto& [name, body] : texts) {
      str(name);
      str(body);
    }
    return out;
  }

  static Checkpoint deserialize(const std::string& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (bytes.size() - pos < n) throw CheckpointError("truncated checkpoint");
    };
    need(sizeof(kCheckpointMagic));
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
      throw CheckpointError("not a PFCKPT1 checkpoint");
    pos = sizeof(kCheckpointMagic);
    auto u64 = [&]() {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
      pos += 8;
      return v;
    };
    auto str = [&]() {
      const std::uint64_t n = u64();
      need(n);
      std::string s = bytes.substr(pos, n);
      pos += n;
      return s;
    };
    auto real = [&]() { return std::bit_cast<double>(u64()); };
    Checkpoint c;
    for (std::uint64_t n = u64(), i = 0; i < n; ++i) {
      std::string name = str();
      const std::uint64_t rows = u64(), cols = u64();
      if (cols != 0 && rows > (bytes.size() - pos) / 8 / cols) throw CheckpointError("truncated checkpoint");
      Tensor2 t(rows, cols);
      for (double& d : t.data) d = real();
      c.tensors.emplace(std::move(name), std::move(t));
    }
    for (std::uint64_t n = u64(), i = 0; i < n; ++i) {
      std::string name = str();
      c.scalars.emplace(std::move(name), real());
    }
    for (std::uint64_t n = u64(), i = 0; i < n; ++i) {
      std::string name = str();
      c.texts.emplace(std::move(name), str());
    }
    if (pos != bytes.size()) throw CheckpointError("trailing bytes in checkpoint");
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
  }
};

}  // namespace patchforge::nn
