#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "swinlip/conv.hpp"
#include "swinlip/params.hpp"

namespace swinlip {

enum class ModelKind { swinlip, swinlip_streaming, resnet18_frontend };
enum class Activation { prelu, relu };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::swinlip: return "swinlip";
    case ModelKind::swinlip_streaming: return "swinlip_streaming";
    default: return "resnet18_frontend";
  }
}

inline std::string to_string(Activation a) {
  return a == Activation::prelu ? "prelu" : "relu";
}

/// 3-d convolutional embedding of the raw clip.
struct StemConfig {
  Extent3 kernel{3, 5, 5};
  Extent3 stride{1, 1, 1};
  Extent3 pad{1, 2, 2};
  std::size_t out_channels = 24;
  bool batch_norm = true;
  bool conv_bias = true;
  Activation activation = Activation::prelu;

  // Shape-preserving stem feeding the windowed encoder.
  static StemConfig swinlip() { return {}; }

  // Conventional lip-reading frontend stem (bias-free conv before BN).
  static StemConfig baseline() {
    return {{5, 7, 7}, {1, 2, 2}, {2, 3, 3}, 64, true, false, Activation::relu};
  }
};

struct StageSpec {
  std::size_t channels;
  std::size_t depth;
  std::size_t window;
  std::size_t heads;
  std::size_t merge_factor = 2;
};

struct TemporalBlockConfig {
  std::size_t dim = 512;
  std::size_t heads = 16;
  std::size_t ffn_hidden = 512;
  std::size_t conv_expansion = 2;
  std::size_t dw_kernel = 15;
  std::size_t blocks = 2;
  bool streaming = false;
  double dropout = 0.1;
};

struct InputShape {
  std::size_t frames = 29;
  std::size_t height = 88;
  std::size_t width = 88;

  Shape shape() const { return {frames, height, width, 1}; }
};

struct ModelConfig {
  ModelKind kind = ModelKind::swinlip;
  StemConfig stem;
  std::size_t patch = 11;
  std::vector<StageSpec> stages{{64, 2, 4, 2}, {128, 2, 4, 4}, {256, 6, 2, 8}};
  std::size_t mlp_ratio = 4;
  double swin_dropout = 0.0;
  TemporalBlockConfig temporal;
  InputShape input;
  std::uint64_t seed = 0;

  static ModelConfig swinlip() { return {}; }

  static ModelConfig swinlip_streaming() {
    ModelConfig c;
    c.kind = ModelKind::swinlip_streaming;
    c.temporal.streaming = true;
    return c;
  }

  static ModelConfig resnet18_frontend() {
    ModelConfig c;
    c.kind = ModelKind::resnet18_frontend;
    c.stem = StemConfig::baseline();
    return c;
  }

  static ModelConfig preset(ModelKind kind) {
    switch (kind) {
      case ModelKind::swinlip: return swinlip();
      case ModelKind::swinlip_streaming: return swinlip_streaming();
      default: return resnet18_frontend();
    }
  }

  // Small encoder for gradient checks and the overfit run: same topology,
  // narrower channels and fewer stage-3 blocks.
  static ModelConfig reduced(bool streaming = false) {
    ModelConfig c = streaming ? swinlip_streaming() : swinlip();
    c.stem.out_channels = 8;
    c.stages = {{16, 2, 4, 1}, {32, 2, 4, 2}, {64, 2, 2, 4}};
    c.temporal.dim = 128;
    c.temporal.heads = 4;
    c.temporal.ffn_hidden = 128;
    c.temporal.dw_kernel = 7;
    c.input.frames = 8;
    return c;
  }

  bool is_swin() const { return kind != ModelKind::resnet18_frontend; }

  /// Throws ConfigError naming every violated constraint.
  void validate() const;

  /// Architecture-only `key = value` lines in sorted order; the input shape,
  /// seed and dropout rates do not affect weight compatibility.
  std::string canonical() const;

  ConfigHash hash() const;
};

// Patch-grid extents and attention shift of each stage for an input.
struct StageGeometry {
  std::size_t grid_h, grid_w, shift;
};

inline std::vector<StageGeometry> stage_geometry(const ModelConfig& cfg) {
  std::vector<StageGeometry> out;
  std::size_t h = cfg.input.height / cfg.patch;
  std::size_t w = cfg.input.width / cfg.patch;
  for (const auto& s : cfg.stages) {
    // A window covering the whole grid needs no shift.
    const std::size_t shift = s.window >= std::min(h, w) ? 0 : s.window / 2;
    out.push_back({h, w, shift});
    h /= 2;
    w /= 2;
  }
  return out;
}

inline void ModelConfig::validate() const {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  need(input.frames >= 1, "input.frames must be >= 1");
  for (int a = 0; a < 3; ++a) {
    need(stem.kernel[a] >= 1, "stem.kernel extents must be >= 1");
    need(stem.stride[a] >= 1, "stem.stride extents must be >= 1");
  }
  need(stem.out_channels >= 1, "stem.channels must be >= 1");
  const bool streaming_kind = kind == ModelKind::swinlip_streaming;
  if (is_swin()) need(streaming_kind == temporal.streaming,
                      "model.kind and temporal.streaming disagree");
  auto out_extent = [&](std::size_t in, int a) -> long {
    const long span = long(in) + 2 * long(stem.pad[a]) - long(stem.kernel[a]);
    return span < 0 ? 0 : span / long(stem.stride[a]) + 1;
  };
  const long sh = out_extent(input.height, 1), sw = out_extent(input.width, 2);
  need(out_extent(input.frames, 0) >= 1 && sh >= 1 && sw >= 1,
       "stem kernel exceeds padded input extent");
  if (is_swin() && sh >= 1 && sw >= 1) {
    need(stem.stride[0] == 1, "stem.stride temporal extent must be 1");
    need(patch >= 1, "patch.size must be >= 1");
    need(stages.size() == 3, "exactly three stages are supported");
    if (patch >= 1) {
      need(std::size_t(sh) % patch == 0 && std::size_t(sw) % patch == 0,
           "stem output " + std::to_string(sh) + "x" + std::to_string(sw) +
               " not divisible by patch.size " + std::to_string(patch));
      std::size_t h = std::size_t(sh) / patch, w = std::size_t(sw) / patch;
      for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        const std::string key = "stage" + std::to_string(i + 1);
        need(s.channels >= 1 && s.heads >= 1 && s.channels % s.heads == 0,
             key + ".channels must be divisible by " + key + ".heads");
        need(s.depth % 2 == 0 && s.depth >= 2, key + ".depth must be even and >= 2");
        need(s.merge_factor == 2, key + ".merge must be 2");
        need(s.window >= 1 && h % s.window == 0 && w % s.window == 0,
             key + ".window " + std::to_string(s.window) + " does not divide the " +
                 std::to_string(h) + "x" + std::to_string(w) + " grid");
        need(h % 2 == 0 && w % 2 == 0,
             key + " grid " + std::to_string(h) + "x" + std::to_string(w) +
                 " cannot be merged 2x2");
        if (i > 0)
          need(s.channels == 2 * stages[i - 1].channels,
               key + ".channels must double the previous stage");
        h /= 2;
        w /= 2;
      }
      if (!stages.empty())
        need(temporal.dim == 2 * stages.back().channels,
             "temporal.dim must equal twice stage3.channels");
    }
    need(temporal.heads >= 1 && temporal.dim % temporal.heads == 0,
         "temporal.dim must be divisible by temporal.heads");
    need(temporal.dw_kernel % 2 == 1, "temporal.kernel must be odd");
    need(temporal.conv_expansion == 2, "temporal.conv_expansion must be 2 (GLU)");
    need(temporal.blocks >= 1, "temporal.blocks must be >= 1");
    need(temporal.ffn_hidden >= 1, "temporal.ffn_hidden must be >= 1");
    need(temporal.dropout >= 0 && temporal.dropout < 1, "temporal.dropout must be in [0,1)");
    need(mlp_ratio >= 1, "swin.mlp_ratio must be >= 1");
  }
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

namespace detail {

inline std::string triple(const Extent3& e) {
  return std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]);
}

inline std::string boolean(bool b) { return b ? "true" : "false"; }

}  // namespace detail

inline std::string ModelConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["model.kind"] = to_string(kind);
  kv["stem.kernel"] = detail::triple(stem.kernel);
  kv["stem.stride"] = detail::triple(stem.stride);
  kv["stem.padding"] = detail::triple(stem.pad);
  kv["stem.channels"] = std::to_string(stem.out_channels);
  kv["stem.norm"] = detail::boolean(stem.batch_norm);
  kv["stem.bias"] = detail::boolean(stem.conv_bias);
  kv["stem.activation"] = to_string(stem.activation);
  if (is_swin()) {
    kv["patch.size"] = std::to_string(patch);
    kv["swin.mlp_ratio"] = std::to_string(mlp_ratio);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string p = "stage" + std::to_string(i + 1);
      kv[p + ".channels"] = std::to_string(stages[i].channels);
      kv[p + ".depth"] = std::to_string(stages[i].depth);
      kv[p + ".window"] = std::to_string(stages[i].window);
      kv[p + ".heads"] = std::to_string(stages[i].heads);
    }
    kv["temporal.dim"] = std::to_string(temporal.dim);
    kv["temporal.heads"] = std::to_string(temporal.heads);
    kv["temporal.ffn_hidden"] = std::to_string(temporal.ffn_hidden);
    kv["temporal.kernel"] = std::to_string(temporal.dw_kernel);
    kv["temporal.blocks"] = std::to_string(temporal.blocks);
    kv["temporal.streaming"] = detail::boolean(temporal.streaming);
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline ConfigHash sha256(const std::string& text) {
  ConfigHash h{};
  unsigned int len = 0;
  if (!EVP_Digest(text.data(), text.size(), h.data(), &len, EVP_sha256(), nullptr) ||
      len != h.size())
    throw Error("SHA-256 digest failed");
  return h;
}

inline ConfigHash ModelConfig::hash() const { return sha256(canonical()); }

inline std::string to_hex(const ConfigHash& h) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  for (auto b : h) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigEntry {
  std::string value;
  int line;
};

class ConfigParser {
 public:
  explicit ConfigParser(std::map<std::string, ConfigEntry> entries)
      : entries_(std::move(entries)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError("line " + std::to_string(entries_.at(key).line) + ": " + key +
                      ": " + why);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::size_t count(const std::string& key) const {
    const std::string v = entries_.at(key).value;
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(v, &pos);
    } catch (const std::exception&) {
      fail(key, "expected a non-negative integer, got '" + v + "'");
    }
    if (pos != v.size() || v.empty() || v[0] == '-')
      fail(key, "expected a non-negative integer, got '" + v + "'");
    return std::size_t(n);
  }

  double real(const std::string& key) const {
    const std::string v = entries_.at(key).value;
    std::size_t pos = 0;
    double d = 0;
    try {
      d = std::stod(v, &pos);
    } catch (const std::exception&) {
      fail(key, "expected a number, got '" + v + "'");
    }
    if (pos != v.size()) fail(key, "expected a number, got '" + v + "'");
    return d;
  }

  bool flag(const std::string& key) const {
    const std::string v = entries_.at(key).value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(key, "expected true or false, got '" + v + "'");
  }

  Extent3 triple(const std::string& key) const {
    std::string v = entries_.at(key).value;
    if (!v.empty() && v.front() == '(' && v.back() == ')') v = v.substr(1, v.size() - 2);
    std::stringstream ss(v);
    std::string part;
    std::vector<std::size_t> xs;
    while (std::getline(ss, part, ',')) {
      part = trim(part);
      std::size_t pos = 0;
      unsigned long long n = 0;
      try {
        n = std::stoull(part, &pos);
      } catch (const std::exception&) {
        fail(key, "expected three integers like 3,5,5, got '" + entries_.at(key).value + "'");
      }
      if (pos != part.size() || part[0] == '-')
        fail(key, "expected three integers like 3,5,5, got '" + entries_.at(key).value + "'");
      xs.push_back(std::size_t(n));
    }
    if (xs.size() != 3)
      fail(key, "expected three integers like 3,5,5, got '" + entries_.at(key).value + "'");
    return {xs[0], xs[1], xs[2]};
  }

  const std::string& text(const std::string& key) const { return entries_.at(key).value; }

 private:
  std::map<std::string, ConfigEntry> entries_;
};

}  // namespace detail

/// Parses line-based `key = value` text (`#` starts a comment). Omitted keys
/// keep the preset of the selected model kind; unknown keys, malformed values
/// and constraint violations are reported with line numbers.
inline ModelConfig parse_config(const std::string& text) {
  std::map<std::string, detail::ConfigEntry> entries;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (entries.count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                        "' (first on line " + std::to_string(entries[key].line) + ")");
    entries[key] = {value, lineno};
  }

  static const std::vector<std::string> known = [] {
    std::vector<std::string> k = {
        "model.kind",         "seed",           "input.frames",     "input.height",
        "input.width",        "stem.kernel",    "stem.stride",      "stem.padding",
        "stem.channels",      "stem.norm",      "stem.bias",        "stem.activation",
        "patch.size",         "swin.mlp_ratio", "swin.dropout",     "temporal.dim",
        "temporal.heads",     "temporal.ffn_hidden", "temporal.kernel", "temporal.blocks",
        "temporal.streaming", "temporal.dropout", "temporal.conv_expansion"};
    for (int s = 1; s <= 3; ++s)
      for (const char* f : {"channels", "depth", "window", "heads"})
        k.push_back("stage" + std::to_string(s) + "." + f);
    return k;
  }();
  for (const auto& [key, entry] : entries)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" + key + "'");

  detail::ConfigParser p(entries);
  ModelKind kind = ModelKind::swinlip;
  if (p.has("model.kind")) {
    const std::string& k = p.text("model.kind");
    if (k == "swinlip") kind = ModelKind::swinlip;
    else if (k == "swinlip_streaming") kind = ModelKind::swinlip_streaming;
    else if (k == "resnet18_frontend") kind = ModelKind::resnet18_frontend;
    else p.fail("model.kind", "unknown model kind '" + k + "'");
  }
  if (p.has("temporal.streaming")) {
    const bool streaming = p.flag("temporal.streaming");
    if (kind == ModelKind::resnet18_frontend)
      p.fail("temporal.streaming", "not applicable to resnet18_frontend");
    if (streaming) kind = ModelKind::swinlip_streaming;
    else if (kind == ModelKind::swinlip_streaming)
      p.fail("temporal.streaming", "contradicts model.kind = swinlip_streaming");
  }
  ModelConfig c = ModelConfig::preset(kind);

  auto opt = [&](const char* key, auto apply) {
    if (p.has(key)) apply(std::string(key));
  };
  opt("seed", [&](const std::string& k) { c.seed = p.count(k); });
  opt("input.frames", [&](const std::string& k) { c.input.frames = p.count(k); });
  opt("input.height", [&](const std::string& k) { c.input.height = p.count(k); });
  opt("input.width", [&](const std::string& k) { c.input.width = p.count(k); });
  opt("stem.kernel", [&](const std::string& k) { c.stem.kernel = p.triple(k); });
  opt("stem.stride", [&](const std::string& k) { c.stem.stride = p.triple(k); });
  opt("stem.padding", [&](const std::string& k) { c.stem.pad = p.triple(k); });
  opt("stem.channels", [&](const std::string& k) { c.stem.out_channels = p.count(k); });
  opt("stem.norm", [&](const std::string& k) { c.stem.batch_norm = p.flag(k); });
  opt("stem.bias", [&](const std::string& k) { c.stem.conv_bias = p.flag(k); });
  opt("stem.activation", [&](const std::string& k) {
    const std::string& v = p.text(k);
    if (v == "prelu") c.stem.activation = Activation::prelu;
    else if (v == "relu") c.stem.activation = Activation::relu;
    else p.fail(k, "expected prelu or relu, got '" + v + "'");
  });
  opt("patch.size", [&](const std::string& k) { c.patch = p.count(k); });
  opt("swin.mlp_ratio", [&](const std::string& k) { c.mlp_ratio = p.count(k); });
  opt("swin.dropout", [&](const std::string& k) { c.swin_dropout = p.real(k); });
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string pre = "stage" + std::to_string(s + 1) + ".";
    opt((pre + "channels").c_str(), [&](const std::string& k) { c.stages[s].channels = p.count(k); });
    opt((pre + "depth").c_str(), [&](const std::string& k) { c.stages[s].depth = p.count(k); });
    opt((pre + "window").c_str(), [&](const std::string& k) { c.stages[s].window = p.count(k); });
    opt((pre + "heads").c_str(), [&](const std::string& k) { c.stages[s].heads = p.count(k); });
  }
  opt("temporal.dim", [&](const std::string& k) { c.temporal.dim = p.count(k); });
  opt("temporal.heads", [&](const std::string& k) { c.temporal.heads = p.count(k); });
  opt("temporal.ffn_hidden", [&](const std::string& k) { c.temporal.ffn_hidden = p.count(k); });
  opt("temporal.kernel", [&](const std::string& k) { c.temporal.dw_kernel = p.count(k); });
  opt("temporal.blocks", [&](const std::string& k) { c.temporal.blocks = p.count(k); });
  opt("temporal.dropout", [&](const std::string& k) { c.temporal.dropout = p.real(k); });
  opt("temporal.conv_expansion",
      [&](const std::string& k) { c.temporal.conv_expansion = p.count(k); });

  try {
    c.validate();
  } catch (const ConfigError& e) {
    // Point at the lines of the keys that were involved.
    std::string where;
    std::string msg = e.what();
    for (const auto& [key, entry] : entries)
      if (msg.find(key) != std::string::npos)
        where += (where.empty() ? "" : ", ") + std::string("line ") +
                 std::to_string(entry.line) + " (" + key + ")";
    throw ConfigError(where.empty() ? msg : msg + "\n  see " + where);
  }
  return c;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace swinlip
