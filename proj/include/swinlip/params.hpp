#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "swinlip/rng.hpp"
#include "swinlip/tape.hpp"
#include "swinlip/tensor.hpp"

namespace swinlip {

enum class InitKind { trunc_normal, zeros, ones, constant };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::trunc_normal;
  double value = 0.0;  // std for trunc_normal, fill for constant
};

using ParamLayout = std::vector<ParamSpec>;

// Non-trainable state (batch-norm running statistics) is stored alongside
// parameters and recognized by name.
inline bool is_buffer_name(std::string_view name) {
  auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() && name.substr(name.size() - s.size()) == s;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

// Row of the cost report that owns a parameter: its name minus the last
// dotted component.
inline std::string owner_of(std::string_view name) {
  const auto dot = name.rfind('.');
  return std::string(dot == std::string_view::npos ? name : name.substr(0, dot));
}

/// Appends parameter specs under hierarchical names.
class LayoutBuilder {
 public:
  void tensor(std::string name, Shape shape, InitKind init, double value = 0.0) {
    specs_.push_back({std::move(name), std::move(shape), init, value});
  }

  // Weight is [in, out].
  void linear(const std::string& prefix, std::size_t in, std::size_t out,
              bool bias = true) {
    tensor(prefix + ".weight", {in, out}, InitKind::trunc_normal, 0.02);
    if (bias) tensor(prefix + ".bias", {out}, InitKind::zeros);
  }

  void layer_norm(const std::string& prefix, std::size_t c) {
    tensor(prefix + ".weight", {c}, InitKind::ones);
    tensor(prefix + ".bias", {c}, InitKind::zeros);
  }

  void batch_norm(const std::string& prefix, std::size_t c) {
    layer_norm(prefix, c);
    tensor(prefix + ".running_mean", {c}, InitKind::zeros);
    tensor(prefix + ".running_var", {c}, InitKind::ones);
  }

  const ParamLayout& layout() const { return specs_; }
  ParamLayout take() { return std::move(specs_); }

 private:
  ParamLayout specs_;
};

using ConfigHash = std::array<std::uint8_t, 32>;

/// Ordered name -> tensor map holding a model's parameters and buffers.
template <class T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
    return tensors_[it->second];
  }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
    return tensors_[it->second];
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }

  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (!is_buffer_name(names_[i])) n += tensors_[i].size();
    return n;
  }

  // Copy whose trainable entries are leaves on `tape`; buffers are shared
  // untaped so batch-norm updates still reach this store.
  ParamStore attached(Tape<T>& tape) const {
    ParamStore out;
    out.hash_ = hash_;
    out.seed_ = seed_;
    for (std::size_t i = 0; i < names_.size(); ++i)
      out.add(names_[i], is_buffer_name(names_[i]) ? tensors_[i]
                                                   : tape.watch(tensors_[i].detached()));
    return out;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    out.set_config_hash(hash_);
    out.set_seed(seed_);
    for (std::size_t i = 0; i < names_.size(); ++i)
      out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  const ConfigHash& config_hash() const { return hash_; }
  void set_config_hash(const ConfigHash& h) { hash_ = h; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  ConfigHash hash_{};
  std::uint64_t seed_ = 0;
};

/// Allocates and initializes a layout in order from one Rng stream.
template <class T>
ParamStore<T> initialize(const ParamLayout& layout, Rng& rng) {
  ParamStore<T> store;
  store.set_seed(rng.seed());
  for (const auto& spec : layout) {
    std::vector<T> v(numel(spec.shape));
    switch (spec.init) {
      case InitKind::trunc_normal:
        for (auto& x : v) x = static_cast<T>(rng.truncated_normal(spec.value));
        break;
      case InitKind::zeros: std::fill(v.begin(), v.end(), T(0)); break;
      case InitKind::ones: std::fill(v.begin(), v.end(), T(1)); break;
      case InitKind::constant: std::fill(v.begin(), v.end(), T(spec.value)); break;
    }
    store.add(spec.name, Tensor<T>(spec.shape, std::move(v)));
  }
  return store;
}

}  // namespace swinlip
