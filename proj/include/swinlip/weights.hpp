#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "swinlip/config.hpp"
#include "swinlip/model.hpp"
#include "swinlip/params.hpp"
#include "swinlip/tensor_io.hpp"

namespace swinlip {

constexpr std::uint16_t kWeightsVersion = 1;

// SLWZ: magic, u16 version, 32-byte config hash, u32 count, then per entry
// u16 name length, name bytes, SLT1 tensor.
template <class T>
void write_weights(std::ostream& out, const ParamStore<T>& store) {
  out.write("SLWZ", 4);
  io::put<std::uint16_t>(out, kWeightsVersion);
  out.write(reinterpret_cast<const char*>(store.config_hash().data()), 32);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    if (name.size() > 0xFFFF) throw IoError("parameter name too long: " + name);
    io::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, store.tensors()[i]);
  }
  if (!out) throw IoError("failed writing weights");
}

template <class T>
ParamStore<T> read_weights(std::istream& in) {
  char magic[4];
  io::get_bytes(in, magic, 4, "weights magic");
  if (std::memcmp(magic, "SLWZ", 4) != 0)
    throw FormatError(FormatError::Fault::bad_magic, "not an SLWZ weights file");
  const auto version = io::get<std::uint16_t>(in, "version");
  if (version != kWeightsVersion)
    throw FormatError(FormatError::Fault::bad_version,
                      "unsupported weights version " + std::to_string(version));
  ConfigHash hash;
  io::get_bytes(in, reinterpret_cast<char*>(hash.data()), 32, "config hash");
  const auto count = io::get<std::uint32_t>(in, "entry count");
  ParamStore<T> store;
  store.set_config_hash(hash);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::get<std::uint16_t>(in, "name length");
    std::string name(len, '\0');
    io::get_bytes(in, name.data(), len, "parameter name");
    store.add(std::move(name), read_tensor<T>(in));
  }
  return store;
}

template <class T>
void save_weights(const ParamStore<T>& store, const std::string& path) {
  std::ostringstream buf(std::ios::binary);
  write_weights(buf, store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

template <class T>
ParamStore<T> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_weights<T>(in);
}

/// Loads weights for cfg. A file written for another architecture is
/// rejected before any tensor is returned, as are missing or misshaped entries.
template <class T>
Model<T> load_model(const ModelConfig& cfg, const std::string& path) {
  cfg.validate();
  ParamStore<T> store = load_weights<T>(path);
  if (store.config_hash() != cfg.hash())
    throw FormatError(FormatError::Fault::config_hash,
                      "weights in '" + path + "' were saved for a different configuration");
  for (const auto& spec : model_layout(cfg)) {
    if (!store.contains(spec.name))
      throw FormatError(FormatError::Fault::config_hash, "weights lack '" + spec.name + "'");
    if (store.get(spec.name).shape() != spec.shape)
      throw FormatError(FormatError::Fault::config_hash,
                        "weights entry '" + spec.name + "' has shape " +
                            to_string(store.get(spec.name).shape()) + ", expected " +
                            to_string(spec.shape));
  }
  return Model<T>{cfg, std::move(store)};
}

}  // namespace swinlip
