#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "swinlip/tensor.hpp"

namespace swinlip {

static_assert(std::endian::native == std::endian::little,
              "binary tensor I/O assumes a little-endian host");

/// Malformed binary input. The fault tells which check failed.
class FormatError : public IoError {
 public:
  enum class Fault { bad_magic, bad_version, bad_dtype, config_hash, truncated };

  FormatError(Fault fault, const std::string& what) : IoError(what), fault_(fault) {}
  Fault fault() const { return fault_; }

 private:
  Fault fault_;
};

namespace io {

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const char* what) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V)))
    throw FormatError(FormatError::Fault::truncated,
                      std::string("truncated input while reading ") + what);
  return v;
}

inline void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what) {
  if (!in.read(dst, static_cast<std::streamsize>(n)))
    throw FormatError(FormatError::Fault::truncated,
                      std::string("truncated input while reading ") + what);
}

}  // namespace io

template <class T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

// SLT1: magic, u8 dtype (0=f32, 1=f64), u8 rank, rank x u32 extents, payload.
template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  if (t.rank() > 255) throw DimensionError("rank too large for SLT1");
  out.write("SLT1", 4);
  io::put<std::uint8_t>(out, dtype_code<T>());
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw DimensionError("extent too large for SLT1");
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  }
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw IoError("failed writing tensor payload");
}

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline AnyTensor read_any_tensor(std::istream& in) {
  char magic[4];
  io::get_bytes(in, magic, 4, "tensor magic");
  if (std::memcmp(magic, "SLT1", 4) != 0)
    throw FormatError(FormatError::Fault::bad_magic, "not an SLT1 tensor");
  const auto code = io::get<std::uint8_t>(in, "dtype");
  const auto rank = io::get<std::uint8_t>(in, "rank");
  Shape shape(rank);
  for (auto& e : shape) e = io::get<std::uint32_t>(in, "extent");
  auto load = [&](auto tag) -> AnyTensor {
    using V = decltype(tag);
    std::vector<V> v(numel(shape));
    io::get_bytes(in, reinterpret_cast<char*>(v.data()), v.size() * sizeof(V),
                  "tensor payload");
    return Tensor<V>(shape, std::move(v));
  };
  if (code == 0) return load(float{});
  if (code == 1) return load(double{});
  throw FormatError(FormatError::Fault::bad_dtype,
                    "unknown dtype code " + std::to_string(code));
}

// Reads and converts to T if the stored dtype differs.
template <class T>
Tensor<T> read_tensor(std::istream& in) {
  return std::visit(
      [](auto&& t) -> Tensor<T> {
        using V = typename std::decay_t<decltype(t)>::value_type;
        if constexpr (std::is_same_v<V, T>)
          return t;
        else
          return t.template cast<T>();
      },
      read_any_tensor(in));
}

template <class T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_tensor(out, t);
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_tensor<T>(in);
}

}  // namespace swinlip
