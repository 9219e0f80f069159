#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace swinlip {

using Shape = std::vector<std::size_t>;

// Error hierarchy. CLI exit codes map onto these: ConfigError -> 2,
// IoError (and FormatError) -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Row-major strides in elements.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <class T>
class Tape;

/// Dense row-major N-d array. Copies share the underlying buffer; values are
/// treated as immutable except through mutable_data(), which is reserved for
/// explicit in-place parameter updates. A tensor produced on a Tape carries a
/// handle to its node there.
template <class T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports 32-bit and 64-bit floats");

 public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(numel(shape_), fill)) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(std::move(values))) {
    check_extents();
    if (buf_->size() != numel(shape_))
      throw DimensionError("tensor data length " +
                           std::to_string(buf_->size()) +
                           " does not match shape " + to_string(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return buf_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const T> data() const { return {buf_->data(), buf_->size()}; }
  // In-place access; every holder of this buffer observes the change.
  std::span<T> mutable_data() { return {buf_->data(), buf_->size()}; }

  const T& operator[](std::size_t i) const { return (*buf_)[i]; }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size())
      throw DimensionError("index rank mismatch for shape " +
                           to_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis])
        throw DimensionError("index out of range for shape " +
                             to_string(shape_));
      off = off * shape_[axis++] + i;
    }
    return (*buf_)[off];
  }

  T item() const {
    if (size() != 1)
      throw DimensionError("item() on non-scalar tensor " + to_string(shape_));
    return (*buf_)[0];
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Same values and shape, no tape participation.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  // Deep copy without tape participation.
  Tensor clone() const {
    return Tensor(shape_, std::vector<T>(buf_->begin(), buf_->end()));
  }

  // Shares the buffer under a new shape with the same element count.
  Tensor view(Shape shape) const {
    if (numel(shape) != size())
      throw DimensionError("cannot view " + to_string(shape_) + " as " +
                           to_string(shape));
    Tensor t = detached();
    t.shape_ = std::move(shape);
    t.check_extents();
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    std::transform(buf_->begin(), buf_->end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_buffer(const Tensor& other) const { return buf_ == other.buf_; }

 private:
  friend class Tape<T>;

  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0)
        throw DimensionError("tensor extents must be positive, got " +
                             to_string(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), [](T p, T q) {
    return std::memcmp(&p, &q, sizeof(T)) == 0;
  });
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace swinlip
