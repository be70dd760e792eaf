#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctsae {

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

/// Dense row-major n-d array. Value type; float for training, double for
/// verification runs.
template <class S>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {
    check_shape();
  }
  TensorT(Shape shape, S fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_shape();
  }
  TensorT(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_))
      throw TensorError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
  }

  static TensorT scalar(S v) { return TensorT({1}, std::vector<S>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& buffer() { return data_; }
  const std::vector<S>& buffer() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  S& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <class... I>
  S operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class T>
  TensorT<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return TensorT<T>(shape_, std::move(out));
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  void check_shape() const {
    for (std::size_t e : shape_)
      if (e == 0) throw TensorError("zero extent in shape " + shape_str(shape_));
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
    const std::size_t n = sizeof...(idx);
    if (n != shape_.size()) throw TensorError("index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    for (std::size_t a = 0; a < n; ++a) off = off * shape_[a] + ix[a];
    return off;
  }

  Shape shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
  if (!a.same_shape(b))
    throw TensorError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

}  // namespace ctsae
