#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/errors.hpp"

namespace arcnet {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (const int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Dense row-major tensor. The whole numeric core is templated on the scalar
// type: training runs TensorT<float>, finite-difference oracles recompute the
// same graphs with TensorT<double>.
template <typename S>
struct TensorT {
  using value_type = S;

  Shape shape;
  std::vector<S> data;

  TensorT() = default;

  explicit TensorT(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}

  TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
  }

  static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }

  static TensorT full(Shape sh, S v) {
    TensorT t(std::move(sh));
    for (auto& x : t.data) x = v;
    return t;
  }

  static TensorT from(Shape sh, std::initializer_list<S> values) {
    return TensorT(std::move(sh), std::vector<S>(values));
  }

  static TensorT scalar(S v) { return TensorT({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  std::size_t size() const { return data.size(); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
  S operator()(int i) const { return data[static_cast<std::size_t>(i)]; }

  S& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  S operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  S& operator()(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  S operator()(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  S& operator()(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  S operator()(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool all_finite() const {
    for (const S x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }
};

using Tensor = TensorT<float>;

}  // namespace arcnet
