#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace lfpstage {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Max-shifted softmax.
template <typename S>
Vector<S> softmax(const Vector<S>& x) {
  Vector<S> out(x.size());
  if (x.size() == 0) return out;
  const S m = x.maxCoeff();
  S total = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    total += out[i];
  }
  return out / total;
}

// Backward of softmax: given y = softmax(x) and dL/dy, returns dL/dx.
template <typename S>
Vector<S> softmax_backward(const Vector<S>& y, const Vector<S>& dy) {
  const S dot = y.dot(dy);
  return (y.array() * (dy.array() - dot)).matrix();
}

template <typename S>
std::vector<S> softmax(std::span<const S> x) {
  Vector<S> v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = x[i];
  const Vector<S> y = softmax(v);
  return std::vector<S>(y.data(), y.data() + y.size());
}

}  // namespace lfpstage
