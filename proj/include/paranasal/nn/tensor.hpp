#pragma once

// Dense 5-D tensor in NCDHW order, W fastest. The scalar type is a
// template parameter: float for training speed, double for
// finite-difference verification.

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace paranasal::nn {

template <class T>
struct Tensor {
  std::array<int, 5> shape{0, 0, 0, 0, 0};  // N, C, D, H, W
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n, int c, int d, int h, int w) { resize(n, c, d, h, w); }

  void resize(int n, int c, int d, int h, int w) {
    if (n < 0 || c < 1 || d < 1 || h < 1 || w < 1)
      throw std::invalid_argument("bad tensor shape");
    shape = {n, c, d, h, w};
    data.assign(size(), T(0));
  }

  std::size_t size() const {
    return std::size_t(shape[0]) * std::size_t(shape[1]) * std::size_t(shape[2]) *
           std::size_t(shape[3]) * std::size_t(shape[4]);
  }

  std::size_t sample_size() const { return size() / std::size_t(shape[0] ? shape[0] : 1); }

  std::size_t index(int n, int c, int d, int h, int w) const {
    return (((std::size_t(n) * shape[1] + c) * shape[2] + d) * std::size_t(shape[3]) + h) *
               std::size_t(shape[4]) +
           w;
  }

  T& at(int n, int c, int d, int h, int w) { return data[index(n, c, d, h, w)]; }
  const T& at(int n, int c, int d, int h, int w) const { return data[index(n, c, d, h, w)]; }

  T* sample(int n) { return data.data() + std::size_t(n) * sample_size(); }
  const T* sample(int n) const { return data.data() + std::size_t(n) * sample_size(); }
};

// A named view of one parameter array and its gradient, used by the
// optimizer, the checkpoint writer, and the finite-difference checker.
template <class T>
struct ParamRef {
  std::string name;
  T* value = nullptr;
  T* grad = nullptr;
  std::size_t size = 0;
};

}  // namespace paranasal::nn
