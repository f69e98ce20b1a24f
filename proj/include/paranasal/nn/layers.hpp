#pragma once

// Building blocks with explicit forward/backward passes. Convolutions run
// as im2col plus a dense GEMM; every layer caches what its backward pass
// needs and exposes its parameters through ParamRef.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/nn/tensor.hpp"

namespace paranasal::nn {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
class Conv3d {
 public:
  Conv3d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad,
         bool with_bias)
      : name_(std::move(name)),
        in_ch_(in_ch),
        out_ch_(out_ch),
        k_(kernel),
        stride_(stride),
        pad_(pad),
        with_bias_(with_bias) {
    std::size_t fan = weight_rows();
    weight_.assign(std::size_t(out_ch_) * fan, T(0));
    grad_weight_.assign(weight_.size(), T(0));
    if (with_bias_) {
      bias_.assign(std::size_t(out_ch_), T(0));
      grad_bias_.assign(bias_.size(), T(0));
    }
  }

  void init(Rng& rng) {
    double std = std::sqrt(2.0 / double(weight_rows()));
    for (auto& w : weight_) w = T(rng.normal(0.0, std));
    for (auto& b : bias_) b = T(0);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape[1] != in_ch_) throw std::invalid_argument(name_ + ": channel mismatch");
    input_ = x;
    const int od = out_extent(x.shape[2]), oh = out_extent(x.shape[3]),
              ow = out_extent(x.shape[4]);
    Tensor<T> y(x.shape[0], out_ch_, od, oh, ow);
    const std::size_t S = std::size_t(od) * oh * ow;
    col_.assign(weight_rows() * S, T(0));
    ConstMatMap<T> W(weight_.data(), out_ch_, Eigen::Index(weight_rows()));
    for (int n = 0; n < x.shape[0]; ++n) {
      im2col(x.sample(n), x.shape[2], x.shape[3], x.shape[4], od, oh, ow);
      ConstMatMap<T> col(col_.data(), Eigen::Index(weight_rows()), Eigen::Index(S));
      MatMap<T> out(y.sample(n), out_ch_, Eigen::Index(S));
      out.noalias() = W * col;
      if (with_bias_)
        for (int c = 0; c < out_ch_; ++c) out.row(c).array() += bias_[std::size_t(c)];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const auto& x = input_;
    const int od = dy.shape[2], oh = dy.shape[3], ow = dy.shape[4];
    const std::size_t S = std::size_t(od) * oh * ow;
    Tensor<T> dx(x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    std::vector<T> dcol(weight_rows() * S);
    ConstMatMap<T> W(weight_.data(), out_ch_, Eigen::Index(weight_rows()));
    MatMap<T> dW(grad_weight_.data(), out_ch_, Eigen::Index(weight_rows()));
    for (int n = 0; n < x.shape[0]; ++n) {
      im2col(x.sample(n), x.shape[2], x.shape[3], x.shape[4], od, oh, ow);
      ConstMatMap<T> col(col_.data(), Eigen::Index(weight_rows()), Eigen::Index(S));
      ConstMatMap<T> g(dy.sample(n), out_ch_, Eigen::Index(S));
      dW.noalias() += g * col.transpose();
      if (with_bias_)
        for (int c = 0; c < out_ch_; ++c) grad_bias_[std::size_t(c)] += g.row(c).sum();
      MatMap<T> dcol_map(dcol.data(), Eigen::Index(weight_rows()), Eigen::Index(S));
      dcol_map.noalias() = W.transpose() * g;
      col2im(dcol.data(), dx.sample(n), x.shape[2], x.shape[3], x.shape[4], od, oh, ow);
    }
    return dx;
  }

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", weight_.data(), grad_weight_.data(), weight_.size()});
    if (with_bias_)
      out.push_back({name_ + ".bias", bias_.data(), grad_bias_.data(), bias_.size()});
  }

  int out_extent(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  std::size_t weight_rows() const { return std::size_t(in_ch_) * k_ * k_ * k_; }
  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

 private:
  void im2col(const T* x, int D, int H, int W, int od, int oh, int ow) {
    const std::size_t S = std::size_t(od) * oh * ow;
    std::size_t row = 0;
    for (int c = 0; c < in_ch_; ++c)
      for (int kd = 0; kd < k_; ++kd)
        for (int kh = 0; kh < k_; ++kh)
          for (int kw = 0; kw < k_; ++kw) {
            T* dst = col_.data() + row * S;
            ++row;
            for (int z = 0; z < od; ++z) {
              int id = z * stride_ - pad_ + kd;
              if (id < 0 || id >= D) {
                for (int i = 0; i < oh * ow; ++i) dst[i] = T(0);
                dst += oh * ow;
                continue;
              }
              for (int y = 0; y < oh; ++y) {
                int ih = y * stride_ - pad_ + kh;
                if (ih < 0 || ih >= H) {
                  for (int i = 0; i < ow; ++i) dst[i] = T(0);
                  dst += ow;
                  continue;
                }
                const T* src = x + (std::size_t(c) * D + id) * std::size_t(H) * W +
                               std::size_t(ih) * W;
                for (int xw = 0; xw < ow; ++xw) {
                  int iw = xw * stride_ - pad_ + kw;
                  dst[xw] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                }
                dst += ow;
              }
            }
          }
  }

  void col2im(const T* dcol, T* dx, int D, int H, int W, int od, int oh, int ow) {
    const std::size_t S = std::size_t(od) * oh * ow;
    std::size_t row = 0;
    for (int c = 0; c < in_ch_; ++c)
      for (int kd = 0; kd < k_; ++kd)
        for (int kh = 0; kh < k_; ++kh)
          for (int kw = 0; kw < k_; ++kw) {
            const T* src = dcol + row * S;
            ++row;
            for (int z = 0; z < od; ++z) {
              int id = z * stride_ - pad_ + kd;
              if (id < 0 || id >= D) {
                src += oh * ow;
                continue;
              }
              for (int y = 0; y < oh; ++y) {
                int ih = y * stride_ - pad_ + kh;
                if (ih < 0 || ih >= H) {
                  src += ow;
                  continue;
                }
                T* dst = dx + (std::size_t(c) * D + id) * std::size_t(H) * W +
                         std::size_t(ih) * W;
                for (int xw = 0; xw < ow; ++xw) {
                  int iw = xw * stride_ - pad_ + kw;
                  if (iw >= 0 && iw < W) dst[iw] += src[xw];
                }
                src += ow;
              }
            }
          }
  }

  std::string name_;
  int in_ch_, out_ch_, k_, stride_, pad_;
  bool with_bias_;
  std::vector<T> weight_, bias_, grad_weight_, grad_bias_, col_;
  Tensor<T> input_;
};

template <class T>
class BatchNorm3d {
 public:
  explicit BatchNorm3d(std::string name, int channels)
      : name_(std::move(name)), ch_(channels) {
    gamma_.assign(std::size_t(ch_), T(1));
    beta_.assign(std::size_t(ch_), T(0));
    grad_gamma_.assign(std::size_t(ch_), T(0));
    grad_beta_.assign(std::size_t(ch_), T(0));
    running_mean_.assign(std::size_t(ch_), T(0));
    running_var_.assign(std::size_t(ch_), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    training_ = training;
    const std::size_t per_ch = std::size_t(x.shape[2]) * x.shape[3] * x.shape[4];
    const std::size_t count = std::size_t(x.shape[0]) * per_ch;
    Tensor<T> y(x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    if (training) {
      count_ = double(count);
      xhat_ = y;  // shape only; overwritten below
      mean_.assign(std::size_t(ch_), T(0));
      inv_std_.assign(std::size_t(ch_), T(0));
      for (int c = 0; c < ch_; ++c) {
        double sum = 0, sq = 0;
        for (int n = 0; n < x.shape[0]; ++n) {
          const T* p = x.sample(n) + std::size_t(c) * per_ch;
          for (std::size_t i = 0; i < per_ch; ++i) {
            sum += double(p[i]);
            sq += double(p[i]) * double(p[i]);
          }
        }
        double mean = sum / double(count);
        double var = sq / double(count) - mean * mean;  // biased, for normalization
        if (var < 0) var = 0;
        double inv = 1.0 / std::sqrt(var + eps_);
        mean_[std::size_t(c)] = T(mean);
        inv_std_[std::size_t(c)] = T(inv);
        double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
        running_mean_[std::size_t(c)] =
            T((1.0 - momentum_) * double(running_mean_[std::size_t(c)]) + momentum_ * mean);
        running_var_[std::size_t(c)] =
            T((1.0 - momentum_) * double(running_var_[std::size_t(c)]) + momentum_ * unbiased);
        for (int n = 0; n < x.shape[0]; ++n) {
          const T* p = x.sample(n) + std::size_t(c) * per_ch;
          T* h = xhat_.sample(n) + std::size_t(c) * per_ch;
          T* o = y.sample(n) + std::size_t(c) * per_ch;
          for (std::size_t i = 0; i < per_ch; ++i) {
            h[i] = T((double(p[i]) - mean) * inv);
            o[i] = gamma_[std::size_t(c)] * h[i] + beta_[std::size_t(c)];
          }
        }
      }
    } else {
      for (int c = 0; c < ch_; ++c) {
        double inv = 1.0 / std::sqrt(double(running_var_[std::size_t(c)]) + eps_);
        double mean = double(running_mean_[std::size_t(c)]);
        double g = double(gamma_[std::size_t(c)]), b = double(beta_[std::size_t(c)]);
        for (int n = 0; n < x.shape[0]; ++n) {
          const T* p = x.sample(n) + std::size_t(c) * per_ch;
          T* o = y.sample(n) + std::size_t(c) * per_ch;
          for (std::size_t i = 0; i < per_ch; ++i)
            o[i] = T((double(p[i]) - mean) * inv * g + b);
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t per_ch = std::size_t(dy.shape[2]) * dy.shape[3] * dy.shape[4];
    Tensor<T> dx(dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3], dy.shape[4]);
    if (!training_) {
      for (int c = 0; c < ch_; ++c) {
        double scale =
            double(gamma_[std::size_t(c)]) / std::sqrt(double(running_var_[std::size_t(c)]) + eps_);
        for (int n = 0; n < dy.shape[0]; ++n) {
          const T* g = dy.sample(n) + std::size_t(c) * per_ch;
          T* o = dx.sample(n) + std::size_t(c) * per_ch;
          for (std::size_t i = 0; i < per_ch; ++i) o[i] = T(double(g[i]) * scale);
        }
      }
      return dx;
    }
    for (int c = 0; c < ch_; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < dy.shape[0]; ++n) {
        const T* g = dy.sample(n) + std::size_t(c) * per_ch;
        const T* h = xhat_.sample(n) + std::size_t(c) * per_ch;
        for (std::size_t i = 0; i < per_ch; ++i) {
          sum_dy += double(g[i]);
          sum_dy_xhat += double(g[i]) * double(h[i]);
        }
      }
      grad_gamma_[std::size_t(c)] += T(sum_dy_xhat);
      grad_beta_[std::size_t(c)] += T(sum_dy);
      double scale = double(gamma_[std::size_t(c)]) * double(inv_std_[std::size_t(c)]) / count_;
      for (int n = 0; n < dy.shape[0]; ++n) {
        const T* g = dy.sample(n) + std::size_t(c) * per_ch;
        const T* h = xhat_.sample(n) + std::size_t(c) * per_ch;
        T* o = dx.sample(n) + std::size_t(c) * per_ch;
        for (std::size_t i = 0; i < per_ch; ++i)
          o[i] = T(scale * (count_ * double(g[i]) - sum_dy - double(h[i]) * sum_dy_xhat));
      }
    }
    return dx;
  }

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".gamma", gamma_.data(), grad_gamma_.data(), gamma_.size()});
    out.push_back({name_ + ".beta", beta_.data(), grad_beta_.data(), beta_.size()});
    // Running statistics persist in checkpoints but are not optimized.
    out.push_back({name_ + ".running_mean", running_mean_.data(), nullptr,
                   running_mean_.size()});
    out.push_back({name_ + ".running_var", running_var_.data(), nullptr, running_var_.size()});
  }

  std::size_t parameter_count() const { return gamma_.size() + beta_.size(); }

 private:
  std::string name_;
  int ch_;
  double momentum_ = 0.1, eps_ = 1e-5;
  bool training_ = false;
  double count_ = 0;
  std::vector<T> gamma_, beta_, grad_gamma_, grad_beta_;
  std::vector<T> running_mean_, running_var_;
  std::vector<T> mean_, inv_std_;
  Tensor<T> xhat_;
};

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_.assign(x.data.size(), 0);
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      if (y.data[i] > T(0))
        mask_[i] = 1;
      else
        y.data[i] = T(0);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      if (!mask_[i]) dx.data[i] = T(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

// Fixed 3x3x3, stride 2, pad 1 pooling; with these settings every window
// holds at least one real voxel, so padding never wins the max.
template <class T>
class MaxPool3d {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape;
    const int od = (x.shape[2] + 2 - 3) / 2 + 1;
    const int oh = (x.shape[3] + 2 - 3) / 2 + 1;
    const int ow = (x.shape[4] + 2 - 3) / 2 + 1;
    Tensor<T> y(x.shape[0], x.shape[1], od, oh, ow);
    argmax_.assign(y.size(), 0);
    std::size_t out_i = 0;
    for (int n = 0; n < x.shape[0]; ++n)
      for (int c = 0; c < x.shape[1]; ++c)
        for (int z = 0; z < od; ++z)
          for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
              T best = -std::numeric_limits<T>::infinity();
              std::size_t best_i = 0;
              for (int kd = 0; kd < 3; ++kd) {
                int id = z * 2 - 1 + kd;
                if (id < 0 || id >= x.shape[2]) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  int ih = yy * 2 - 1 + kh;
                  if (ih < 0 || ih >= x.shape[3]) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    int iw = xx * 2 - 1 + kw;
                    if (iw < 0 || iw >= x.shape[4]) continue;
                    std::size_t idx = x.index(n, c, id, ih, iw);
                    if (x.data[idx] > best) {
                      best = x.data[idx];
                      best_i = idx;
                    }
                  }
                }
              }
              y.data[out_i] = best;
              argmax_[out_i] = best_i;
              ++out_i;
            }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3], in_shape_[4]);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[argmax_[i]] += dy.data[i];
    return dx;
  }

 private:
  std::array<int, 5> in_shape_{};
  std::vector<std::size_t> argmax_;
};

template <class T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape;
    Tensor<T> y(x.shape[0], x.shape[1], 1, 1, 1);
    const std::size_t per_ch = std::size_t(x.shape[2]) * x.shape[3] * x.shape[4];
    for (int n = 0; n < x.shape[0]; ++n)
      for (int c = 0; c < x.shape[1]; ++c) {
        const T* p = x.sample(n) + std::size_t(c) * per_ch;
        double sum = 0;
        for (std::size_t i = 0; i < per_ch; ++i) sum += double(p[i]);
        y.at(n, c, 0, 0, 0) = T(sum / double(per_ch));
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3], in_shape_[4]);
    const std::size_t per_ch = std::size_t(in_shape_[2]) * in_shape_[3] * in_shape_[4];
    const T inv = T(1.0 / double(per_ch));
    for (int n = 0; n < in_shape_[0]; ++n)
      for (int c = 0; c < in_shape_[1]; ++c) {
        T g = dy.at(n, c, 0, 0, 0) * inv;
        T* p = dx.sample(n) + std::size_t(c) * per_ch;
        for (std::size_t i = 0; i < per_ch; ++i) p[i] = g;
      }
    return dx;
  }

 private:
  std::array<int, 5> in_shape_{};
};

template <class T>
class Linear {
 public:
  Linear(std::string name, int in, int out) : name_(std::move(name)), in_(in), out_(out) {
    weight_.assign(std::size_t(out_) * in_, T(0));
    grad_weight_.assign(weight_.size(), T(0));
    bias_.assign(std::size_t(out_), T(0));
    grad_bias_.assign(bias_.size(), T(0));
  }

  void init(Rng& rng) {
    double std = std::sqrt(2.0 / double(in_));
    for (auto& w : weight_) w = T(rng.normal(0.0, std));
    for (auto& b : bias_) b = T(0);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (int(x.sample_size()) != in_) throw std::invalid_argument(name_ + ": feature mismatch");
    input_ = x;
    Tensor<T> y(x.shape[0], out_, 1, 1, 1);
    ConstMatMap<T> X(x.data.data(), x.shape[0], in_);
    ConstMatMap<T> W(weight_.data(), out_, in_);
    MatMap<T> Y(y.data.data(), x.shape[0], out_);
    Y.noalias() = X * W.transpose();
    for (int n = 0; n < x.shape[0]; ++n)
      for (int o = 0; o < out_; ++o) Y(n, o) += bias_[std::size_t(o)];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(input_.shape[0], input_.shape[1], input_.shape[2], input_.shape[3],
                 input_.shape[4]);
    ConstMatMap<T> X(input_.data.data(), input_.shape[0], in_);
    ConstMatMap<T> G(dy.data.data(), dy.shape[0], out_);
    MatMap<T> dW(grad_weight_.data(), out_, in_);
    dW.noalias() += G.transpose() * X;
    for (int o = 0; o < out_; ++o) grad_bias_[std::size_t(o)] += G.col(o).sum();
    MatMap<T> dX(dx.data.data(), dx.shape[0], in_);
    ConstMatMap<T> W(weight_.data(), out_, in_);
    dX.noalias() = G * W;
    return dx;
  }

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", weight_.data(), grad_weight_.data(), weight_.size()});
    out.push_back({name_ + ".bias", bias_.data(), grad_bias_.data(), bias_.size()});
  }

  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

 private:
  std::string name_;
  int in_, out_;
  std::vector<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> input_;
};

}  // namespace paranasal::nn
