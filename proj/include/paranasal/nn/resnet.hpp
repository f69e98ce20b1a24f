#pragma once

// 3-D residual classifier: a 7x7x7 stride-2 stem, four stages of two
// basic blocks each, global average pooling, and a linear head. Widths
// come from the config; the "tiny" preset divides the standard widths
// by eight for single-core experiments.

#include <array>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/nn/layers.hpp"
#include "paranasal/nn/tensor.hpp"

namespace paranasal::nn {

struct NetworkConfig {
  std::array<int, 4> widths{64, 128, 256, 512};
  int classes = 2;

  static NetworkConfig preset(const std::string& name) {
    NetworkConfig c;
    if (name == "full") {
      c.widths = {64, 128, 256, 512};
    } else if (name == "tiny") {
      c.widths = {8, 16, 32, 64};
    } else {
      throw std::invalid_argument("unknown network preset: " + name);
    }
    return c;
  }

  void validate() const {
    for (int w : widths)
      if (w < 1) throw std::invalid_argument("network widths must be positive");
    if (classes < 2) throw std::invalid_argument("need at least two classes");
  }

  std::string describe() const {
    std::ostringstream os;
    os << "widths=" << widths[0] << "," << widths[1] << "," << widths[2] << ","
       << widths[3] << ";classes=" << classes;
    return os.str();
  }

  std::uint64_t digest() const { return fnv1a64(describe()); }
};

template <class T>
class BasicBlock {
 public:
  BasicBlock(const std::string& name, int in_ch, int out_ch, int stride)
      : conv1_(name + ".conv1", in_ch, out_ch, 3, stride, 1, false),
        bn1_(name + ".bn1", out_ch),
        conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, false),
        bn2_(name + ".bn2", out_ch),
        has_down_(stride != 1 || in_ch != out_ch) {
    if (has_down_) {
      down_conv_ = std::make_unique<Conv3d<T>>(name + ".down", in_ch, out_ch, 1, stride, 0,
                                               false);
      down_bn_ = std::make_unique<BatchNorm3d<T>>(name + ".down_bn", out_ch);
    }
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (down_conv_) down_conv_->init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(
                                   conv1_.forward(x), training))),
                               training);
    Tensor<T> shortcut =
        has_down_ ? down_bn_->forward(down_conv_->forward(x), training) : x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += shortcut.data[i];
    return relu2_.forward(y);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> da = relu2_.backward(dy);
    Tensor<T> dx = conv1_.backward(
        bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(da)))));
    if (has_down_) {
      Tensor<T> ds = down_conv_->backward(down_bn_->backward(da));
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
    } else {
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += da.data[i];
    }
    return dx;
  }

  void collect(std::vector<ParamRef<T>>& out) {
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    bn2_.collect(out);
    if (has_down_) {
      down_conv_->collect(out);
      down_bn_->collect(out);
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = conv1_.parameter_count() + bn1_.parameter_count() +
                    conv2_.parameter_count() + bn2_.parameter_count();
    if (has_down_) n += down_conv_->parameter_count() + down_bn_->parameter_count();
    return n;
  }

 private:
  Conv3d<T> conv1_;
  BatchNorm3d<T> bn1_;
  ReLU<T> relu1_;
  Conv3d<T> conv2_;
  BatchNorm3d<T> bn2_;
  ReLU<T> relu2_;
  bool has_down_;
  std::unique_ptr<Conv3d<T>> down_conv_;
  std::unique_ptr<BatchNorm3d<T>> down_bn_;
};

template <class T>
class ResNet3d {
 public:
  explicit ResNet3d(const NetworkConfig& config, std::uint64_t seed)
      : config_(config),
        stem_(  "stem", 1, config.widths[0], 7, 2, 3, false),
        stem_bn_("stem_bn", config.widths[0]),
        head_("head", config.widths[3], config.classes) {
    config_.validate();
    const auto& w = config_.widths;
    add_stage("stage1", w[0], w[0], 1);
    add_stage("stage2", w[0], w[1], 2);
    add_stage("stage3", w[1], w[2], 2);
    add_stage("stage4", w[2], w[3], 2);
    Rng rng = Rng(seed).derive("net-init");
    stem_.init(rng);
    for (auto& b : blocks_) b->init(rng);
    head_.init(rng);
  }

  const NetworkConfig& config() const { return config_; }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_.forward(x), training)));
    for (auto& b : blocks_) h = b->forward(h, training);
    return head_.forward(gap_.forward(h));
  }

  // Propagates loss gradients to every parameter; the returned tensor is
  // the gradient at the input and is usually discarded.
  Tensor<T> backward(const Tensor<T>& dlogits) {
    Tensor<T> g = gap_.backward(head_.backward(dlogits));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
    return stem_.backward(stem_bn_.backward(stem_relu_.backward(pool_.backward(g))));
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    stem_.collect(out);
    stem_bn_.collect(out);
    for (auto& b : blocks_) b->collect(out);
    head_.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto& p : params())
      if (p.grad)
        for (std::size_t i = 0; i < p.size; ++i) p.grad[i] = T(0);
  }

  std::size_t parameter_count() const {
    std::size_t n = stem_.parameter_count() + stem_bn_.parameter_count() +
                    head_.parameter_count();
    for (const auto& b : blocks_) n += b->parameter_count();
    return n;
  }

 private:
  void add_stage(const std::string& name, int in_ch, int out_ch, int stride) {
    blocks_.push_back(
        std::make_unique<BasicBlock<T>>(name + ".block1", in_ch, out_ch, stride));
    blocks_.push_back(std::make_unique<BasicBlock<T>>(name + ".block2", out_ch, out_ch, 1));
  }

  NetworkConfig config_;
  Conv3d<T> stem_;
  BatchNorm3d<T> stem_bn_;
  ReLU<T> stem_relu_;
  MaxPool3d<T> pool_;
  std::vector<std::unique_ptr<BasicBlock<T>>> blocks_;
  GlobalAvgPool<T> gap_;
  Linear<T> head_;
};

}  // namespace paranasal::nn
