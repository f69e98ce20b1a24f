#pragma once

// Central finite-difference verification of the analytic gradients.
// Run with double scalars: float headroom is too small for eps 1e-5.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/nn/optim.hpp"
#include "paranasal/nn/resnet.hpp"

namespace paranasal::nn {

struct GradCheckEntry {
  std::string param;
  std::size_t element = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0;
};

// Samples `coords` parameter coordinates across distinct tensors and
// compares backprop against (L(t+e) - L(t-e)) / 2e on the same batch.
inline GradCheckReport gradient_check(ResNet3d<double>& net, const Tensor<double>& x,
                                      const std::vector<int>& labels, std::size_t coords,
                                      std::uint64_t seed, double eps = 1e-5) {
  auto params = net.params();
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].grad) trainable.push_back(i);

  auto loss_at = [&]() {
    Tensor<double> logits = net.forward(x, true);
    return cross_entropy(logits, labels).loss;
  };

  net.zero_grad();
  Tensor<double> logits = net.forward(x, true);
  LossResult<double> loss = cross_entropy(logits, labels);
  net.backward(loss.dlogits);

  Rng rng = Rng(seed).derive("gradcheck");
  GradCheckReport report;
  for (std::size_t k = 0; k < coords; ++k) {
    // Cycle through tensors so every layer kind gets probed.
    auto& p = params[trainable[k % trainable.size()]];
    std::size_t j = rng.uniform_index(p.size);
    double saved = p.value[j];
    double analytic = p.grad[j];
    p.value[j] = saved + eps;
    double up = loss_at();
    p.value[j] = saved - eps;
    double down = loss_at();
    p.value[j] = saved;
    double numeric = (up - down) / (2.0 * eps);
    GradCheckEntry e;
    e.param = p.name;
    e.element = j;
    e.analytic = analytic;
    e.numeric = numeric;
    e.rel_err = std::abs(analytic - numeric) /
                std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace paranasal::nn
