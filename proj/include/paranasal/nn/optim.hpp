#pragma once

// Loss, optimizer, and learning-rate schedule for the training loop.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "paranasal/nn/tensor.hpp"

namespace paranasal::nn {

template <class T>
struct LossResult {
  double loss = 0;           // mean over the batch
  Tensor<T> dlogits;         // gradient of the mean loss
};

// Softmax cross-entropy against integer class labels.
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const int n = logits.shape[0], k = logits.shape[1];
  if (int(labels.size()) != n) throw std::invalid_argument("labels do not match batch");
  LossResult<T> res;
  res.dlogits.resize(n, k, 1, 1, 1);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[std::size_t(i)] < 0 || labels[std::size_t(i)] >= k)
      throw std::invalid_argument("label out of range");
    const T* row = logits.data.data() + std::size_t(i) * k;
    double mx = double(row[0]);
    for (int c = 1; c < k; ++c) mx = std::max(mx, double(row[c]));
    double sum = 0;
    for (int c = 0; c < k; ++c) sum += std::exp(double(row[c]) - mx);
    double log_sum = std::log(sum) + mx;
    total += log_sum - double(row[labels[std::size_t(i)]]);
    for (int c = 0; c < k; ++c) {
      double p = std::exp(double(row[c]) - log_sum);
      double target = (c == labels[std::size_t(i)]) ? 1.0 : 0.0;
      res.dlogits.data[std::size_t(i) * k + c] = T((p - target) / double(n));
    }
  }
  res.loss = total / double(n);
  return res;
}

// Adam with bias correction. State lives alongside the ParamRef list the
// optimizer was built from, so the network must outlive it.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<ParamRef<T>> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.grad ? p.size : 0, 0.0);
      v_.emplace_back(p.grad ? p.size : 0, 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, double(t_));
    double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.grad) continue;  // running statistics update themselves
      for (std::size_t j = 0; j < p.size; ++j) {
        double g = double(p.grad[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        double mhat = m_[i][j] / c1;
        double vhat = v_[i][j] / c2;
        p.value[j] = T(double(p.value[j]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  std::vector<ParamRef<T>> params_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Divides the learning rate when the validation loss stops improving.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience = 5, double factor = 10.0)
      : lr_(lr), patience_(patience), factor_(factor) {}

  double lr() const { return lr_; }

  // Feeds one validation loss; returns true when it is a new best.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return true;
    }
    ++bad_;
    if (bad_ >= patience_) {
      lr_ /= factor_;
      bad_ = 0;
    }
    return false;
  }

  double best() const { return best_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace paranasal::nn
