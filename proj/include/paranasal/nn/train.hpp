#pragma once

// Mini-batch trainer. Examples arrive through ExampleSource so callers
// decide whether instances live in memory or are extracted on demand;
// the loop itself only ever materializes one batch.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/nn/checkpoint.hpp"
#include "paranasal/nn/optim.hpp"
#include "paranasal/nn/resnet.hpp"
#include "paranasal/nn/tensor.hpp"

namespace paranasal::nn {

template <class T>
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual std::array<int, 4> example_shape() const = 0;  // C, D, H, W
  virtual void fetch(std::size_t i, T* dst) const = 0;
};

template <class T>
class InMemorySource : public ExampleSource<T> {
 public:
  InMemorySource(std::array<int, 4> shape) : shape_(shape) {}

  void add(std::vector<T> example, int label) {
    std::size_t need = std::size_t(shape_[0]) * shape_[1] * shape_[2] * shape_[3];
    if (example.size() != need) throw std::invalid_argument("example shape mismatch");
    examples_.push_back(std::move(example));
    labels_.push_back(label);
  }

  std::size_t size() const override { return examples_.size(); }
  int label(std::size_t i) const override { return labels_[i]; }
  std::array<int, 4> example_shape() const override { return shape_; }
  void fetch(std::size_t i, T* dst) const override {
    std::copy(examples_[i].begin(), examples_[i].end(), dst);
  }

 private:
  std::array<int, 4> shape_;
  std::vector<std::vector<T>> examples_;
  std::vector<int> labels_;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-4;
  int patience = 5;
  double lr_factor = 10.0;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochStats> history;
  CheckpointInfo best;  // epoch and monitored loss of the restored weights
};

namespace detail {

template <class T>
Tensor<T> assemble_batch(const ExampleSource<T>& src, const std::vector<std::size_t>& order,
                         std::size_t first, std::size_t count, std::vector<int>& labels) {
  auto s = src.example_shape();
  Tensor<T> x(int(count), s[0], s[1], s[2], s[3]);
  labels.resize(count);
  for (std::size_t b = 0; b < count; ++b) {
    src.fetch(order[first + b], x.sample(int(b)));
    labels[b] = src.label(order[first + b]);
  }
  return x;
}

}  // namespace detail

// Mean cross-entropy over a whole source in inference mode.
template <class T>
double evaluate_loss(ResNet3d<T>& net, const ExampleSource<T>& src, int batch_size) {
  if (src.size() == 0) throw std::invalid_argument("empty evaluation set");
  std::vector<std::size_t> order(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double total = 0;
  std::vector<int> labels;
  for (std::size_t first = 0; first < order.size(); first += std::size_t(batch_size)) {
    std::size_t count = std::min(std::size_t(batch_size), order.size() - first);
    Tensor<T> x = detail::assemble_batch(src, order, first, count, labels);
    Tensor<T> logits = net.forward(x, false);
    total += cross_entropy(logits, labels).loss * double(count);
  }
  return total / double(src.size());
}

// Class probabilities for every example, in source order.
template <class T>
std::vector<std::vector<double>> infer_probabilities(ResNet3d<T>& net,
                                                     const ExampleSource<T>& src,
                                                     int batch_size) {
  std::vector<std::size_t> order(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::vector<double>> out;
  out.reserve(src.size());
  std::vector<int> labels;
  for (std::size_t first = 0; first < order.size(); first += std::size_t(batch_size)) {
    std::size_t count = std::min(std::size_t(batch_size), order.size() - first);
    Tensor<T> x = detail::assemble_batch(src, order, first, count, labels);
    Tensor<T> logits = net.forward(x, false);
    const int k = logits.shape[1];
    for (std::size_t b = 0; b < count; ++b) {
      const T* row = logits.data.data() + b * std::size_t(k);
      double mx = double(row[0]);
      for (int c = 1; c < k; ++c) mx = std::max(mx, double(row[c]));
      double sum = 0;
      std::vector<double> probs(static_cast<std::size_t>(k));
      for (int c = 0; c < k; ++c) {
        probs[std::size_t(c)] = std::exp(double(row[c]) - mx);
        sum += probs[std::size_t(c)];
      }
      for (auto& p : probs) p /= sum;
      out.push_back(std::move(probs));
    }
  }
  return out;
}

// Trains with Adam and a plateau schedule, monitoring validation loss
// (training loss when no validation set is given) and restoring the best
// weights seen before returning.
template <class T>
TrainResult train(ResNet3d<T>& net, const ExampleSource<T>& train_set,
                  const ExampleSource<T>* val_set, const TrainConfig& cfg) {
  if (train_set.size() == 0) throw std::invalid_argument("empty training set");
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw std::invalid_argument("bad train config");
  Rng rng = Rng(cfg.seed).derive("train-shuffle");
  Adam<T> opt(net.params());
  PlateauScheduler sched(cfg.learning_rate, cfg.patience, cfg.lr_factor);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::vector<std::vector<T>> best_snapshot;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t first = 0; first < order.size(); first += std::size_t(cfg.batch_size)) {
      std::size_t count = std::min(std::size_t(cfg.batch_size), order.size() - first);
      Tensor<T> x = detail::assemble_batch(train_set, order, first, count, labels);
      net.zero_grad();
      Tensor<T> logits = net.forward(x, true);
      LossResult<T> loss = cross_entropy(logits, labels);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", batch offset " << first
           << " (lr " << sched.lr() << ")";
        throw std::runtime_error(os.str());
      }
      net.backward(loss.dlogits);
      opt.step(sched.lr());
      epoch_loss += loss.loss * double(count);
    }
    epoch_loss /= double(train_set.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss;
    stats.val_loss = (val_set && val_set->size() > 0)
                         ? evaluate_loss(net, *val_set, cfg.batch_size)
                         : epoch_loss;
    stats.lr = sched.lr();
    stats.improved = sched.observe(stats.val_loss);
    if (stats.improved) {
      best_snapshot = snapshot_params(net.params());
      result.best.epoch = epoch;
      result.best.val_loss = stats.val_loss;
    }
    result.history.push_back(stats);
  }
  if (!best_snapshot.empty()) restore_params(net.params(), best_snapshot);
  return result;
}

template <class T>
TrainResult train(ResNet3d<T>& net, const ExampleSource<T>& train_set,
                  const TrainConfig& cfg) {
  return train(net, train_set, static_cast<const ExampleSource<T>*>(nullptr), cfg);
}

inline void save_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot write " + path);
  os << "epoch\ttrain_loss\tval_loss\tlr\timproved\n";
  os.precision(10);
  for (const auto& h : history)
    os << h.epoch << '\t' << h.train_loss << '\t' << h.val_loss << '\t' << h.lr << '\t'
       << (h.improved ? 1 : 0) << '\n';
  if (!os) throw io_error("write failed for " + path);
}

}  // namespace paranasal::nn
