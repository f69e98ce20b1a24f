#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "paranasal/nn/checkpoint.hpp"
#include "paranasal/nn/gradcheck.hpp"
#include "paranasal/nn/layers.hpp"
#include "paranasal/nn/optim.hpp"
#include "paranasal/nn/resnet.hpp"
#include "paranasal/nn/train.hpp"
#include "support.hpp"

using namespace paranasal;
using namespace paranasal::nn;
using testsupport::TempDir;

namespace {

Tensor<double> random_tensor(int n, int c, int d, int h, int w, std::uint64_t seed) {
  Tensor<double> t(n, c, d, h, w);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.normal(0.0, 1.0);
  return t;
}

// Direct zero-padded convolution, nested loops only.
Tensor<double> direct_conv(const Tensor<double>& x, const std::vector<double>& weight,
                           int out_ch, int k, int stride, int pad) {
  const int in_ch = x.shape[1];
  auto ext = [&](int in) { return (in + 2 * pad - k) / stride + 1; };
  Tensor<double> y(x.shape[0], out_ch, ext(x.shape[2]), ext(x.shape[3]), ext(x.shape[4]));
  for (int n = 0; n < y.shape[0]; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int z = 0; z < y.shape[2]; ++z)
        for (int yy = 0; yy < y.shape[3]; ++yy)
          for (int xx = 0; xx < y.shape[4]; ++xx) {
            double acc = 0;
            for (int c = 0; c < in_ch; ++c)
              for (int kd = 0; kd < k; ++kd)
                for (int kh = 0; kh < k; ++kh)
                  for (int kw = 0; kw < k; ++kw) {
                    int id = z * stride - pad + kd;
                    int ih = yy * stride - pad + kh;
                    int iw = xx * stride - pad + kw;
                    if (id < 0 || id >= x.shape[2] || ih < 0 || ih >= x.shape[3] ||
                        iw < 0 || iw >= x.shape[4])
                      continue;
                    std::size_t wi =
                        ((std::size_t(o) * in_ch + c) * k + kd) * std::size_t(k) * k +
                        std::size_t(kh) * k + kw;
                    acc += x.at(n, c, id, ih, iw) * weight[wi];
                  }
            y.at(n, o, z, yy, xx) = acc;
          }
  return y;
}

// Separable toy volumes: class 1 carries a bright central cube.
void fill_toy_example(std::vector<float>& v, int edge, int label, Rng& rng) {
  v.assign(std::size_t(edge) * edge * edge, 0.0f);
  for (auto& x : v) x = float(rng.normal(0.0, 1.0));
  if (label == 1) {
    int lo = edge / 2 - 2, hi = edge / 2 + 2;
    for (int z = lo; z < hi; ++z)
      for (int y = lo; y < hi; ++y)
        for (int x = lo; x < hi; ++x)
          v[std::size_t((z * edge + y) * edge + x)] += 3.0f;
  }
}

InMemorySource<float> make_toy_source(int count, int edge, std::uint64_t seed) {
  InMemorySource<float> src({1, edge, edge, edge});
  Rng rng(seed);
  std::vector<float> v;
  for (int i = 0; i < count; ++i) {
    int label = i % 2;
    fill_toy_example(v, edge, label, rng);
    src.add(v, label);
  }
  return src;
}

}  // namespace

TEST_CASE("convolution matches direct computation") {
  Tensor<double> x = random_tensor(2, 2, 6, 7, 5, 31);
  for (auto [stride, pad, k] : {std::array<int, 3>{1, 1, 3}, std::array<int, 3>{2, 1, 3},
                                std::array<int, 3>{2, 3, 7}, std::array<int, 3>{2, 0, 1}}) {
    Conv3d<double> conv("c", 2, 3, k, stride, pad, true);
    Rng rng(7);
    conv.init(rng);
    std::vector<ParamRef<double>> refs;
    conv.collect(refs);
    REQUIRE(refs.size() == 2);
    std::vector<double> weight(refs[0].value, refs[0].value + refs[0].size);
    for (std::size_t i = 0; i < refs[1].size; ++i) refs[1].value[i] = 0.01 * double(i + 1);
    Tensor<double> got = conv.forward(x);
    Tensor<double> want = direct_conv(x, weight, 3, k, stride, pad);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
      std::size_t per = got.sample_size() / 3;
      int ch = int((i % got.sample_size()) / per);
      double bias = 0.01 * double(ch + 1);
      REQUIRE(got.data[i] == Catch::Approx(want.data[i] + bias).margin(1e-12));
    }
  }
}

TEST_CASE("max pooling matches direct computation") {
  Tensor<double> x = random_tensor(2, 3, 7, 6, 9, 55);
  MaxPool3d<double> pool;
  Tensor<double> y = pool.forward(x);
  REQUIRE(y.shape[2] == 4);
  REQUIRE(y.shape[3] == 3);
  REQUIRE(y.shape[4] == 5);
  for (int n = 0; n < y.shape[0]; ++n)
    for (int c = 0; c < y.shape[1]; ++c)
      for (int z = 0; z < y.shape[2]; ++z)
        for (int yy = 0; yy < y.shape[3]; ++yy)
          for (int xx = 0; xx < y.shape[4]; ++xx) {
            double best = -1e300;
            for (int kd = 0; kd < 3; ++kd)
              for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw) {
                  int id = z * 2 - 1 + kd, ih = yy * 2 - 1 + kh, iw = xx * 2 - 1 + kw;
                  if (id < 0 || id >= x.shape[2] || ih < 0 || ih >= x.shape[3] || iw < 0 ||
                      iw >= x.shape[4])
                    continue;
                  best = std::max(best, x.at(n, c, id, ih, iw));
                }
            REQUIRE(y.at(n, c, z, yy, xx) == best);
          }
}

TEST_CASE("batch normalization statistics") {
  Tensor<double> x = random_tensor(4, 3, 3, 2, 5, 77);
  BatchNorm3d<double> bn("bn", 3);

  SECTION("training pass normalizes each channel") {
    Tensor<double> y = bn.forward(x, true);
    const std::size_t per = std::size_t(3) * 2 * 5;
    for (int c = 0; c < 3; ++c) {
      double sum = 0, sq = 0;
      std::size_t count = 0;
      for (int n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < per; ++i) {
          double v = y.sample(n)[std::size_t(c) * per + i];
          sum += v;
          sq += v * v;
          ++count;
        }
      double mean = sum / double(count);
      double var = sq / double(count) - mean * mean;
      REQUIRE(mean == Catch::Approx(0.0).margin(1e-10));
      REQUIRE(var == Catch::Approx(1.0).margin(1e-3));  // eps shrinks variance slightly
    }
  }

  SECTION("inference uses running statistics") {
    bn.forward(x, true);
    std::vector<ParamRef<double>> refs;
    bn.collect(refs);
    REQUIRE(refs.size() == 4);
    REQUIRE(refs[2].name == "bn.running_mean");
    REQUIRE(refs[2].grad == nullptr);
    // After one update: running = 0.9 * init + 0.1 * batch statistic.
    const std::size_t per = std::size_t(3) * 2 * 5;
    double sum = 0;
    for (int n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < per; ++i) sum += x.sample(n)[i];
    double mean0 = sum / double(4 * per);
    REQUIRE(refs[2].value[0] == Catch::Approx(0.1 * mean0).margin(1e-10));

    Tensor<double> y1 = bn.forward(x, false);
    Tensor<double> y2 = bn.forward(x, false);
    REQUIRE(y1.data == y2.data);  // eval mode is stateless
  }
}

TEST_CASE("cross entropy closed form") {
  Tensor<double> logits(2, 2, 1, 1, 1);
  logits.at(0, 0, 0, 0, 0) = 2.0;
  logits.at(0, 1, 0, 0, 0) = 0.0;
  logits.at(1, 0, 0, 0, 0) = 0.0;
  logits.at(1, 1, 0, 0, 0) = 0.0;
  LossResult<double> r = cross_entropy(logits, {0, 1});
  double expected = 0.5 * (std::log1p(std::exp(-2.0)) + std::log(2.0));
  REQUIRE(r.loss == Catch::Approx(expected).margin(1e-12));
  double p0 = 1.0 / (1.0 + std::exp(-2.0));
  REQUIRE(r.dlogits.at(0, 0, 0, 0, 0) == Catch::Approx((p0 - 1.0) / 2.0).margin(1e-12));
  REQUIRE(r.dlogits.at(0, 1, 0, 0, 0) == Catch::Approx((1.0 - p0) / 2.0).margin(1e-12));
  REQUIRE(r.dlogits.at(1, 0, 0, 0, 0) == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(r.dlogits.at(1, 1, 0, 0, 0) == Catch::Approx(-0.25).margin(1e-12));
  REQUIRE_THROWS_AS(cross_entropy(logits, {0}), std::invalid_argument);
  REQUIRE_THROWS_AS(cross_entropy(logits, {0, 2}), std::invalid_argument);
}

TEST_CASE("network output shape and eval determinism") {
  NetworkConfig cfg = NetworkConfig::preset("tiny");
  ResNet3d<double> net(cfg, 5);
  Tensor<double> x = random_tensor(3, 1, 16, 16, 16, 9);
  Tensor<double> a = net.forward(x, false);
  REQUIRE(a.shape[0] == 3);
  REQUIRE(a.shape[1] == 2);
  REQUIRE(a.sample_size() == 2);
  Tensor<double> b = net.forward(x, false);
  REQUIRE(a.data == b.data);

  ResNet3d<double> same(cfg, 5);
  Tensor<double> c = same.forward(x, false);
  REQUIRE(a.data == c.data);  // same seed, same weights

  ResNet3d<double> other(cfg, 6);
  Tensor<double> d = other.forward(x, false);
  REQUIRE(a.data != d.data);
}

TEST_CASE("parameter count closed form") {
  // Two 3x3x3 convolutions per block, 1x1x1 projection where the shape
  // changes, a gamma/beta pair per normalization, linear head with bias.
  auto block = [](int in, int out, bool down) {
    std::size_t n = std::size_t(out) * in * 27 + 2 * out + std::size_t(out) * out * 27 +
                    2 * out;
    if (down) n += std::size_t(out) * in + 2 * out;
    return n;
  };
  std::array<int, 4> w{8, 16, 32, 64};
  std::size_t expected = std::size_t(w[0]) * 343 + 2 * w[0];          // stem
  expected += block(w[0], w[0], false) + block(w[0], w[0], false);    // stage 1
  expected += block(w[0], w[1], true) + block(w[1], w[1], false);     // stage 2
  expected += block(w[1], w[2], true) + block(w[2], w[2], false);     // stage 3
  expected += block(w[2], w[3], true) + block(w[3], w[3], false);     // stage 4
  expected += std::size_t(2) * w[3] + 2;                              // head

  ResNet3d<float> net(NetworkConfig::preset("tiny"), 1);
  REQUIRE(net.parameter_count() == expected);

  std::size_t trainable = 0;
  for (const auto& p : net.params())
    if (p.grad) trainable += p.size;
  REQUIRE(trainable == expected);
}

TEST_CASE("gradients match finite differences") {
  ResNet3d<double> net(NetworkConfig::preset("tiny"), 17);
  Tensor<double> x = random_tensor(4, 1, 16, 16, 16, 23);
  std::vector<int> labels{0, 1, 1, 0};
  GradCheckReport report = gradient_check(net, x, labels, 20, 99);
  CAPTURE(report.max_rel_err);
  for (const auto& e : report.entries) {
    CAPTURE(e.param, e.element, e.analytic, e.numeric);
    REQUIRE(e.rel_err < 1e-4);
  }
  REQUIRE(report.entries.size() == 20);
}

TEST_CASE("zeroed head blocks gradient flow to the trunk") {
  ResNet3d<double> net(NetworkConfig::preset("tiny"), 3);
  auto params = net.params();
  for (auto& p : params)
    if (p.name == "head.weight" || p.name == "head.bias")
      for (std::size_t i = 0; i < p.size; ++i) p.value[i] = 0.0;
  Tensor<double> x = random_tensor(4, 1, 16, 16, 16, 41);
  std::vector<int> labels{0, 1, 0, 1};  // balanced so the bias gradient cancels
  net.zero_grad();
  Tensor<double> logits = net.forward(x, true);
  for (double v : logits.data) REQUIRE(v == 0.0);
  LossResult<double> loss = cross_entropy(logits, labels);
  net.backward(loss.dlogits);
  for (const auto& p : params) {
    if (!p.grad) continue;
    if (p.name == "head.weight") continue;
    for (std::size_t i = 0; i < p.size; ++i) {
      CAPTURE(p.name, i);
      REQUIRE(p.grad[i] == 0.0);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir;
  NetworkConfig cfg = NetworkConfig::preset("tiny");
  ResNet3d<float> net(cfg, 11);
  // Nudge weights off their init so the reload is not trivially equal.
  Tensor<float> x(2, 1, 16, 16, 16);
  Rng rng(4);
  for (auto& v : x.data) v = float(rng.normal(0.0, 1.0));
  Adam<float> opt(net.params());
  net.zero_grad();
  LossResult<float> loss = cross_entropy(net.forward(x, true), {0, 1});
  net.backward(loss.dlogits);
  opt.step(1e-3);

  CheckpointInfo info;
  info.epoch = 7;
  info.val_loss = 0.125;
  auto path = dir.file("model.ckpt");
  save_checkpoint(path, net.params(), cfg.digest(), info);

  ResNet3d<float> copy(cfg, 999);
  auto copy_params = copy.params();
  CheckpointInfo loaded = load_checkpoint(path, copy_params, cfg.digest());
  REQUIRE(loaded.epoch == 7);
  REQUIRE(loaded.val_loss == 0.125);
  auto orig_params = net.params();
  for (std::size_t i = 0; i < orig_params.size(); ++i)
    for (std::size_t j = 0; j < orig_params[i].size; ++j)
      REQUIRE(copy_params[i].value[j] == orig_params[i].value[j]);

  Tensor<float> a = net.forward(x, false);
  Tensor<float> b = copy.forward(x, false);
  REQUIRE(a.data == b.data);

  SECTION("configuration digest is enforced") {
    auto full = NetworkConfig::preset("full");
    REQUIRE(full.digest() != cfg.digest());
    REQUIRE_THROWS_AS(load_checkpoint(path, copy_params, full.digest()), format_error);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_checkpoint(dir.file("absent.ckpt"), copy_params, cfg.digest()),
                      io_error);
  }
}

TEST_CASE("plateau schedule divides the rate after stagnation") {
  PlateauScheduler sched(1e-4, 2, 10.0);
  REQUIRE(sched.observe(1.0));
  REQUIRE(sched.observe(0.9));
  REQUIRE(sched.lr() == Catch::Approx(1e-4));
  REQUIRE_FALSE(sched.observe(0.95));
  REQUIRE(sched.lr() == Catch::Approx(1e-4));
  REQUIRE_FALSE(sched.observe(0.95));
  REQUIRE(sched.lr() == Catch::Approx(1e-5));
  REQUIRE_FALSE(sched.observe(0.95));
  REQUIRE_FALSE(sched.observe(0.95));
  REQUIRE(sched.lr() == Catch::Approx(1e-6));
  REQUIRE(sched.observe(0.5));
  REQUIRE(sched.best() == Catch::Approx(0.5));
}

TEST_CASE("training learns a separable toy task") {
  InMemorySource<float> train_set = make_toy_source(40, 16, 101);
  InMemorySource<float> val_set = make_toy_source(12, 16, 202);

  ResNet3d<float> net(NetworkConfig::preset("tiny"), 13);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.seed = 7;
  TrainResult result = train(net, train_set, &val_set, cfg);

  REQUIRE(result.history.size() == 5);
  REQUIRE(result.history.back().train_loss < result.history.front().train_loss);
  REQUIRE(result.best.epoch >= 1);

  // The restored weights reproduce the recorded best validation loss.
  double val = evaluate_loss(net, val_set, cfg.batch_size);
  REQUIRE(val == Catch::Approx(result.best.val_loss).margin(1e-9));

  auto probs = infer_probabilities(net, val_set, cfg.batch_size);
  REQUIRE(probs.size() == 12);
  for (const auto& p : probs) {
    REQUIRE(p.size() == 2);
    REQUIRE(p[0] + p[1] == Catch::Approx(1.0).margin(1e-6));
  }

  TempDir dir;
  auto path = dir.file("history.tsv");
  save_history(path, result.history);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  REQUIRE(header == "epoch\ttrain_loss\tval_loss\tlr\timproved");
  int rows = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 5);
}

TEST_CASE("training is deterministic for a fixed seed") {
  InMemorySource<float> train_set = make_toy_source(16, 8, 303);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;

  auto run = [&]() {
    ResNet3d<float> net(NetworkConfig::preset("tiny"), 21);
    train(net, train_set, cfg);
    Tensor<float> x(1, 1, 8, 8, 8);
    Rng rng(6);
    for (auto& v : x.data) v = float(rng.normal(0.0, 1.0));
    return net.forward(x, false).data;
  };
  REQUIRE(run() == run());
}
