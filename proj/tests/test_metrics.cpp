#include <doctest.h>

#include "cfsim/metrics.hpp"
#include "helpers.hpp"

using namespace cfsim;
namespace ct = cfsim::testing;

TEST_CASE("build_histogram") {
  auto edges = uniform_edges(0.0, 10.0, 5);
  SUBCASE("uniform edges are evenly spaced") {
    REQUIRE(edges.size() == 6);
    for (int i = 0; i <= 5; ++i) CHECK(edges[i] == doctest::Approx(2.0 * i));
  }
  SUBCASE("known samples land in known bins") {
    auto h = build_histogram({0.5, 1.9, 2.0, 5.0, 9.9}, edges);
    CHECK(h.counts == std::vector<std::int64_t>{2, 1, 1, 0, 1});
    double total = 0.0;
    for (double p : h.probs) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("interior edge values count to the right") {
    auto h = build_histogram({2.0, 4.0, 6.0, 8.0}, edges);
    CHECK(h.counts == std::vector<std::int64_t>{0, 1, 1, 1, 1});
  }
  SUBCASE("out-of-range samples clamp to the edge bins") {
    auto h = build_histogram({-5.0, 15.0, 10.0}, edges);
    CHECK(h.counts.front() == 1);
    CHECK(h.counts.back() == 2);  // 10.0 sits on the last edge
  }
  SUBCASE("law of large numbers against a uniform density") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<double> samples(200000);
    for (auto& s : samples) s = u(rng);
    auto h = build_histogram(samples, edges);
    for (double p : h.probs) CHECK(p == doctest::Approx(0.2).epsilon(0.02));
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(build_histogram({}, edges), std::invalid_argument);
    CHECK_THROWS_AS(build_histogram({1.0}, {0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(uniform_edges(1.0, 1.0, 5), std::invalid_argument);
  }
}

TEST_CASE("cross entropy") {
  auto edges = uniform_edges(0.0, 1.0, 2);
  auto make = [&](std::vector<double> probs) {
    Histogram h;
    h.edges = edges;
    h.probs = std::move(probs);
    h.counts.assign(h.probs.size(), 1);
    return h;
  };
  SUBCASE("uniform against uniform is log(n)") {
    auto u = make({0.5, 0.5});
    CHECK(cross_entropy(u, u) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("hand-computed three-bin case") {
    auto e3 = uniform_edges(0.0, 1.0, 3);
    Histogram p, q;
    p.edges = q.edges = e3;
    p.probs = {0.2, 0.5, 0.3};
    q.probs = {0.1, 0.6, 0.3};
    p.counts = q.counts = {1, 1, 1};
    const double expect = -(0.2 * std::log(0.1) + 0.5 * std::log(0.6) + 0.3 * std::log(0.3));
    CHECK(cross_entropy(p, q, 0.0) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("Gibbs: H(p, q) >= H(p, p) on random distributions") {
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    auto e10 = uniform_edges(0.0, 1.0, 10);
    for (int k = 0; k < 50; ++k) {
      std::vector<double> pp(10), qq(10);
      double ps = 0.0, qs = 0.0;
      for (int i = 0; i < 10; ++i) {
        pp[i] = u(rng);
        qq[i] = u(rng);
        ps += pp[i];
        qs += qq[i];
      }
      for (int i = 0; i < 10; ++i) {
        pp[i] /= ps;
        qq[i] /= qs;
      }
      Histogram p, q;
      p.edges = q.edges = e10;
      p.probs = pp;
      q.probs = qq;
      p.counts = q.counts = std::vector<std::int64_t>(10, 1);
      CHECK(cross_entropy(p, q) >= cross_entropy(p, p) - 1e-9);
    }
  }
  SUBCASE("empty q-bins stay finite through smoothing") {
    auto p = make({1.0, 0.0});
    auto q = make({0.0, 1.0});
    const double h = cross_entropy(p, q);
    CHECK(std::isfinite(h));
    CHECK(h > 10.0);  // -log(eps-ish)
  }
  SUBCASE("mismatched edges throw") {
    auto p = make({0.5, 0.5});
    Histogram q = p;
    q.edges = uniform_edges(0.0, 2.0, 2);
    CHECK_THROWS_AS(cross_entropy(p, q), std::invalid_argument);
  }
}

TEST_CASE("time headway") {
  CHECK(thw(TrafficState::make(20.0, 20.0, 50.0)) == doctest::Approx(2.5));
  CHECK_THROWS_AS(thw(TrafficState::make(0.0, 20.0, 50.0)), std::domain_error);
}

TEST_CASE("traffic_distributions") {
  SUBCASE("constant-state log produces spike histograms, burn-in removed") {
    std::vector<MeasurementRow> log;
    for (int k = 0; k < 2000; ++k) {
      MeasurementRow row;
      row.t = k * 0.1;
      row.vehicle_id = 1;
      row.v = row.t < 60.0 ? 17.0 : 30.0;  // burn-in period has a different speed
      row.r = 60.0;
      row.rr = 0.0;
      log.push_back(row);
    }
    auto dist = traffic_distributions(log);
    // all mass in the single bin containing 30 m/s
    const int bin = static_cast<int>((30.0 - 15.0) / 0.5);
    CHECK(dist.speed.probs[bin] == doctest::Approx(1.0));
    CHECK(dist.range.probs[static_cast<int>(60.0 / 2.0)] == doctest::Approx(1.0));
    CHECK(dist.thw.probs[static_cast<int>((60.0 / 30.0) / 0.1)] == doctest::Approx(1.0));
  }
  SUBCASE("front-most rows (no range) are excluded") {
    std::vector<MeasurementRow> log;
    for (int k = 0; k < 100; ++k) {
      MeasurementRow leader;  // r stays NaN
      leader.t = 100.0 + k;
      leader.v = 20.0;
      log.push_back(leader);
      MeasurementRow follower = leader;
      follower.vehicle_id = 2;
      follower.v = 25.0;
      follower.r = 50.0;
      log.push_back(follower);
    }
    auto dist = traffic_distributions(log);
    std::int64_t n = 0;
    for (auto c : dist.speed.counts) n += c;
    CHECK(n == 100);
  }
  SUBCASE("empty after exclusions throws") {
    std::vector<MeasurementRow> log(1);
    log[0].t = 10.0;  // inside burn-in
    CHECK_THROWS_AS(traffic_distributions(log), std::invalid_argument);
  }
}

TEST_CASE("corpus_distributions matches a direct tally") {
  Rng rng(3);
  std::vector<Trajectory> trajs{ct::random_trajectory(200, rng), ct::random_trajectory(150, rng)};
  auto dist = corpus_distributions(trajs);
  std::vector<double> vs;
  for (const auto& t : trajs) {
    for (const auto& s : t.samples) vs.push_back(s.state.v);
  }
  auto direct = build_histogram(vs, DistributionEdges{}.speed);
  CHECK(dist.speed.counts == direct.counts);
}

TEST_CASE("rollout_error") {
  const IdmParams p{33.0, 2.0, 0.8, 1.5, 1.2};
  SUBCASE("the generating model replays its own trajectory exactly") {
    GenConfig g;
    g.total_hours = 0.02;
    auto corpus = generate_synth_ndd(ct::single_driver_population(p, 0.0), g, 4);
    REQUIRE(!corpus.empty());
    IdmDriver driver(p);
    auto result = rollout_error(driver, corpus[0], 1, 0);
    for (double e : result.mean_v_err) CHECK(e < 1e-6);
    for (double e : result.mean_a_err) CHECK(e < 1e-6);
  }
  SUBCASE("noise widens the envelope over the horizon") {
    GenConfig g;
    g.total_hours = 0.02;
    auto corpus = generate_synth_ndd(ct::single_driver_population(p, 0.0), g, 5);
    NoisyIdmDriver noisy({p, 0.10});
    auto result = rollout_error(noisy, corpus[0], 20, 1);
    const std::size_t n = result.max_v_err.size();
    REQUIRE(n > 100);
    // averaged early vs late envelope: random-walk speed error grows
    double early = 0.0, late = 0.0;
    for (std::size_t k = 0; k < 50; ++k) early += result.max_v_err[k];
    for (std::size_t k = n - 50; k < n; ++k) late += result.max_v_err[k];
    CHECK(late > early);
    CHECK(result.mean_v_err[n - 1] > result.mean_v_err[0]);
  }
  SUBCASE("short trajectories are rejected") {
    Rng rng(6);
    auto traj = ct::random_trajectory(11, rng);
    CHECK_THROWS_AS(rollout_error(IdmDriver(p), traj, 1, 0), std::invalid_argument);
  }
}
