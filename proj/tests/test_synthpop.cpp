#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "cfscm/synthpop.hpp"

using namespace cfscm;
namespace sp = cfscm::synthpop;

TEST_CASE("generation is bitwise deterministic in the seed") {
  auto a = sp::generate(42, 30);
  auto b = sp::generate(42, 30);
  REQUIRE(max_abs_diff(a.data.images, b.data.images) == 0.0);
  REQUIRE(max_abs_diff(a.noises, b.noises) == 0.0);
  REQUIRE(a.data.t == b.data.t);
  auto c = sp::generate(43, 30);
  REQUIRE(max_abs_diff(a.data.images, c.data.images) > 0.0);
}

TEST_CASE("thickness is log-normal with the documented mean") {
  // E[exp(0.4 + 0.3 u)] = exp(0.4 + 0.045)
  const std::size_t n = 100000;
  double mean = 0.0;
  for (std::size_t id = 0; id < n; ++id)
    mean += sp::mech_t(NoiseKey{9, 1, id}.normal(0));
  mean /= static_cast<double>(n);
  REQUIRE(mean == Catch::Approx(std::exp(0.445)).epsilon(0.01));
}

TEST_CASE("intensity stays in (64, 255) and classes are near-uniform") {
  auto g = sp::generate(3, 3000);
  std::vector<std::size_t> counts(3, 0);
  for (std::size_t r = 0; r < 3000; ++r) {
    REQUIRE(g.data.i[r] > 64.0);
    REQUIRE(g.data.i[r] < 255.0);
    REQUIRE(g.data.t[r] > 0.0);
    counts.at(g.data.y[r])++;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    REQUIRE(counts[c] > 800);
    REQUIRE(counts[c] < 1200);
  }
}

TEST_CASE("the oracle with no intervention reproduces the dataset bitwise") {
  auto g = sp::generate(11, 20);
  for (std::size_t id = 0; id < 20; ++id) {
    auto p = sp::oracle_counterfactual(g.noises, id, {});
    REQUIRE(p.cf_attrs.y == g.data.y[id]);
    REQUIRE(p.cf_attrs.t == g.data.t[id]);
    REQUIRE(p.cf_attrs.i == g.data.i[id]);
    REQUIRE(max_abs_diff(p.cf_image, g.data.image(id)) == 0.0);
    REQUIRE(max_abs_diff(p.cf_image, p.factual_image) == 0.0);
  }
  REQUIRE_THROWS_AS(sp::oracle_counterfactual(g.noises, 20, {}), cfscm::UnknownId);
}

TEST_CASE("do(t := factual t) is a fixed point of the oracle") {
  auto g = sp::generate(13, 10);
  for (std::size_t id = 0; id < 10; ++id) {
    auto p = sp::oracle_counterfactual(g.noises, id, {{"t", g.data.t[id]}});
    REQUIRE(p.cf_attrs.i == g.data.i[id]);
    REQUIRE(max_abs_diff(p.cf_image, p.factual_image) == 0.0);
  }
}

TEST_CASE("do(t) flows downstream into intensity, do(i) does not move t") {
  auto g = sp::generate(17, 10);
  for (std::size_t id = 0; id < 10; ++id) {
    auto thicker =
        sp::oracle_counterfactual(g.noises, id, {{"t", 2.0 * g.data.t[id]}});
    REQUIRE(thicker.cf_attrs.i > g.data.i[id]);  // sigmoid is increasing in t
    REQUIRE(thicker.cf_attrs.y == g.data.y[id]);

    auto brighter = sp::oracle_counterfactual(g.noises, id, {{"i", 200.0}});
    REQUIRE(brighter.cf_attrs.t == g.data.t[id]);
    REQUIRE(brighter.cf_attrs.i == 200.0);
    REQUIRE(brighter.cf_attrs.y == g.data.y[id]);
  }
}

TEST_CASE("bar template lights the center row and respects intensity") {
  Tensor bar = sp::render_template(0, 1.0, 255.0);
  for (std::size_t c = 2; c <= 13; ++c) REQUIRE(bar.at2(7, c) == 1.0);
  REQUIRE(bar.at2(0, 0) == 0.0);
  REQUIRE(bar.at2(15, 15) == 0.0);
  // peak scales linearly with i
  Tensor dim = sp::render_template(0, 1.0, 127.5);
  REQUIRE(dim.at2(7, 7) == 0.5);
}

TEST_CASE("cross adds a vertical stroke and ring is hollow") {
  Tensor cross = sp::render_template(1, 1.0, 255.0);
  REQUIRE(cross.at2(4, 7) == 1.0);   // vertical stroke
  REQUIRE(cross.at2(7, 4) == 1.0);   // horizontal stroke
  REQUIRE(cross.at2(3, 3) == 0.0);
  Tensor ring = sp::render_template(2, 1.0, 255.0);
  REQUIRE(ring.at2(7, 7) == 0.0);    // hollow center
  REQUIRE(ring.at2(3, 7) == 1.0);    // on the radius
}

TEST_CASE("thicker strokes light at least as many pixels") {
  for (std::size_t y = 0; y < 3; ++y) {
    std::size_t prev = 0;
    for (double t : {0.8, 1.2, 1.8, 2.6}) {
      Tensor img = sp::render_template(y, t, 255.0);
      std::size_t lit = 0;
      for (double v : img.data) lit += v > 0.0;
      REQUIRE(lit >= prev);
      prev = lit;
    }
    REQUIRE(prev > 0);
  }
}

TEST_CASE("smoothing preserves total mass away from the border") {
  Tensor img({sp::kRows, sp::kCols});
  img.at2(8, 8) = 1.0;
  Tensor sm = sp::smooth3(img);
  double mass = 0.0;
  for (double v : sm.data) mass += v;
  REQUIRE(mass == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(sm.at2(8, 8) == 0.25);
  REQUIRE(sm.at2(7, 8) == 0.125);
  REQUIRE(sm.at2(7, 7) == 0.0625);
}

TEST_CASE("render rejects out-of-range attributes") {
  REQUIRE_THROWS_AS(sp::render_template(0, 0.0, 128.0), std::out_of_range);
  REQUIRE_THROWS_AS(sp::render_template(0, 1.0, 63.0), std::out_of_range);
  REQUIRE_THROWS_AS(sp::render_template(0, 1.0, 256.0), std::out_of_range);
  REQUIRE_THROWS_AS(sp::render_template(3, 1.0, 128.0), std::out_of_range);
  sp::Noises n;
  REQUIRE_THROWS_AS(sp::attrs_under(n, {{"y", 7.0}}), std::out_of_range);
}

TEST_CASE("noise records round-trip through pack and unpack") {
  auto g = sp::generate(23, 5);
  for (std::size_t id = 0; id < 5; ++id) {
    sp::Noises n = sp::unpack_noises(g.noises, id);
    sp::Noises d = sp::draw_noises(23, id);
    REQUIRE(n.u_y == d.u_y);
    REQUIRE(n.u_t == d.u_t);
    REQUIRE(n.u_i == d.u_i);
    REQUIRE(n.u_x == d.u_x);
  }
}
