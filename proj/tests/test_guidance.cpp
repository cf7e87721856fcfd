#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"

#include "cmp/guidance.hpp"
#include "support/oracles.hpp"

using namespace cmp;

TEST_SUITE("motion edges") {
  TEST_CASE("uniform flow has no edges") {
    CHECK(motion_edges(FlowField(16, 16, {2.5f, -1.0f}), 1.0f).count() == 0);
  }

  TEST_CASE("a horizontal step gives a two-column vertical band") {
    FlowField f(16, 16);
    for (int y = 0; y < 16; ++y) {
      for (int x = 8; x < 16; ++x) f.at(x, y) = {6.0f, 0.0f};
    }
    // Normalized Sobel response on the two columns next to the step is
    // (6 * (1 + 2 + 1)) / 8 = 3, zero everywhere else.
    const auto mag = motion_gradient_magnitude(f);
    const Mask e = motion_edges(f, 1.0f);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        const bool band = x == 7 || x == 8;
        CHECK(e.at(x, y) == band);
        CHECK(mag[static_cast<std::size_t>(y) * 16 + x] == doctest::Approx(band ? 3.0 : 0.0));
      }
    }
  }
}

TEST_SUITE("distance transform") {
  TEST_CASE("single corner edge") {
    Mask m(4, 4);
    m.set(0, 0, true);
    CHECK(watershed_distance_map(m).at(3, 3) == doctest::Approx(std::sqrt(18.0)));
  }

  TEST_CASE("all-edge mask is all zero, empty mask is the diagonal") {
    const WatershedMap all = watershed_distance_map(Mask(5, 3, 1));
    for (float d : all.distance) CHECK(d == 0.0f);
    const WatershedMap none = watershed_distance_map(Mask(5, 3, 0));
    for (float d : none.distance) CHECK(d == doctest::Approx(std::sqrt(34.0)));
  }

  TEST_CASE("equals exhaustive nearest-edge search") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 300; ++trial) {
      const int w = std::uniform_int_distribution<int>(1, 32)(rng);
      const int h = std::uniform_int_distribution<int>(1, 32)(rng);
      const double density = std::uniform_real_distribution<double>(0.0, 0.2)(rng);
      Mask m(w, h);
      for (auto& b : m.data()) b = std::bernoulli_distribution(density)(rng) ? 1 : 0;
      CHECK(watershed_distance_map(m).distance == oracle::distance_map(m));
    }
  }

  TEST_CASE("distance is 1-Lipschitz and zero exactly on edges") {
    std::mt19937_64 rng(22);
    Mask m(24, 24);
    for (auto& b : m.data()) b = std::bernoulli_distribution(0.03)(rng) ? 1 : 0;
    m.set(3, 3, true);
    const WatershedMap d = watershed_distance_map(m);
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 24; ++x) {
        CHECK((d.at(x, y) == 0.0f) == m.at(x, y));
        if (x + 1 < 24) CHECK(std::fabs(d.at(x + 1, y) - d.at(x, y)) <= 1.0f + 1e-5f);
        if (y + 1 < 24) CHECK(std::fabs(d.at(x, y + 1) - d.at(x, y)) <= 1.0f + 1e-5f);
      }
    }
  }
}

TEST_SUITE("nms") {
  TEST_CASE("one strict maximum with a huge kernel") {
    WatershedMap map{9, 7, std::vector<float>(63, 1.0f)};
    map.distance[3 * 9 + 4] = 5.0f;
    const auto k = nms_keypoints(map, 19, 0);
    REQUIRE(k.size() == 1);
    CHECK(k[0] == Pixel{4, 3});
  }

  TEST_CASE("all-zero map has no keypoints") {
    CHECK(nms_keypoints(WatershedMap{8, 8, std::vector<float>(64, 0.0f)}, 3, 0).empty());
  }

  TEST_CASE("plateau keeps its first row-major pixel") {
    WatershedMap map{6, 6, std::vector<float>(36, 0.0f)};
    for (int y = 2; y <= 3; ++y) {
      for (int x = 2; x <= 3; ++x) map.distance[y * 6 + x] = 2.0f;
    }
    const auto k = nms_keypoints(map, 5, 0);
    REQUIRE(k.size() == 1);
    CHECK(k[0] == Pixel{2, 2});
  }

  TEST_CASE("equals brute-force neighborhood scan") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 300; ++trial) {
      const int w = std::uniform_int_distribution<int>(1, 32)(rng);
      const int h = std::uniform_int_distribution<int>(1, 32)(rng);
      const int kernel = 2 * std::uniform_int_distribution<int>(1, 4)(rng) + 1;
      const int margin = std::uniform_int_distribution<int>(0, 4)(rng);
      // Small integer levels force plenty of ties.
      WatershedMap map{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
      for (float& v : map.distance) v = static_cast<float>(std::uniform_int_distribution<int>(0, 4)(rng));
      CHECK(nms_keypoints(map, kernel, margin) == oracle::nms(map, kernel, margin));
    }
  }

  TEST_CASE("keypoints on real distance maps equal brute force") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 100; ++trial) {
      const FlowField f = oracle::blocky_flow(rng, 32, 32);
      const WatershedMap map = watershed_distance_map(motion_edges(f, 1.0f));
      CHECK(nms_keypoints(map, 5, 2) == oracle::nms(map, 5, 2));
    }
  }
}

TEST_SUITE("grid") {
  TEST_CASE("384 with G = 200 gives the four points {100, 300}^2") {
    const auto g = grid_points(384, 384, 200);
    CHECK(g == std::vector<Pixel>{{100, 100}, {300, 100}, {100, 300}, {300, 300}});
  }

  TEST_CASE("384 with G = 80 gives five points per axis") {
    const auto g = grid_points(384, 384, 80);
    CHECK(g.size() == 25);
    std::set<int> xs;
    for (const Pixel& p : g) xs.insert(p.x);
    CHECK(xs == std::set<int>{40, 120, 200, 280, 360});
  }

  TEST_CASE("stride beyond the image gives nothing") {
    CHECK(grid_points(30, 20, 64).empty());
  }

  TEST_CASE("square counts follow floor((side - G/2) / G + 1)^2 away from exact fits") {
    for (int side = 1; side <= 200; ++side) {
      for (int g = 1; g <= 120; ++g) {
        const int offset = g / 2;
        const int per_axis = offset >= side ? 0 : (side - offset - 1) / g + 1;
        CHECK(static_cast<int>(grid_points(side, side, g).size()) == per_axis * per_axis);
        if (offset < side && (side - offset) % g != 0) {
          const int formula = static_cast<int>(std::floor(static_cast<double>(side - offset) / g + 1.0));
          CHECK(per_axis == formula);
        }
      }
    }
  }
}

TEST_SUITE("sample_guidance") {
  TEST_CASE("uniform flow yields only grid points carrying the flow") {
    const GuidanceSet s = sample_guidance(FlowField(384, 384, {3.0f, 3.0f}), SamplingConfig::paper_scale());
    REQUIRE(s.points.size() == 4);
    for (const auto& p : s.points) {
      CHECK(p.kind == GuidanceKind::Grid);
      CHECK(p.u == 3.0f);
      CHECK(p.v == 3.0f);
    }
  }

  TEST_CASE("watershed points win over coincident grid points and carry flow values") {
    std::mt19937_64 rng(30);
    for (int trial = 0; trial < 50; ++trial) {
      const FlowField f = oracle::blocky_flow(rng, 32, 32);
      const SamplingConfig cfg{5, 8, 1.0f, 2};
      const GuidanceSet s = sample_guidance(f, cfg);
      std::set<Pixel> seen;
      for (const auto& p : s.points) {
        CHECK(seen.insert({p.x, p.y}).second);
        CHECK(p.u == f.at(p.x, p.y).u);
        CHECK(p.v == f.at(p.x, p.y).v);
      }
      CHECK_NOTHROW(s.validate(32, 32));
    }
  }

  TEST_CASE("config validation") {
    CHECK_THROWS_AS(SamplingConfig({4, 10, 1.0f, 0}).validate(), InvalidArgument);
    CHECK_THROWS_AS(SamplingConfig({1, 10, 1.0f, 0}).validate(), InvalidArgument);
    CHECK_THROWS_AS(SamplingConfig({3, 0, 1.0f, 0}).validate(), InvalidArgument);
    CHECK_THROWS_AS(SamplingConfig({3, 1, 0.0f, 0}).validate(), InvalidArgument);
    CHECK_THROWS_AS(SamplingConfig({3, 1, 1.0f, -1}).validate(), InvalidArgument);
  }
}

TEST_SUITE("rasterize") {
  TEST_CASE("empty set gives all-zero planes") {
    const SparseGuidanceMap m = rasterize_guidance({}, 6, 4);
    for (std::size_t i = 0; i < m.mask.size(); ++i) {
      CHECK(m.u[i] == 0.0f);
      CHECK(m.v[i] == 0.0f);
      CHECK(m.mask[i] == 0.0f);
    }
  }

  TEST_CASE("a zero-motion point still sets the mask") {
    GuidanceSet s{{{5, 5, 0.0f, 0.0f, GuidanceKind::Negative}}};
    const SparseGuidanceMap m = rasterize_guidance(s, 8, 8);
    CHECK(m.mask[5 * 8 + 5] == 1.0f);
    CHECK(std::count(m.mask.begin(), m.mask.end(), 1.0f) == 1);
    CHECK(std::count(m.u.begin(), m.u.end(), 0.0f) == 64);
  }

  TEST_CASE("values read back exactly") {
    std::mt19937_64 rng(31);
    std::normal_distribution<float> d(0.0f, 5.0f);
    for (int trial = 0; trial < 50; ++trial) {
      GuidanceSet s;
      std::set<Pixel> used;
      while (s.points.size() < 3) {
        const Pixel p{static_cast<int>(rng() % 12), static_cast<int>(rng() % 9)};
        if (used.insert(p).second) s.points.push_back({p.x, p.y, d(rng), d(rng), GuidanceKind::User});
      }
      const SparseGuidanceMap m = rasterize_guidance(s, 12, 9);
      CHECK(std::count(m.mask.begin(), m.mask.end(), 1.0f) == 3);
      for (const auto& p : s.points) {
        const std::size_t i = static_cast<std::size_t>(p.y) * 12 + p.x;
        CHECK(m.u[i] == p.u);
        CHECK(m.v[i] == p.v);
      }
      for (std::size_t i = 0; i < m.mask.size(); ++i) {
        if (m.mask[i] == 0.0f) CHECK((m.u[i] == 0.0f && m.v[i] == 0.0f));
      }
    }
  }

  TEST_CASE("out-of-bounds and duplicate points are rejected") {
    CHECK_THROWS_AS(rasterize_guidance(GuidanceSet{{{8, 0, 1, 1, GuidanceKind::User}}}, 8, 8), InvalidArgument);
    CHECK_THROWS_AS(rasterize_guidance(GuidanceSet{{{0, -1, 1, 1, GuidanceKind::User}}}, 8, 8), InvalidArgument);
    CHECK_THROWS_AS(
        rasterize_guidance(GuidanceSet{{{1, 1, 1, 1, GuidanceKind::User}, {1, 1, 0, 0, GuidanceKind::Negative}}}, 8, 8),
        InvalidArgument);
  }

  TEST_CASE("JSON roundtrip") {
    GuidanceSet s{{{1, 2, 0.5f, -1.25f, GuidanceKind::Watershed}, {3, 4, 0.0f, 0.0f, GuidanceKind::Negative}}};
    const nlohmann::json j = guidance_to_json(s);
    CHECK(j[0]["kind"] == "watershed");
    CHECK(j[1]["x"] == 3);
    CHECK(guidance_from_json(nlohmann::json::parse(j.dump())).points == s.points);
  }
}
