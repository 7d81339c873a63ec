#include <cstdio>
#include <set>
#include <vector>

#include "doctest.h"
#include "mops/image_io.hpp"
#include "mops/render.hpp"

using namespace mops::render;
using mops::RandomStream;
namespace sim = mops::sim;

namespace {

double mean_abs_diff(const Observation& a, const Observation& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / a.pixels.size();
}

bool bitwise_equal(const Observation& a, const Observation& b) {
  return a.pixels == b.pixels;
}

// 4-connected components of the object-colored mask in a canonical render.
int count_object_components(const Observation& obs) {
  std::vector<int> label(kImageSize * kImageSize, 0);
  auto is_obj = [&](int y, int x) { return obs.at(y, x, 0) > 0.5 && obs.at(y, x, 2) > 0.5; };
  int components = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      if (!is_obj(y, x) || label[y * kImageSize + x]) continue;
      ++components;
      stack.push_back({y, x});
      label[y * kImageSize + x] = components;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        const int dy[4] = {1, -1, 0, 0};
        const int dx[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || ny >= kImageSize || nx < 0 || nx >= kImageSize) continue;
          if (!is_obj(ny, nx) || label[ny * kImageSize + nx]) continue;
          label[ny * kImageSize + nx] = components;
          stack.push_back({ny, nx});
        }
      }
    }
  }
  return components;
}

}  // namespace

TEST_CASE("domain randomization sampling is deterministic and in range") {
  RandomStream r1(5), r2(5);
  const RandParams a = sample_domain_randomization(r1);
  const RandParams b = sample_domain_randomization(r2);
  CHECK(a.background == b.background);
  CHECK(a.gain == b.gain);
  CHECK(a.noise_seed == b.noise_seed);

  RandomStream rng(77);
  std::set<uint64_t> seeds;
  for (int i = 0; i < 1000; ++i) {
    const RandParams p = sample_domain_randomization(rng);
    for (int c = 0; c < 3; ++c) {
      CHECK(p.gain[c] >= 0.6);
      CHECK(p.gain[c] <= 1.4);
      CHECK(p.background[c] >= 0.0);
      CHECK(p.background[c] <= 1.0);
    }
    CHECK(std::abs(p.camera_offset_x) <= 4.0);
    CHECK(std::abs(p.camera_offset_y) <= 4.0);
    CHECK(p.camera_scale >= 0.9);
    CHECK(p.camera_scale <= 1.1);
    CHECK(p.noise_std >= 0.0);
    CHECK(p.noise_std <= 0.05);
    seeds.insert(p.noise_seed);
  }
  CHECK(seeds.size() == 1000);  // distinct draws give distinct params
}

TEST_CASE("render places the object block at the image center") {
  sim::SceneState s;
  s.centers = {{0.0, 0.0}};
  RandParams p;  // defaults: no jitter, no noise
  const Observation obs = render(s, nullptr, p);
  for (int c = 0; c < 3; ++c) {
    CHECK(obs.at(42, 42, c) == p.object_color[c]);
    CHECK(obs.at(2, 2, c) == p.background[c]);
    CHECK(obs.at(81, 81, c) == p.background[c]);
  }
}

TEST_CASE("two randomization draws change the image") {
  sim::SceneState s;
  s.centers = {{0.05, -0.03}, {-0.2, 0.1}};
  RandomStream rng(9);
  const RandParams p1 = sample_domain_randomization(rng);
  const RandParams p2 = sample_domain_randomization(rng);
  const Observation o1 = render(s, nullptr, p1);
  const Observation o2 = render(s, nullptr, p2);
  CHECK(mean_abs_diff(o1, o2) > 0.0);
}

TEST_CASE("one table-pixel shift moves the block by one pixel") {
  const double px_m = 0.8 / kImageSize;  // meters per pixel at unit scale
  sim::SceneState a;
  a.centers = {{0.0, 0.0}};
  sim::SceneState b = a;
  b.centers[0].x += px_m;
  RandParams p;
  const Observation oa = render(a, nullptr, p);
  const Observation ob = render(b, nullptr, p);
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 1; x < kImageSize; ++x) {
      for (int c = 0; c < 3; ++c) {
        REQUIRE(ob.at(y, x, c) == oa.at(y, x - 1, c));
      }
    }
  }
}

TEST_CASE("render is a pure function of its arguments") {
  sim::SceneState s;
  s.centers = {{0.1, 0.1}, {-0.1, -0.1}};
  RandomStream rng(3);
  const RandParams p = sample_domain_randomization(rng);
  sim::Goal g;
  g.region_center = {0.2, 0.0};
  CHECK(bitwise_equal(render(s, &g, p), render(s, &g, p)));
}

TEST_CASE("canonical renders are deterministic and step-stable") {
  sim::SceneState s;
  s.centers = {{0.12, -0.05}, {-0.3, 0.2}};
  CHECK(bitwise_equal(render_canonical(s), render_canonical(s)));

  // A degenerate push that touches nothing leaves the canonical image intact.
  auto [next, info] = sim::step(s, sim::PushAction{0.3, -0.25, 0.0, 0.0});
  CHECK(info.max_displacement == 0.0);
  CHECK(bitwise_equal(render_canonical(s), render_canonical(next)));
}

TEST_CASE("canonical render shows one component per well-separated object") {
  sim::EnvConfig cfg;
  cfg.n_objects = 10;
  RandomStream rng(123);
  // Rejection: min pairwise distance 3r keeps rasterized blocks disjoint.
  sim::SceneState s;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto [cand, goal] = sim::sample_initial(cfg, rng);
    (void)goal;
    double min_d = 1e9;
    for (int i = 0; i < cand.n(); ++i) {
      for (int j = i + 1; j < cand.n(); ++j) {
        min_d = std::min(min_d, (cand.centers[i] - cand.centers[j]).norm());
      }
    }
    if (min_d >= 3.0 * cand.object_radius) {
      s = cand;
      break;
    }
  }
  REQUIRE(s.n() == 10);
  CHECK(count_object_components(render_canonical(s)) == 10);
}

TEST_CASE("goal overlay draws a red outline") {
  sim::SceneState s;
  s.centers = {{-0.3, -0.2}};
  sim::Goal g;
  g.region_center = {0.0, 0.0};
  g.region_side = 0.25;
  RandParams p;
  const Observation obs = render(s, &g, p);
  const int side = static_cast<int>(std::lround(0.25 * (kImageSize / 0.8)));
  const int half = side / 2;
  CHECK(obs.at(42, 42 - half, 0) == 1.0);
  CHECK(obs.at(42, 42 - half, 1) == 0.0);
}

TEST_CASE("png export writes a decodable file") {
  sim::SceneState s;
  s.centers = {{0.0, 0.0}};
  const std::string path = "/tmp/mops_test_obs.png";
  write_png(path, render_canonical(s));
  FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  unsigned char sig[8];
  REQUIRE(std::fread(sig, 1, 8, f) == 8);
  std::fclose(f);
  CHECK(sig[1] == 'P');
  CHECK(sig[2] == 'N');
  CHECK(sig[3] == 'G');
  std::remove(path.c_str());
}

TEST_CASE("quantize/dequantize round-trips within one step") {
  sim::SceneState s;
  s.centers = {{0.907 * 0.0, 0.0}};
  RandomStream rng(4);
  const Observation obs = render(s, nullptr, sample_domain_randomization(rng));
  const auto q = quantize(obs);
  const Observation back = dequantize(q.data());
  for (size_t i = 0; i < obs.pixels.size(); ++i) {
    CHECK(std::abs(back.pixels[i] - obs.pixels[i]) <= 0.5 / 255.0 + 1e-12);
  }
}
