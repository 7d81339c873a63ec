#include "mops/render.hpp"

#include <algorithm>
#include <cmath>

namespace mops::render {

namespace {

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct Camera {
  double scale;  // pixels per meter
  double cx, cy;

  int px(double x_m) const { return static_cast<int>(std::lround(cx + x_m * scale)); }
  int py(double y_m) const { return static_cast<int>(std::lround(cy - y_m * scale)); }
};

Camera make_camera(const sim::Table& table, const RandParams& p) {
  const double base = kImageSize / std::max(table.w, table.h);
  Camera cam;
  cam.scale = base * p.camera_scale;
  cam.cx = 0.5 * kImageSize + p.camera_offset_x;
  cam.cy = 0.5 * kImageSize + p.camera_offset_y;
  return cam;
}

void fill_block(Observation& obs, int cx, int cy, int side, const std::array<double, 3>& color) {
  const int half = side / 2;
  for (int y = cy - half; y < cy - half + side; ++y) {
    if (y < 0 || y >= kImageSize) continue;
    for (int x = cx - half; x < cx - half + side; ++x) {
      if (x < 0 || x >= kImageSize) continue;
      for (int c = 0; c < 3; ++c) obs.at(y, x, c) = color[c];
    }
  }
}

void outline_block(Observation& obs, int cx, int cy, int side, const std::array<double, 3>& color) {
  const int half = side / 2;
  for (int y = cy - half; y < cy - half + side; ++y) {
    for (int x = cx - half; x < cx - half + side; ++x) {
      const bool edge = y == cy - half || y == cy - half + side - 1 || x == cx - half ||
                        x == cx - half + side - 1;
      if (!edge || y < 0 || y >= kImageSize || x < 0 || x >= kImageSize) continue;
      for (int c = 0; c < 3; ++c) obs.at(y, x, c) = color[c];
    }
  }
}

}  // namespace

RandParams sample_domain_randomization(RandomStream& rng) {
  RandParams p;
  for (int c = 0; c < 3; ++c) p.background[c] = rng.uniform();
  // Keep some color separation between objects and background so objects
  // remain detectable under the jitter.
  do {
    for (int c = 0; c < 3; ++c) p.object_color[c] = rng.uniform();
  } while (std::abs(p.object_color[0] - p.background[0]) +
               std::abs(p.object_color[1] - p.background[1]) +
               std::abs(p.object_color[2] - p.background[2]) <
           0.5);
  for (int c = 0; c < 3; ++c) p.gain[c] = rng.uniform(0.6, 1.4);
  for (int c = 0; c < 3; ++c) p.bias[c] = rng.uniform(-0.1, 0.1);
  p.camera_offset_x = rng.uniform(-4.0, 4.0);
  p.camera_offset_y = rng.uniform(-4.0, 4.0);
  p.camera_scale = rng.uniform(0.9, 1.1);
  p.noise_std = rng.uniform(0.0, 0.05);
  p.noise_seed = rng.raw();
  return p;
}

RandParams canonical_params() {
  RandParams p;
  p.background = {0.0, 0.0, 0.0};
  p.object_color = {1.0, 0.0, 1.0};
  p.gain = {1.0, 1.0, 1.0};
  p.bias = {0.0, 0.0, 0.0};
  p.camera_offset_x = 0.0;
  p.camera_offset_y = 0.0;
  p.camera_scale = 1.0;
  p.noise_std = 0.0;
  p.noise_seed = 0;
  return p;
}

Observation render(const sim::SceneState& state, const sim::Goal* goal_overlay,
                   const RandParams& p) {
  Observation obs;
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      for (int c = 0; c < 3; ++c) obs.at(y, x, c) = p.background[c];
    }
  }

  const Camera cam = make_camera(state.table, p);
  if (goal_overlay) {
    const int side =
        std::max(3, static_cast<int>(std::lround(goal_overlay->region_side * cam.scale)));
    outline_block(obs, cam.px(goal_overlay->region_center.x),
                  cam.py(goal_overlay->region_center.y), side, {1.0, 0.0, 0.0});
  }
  const int obj_side =
      std::max(1, static_cast<int>(std::lround(2.0 * state.object_radius * cam.scale)));
  for (const auto& c : state.centers) {
    fill_block(obs, cam.px(c.x), cam.py(c.y), obj_side, p.object_color);
  }

  const bool jitter = p.gain != std::array<double, 3>{1.0, 1.0, 1.0} ||
                      p.bias != std::array<double, 3>{0.0, 0.0, 0.0};
  if (jitter) {
    for (int y = 0; y < kImageSize; ++y) {
      for (int x = 0; x < kImageSize; ++x) {
        for (int c = 0; c < 3; ++c) obs.at(y, x, c) = obs.at(y, x, c) * p.gain[c] + p.bias[c];
      }
    }
  }
  if (p.noise_std > 0.0) {
    RandomStream noise(p.noise_seed);
    for (auto& v : obs.pixels) v += noise.normal(0.0, p.noise_std);
  }
  for (auto& v : obs.pixels) v = clip01(v);
  return obs;
}

Observation render_canonical(const sim::SceneState& state) {
  return render(state, nullptr, canonical_params());
}

void augment(Observation& obs, RandomStream& rng, double contrast_lo, double contrast_hi,
             double noise_std) {
  const double factor = rng.uniform(contrast_lo, contrast_hi);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int y = 0; y < kImageSize; ++y) {
      for (int x = 0; x < kImageSize; ++x) mean += obs.at(y, x, c);
    }
    mean /= kImageSize * kImageSize;
    for (int y = 0; y < kImageSize; ++y) {
      for (int x = 0; x < kImageSize; ++x) {
        obs.at(y, x, c) = (obs.at(y, x, c) - mean) * factor + mean;
      }
    }
  }
  if (noise_std > 0.0) {
    for (auto& v : obs.pixels) v += rng.normal(0.0, noise_std);
  }
  for (auto& v : obs.pixels) v = clip01(v);
}

std::vector<uint8_t> quantize(const Observation& obs) {
  std::vector<uint8_t> out(obs.pixels.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::lround(clip01(obs.pixels[i]) * 255.0));
  }
  return out;
}

Observation dequantize(const uint8_t* data) {
  Observation obs;
  for (size_t i = 0; i < obs.pixels.size(); ++i) obs.pixels[i] = data[i] / 255.0;
  return obs;
}

}  // namespace mops::render
