#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mops/random.hpp"
#include "mops/sim.hpp"

namespace mops::render {

constexpr int kImageSize = 84;

// 84x84x3 image with values in [0, 1], row-major (y, x, channel).
struct Observation {
  std::vector<double> pixels;

  Observation() : pixels(static_cast<size_t>(kImageSize) * kImageSize * 3, 0.0) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * kImageSize + x) * 3 + c]; }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * kImageSize + x) * 3 + c];
  }
};

// Visual randomization applied by render(). noise_seed makes render a pure
// function of (state, overlay, params).
struct RandParams {
  std::array<double, 3> background{0.15, 0.18, 0.2};
  std::array<double, 3> object_color{0.9, 0.2, 0.8};
  std::array<double, 3> gain{1.0, 1.0, 1.0};   // [0.6, 1.4]
  std::array<double, 3> bias{0.0, 0.0, 0.0};   // [-0.1, 0.1]
  double camera_offset_x = 0.0;                // pixels, |.| <= 4
  double camera_offset_y = 0.0;
  double camera_scale = 1.0;                   // [0.9, 1.1]
  double noise_std = 0.0;                      // [0, 0.05]
  uint64_t noise_seed = 0;
};

RandParams sample_domain_randomization(RandomStream& rng);

// Fixed overhead view used for autoencoder reconstruction targets: black
// background, magenta objects, no jitter, no noise.
RandParams canonical_params();

Observation render(const sim::SceneState& state, const sim::Goal* goal_overlay,
                   const RandParams& params);

Observation render_canonical(const sim::SceneState& state);

// Training-time augmentation (contrast jitter + pixel noise). Never applied
// inside render_canonical.
void augment(Observation& obs, RandomStream& rng, double contrast_lo = 0.7,
             double contrast_hi = 1.3, double noise_std = 0.02);

// Quantization used by the dataset blobs.
std::vector<uint8_t> quantize(const Observation& obs);
Observation dequantize(const uint8_t* data);

}  // namespace mops::render
