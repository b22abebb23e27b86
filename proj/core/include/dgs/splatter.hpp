// splatter.hpp
#pragma once

#include "dgs/raster.hpp"
#include "dgs/types.hpp"

#include <vector>

namespace dgs {

/**
 * @brief Pixel-wise Gaussian parameter image tied to the camera it is
 * expressed in. Every pixel stores one Gaussian in pre-activation form;
 * decode back-projects it into world space along the camera ray through
 * that pixel.
 *
 * Channel layout (14 per pixel):
 *   0      depth, pre-sigmoid; view depth = near + sigmoid(raw)*(far - near)
 *   1..2   sub-pixel offset, pre-tanh; ±0.5 px around the pixel center
 *   3..5   log_scale, stored as-is
 *   6..9   rotation quaternion (w,x,y,z), decoded as normalize(raw + (1,0,0,0))
 *   10     opacity logit, stored as-is
 *   11..13 degree-0 SH coefficients (RGB), stored as-is
 *
 * The identity bias on the rotation keeps every activation defined at an
 * all-zero pixel (a zero-initialized predictor head decodes to identity
 * rotations at mid-range depth) and has an exact inverse for encode.
 */
struct SplatterMap {
  static constexpr int kChannels = 14;
  // Channel indices into `values`.
  static constexpr int kDepth = 0;
  static constexpr int kOffsetX = 1;
  static constexpr int kOffsetY = 2;
  static constexpr int kLogScale = 3;   // 3..5
  static constexpr int kRotation = 6;   // 6..9, (w, x, y, z)
  static constexpr int kOpacityLogit = 10;
  static constexpr int kShDC = 11;      // 11..13
  /// Opacity logit written into cells that hold no Gaussian (alpha ~ 4.5e-5).
  static constexpr double kSentinelOpacityLogit = -10.0;

  Camera camera;
  ImageBuffer values;  // width x height x kChannels, pre-activation

  int width() const { return values.width; }
  int height() const { return values.height; }

  /// Map of empty cells: all channels zero except opacity logit = -10.
  static SplatterMap sentinel(const Camera& camera);

  /// Throws invalid_input unless channels == 14 and the shape matches camera.
  void validate() const;
};

/**
 * @brief Back-project every pixel of the map into one world-space Gaussian.
 *
 * Pixel (x, y) emits a ray through (x + 0.5 + 0.5*tanh(ox),
 * y + 0.5 + 0.5*tanh(oy)); its Gaussian sits on that ray at view depth
 * near + sigmoid(depth_raw)*(far - near), strictly inside (near, far).
 * Output is row-major, one Gaussian per pixel, SH degree 0. Throws
 * invalid_input when any channel is non-finite.
 */
GaussianFrame decode(const SplatterMap& map);

/// Union of per-view decodes, Gaussians concatenated in input order.
GaussianFrame decode_union(const std::vector<SplatterMap>& maps);

struct EncodeResult {
  SplatterMap map;
  int dropped = 0;  // unprojectable Gaussians plus nearest-wins collision losers
};

/**
 * @brief Inverse of decode: store each Gaussian in the pixel cell its
 * projection falls in. Gaussians whose view depth leaves (near, far) or whose
 * projection leaves the pixel grid are dropped and counted, as is the farther
 * Gaussian of every pixel collision (nearest wins, ties keep the first
 * submitted). SH bands above degree 0 are truncated. decode(encode(f).map)
 * reproduces each surviving Gaussian to activation round-trip precision.
 */
EncodeResult encode(const GaussianFrame& frame, const Camera& cam);

/**
 * @brief Reverse-mode pull of per-Gaussian gradients onto the map channels.
 *
 * grads must be index-aligned with decode(map). Rotation entries may be raw
 * 4-vector gradients; the quaternion-normalization projection is applied
 * here (idempotent for already-projected render_backward output).
 */
ImageBuffer decode_backward(const SplatterMap& map, const FrameGrads& grads);

}  // namespace dgs
