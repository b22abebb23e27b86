// raster.hpp
#pragma once

#include "dgs/types.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace dgs {

constexpr int kTileSize = 16;

/// Screen-space footprint of one projected Gaussian.
struct Projected2D {
  Vec2 mean2d = Vec2::Zero();   // continuous pixel coordinates
  Mat2 cov2d = Mat2::Identity();  // includes the anti-degeneracy floor
  double depth = 0.0;           // view-space z
  double radius = 0.0;          // 3 * sqrt(max eigenvalue of cov2d), pixels
  Vec3 color = Vec3::Zero();    // view-dependent color at this camera
  double alpha_peak = 0.0;      // sigmoid(opacity_logit)
};

struct RenderOptions {
  Vec3 background = Vec3::Zero();
  bool early_stop = true;           // stop a pixel once transmittance < stop_transmittance
  double stop_transmittance = 1e-4;
  double alpha_clamp = 0.99;
  double cov2d_floor = 0.3;         // added to cov2d diagonal before inversion
};

/**
 * @brief Entries of one 16x16 screen tile after the global composite-key sort.
 *
 * sort_key = (tile_id << 32) | float32 bits of depth. Positive-float bit
 * patterns sort like the floats themselves, so one stable sort over the keys
 * orders every tile front-to-back with ties broken by submission index. The
 * same depth key convention defines the blending order contract for both
 * render and render_brute.
 */
struct TileBin {
  int tile_id = 0;
  std::vector<std::pair<std::uint64_t, int>> entries;  // (sort_key, projection index)
};

/// Depth portion of the composite sort key.
inline std::uint32_t depth_key(double depth) {
  const float f = static_cast<float>(depth);
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(f));
  __builtin_memcpy(&bits, &f, sizeof(bits));
  return bits;
}

/**
 * @brief Perspective-project one Gaussian. Returns nullopt (culled) when the
 * view-space depth is outside (near, far) or the 3-sigma footprint misses the
 * viewport. cov2d is J W Sigma W^T J^T plus cov2d_floor * I.
 */
std::optional<Projected2D> project(const Gaussian& g, const Camera& cam,
                                   double cov2d_floor = 0.3);

/**
 * @brief Assign projections to every tile their radius box intersects and sort
 * all entries by the composite key. Returns non-empty bins in tile order.
 */
std::vector<TileBin> bin_tiles(const std::vector<Projected2D>& projections, const Camera& cam);

/**
 * @brief Tile-based front-to-back alpha blending.
 *
 * Per pixel (sampled at the center), splats within their radius contribute
 * alpha = min(alpha_clamp, alpha_peak * exp(-1/2 d^T cov2d^-1 d)); color
 * accumulates C += T * alpha * c with transmittance T *= 1 - alpha. Output is
 * RGBA with rgb composited over the background and alpha = 1 - T.
 */
ImageBuffer render(const GaussianFrame& frame, const Camera& cam, const RenderOptions& options = {});

/**
 * @brief Oracle renderer: identical blending contract, no tiles, no early
 * termination; every pixel walks the full depth-sorted splat list.
 * include_culled additionally force-renders splats the projector would cull
 * (those behind the camera stay unprojectable and are skipped).
 */
ImageBuffer render_brute(const GaussianFrame& frame, const Camera& cam,
                         const RenderOptions& options = {}, bool include_culled = false);

/// Gradients of a scalar loss with respect to one Gaussian's parameters.
struct GaussianGrads {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();  // (w, x, y, z)
  double opacity_logit = 0.0;
  std::vector<Vec3> sh;
};

using FrameGrads = std::vector<GaussianGrads>;

/// Zero-initialized gradients shaped like the frame.
FrameGrads zero_grads(const GaussianFrame& frame);

/**
 * @brief Analytic reverse pass of render. d_image has 3 channels (d loss / d
 * rgb) or 4 (plus d loss / d output alpha). Blend state is recomputed from the
 * sorted bins; accumulation order is fixed, so results are deterministic.
 * Early termination must match the forward render (same options).
 */
FrameGrads render_backward(const GaussianFrame& frame, const Camera& cam,
                           const ImageBuffer& d_image, const RenderOptions& options = {});

}  // namespace dgs
