// image_ops.hpp
#pragma once

#include "dgs/rng.hpp"
#include "dgs/types.hpp"

#include <vector>

namespace dgs {

/// Average over non-overlapping factor x factor blocks. Dimensions must be
/// divisible by the factor.
ImageBuffer box_downsample(const ImageBuffer& image, int factor);

/// Adjoint of box_downsample: spread each low-res gradient uniformly over its
/// source block.
ImageBuffer box_downsample_adjoint(const ImageBuffer& d_small, int factor, int width, int height);

/// Bilinear sample at continuous pixel coordinates (pixel (i,j) has its value
/// at center (i+0.5, j+0.5)); coordinates clamp to the border.
double bilinear_sample(const ImageBuffer& image, double x, double y, int c);

/// Per-pixel gradient magnitude sqrt(gx^2 + gy^2 + 1e-12) from central
/// differences with clamped indices.
ImageBuffer gradient_magnitude(const ImageBuffer& image);

/// Adjoint of gradient_magnitude at the given input image.
ImageBuffer gradient_magnitude_backward(const ImageBuffer& image, const ImageBuffer& d_mag);

/**
 * @brief Smooth warp field: displacements at an 8x8 control grid spanning the
 * image, bilinearly interpolated to every pixel. warped(p) = source(p + d(p)).
 */
struct GridWarp {
  int width = 0, height = 0;       // image size the warp was built for
  int cells = 8;                   // control points per axis
  std::vector<Vec2> displacement;  // cells * cells, row-major, pixels
};

/// Control-point displacements uniform in [-max_frac, max_frac] of each axis.
GridWarp random_grid_warp(Rng& rng, int width, int height, double max_frac = 0.02);

/// Per-pixel displacement interpolated from the control grid.
Vec2 warp_displacement(const GridWarp& warp, double x, double y);

ImageBuffer apply_grid_warp(const ImageBuffer& image, const GridWarp& warp);

/// Adjoint of apply_grid_warp: scatter warped-image gradients back through the
/// bilinear taps.
ImageBuffer grid_warp_adjoint(const ImageBuffer& d_warped, const GridWarp& warp);

/// Camera-frame pose perturbation: x' = rotation * x + translation.
struct CameraJitter {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Rotation angle uniform in [0, max_angle_rad] about a random axis;
/// translation a random direction scaled uniformly up to max_translation.
CameraJitter random_camera_jitter(Rng& rng, double max_angle_rad, double max_translation);

/// Compose the jitter with a camera's extrinsics.
Camera jittered_camera(const Camera& cam, const CameraJitter& jitter);

/**
 * @brief Resample the target image into the jittered camera's pixel grid via
 * the plane-induced homography at plane_depth (exact for pure rotations), so
 * supervision through the jittered camera stays geometrically aligned.
 */
ImageBuffer compensate_target(const ImageBuffer& target, const Camera& cam,
                              const CameraJitter& jitter, double plane_depth);

}  // namespace dgs
