// types.hpp
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <string>
#include <vector>

namespace dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Number of spherical-harmonics coefficients per channel for a degree.
constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/**
 * @brief One anisotropic 3D Gaussian splat.
 *
 * Scales are stored as logs of per-axis standard deviations and opacity as a
 * pre-sigmoid logit so unconstrained gradient updates keep them valid.
 * sh[k] holds the RGB coefficients of real-SH basis function k; the count is
 * (degree+1)^2 with degree in 0..2.
 */
struct Gaussian {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Quat rotation = Quat::Identity();  // kept unit-norm
  double opacity_logit = 0.0;
  std::vector<Vec3> sh = {Vec3::Zero()};

  int sh_degree() const;
  /// sigmoid(opacity_logit)
  double opacity() const;

  /// Axis-aligned isotropic splat with a flat (degree-0) color.
  static Gaussian isotropic(const Vec3& position, double scale, const Vec3& rgb,
                            double opacity_logit);
};

/// All Gaussians of one time step.
struct GaussianFrame {
  std::vector<Gaussian> gaussians;
  int timestamp = 1;

  int size() const { return static_cast<int>(gaussians.size()); }
  bool empty() const { return gaussians.empty(); }
  /// SH degree shared by all splats; -1 for an empty frame.
  int sh_degree() const;
};

/// Per-frame Gaussian fields stacked over t = 1..T.
struct GaussianSequence {
  std::vector<GaussianFrame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  /// Check timestamps are 1..T contiguous and T >= 1; throws invalid_input.
  void validate() const;
};

/**
 * @brief Pinhole camera with a world-to-camera rigid transform.
 *
 * Camera space looks down +z. A world point p maps to view space as
 * t = rotation * p + translation and to the continuous pixel coordinate
 * (fx*t.x/t.z + cx, fy*t.y/t.z + cy), where pixel (i,j) covers
 * [i,i+1)x[j,j+1) and has its center at (i+0.5, j+0.5).
 */
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  double near = 0.1;
  double far = 100.0;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& p_world) const { return rotation * p_world + translation; }
  /// Camera center in world coordinates.
  Vec3 origin() const { return -(rotation.transpose() * translation); }
  /// Continuous pixel coordinate of a view-space point (caller checks z > 0).
  Vec2 project_cam(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }
  /**
   * @brief World-space ray direction through pixel coordinate (px, py),
   * scaled so its view-space z component is 1. Walking `d` units along it
   * lands at view-space depth exactly d.
   */
  Vec3 pixel_ray(double px, double py) const {
    Vec3 dir_cam((px - cx) / fx, (py - cy) / fy, 1.0);
    return rotation.transpose() * dir_cam;
  }

  /// Throws invalid_input when intrinsics/pose invariants are violated.
  void validate() const;

  /// Camera at `eye` looking at `target` with the given vertical FOV.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
                        int height, double fov_y_rad, double near, double far);
  /**
   * @brief Orbit camera: azimuth/elevation on a sphere of the given radius
   * around the origin, looking at the origin. Azimuth 0 is on +z, +90 deg on
   * +x; elevation raises the eye toward +y.
   */
  static Camera orbit(double azimuth_rad, double elevation_rad, double radius, int width,
                      int height, double fov_y_rad, double near, double far);
};

/**
 * @brief Canonical multi-view rig positions, one quarter turn apart around
 * the vertical axis: azimuth = 90 degrees times the enum value, so `input`
 * faces the scene from the front and `left`/`back`/`right` follow
 * counter-clockwise when viewed from above.
 */
enum class ViewTag : int { input = 0, left = 1, back = 2, right = 3 };

constexpr int kViewTagCount = 4;

/// Stable lowercase name ("input", "left", "back", "right").
const char* to_string(ViewTag tag);

/// Inverse of to_string; throws invalid_input for unknown names.
ViewTag view_tag_from_string(const std::string& name);

/**
 * @brief Row-major interleaved image. 1 channel for masks and sigma maps,
 * 3 for RGB, 4 for RGBA. Color data is linear RGB in [0,1]; sigma maps are
 * unbounded positive.
 */
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  static ImageBuffer zeros(int width, int height, int channels);
  static ImageBuffer constant(int width, int height, int channels, double value);

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  bool same_shape(const ImageBuffer& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
  size_t size() const { return data.size(); }

  /// Largest per-element absolute difference; shapes must match.
  static double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b);
};

/// Sigma = R * diag(exp(log_scale))^2 * R^T; symmetric positive definite.
Mat3 covariance(const Gaussian& g);

/// exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)) in (0, 1].
double eval_gaussian(const Gaussian& g, const Vec3& x);

}  // namespace dgs
