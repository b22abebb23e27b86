// image_ops.cpp
#include "dgs/image_ops.hpp"

#include "dgs/error.hpp"

#include <algorithm>
#include <cmath>

namespace dgs {

namespace {

constexpr double kGradEps = 1e-12;

struct BilinearTaps {
  int x0, y0, x1, y1;
  double w00, w01, w10, w11;  // (x0,y0), (x1,y0), (x0,y1), (x1,y1)
};

BilinearTaps bilinear_taps(const ImageBuffer& image, double x, double y) {
  const double u = std::clamp(x - 0.5, 0.0, static_cast<double>(image.width - 1));
  const double v = std::clamp(y - 0.5, 0.0, static_cast<double>(image.height - 1));
  const int x0 = std::min(static_cast<int>(u), image.width - 1);
  const int y0 = std::min(static_cast<int>(v), image.height - 1);
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  BilinearTaps t{x0, y0, x1, y1, 0, 0, 0, 0};
  t.w00 = (1 - fx) * (1 - fy);
  t.w01 = fx * (1 - fy);
  t.w10 = (1 - fx) * fy;
  t.w11 = fx * fy;
  return t;
}

}  // namespace

ImageBuffer box_downsample(const ImageBuffer& image, int factor) {
  require(factor >= 1, ErrorCode::invalid_input, "downsample factor must be positive");
  require(image.width % factor == 0 && image.height % factor == 0, ErrorCode::invalid_input,
          "image dimensions must be divisible by the downsample factor");
  if (factor == 1) return image;
  const int w = image.width / factor, h = image.height / factor;
  ImageBuffer out = ImageBuffer::zeros(w, h, image.channels);
  const double inv_area = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < image.channels; ++c) {
        double sum = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) sum += image.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = sum * inv_area;
      }
  return out;
}

ImageBuffer box_downsample_adjoint(const ImageBuffer& d_small, int factor, int width, int height) {
  require(width == d_small.width * factor && height == d_small.height * factor,
          ErrorCode::invalid_input, "adjoint dimensions do not match the downsample");
  if (factor == 1) return d_small;
  ImageBuffer out = ImageBuffer::zeros(width, height, d_small.channels);
  const double inv_area = 1.0 / (factor * factor);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < d_small.channels; ++c)
        out.at(x, y, c) = d_small.at(x / factor, y / factor, c) * inv_area;
  return out;
}

double bilinear_sample(const ImageBuffer& image, double x, double y, int c) {
  const BilinearTaps t = bilinear_taps(image, x, y);
  return t.w00 * image.at(t.x0, t.y0, c) + t.w01 * image.at(t.x1, t.y0, c) +
         t.w10 * image.at(t.x0, t.y1, c) + t.w11 * image.at(t.x1, t.y1, c);
}

ImageBuffer gradient_magnitude(const ImageBuffer& image) {
  ImageBuffer out = ImageBuffer::zeros(image.width, image.height, image.channels);
  auto clampx = [&](int x) { return std::clamp(x, 0, image.width - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, image.height - 1); };
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        const double gx = 0.5 * (image.at(clampx(x + 1), y, c) - image.at(clampx(x - 1), y, c));
        const double gy = 0.5 * (image.at(x, clampy(y + 1), c) - image.at(x, clampy(y - 1), c));
        out.at(x, y, c) = std::sqrt(gx * gx + gy * gy + kGradEps);
      }
  return out;
}

ImageBuffer gradient_magnitude_backward(const ImageBuffer& image, const ImageBuffer& d_mag) {
  require(image.same_shape(d_mag), ErrorCode::invalid_input,
          "gradient image shape does not match the input");
  ImageBuffer out = ImageBuffer::zeros(image.width, image.height, image.channels);
  auto clampx = [&](int x) { return std::clamp(x, 0, image.width - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, image.height - 1); };
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        const double gx = 0.5 * (image.at(clampx(x + 1), y, c) - image.at(clampx(x - 1), y, c));
        const double gy = 0.5 * (image.at(x, clampy(y + 1), c) - image.at(x, clampy(y - 1), c));
        const double m = std::sqrt(gx * gx + gy * gy + kGradEps);
        const double d = d_mag.at(x, y, c) / m;
        out.at(clampx(x + 1), y, c) += 0.5 * d * gx;
        out.at(clampx(x - 1), y, c) -= 0.5 * d * gx;
        out.at(x, clampy(y + 1), c) += 0.5 * d * gy;
        out.at(x, clampy(y - 1), c) -= 0.5 * d * gy;
      }
  return out;
}

GridWarp random_grid_warp(Rng& rng, int width, int height, double max_frac) {
  GridWarp warp;
  warp.width = width;
  warp.height = height;
  warp.displacement.resize(static_cast<std::size_t>(warp.cells) * warp.cells);
  const double mx = max_frac * width, my = max_frac * height;
  for (Vec2& d : warp.displacement) d = Vec2(rng.uniform(-mx, mx), rng.uniform(-my, my));
  return warp;
}

Vec2 warp_displacement(const GridWarp& warp, double x, double y) {
  const int n = warp.cells;
  const double s = std::clamp(x / warp.width, 0.0, 1.0) * (n - 1);
  const double t = std::clamp(y / warp.height, 0.0, 1.0) * (n - 1);
  const int i0 = std::min(static_cast<int>(s), n - 2);
  const int j0 = std::min(static_cast<int>(t), n - 2);
  const double fs = s - i0, ft = t - j0;
  const Vec2& d00 = warp.displacement[j0 * n + i0];
  const Vec2& d01 = warp.displacement[j0 * n + i0 + 1];
  const Vec2& d10 = warp.displacement[(j0 + 1) * n + i0];
  const Vec2& d11 = warp.displacement[(j0 + 1) * n + i0 + 1];
  return (1 - fs) * (1 - ft) * d00 + fs * (1 - ft) * d01 + (1 - fs) * ft * d10 + fs * ft * d11;
}

ImageBuffer apply_grid_warp(const ImageBuffer& image, const GridWarp& warp) {
  require(image.width == warp.width && image.height == warp.height, ErrorCode::invalid_input,
          "warp field size does not match the image");
  ImageBuffer out = ImageBuffer::zeros(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const Vec2 d = warp_displacement(warp, x + 0.5, y + 0.5);
      for (int c = 0; c < image.channels; ++c)
        out.at(x, y, c) = bilinear_sample(image, x + 0.5 + d.x(), y + 0.5 + d.y(), c);
    }
  return out;
}

ImageBuffer grid_warp_adjoint(const ImageBuffer& d_warped, const GridWarp& warp) {
  require(d_warped.width == warp.width && d_warped.height == warp.height, ErrorCode::invalid_input,
          "warp field size does not match the gradient image");
  ImageBuffer out = ImageBuffer::zeros(d_warped.width, d_warped.height, d_warped.channels);
  for (int y = 0; y < d_warped.height; ++y)
    for (int x = 0; x < d_warped.width; ++x) {
      const Vec2 d = warp_displacement(warp, x + 0.5, y + 0.5);
      const BilinearTaps t = bilinear_taps(out, x + 0.5 + d.x(), y + 0.5 + d.y());
      for (int c = 0; c < d_warped.channels; ++c) {
        const double g = d_warped.at(x, y, c);
        out.at(t.x0, t.y0, c) += t.w00 * g;
        out.at(t.x1, t.y0, c) += t.w01 * g;
        out.at(t.x0, t.y1, c) += t.w10 * g;
        out.at(t.x1, t.y1, c) += t.w11 * g;
      }
    }
  return out;
}

CameraJitter random_camera_jitter(Rng& rng, double max_angle_rad, double max_translation) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  while (axis.norm() < 1e-9) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(0.0, max_angle_rad);

  Vec3 dir(rng.normal(), rng.normal(), rng.normal());
  while (dir.norm() < 1e-9) dir = Vec3(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();

  CameraJitter jitter;
  jitter.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  jitter.translation = dir * rng.uniform(0.0, max_translation);
  return jitter;
}

Camera jittered_camera(const Camera& cam, const CameraJitter& jitter) {
  Camera out = cam;
  out.rotation = jitter.rotation * cam.rotation;
  out.translation = jitter.rotation * cam.translation + jitter.translation;
  return out;
}

ImageBuffer compensate_target(const ImageBuffer& target, const Camera& cam,
                              const CameraJitter& jitter, double plane_depth) {
  require(plane_depth > 0.0, ErrorCode::invalid_input, "plane depth must be positive");
  Mat3 K = Mat3::Zero();
  K(0, 0) = cam.fx;
  K(1, 1) = cam.fy;
  K(0, 2) = cam.cx;
  K(1, 2) = cam.cy;
  K(2, 2) = 1.0;

  // Plane-induced homography: original pixels -> jittered-camera pixels for
  // content on the camera-frame plane z = plane_depth.
  const Vec3 n(0.0, 0.0, 1.0);
  const Mat3 H =
      K * (jitter.rotation + jitter.translation * n.transpose() / plane_depth) * K.inverse();
  const Mat3 H_inv = H.inverse();

  ImageBuffer out = ImageBuffer::zeros(target.width, target.height, target.channels);
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      const Vec3 q = H_inv * Vec3(x + 0.5, y + 0.5, 1.0);
      const double sx = q.x() / q.z(), sy = q.y() / q.z();
      for (int c = 0; c < target.channels; ++c)
        out.at(x, y, c) = bilinear_sample(target, sx, sy, c);
    }
  return out;
}

}  // namespace dgs
