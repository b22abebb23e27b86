// types.cpp
#include "dgs/types.hpp"

#include "dgs/error.hpp"
#include "dgs/sh.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace dgs {

int Gaussian::sh_degree() const {
  const int n = static_cast<int>(sh.size());
  for (int degree = 0; degree <= 2; ++degree) {
    if (n == sh_coeff_count(degree)) return degree;
  }
  throw Error(ErrorCode::invalid_input,
              "SH coefficient count " + std::to_string(n) + " is not (L+1)^2 for L in 0..2");
}

double Gaussian::opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }

Gaussian Gaussian::isotropic(const Vec3& position, double scale, const Vec3& rgb,
                             double opacity_logit) {
  Gaussian g;
  g.position = position;
  g.log_scale = Vec3::Constant(std::log(scale));
  g.opacity_logit = opacity_logit;
  g.sh = {rgb_to_sh_dc(rgb)};
  return g;
}

int GaussianFrame::sh_degree() const {
  if (gaussians.empty()) return -1;
  const int degree = gaussians.front().sh_degree();
  for (const Gaussian& g : gaussians) {
    require(g.sh_degree() == degree, ErrorCode::invalid_input,
            "all Gaussians in a frame must share one SH degree");
  }
  return degree;
}

const char* to_string(ViewTag tag) {
  switch (tag) {
    case ViewTag::input: return "input";
    case ViewTag::left: return "left";
    case ViewTag::back: return "back";
    case ViewTag::right: return "right";
  }
  throw Error(ErrorCode::invalid_input, "unknown view tag value");
}

ViewTag view_tag_from_string(const std::string& name) {
  for (int i = 0; i < kViewTagCount; ++i) {
    const ViewTag tag = static_cast<ViewTag>(i);
    if (name == to_string(tag)) return tag;
  }
  throw Error(ErrorCode::invalid_input, "unknown view tag \"" + name + "\"");
}

void GaussianSequence::validate() const {
  require(!frames.empty(), ErrorCode::invalid_input, "sequence must have at least one frame");
  for (int i = 0; i < frame_count(); ++i) {
    require(frames[i].timestamp == i + 1, ErrorCode::invalid_input,
            "frame timestamps must be contiguous 1..T");
  }
}

void Camera::validate() const {
  require(width > 0 && height > 0, ErrorCode::invalid_input, "camera needs positive dimensions");
  require(fx > 0.0 && fy > 0.0, ErrorCode::invalid_input, "camera needs positive focal lengths");
  require(near > 0.0 && near < far, ErrorCode::invalid_input, "camera needs 0 < near < far");
  const Mat3 rtr = rotation.transpose() * rotation;
  require((rtr - Mat3::Identity()).norm() < 1e-6, ErrorCode::invalid_input,
          "camera rotation must be orthonormal");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
                       int height, double fov_y_rad, double near, double far) {
  const Vec3 forward = (target - eye).normalized();  // camera +z
  const Vec3 right = forward.cross(up).normalized(); // camera +x
  const Vec3 down = forward.cross(right);            // camera +y (y grows down-image)

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y_rad);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.near = near;
  cam.far = far;
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  cam.translation = -(cam.rotation * eye);
  return cam;
}

Camera Camera::orbit(double azimuth_rad, double elevation_rad, double radius, int width,
                     int height, double fov_y_rad, double near, double far) {
  const Vec3 eye = radius * Vec3(std::cos(elevation_rad) * std::sin(azimuth_rad),
                                 std::sin(elevation_rad),
                                 std::cos(elevation_rad) * std::cos(azimuth_rad));
  return look_at(eye, Vec3::Zero(), Vec3::UnitY(), width, height, fov_y_rad, near, far);
}

ImageBuffer ImageBuffer::zeros(int width, int height, int channels) {
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.assign(static_cast<size_t>(width) * height * channels, 0.0);
  return img;
}

ImageBuffer ImageBuffer::constant(int width, int height, int channels, double value) {
  ImageBuffer img = zeros(width, height, channels);
  img.data.assign(img.data.size(), value);
  return img;
}

double ImageBuffer::max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.same_shape(b), ErrorCode::invalid_input, "image shape mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  }
  return worst;
}

Mat3 covariance(const Gaussian& g) {
  const Mat3 r = g.rotation.normalized().toRotationMatrix();
  const Vec3 s = g.log_scale.array().exp();
  Mat3 m = r * s.asDiagonal();
  return m * m.transpose();
}

double eval_gaussian(const Gaussian& g, const Vec3& x) {
  const Vec3 d = x - g.position;
  const Vec3 solved = covariance(g).ldlt().solve(d);
  return std::exp(-0.5 * d.dot(solved));
}

}  // namespace dgs
