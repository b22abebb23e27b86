// splatter.cpp
#include "dgs/splatter.hpp"

#include "dgs/error.hpp"

#include <cmath>
#include <limits>

namespace dgs {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Keeps atanh finite when a projection lands exactly on a cell border; the
// decoded offset then differs from the true one by ~5e-13 px.
constexpr double kOffsetLimit = 1.0 - 1e-12;

constexpr double kMinRotationNorm = 1e-12;

// sigmoid saturates to exactly 0.0/1.0 in double arithmetic for |raw| > ~37,
// which would put the decoded depth exactly on a clip plane (and make the
// encode-side logit infinite next to one). Pinning the normalized depth this
// far inside (0, 1) keeps decoded depths strictly between near and far for
// every finite input at a worst-case depth error of 1e-12 of the range.
constexpr double kDepthMargin = 1e-12;

double clamp_normalized_depth(double s) {
  return std::clamp(s, kDepthMargin, 1.0 - kDepthMargin);
}

}  // namespace

SplatterMap SplatterMap::sentinel(const Camera& camera) {
  SplatterMap map;
  map.camera = camera;
  map.values = ImageBuffer::zeros(camera.width, camera.height, kChannels);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      map.values.at(x, y, kOpacityLogit) = kSentinelOpacityLogit;
    }
  }
  return map;
}

void SplatterMap::validate() const {
  camera.validate();
  require(values.channels == kChannels, ErrorCode::invalid_input,
          "splatter map must have 14 channels per pixel");
  require(values.width == camera.width && values.height == camera.height,
          ErrorCode::invalid_input, "splatter map shape must match its camera");
  require(values.data.size() ==
              static_cast<size_t>(values.width) * values.height * values.channels,
          ErrorCode::invalid_input, "splatter map buffer size mismatch");
}

GaussianFrame decode(const SplatterMap& map) {
  map.validate();
  for (double v : map.values.data) {
    require(std::isfinite(v), ErrorCode::invalid_input,
            "splatter map contains non-finite channel values");
  }
  const Camera& cam = map.camera;
  const Vec3 origin = cam.origin();
  const double depth_range = cam.far - cam.near;

  GaussianFrame frame;
  frame.gaussians.reserve(static_cast<size_t>(map.width()) * map.height());
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const auto ch = [&](int c) { return map.values.at(x, y, c); };
      Gaussian g;
      const double px = x + 0.5 + 0.5 * std::tanh(ch(SplatterMap::kOffsetX));
      const double py = y + 0.5 + 0.5 * std::tanh(ch(SplatterMap::kOffsetY));
      const double depth =
          cam.near + clamp_normalized_depth(sigmoid(ch(SplatterMap::kDepth))) * depth_range;
      g.position = origin + depth * cam.pixel_ray(px, py);
      g.log_scale = Vec3(ch(SplatterMap::kLogScale), ch(SplatterMap::kLogScale + 1),
                         ch(SplatterMap::kLogScale + 2));
      Vec4 q(ch(SplatterMap::kRotation), ch(SplatterMap::kRotation + 1),
             ch(SplatterMap::kRotation + 2), ch(SplatterMap::kRotation + 3));
      q(0) += 1.0;
      const double norm = q.norm();
      require(norm > kMinRotationNorm, ErrorCode::invalid_input,
              "splatter rotation channels decode to a zero quaternion");
      g.rotation = Quat(q(0) / norm, q(1) / norm, q(2) / norm, q(3) / norm);
      g.opacity_logit = ch(SplatterMap::kOpacityLogit);
      g.sh = {Vec3(ch(SplatterMap::kShDC), ch(SplatterMap::kShDC + 1),
                   ch(SplatterMap::kShDC + 2))};
      frame.gaussians.push_back(g);
    }
  }
  return frame;
}

GaussianFrame decode_union(const std::vector<SplatterMap>& maps) {
  GaussianFrame frame;
  for (const SplatterMap& map : maps) {
    GaussianFrame part = decode(map);
    frame.gaussians.insert(frame.gaussians.end(), part.gaussians.begin(),
                           part.gaussians.end());
  }
  return frame;
}

EncodeResult encode(const GaussianFrame& frame, const Camera& cam) {
  cam.validate();
  EncodeResult result;
  result.map = SplatterMap::sentinel(cam);
  const double depth_range = cam.far - cam.near;
  constexpr double kEmpty = std::numeric_limits<double>::infinity();
  std::vector<double> cell_depth(static_cast<size_t>(cam.width) * cam.height, kEmpty);

  for (const Gaussian& g : frame.gaussians) {
    const Vec3 t = cam.to_camera(g.position);
    // Also rejects non-finite positions (comparisons with NaN are false).
    if (!(t.z() > cam.near && t.z() < cam.far)) {
      ++result.dropped;
      continue;
    }
    const Vec2 p = cam.project_cam(t);
    const int ix = static_cast<int>(std::floor(p.x()));
    const int iy = static_cast<int>(std::floor(p.y()));
    if (ix < 0 || ix >= cam.width || iy < 0 || iy >= cam.height) {
      ++result.dropped;
      continue;
    }
    double& occupant = cell_depth[static_cast<size_t>(iy) * cam.width + ix];
    if (t.z() >= occupant) {  // farther than (or tied with) the current holder
      ++result.dropped;
      continue;
    }
    if (occupant != kEmpty) ++result.dropped;  // evict the farther previous holder
    occupant = t.z();

    const auto ch = [&](int c) -> double& { return result.map.values.at(ix, iy, c); };
    const double s = clamp_normalized_depth((t.z() - cam.near) / depth_range);
    ch(SplatterMap::kDepth) = std::log(s / (1.0 - s));
    const double fx_off = 2.0 * (p.x() - (ix + 0.5));
    const double fy_off = 2.0 * (p.y() - (iy + 0.5));
    ch(SplatterMap::kOffsetX) = std::atanh(std::clamp(fx_off, -kOffsetLimit, kOffsetLimit));
    ch(SplatterMap::kOffsetY) = std::atanh(std::clamp(fy_off, -kOffsetLimit, kOffsetLimit));
    for (int k = 0; k < 3; ++k) ch(SplatterMap::kLogScale + k) = g.log_scale(k);
    ch(SplatterMap::kRotation) = g.rotation.w() - 1.0;
    ch(SplatterMap::kRotation + 1) = g.rotation.x();
    ch(SplatterMap::kRotation + 2) = g.rotation.y();
    ch(SplatterMap::kRotation + 3) = g.rotation.z();
    ch(SplatterMap::kOpacityLogit) = g.opacity_logit;
    require(!g.sh.empty(), ErrorCode::invalid_input,
            "encode requires at least a degree-0 SH coefficient");
    for (int k = 0; k < 3; ++k) ch(SplatterMap::kShDC + k) = g.sh[0](k);
  }
  return result;
}

ImageBuffer decode_backward(const SplatterMap& map, const FrameGrads& grads) {
  map.validate();
  require(grads.size() == static_cast<size_t>(map.width()) * map.height(),
          ErrorCode::invalid_input, "gradient count must match map pixels");
  const Camera& cam = map.camera;
  const double depth_range = cam.far - cam.near;
  ImageBuffer d_map = ImageBuffer::zeros(map.width(), map.height(), SplatterMap::kChannels);

  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const GaussianGrads& gg = grads[static_cast<size_t>(y) * map.width() + x];
      require(gg.sh.size() == 1, ErrorCode::invalid_input,
              "splatter gradients must be SH degree 0");
      const auto ch = [&](int c) { return map.values.at(x, y, c); };
      const auto out = [&](int c) -> double& { return d_map.at(x, y, c); };

      // Recompute the forward activations for this pixel.
      const double tx = std::tanh(ch(SplatterMap::kOffsetX));
      const double ty = std::tanh(ch(SplatterMap::kOffsetY));
      const double px = x + 0.5 + 0.5 * tx;
      const double py = y + 0.5 + 0.5 * ty;
      const double s = clamp_normalized_depth(sigmoid(ch(SplatterMap::kDepth)));
      const double depth = cam.near + s * depth_range;
      const Vec3 dir = cam.pixel_ray(px, py);

      // position = origin + depth * dir; dir = R^T ((px-cx)/fx, (py-cy)/fy, 1).
      out(SplatterMap::kDepth) = gg.position.dot(dir) * s * (1.0 - s) * depth_range;
      const Vec3 d_pos_cam = cam.rotation * gg.position;
      out(SplatterMap::kOffsetX) = depth * d_pos_cam.x() / cam.fx * 0.5 * (1.0 - tx * tx);
      out(SplatterMap::kOffsetY) = depth * d_pos_cam.y() / cam.fy * 0.5 * (1.0 - ty * ty);

      for (int k = 0; k < 3; ++k) out(SplatterMap::kLogScale + k) = gg.log_scale(k);

      Vec4 q(ch(SplatterMap::kRotation), ch(SplatterMap::kRotation + 1),
             ch(SplatterMap::kRotation + 2), ch(SplatterMap::kRotation + 3));
      q(0) += 1.0;
      const double norm = q.norm();
      require(norm > kMinRotationNorm, ErrorCode::invalid_input,
              "splatter rotation channels decode to a zero quaternion");
      const Vec4 unit = q / norm;
      const Vec4 d_q = (gg.rotation - gg.rotation.dot(unit) * unit) / norm;
      for (int k = 0; k < 4; ++k) out(SplatterMap::kRotation + k) = d_q(k);

      out(SplatterMap::kOpacityLogit) = gg.opacity_logit;
      for (int k = 0; k < 3; ++k) out(SplatterMap::kShDC + k) = gg.sh[0](k);
    }
  }
  return d_map;
}

}  // namespace dgs
