// scenes.cpp
#include "dgs/scenes.hpp"

#include "dgs/error.hpp"
#include "dgs/rng.hpp"
#include "dgs/sh.hpp"

#include <algorithm>
#include <cmath>

namespace dgs {

namespace {

/// Time-independent splat layout sampled once from the spec's seed; frames
/// are analytic transforms of this base.
struct BaseScene {
  std::vector<Gaussian> splats;
  std::vector<Vec3> radial_direction;  // pulsing_blob: unit direction per splat
  std::vector<double> radial_distance;
  std::vector<Vec3> body_offset;       // two_body: offset from the body center
  std::vector<int> body_index;         // two_body: 0 or 1
  double body_separation = 0.0;
};

Vec3 clamped_palette_color(Rng& rng, const Vec3& base) {
  Vec3 color = base + Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                           rng.uniform(-0.05, 0.05));
  for (int k = 0; k < 3; ++k) color(k) = std::clamp(color(k), 0.05, 0.95);
  return color;
}

Gaussian base_splat(Rng& rng, const Vec3& position, const Vec3& color) {
  Gaussian g;
  g.position = position;
  g.log_scale = Vec3(rng.uniform(-3.4, -2.6), rng.uniform(-3.4, -2.6), rng.uniform(-3.4, -2.6));
  Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  while (q.norm() < 1e-6) q = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q /= q.norm();
  g.rotation = Quat(q(0), q(1), q(2), q(3));
  g.opacity_logit = rng.uniform(0.5, 2.5);
  g.sh = {rgb_to_sh_dc(color)};
  return g;
}

BaseScene build_base(const SceneSpec& spec) {
  Rng rng(spec.seed);
  const Vec3 center = 0.5 * (spec.bounds_min + spec.bounds_max);
  const Vec3 half = 0.5 * (spec.bounds_max - spec.bounds_min);
  const double scale = half.minCoeff();
  BaseScene base;
  base.splats.reserve(spec.gaussian_count);

  switch (spec.kind) {
    case SceneKind::orbiter: {
      const int cluster_count = std::clamp(spec.gaussian_count / 25, 1, 4);
      std::vector<Vec3> centers(cluster_count);
      for (Vec3& c : centers) {
        c = center + Vec3(rng.uniform(-0.55, 0.55) * half.x(),
                          rng.uniform(-0.55, 0.55) * half.y(),
                          rng.uniform(-0.55, 0.55) * half.z());
      }
      for (int i = 0; i < spec.gaussian_count; ++i) {
        const int k = i % cluster_count;
        const Vec3 offset(0.12 * scale * rng.normal(), 0.12 * scale * rng.normal(),
                          0.12 * scale * rng.normal());
        Vec3 position = centers[k] + offset;
        for (int a = 0; a < 3; ++a) {
          position(a) = std::clamp(position(a), spec.bounds_min(a), spec.bounds_max(a));
        }
        const Vec3 color =
            clamped_palette_color(rng, spec.palette[k % spec.palette.size()]);
        base.splats.push_back(base_splat(rng, position, color));
      }
      break;
    }
    case SceneKind::pulsing_blob: {
      base.radial_direction.reserve(spec.gaussian_count);
      base.radial_distance.reserve(spec.gaussian_count);
      for (int i = 0; i < spec.gaussian_count; ++i) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        while (dir.norm() < 1e-6) dir = Vec3(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        const double distance = rng.uniform(0.15, 0.55) * scale;
        const Vec3 color =
            clamped_palette_color(rng, spec.palette[i % spec.palette.size()]);
        base.radial_direction.push_back(dir);
        base.radial_distance.push_back(distance);
        base.splats.push_back(base_splat(rng, center + distance * dir, color));
      }
      break;
    }
    case SceneKind::two_body: {
      base.body_separation = 0.45 * scale;
      base.body_offset.reserve(spec.gaussian_count);
      base.body_index.reserve(spec.gaussian_count);
      for (int i = 0; i < spec.gaussian_count; ++i) {
        const int body = i % 2;
        const Vec3 offset(0.12 * scale * rng.normal(), 0.12 * scale * rng.normal(),
                          0.12 * scale * rng.normal());
        const Vec3 color =
            clamped_palette_color(rng, spec.palette[body % spec.palette.size()]);
        base.body_offset.push_back(offset);
        base.body_index.push_back(body);
        // Body centers are filled in per frame; store the offset for now.
        base.splats.push_back(base_splat(rng, center + offset, color));
      }
      break;
    }
  }
  return base;
}

Mat3 rotation_about_y(double angle) {
  Mat3 m;
  m << std::cos(angle), 0.0, std::sin(angle),  //
      0.0, 1.0, 0.0,                           //
      -std::sin(angle), 0.0, std::cos(angle);
  return m;
}

}  // namespace

const char* to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::orbiter: return "orbiter";
    case SceneKind::pulsing_blob: return "pulsing-blob";
    case SceneKind::two_body: return "two-body";
  }
  throw Error(ErrorCode::invalid_input, "unknown scene kind value");
}

SceneKind scene_kind_from_string(const std::string& name) {
  for (SceneKind kind : {SceneKind::orbiter, SceneKind::pulsing_blob, SceneKind::two_body}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::config, "unknown scene kind \"" + name + "\"");
}

void SceneSpec::validate() const {
  require(gaussian_count > 0, ErrorCode::config, "gaussian_count must be positive");
  require(frame_count >= 1, ErrorCode::config, "frame_count must be at least 1");
  require(!palette.empty(), ErrorCode::config, "palette must not be empty");
  for (int a = 0; a < 3; ++a) {
    require(bounds_min(a) < bounds_max(a), ErrorCode::config,
            "bounds box must have positive extent");
  }
}

std::vector<Camera> orthogonal_rig(const RigSpec& rig) {
  std::vector<Camera> cameras;
  cameras.reserve(kViewTagCount);
  for (int v = 0; v < kViewTagCount; ++v) {
    cameras.push_back(Camera::orbit(v * M_PI / 2.0, 0.0, rig.radius, rig.width, rig.height,
                                    rig.fov_y, rig.near, rig.far));
  }
  return cameras;
}

GaussianFrame frame_at(const SceneSpec& spec, int t) {
  spec.validate();
  require(t >= 1, ErrorCode::invalid_input, "time steps are 1-based");
  const BaseScene base = build_base(spec);
  const Vec3 center = 0.5 * (spec.bounds_min + spec.bounds_max);
  const double phase = 2.0 * M_PI * (t - 1) / spec.frame_count;

  GaussianFrame frame;
  frame.timestamp = t;
  frame.gaussians = base.splats;
  switch (spec.kind) {
    case SceneKind::orbiter: {
      const Mat3 rotation = rotation_about_y(phase);
      const Quat spin(Eigen::AngleAxisd(phase, Vec3::UnitY()));
      for (Gaussian& g : frame.gaussians) {
        g.position = center + rotation * (g.position - center);
        g.rotation = (spin * g.rotation).normalized();
      }
      break;
    }
    case SceneKind::pulsing_blob: {
      const double swell = 1.0 + 0.3 * std::sin(phase);
      for (int i = 0; i < frame.size(); ++i) {
        frame.gaussians[i].position =
            center + swell * base.radial_distance[i] * base.radial_direction[i];
      }
      break;
    }
    case SceneKind::two_body: {
      const Mat3 rotation = rotation_about_y(phase);
      const Vec3 arm = rotation * Vec3(base.body_separation, 0.0, 0.0);
      for (int i = 0; i < frame.size(); ++i) {
        const Vec3 body_center = center + (base.body_index[i] == 0 ? arm : -arm);
        frame.gaussians[i].position = body_center + base.body_offset[i];
      }
      break;
    }
  }
  return frame;
}

Scene generate(const SceneSpec& spec, const RigSpec& rig) {
  spec.validate();
  Scene scene;
  scene.sequence.frames.reserve(spec.frame_count);
  for (int t = 1; t <= spec.frame_count; ++t) {
    scene.sequence.frames.push_back(frame_at(spec, t));
  }
  scene.cameras = orthogonal_rig(rig);
  return scene;
}

std::vector<ViewSequence> render_views(const GaussianSequence& sequence,
                                       const std::vector<Camera>& cameras,
                                       const RenderOptions& options, int channels) {
  require(channels == 3 || channels == 4, ErrorCode::invalid_input,
          "rendered views are RGB or RGBA");
  std::vector<ViewSequence> views;
  views.reserve(cameras.size());
  for (size_t v = 0; v < cameras.size(); ++v) {
    ViewSequence view;
    view.tag = static_cast<ViewTag>(v % kViewTagCount);
    view.frames.reserve(sequence.frame_count());
    for (const GaussianFrame& frame : sequence.frames) {
      const ImageBuffer rgba = render(frame, cameras[v], options);
      if (channels == 4) {
        view.frames.push_back(rgba);
        continue;
      }
      ImageBuffer rgb = ImageBuffer::zeros(rgba.width, rgba.height, 3);
      for (int y = 0; y < rgba.height; ++y) {
        for (int x = 0; x < rgba.width; ++x) {
          for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = rgba.at(x, y, c);
        }
      }
      view.frames.push_back(std::move(rgb));
    }
    views.push_back(std::move(view));
  }
  return views;
}

const char* to_string(CorruptionMode mode) {
  switch (mode) {
    case CorruptionMode::invert: return "invert";
    case CorruptionMode::constant: return "constant";
    case CorruptionMode::noise: return "noise";
  }
  throw Error(ErrorCode::invalid_input, "unknown corruption mode value");
}

CorruptionMode corruption_mode_from_string(const std::string& name) {
  for (CorruptionMode mode :
       {CorruptionMode::invert, CorruptionMode::constant, CorruptionMode::noise}) {
    if (name == to_string(mode)) return mode;
  }
  throw Error(ErrorCode::config, "unknown corruption mode \"" + name + "\"");
}

void CorruptionSpec::validate(int image_width, int image_height) const {
  require(width >= 0 && height >= 0, ErrorCode::invalid_input,
          "corruption patch needs non-negative extent");
  require(x >= 0 && y >= 0 && x + width <= image_width && y + height <= image_height,
          ErrorCode::invalid_input, "corruption patch leaves the image bounds");
}

std::vector<ViewSequence> corrupt(const std::vector<ViewSequence>& views,
                                  const CorruptionSpec& spec) {
  std::vector<ViewSequence> out = views;
  Rng rng(spec.seed);
  for (ViewSequence& view : out) {
    if (view.tag != spec.view) continue;
    for (int t = 1; t <= view.frame_count(); ++t) {
      if (t < spec.t_begin || t > spec.t_end) continue;
      ImageBuffer& image = view.frames[t - 1];
      spec.validate(image.width, image.height);
      const int color_channels = std::min(image.channels, 3);
      for (int yy = spec.y; yy < spec.y + spec.height; ++yy) {
        for (int xx = spec.x; xx < spec.x + spec.width; ++xx) {
          for (int c = 0; c < color_channels; ++c) {
            double& v = image.at(xx, yy, c);
            switch (spec.mode) {
              case CorruptionMode::invert: v = 1.0 - v; break;
              case CorruptionMode::constant: v = spec.value; break;
              case CorruptionMode::noise:
                v = std::clamp(v + rng.uniform(-spec.amplitude, spec.amplitude), 0.0, 1.0);
                break;
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace dgs
