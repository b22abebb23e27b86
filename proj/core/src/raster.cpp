// raster.cpp
#include "dgs/raster.hpp"

#include "dgs/error.hpp"
#include "dgs/sh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dgs {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Largest eigenvalue of a symmetric 2x2 matrix.
double max_eigenvalue(const Mat2& m) {
  const double mid = 0.5 * (m(0, 0) + m(1, 1));
  const double half_gap = 0.5 * (m(0, 0) - m(1, 1));
  return mid + std::sqrt(half_gap * half_gap + m(0, 1) * m(0, 1));
}

// Projection without the cull decision; valid whenever the point is in front
// of the camera. Used by both project() and the force-include oracle path.
std::optional<Projected2D> project_unculled(const Gaussian& g, const Camera& cam,
                                            double cov2d_floor) {
  const Vec3 t = cam.to_camera(g.position);
  if (t.z() <= 1e-9) return std::nullopt;  // unprojectable, not merely culled

  Projected2D p;
  p.depth = t.z();
  p.mean2d = cam.project_cam(t);

  Eigen::Matrix<double, 2, 3> J;
  const double inv_z = 1.0 / t.z();
  const double inv_z2 = inv_z * inv_z;
  J << cam.fx * inv_z, 0.0, -cam.fx * t.x() * inv_z2,
       0.0, cam.fy * inv_z, -cam.fy * t.y() * inv_z2;

  const Eigen::Matrix<double, 2, 3> M = J * cam.rotation;
  p.cov2d = M * covariance(g) * M.transpose();
  p.cov2d(0, 0) += cov2d_floor;
  p.cov2d(1, 1) += cov2d_floor;
  p.radius = 3.0 * std::sqrt(max_eigenvalue(p.cov2d));

  const Vec3 view_dir = (g.position - cam.origin()).normalized();
  p.color = eval_sh(g.sh, view_dir);
  p.alpha_peak = sigmoid(g.opacity_logit);
  return p;
}

struct Conic {
  double a = 0.0, b = 0.0, c = 0.0;  // cov2d inverse: [[a, b], [b, c]]
};

Conic invert_cov2d(const Mat2& cov) {
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  require(det > 0.0, ErrorCode::invalid_input, "projected covariance is not positive definite");
  const double inv_det = 1.0 / det;
  return {cov(1, 1) * inv_det, -cov(0, 1) * inv_det, cov(0, 0) * inv_det};
}

// Opacity of one projected splat at a pixel center, zero beyond its radius.
double splat_alpha(const Projected2D& p, const Conic& conic, double px, double py,
                   double alpha_clamp) {
  const double dx = px - p.mean2d.x();
  const double dy = py - p.mean2d.y();
  if (dx * dx + dy * dy > p.radius * p.radius) return 0.0;
  const double power = -0.5 * (conic.a * dx * dx + 2.0 * conic.b * dx * dy + conic.c * dy * dy);
  return std::min(alpha_clamp, p.alpha_peak * std::exp(power));
}

ImageBuffer background_image(const Camera& cam, const Vec3& background) {
  ImageBuffer image = ImageBuffer::zeros(cam.width, cam.height, 4);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = background[c];
  return image;
}

void validate_render_inputs(const GaussianFrame& frame, const Camera& cam) {
  cam.validate();
  if (!frame.empty()) frame.sh_degree();  // throws on inconsistent coefficient counts
}

}  // namespace

std::optional<Projected2D> project(const Gaussian& g, const Camera& cam, double cov2d_floor) {
  std::optional<Projected2D> p = project_unculled(g, cam, cov2d_floor);
  if (!p) return std::nullopt;
  if (p->depth <= cam.near || p->depth >= cam.far) return std::nullopt;
  if (p->mean2d.x() + p->radius < 0.0 || p->mean2d.x() - p->radius > cam.width ||
      p->mean2d.y() + p->radius < 0.0 || p->mean2d.y() - p->radius > cam.height)
    return std::nullopt;
  return p;
}

std::vector<TileBin> bin_tiles(const std::vector<Projected2D>& projections, const Camera& cam) {
  const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;

  std::vector<std::pair<std::uint64_t, int>> entries;
  for (int i = 0; i < static_cast<int>(projections.size()); ++i) {
    const Projected2D& p = projections[i];
    const int x0 = std::clamp(
        static_cast<int>(std::floor((p.mean2d.x() - p.radius) / kTileSize)), 0, tiles_x - 1);
    const int x1 = std::clamp(
        static_cast<int>(std::floor((p.mean2d.x() + p.radius) / kTileSize)), 0, tiles_x - 1);
    const int y0 = std::clamp(
        static_cast<int>(std::floor((p.mean2d.y() - p.radius) / kTileSize)), 0, tiles_y - 1);
    const int y1 = std::clamp(
        static_cast<int>(std::floor((p.mean2d.y() + p.radius) / kTileSize)), 0, tiles_y - 1);
    const std::uint64_t depth_bits = depth_key(p.depth);
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx) {
        const std::uint64_t tile_id = static_cast<std::uint64_t>(ty) * tiles_x + tx;
        entries.emplace_back((tile_id << 32) | depth_bits, i);
      }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<TileBin> bins;
  for (const auto& entry : entries) {
    const int tile_id = static_cast<int>(entry.first >> 32);
    if (bins.empty() || bins.back().tile_id != tile_id) {
      bins.push_back(TileBin{tile_id, {}});
    }
    bins.back().entries.push_back(entry);
  }
  return bins;
}

ImageBuffer render(const GaussianFrame& frame, const Camera& cam, const RenderOptions& options) {
  validate_render_inputs(frame, cam);
  ImageBuffer image = background_image(cam, options.background);
  if (frame.empty()) return image;

  std::vector<Projected2D> projections;
  projections.reserve(frame.size());
  for (const Gaussian& g : frame.gaussians) {
    if (std::optional<Projected2D> p = project(g, cam, options.cov2d_floor)) {
      projections.push_back(*p);
    }
  }
  std::vector<Conic> conics(projections.size());
  for (std::size_t i = 0; i < projections.size(); ++i) conics[i] = invert_cov2d(projections[i].cov2d);

  const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  for (const TileBin& bin : bin_tiles(projections, cam)) {
    const int tx = bin.tile_id % tiles_x;
    const int ty = bin.tile_id / tiles_x;
    const int x_end = std::min((tx + 1) * kTileSize, cam.width);
    const int y_end = std::min((ty + 1) * kTileSize, cam.height);
    for (int y = ty * kTileSize; y < y_end; ++y) {
      for (int x = tx * kTileSize; x < x_end; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        Vec3 accum = Vec3::Zero();
        double transmittance = 1.0;
        for (const auto& [key, idx] : bin.entries) {
          const double alpha =
              splat_alpha(projections[idx], conics[idx], px, py, options.alpha_clamp);
          if (alpha == 0.0) continue;
          accum += transmittance * alpha * projections[idx].color;
          transmittance *= 1.0 - alpha;
          if (options.early_stop && transmittance < options.stop_transmittance) break;
        }
        for (int c = 0; c < 3; ++c)
          image.at(x, y, c) = accum[c] + transmittance * options.background[c];
        image.at(x, y, 3) = 1.0 - transmittance;
      }
    }
  }
  return image;
}

ImageBuffer render_brute(const GaussianFrame& frame, const Camera& cam,
                         const RenderOptions& options, bool include_culled) {
  validate_render_inputs(frame, cam);
  ImageBuffer image = background_image(cam, options.background);
  if (frame.empty()) return image;

  std::vector<Projected2D> projections;
  for (const Gaussian& g : frame.gaussians) {
    std::optional<Projected2D> p = include_culled ? project_unculled(g, cam, options.cov2d_floor)
                                                  : project(g, cam, options.cov2d_floor);
    if (p) projections.push_back(*p);
  }
  std::vector<Conic> conics(projections.size());
  for (std::size_t i = 0; i < projections.size(); ++i) conics[i] = invert_cov2d(projections[i].cov2d);

  // Same ordering contract as the tiled path: float32 depth key, stable ties.
  std::vector<int> order(projections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return depth_key(projections[a].depth) < depth_key(projections[b].depth);
  });

  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      Vec3 accum = Vec3::Zero();
      double transmittance = 1.0;
      for (int idx : order) {
        const double alpha =
            splat_alpha(projections[idx], conics[idx], px, py, options.alpha_clamp);
        if (alpha == 0.0) continue;
        accum += transmittance * alpha * projections[idx].color;
        transmittance *= 1.0 - alpha;
      }
      for (int c = 0; c < 3; ++c)
        image.at(x, y, c) = accum[c] + transmittance * options.background[c];
      image.at(x, y, 3) = 1.0 - transmittance;
    }
  }
  return image;
}

}  // namespace dgs
