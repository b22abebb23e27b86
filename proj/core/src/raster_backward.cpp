// raster_backward.cpp
#include "dgs/error.hpp"
#include "dgs/raster.hpp"
#include "dgs/sh.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dgs {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Gradients accumulated in screen space for one projected splat.
struct ProjGrads {
  Vec2 mean2d = Vec2::Zero();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
  Vec3 color = Vec3::Zero();
  double alpha_peak = 0.0;
};

struct PixelHit {
  int proj = 0;            // projection index
  double alpha = 0.0;
  double transmittance = 0.0;  // before blending this splat
  double dx = 0.0, dy = 0.0;   // pixel center minus mean2d
  bool clamped = false;        // alpha hit the clamp; opacity/shape grads are zero
};

// d R / d q for a unit quaternion (w, x, y, z), contracted with dL/dR.
Vec4 rotation_grad_unit(const Quat& q, const Mat3& d_R) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 dw, dx_, dy_, dz_;
  dw << 0, -z, y,
        z, 0, -x,
        -y, x, 0;
  dx_ << 0, y, z,
         y, -2 * x, -w,
         z, w, -2 * x;
  dy_ << -2 * y, x, w,
         x, 0, z,
         -w, z, -2 * y;
  dz_ << -2 * z, -w, x,
         w, -2 * z, y,
         x, y, 0;
  Vec4 g;
  g[0] = 2.0 * (d_R.cwiseProduct(dw)).sum();
  g[1] = 2.0 * (d_R.cwiseProduct(dx_)).sum();
  g[2] = 2.0 * (d_R.cwiseProduct(dy_)).sum();
  g[3] = 2.0 * (d_R.cwiseProduct(dz_)).sum();
  return g;
}

}  // namespace

FrameGrads zero_grads(const GaussianFrame& frame) {
  FrameGrads grads(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    grads[i].sh.assign(frame.gaussians[i].sh.size(), Vec3::Zero());
  }
  return grads;
}

FrameGrads render_backward(const GaussianFrame& frame, const Camera& cam,
                           const ImageBuffer& d_image, const RenderOptions& options) {
  cam.validate();
  if (!frame.empty()) frame.sh_degree();
  require(d_image.width == cam.width && d_image.height == cam.height,
          ErrorCode::invalid_input, "gradient image size does not match the camera");
  require(d_image.channels == 3 || d_image.channels == 4, ErrorCode::invalid_input,
          "gradient image must have 3 (rgb) or 4 (rgba) channels");

  FrameGrads grads = zero_grads(frame);
  if (frame.empty()) return grads;

  // Recompute the forward projections, keeping the original Gaussian index.
  std::vector<Projected2D> projections;
  std::vector<int> source;
  for (int i = 0; i < static_cast<int>(frame.size()); ++i) {
    if (std::optional<Projected2D> p = project(frame.gaussians[i], cam, options.cov2d_floor)) {
      projections.push_back(*p);
      source.push_back(i);
    }
  }
  std::vector<Mat2> conics(projections.size());
  for (std::size_t i = 0; i < projections.size(); ++i) {
    conics[i] = projections[i].cov2d.inverse();
  }

  std::vector<ProjGrads> proj_grads(projections.size());
  const bool has_alpha_grad = d_image.channels == 4;
  const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;

  std::vector<PixelHit> hits;
  for (const TileBin& bin : bin_tiles(projections, cam)) {
    const int tx = bin.tile_id % tiles_x;
    const int ty = bin.tile_id / tiles_x;
    const int x_end = std::min((tx + 1) * kTileSize, cam.width);
    const int y_end = std::min((ty + 1) * kTileSize, cam.height);
    for (int y = ty * kTileSize; y < y_end; ++y) {
      for (int x = tx * kTileSize; x < x_end; ++x) {
        const double px = x + 0.5, py = y + 0.5;

        // Forward re-walk: collect each blended splat's state.
        hits.clear();
        double transmittance = 1.0;
        for (const auto& [key, idx] : bin.entries) {
          const Projected2D& p = projections[idx];
          const double dx = px - p.mean2d.x();
          const double dy = py - p.mean2d.y();
          if (dx * dx + dy * dy > p.radius * p.radius) continue;
          const Mat2& m = conics[idx];
          const double power =
              -0.5 * (m(0, 0) * dx * dx + 2.0 * m(0, 1) * dx * dy + m(1, 1) * dy * dy);
          const double raw = p.alpha_peak * std::exp(power);
          const double alpha = std::min(options.alpha_clamp, raw);
          if (alpha == 0.0) continue;
          hits.push_back({idx, alpha, transmittance, dx, dy, raw > options.alpha_clamp});
          transmittance *= 1.0 - alpha;
          if (options.early_stop && transmittance < options.stop_transmittance) break;
        }

        const Vec3 d_rgb(d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2));
        const double d_out_alpha = has_alpha_grad ? d_image.at(x, y, 3) : 0.0;
        if (d_rgb.isZero() && d_out_alpha == 0.0) continue;

        // rgb = sum_i c_i a_i T_i + T_end * bg, out_alpha = 1 - T_end.
        const double d_T_end = d_rgb.dot(options.background) - d_out_alpha;

        // Reverse walk with suffix accumulation. For splat i,
        // d rgb / d a_i = c_i T_i - (suffix_i + T_end * bg) / (1 - a_i),
        // where suffix_i = sum_{j > i} c_j a_j T_j.
        Vec3 suffix = Vec3::Zero();
        const double t_end = transmittance;
        for (int h = static_cast<int>(hits.size()) - 1; h >= 0; --h) {
          const PixelHit& hit = hits[h];
          const Projected2D& p = projections[hit.proj];
          ProjGrads& pg = proj_grads[hit.proj];

          pg.color += hit.alpha * hit.transmittance * d_rgb;

          const double inv_one_minus = 1.0 / (1.0 - hit.alpha);
          double d_alpha = d_rgb.dot(p.color) * hit.transmittance -
                           d_rgb.dot(suffix) * inv_one_minus -
                           d_T_end * t_end * inv_one_minus;
          suffix += hit.alpha * hit.transmittance * p.color;

          if (hit.clamped) continue;  // clamp gates the opacity and shape paths

          const double gaussian = hit.alpha / p.alpha_peak;  // exp(power)
          pg.alpha_peak += d_alpha * gaussian;

          const double d_power = d_alpha * p.alpha_peak * gaussian;
          const Mat2& m = conics[hit.proj];
          const double md_x = m(0, 0) * hit.dx + m(0, 1) * hit.dy;
          const double md_y = m(0, 1) * hit.dx + m(1, 1) * hit.dy;
          // power = -1/2 d^T conic d with d = pixel - mean2d.
          pg.mean2d.x() += d_power * md_x;
          pg.mean2d.y() += d_power * md_y;
          pg.conic_a += d_power * -0.5 * hit.dx * hit.dx;
          pg.conic_b += d_power * -hit.dx * hit.dy;
          pg.conic_c += d_power * -0.5 * hit.dy * hit.dy;
        }
      }
    }
  }

  // Chain screen-space gradients back to the Gaussian parameters.
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const Projected2D& p = projections[i];
    const ProjGrads& pg = proj_grads[i];
    const Gaussian& g = frame.gaussians[source[i]];
    GaussianGrads& out = grads[source[i]];

    // Opacity: alpha_peak = sigmoid(opacity_logit).
    out.opacity_logit += pg.alpha_peak * p.alpha_peak * (1.0 - p.alpha_peak);

    // Color: through the spherical harmonics and the view direction.
    const Vec3 to_mean = g.position - cam.origin();
    const double dist = to_mean.norm();
    const Vec3 view_dir = to_mean / dist;
    Vec3 d_dir = Vec3::Zero();
    eval_sh_backward(g.sh, view_dir, pg.color, out.sh, d_dir);
    out.position += (Mat3::Identity() - view_dir * view_dir.transpose()) * d_dir / dist;

    // Conic -> cov2d: for C = conic = cov2d^-1, dL/dcov2d = -C G C with G the
    // symmetrized as-matrix gradient of the conic scalars (a, b, c).
    Mat2 d_conic;
    d_conic << pg.conic_a, 0.5 * pg.conic_b, 0.5 * pg.conic_b, pg.conic_c;
    const Mat2& conic = conics[i];
    const Mat2 d_cov2d = -(conic * d_conic * conic);

    // cov2d = M Sigma M^T + floor * I with M = J W.
    const Vec3 t = cam.to_camera(g.position);
    const double inv_z = 1.0 / t.z();
    const double inv_z2 = inv_z * inv_z;
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx * inv_z, 0.0, -cam.fx * t.x() * inv_z2,
         0.0, cam.fy * inv_z, -cam.fy * t.y() * inv_z2;
    const Eigen::Matrix<double, 2, 3> M = J * cam.rotation;
    const Mat3 sigma = covariance(g);

    const Mat3 d_sigma = M.transpose() * d_cov2d * M;
    const Eigen::Matrix<double, 2, 3> d_M = 2.0 * d_cov2d * M * sigma;
    const Eigen::Matrix<double, 2, 3> d_J = d_M * cam.rotation.transpose();

    // View-space position gradient from J's depth dependence...
    Vec3 d_t = Vec3::Zero();
    d_t.x() += d_J(0, 2) * (-cam.fx * inv_z2);
    d_t.y() += d_J(1, 2) * (-cam.fy * inv_z2);
    d_t.z() += d_J(0, 0) * (-cam.fx * inv_z2) + d_J(1, 1) * (-cam.fy * inv_z2) +
               d_J(0, 2) * (2.0 * cam.fx * t.x() * inv_z2 * inv_z) +
               d_J(1, 2) * (2.0 * cam.fy * t.y() * inv_z2 * inv_z);
    // ...and from the pinhole mean: mean2d = (fx tx / tz + cx, fy ty / tz + cy).
    d_t.x() += pg.mean2d.x() * cam.fx * inv_z;
    d_t.y() += pg.mean2d.y() * cam.fy * inv_z;
    d_t.z() += -pg.mean2d.x() * cam.fx * t.x() * inv_z2 - pg.mean2d.y() * cam.fy * t.y() * inv_z2;
    out.position += cam.rotation.transpose() * d_t;

    // Sigma = A A^T with A = R S; d_sigma is symmetric already.
    const Quat q_unit = g.rotation.normalized();
    const Mat3 R = q_unit.toRotationMatrix();
    const Vec3 scale = g.log_scale.array().exp();
    const Mat3 A = R * scale.asDiagonal();
    const Mat3 d_A = 2.0 * d_sigma * A;

    const Mat3 Rt_dA = R.transpose() * d_A;
    for (int k = 0; k < 3; ++k) out.log_scale[k] += Rt_dA(k, k) * scale[k];

    const Mat3 d_R = d_A * scale.asDiagonal();
    const Vec4 d_q_unit = rotation_grad_unit(q_unit, d_R);
    // Through the normalization q_unit = q / |q|.
    const Vec4 q_raw(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
    const double norm = q_raw.norm();
    const Vec4 q_hat = q_raw / norm;
    out.rotation += (d_q_unit - q_hat.dot(d_q_unit) * q_hat) / norm;
  }
  return grads;
}

}  // namespace dgs
