// fit.cpp
#include "dgs/fit.hpp"

#include "dgs/error.hpp"

#include <cmath>
#include <string>

namespace dgs {

namespace {

constexpr int kParamsPerGaussianBase = 11;  // position, log_scale, rotation, opacity

int params_per_gaussian(const Gaussian& g) {
  return kParamsPerGaussianBase + 3 * static_cast<int>(g.sh.size());
}

// MSE over every value of two same-shaped images, with gradient.
double mse_with_grad(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer& d_a,
                     double weight) {
  const double inv_n = 1.0 / static_cast<double>(a.data.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double diff = a.data[i] - b.data[i];
    sum += diff * diff;
    d_a.data[i] += weight * 2.0 * diff * inv_n;
  }
  return sum * inv_n;
}

}  // namespace

void DivergenceWatch::record(double loss_value, int step_index) {
  if (warm_intervals_ < kWarmupIntervals) {
    warm_sum_ += loss_value;
    if (++since_eval_ < kEvalInterval) return;
    since_eval_ = 0;
    if (++warm_intervals_ < kWarmupIntervals) return;
    baseline_ = warm_sum_ / static_cast<double>(kWarmupIntervals * kEvalInterval);
    ema_ = baseline_;
    previous_eval_ = baseline_;
    return;
  }
  ema_ = (1.0 - kSmoothing) * ema_ + kSmoothing * loss_value;
  if (++since_eval_ < kEvalInterval) return;
  since_eval_ = 0;
  rises_ = ema_ > previous_eval_ ? rises_ + 1 : 0;
  previous_eval_ = ema_;
  require(rises_ < 3 || ema_ <= kMaterialFactor * baseline_, ErrorCode::divergence,
          "optimization diverged: loss rose for 3 consecutive evaluations to a multiple of its "
          "starting level near step " +
              std::to_string(step_index));
}

void FitConfig::validate() const {
  require(lr > 0.0, ErrorCode::config, "learning rate must be positive");
  require(augment_prob >= 0.0 && augment_prob <= 1.0, ErrorCode::config,
          "augment_prob must lie in [0, 1]");
  require(perceptual_res <= full_res, ErrorCode::config,
          "perceptual resolution cannot exceed the full resolution");
  require(steps >= 0, ErrorCode::config, "step count must be non-negative");
  require(batch_views >= 1, ErrorCode::config, "batch_views must be at least 1");
  require(grad_clip_norm > 0.0, ErrorCode::config, "gradient clip norm must be positive");
}

LossGrad loss(const ImageBuffer& rendered, const ImageBuffer& target, const FitConfig& cfg) {
  require(rendered.same_shape(target), ErrorCode::invalid_input,
          "rendered and target image shapes differ");

  LossGrad out;
  out.d_rendered = ImageBuffer::zeros(rendered.width, rendered.height, rendered.channels);
  out.value = mse_with_grad(rendered, target, out.d_rendered, 1.0);
  if (cfg.perceptual_weight == 0.0) return out;

  // Bring both images to perceptual_res, then compare gradient magnitudes on a
  // 3-level half-resolution pyramid.
  const int base_factor = std::max(1, rendered.width / cfg.perceptual_res);
  require(rendered.width % cfg.perceptual_res == 0 || rendered.width < cfg.perceptual_res,
          ErrorCode::invalid_input, "image width is not divisible down to perceptual_res");

  std::vector<ImageBuffer> pyr_r, pyr_t;
  pyr_r.push_back(base_factor > 1 ? box_downsample(rendered, base_factor) : rendered);
  pyr_t.push_back(base_factor > 1 ? box_downsample(target, base_factor) : target);
  for (int level = 1; level < 3; ++level) {
    const ImageBuffer& prev = pyr_r.back();
    if (prev.width % 2 != 0 || prev.height % 2 != 0 || prev.width < 4 || prev.height < 4) break;
    pyr_r.push_back(box_downsample(pyr_r.back(), 2));
    pyr_t.push_back(box_downsample(pyr_t.back(), 2));
  }

  const double level_weight = cfg.perceptual_weight / static_cast<double>(pyr_r.size());
  std::vector<ImageBuffer> d_levels(pyr_r.size());
  for (std::size_t l = 0; l < pyr_r.size(); ++l) {
    const ImageBuffer mag_r = gradient_magnitude(pyr_r[l]);
    const ImageBuffer mag_t = gradient_magnitude(pyr_t[l]);
    ImageBuffer d_mag = ImageBuffer::zeros(mag_r.width, mag_r.height, mag_r.channels);
    out.value += level_weight * mse_with_grad(mag_r, mag_t, d_mag, 1.0);
    d_levels[l] = gradient_magnitude_backward(pyr_r[l], d_mag);
    for (double& v : d_levels[l].data) v *= level_weight;
  }

  // Walk the pyramid adjoints back up to the rendered image.
  ImageBuffer d_base = std::move(d_levels.back());
  for (int l = static_cast<int>(pyr_r.size()) - 2; l >= 0; --l) {
    ImageBuffer up = box_downsample_adjoint(d_base, 2, pyr_r[l].width, pyr_r[l].height);
    for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += d_levels[l].data[i];
    d_base = std::move(up);
  }
  if (base_factor > 1) {
    d_base = box_downsample_adjoint(d_base, base_factor, rendered.width, rendered.height);
  }
  for (std::size_t i = 0; i < d_base.data.size(); ++i) out.d_rendered.data[i] += d_base.data[i];
  return out;
}

std::size_t frame_param_count(const GaussianFrame& frame) {
  std::size_t count = 0;
  for (const Gaussian& g : frame.gaussians) count += params_per_gaussian(g);
  return count;
}

std::vector<double> flatten_params(const GaussianFrame& frame) {
  std::vector<double> flat;
  flat.reserve(frame_param_count(frame));
  for (const Gaussian& g : frame.gaussians) {
    flat.insert(flat.end(), {g.position.x(), g.position.y(), g.position.z(), g.log_scale.x(),
                             g.log_scale.y(), g.log_scale.z(), g.rotation.w(), g.rotation.x(),
                             g.rotation.y(), g.rotation.z(), g.opacity_logit});
    for (const Vec3& coeff : g.sh) flat.insert(flat.end(), {coeff.x(), coeff.y(), coeff.z()});
  }
  return flat;
}

void unflatten_params(const std::vector<double>& flat, GaussianFrame& frame) {
  require(flat.size() == frame_param_count(frame), ErrorCode::invalid_input,
          "flat parameter size does not match the frame");
  std::size_t i = 0;
  for (Gaussian& g : frame.gaussians) {
    g.position = Vec3(flat[i], flat[i + 1], flat[i + 2]);
    g.log_scale = Vec3(flat[i + 3], flat[i + 4], flat[i + 5]);
    g.rotation.w() = flat[i + 6];
    g.rotation.x() = flat[i + 7];
    g.rotation.y() = flat[i + 8];
    g.rotation.z() = flat[i + 9];
    g.opacity_logit = flat[i + 10];
    i += kParamsPerGaussianBase;
    for (Vec3& coeff : g.sh) {
      coeff = Vec3(flat[i], flat[i + 1], flat[i + 2]);
      i += 3;
    }
  }
}

std::vector<double> flatten_grads(const FrameGrads& grads) {
  std::vector<double> flat;
  for (const GaussianGrads& g : grads) {
    flat.insert(flat.end(), {g.position.x(), g.position.y(), g.position.z(), g.log_scale.x(),
                             g.log_scale.y(), g.log_scale.z(), g.rotation[0], g.rotation[1],
                             g.rotation[2], g.rotation[3], g.opacity_logit});
    for (const Vec3& coeff : g.sh) flat.insert(flat.end(), {coeff.x(), coeff.y(), coeff.z()});
  }
  return flat;
}

std::vector<std::uint8_t> decay_mask(const GaussianFrame& frame) {
  std::vector<std::uint8_t> mask;
  mask.reserve(frame_param_count(frame));
  for (const Gaussian& g : frame.gaussians) {
    const std::uint8_t base[kParamsPerGaussianBase] = {0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1};
    mask.insert(mask.end(), base, base + kParamsPerGaussianBase);
    mask.insert(mask.end(), 3 * g.sh.size(), 1);
  }
  return mask;
}

void step(GaussianFrame& frame, const FrameGrads& grads, FitState& state, const FitConfig& cfg,
          int step_index) {
  require(grads.size() == frame.size(), ErrorCode::invalid_input,
          "gradient count does not match the frame");
  std::vector<double> flat_grads = flatten_grads(grads);
  for (double g : flat_grads) {
    require(std::isfinite(g), ErrorCode::divergence,
            "optimization diverged: non-finite gradient at step " + std::to_string(step_index));
  }

  clip_global_norm(flat_grads, cfg.grad_clip_norm);
  const double lr_t = cosine_lr(cfg.lr, step_index, cfg.steps);

  std::vector<double> params = flatten_params(frame);
  const std::vector<double> before = params;
  const std::vector<std::uint8_t> mask = decay_mask(frame);
  state.optimizer.update(params, flat_grads, lr_t, cfg.weight_decay, &mask);
  unflatten_params(params, frame);

  // Renormalize only quaternions the update actually moved, so an idle step
  // leaves them bit-identical.
  std::size_t offset = 0;
  for (Gaussian& g : frame.gaussians) {
    const bool changed = params[offset + 6] != before[offset + 6] ||
                         params[offset + 7] != before[offset + 7] ||
                         params[offset + 8] != before[offset + 8] ||
                         params[offset + 9] != before[offset + 9];
    if (changed) g.rotation.normalize();
    offset += params_per_gaussian(g);
  }
}

namespace {

// One optimization step: sample a view batch, augment, render, accumulate
// gradients, and update. Split out so fit_frame can classify mid-run errors.
void fit_step(FitResult& result, FitState& state, Rng& rng, DivergenceWatch& watch,
              const std::vector<ImageBuffer>& targets, const std::vector<Camera>& cams,
              const FitConfig& cfg, const RenderOptions& render_options, const Vec3& centroid,
              double scene_radius, int s) {
  FrameGrads total = zero_grads(result.frame);
  double batch_loss = 0.0;
  for (int b = 0; b < cfg.batch_views; ++b) {
    const int v = cams.size() == 1 ? 0 : rng.uniform_int(static_cast<int>(cams.size()));
    Camera cam = cams[v];
    ImageBuffer target = targets[v];

    if (cfg.augment_prob > 0.0 && rng.uniform() < cfg.augment_prob) {
      const CameraJitter jitter =
          random_camera_jitter(rng, 2.0 * M_PI / 180.0, 0.01 * scene_radius);
      const double center_depth = std::max(cam.to_camera(centroid).z(), cam.near * 2.0);
      target = compensate_target(target, cam, jitter, center_depth);
      cam = jittered_camera(cam, jitter);
    }

    ImageBuffer rendered = render(result.frame, cam, render_options);
    if (target.channels == 3) {
      ImageBuffer rgb = ImageBuffer::zeros(rendered.width, rendered.height, 3);
      for (int y = 0; y < rendered.height; ++y)
        for (int x = 0; x < rendered.width; ++x)
          for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = rendered.at(x, y, c);
      rendered = std::move(rgb);
    }

    bool distorted = false;
    GridWarp warp;
    if (cfg.augment_prob > 0.0 && rng.uniform() < cfg.augment_prob) {
      distorted = true;
      warp = random_grid_warp(rng, cam.width, cam.height);
      rendered = apply_grid_warp(rendered, warp);
      target = apply_grid_warp(target, warp);
    }

    LossGrad lg = loss(rendered, target, cfg);
    batch_loss += lg.value;
    const ImageBuffer d_rendered =
        distorted ? grid_warp_adjoint(lg.d_rendered, warp) : std::move(lg.d_rendered);

    const FrameGrads view_grads = render_backward(result.frame, cam, d_rendered, render_options);
    for (std::size_t i = 0; i < total.size(); ++i) {
      total[i].position += view_grads[i].position;
      total[i].log_scale += view_grads[i].log_scale;
      total[i].rotation += view_grads[i].rotation;
      total[i].opacity_logit += view_grads[i].opacity_logit;
      for (std::size_t k = 0; k < total[i].sh.size(); ++k) total[i].sh[k] += view_grads[i].sh[k];
    }
  }
  batch_loss /= cfg.batch_views;
  result.loss.push_back(batch_loss);
  result.loss_smoothed.push_back(result.loss_smoothed.empty()
                                     ? batch_loss
                                     : std::min(result.loss_smoothed.back(), batch_loss));

  step(result.frame, total, state, cfg, s);
  watch.record(batch_loss, s);
}

}  // namespace

FitResult fit_frame(const GaussianFrame& init, const std::vector<ImageBuffer>& targets,
                    const std::vector<Camera>& cams, const FitConfig& cfg,
                    const RenderOptions& render_options) {
  cfg.validate();
  require(!cams.empty() && targets.size() == cams.size(), ErrorCode::invalid_input,
          "fitting needs matching non-empty target and camera lists");
  for (std::size_t v = 0; v < cams.size(); ++v) {
    cams[v].validate();
    require(targets[v].width == cams[v].width && targets[v].height == cams[v].height,
            ErrorCode::invalid_input, "target image size does not match its camera");
    require(targets[v].channels == 3 || targets[v].channels == 4, ErrorCode::invalid_input,
            "targets must be rgb or rgba");
  }

  FitResult result;
  result.frame = init;
  FitState state(result.frame, cfg);
  Rng rng(cfg.seed);
  DivergenceWatch watch;

  // Scene geometry for jitter compensation.
  Vec3 centroid = Vec3::Zero();
  for (const Gaussian& g : init.gaussians) centroid += g.position;
  if (!init.empty()) centroid /= static_cast<double>(init.size());
  double scene_radius = 1e-3;
  for (const Gaussian& g : init.gaussians)
    scene_radius = std::max(scene_radius, (g.position - centroid).norm());

  for (int s = 0; s < cfg.steps; ++s) {
    // Inputs were validated up front; a mid-run invalid-input failure can only
    // mean the parameters degenerated, which is a divergence.
    try {
      fit_step(result, state, rng, watch, targets, cams, cfg, render_options, centroid,
               scene_radius, s);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::invalid_input) {
        throw Error(ErrorCode::divergence,
                    std::string("optimization diverged: parameters degenerated at step ") +
                        std::to_string(s) + " (" + e.what() + ")");
      }
      throw;
    }
  }
  return result;
}

}  // namespace dgs
