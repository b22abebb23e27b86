// fit.hpp
#pragma once

#include "dgs/image_ops.hpp"
#include "dgs/optim.hpp"
#include "dgs/raster.hpp"
#include "dgs/rng.hpp"
#include "dgs/types.hpp"

#include <cstdint>
#include <vector>

namespace dgs {

struct FitConfig {
  double lr = 4e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double grad_clip_norm = 1.0;
  int steps = 0;
  int full_res = 512;        // resolution the photometric loss assumes
  int perceptual_res = 256;  // resolution the perceptual term is computed at
  double perceptual_weight = 0.0;
  double augment_prob = 0.5;
  int batch_views = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Scalar loss plus its gradient with respect to the rendered image.
struct LossGrad {
  double value = 0.0;
  ImageBuffer d_rendered;
};

/**
 * @brief MSE over all pixel values plus an optional perceptual term: a 3-level
 * gradient-magnitude pyramid MSE computed at perceptual_res (a weightless
 * stand-in honoring the same interface as a learned perceptual metric). The
 * returned gradient includes the downsample adjoints.
 */
LossGrad loss(const ImageBuffer& rendered, const ImageBuffer& target, const FitConfig& cfg);

/// Flat parameter layout per Gaussian: position(3), log_scale(3), rotation
/// wxyz(4), opacity_logit(1), then sh coefficients (3 per basis function).
std::size_t frame_param_count(const GaussianFrame& frame);
std::vector<double> flatten_params(const GaussianFrame& frame);
void unflatten_params(const std::vector<double>& flat, GaussianFrame& frame);
std::vector<double> flatten_grads(const FrameGrads& grads);
/// 1 where decoupled weight decay applies: log_scale, opacity_logit, sh.
std::vector<std::uint8_t> decay_mask(const GaussianFrame& frame);

/**
 * @brief Divergence detector shared by fitting and refinement. The mean loss
 * over the first 40 steps becomes the baseline; after that warm-up the
 * per-step loss is tracked as an exponential moving average (newest weight
 * 0.05) evaluated every 10 steps, and three consecutive rising evaluations
 * with the last above twice the baseline abort the run. Comparing against
 * the starting level rather than a running minimum is what makes the rule
 * robust: when one view disagrees with the others (the normal case during
 * refinement), the per-step loss is a heavy-tailed mixture over which views
 * the batch happens to draw, so any running minimum of a smoothed statistic
 * is an extreme-value trap that ordinary wobble later "exceeds". A genuine
 * blow-up, by contrast, races past any fixed multiple of its starting level.
 * Fits shorter than the warm-up never arm the rule (non-finite gradients
 * still abort immediately inside step()).
 */
class DivergenceWatch {
 public:
  static constexpr int kEvalInterval = 10;
  static constexpr int kWarmupIntervals = 4;
  static constexpr double kSmoothing = 0.05;
  static constexpr double kMaterialFactor = 2.0;

  /// Throws a divergence error when the rule fires.
  void record(double loss_value, int step_index);

 private:
  double ema_ = 0.0;
  double warm_sum_ = 0.0;
  int warm_intervals_ = 0;
  int since_eval_ = 0;
  double baseline_ = 0.0;
  double previous_eval_ = 0.0;
  int rises_ = 0;
};

/// Optimizer state for one fitting session over one frame.
struct FitState {
  AdamW optimizer;
  FitState(const GaussianFrame& frame, const FitConfig& cfg)
      : optimizer(frame_param_count(frame), cfg.beta1, cfg.beta2) {}
};

/**
 * @brief One optimizer step: global-norm clip, cosine-annealed AdamW with
 * decay restricted to shape/opacity/color, quaternions renormalized only when
 * the update actually changed them (a zero-gradient step with zero decay is
 * bit-identical). Non-finite gradients abort.
 */
void step(GaussianFrame& frame, const FrameGrads& grads, FitState& state, const FitConfig& cfg,
          int step_index);

struct FitResult {
  GaussianFrame frame;
  std::vector<double> loss;           // per-step mean batch loss
  std::vector<double> loss_smoothed;  // running minimum of the raw trace
};

/**
 * @brief Optimize a frame against multi-view targets: each step samples
 * batch_views views, applies camera-jitter and grid-distortion augmentation
 * (each with probability augment_prob, target warped identically so
 * supervision stays aligned), accumulates rasterizer gradients, and steps.
 * Divergence (smoothed loss rising for 3 consecutive evaluations to a
 * multiple of its starting level) aborts.
 */
FitResult fit_frame(const GaussianFrame& init, const std::vector<ImageBuffer>& targets,
                    const std::vector<Camera>& cams, const FitConfig& cfg,
                    const RenderOptions& render_options = {});

}  // namespace dgs
