// predictor.hpp
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgs/autodiff.hpp"
#include "dgs/fit.hpp"
#include "dgs/rng.hpp"
#include "dgs/scenes.hpp"
#include "dgs/splatter.hpp"
#include "dgs/types.hpp"

namespace dgs {

/**
 * @brief Shape of the view-to-splatter network. The encoder narrows from
 * input_res through `depth` halvings; the decoder climbs back up only as far
 * as output_res, so the network is asymmetric whenever output_res < input_res
 * (the default). Channel widths double per encoder stage from base_channels.
 */
struct PredictorConfig {
  int input_res = 64;
  int output_res = 32;
  int base_channels = 16;
  int depth = 3;
  bool cross_view_attention = true;  // applied at the lowest resolution only
  int out_channels = SplatterMap::kChannels;

  /**
   * @brief Throws Error(config) unless: depth >= 1; input_res is divisible by
   * 2^depth; output_res is input_res / 2^k for some 0 <= k <= depth;
   * base_channels is a positive multiple of the normalization group count;
   * out_channels matches the splatter-map layout.
   */
  void validate() const;
};

/// Number of views the predictor consumes and produces.
inline constexpr int kPredictorViews = 4;
/// Per-view input channels: RGB plus the 6-channel camera-ray embedding.
inline constexpr int kPredictorInputChannels = 9;

/// Copy of `cam` with its image plane rescaled to width x height (intrinsics
/// scaled proportionally, pose unchanged).
Camera resized_camera(const Camera& cam, int width, int height);

/**
 * @brief Per-pixel camera-ray embedding: channels 0-2 hold the normalized
 * world-space direction through the pixel center, channels 3-5 the ray moment
 * (camera origin crossed with that direction). Together they identify the
 * ray independent of any point on it.
 */
ImageBuffer ray_embedding(const Camera& cam);

/**
 * @brief Asymmetric encoder-decoder mapping four orthogonal-view images to
 * per-view splatter maps.
 *
 * Encoder stage i: 3x3 conv (to base_channels << i) -> group norm -> SiLU ->
 * 2x downsample, with the pre-downsample activation kept as a skip. At the
 * bottom, optional per-pixel softmax attention across the four views (1x1
 * query/key/value projections, zero-initialized output projection, residual).
 * Decoder: 2x upsample -> concat skip -> 3x3 conv -> SiLU until output_res,
 * then a 1x1 head to the splatter channels.
 *
 * The head is zero-initialized so the initial output is one constant map:
 * every channel 0 except the log-scale bias (kHeadLogScaleBias) and opacity
 * bias (kHeadOpacityBias) — world-sized half-opaque splats would blanket the
 * screen and give the first training steps no usable gradient, so the head
 * starts with small, translucent ones instead.
 */
class Predictor {
 public:
  /// Initial log-scale channel bias of the zero-initialized head.
  static constexpr double kHeadLogScaleBias = -3.0;
  /// Initial opacity-logit channel bias of the zero-initialized head.
  static constexpr double kHeadOpacityBias = -2.0;

  /// Builds parameters with seeded He-normal weights (zero head).
  explicit Predictor(const PredictorConfig& cfg, std::uint64_t seed = 1);

  const PredictorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /**
   * @brief Record the network onto `tape`: assembles the (4, 9, input_res,
   * input_res) input from views + ray embeddings and returns the output node
   * shaped (4, out_channels, output_res, output_res). Throws invalid_input on
   * a wrong view count, resolution, or channel count.
   */
  NodeId build_forward(Tape& tape, const std::vector<ImageBuffer>& views,
                       const std::vector<Camera>& cams) const;

  /// Convenience inference: build_forward on a throwaway tape, sliced into
  /// per-view SplatterMaps whose cameras are the inputs resized to output_res.
  std::vector<SplatterMap> forward(const std::vector<ImageBuffer>& views,
                                   const std::vector<Camera>& cams) const;

  /// Slice a (4, out_channels, R, R) output tensor into per-view maps.
  std::vector<SplatterMap> slice_output(const Tensor4& output,
                                        const std::vector<Camera>& cams) const;

  /**
   * @brief Write the parameters as `path` (binary blob: 8-byte magic
   * "DGSPARM1", then raw little-endian float64 payload) plus `path`.manifest
   * (text: config, then one line per tensor with name, shape, dtype, byte
   * offset and byte count into the payload).
   */
  void save(const std::string& path) const;
  /// Inverse of save; throws Error(io) on unreadable or mismatched files.
  static Predictor load(const std::string& path);

 private:
  PredictorConfig cfg_;
  ParamStore params_;
  int up_stages_ = 0;
  // Parameter indices into params_, fixed by the constructor.
  std::vector<int> enc_w_, enc_b_, enc_gain_, enc_shift_;
  std::vector<int> dec_w_, dec_b_;
  int attn_q_ = -1, attn_k_ = -1, attn_v_ = -1, attn_out_ = -1;
  int head_w_ = -1, head_b_ = -1;
};

/// One training example: four input views with their cameras, and the
/// supervision renders (>= 4) the decoded field is compared against.
struct TrainSample {
  std::vector<ImageBuffer> views;
  std::vector<Camera> cams;
  std::vector<ImageBuffer> targets;
  std::vector<Camera> target_cams;
};

struct TrainReport {
  std::vector<double> loss;  // per-step mean loss over the supervision views
};

/**
 * @brief Optimize the predictor on a dataset: each step picks one sample,
 * runs the network, decodes the union of its splatter maps, renders from
 * every supervision camera, and backpropagates the photometric loss through
 * rendering, decoding, and the network. Optimization reuses the fitting
 * stack: AdamW (decay on conv weights only), cosine-annealed learning rate,
 * global-norm clipping, and the divergence watch; cfg.steps/lr/weight_decay/
 * grad_clip_norm/beta1/beta2/seed apply, augmentation does not. Zero steps
 * return an empty report with parameters untouched.
 */
TrainReport train(Predictor& predictor, const std::vector<TrainSample>& dataset,
                  const FitConfig& cfg);

/// Uniform input-view elevation in degrees, confined to [-30, 30].
double sample_elevation_deg(Rng& rng);

/**
 * @brief Desk-scale dataset: each sample picks a random time step, renders
 * the four azimuths {0, 90, 180, 270} at a sampled input elevation as views,
 * and keeps the elevation-0 orthogonal renders of the same frame as
 * supervision. The rig's resolution must match the predictor's input_res.
 */
std::vector<TrainSample> orbit_dataset(const SceneSpec& spec, const RigSpec& rig, int samples,
                                       std::uint64_t seed);

}  // namespace dgs
