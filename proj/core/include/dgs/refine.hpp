// refine.hpp
#pragma once

#include "dgs/types.hpp"
#include "dgs/raster.hpp"
#include "dgs/uncertainty.hpp"

#include <string>
#include <vector>

namespace dgs {

/// Controls the iterative refinement loop.
struct RefineConfig {
  int loop_iterations = 2;       // full refine/refit passes; at least 1
  int refit_steps_per_loop = 300;  // optimizer steps per frame per pass
  /// Views that participate; each must appear exactly once in the reference.
  std::vector<ViewTag> views = {ViewTag::input, ViewTag::left, ViewTag::back, ViewTag::right};
  /// Identifier of the refiner implementation, resolved by the caller.
  std::string refiner = "reference";

  void validate() const;
};

/**
 * @brief Repairs the unreliable regions of one view's frame sequence.
 *
 * Contract for every implementation:
 *  - the output has the same frame count and image shape as the input;
 *  - pixels whose reliability mask is 1 are returned bit-exactly;
 *  - the first and last output frames equal the conditioning images `first`
 *    and `last` bit-exactly (callers pass the trusted end frames of the
 *    sequence being repaired).
 */
class VideoRefiner {
 public:
  virtual ~VideoRefiner() = default;

  virtual std::vector<ImageBuffer> refine(const std::vector<ImageBuffer>& frames,
                                          const std::vector<ReliabilityMask>& masks,
                                          const ImageBuffer& first,
                                          const ImageBuffer& last) const = 0;
};

/// Iteration cap and convergence threshold of the spatial harmonic fill.
constexpr int kSpatialFillMaxIterations = 500;
constexpr double kSpatialFillTolerance = 1e-5;

/**
 * @brief Deterministic inpainting baseline.
 *
 * Unreliable pixels that are reliable in at least one frame of the sequence
 * are filled by linear interpolation in time between the nearest reliable
 * anchors; the conditioning end frames always count as anchors, so both
 * directions resolve. Pixels reliable in no frame fall back to an iterative
 * harmonic (Laplace) fill per frame, seeded from the surrounding known
 * pixels, run until the update drops below kSpatialFillTolerance or
 * kSpatialFillMaxIterations sweeps. A frame that needs the spatial fill but
 * has no known pixel at all raises ErrorCode::uninpaintable.
 */
std::vector<ImageBuffer> reference_inpaint(const std::vector<ImageBuffer>& frames,
                                           const std::vector<ReliabilityMask>& masks,
                                           const ImageBuffer& first, const ImageBuffer& last);

/// VideoRefiner wrapper around reference_inpaint.
class ReferenceInpaintRefiner final : public VideoRefiner {
 public:
  std::vector<ImageBuffer> refine(const std::vector<ImageBuffer>& frames,
                                  const std::vector<ReliabilityMask>& masks,
                                  const ImageBuffer& first,
                                  const ImageBuffer& last) const override;
};

/// State of the loop at one measurement point.
struct RefineIterationStats {
  double mean_sigma = 0.0;    // mean uncertainty over all views, frames, pixels
  double disagreement = 0.0;  // cross-view photometric disagreement D
};

struct RefineResult {
  GaussianSequence sequence;
  /// Working views after the loop: the configured views, in configured order,
  /// holding the refined image sequences the final refit targeted.
  std::vector<ViewSequence> reference;
  /// stats[0] describes the input state; stats[i] the state after i
  /// refine/refit passes (loop_iterations + 1 entries).
  std::vector<RefineIterationStats> stats;
};

/**
 * @brief Iterative multi-view refinement.
 *
 * Each pass renders every configured view of the current sequence, estimates
 * per-pixel uncertainty of those renders against the working views,
 * thresholds it into reliability masks, repairs the unreliable regions of the
 * rendered sequences with the supplied refiner — conditioned on the input
 * reference's end frames, which are trusted throughout — and re-optimizes
 * every frame of the sequence against the repaired renders (no weight decay,
 * no augmentation, warm-started from the current parameters). The repaired
 * renders become the working views for subsequent passes, so the loop
 * measures itself against its own latest repair rather than the original
 * reference. The reference enters through the trusted end frames and through
 * the disagreement signal that decides what gets repaired; its interior
 * pixel values are never refit directly, so unreliable reference content
 * cannot be baked back into the field.
 *
 * The disagreement D is the mean, over frames and adjacent view pairs on the
 * orbit ring, of the mean squared difference between the two renders over
 * the pixels flagged unreliable in either view (0 when nothing is flagged).
 *
 * `cameras` is index-aligned with `reference`; reference views must be
 * three-channel and cover every frame of the sequence.
 */
RefineResult refine_loop(const GaussianSequence& init, const std::vector<Camera>& cameras,
                         const std::vector<ViewSequence>& reference, const VideoRefiner& refiner,
                         const RefineConfig& cfg, const RenderOptions& options = {});

}  // namespace dgs
