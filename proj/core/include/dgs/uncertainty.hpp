// uncertainty.hpp
#pragma once

#include "dgs/types.hpp"

#include <vector>

namespace dgs {

/// Floor applied to every sigma at map construction; keeps 1/(2 sigma^2)
/// finite and marks "no evidence of error" pixels.
constexpr double kSigmaMin = 1e-4;

/// One view's image sequence, frames index-aligned with t = 1..T.
struct ViewSequence {
  ViewTag tag = ViewTag::input;
  std::vector<ImageBuffer> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

/**
 * @brief Per-pixel uncertainty of one rendered view at one time step.
 * sigma is single-channel, finite, and floored at kSigmaMin.
 */
struct UncertaintyMap {
  ImageBuffer sigma;
  ViewTag view_tag = ViewTag::input;
  int timestamp = 1;

  /// Floors the raw estimate at kSigmaMin; throws invalid_input on
  /// non-finite values or a channel count other than 1.
  static UncertaintyMap from_sigma(ImageBuffer raw, ViewTag view_tag, int timestamp);

  /// Re-checks the construction invariants (floor, finiteness, 1 channel).
  void validate() const;
};

/**
 * @brief Binary reliability per pixel: 1 = trusted, 0 = needs correction.
 * Carries the provenance of the uncertainty map it was thresholded from.
 */
struct ReliabilityMask {
  ImageBuffer mask;  // single channel, values exactly 0.0 or 1.0
  ViewTag view_tag = ViewTag::input;
  int timestamp = 1;
};

/**
 * @brief Pluggable sigma estimator comparing a rendered view sequence with
 * its reference. Implementations must be pure: no state between calls.
 */
class UncertaintyEstimator {
 public:
  virtual ~UncertaintyEstimator() = default;

  /// One sigma map per frame; rendered and reference are index-aligned.
  virtual std::vector<UncertaintyMap> estimate_view(const ViewSequence& rendered,
                                                    const ViewSequence& reference) const = 0;
};

/**
 * @brief Reference estimator: sigma[p] is the root mean of the squared
 * rendered-vs-reference residual over a temporal window (default 3 frames,
 * centered), a spatial patch (default 5x5), and all channels. Windows
 * truncate at sequence/image borders (mean over the valid members), so the
 * statistic is translation-covariant on interior pixels.
 */
class ResidualStatEstimator final : public UncertaintyEstimator {
 public:
  explicit ResidualStatEstimator(int temporal_window = 3, int patch = 5);

  std::vector<UncertaintyMap> estimate_view(const ViewSequence& rendered,
                                            const ViewSequence& reference) const override;

 private:
  int temporal_radius_;
  int patch_radius_;
};

/**
 * @brief Run the estimator on every view pair. Views are matched by index;
 * tags, frame counts, and frame dimensions must agree pairwise, else
 * invalid_input. Result is indexed [view][t-1].
 */
std::vector<std::vector<UncertaintyMap>> estimate_uncertainty(
    const std::vector<ViewSequence>& rendered, const std::vector<ViewSequence>& reference,
    const UncertaintyEstimator& estimator);

/**
 * @brief Threshold with the exact confidence rule: mask = 1 iff
 * 1/(2 sigma^2) > 1, evaluated literally in double precision so the
 * boundary sigma = 1/sqrt(2) lands on 0 (not reliable).
 */
ReliabilityMask binarize(const UncertaintyMap& u);

}  // namespace dgs
