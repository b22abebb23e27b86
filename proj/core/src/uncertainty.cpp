// uncertainty.cpp
#include "dgs/uncertainty.hpp"

#include "dgs/error.hpp"

#include <algorithm>
#include <cmath>

namespace dgs {

UncertaintyMap UncertaintyMap::from_sigma(ImageBuffer raw, ViewTag view_tag, int timestamp) {
  require(raw.channels == 1, ErrorCode::invalid_input, "sigma maps are single-channel");
  for (double& v : raw.data) {
    require(std::isfinite(v), ErrorCode::invalid_input, "sigma values must be finite");
    v = std::max(v, kSigmaMin);
  }
  UncertaintyMap map;
  map.sigma = std::move(raw);
  map.view_tag = view_tag;
  map.timestamp = timestamp;
  return map;
}

void UncertaintyMap::validate() const {
  require(sigma.channels == 1, ErrorCode::invalid_input, "sigma maps are single-channel");
  require(sigma.width > 0 && sigma.height > 0, ErrorCode::invalid_input,
          "sigma maps need positive dimensions");
  for (double v : sigma.data) {
    require(std::isfinite(v) && v >= kSigmaMin, ErrorCode::invalid_input,
            "sigma values must be finite and floored at 1e-4");
  }
}

ResidualStatEstimator::ResidualStatEstimator(int temporal_window, int patch) {
  require(temporal_window >= 1 && temporal_window % 2 == 1, ErrorCode::config,
          "temporal window must be odd and positive");
  require(patch >= 1 && patch % 2 == 1, ErrorCode::config, "patch size must be odd and positive");
  temporal_radius_ = temporal_window / 2;
  patch_radius_ = patch / 2;
}

std::vector<UncertaintyMap> ResidualStatEstimator::estimate_view(
    const ViewSequence& rendered, const ViewSequence& reference) const {
  require(rendered.frame_count() == reference.frame_count(), ErrorCode::invalid_input,
          "rendered and reference sequences must have the same frame count");
  require(rendered.frame_count() > 0, ErrorCode::invalid_input,
          "uncertainty needs at least one frame");
  const int frame_count = rendered.frame_count();
  const int width = rendered.frames[0].width;
  const int height = rendered.frames[0].height;

  // Per-frame squared residual, already averaged over channels.
  std::vector<ImageBuffer> residual(frame_count);
  for (int f = 0; f < frame_count; ++f) {
    const ImageBuffer& a = rendered.frames[f];
    const ImageBuffer& b = reference.frames[f];
    require(a.same_shape(b), ErrorCode::invalid_input,
            "rendered and reference frames must share dimensions");
    require(a.width == width && a.height == height, ErrorCode::invalid_input,
            "all frames of a view must share dimensions");
    residual[f] = ImageBuffer::zeros(width, height, 1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double sum = 0.0;
        for (int c = 0; c < a.channels; ++c) {
          const double d = a.at(x, y, c) - b.at(x, y, c);
          sum += d * d;
        }
        residual[f].at(x, y, 0) = sum / a.channels;
      }
    }
  }

  std::vector<UncertaintyMap> maps;
  maps.reserve(frame_count);
  ImageBuffer temporal = ImageBuffer::zeros(width, height, 1);
  ImageBuffer rows = ImageBuffer::zeros(width, height, 1);
  for (int f = 0; f < frame_count; ++f) {
    // Mean over the clamped temporal window. The member count is the same for
    // every pixel, so averaging time first then space equals the joint mean.
    const int f_lo = std::max(0, f - temporal_radius_);
    const int f_hi = std::min(frame_count - 1, f + temporal_radius_);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double sum = 0.0;
        for (int w = f_lo; w <= f_hi; ++w) sum += residual[w].at(x, y, 0);
        temporal.at(x, y, 0) = sum / (f_hi - f_lo + 1);
      }
    }
    // Separable truncated box mean: direct taps keep the per-pixel summation
    // order independent of absolute position (exact translation covariance).
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const int x_lo = std::max(0, x - patch_radius_);
        const int x_hi = std::min(width - 1, x + patch_radius_);
        double sum = 0.0;
        for (int k = x_lo; k <= x_hi; ++k) sum += temporal.at(k, y, 0);
        rows.at(x, y, 0) = sum / (x_hi - x_lo + 1);
      }
    }
    ImageBuffer sigma = ImageBuffer::zeros(width, height, 1);
    for (int y = 0; y < height; ++y) {
      const int y_lo = std::max(0, y - patch_radius_);
      const int y_hi = std::min(height - 1, y + patch_radius_);
      for (int x = 0; x < width; ++x) {
        double sum = 0.0;
        for (int k = y_lo; k <= y_hi; ++k) sum += rows.at(x, k, 0);
        sigma.at(x, y, 0) = std::sqrt(sum / (y_hi - y_lo + 1));
      }
    }
    maps.push_back(UncertaintyMap::from_sigma(std::move(sigma), rendered.tag, f + 1));
  }
  return maps;
}

std::vector<std::vector<UncertaintyMap>> estimate_uncertainty(
    const std::vector<ViewSequence>& rendered, const std::vector<ViewSequence>& reference,
    const UncertaintyEstimator& estimator) {
  require(rendered.size() == reference.size(), ErrorCode::invalid_input,
          "rendered and reference must cover the same views");
  std::vector<std::vector<UncertaintyMap>> result;
  result.reserve(rendered.size());
  for (size_t v = 0; v < rendered.size(); ++v) {
    require(rendered[v].tag == reference[v].tag, ErrorCode::invalid_input,
            "view tags must match pairwise");
    result.push_back(estimator.estimate_view(rendered[v], reference[v]));
  }
  return result;
}

ReliabilityMask binarize(const UncertaintyMap& u) {
  u.validate();
  ReliabilityMask out;
  out.mask = ImageBuffer::zeros(u.sigma.width, u.sigma.height, 1);
  for (size_t i = 0; i < u.sigma.data.size(); ++i) {
    const double s = u.sigma.data[i];
    out.mask.data[i] = (1.0 / (2.0 * s * s) > 1.0) ? 1.0 : 0.0;
  }
  out.view_tag = u.view_tag;
  out.timestamp = u.timestamp;
  return out;
}

}  // namespace dgs
