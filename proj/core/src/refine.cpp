// refine.cpp
#include "dgs/refine.hpp"

#include "dgs/error.hpp"
#include "dgs/fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace dgs {

void RefineConfig::validate() const {
  require(loop_iterations >= 1, ErrorCode::config, "loop_iterations must be at least 1");
  require(refit_steps_per_loop >= 1, ErrorCode::config,
          "refit_steps_per_loop must be at least 1");
  require(!views.empty(), ErrorCode::config, "refinement needs at least one view");
  for (std::size_t i = 0; i < views.size(); ++i)
    for (std::size_t j = i + 1; j < views.size(); ++j)
      require(views[i] != views[j], ErrorCode::config,
              std::string("duplicate view in refinement config: ") + to_string(views[i]));
}

namespace {

// Harmonic fill of the pixels listed in `domain` (flat y*w+x indices), holding
// every other pixel fixed. Jacobi sweeps from a boundary-mean seed until the
// largest update is below tolerance or the sweep budget runs out.
void spatial_fill(ImageBuffer& img, const std::vector<int>& domain) {
  const int w = img.width;
  const int h = img.height;
  const int C = img.channels;
  std::vector<std::uint8_t> in_domain(static_cast<std::size_t>(w) * h, 0);
  for (int i : domain) in_domain[i] = 1;

  std::vector<double> seed(C, 0.0);
  const double known = static_cast<double>(w) * h - static_cast<double>(domain.size());
  for (int i = 0; i < w * h; ++i) {
    if (in_domain[i]) continue;
    for (int c = 0; c < C; ++c) seed[c] += img.data[static_cast<std::size_t>(i) * C + c];
  }
  for (int c = 0; c < C; ++c) seed[c] /= known;
  for (int i : domain)
    for (int c = 0; c < C; ++c) img.data[static_cast<std::size_t>(i) * C + c] = seed[c];

  ImageBuffer next = img;
  for (int sweep = 0; sweep < kSpatialFillMaxIterations; ++sweep) {
    double residual = 0.0;
    for (int i : domain) {
      const int x = i % w;
      const int y = i / w;
      for (int c = 0; c < C; ++c) {
        double sum = 0.0;
        int count = 0;
        if (x > 0) sum += img.at(x - 1, y, c), ++count;
        if (x + 1 < w) sum += img.at(x + 1, y, c), ++count;
        if (y > 0) sum += img.at(x, y - 1, c), ++count;
        if (y + 1 < h) sum += img.at(x, y + 1, c), ++count;
        const double value = sum / count;
        residual = std::max(residual, std::abs(value - img.at(x, y, c)));
        next.at(x, y, c) = value;
      }
    }
    std::swap(img.data, next.data);
    if (residual < kSpatialFillTolerance) break;
  }
}

}  // namespace

std::vector<ImageBuffer> reference_inpaint(const std::vector<ImageBuffer>& frames,
                                           const std::vector<ReliabilityMask>& masks,
                                           const ImageBuffer& first, const ImageBuffer& last) {
  require(!frames.empty(), ErrorCode::invalid_input, "inpainting needs at least one frame");
  const ImageBuffer& shape = frames.front();
  require(shape.width > 0 && shape.height > 0 && shape.channels > 0, ErrorCode::invalid_input,
          "inpainting frames must be non-empty images");
  for (const ImageBuffer& f : frames)
    require(f.same_shape(shape), ErrorCode::invalid_input, "inpainting frame shapes differ");
  require(first.same_shape(shape) && last.same_shape(shape), ErrorCode::invalid_input,
          "conditioning images must match the frame shape");
  require(masks.size() == frames.size(), ErrorCode::invalid_input,
          "one reliability mask per frame is required");
  for (const ReliabilityMask& m : masks) {
    require(m.mask.width == shape.width && m.mask.height == shape.height &&
                m.mask.channels == 1,
            ErrorCode::invalid_input, "reliability mask shape does not match the frames");
    for (double v : m.mask.data)
      require(v == 0.0 || v == 1.0, ErrorCode::invalid_input,
              "reliability masks must be binary");
  }

  const int T = static_cast<int>(frames.size());
  std::vector<ImageBuffer> out = frames;
  out.front() = first;
  out.back() = last;
  if (T <= 2) return out;

  const int w = shape.width;
  const int h = shape.height;
  const int C = shape.channels;

  // Pixels reliable in no frame at all take the spatial path; everything else
  // can be bridged in time.
  std::vector<std::uint8_t> ever(static_cast<std::size_t>(w) * h, 0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < w * h; ++i)
      if (masks[t].mask.data[i] == 1.0) ever[i] = 1;

  // Temporal pass: walk each pixel's reliable timestamps (the conditioning end
  // frames always qualify) and lerp across every gap between neighbors.
  std::vector<int> anchors;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!ever[static_cast<std::size_t>(y) * w + x]) continue;
      anchors.clear();
      anchors.push_back(0);
      for (int t = 1; t + 1 < T; ++t)
        if (masks[t].mask.at(x, y, 0) == 1.0) anchors.push_back(t);
      anchors.push_back(T - 1);
      for (std::size_t a = 0; a + 1 < anchors.size(); ++a) {
        const int t0 = anchors[a];
        const int t1 = anchors[a + 1];
        for (int t = t0 + 1; t < t1; ++t) {
          const double f = static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
          for (int c = 0; c < C; ++c)
            out[t].at(x, y, c) = (1.0 - f) * out[t0].at(x, y, c) + f * out[t1].at(x, y, c);
        }
      }
    }
  }

  // Spatial pass on the interior frames.
  std::vector<int> domain;
  for (int i = 0; i < w * h; ++i)
    if (!ever[i]) domain.push_back(i);
  if (domain.empty()) return out;
  require(static_cast<int>(domain.size()) < w * h, ErrorCode::uninpaintable,
          "no pixel is reliable in any frame: nothing to inpaint from");
  for (int t = 1; t + 1 < T; ++t) spatial_fill(out[t], domain);
  return out;
}

std::vector<ImageBuffer> ReferenceInpaintRefiner::refine(const std::vector<ImageBuffer>& frames,
                                                         const std::vector<ReliabilityMask>& masks,
                                                         const ImageBuffer& first,
                                                         const ImageBuffer& last) const {
  return reference_inpaint(frames, masks, first, last);
}

namespace {

ImageBuffer rgb_slice(const ImageBuffer& rgba) {
  if (rgba.channels == 3) return rgba;
  ImageBuffer rgb = ImageBuffer::zeros(rgba.width, rgba.height, 3);
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x)
      for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = rgba.at(x, y, c);
  return rgb;
}

struct Measurement {
  std::vector<ViewSequence> renders;
  std::vector<std::vector<ReliabilityMask>> masks;
  double mean_sigma = 0.0;
  double disagreement = 0.0;
};

// Render every working view, estimate uncertainty against the working
// reference, and summarize: mean sigma plus the cross-view disagreement D
// (mean over frames and adjacent view pairs of the MSE between the two
// renders over pixels flagged unreliable in either view).
Measurement measure(const GaussianSequence& seq, const std::vector<Camera>& cams,
                    const std::vector<ViewSequence>& working,
                    const std::vector<std::pair<int, int>>& ring_pairs,
                    const RenderOptions& options) {
  Measurement m;
  m.renders.reserve(working.size());
  for (std::size_t v = 0; v < working.size(); ++v) {
    ViewSequence rendered;
    rendered.tag = working[v].tag;
    rendered.frames.reserve(seq.frames.size());
    for (const GaussianFrame& frame : seq.frames)
      rendered.frames.push_back(rgb_slice(render(frame, cams[v], options)));
    m.renders.push_back(std::move(rendered));
  }

  const ResidualStatEstimator estimator;
  const auto sigma = estimate_uncertainty(m.renders, working, estimator);
  double sum = 0.0;
  std::size_t count = 0;
  m.masks.resize(sigma.size());
  for (std::size_t v = 0; v < sigma.size(); ++v) {
    m.masks[v].reserve(sigma[v].size());
    for (const UncertaintyMap& u : sigma[v]) {
      sum = std::accumulate(u.sigma.data.begin(), u.sigma.data.end(), sum);
      count += u.sigma.data.size();
      m.masks[v].push_back(binarize(u));
    }
  }
  m.mean_sigma = count > 0 ? sum / static_cast<double>(count) : 0.0;

  if (ring_pairs.empty()) return m;
  const int T = seq.frame_count();
  double total = 0.0;
  for (const auto& [a, b] : ring_pairs) {
    for (int t = 0; t < T; ++t) {
      const ImageBuffer& ia = m.renders[a].frames[t];
      const ImageBuffer& ib = m.renders[b].frames[t];
      const ImageBuffer& ma = m.masks[a][t].mask;
      const ImageBuffer& mb = m.masks[b][t].mask;
      double se = 0.0;
      std::size_t values = 0;
      for (int y = 0; y < ia.height; ++y) {
        for (int x = 0; x < ia.width; ++x) {
          if (ma.at(x, y, 0) == 1.0 && mb.at(x, y, 0) == 1.0) continue;
          for (int c = 0; c < ia.channels; ++c) {
            const double d = ia.at(x, y, c) - ib.at(x, y, c);
            se += d * d;
          }
          values += ia.channels;
        }
      }
      total += values > 0 ? se / static_cast<double>(values) : 0.0;
    }
  }
  m.disagreement = total / (static_cast<double>(ring_pairs.size()) * T);
  return m;
}

}  // namespace

RefineResult refine_loop(const GaussianSequence& init, const std::vector<Camera>& cameras,
                         const std::vector<ViewSequence>& reference, const VideoRefiner& refiner,
                         const RefineConfig& cfg, const RenderOptions& options) {
  cfg.validate();
  init.validate();
  require(cameras.size() == reference.size(), ErrorCode::invalid_input,
          "cameras and reference views must be index-aligned");
  const int T = init.frame_count();

  RefineResult result;
  result.sequence = init;
  std::vector<Camera> cams;
  for (ViewTag tag : cfg.views) {
    int found = -1;
    for (std::size_t i = 0; i < reference.size(); ++i) {
      if (reference[i].tag != tag) continue;
      require(found < 0, ErrorCode::invalid_input,
              std::string("duplicate reference view: ") + to_string(tag));
      found = static_cast<int>(i);
    }
    require(found >= 0, ErrorCode::invalid_input,
            std::string("missing reference view: ") + to_string(tag));
    const ViewSequence& view = reference[found];
    const Camera& cam = cameras[found];
    cam.validate();
    require(view.frame_count() == T, ErrorCode::invalid_input,
            std::string("reference view ") + to_string(tag) + " does not cover every frame");
    for (const ImageBuffer& f : view.frames)
      require(f.width == cam.width && f.height == cam.height && f.channels == 3,
              ErrorCode::invalid_input,
              std::string("reference view ") + to_string(tag) +
                  " must be rgb at the camera resolution");
    result.reference.push_back(view);
    cams.push_back(cam);
  }

  // Adjacent pairs on the orbit ring, ordered by view angle.
  std::vector<int> order(cams.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return static_cast<int>(result.reference[a].tag) < static_cast<int>(result.reference[b].tag);
  });
  std::vector<std::pair<int, int>> ring_pairs;
  if (order.size() == 2) {
    ring_pairs.emplace_back(order[0], order[1]);
  } else if (order.size() > 2) {
    for (std::size_t k = 0; k < order.size(); ++k)
      ring_pairs.emplace_back(order[k], order[(k + 1) % order.size()]);
  }

  // The input reference's end frames stay the trusted conditioning anchors
  // for every pass, even after the working views roll over to repairs.
  std::vector<ImageBuffer> conditioning_first, conditioning_last;
  for (const ViewSequence& view : result.reference) {
    conditioning_first.push_back(view.frames.front());
    conditioning_last.push_back(view.frames.back());
  }

  Measurement m = measure(result.sequence, cams, result.reference, ring_pairs, options);
  result.stats.push_back({m.mean_sigma, m.disagreement});

  for (int pass = 0; pass < cfg.loop_iterations; ++pass) {
    // Repair the unreliable regions of each view's current renders; the
    // repaired renders are the refit targets and the working views for all
    // later passes.
    for (std::size_t v = 0; v < result.reference.size(); ++v) {
      result.reference[v].frames = refiner.refine(m.renders[v].frames, m.masks[v],
                                                  conditioning_first[v], conditioning_last[v]);
    }

    FitConfig refit;
    refit.steps = cfg.refit_steps_per_loop;
    refit.weight_decay = 0.0;
    refit.augment_prob = 0.0;
    refit.batch_views = static_cast<int>(cams.size());
    for (int t = 0; t < T; ++t) {
      std::vector<ImageBuffer> targets;
      targets.reserve(result.reference.size());
      for (const ViewSequence& view : result.reference) targets.push_back(view.frames[t]);
      refit.seed = 1000003ull * static_cast<std::uint64_t>(pass + 1) + static_cast<std::uint64_t>(t);
      result.sequence.frames[t] =
          fit_frame(result.sequence.frames[t], targets, cams, refit, options).frame;
    }

    m = measure(result.sequence, cams, result.reference, ring_pairs, options);
    result.stats.push_back({m.mean_sigma, m.disagreement});
  }
  return result;
}

}  // namespace dgs
