// scenes.hpp
#pragma once

#include "dgs/raster.hpp"
#include "dgs/types.hpp"
#include "dgs/uncertainty.hpp"

#include <cstdint>
#include <vector>

namespace dgs {

/// Analytic motion families for synthetic ground-truth sequences.
enum class SceneKind { orbiter, pulsing_blob, two_body };

const char* to_string(SceneKind kind);
SceneKind scene_kind_from_string(const std::string& name);

/**
 * @brief Fully deterministic recipe for a synthetic dynamic scene: the same
 * spec always produces the bit-identical Gaussian sequence.
 *
 * Motions (t = 1..T, all periodic with frame T+1 == frame 1):
 *   orbiter      rigid rotation of clustered splats about +y at 2*pi/T per
 *                frame step (orientations co-rotate);
 *   pulsing_blob radial positions scaled by 1 + 0.3*sin(2*pi*(t-1)/T);
 *   two_body     two clusters translating on opposite sides of a circular
 *                orbit around the origin.
 */
struct SceneSpec {
  SceneKind kind = SceneKind::orbiter;
  int gaussian_count = 100;
  int frame_count = 8;  // T
  std::uint64_t seed = 1;
  std::vector<Vec3> palette = {Vec3(0.85, 0.3, 0.25), Vec3(0.25, 0.7, 0.35),
                               Vec3(0.3, 0.4, 0.85), Vec3(0.9, 0.75, 0.2)};
  Vec3 bounds_min = Vec3(-0.7, -0.7, -0.7);
  Vec3 bounds_max = Vec3(0.7, 0.7, 0.7);

  /// Throws Error(config) on non-positive counts or a degenerate box.
  void validate() const;
};

/// Camera rig shared by the four orthogonal views.
struct RigSpec {
  int width = 64;
  int height = 64;
  double fov_y = 0.9;
  double radius = 3.0;
  double near = 0.5;
  double far = 8.0;
};

struct Scene {
  GaussianSequence sequence;
  std::vector<Camera> cameras;  // indexed by ViewTag value: input, left, back, right
};

/**
 * @brief Four look-at-origin cameras at azimuths {0, 90, 180, 270} degrees,
 * elevation 0, in ViewTag order.
 */
std::vector<Camera> orthogonal_rig(const RigSpec& rig);

/// The scene state at an arbitrary time step (t may exceed frame_count).
GaussianFrame frame_at(const SceneSpec& spec, int t);

/// Frames 1..T plus the orthogonal rig.
Scene generate(const SceneSpec& spec, const RigSpec& rig = {});

/**
 * @brief Ground-truth renders of every rig camera over the whole sequence,
 * ordered like `cameras` and tagged accordingly. channels = 3 slices away
 * the alpha channel; 4 keeps RGBA.
 */
std::vector<ViewSequence> render_views(const GaussianSequence& sequence,
                                       const std::vector<Camera>& cameras,
                                       const RenderOptions& options = {}, int channels = 3);

enum class CorruptionMode { invert, constant, noise };

const char* to_string(CorruptionMode mode);
CorruptionMode corruption_mode_from_string(const std::string& name);

/**
 * @brief Localized damage applied to rendered views: one view, an inclusive
 * time range, and a pixel rectangle. Color channels only; alpha is kept.
 */
struct CorruptionSpec {
  ViewTag view = ViewTag::input;
  int t_begin = 1;
  int t_end = 0;  // t_end < t_begin means an empty range (identity)
  int x = 0, y = 0, width = 0, height = 0;
  CorruptionMode mode = CorruptionMode::invert;
  double value = 0.5;       // constant mode fill
  double amplitude = 0.1;   // noise mode, uniform in [-amplitude, amplitude]
  std::uint64_t seed = 7;   // noise mode

  void validate(int image_width, int image_height) const;
};

/// Copy of `views` with the spec applied; everything outside the patch,
/// range, and view is bit-identical. Throws invalid_input when the patch
/// leaves the image bounds.
std::vector<ViewSequence> corrupt(const std::vector<ViewSequence>& views,
                                  const CorruptionSpec& spec);

}  // namespace dgs
