// sh.hpp
#pragma once

#include "dgs/types.hpp"

namespace dgs {

/**
 * @brief Real spherical-harmonics basis values up to degree 2 at a unit
 * direction, in the standard splatting band order:
 * [Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22].
 * `out` must hold sh_coeff_count(degree) doubles.
 */
void sh_basis(int degree, const Vec3& dir, double* out);

/**
 * @brief View-dependent color: per channel, coefficients dotted with the SH
 * basis at view_dir, plus the conventional 0.5 DC offset, clamped to [0,1].
 * Coefficient count must be a valid (degree+1)^2 for degree 0..2.
 */
Vec3 eval_sh(const std::vector<Vec3>& coeffs, const Vec3& view_dir);

/**
 * @brief Chain-rule companion of eval_sh. Accumulates into d_coeffs (same
 * length as coeffs) and d_dir. Channels clamped in the forward pass pass no
 * gradient.
 */
void eval_sh_backward(const std::vector<Vec3>& coeffs, const Vec3& view_dir,
                      const Vec3& d_color, std::vector<Vec3>& d_coeffs, Vec3& d_dir);

/// DC coefficient that makes eval_sh return exactly `rgb` at degree 0.
Vec3 rgb_to_sh_dc(const Vec3& rgb);

}  // namespace dgs
