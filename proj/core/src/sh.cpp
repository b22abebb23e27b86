// sh.cpp
#include "dgs/sh.hpp"

#include "dgs/error.hpp"

#include <algorithm>
#include <cmath>

namespace dgs {

namespace {

constexpr double kSHC0 = 0.28209479177387814;
constexpr double kSHC1 = 0.4886025119029199;
constexpr double kSHC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                             -1.0925484305920792, 0.5462742152960396};

int degree_of(size_t coeff_count) {
  for (int degree = 0; degree <= 2; ++degree) {
    if (coeff_count == static_cast<size_t>(sh_coeff_count(degree))) return degree;
  }
  throw Error(ErrorCode::invalid_input, "SH coefficient count does not match a degree in 0..2");
}

}  // namespace

void sh_basis(int degree, const Vec3& dir, double* out) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  out[0] = kSHC0;
  if (degree >= 1) {
    out[1] = -kSHC1 * y;
    out[2] = kSHC1 * z;
    out[3] = -kSHC1 * x;
  }
  if (degree >= 2) {
    out[4] = kSHC2[0] * x * y;
    out[5] = kSHC2[1] * y * z;
    out[6] = kSHC2[2] * (2.0 * z * z - x * x - y * y);
    out[7] = kSHC2[3] * x * z;
    out[8] = kSHC2[4] * (x * x - y * y);
  }
}

Vec3 eval_sh(const std::vector<Vec3>& coeffs, const Vec3& view_dir) {
  const int degree = degree_of(coeffs.size());
  double basis[9];
  sh_basis(degree, view_dir, basis);
  Vec3 color = Vec3::Constant(0.5);
  for (size_t k = 0; k < coeffs.size(); ++k) color += basis[k] * coeffs[k];
  return color.cwiseMax(0.0).cwiseMin(1.0);
}

void eval_sh_backward(const std::vector<Vec3>& coeffs, const Vec3& view_dir,
                      const Vec3& d_color, std::vector<Vec3>& d_coeffs, Vec3& d_dir) {
  const int degree = degree_of(coeffs.size());
  double basis[9];
  sh_basis(degree, view_dir, basis);

  Vec3 raw = Vec3::Constant(0.5);
  for (size_t k = 0; k < coeffs.size(); ++k) raw += basis[k] * coeffs[k];
  // Clamped channels are flat; gate their gradient off.
  Vec3 gated = d_color;
  for (int c = 0; c < 3; ++c) {
    if (raw[c] <= 0.0 || raw[c] >= 1.0) gated[c] = 0.0;
  }

  for (size_t k = 0; k < coeffs.size(); ++k) d_coeffs[k] += basis[k] * gated;

  // d(basis_k)/d(dir), dotted against sum_k coeffs[k] . gated.
  const double x = view_dir.x(), y = view_dir.y(), z = view_dir.z();
  if (degree >= 1) {
    const double w1 = coeffs[1].dot(gated);
    const double w2 = coeffs[2].dot(gated);
    const double w3 = coeffs[3].dot(gated);
    d_dir += Vec3(-kSHC1 * w3, -kSHC1 * w1, kSHC1 * w2);
  }
  if (degree >= 2) {
    const double w4 = coeffs[4].dot(gated);
    const double w5 = coeffs[5].dot(gated);
    const double w6 = coeffs[6].dot(gated);
    const double w7 = coeffs[7].dot(gated);
    const double w8 = coeffs[8].dot(gated);
    d_dir += Vec3(kSHC2[0] * y * w4 - 2.0 * kSHC2[2] * x * w6 + kSHC2[3] * z * w7 +
                      2.0 * kSHC2[4] * x * w8,
                  kSHC2[0] * x * w4 + kSHC2[1] * z * w5 - 2.0 * kSHC2[2] * y * w6 -
                      2.0 * kSHC2[4] * y * w8,
                  kSHC2[1] * y * w5 + 4.0 * kSHC2[2] * z * w6 + kSHC2[3] * x * w7);
  }
}

Vec3 rgb_to_sh_dc(const Vec3& rgb) { return (rgb - Vec3::Constant(0.5)) / kSHC0; }

}  // namespace dgs
