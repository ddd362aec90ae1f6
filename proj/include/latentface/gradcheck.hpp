#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentface/renderer.hpp"
#include "latentface/tensor.hpp"

// Numerical validation of the analytic gradients and of the renderer's exact
// properties. Everything runs in double precision at low resolution so
// central differences are trustworthy.
namespace lf::gradcheck {

struct GroupResult {
  std::string group;  // albedo | depth | pose | light
  double max_rel_err = 0;
};

struct SuiteResult {
  std::vector<GroupResult> groups;
  double worst = 0;
  bool pass = false;
};

// Central-difference check of every renderer input against the analytic
// backward pass. The probe loss is a fixed random weighting of the image over
// interior, well-covered pixels, which keeps rasterization discontinuities
// out of the differenced set. sabotage_shading flips the shading-path
// gradient and must make the suite fail (mutation fixture).
SuiteResult renderer_suite(int res = 8, double h = 1e-3, int seeds = 10, double tol = 1e-3,
                           bool sabotage_shading = false);

// End-to-end derivative through decoder, renderer, and confidence loss:
// perturbs single texture-latent coordinates on a tiny double-precision
// model. Returns the max relative error over the checked coordinates. The
// absolute-residual loss has kinks, so the default step is smaller than the
// renderer suite's.
double pipeline_latent_max_rel_err(int check_coords = 4, double h = 1e-4, uint64_t seed = 0);

struct InvariantResult {
  std::string name;
  bool pass = false;
  double value = 0;  // the measured error or quantity the check looked at
};

// Exact-property suite: flip involution, frontal mirror symmetry, flat-depth
// normals, identity-pose unit magnification, focal-length identity, light
// normalization, and the diffusion schedule endpoints.
std::vector<InvariantResult> invariant_suite();

}  // namespace lf::gradcheck
