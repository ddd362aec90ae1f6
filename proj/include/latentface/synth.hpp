#pragma once

#include <string>
#include <vector>

#include "latentface/renderer.hpp"
#include "latentface/tensor.hpp"

// Procedural synthetic-face corpus with known ground truth for identity,
// expression class, pose, and light. Every image is exactly reproducible
// from its logged parameters, which is what makes the desk-scale training
// and probing oracles possible.
namespace lf::synth {

inline constexpr int kImageSize = 64;
inline constexpr int kNumClasses = 4;
inline constexpr int kGeneratorVersion = 1;

struct Identity {
  int id = 0;
  DTensor albedo;  // [3,64,64], mirror-symmetric, values in [0.2, 0.95]
  DTensor depth;   // [64,64], mirror-symmetric, values in [0.9, 1.1]
};

struct ExpressionTemplate {
  DTensor albedo_delta;  // [3,64,64]
  DTensor depth_delta;   // [64,64]
};

struct SampleParams {
  int identity = 0;
  int frame = 0;
  int cls = 0;
  double magnitude = 0;
  render::PoseT<double> pose;
  render::LightT<double> light;
};

// Deterministic identity maps from a seed (smooth symmetric albedo field,
// 2-4 symmetric Gaussian depth bumps min-max mapped into [0.9, 1.1]).
Identity gen_identity(uint64_t seed);

// Identity-independent additive deformation field for an expression class.
const ExpressionTemplate& expression_template(int cls);

// Base maps plus magnitude-scaled class field, clamped back into the valid
// albedo/depth ranges. m = 0 returns the base maps exactly.
std::pair<DTensor, DTensor> gen_expression(const Identity& ident, int cls, double magnitude);

// The ground-truth render for a sample (double precision, unclamped).
render::RenderOutputT<double> render_sample(uint64_t corpus_seed, const SampleParams& p);

// Draw the per-sample factors for (identity, frame) under a corpus seed.
SampleParams draw_sample_params(uint64_t corpus_seed, int identity, int frame);

uint64_t identity_seed(uint64_t corpus_seed, int identity);

struct DatasetSpec {
  int n_identities = 64;
  int frames_per_identity = 16;
  uint64_t seed = 7;
  int pos_pairs = 300;
  int neg_pairs = 300;
};

// Writes root/{train,eval}/<id>/<frame>.png, labels.csv, pairs.csv,
// manifest.json. Split is 80/20 by identity. Deterministic.
void gen_dataset(const DatasetSpec& spec, const std::string& root);

}  // namespace lf::synth
