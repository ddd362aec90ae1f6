#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentface/tensor.hpp"

// Corpus indexing, image ingestion, and deterministic batching shared by
// training and evaluation.
namespace lf::data {

struct SampleRef {
  std::string split, identity, frame, path;  // path relative to root
};

struct LabelRow {
  int cls = -1;
  double magnitude = 0, yaw = 0, pitch = 0, roll = 0, tx = 0, ty = 0, tz = 0;
  double ka = 0, kd = 0, lx = 0, ly = 0;
};

struct PairRow {
  std::string img_a, img_b;  // paths relative to root
  int same = 0;
};

struct Corpus {
  std::string root;
  std::vector<SampleRef> samples;              // lexicographic by relative path
  std::map<std::string, LabelRow> labels;      // keyed by relative path
  std::vector<PairRow> pairs;

  // Scans root for train/ eval/ PNG trees plus optional labels.csv and
  // pairs.csv in the corpus schema.
  static Corpus open(const std::string& root);

  std::vector<int64_t> split_indices(const std::string& split) const;
  std::string abs_path(const std::string& rel) const;
  const LabelRow* label(const SampleRef& s) const;
};

// PNG -> [3,64,64] in [0,1]; non-64x64 inputs are bilinearly resized,
// grayscale replicated to 3 channels by the decoder.
Tensor load_image(const std::string& path);

// Stack of images [N,3,64,64] for the given corpus sample indices.
Tensor load_batch(const Corpus& corpus, const std::vector<int64_t>& indices);

// Seeded epoch permutation of 0..n-1, chunked by batch size; the last short
// batch is kept.
std::vector<std::vector<int64_t>> plan_batches(int64_t n, int64_t batch_size, uint64_t seed,
                                               int64_t epoch);

}  // namespace lf::data
