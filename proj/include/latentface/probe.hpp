#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latentface/autodiff.hpp"
#include "latentface/data.hpp"
#include "latentface/diffusion.hpp"
#include "latentface/nets.hpp"
#include "latentface/rdm.hpp"
#include "latentface/stage1.hpp"
#include "latentface/tensor.hpp"

// Frozen-backbone evaluation: a normalization+linear probe over embeddings
// built from the two-stage pipeline. Expression classification reports
// accuracy, macro-F1, and a confusion matrix; pair verification runs ten
// disjoint balanced folds with a fresh probe per fold.
namespace lf::probe {

struct ProbeConfig {
  int epochs = 150;
  int batch_size = 64;
  float learning_rate = 1e-3f;
  uint64_t seed = 0;
};

enum class Variant { kFer, kVerify };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

// One embedding row per corpus sample, aligned with labels and paths.
// kFer rows are concat(delta_tex, delta_shape, z_tex, z_shape) where
// delta = z - z0_hat; kVerify rows are concat(z0_tex, z0_shape, z_tex,
// z_shape). Both are 4x the latent width.
struct FeatureSet {
  Tensor features;                 // [N, 4*latent]
  std::vector<int> labels;         // expression class per row
  std::vector<std::string> paths;  // corpus-relative image path per row
};

FeatureSet extract_features(const stage1::Model<float>& m, const rdm::RdmModel& rdm_tex,
                            const rdm::RdmModel& rdm_shape, const data::Corpus& corpus,
                            const std::string& split, Variant variant,
                            const diffusion::Schedule& sched, int64_t S, uint64_t seed,
                            int batch_size = 16);

inline constexpr const char* kFeaturePackArch = "latentface-features-v1";

// Feature pack: checkpoint container with one tensor named "features"
// [N, D] plus row-aligned labels and paths in the metadata.
void save_feature_pack(const std::string& path, const FeatureSet& fs, Variant variant);
FeatureSet load_feature_pack(const std::string& path, Variant* variant_out = nullptr);

struct TrainedHead {
  ad::ParamStore<float> ps;
  nets::ProbeHead<float> head;
  int64_t n_classes = 0;
};

TrainedHead train_probe(const Tensor& features, const std::vector<int>& labels,
                        const ProbeConfig& cfg);

struct ClassificationReport {
  double accuracy = 0;
  double macro_f1 = 0;
  std::vector<std::vector<int64_t>> confusion;  // [actual][predicted]
};

ClassificationReport eval_classification(TrainedHead& head, const Tensor& features,
                                         const std::vector<int>& labels);

// Pair rows are elementwise |e_a - e_b| with a same/different flag.
struct PairSet {
  Tensor features;  // [P, D]
  std::vector<int> same;
};
PairSet make_pair_set(const FeatureSet& fs, const std::vector<data::PairRow>& pairs);

struct FoldReport {
  std::vector<double> accuracies;  // one per fold, fold order
  double mean = 0;
  double stddev = 0;
  double stderr_mean = 0;
};

FoldReport verification_crossval(const Tensor& pair_features, const std::vector<int>& same,
                                 const ProbeConfig& cfg);

// metrics.csv (metric,value) + confusion.csv (one row of counts per actual
// class) + confusion.png (row-normalized heat map, actual class per row)
void emit_classification_reports(const ClassificationReport& rep, const std::string& out_dir);
// metrics.csv + folds.csv (fold,accuracy)
void emit_verification_reports(const FoldReport& rep, const std::string& out_dir);
std::vector<std::pair<std::string, double>> read_metrics_csv(const std::string& path);

}  // namespace lf::probe
