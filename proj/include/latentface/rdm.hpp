#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentface/autodiff.hpp"
#include "latentface/checkpoint.hpp"
#include "latentface/data.hpp"
#include "latentface/diffusion.hpp"
#include "latentface/nets.hpp"
#include "latentface/stage1.hpp"
#include "latentface/tensor.hpp"

// Stage 2: conditional latent diffusion recovering the identity component of
// a face latent. Frozen stage-1 encoders turn frame sequences into latent
// sequences; the denoiser learns to predict the sequence-mean identity
// latent from a single frame's latent, trained with SNR-weighted
// x0-prediction and sampled with a short deterministic DDIM chain. A direct
// residual regressor provides the ablation baseline.
namespace lf::rdm {

inline constexpr const char* kRdmArch = "latentface-rdm-v1";
inline constexpr const char* kBaselineArch = "latentface-idbaseline-v1";
inline constexpr const char* kLatentPackArch = "latentface-latents-v1";
inline constexpr const char* kHeadTex = "tex";
inline constexpr const char* kHeadShape = "shape";

struct Stage2Config {
  int epochs = 30;
  int batch_size = 16;
  float learning_rate = 1e-4f;
  int64_t T = 1000;
  int64_t S = 5;
  int n_frames = 16;
  uint64_t seed = 0;
};

nlohmann::json stage2_config_to_json(const Stage2Config& cfg);
Stage2Config stage2_config_from_json(const nlohmann::json& j);

// All frames of one identity, encoded by a frozen stage-1 model.
struct LatentSequence {
  std::string id;
  Tensor tex;    // [frames, latent]
  Tensor shape;  // [frames, latent]
};

std::vector<LatentSequence> encode_sequences(const stage1::Model<float>& m,
                                             const data::Corpus& corpus, const std::string& split,
                                             int batch_size = 16);

// Latent pack: checkpoint container holding seq/<id>/frame/<k>/<head>
// vectors, with provenance metadata.
void save_latent_pack(const std::string& path, const std::vector<LatentSequence>& seqs,
                      nlohmann::json extra_meta);
std::vector<LatentSequence> load_latent_pack(const std::string& path);

struct RdmExample {
  Tensor target;     // [latent] mean of the sampled frames
  Tensor cond;       // [latent] one sampled frame
  std::string head;  // kHeadTex | kHeadShape
};

// Per sequence: draw n frame indices (without replacement when possible,
// with replacement for short sequences), average the sampled latents into
// the target, and emit one example per sampled frame for each head. Frame
// draws depend only on (seed, sequence position), so both heads pair up.
std::vector<RdmExample> build_rdm_dataset(const std::vector<LatentSequence>& seqs, int n,
                                          uint64_t seed);

// mean over rows of row_weight * ||z0 - pred||^2 (norm over the latent dim)
ad::Var<float> weighted_mse(const ad::Var<float>& pred, const Tensor& z0,
                            const std::vector<double>& row_weights);

// SNR-weighted x0-prediction loss for one batch at given noise draws
ad::Var<float> rdm_loss(const nets::Denoiser<float>& net, const Tensor& z0, const Tensor& cond,
                        const std::vector<int64_t>& taus, const Tensor& eps,
                        const diffusion::Schedule& sched);

struct Stage2Summary {
  std::vector<stage1::EpochStat> epochs;
  std::string ckpt_path, loss_csv;
};

// Train the denoiser for one head on the tagged examples; writes
// rdm_<head>.lfck and loss_<head>.csv under out_dir.
Stage2Summary train_stage2(const std::vector<RdmExample>& dataset, const std::string& head,
                           const Stage2Config& cfg, uint32_t stage1_crc,
                           const std::string& out_dir);

// Same dataset and interface for the direct regressor (plain MSE); writes
// baseline_<head>.lfck and baseline_loss_<head>.csv.
Stage2Summary train_baseline(const std::vector<RdmExample>& dataset, const std::string& head,
                             const Stage2Config& cfg, uint32_t stage1_crc,
                             const std::string& out_dir);

struct RdmModel {
  ad::ParamStore<float> ps;
  nets::Denoiser<float> net;
  nlohmann::json meta;
  int64_t latent = 256;
};
RdmModel load_rdm(const std::string& path);

// DDIM identity prediction for a batch of conditions [N,latent]
Tensor rdm_predict(const RdmModel& m, const Tensor& conds, const diffusion::Schedule& sched,
                   int64_t S, uint64_t seed);

struct BaselineModel {
  ad::ParamStore<float> ps;
  nets::BaselineRegressor<float> net;
  nlohmann::json meta;
  int64_t latent = 256;
};
BaselineModel load_baseline(const std::string& path);
Tensor baseline_predict(const BaselineModel& m, const Tensor& conds);

// Identity-recovery quality on held-out sequences: distances to the
// brute-force full-sequence mean, pooled over every frame.
struct IdentityEval {
  double median_rdm = 0;
  double median_raw = 0;
  double median_baseline = 0;
};
IdentityEval eval_identity_recovery(const std::vector<LatentSequence>& seqs,
                                    const std::string& head, const RdmModel& rdm,
                                    const BaselineModel& baseline,
                                    const diffusion::Schedule& sched, int64_t S, uint64_t seed);

}  // namespace lf::rdm
