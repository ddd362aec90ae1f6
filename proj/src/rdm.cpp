#include "latentface/rdm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "latentface/stats.hpp"

namespace lf::rdm {

namespace fs = std::filesystem;
using nlohmann::json;

json stage2_config_to_json(const Stage2Config& cfg) {
  return json{{"epochs", cfg.epochs},   {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate}, {"T", cfg.T},
              {"S", cfg.S},             {"n_frames", cfg.n_frames},
              {"seed", cfg.seed}};
}

Stage2Config stage2_config_from_json(const json& j) {
  Stage2Config cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<float>();
  cfg.T = j.at("T").get<int64_t>();
  cfg.S = j.at("S").get<int64_t>();
  cfg.n_frames = j.at("n_frames").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

std::vector<LatentSequence> encode_sequences(const stage1::Model<float>& m,
                                             const data::Corpus& corpus, const std::string& split,
                                             int batch_size) {
  if (batch_size < 1) throw InvalidInputError("encode_sequences: batch_size >= 1");
  auto idx = corpus.split_indices(split);
  if (idx.empty()) throw DataError("no samples in split " + split);

  // group consecutive samples by identity (samples are path-sorted, so each
  // identity's frames are contiguous and frame-ordered)
  std::vector<std::pair<std::string, std::vector<int64_t>>> groups;
  for (int64_t i : idx) {
    const auto& s = corpus.samples[i];
    if (groups.empty() || groups.back().first != s.identity) groups.push_back({s.identity, {}});
    groups.back().second.push_back(i);
  }

  std::vector<LatentSequence> out;
  out.reserve(groups.size());
  for (auto& [id, frames] : groups) {
    const int64_t k = static_cast<int64_t>(frames.size());
    LatentSequence seq;
    seq.id = id;
    seq.tex = Tensor({k, m.ws.latent});
    seq.shape = Tensor({k, m.ws.latent});
    for (int64_t off = 0; off < k; off += batch_size) {
      int64_t end = std::min(k, off + batch_size);
      std::vector<int64_t> chunk(frames.begin() + off, frames.begin() + end);
      Tensor batch = data::load_batch(corpus, chunk);
      auto x = ad::Var<float>::constant(batch);
      auto zt_var = m.tex_enc.forward(x);
      auto zs_var = m.shape_enc.forward(x);
      const Tensor& zt = zt_var.value();
      const Tensor& zs = zs_var.value();
      std::copy_n(zt.data.data(), zt.numel(), seq.tex.data.data() + off * m.ws.latent);
      std::copy_n(zs.data.data(), zs.numel(), seq.shape.data.data() + off * m.ws.latent);
    }
    if (!seq.tex.all_finite() || !seq.shape.all_finite())
      throw NumericalError("non-finite latent while encoding " + id);
    out.push_back(std::move(seq));
  }
  return out;
}

void save_latent_pack(const std::string& path, const std::vector<LatentSequence>& seqs,
                      json extra_meta) {
  if (seqs.empty()) throw InvalidInputError("latent pack needs at least one sequence");
  ckpt::Checkpoint ck;
  ck.meta = std::move(extra_meta);
  ck.meta["arch"] = kLatentPackArch;
  ck.meta["latent"] = seqs[0].tex.dim(1);
  std::vector<std::string> ids;
  for (const auto& s : seqs) {
    ids.push_back(s.id);
    for (int64_t k = 0; k < s.tex.dim(0); ++k) {
      Tensor t({s.tex.dim(1)}), sh({s.shape.dim(1)});
      std::copy_n(s.tex.data.data() + k * s.tex.dim(1), s.tex.dim(1), t.data.data());
      std::copy_n(s.shape.data.data() + k * s.shape.dim(1), s.shape.dim(1), sh.data.data());
      std::string base = "seq/" + s.id + "/frame/" + std::to_string(k) + "/";
      ck.tensors.emplace_back(base + kHeadTex, std::move(t));
      ck.tensors.emplace_back(base + kHeadShape, std::move(sh));
    }
  }
  ck.meta["ids"] = ids;
  ckpt::save(path, ck);
}

std::vector<LatentSequence> load_latent_pack(const std::string& path) {
  ckpt::Checkpoint ck = ckpt::load(path);
  if (!ck.meta.contains("arch") || ck.meta.at("arch") != kLatentPackArch)
    throw VersionMismatchError("not a latent pack: " + path);
  auto ids = ck.meta.at("ids").get<std::vector<std::string>>();
  int64_t latent = ck.meta.at("latent").get<int64_t>();

  std::vector<LatentSequence> out;
  for (const auto& id : ids) {
    LatentSequence seq;
    seq.id = id;
    std::vector<const Tensor*> tex, shape;
    for (int64_t k = 0;; ++k) {
      std::string base = "seq/" + id + "/frame/" + std::to_string(k) + "/";
      const Tensor* t = ck.find(base + kHeadTex);
      const Tensor* s = ck.find(base + kHeadShape);
      if (!t && !s) break;
      if (!t || !s) throw CorruptFileError("latent pack missing a head for " + base);
      if (t->numel() != latent || s->numel() != latent)
        throw CorruptFileError("latent pack dimension mismatch for " + base);
      tex.push_back(t);
      shape.push_back(s);
    }
    if (tex.empty()) throw CorruptFileError("latent pack has no frames for " + id);
    const int64_t k = static_cast<int64_t>(tex.size());
    seq.tex = Tensor({k, latent});
    seq.shape = Tensor({k, latent});
    for (int64_t i = 0; i < k; ++i) {
      std::copy_n(tex[i]->data.data(), latent, seq.tex.data.data() + i * latent);
      std::copy_n(shape[i]->data.data(), latent, seq.shape.data.data() + i * latent);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<RdmExample> build_rdm_dataset(const std::vector<LatentSequence>& seqs, int n,
                                          uint64_t seed) {
  if (seqs.empty()) throw InvalidInputError("build_rdm_dataset: no sequences");
  if (n < 1) throw InvalidInputError("build_rdm_dataset: n >= 1");
  std::vector<RdmExample> out;
  for (size_t si = 0; si < seqs.size(); ++si) {
    const auto& seq = seqs[si];
    const int64_t frames = seq.tex.dim(0);
    if (frames < 1) throw InvalidInputError("build_rdm_dataset: empty sequence " + seq.id);
    const int64_t latent = seq.tex.dim(1);

    Rng rng(hash_mix(seed, hash_str("rdm-frames"), static_cast<uint64_t>(si)));
    std::vector<int64_t> picks(n);
    if (frames >= n) {
      std::vector<int64_t> all(frames);
      for (int64_t i = 0; i < frames; ++i) all[i] = i;
      rng.shuffle(all);
      std::copy_n(all.begin(), n, picks.begin());
    } else {
      for (int i = 0; i < n; ++i) picks[i] = rng.uniform_int(0, frames - 1);
    }

    for (const char* head : {kHeadTex, kHeadShape}) {
      const Tensor& lat = head == std::string(kHeadTex) ? seq.tex : seq.shape;
      Tensor target({latent});
      for (int64_t p : picks)
        for (int64_t j = 0; j < latent; ++j) target[j] += lat.at2(p, j);
      for (int64_t j = 0; j < latent; ++j) target[j] /= static_cast<float>(n);
      for (int64_t p : picks) {
        RdmExample ex;
        ex.target = target;
        ex.cond = Tensor({latent});
        std::copy_n(lat.data.data() + p * latent, latent, ex.cond.data.data());
        ex.head = head;
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

ad::Var<float> weighted_mse(const ad::Var<float>& pred, const Tensor& z0,
                            const std::vector<double>& row_weights) {
  const int64_t n = z0.dim(0), l = z0.dim(1);
  if (!pred.value().same_shape(z0) || static_cast<int64_t>(row_weights.size()) != n)
    throw InvalidInputError("weighted_mse: shape mismatch");
  Tensor w({n, l});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < l; ++j)
      w.at2(i, j) = static_cast<float>(row_weights[i] / static_cast<double>(n));
  auto diff = ad::sub(ad::Var<float>::constant(z0), pred);
  return ad::sum(ad::mul(ad::mul(diff, diff), ad::Var<float>::constant(std::move(w))));
}

ad::Var<float> rdm_loss(const nets::Denoiser<float>& net, const Tensor& z0, const Tensor& cond,
                        const std::vector<int64_t>& taus, const Tensor& eps,
                        const diffusion::Schedule& sched) {
  const int64_t n = z0.dim(0), l = z0.dim(1);
  if (!cond.same_shape(z0) || !eps.same_shape(z0) || static_cast<int64_t>(taus.size()) != n)
    throw InvalidInputError("rdm_loss: shape mismatch");
  Tensor z_tau({n, l});
  std::vector<double> w(n);
  for (int64_t i = 0; i < n; ++i) {
    if (taus[i] < 1 || taus[i] > sched.T) throw InvalidInputError("rdm_loss: tau out of range");
    float a = static_cast<float>(std::sqrt(sched.alpha_bar[taus[i]]));
    float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[taus[i]]));
    for (int64_t j = 0; j < l; ++j) z_tau.at2(i, j) = a * z0.at2(i, j) + b * eps.at2(i, j);
    w[i] = sched.weight[taus[i]];
  }
  auto pred = net.forward(ad::Var<float>::constant(std::move(z_tau)),
                          ad::Var<float>::constant(cond), taus);
  return weighted_mse(pred, z0, w);
}

namespace {

struct HeadData {
  Tensor z0;    // [M, latent]
  Tensor cond;  // [M, latent]
};

HeadData collect_head(const std::vector<RdmExample>& dataset, const std::string& head) {
  std::vector<const RdmExample*> rows;
  for (const auto& ex : dataset)
    if (ex.head == head) rows.push_back(&ex);
  if (rows.empty()) throw InvalidInputError("no examples for head " + head);
  const int64_t l = rows[0]->target.numel();
  HeadData hd;
  hd.z0 = Tensor({static_cast<int64_t>(rows.size()), l});
  hd.cond = Tensor({static_cast<int64_t>(rows.size()), l});
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(rows[i]->target.data.data(), l, hd.z0.data.data() + i * l);
    std::copy_n(rows[i]->cond.data.data(), l, hd.cond.data.data() + i * l);
  }
  return hd;
}

Tensor gather_rows(const Tensor& src, const std::vector<int64_t>& idx) {
  const int64_t l = src.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), l});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.data.data() + idx[i] * l, l, out.data.data() + i * l);
  return out;
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// shared epoch loop for the denoiser and the baseline
template <class StepFn>
Stage2Summary run_training(const HeadData& hd, const Stage2Config& cfg, uint64_t shuffle_seed,
                           const std::string& csv_path, StepFn&& step_fn) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw InvalidInputError("bad stage-2 training config");
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "epoch,step,loss\n";

  Stage2Summary sum;
  sum.loss_csv = csv_path;
  const int64_t m = hd.z0.dim(0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = data::plan_batches(m, cfg.batch_size, shuffle_seed, epoch);
    double epoch_sum = 0;
    int step = 0;
    for (const auto& bidx : batches) {
      ++step;
      double loss = step_fn(gather_rows(hd.z0, bidx), gather_rows(hd.cond, bidx));
      if (!std::isfinite(loss))
        throw NumericalError("non-finite stage-2 loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(step));
      csv << epoch << ',' << step << ',' << fmt9(loss) << '\n';
      epoch_sum += loss;
    }
    csv.flush();
    sum.epochs.push_back({epoch, epoch_sum / step});
  }
  return sum;
}

}  // namespace

Stage2Summary train_stage2(const std::vector<RdmExample>& dataset, const std::string& head,
                           const Stage2Config& cfg, uint32_t stage1_crc,
                           const std::string& out_dir) {
  HeadData hd = collect_head(dataset, head);
  const int64_t latent = hd.z0.dim(1);
  diffusion::Schedule sched = diffusion::make_schedule(cfg.T);

  ad::ParamStore<float> ps;
  Rng init_rng(hash_mix(cfg.seed, hash_str("rdm-init"), hash_str(head)));
  nets::LayerFactory<float> f{ps, init_rng};
  nets::Denoiser<float> net(f, "rdm", latent);
  ad::Adam<float> opt(ps, cfg.learning_rate);

  Rng noise_rng(hash_mix(cfg.seed, hash_str("rdm-noise"), hash_str(head)));
  fs::create_directories(out_dir);
  auto sum = run_training(
      hd, cfg, hash_mix(cfg.seed, hash_str(head)), out_dir + "/loss_" + head + ".csv",
      [&](const Tensor& z0, const Tensor& cond) {
        const int64_t n = z0.dim(0);
        std::vector<int64_t> taus(n);
        Tensor eps(z0.shape);
        for (int64_t i = 0; i < n; ++i) taus[i] = noise_rng.uniform_int(1, cfg.T);
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = static_cast<float>(noise_rng.normal());
        auto loss = rdm_loss(net, z0, cond, taus, eps, sched);
        ps.zero_grad();
        ad::backward(loss);
        opt.step();
        return static_cast<double>(loss.value()[0]);
      });

  json meta;
  meta["arch"] = kRdmArch;
  meta["head"] = head;
  meta["latent"] = latent;
  meta["stage1_crc32"] = stage1_crc;
  meta["config"] = stage2_config_to_json(cfg);
  sum.ckpt_path = out_dir + "/rdm_" + head + ".lfck";
  ckpt::save(sum.ckpt_path, ckpt::from_params(ps, std::move(meta)));
  return sum;
}

Stage2Summary train_baseline(const std::vector<RdmExample>& dataset, const std::string& head,
                             const Stage2Config& cfg, uint32_t stage1_crc,
                             const std::string& out_dir) {
  HeadData hd = collect_head(dataset, head);
  const int64_t latent = hd.z0.dim(1);

  ad::ParamStore<float> ps;
  Rng init_rng(hash_mix(cfg.seed, hash_str("baseline-init"), hash_str(head)));
  nets::LayerFactory<float> f{ps, init_rng};
  nets::BaselineRegressor<float> net(f, "idreg", latent);
  ad::Adam<float> opt(ps, cfg.learning_rate);

  std::vector<double> ones_w;
  fs::create_directories(out_dir);
  auto sum = run_training(
      hd, cfg, hash_mix(cfg.seed, hash_str("baseline"), hash_str(head)),
      out_dir + "/baseline_loss_" + head + ".csv",
      [&](const Tensor& z0, const Tensor& cond) {
        auto pred = net.forward(ad::Var<float>::constant(cond));
        std::vector<double> w(z0.dim(0), 1.0);
        auto loss = weighted_mse(pred, z0, w);
        ps.zero_grad();
        ad::backward(loss);
        opt.step();
        return static_cast<double>(loss.value()[0]);
      });

  json meta;
  meta["arch"] = kBaselineArch;
  meta["head"] = head;
  meta["latent"] = latent;
  meta["stage1_crc32"] = stage1_crc;
  meta["config"] = stage2_config_to_json(cfg);
  sum.ckpt_path = out_dir + "/baseline_" + head + ".lfck";
  ckpt::save(sum.ckpt_path, ckpt::from_params(ps, std::move(meta)));
  return sum;
}

RdmModel load_rdm(const std::string& path) {
  ckpt::Checkpoint ck = ckpt::load(path);
  RdmModel m;
  m.meta = ck.meta;
  m.latent = ck.meta.at("latent").get<int64_t>();
  Rng rng(0);
  nets::LayerFactory<float> f{m.ps, rng};
  m.net = nets::Denoiser<float>(f, "rdm", m.latent);
  ckpt::load_params(ck, m.ps, kRdmArch);
  for (auto& [name, p] : m.ps.items()) p.set_requires_grad(false);
  return m;
}

Tensor rdm_predict(const RdmModel& m, const Tensor& conds, const diffusion::Schedule& sched,
                   int64_t S, uint64_t seed) {
  if (conds.rank() != 2 || conds.dim(1) != m.latent)
    throw InvalidInputError("rdm_predict: conditions must be N x latent");
  auto cond_var = ad::Var<float>::constant(conds);
  auto denoise = [&](const Tensor& z, int64_t tau) {
    std::vector<int64_t> taus(z.dim(0), tau);
    return m.net.forward(ad::Var<float>::constant(z), cond_var, taus).value();
  };
  return diffusion::ddim_sample<float>(denoise, conds.dim(0), m.latent, sched, S, seed);
}

BaselineModel load_baseline(const std::string& path) {
  ckpt::Checkpoint ck = ckpt::load(path);
  BaselineModel m;
  m.meta = ck.meta;
  m.latent = ck.meta.at("latent").get<int64_t>();
  Rng rng(0);
  nets::LayerFactory<float> f{m.ps, rng};
  m.net = nets::BaselineRegressor<float>(f, "idreg", m.latent);
  ckpt::load_params(ck, m.ps, kBaselineArch);
  for (auto& [name, p] : m.ps.items()) p.set_requires_grad(false);
  return m;
}

Tensor baseline_predict(const BaselineModel& m, const Tensor& conds) {
  if (conds.rank() != 2 || conds.dim(1) != m.latent)
    throw InvalidInputError("baseline_predict: conditions must be N x latent");
  return m.net.forward(ad::Var<float>::constant(conds)).value();
}

IdentityEval eval_identity_recovery(const std::vector<LatentSequence>& seqs,
                                    const std::string& head, const RdmModel& rdm,
                                    const BaselineModel& baseline,
                                    const diffusion::Schedule& sched, int64_t S, uint64_t seed) {
  if (seqs.empty()) throw InvalidInputError("eval_identity_recovery: no sequences");
  std::vector<double> d_rdm, d_raw, d_base;
  for (const auto& seq : seqs) {
    const Tensor& lat = head == std::string(kHeadTex) ? seq.tex : seq.shape;
    const int64_t frames = lat.dim(0), l = lat.dim(1);
    std::vector<double> mean(l, 0.0);
    for (int64_t k = 0; k < frames; ++k)
      for (int64_t j = 0; j < l; ++j) mean[j] += lat.at2(k, j);
    for (int64_t j = 0; j < l; ++j) mean[j] /= static_cast<double>(frames);

    Tensor pred_rdm = rdm_predict(rdm, lat, sched, S, seed);
    Tensor pred_base = baseline_predict(baseline, lat);
    auto dist = [&](const Tensor& t, int64_t row) {
      double acc = 0;
      for (int64_t j = 0; j < l; ++j) {
        double d = static_cast<double>(t.at2(row, j)) - mean[j];
        acc += d * d;
      }
      return std::sqrt(acc);
    };
    for (int64_t k = 0; k < frames; ++k) {
      d_rdm.push_back(dist(pred_rdm, k));
      d_raw.push_back(dist(lat, k));
      d_base.push_back(dist(pred_base, k));
    }
  }
  IdentityEval ev;
  ev.median_rdm = stats::median(d_rdm);
  ev.median_raw = stats::median(d_raw);
  ev.median_baseline = stats::median(d_base);
  return ev;
}

}  // namespace lf::rdm
