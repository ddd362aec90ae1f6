#include "latentface/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "latentface/checkpoint.hpp"
#include "latentface/image_io.hpp"
#include "latentface/stats.hpp"

namespace lf::probe {

namespace fs = std::filesystem;

Variant variant_from_string(const std::string& s) {
  if (s == "fer") return Variant::kFer;
  if (s == "verify") return Variant::kVerify;
  throw InvalidInputError("unknown feature variant: " + s);
}

std::string to_string(Variant v) { return v == Variant::kFer ? "fer" : "verify"; }

FeatureSet extract_features(const stage1::Model<float>& m, const rdm::RdmModel& rdm_tex,
                            const rdm::RdmModel& rdm_shape, const data::Corpus& corpus,
                            const std::string& split, Variant variant,
                            const diffusion::Schedule& sched, int64_t S, uint64_t seed,
                            int batch_size) {
  if (batch_size < 1) throw InvalidInputError("extract_features: batch_size >= 1");
  auto check_head = [](const rdm::RdmModel& r, const char* want, int64_t latent) {
    if (!r.meta.contains("head") || r.meta.at("head") != want)
      throw VersionMismatchError(std::string("denoiser checkpoint is not the ") + want + " head");
    if (r.latent != latent)
      throw VersionMismatchError("denoiser latent width does not match the encoder");
  };
  check_head(rdm_tex, rdm::kHeadTex, m.ws.latent);
  check_head(rdm_shape, rdm::kHeadShape, m.ws.latent);

  auto idx = corpus.split_indices(split);
  if (idx.empty()) throw DataError("no samples in split " + split);
  const int64_t n = static_cast<int64_t>(idx.size());
  const int64_t l = m.ws.latent;

  Tensor z_tex({n, l}), z_shape({n, l});
  FeatureSet out;
  out.labels.reserve(n);
  out.paths.reserve(n);
  for (int64_t off = 0; off < n; off += batch_size) {
    int64_t end = std::min(n, off + batch_size);
    std::vector<int64_t> chunk(idx.begin() + off, idx.begin() + end);
    Tensor batch = data::load_batch(corpus, chunk);
    auto x = ad::Var<float>::constant(std::move(batch));
    auto zt = m.tex_enc.forward(x);
    auto zs = m.shape_enc.forward(x);
    std::copy_n(zt.value().data.data(), zt.value().numel(), z_tex.data.data() + off * l);
    std::copy_n(zs.value().data.data(), zs.value().numel(), z_shape.data.data() + off * l);
  }
  for (int64_t i : idx) {
    const auto& s = corpus.samples[i];
    const data::LabelRow* lr = corpus.label(s);
    if (!lr) throw DataError("no label row for " + s.path);
    out.labels.push_back(lr->cls);
    out.paths.push_back(s.path);
  }

  Tensor z0_tex = rdm::rdm_predict(rdm_tex, z_tex, sched, S, hash_mix(seed, hash_str("tex")));
  Tensor z0_shape =
      rdm::rdm_predict(rdm_shape, z_shape, sched, S, hash_mix(seed, hash_str("shape")));

  Tensor first_t = variant == Variant::kFer ? diffusion::expression_delta(z_tex, z0_tex) : z0_tex;
  Tensor first_s =
      variant == Variant::kFer ? diffusion::expression_delta(z_shape, z0_shape) : z0_shape;

  out.features = Tensor({n, 4 * l});
  for (int64_t i = 0; i < n; ++i) {
    float* row = out.features.data.data() + i * 4 * l;
    std::copy_n(first_t.data.data() + i * l, l, row);
    std::copy_n(first_s.data.data() + i * l, l, row + l);
    std::copy_n(z_tex.data.data() + i * l, l, row + 2 * l);
    std::copy_n(z_shape.data.data() + i * l, l, row + 3 * l);
  }
  if (!out.features.all_finite()) throw NumericalError("non-finite probe feature");
  return out;
}

void save_feature_pack(const std::string& path, const FeatureSet& fs, Variant variant) {
  if (fs.features.rank() != 2 || fs.features.dim(0) < 1)
    throw InvalidInputError("save_feature_pack: features must be N x D");
  if (fs.labels.size() != static_cast<size_t>(fs.features.dim(0)) ||
      fs.paths.size() != fs.labels.size())
    throw InvalidInputError("save_feature_pack: labels/paths must align with rows");
  ckpt::Checkpoint ck;
  ck.meta["arch"] = kFeaturePackArch;
  ck.meta["variant"] = to_string(variant);
  ck.meta["labels"] = fs.labels;
  ck.meta["paths"] = fs.paths;
  ck.tensors.emplace_back("features", fs.features);
  ckpt::save(path, ck);
}

FeatureSet load_feature_pack(const std::string& path, Variant* variant_out) {
  ckpt::Checkpoint ck = ckpt::load(path);
  if (!ck.meta.contains("arch") || ck.meta.at("arch") != kFeaturePackArch)
    throw VersionMismatchError("not a feature pack: " + path);
  const Tensor* feats = ck.find("features");
  if (!feats || feats->rank() != 2) throw CorruptFileError("feature pack lacks features tensor");
  FeatureSet fs;
  fs.features = *feats;
  fs.labels = ck.meta.at("labels").get<std::vector<int>>();
  fs.paths = ck.meta.at("paths").get<std::vector<std::string>>();
  if (fs.labels.size() != static_cast<size_t>(fs.features.dim(0)) ||
      fs.paths.size() != fs.labels.size())
    throw CorruptFileError("feature pack metadata does not align with rows");
  if (variant_out) *variant_out = variant_from_string(ck.meta.at("variant").get<std::string>());
  return fs;
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<int64_t>& idx) {
  const int64_t d = src.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.data.data() + idx[i] * d, d, out.data.data() + i * d);
  return out;
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TrainedHead train_probe(const Tensor& features, const std::vector<int>& labels,
                        const ProbeConfig& cfg) {
  if (features.rank() != 2 || features.dim(0) < 1)
    throw InvalidInputError("train_probe: features must be N x D");
  const int64_t n = features.dim(0), d = features.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw InvalidInputError("train_probe: one label per feature row");
  if (cfg.epochs < 1 || cfg.batch_size < 2 || !(cfg.learning_rate > 0))
    throw InvalidInputError("bad probe training config");

  int64_t n_classes = 0;
  std::set<int> distinct;
  for (int c : labels) {
    if (c < 0) throw InvalidInputError("train_probe: negative label");
    distinct.insert(c);
    n_classes = std::max<int64_t>(n_classes, c + 1);
  }
  if (distinct.size() < 2) throw InvalidInputError("train_probe: needs at least two classes");

  TrainedHead th;
  th.n_classes = n_classes;
  Rng rng(hash_mix(cfg.seed, hash_str("probe-init")));
  nets::LayerFactory<float> f{th.ps, rng};
  th.head = nets::ProbeHead<float>(f, "probe", d, n_classes);
  ad::Adam<float> opt(th.ps, cfg.learning_rate);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = data::plan_batches(n, cfg.batch_size, hash_mix(cfg.seed, hash_str("probe")),
                                      epoch);
    for (const auto& bidx : batches) {
      if (bidx.size() < 2) continue;  // the normalizer needs a batch statistic
      std::vector<int> blab(bidx.size());
      for (size_t i = 0; i < bidx.size(); ++i) blab[i] = labels[bidx[i]];
      auto x = ad::Var<float>::constant(gather_rows(features, bidx));
      auto loss = ad::nll_loss(ad::log_softmax(th.head.forward(x, true)), blab);
      if (!loss.value().all_finite())
        throw NumericalError("non-finite probe loss at epoch " + std::to_string(epoch));
      th.ps.zero_grad();
      ad::backward(loss);
      opt.step();
    }
  }
  return th;
}

ClassificationReport eval_classification(TrainedHead& head, const Tensor& features,
                                         const std::vector<int>& labels) {
  if (features.rank() != 2 || features.dim(0) < 1)
    throw InvalidInputError("eval_classification: empty input");
  const int64_t n = features.dim(0);
  if (static_cast<int64_t>(labels.size()) != n)
    throw InvalidInputError("eval_classification: one label per feature row");
  const int64_t c = head.n_classes;
  for (int lab : labels)
    if (lab < 0 || lab >= c) throw InvalidInputError("eval_classification: label out of range");

  auto logits = head.head.forward(ad::Var<float>::constant(features), false);
  const Tensor& lv = logits.value();

  ClassificationReport rep;
  rep.confusion.assign(c, std::vector<int64_t>(c, 0));
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (lv.at2(i, j) > lv.at2(i, best)) best = j;
    rep.confusion[labels[i]][best]++;
    if (best == labels[i]) ++correct;
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double f1_sum = 0;
  for (int64_t k = 0; k < c; ++k) {
    int64_t tp = rep.confusion[k][k], fp = 0, fn = 0;
    for (int64_t r = 0; r < c; ++r)
      if (r != k) fp += rep.confusion[r][k];
    for (int64_t p = 0; p < c; ++p)
      if (p != k) fn += rep.confusion[k][p];
    double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1_sum += prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  rep.macro_f1 = f1_sum / static_cast<double>(c);
  return rep;
}

PairSet make_pair_set(const FeatureSet& fs, const std::vector<data::PairRow>& pairs) {
  if (pairs.empty()) throw InvalidInputError("make_pair_set: no pairs");
  std::map<std::string, int64_t> row_of;
  for (size_t i = 0; i < fs.paths.size(); ++i) row_of[fs.paths[i]] = static_cast<int64_t>(i);
  const int64_t d = fs.features.dim(1);
  PairSet ps;
  ps.features = Tensor({static_cast<int64_t>(pairs.size()), d});
  ps.same.reserve(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    auto a = row_of.find(pairs[p].img_a);
    auto b = row_of.find(pairs[p].img_b);
    if (a == row_of.end() || b == row_of.end())
      throw DataError("pair references an image outside the feature set: " + pairs[p].img_a +
                      " / " + pairs[p].img_b);
    for (int64_t j = 0; j < d; ++j)
      ps.features.at2(p, j) =
          std::abs(fs.features.at2(a->second, j) - fs.features.at2(b->second, j));
    ps.same.push_back(pairs[p].same ? 1 : 0);
  }
  return ps;
}

FoldReport verification_crossval(const Tensor& pair_features, const std::vector<int>& same,
                                 const ProbeConfig& cfg) {
  constexpr int kFolds = 10;
  if (pair_features.rank() != 2 ||
      pair_features.dim(0) != static_cast<int64_t>(same.size()))
    throw InvalidInputError("verification_crossval: one flag per pair row");
  std::vector<int64_t> pos, neg;
  for (size_t i = 0; i < same.size(); ++i)
    (same[i] ? pos : neg).push_back(static_cast<int64_t>(i));
  if (pos.size() < kFolds || neg.size() < kFolds)
    throw InvalidInputError("verification_crossval: needs at least 10 pairs per class");

  Rng rng(hash_mix(cfg.seed, hash_str("verify-folds")));
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::vector<int64_t>> folds(kFolds);
  for (size_t i = 0; i < pos.size(); ++i) folds[i % kFolds].push_back(pos[i]);
  for (size_t i = 0; i < neg.size(); ++i) folds[i % kFolds].push_back(neg[i]);

  FoldReport rep;
  for (int f = 0; f < kFolds; ++f) {
    std::vector<int64_t> train_idx;
    for (int g = 0; g < kFolds; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    std::vector<int> train_lab(train_idx.size());
    for (size_t i = 0; i < train_idx.size(); ++i) train_lab[i] = same[train_idx[i]];

    ProbeConfig fold_cfg = cfg;
    fold_cfg.seed = hash_mix(cfg.seed, hash_str("verify-head"), static_cast<uint64_t>(f));
    TrainedHead head = train_probe(gather_rows(pair_features, train_idx), train_lab, fold_cfg);

    std::vector<int64_t> test_idx = folds[f];
    std::sort(test_idx.begin(), test_idx.end());
    std::vector<int> test_lab(test_idx.size());
    for (size_t i = 0; i < test_idx.size(); ++i) test_lab[i] = same[test_idx[i]];
    auto cls = eval_classification(head, gather_rows(pair_features, test_idx), test_lab);
    rep.accuracies.push_back(cls.accuracy);
  }
  rep.mean = stats::mean(rep.accuracies);
  rep.stddev = stats::stddev(rep.accuracies);
  rep.stderr_mean = rep.stddev / std::sqrt(static_cast<double>(kFolds));
  return rep;
}

void emit_classification_reports(const ClassificationReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/metrics.csv");
    if (!f) throw IoError("cannot write " + out_dir + "/metrics.csv");
    f << "metric,value\n";
    f << "accuracy," << fmt9(rep.accuracy) << '\n';
    f << "macro_f1," << fmt9(rep.macro_f1) << '\n';
  }
  const int64_t c = static_cast<int64_t>(rep.confusion.size());
  {
    std::ofstream f(out_dir + "/confusion.csv");
    if (!f) throw IoError("cannot write " + out_dir + "/confusion.csv");
    for (int64_t i = 0; i < c; ++i) {
      for (int64_t j = 0; j < c; ++j) f << (j ? "," : "") << rep.confusion[i][j];
      f << '\n';
    }
  }
  // row-normalized heat map: actual class per row, white -> blue
  constexpr int64_t kCell = 32;
  Tensor img({3, c * kCell, c * kCell});
  for (int64_t i = 0; i < c; ++i) {
    int64_t row_sum = 0;
    for (int64_t j = 0; j < c; ++j) row_sum += rep.confusion[i][j];
    for (int64_t j = 0; j < c; ++j) {
      float v = row_sum > 0 ? static_cast<float>(rep.confusion[i][j]) / row_sum : 0.0f;
      float r = 1.0f - 0.85f * v, g = 1.0f - 0.65f * v, b = 1.0f - 0.25f * v;
      for (int64_t y = i * kCell; y < (i + 1) * kCell; ++y)
        for (int64_t x = j * kCell; x < (j + 1) * kCell; ++x) {
          img.at3(0, y, x) = r;
          img.at3(1, y, x) = g;
          img.at3(2, y, x) = b;
        }
    }
  }
  img::write_png_rgb(out_dir + "/confusion.png", img);
}

void emit_verification_reports(const FoldReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/metrics.csv");
    if (!f) throw IoError("cannot write " + out_dir + "/metrics.csv");
    f << "metric,value\n";
    f << "mean_accuracy," << fmt9(rep.mean) << '\n';
    f << "accuracy_std," << fmt9(rep.stddev) << '\n';
    f << "accuracy_stderr," << fmt9(rep.stderr_mean) << '\n';
  }
  std::ofstream f(out_dir + "/folds.csv");
  if (!f) throw IoError("cannot write " + out_dir + "/folds.csv");
  f << "fold,accuracy\n";
  for (size_t i = 0; i < rep.accuracies.size(); ++i)
    f << i << ',' << fmt9(rep.accuracies[i]) << '\n';
}

std::vector<std::pair<std::string, double>> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != "metric,value")
    throw CorruptFileError("bad metrics header in " + path);
  std::vector<std::pair<std::string, double>> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw CorruptFileError("bad metrics row in " + path);
    out.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
  }
  return out;
}

}  // namespace lf::probe
