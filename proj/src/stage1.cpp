#include "latentface/stage1.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace lf::stage1 {

namespace fs = std::filesystem;
using nlohmann::json;

json widths_to_json(const nets::Widths& ws) {
  return json{{"latent", ws.latent},     {"enc", ws.enc},
              {"num", ws.num},           {"dec", ws.dec},
              {"conf_enc", ws.conf_enc}, {"conf_dec", ws.conf_dec},
              {"conf_short", ws.conf_short}, {"feat", ws.feat}};
}

nets::Widths widths_from_json(const json& j) {
  nets::Widths ws;
  ws.latent = j.at("latent").get<int64_t>();
  ws.enc = j.at("enc").get<std::vector<int64_t>>();
  ws.num = j.at("num").get<std::vector<int64_t>>();
  ws.dec = j.at("dec").get<std::vector<int64_t>>();
  ws.conf_enc = j.at("conf_enc").get<std::vector<int64_t>>();
  ws.conf_dec = j.at("conf_dec").get<std::vector<int64_t>>();
  ws.conf_short = j.at("conf_short").get<int64_t>();
  ws.feat = j.at("feat").get<std::vector<int64_t>>();
  return ws;
}

json config_to_json(const Config& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"lambda_f", c.lambda_f},
              {"lambda_flip", c.lambda_flip},
              {"seed", c.seed},
              {"disable_light", c.disable_light},
              {"disable_pose", c.disable_pose},
              {"disable_shape", c.disable_shape},
              {"disable_texture", c.disable_texture}};
}

Config config_from_json(const json& j) {
  Config c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<float>();
  c.lambda_f = j.at("lambda_f").get<float>();
  c.lambda_flip = j.at("lambda_flip").get<float>();
  c.seed = j.at("seed").get<uint64_t>();
  c.disable_light = j.at("disable_light").get<bool>();
  c.disable_pose = j.at("disable_pose").get<bool>();
  c.disable_shape = j.at("disable_shape").get<bool>();
  c.disable_texture = j.at("disable_texture").get<bool>();
  return c;
}

ckpt::Checkpoint model_checkpoint(const Model<float>& m, const Config& cfg, int epoch) {
  json meta;
  meta["arch"] = kArch;
  meta["widths"] = widths_to_json(m.ws);
  meta["config"] = config_to_json(cfg);
  meta["epoch"] = epoch;
  meta["image_size"] = m.image_size;
  return ckpt::from_params(m.ps, std::move(meta));
}

LoadedStage1 load_stage1(const std::string& path) {
  ckpt::Checkpoint ck = ckpt::load(path);
  if (!ck.meta.contains("widths") || !ck.meta.contains("config"))
    throw VersionMismatchError("checkpoint lacks model metadata: " + path);
  LoadedStage1 out{Model<float>(widths_from_json(ck.meta.at("widths")), 0),
                   config_from_json(ck.meta.at("config"))};
  ckpt::load_params(ck, out.model.ps, kArch);
  return out;
}

namespace {

void check_finite(const LossReport& r, int epoch, int step) {
  auto bad = [](double v) { return !std::isfinite(v); };
  const char* term = bad(r.lp)        ? "lp"
                     : bad(r.lf)      ? "lf"
                     : bad(r.lp_flip) ? "lp_flip"
                     : bad(r.lf_flip) ? "lf_flip"
                     : bad(r.total)   ? "total"
                                      : nullptr;
  if (term)
    throw NumericalError("non-finite loss term " + std::string(term) + " at epoch " +
                         std::to_string(epoch) + " step " + std::to_string(step));
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TrainSummary train_stage1(const data::Corpus& corpus, const Config& cfg, const nets::Widths& ws,
                          const std::string& out_dir) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw InvalidInputError("bad training config");
  auto train_idx = corpus.split_indices("train");
  if (static_cast<int64_t>(train_idx.size()) < cfg.batch_size)
    throw DataError("training split smaller than one batch");

  Model<float> model(ws, cfg.seed);
  if (model.image_size != 64) throw InvalidInputError("training expects a 64x64 model");
  Tensor all = data::load_batch(corpus, train_idx);
  const int64_t m_count = all.dim(0);
  const int64_t px = 3 * 64 * 64;

  fs::create_directories(out_dir);
  TrainSummary sum;
  sum.loss_csv = out_dir + "/loss.csv";
  sum.best_path = out_dir + "/stage1_best.lfck";
  sum.last_path = out_dir + "/stage1_last.lfck";
  std::ofstream csv(sum.loss_csv);
  if (!csv) throw IoError("cannot write " + sum.loss_csv);
  csv << "epoch,step,lp,lf,lp_flip,lf_flip,total\n";

  ad::Adam<float> opt(model.ps, cfg.learning_rate);
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = data::plan_batches(m_count, cfg.batch_size, cfg.seed, epoch);
    double epoch_sum = 0;
    int step = 0;
    for (const auto& bidx : batches) {
      ++step;
      const int64_t bn = static_cast<int64_t>(bidx.size());
      Tensor batch({bn, 3, 64, 64});
      for (int64_t i = 0; i < bn; ++i)
        std::copy_n(all.data.data() + bidx[i] * px, px, batch.data.data() + i * px);

      auto fw = forward_autoencode(model, batch, cfg);
      auto losses = reconstruction_loss(model, batch, fw, cfg);
      check_finite(losses.report, epoch, step);
      model.ps.zero_grad();
      ad::backward(losses.total);
      opt.step();

      csv << epoch << ',' << step << ',' << fmt9(losses.report.lp) << ','
          << fmt9(losses.report.lf) << ',' << fmt9(losses.report.lp_flip) << ','
          << fmt9(losses.report.lf_flip) << ',' << fmt9(losses.report.total) << '\n';
      epoch_sum += losses.report.total;
    }
    csv.flush();
    double mean_total = epoch_sum / step;
    sum.epochs.push_back({epoch, mean_total});
    std::printf("epoch %d/%d mean loss %.5f\n", epoch, cfg.epochs, mean_total);
    std::fflush(stdout);
    if (mean_total < best) {
      best = mean_total;
      sum.best_epoch = epoch;
      ckpt::save(sum.best_path, model_checkpoint(model, cfg, epoch));
    }
  }
  ckpt::save(sum.last_path, model_checkpoint(model, cfg, cfg.epochs));
  return sum;
}

std::vector<EvalRow> evaluate(const Model<float>& m, const Config& cfg,
                              const data::Corpus& corpus, const std::vector<int64_t>& indices,
                              int batch_size) {
  if (batch_size < 1) throw InvalidInputError("evaluate: batch_size >= 1");
  std::vector<EvalRow> rows;
  rows.reserve(indices.size());
  const int64_t px = 3 * m.image_size * m.image_size;
  for (size_t off = 0; off < indices.size(); off += static_cast<size_t>(batch_size)) {
    size_t end = std::min(indices.size(), off + static_cast<size_t>(batch_size));
    std::vector<int64_t> chunk(indices.begin() + off, indices.begin() + end);
    Tensor batch = data::load_batch(corpus, chunk);
    auto fw = forward_autoencode(m, batch, cfg);
    const auto& recon = fw.recon.value();
    const auto& pose = fw.pose_params.value();
    const auto& light = fw.light_params.value();
    for (int64_t i = 0; i < batch.dim(0); ++i) {
      double mse = 0;
      for (int64_t k = 0; k < px; ++k) {
        double r = std::clamp<double>(recon[i * px + k], 0.0, 1.0);
        double d = r - batch[i * px + k];
        mse += d * d;
      }
      mse /= static_cast<double>(px);
      EvalRow row;
      row.psnr = mse <= 0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
      for (int k = 0; k < 6; ++k) row.pose[k] = pose.at2(i, k);
      for (int k = 0; k < 4; ++k) row.light[k] = light.at2(i, k);
      rows.push_back(row);
    }
  }
  return rows;
}

ReconOut reconstruct_one(const Model<float>& m, const Config& cfg, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != m.image_size ||
      image.dim(2) != m.image_size)
    throw InvalidInputError("reconstruct_one: image must be 3 x S x S for the model size");
  Tensor batch({1, 3, m.image_size, m.image_size});
  std::copy_n(image.data.data(), image.numel(), batch.data.data());
  auto fw = forward_autoencode(m, batch, cfg);

  ReconOut out;
  const int64_t s = m.image_size;
  out.recon = Tensor({3, s, s});
  std::copy_n(fw.recon.value().data.data(), 3 * s * s, out.recon.data.data());
  out.albedo = Tensor({3, s, s});
  std::copy_n(fw.albedo.value().data.data(), 3 * s * s, out.albedo.data.data());
  out.depth = Tensor({s, s});
  std::copy_n(fw.depth.value().data.data(), s * s, out.depth.data.data());
  out.frontal = render::frontalize(out.albedo, out.depth, m.cam).image;
  return out;
}

}  // namespace lf::stage1
