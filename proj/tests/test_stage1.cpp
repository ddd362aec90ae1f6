#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "latentface/gradcheck.hpp"
#include "latentface/stage1.hpp"
#include "latentface/synth.hpp"

using namespace lf;
using lftest::TempDir;

TEST_CASE("confidence loss closed forms") {
  Rng rng(31);
  const int64_t c = 3, hw = 6;
  DTensor pred = lftest::rand_tensor({c, hw, hw}, rng, 0.0, 1.0);
  DTensor target = lftest::rand_tensor({c, hw, hw}, rng, 0.0, 1.0);
  TensorT<uint8_t> mask({hw, hw});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (i % 3 != 0) ? 1 : 0;

  // channel-mean residual per pixel
  auto residual = [&](int64_t i, int64_t j) {
    double d = 0;
    for (int64_t k = 0; k < c; ++k) d += std::abs(pred.at3(k, i, j) - target.at3(k, i, j));
    return d / static_cast<double>(c);
  };

  // sigma = 1/sqrt(2): the density term vanishes and the loss is twice the
  // mean residual
  DTensor sig_inv = DTensor::full({hw, hw}, 1.0 / std::sqrt(2.0));
  double got = stage1::conf_loss(pred, target, sig_inv, mask);
  double want = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t j = 0; j < hw; ++j)
      if (mask.at2(i, j)) {
        want += 2.0 * residual(i, j);
        ++count;
      }
  want /= static_cast<double>(count);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));

  // zero residual leaves only the log normalizer
  DTensor sig = DTensor::full({hw, hw}, 0.8);
  double zero_res = stage1::conf_loss(pred, pred, sig, mask);
  CHECK(zero_res == doctest::Approx(std::log(std::sqrt(2.0) * 0.8)).epsilon(1e-12));

  // for a uniform residual the optimal uniform sigma is sqrt(2) d
  DTensor shifted = target;
  const double d0 = 0.07;
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] = target[i] + d0;
  double best_sigma = 0, best = 1e300;
  for (double s = 1e-3; s < 1.0; s += 1e-5) {
    DTensor su = DTensor::full({hw, hw}, s);
    double v = stage1::conf_loss(shifted, target, su, mask);
    if (v < best) {
      best = v;
      best_sigma = s;
    }
  }
  CHECK(std::abs(best_sigma - std::sqrt(2.0) * d0) < 1e-4);

  // guards
  DTensor sbad = DTensor::full({hw, hw}, 0.5);
  sbad.at2(1, 1) = 0.0;
  CHECK_THROWS_AS(stage1::conf_loss(pred, target, sbad, mask), InvalidInputError);
  TensorT<uint8_t> empty({hw, hw});
  CHECK_THROWS_AS(stage1::conf_loss(pred, target, sig, empty), InvalidInputError);
  DTensor small({c, hw, hw - 1});
  CHECK_THROWS_AS(stage1::conf_loss(small, target, sig, mask), InvalidInputError);
}

TEST_CASE("loss report decomposes the weighted total") {
  stage1::Model<float> m(nets::Widths::tiny8(), 11);
  Rng rng(12);
  Tensor images({2, 3, 8, 8});
  images.fill_uniform(rng, 0.0, 1.0);
  stage1::Config cfg;
  cfg.lambda_f = 0.7f;
  cfg.lambda_flip = 0.5f;
  auto fw = stage1::forward_autoencode(m, images, cfg);
  auto losses = stage1::reconstruction_loss(m, images, fw, cfg);
  const auto& r = losses.report;
  CHECK(r.total ==
        doctest::Approx(r.lp + 0.7 * r.lf + 0.5 * (r.lp_flip + 0.7 * r.lf_flip)).epsilon(1e-5));

  stage1::Config no_flip = cfg;
  no_flip.lambda_flip = 0.0f;
  auto fw2 = stage1::forward_autoencode(m, images, no_flip);
  auto l2 = stage1::reconstruction_loss(m, images, fw2, no_flip);
  CHECK(l2.report.total == doctest::Approx(l2.report.lp + 0.7 * l2.report.lf).epsilon(1e-5));

  stage1::Config neg = cfg;
  neg.lambda_flip = -1.f;
  CHECK_THROWS_AS(stage1::reconstruction_loss(m, images, fw, neg), InvalidInputError);
}

TEST_CASE("ablation flags pin factors to their neutral constants") {
  stage1::Model<float> m(nets::Widths::tiny8(), 4);
  Rng rng(5);
  Tensor images({1, 3, 8, 8});
  images.fill_uniform(rng, 0.0, 1.0);

  stage1::Config cfg;
  cfg.disable_pose = true;
  auto fw = stage1::forward_autoencode(m, images, cfg);
  for (int64_t k = 0; k < 6; ++k) CHECK(fw.pose_params.value().at2(0, k) == 0.f);

  cfg = {};
  cfg.disable_light = true;
  fw = stage1::forward_autoencode(m, images, cfg);
  CHECK(fw.light_params.value().at2(0, 0) == 0.7f);
  CHECK(fw.light_params.value().at2(0, 1) == 0.3f);
  CHECK(fw.light_params.value().at2(0, 2) == 0.f);
  CHECK(fw.light_params.value().at2(0, 3) == 0.f);

  cfg = {};
  cfg.disable_shape = true;
  fw = stage1::forward_autoencode(m, images, cfg);
  for (int64_t i = 0; i < fw.depth.value().numel(); ++i) CHECK(fw.depth.value()[i] == 1.f);

  cfg = {};
  cfg.disable_texture = true;
  fw = stage1::forward_autoencode(m, images, cfg);
  for (int64_t i = 0; i < fw.albedo.value().numel(); ++i) CHECK(fw.albedo.value()[i] == 0.5f);
}

TEST_CASE("latent gradients survive decoding, rendering, and both loss paths") {
  double err = gradcheck::pipeline_latent_max_rel_err(2, 1e-4, 0);
  CAPTURE(err);
  CHECK(err < 1e-3);
}

TEST_CASE("stage-1 checkpoints restore the exact model") {
  TempDir tmp;
  stage1::Model<float> m(nets::Widths::tiny8(), 77);
  stage1::Config cfg;
  cfg.epochs = 12;
  cfg.learning_rate = 3e-4f;
  cfg.disable_light = true;
  cfg.seed = 9;
  auto ck = stage1::model_checkpoint(m, cfg, 5);
  std::string path = tmp / "stage1.lfck";
  ckpt::save(path, ck);

  auto loaded = stage1::load_stage1(path);
  CHECK(loaded.cfg.epochs == 12);
  CHECK(loaded.cfg.learning_rate == 3e-4f);
  CHECK(loaded.cfg.disable_light);
  CHECK(loaded.model.image_size == 8);
  REQUIRE(loaded.model.ps.size() == m.ps.size());
  for (size_t i = 0; i < m.ps.items().size(); ++i) {
    CHECK(loaded.model.ps.items()[i].first == m.ps.items()[i].first);
    CHECK(loaded.model.ps.items()[i].second.value().data ==
          m.ps.items()[i].second.value().data);
  }

  // a checkpoint from another component must not load as stage 1
  ad::ParamStore<float> other;
  other.add("x", Tensor({2}));
  std::string alien = tmp / "alien.lfck";
  ckpt::save(alien, ckpt::from_params(other, {{"arch", "somewhere-else-v1"}}));
  CHECK_THROWS_AS(stage1::load_stage1(alien), VersionMismatchError);
}

TEST_CASE("stage-1 config and widths survive the json round trip") {
  stage1::Config cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.learning_rate = 2e-3f;
  cfg.lambda_f = 0.25f;
  cfg.lambda_flip = 0.f;
  cfg.seed = 1234;
  cfg.disable_pose = true;
  auto back = stage1::config_from_json(stage1::config_to_json(cfg));
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.lambda_f == cfg.lambda_f);
  CHECK(back.lambda_flip == cfg.lambda_flip);
  CHECK(back.seed == cfg.seed);
  CHECK(back.disable_pose == cfg.disable_pose);
  CHECK(back.disable_light == cfg.disable_light);

  nets::Widths ws = nets::Widths::tiny8();
  nets::Widths wback = stage1::widths_from_json(stage1::widths_to_json(ws));
  CHECK(wback.latent == ws.latent);
  CHECK(wback.enc == ws.enc);
  CHECK(wback.dec == ws.dec);
  CHECK(wback.conf_enc == ws.conf_enc);
  CHECK(wback.conf_short == ws.conf_short);
  CHECK(wback.feat == ws.feat);
}

TEST_CASE("short training runs descend, evaluate, and reproduce bitwise") {
  TempDir corpus_dir;
  synth::DatasetSpec spec;
  spec.n_identities = 5;
  spec.frames_per_identity = 3;
  spec.seed = 55;
  synth::gen_dataset(spec, corpus_dir.str());
  data::Corpus corpus = data::Corpus::open(corpus_dir.str());

  stage1::Config cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3f;
  cfg.seed = 21;

  TempDir out_a;
  auto sum_a = stage1::train_stage1(corpus, cfg, nets::Widths::tiny(), out_a.str());
  REQUIRE(sum_a.epochs.size() == 2);
  for (auto& e : sum_a.epochs) CHECK(std::isfinite(e.mean_total));
  CHECK(std::filesystem::exists(sum_a.best_path));
  CHECK(std::filesystem::exists(sum_a.last_path));
  CHECK(std::filesystem::exists(sum_a.loss_csv));
  {
    std::ifstream csv(sum_a.loss_csv);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "epoch,step,lp,lf,lp_flip,lf_flip,total");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 2 * 3);  // 12 train images, batches of 4
  }

  TempDir out_b;
  auto sum_b = stage1::train_stage1(corpus, cfg, nets::Widths::tiny(), out_b.str());
  CHECK(ckpt::file_crc32(sum_a.last_path) == ckpt::file_crc32(sum_b.last_path));
  CHECK(ckpt::file_crc32(sum_a.best_path) == ckpt::file_crc32(sum_b.best_path));

  auto loaded = stage1::load_stage1(sum_a.best_path);
  auto eval_rows = stage1::evaluate(loaded.model, loaded.cfg, corpus,
                                    corpus.split_indices("eval"), 4);
  REQUIRE(eval_rows.size() == 3);
  for (auto& r : eval_rows) {
    CHECK(std::isfinite(r.psnr));
    CHECK(r.psnr > 0.0);
    CHECK(std::abs(r.pose[0]) <= render::kYawMax + 1e-6);
    CHECK(r.light[0] >= 0.0);
    CHECK(r.light[0] <= 1.0);
  }

  auto rec = stage1::reconstruct_one(loaded.model, loaded.cfg,
                                     data::load_image(corpus.abs_path(corpus.samples[0].path)));
  CHECK(rec.recon.shape == std::vector<int64_t>({3, 64, 64}));
  CHECK(rec.frontal.shape == std::vector<int64_t>({3, 64, 64}));
  CHECK(rec.albedo.shape == std::vector<int64_t>({3, 64, 64}));
  CHECK(rec.depth.shape == std::vector<int64_t>({64, 64}));
  for (int64_t i = 0; i < rec.depth.numel(); ++i) {
    CHECK(rec.depth[i] >= 0.9f);
    CHECK(rec.depth[i] <= 1.1f);
  }
}
