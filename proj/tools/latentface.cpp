#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentface/checkpoint.hpp"
#include "latentface/config.hpp"
#include "latentface/data.hpp"
#include "latentface/gradcheck.hpp"
#include "latentface/image_io.hpp"
#include "latentface/probe.hpp"
#include "latentface/rdm.hpp"
#include "latentface/stage1.hpp"
#include "latentface/synth.hpp"

namespace fs = std::filesystem;
using namespace lf;

namespace {

std::string require_path(const std::string& value, const char* flag) {
  if (value.empty())
    throw InvalidInputError(std::string("missing required path; pass ") + flag +
                            " or set it in the config file");
  return value;
}

rdm::RdmModel load_rdm_checked(const std::string& path, const std::string& stage1_path) {
  rdm::RdmModel m = rdm::load_rdm(path);
  if (!stage1_path.empty() && m.meta.contains("stage1_crc32")) {
    uint32_t want = m.meta.at("stage1_crc32").get<uint32_t>();
    uint32_t got = ckpt::file_crc32(stage1_path);
    if (want != got)
      throw VersionMismatchError("denoiser " + path +
                                 " was trained against a different stage-1 checkpoint");
  }
  return m;
}

int cmd_synth(const config::RunConfig& cfg) {
  std::string root = require_path(cfg.paths.out, "--out");
  if (cfg.synth.identities < 1 || cfg.synth.frames < 1)
    throw InvalidInputError("synth needs at least one identity and one frame");
  synth::DatasetSpec spec;
  spec.n_identities = cfg.synth.identities;
  spec.frames_per_identity = cfg.synth.frames;
  spec.seed = cfg.seed;
  spec.pos_pairs = cfg.synth.pos_pairs;
  spec.neg_pairs = cfg.synth.neg_pairs;
  synth::gen_dataset(spec, root);
  config::write_resolved(cfg, root);
  std::printf("corpus written to %s (%d identities x %d frames)\n", root.c_str(),
              spec.n_identities, spec.frames_per_identity);
  return 0;
}

int cmd_train(config::RunConfig cfg, int stage, const std::string& ablate) {
  std::string out = require_path(cfg.paths.out, "--out");
  data::Corpus corpus = data::Corpus::open(require_path(cfg.paths.corpus, "--corpus"));

  for (size_t pos = 0; pos < ablate.size();) {
    size_t comma = ablate.find(',', pos);
    if (comma == std::string::npos) comma = ablate.size();
    std::string tok = ablate.substr(pos, comma - pos);
    if (tok == "pose")
      cfg.stage1.disable_pose = true;
    else if (tok == "light")
      cfg.stage1.disable_light = true;
    else if (tok == "shape")
      cfg.stage1.disable_shape = true;
    else if (tok == "texture")
      cfg.stage1.disable_texture = true;
    else if (!tok.empty())
      throw InvalidInputError("unknown --ablate factor: " + tok);
    pos = comma + 1;
  }

  if (stage == 1) {
    cfg.stage1.seed = cfg.seed;
    config::write_resolved(cfg, out);
    auto sum = stage1::train_stage1(corpus, cfg.stage1, nets::Widths{}, out);
    std::printf("best epoch %d; checkpoints: %s %s\n", sum.best_epoch, sum.best_path.c_str(),
                sum.last_path.c_str());
    return 0;
  }

  if (cfg.paths.stage1.empty())
    throw InvalidInputError("stage 2 training requires --stage1 <stage-1 checkpoint>");
  cfg.stage2.seed = cfg.seed;
  config::write_resolved(cfg, out);
  auto ls = stage1::load_stage1(cfg.paths.stage1);
  uint32_t crc = ckpt::file_crc32(cfg.paths.stage1);

  auto seqs = rdm::encode_sequences(ls.model, corpus, "train");
  nlohmann::json pack_meta;
  pack_meta["stage1_crc32"] = crc;
  pack_meta["split"] = "train";
  rdm::save_latent_pack(out + "/latents_train.lfck", seqs, pack_meta);
  auto dataset = rdm::build_rdm_dataset(seqs, cfg.stage2.n_frames, cfg.seed);

  for (const char* head : {rdm::kHeadTex, rdm::kHeadShape}) {
    auto sum = rdm::train_stage2(dataset, head, cfg.stage2, crc, out);
    std::printf("denoiser %s: final epoch mean loss %.6f -> %s\n", head,
                sum.epochs.back().mean_total, sum.ckpt_path.c_str());
    auto bsum = rdm::train_baseline(dataset, head, cfg.stage2, crc, out);
    std::printf("baseline %s: final epoch mean loss %.6f -> %s\n", head,
                bsum.epochs.back().mean_total, bsum.ckpt_path.c_str());
  }
  return 0;
}

int cmd_render(const config::RunConfig& cfg, const std::string& pose_arg) {
  std::string out = require_path(cfg.paths.out, "--out");
  auto ls = stage1::load_stage1(require_path(cfg.paths.stage1, "--ckpt"));
  Tensor image = data::load_image(require_path(cfg.paths.image, "--image"));
  auto rec = stage1::reconstruct_one(ls.model, ls.cfg, image);

  fs::create_directories(out);
  config::write_resolved(cfg, out);
  img::write_png_rgb(out + "/recon.png", rec.recon);
  img::write_png_rgb(out + "/frontal.png", rec.frontal);
  img::write_png_rgb(out + "/albedo.png", rec.albedo);
  img::write_pgm(out + "/depth.pgm", rec.depth, 0.9, 1.1);

  if (!pose_arg.empty()) {
    render::PoseT<float> pose;
    float deg[3];
    if (std::sscanf(pose_arg.c_str(), "%f,%f,%f", &deg[0], &deg[1], &deg[2]) != 3)
      throw InvalidInputError("--pose expects yaw,pitch,roll in degrees");
    pose.yaw = deg[0] * static_cast<float>(M_PI) / 180.0f;
    pose.pitch = deg[1] * static_cast<float>(M_PI) / 180.0f;
    pose.roll = deg[2] * static_cast<float>(M_PI) / 180.0f;
    if (std::abs(pose.yaw) > render::kYawMax || std::abs(pose.pitch) > render::kPitchMax ||
        std::abs(pose.roll) > render::kRollMax)
      throw InvalidInputError("--pose outside the supported ranges (60, 30, 30 degrees)");
    auto posed = render::render(rec.albedo, rec.depth, pose, render::LightT<float>::neutral(),
                                ls.model.cam);
    img::write_png_rgb(out + "/posed.png", posed.image);
  }
  std::printf("renders written to %s\n", out.c_str());
  return 0;
}

int cmd_extract(const config::RunConfig& cfg, const std::string& split,
                const std::string& variant_name) {
  std::string out = require_path(cfg.paths.out, "--out");
  probe::Variant variant = probe::variant_from_string(variant_name);
  std::string s1 = require_path(cfg.paths.stage1, "--stage1");
  auto ls = stage1::load_stage1(s1);
  auto rdm_tex = load_rdm_checked(require_path(cfg.paths.rdm_tex, "--rdm-tex"), s1);
  auto rdm_shape = load_rdm_checked(require_path(cfg.paths.rdm_shape, "--rdm-shape"), s1);
  data::Corpus corpus = data::Corpus::open(require_path(cfg.paths.corpus, "--corpus"));

  auto sched = diffusion::make_schedule(cfg.stage2.T);
  auto fs_set = probe::extract_features(ls.model, rdm_tex, rdm_shape, corpus, split, variant,
                                        sched, cfg.stage2.S, cfg.seed);
  fs::create_directories(out);
  config::write_resolved(cfg, out);
  std::string pack = out + "/features_" + variant_name + "_" + split + ".lfck";
  probe::save_feature_pack(pack, fs_set, variant);
  std::printf("%lld x %lld features -> %s\n", static_cast<long long>(fs_set.features.dim(0)),
              static_cast<long long>(fs_set.features.dim(1)), pack.c_str());
  return 0;
}

int cmd_probe(config::RunConfig cfg, const std::string& task, const std::string& train_pack,
              const std::string& eval_pack) {
  if (task != "fer") throw InvalidInputError("unknown probe task: " + task);
  std::string out = require_path(cfg.paths.out, "--out");
  cfg.probe.seed = cfg.seed;

  probe::FeatureSet train_fs, eval_fs;
  if (!train_pack.empty() || !eval_pack.empty()) {
    if (train_pack.empty() || eval_pack.empty())
      throw InvalidInputError("pass both --train-features and --eval-features");
    train_fs = probe::load_feature_pack(train_pack);
    eval_fs = probe::load_feature_pack(eval_pack);
  } else {
    std::string s1 = require_path(cfg.paths.stage1, "--stage1");
    auto ls = stage1::load_stage1(s1);
    auto rdm_tex = load_rdm_checked(require_path(cfg.paths.rdm_tex, "--rdm-tex"), s1);
    auto rdm_shape = load_rdm_checked(require_path(cfg.paths.rdm_shape, "--rdm-shape"), s1);
    data::Corpus corpus = data::Corpus::open(require_path(cfg.paths.corpus, "--corpus"));
    auto sched = diffusion::make_schedule(cfg.stage2.T);
    train_fs = probe::extract_features(ls.model, rdm_tex, rdm_shape, corpus, "train",
                                       probe::Variant::kFer, sched, cfg.stage2.S, cfg.seed);
    eval_fs = probe::extract_features(ls.model, rdm_tex, rdm_shape, corpus, "eval",
                                      probe::Variant::kFer, sched, cfg.stage2.S, cfg.seed);
  }

  auto head = probe::train_probe(train_fs.features, train_fs.labels, cfg.probe);
  auto rep = probe::eval_classification(head, eval_fs.features, eval_fs.labels);
  config::write_resolved(cfg, out);
  probe::emit_classification_reports(rep, out);
  std::printf("accuracy %.4f macro-F1 %.4f -> %s\n", rep.accuracy, rep.macro_f1, out.c_str());
  return 0;
}

int cmd_verify(config::RunConfig cfg, const std::string& split, const std::string& pack) {
  std::string out = require_path(cfg.paths.out, "--out");
  cfg.probe.seed = cfg.seed;
  data::Corpus corpus = data::Corpus::open(require_path(cfg.paths.corpus, "--corpus"));
  if (corpus.pairs.empty()) throw DataError("corpus has no pairs.csv");

  probe::FeatureSet fs_set;
  if (!pack.empty()) {
    fs_set = probe::load_feature_pack(pack);
  } else {
    std::string s1 = require_path(cfg.paths.stage1, "--stage1");
    auto ls = stage1::load_stage1(s1);
    auto rdm_tex = load_rdm_checked(require_path(cfg.paths.rdm_tex, "--rdm-tex"), s1);
    auto rdm_shape = load_rdm_checked(require_path(cfg.paths.rdm_shape, "--rdm-shape"), s1);
    auto sched = diffusion::make_schedule(cfg.stage2.T);
    fs_set = probe::extract_features(ls.model, rdm_tex, rdm_shape, corpus, split,
                                     probe::Variant::kVerify, sched, cfg.stage2.S, cfg.seed);
  }

  auto pairs = probe::make_pair_set(fs_set, corpus.pairs);
  auto rep = probe::verification_crossval(pairs.features, pairs.same, cfg.probe);
  config::write_resolved(cfg, out);
  probe::emit_verification_reports(rep, out);
  std::printf("verification mean accuracy %.4f +- %.4f -> %s\n", rep.mean, rep.stddev,
              out.c_str());
  return 0;
}

int cmd_check(const std::string& suite) {
  bool ok = true;
  if (suite == "grad" || suite == "all") {
    auto s = gradcheck::renderer_suite();
    for (const auto& g : s.groups)
      std::printf("grad %-8s max rel err %.3e\n", g.group.c_str(), g.max_rel_err);
    double pfd = gradcheck::pipeline_latent_max_rel_err();
    std::printf("grad %-8s max rel err %.3e\n", "pipeline", pfd);
    bool pass = s.pass && pfd < 1e-3;
    std::printf("gradient suite: %s\n", pass ? "pass" : "FAIL");
    ok = ok && pass;
  }
  if (suite == "invariants" || suite == "all") {
    bool pass = true;
    for (const auto& r : gradcheck::invariant_suite()) {
      std::printf("invariant %-28s %-4s %.3e\n", r.name.c_str(), r.pass ? "pass" : "FAIL",
                  r.value);
      pass = pass && r.pass;
    }
    std::printf("invariant suite: %s\n", pass ? "pass" : "FAIL");
    ok = ok && pass;
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentface: disentangled face autoencoding with latent diffusion"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed = 0;
  int threads = 0;
  auto* opt_config = app.add_option("--config", config_path, "JSON run configuration");
  auto* opt_seed = app.add_option("--seed", seed, "global seed");
  auto* opt_out = app.add_option("--out", out_dir, "output directory");
  auto* opt_threads = app.add_option("--threads", threads, "worker threads (env LATENTFACE_THREADS)");

  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic corpus");
  int identities = -1, frames = -1, pos_pairs = -1, neg_pairs = -1;
  synth_cmd->add_option("--identities", identities, "number of identities");
  synth_cmd->add_option("--frames", frames, "frames per identity");
  synth_cmd->add_option("--pos-pairs", pos_pairs, "requested positive pairs");
  synth_cmd->add_option("--neg-pairs", neg_pairs, "requested negative pairs");

  auto* train_cmd = app.add_subcommand("train", "train stage 1 or stage 2");
  int stage = 0;
  std::string corpus_path, stage1_path, ablate;
  int epochs = -1, batch_size = -1;
  double lr = -1;
  train_cmd->add_option("--stage", stage, "1 or 2")->required()->check(CLI::Range(1, 2));
  train_cmd->add_option("--corpus", corpus_path, "corpus root");
  train_cmd->add_option("--stage1", stage1_path, "stage-1 checkpoint (stage 2 input)");
  train_cmd->add_option("--ablate", ablate, "comma list: pose,light,shape,texture");
  train_cmd->add_option("--epochs", epochs, "override epochs");
  train_cmd->add_option("--batch-size", batch_size, "override batch size");
  train_cmd->add_option("--lr", lr, "override learning rate");

  auto* render_cmd = app.add_subcommand("render", "reconstruct and frontalize one image");
  std::string ckpt_path, image_path, pose_arg;
  render_cmd->add_option("--ckpt", ckpt_path, "stage-1 checkpoint");
  render_cmd->add_option("--image", image_path, "input image (PNG)");
  render_cmd->add_option("--pose", pose_arg, "yaw,pitch,roll override in degrees");

  auto* extract_cmd = app.add_subcommand("extract", "write a probe feature pack");
  std::string split = "eval", variant_name = "fer";
  std::string rdm_tex_path, rdm_shape_path;
  extract_cmd->add_option("--corpus", corpus_path, "corpus root");
  extract_cmd->add_option("--split", split, "train or eval");
  extract_cmd->add_option("--stage1", stage1_path, "stage-1 checkpoint");
  extract_cmd->add_option("--rdm-tex", rdm_tex_path, "texture denoiser checkpoint");
  extract_cmd->add_option("--rdm-shape", rdm_shape_path, "shape denoiser checkpoint");
  extract_cmd->add_option("--variant", variant_name, "fer or verify");

  auto* probe_cmd = app.add_subcommand("probe", "linear expression probe");
  std::string task = "fer", train_pack, eval_pack;
  probe_cmd->add_option("--task", task, "probe task (fer)");
  probe_cmd->add_option("--corpus", corpus_path, "corpus root");
  probe_cmd->add_option("--stage1", stage1_path, "stage-1 checkpoint");
  probe_cmd->add_option("--rdm-tex", rdm_tex_path, "texture denoiser checkpoint");
  probe_cmd->add_option("--rdm-shape", rdm_shape_path, "shape denoiser checkpoint");
  probe_cmd->add_option("--train-features", train_pack, "feature pack for training");
  probe_cmd->add_option("--eval-features", eval_pack, "feature pack for evaluation");

  auto* verify_cmd = app.add_subcommand("verify", "10-fold pair verification");
  verify_cmd->add_option("--corpus", corpus_path, "corpus root (pairs.csv required)");
  verify_cmd->add_option("--split", split, "split holding the paired images");
  verify_cmd->add_option("--stage1", stage1_path, "stage-1 checkpoint");
  verify_cmd->add_option("--rdm-tex", rdm_tex_path, "texture denoiser checkpoint");
  verify_cmd->add_option("--rdm-shape", rdm_shape_path, "shape denoiser checkpoint");
  verify_cmd->add_option("--features", train_pack, "precomputed verify-variant feature pack");

  auto* check_cmd = app.add_subcommand("check", "gradient and invariant suites");
  std::string suite = "all";
  check_cmd->add_option("--suite", suite, "grad, invariants, or all")
      ->check(CLI::IsMember({"grad", "invariants", "all"}));

  for (auto* sub : {synth_cmd, train_cmd, render_cmd, extract_cmd, probe_cmd, verify_cmd,
                    check_cmd})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    config::RunConfig cfg;
    if (opt_config->count()) cfg = config::load_config(config_path);
    if (opt_seed->count()) cfg.seed = seed;
    if (opt_out->count()) cfg.paths.out = out_dir;
    if (opt_threads->count()) {
      cfg.threads = threads;
    } else if (const char* env = std::getenv("LATENTFACE_THREADS")) {
      cfg.threads = std::atoi(env);
    }
    if (cfg.threads < 1) throw InvalidInputError("--threads must be >= 1");

    if (synth_cmd->parsed()) {
      if (identities >= 0) cfg.synth.identities = identities;
      if (frames >= 0) cfg.synth.frames = frames;
      if (pos_pairs >= 0) cfg.synth.pos_pairs = pos_pairs;
      if (neg_pairs >= 0) cfg.synth.neg_pairs = neg_pairs;
      return cmd_synth(cfg);
    }
    if (!corpus_path.empty()) cfg.paths.corpus = corpus_path;
    if (!stage1_path.empty()) cfg.paths.stage1 = stage1_path;
    if (!rdm_tex_path.empty()) cfg.paths.rdm_tex = rdm_tex_path;
    if (!rdm_shape_path.empty()) cfg.paths.rdm_shape = rdm_shape_path;
    if (!ckpt_path.empty()) cfg.paths.stage1 = ckpt_path;
    if (!image_path.empty()) cfg.paths.image = image_path;

    if (train_cmd->parsed()) {
      if (epochs > 0) (stage == 1 ? cfg.stage1.epochs : cfg.stage2.epochs) = epochs;
      if (batch_size > 0) (stage == 1 ? cfg.stage1.batch_size : cfg.stage2.batch_size) = batch_size;
      if (lr > 0) {
        if (stage == 1)
          cfg.stage1.learning_rate = static_cast<float>(lr);
        else
          cfg.stage2.learning_rate = static_cast<float>(lr);
      }
      return cmd_train(std::move(cfg), stage, ablate);
    }
    if (render_cmd->parsed()) return cmd_render(cfg, pose_arg);
    if (extract_cmd->parsed()) return cmd_extract(cfg, split, variant_name);
    if (probe_cmd->parsed()) return cmd_probe(std::move(cfg), task, train_pack, eval_pack);
    if (verify_cmd->parsed()) return cmd_verify(std::move(cfg), split, train_pack);
    if (check_cmd->parsed()) return cmd_check(suite);
    throw InvalidInputError("no subcommand given");
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
