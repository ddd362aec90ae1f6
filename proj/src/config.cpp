#include "latentface/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>

namespace lf::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& level,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidInputError("config section " + level + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw InvalidInputError("unknown config key: " + level + "." + key);
  }
}

template <class T>
void take(const json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

}  // namespace

RunConfig config_from_json(const json& j) {
  check_keys(j, "config", {"seed", "threads", "paths", "stage1", "stage2", "probe", "synth"});
  RunConfig cfg;
  take(j, "seed", cfg.seed);
  take(j, "threads", cfg.threads);
  if (cfg.threads < 1) throw InvalidInputError("config.threads must be >= 1");

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, "paths", {"corpus", "out", "stage1", "rdm_tex", "rdm_shape", "image"});
    take(p, "corpus", cfg.paths.corpus);
    take(p, "out", cfg.paths.out);
    take(p, "stage1", cfg.paths.stage1);
    take(p, "rdm_tex", cfg.paths.rdm_tex);
    take(p, "rdm_shape", cfg.paths.rdm_shape);
    take(p, "image", cfg.paths.image);
  }
  if (j.contains("stage1")) {
    const json& s = j.at("stage1");
    check_keys(s, "stage1",
               {"epochs", "batch_size", "learning_rate", "lambda_f", "lambda_flip",
                "disable_light", "disable_pose", "disable_shape", "disable_texture"});
    take(s, "epochs", cfg.stage1.epochs);
    take(s, "batch_size", cfg.stage1.batch_size);
    take(s, "learning_rate", cfg.stage1.learning_rate);
    take(s, "lambda_f", cfg.stage1.lambda_f);
    take(s, "lambda_flip", cfg.stage1.lambda_flip);
    take(s, "disable_light", cfg.stage1.disable_light);
    take(s, "disable_pose", cfg.stage1.disable_pose);
    take(s, "disable_shape", cfg.stage1.disable_shape);
    take(s, "disable_texture", cfg.stage1.disable_texture);
  }
  if (j.contains("stage2")) {
    const json& s = j.at("stage2");
    check_keys(s, "stage2", {"epochs", "batch_size", "learning_rate", "T", "S", "n_frames"});
    take(s, "epochs", cfg.stage2.epochs);
    take(s, "batch_size", cfg.stage2.batch_size);
    take(s, "learning_rate", cfg.stage2.learning_rate);
    take(s, "T", cfg.stage2.T);
    take(s, "S", cfg.stage2.S);
    take(s, "n_frames", cfg.stage2.n_frames);
  }
  if (j.contains("probe")) {
    const json& s = j.at("probe");
    check_keys(s, "probe", {"epochs", "batch_size", "learning_rate"});
    take(s, "epochs", cfg.probe.epochs);
    take(s, "batch_size", cfg.probe.batch_size);
    take(s, "learning_rate", cfg.probe.learning_rate);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s, "synth", {"identities", "frames", "pos_pairs", "neg_pairs"});
    take(s, "identities", cfg.synth.identities);
    take(s, "frames", cfg.synth.frames);
    take(s, "pos_pairs", cfg.synth.pos_pairs);
    take(s, "neg_pairs", cfg.synth.neg_pairs);
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["paths"] = {{"corpus", cfg.paths.corpus},   {"out", cfg.paths.out},
                {"stage1", cfg.paths.stage1},   {"rdm_tex", cfg.paths.rdm_tex},
                {"rdm_shape", cfg.paths.rdm_shape}, {"image", cfg.paths.image}};
  j["stage1"] = {{"epochs", cfg.stage1.epochs},
                 {"batch_size", cfg.stage1.batch_size},
                 {"learning_rate", cfg.stage1.learning_rate},
                 {"lambda_f", cfg.stage1.lambda_f},
                 {"lambda_flip", cfg.stage1.lambda_flip},
                 {"disable_light", cfg.stage1.disable_light},
                 {"disable_pose", cfg.stage1.disable_pose},
                 {"disable_shape", cfg.stage1.disable_shape},
                 {"disable_texture", cfg.stage1.disable_texture}};
  j["stage2"] = {{"epochs", cfg.stage2.epochs},   {"batch_size", cfg.stage2.batch_size},
                 {"learning_rate", cfg.stage2.learning_rate}, {"T", cfg.stage2.T},
                 {"S", cfg.stage2.S},             {"n_frames", cfg.stage2.n_frames}};
  j["probe"] = {{"epochs", cfg.probe.epochs},
                {"batch_size", cfg.probe.batch_size},
                {"learning_rate", cfg.probe.learning_rate}};
  j["synth"] = {{"identities", cfg.synth.identities},
                {"frames", cfg.synth.frames},
                {"pos_pairs", cfg.synth.pos_pairs},
                {"neg_pairs", cfg.synth.neg_pairs}};
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw InvalidInputError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void write_resolved(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::string path = out_dir + "/resolved_config.json";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace lf::config
