#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "latentface/probe.hpp"
#include "latentface/rdm.hpp"
#include "latentface/stage1.hpp"
#include "latentface/synth.hpp"

// Run configuration shared by every CLI command: one JSON document covering
// both training stages, corpus generation, and probing, plus the global seed
// and the paths a run touches. Unknown keys are rejected at every level, and
// each command writes the fully resolved document next to its outputs so a
// run can be reproduced from that file alone.
namespace lf::config {

struct Paths {
  std::string corpus;
  std::string out;
  std::string stage1;
  std::string rdm_tex;
  std::string rdm_shape;
  std::string image;
};

struct SynthParams {
  int identities = 64;
  int frames = 16;
  int pos_pairs = 300;
  int neg_pairs = 300;
};

struct RunConfig {
  uint64_t seed = 0;
  int threads = 1;
  Paths paths;
  stage1::Config stage1;  // per-run seed is filled from the global seed
  rdm::Stage2Config stage2;
  probe::ProbeConfig probe;
  SynthParams synth;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);
// <out_dir>/resolved_config.json
void write_resolved(const RunConfig& cfg, const std::string& out_dir);

}  // namespace lf::config
