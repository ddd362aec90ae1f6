#include "latentface/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "latentface/common.hpp"
#include "latentface/image_io.hpp"

namespace lf::synth {

namespace fs = std::filesystem;

namespace {

DTensor symmetrize(const DTensor& m) {
  DTensor flipped = hflip(m);
  DTensor out(m.shape);
  for (int64_t i = 0; i < m.numel(); ++i) out[i] = 0.5 * (m[i] + flipped[i]);
  return out;
}

// low-resolution uniform field upsampled to a smooth 64x64 map
DTensor smooth_field(Rng& rng, int64_t channels, double lo, double hi) {
  DTensor coarse({channels, 8, 8});
  coarse.fill_uniform(rng, lo, hi);
  return img::resize_bilinear(coarse, kImageSize, kImageSize);
}

double grid_coord(int64_t i) { return -1.0 + 2.0 * static_cast<double>(i) / (kImageSize - 1); }

std::string id_dir(int identity) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "id%04d", identity);
  return buf;
}

std::string frame_name(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f%02d", frame);
  return buf;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

uint64_t identity_seed(uint64_t corpus_seed, int identity) {
  return hash_mix(corpus_seed, hash_str("identity"), static_cast<uint64_t>(identity));
}

Identity gen_identity(uint64_t seed) {
  Identity ident;
  Rng rng(seed);
  ident.albedo = symmetrize(smooth_field(rng, 3, 0.2, 0.95));

  int bumps = static_cast<int>(rng.uniform_int(2, 4));
  DTensor field({kImageSize, kImageSize});
  for (int b = 0; b < bumps; ++b) {
    double cx = rng.uniform(-0.7, 0.7);
    double cy = rng.uniform(-0.7, 0.7);
    double sigma = rng.uniform(0.2, 0.6);
    double amp = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (int64_t i = 0; i < kImageSize; ++i)
      for (int64_t j = 0; j < kImageSize; ++j) {
        double dx = grid_coord(j) - cx, dy = grid_coord(i) - cy;
        field.at2(i, j) += amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
  }
  field = symmetrize(field);
  double lo = field[0], hi = field[0];
  for (int64_t i = 0; i < field.numel(); ++i) {
    lo = std::min(lo, field[i]);
    hi = std::max(hi, field[i]);
  }
  ident.depth = DTensor({kImageSize, kImageSize});
  for (int64_t i = 0; i < field.numel(); ++i)
    ident.depth[i] = hi > lo ? 0.9 + 0.2 * (field[i] - lo) / (hi - lo) : 1.0;
  return ident;
}

const ExpressionTemplate& expression_template(int cls) {
  if (cls < 0 || cls >= kNumClasses) throw InvalidInputError("unknown expression class");
  static std::vector<ExpressionTemplate> cache = [] {
    std::vector<ExpressionTemplate> v(kNumClasses);
    for (int e = 0; e < kNumClasses; ++e) {
      Rng rng(hash_mix(hash_str("expr-template"), static_cast<uint64_t>(e)));
      ExpressionTemplate t;
      DTensor a = symmetrize(smooth_field(rng, 3, -1.0, 1.0));
      t.albedo_delta = DTensor(a.shape);
      for (int64_t i = 0; i < a.numel(); ++i) t.albedo_delta[i] = 0.25 * a[i];
      DTensor d = symmetrize(smooth_field(rng, 1, -1.0, 1.0).reshaped({kImageSize, kImageSize}));
      t.depth_delta = DTensor(d.shape);
      for (int64_t i = 0; i < d.numel(); ++i) t.depth_delta[i] = 0.06 * d[i];
      v[e] = std::move(t);
    }
    return v;
  }();
  return cache[cls];
}

std::pair<DTensor, DTensor> gen_expression(const Identity& ident, int cls, double magnitude) {
  if (magnitude < 0.0 || magnitude > 1.0) throw InvalidInputError("magnitude must be in [0,1]");
  const ExpressionTemplate& t = expression_template(cls);
  DTensor albedo(ident.albedo.shape);
  for (int64_t i = 0; i < albedo.numel(); ++i)
    albedo[i] = std::clamp(ident.albedo[i] + magnitude * t.albedo_delta[i], 0.0, 1.0);
  DTensor depth(ident.depth.shape);
  for (int64_t i = 0; i < depth.numel(); ++i)
    depth[i] = std::clamp(ident.depth[i] + magnitude * t.depth_delta[i], 0.9, 1.1);
  return {std::move(albedo), std::move(depth)};
}

SampleParams draw_sample_params(uint64_t corpus_seed, int identity, int frame) {
  Rng rng(hash_mix(corpus_seed, static_cast<uint64_t>(identity), static_cast<uint64_t>(frame)));
  SampleParams p;
  p.identity = identity;
  p.frame = frame;
  p.cls = static_cast<int>(rng.uniform_int(0, kNumClasses - 1));
  p.magnitude = rng.uniform(0.3, 1.0);
  p.pose.yaw = rng.uniform(-render::kYawMax, render::kYawMax);
  p.pose.pitch = rng.uniform(-render::kPitchMax, render::kPitchMax);
  p.pose.roll = rng.uniform(-render::kRollMax, render::kRollMax);
  p.pose.tx = rng.uniform(-render::kTransMax, render::kTransMax);
  p.pose.ty = rng.uniform(-render::kTransMax, render::kTransMax);
  p.pose.tz = rng.uniform(-render::kTransMax, render::kTransMax);
  p.light.ka = rng.uniform(0.0, 1.0);
  p.light.kd = rng.uniform(0.0, 1.0);
  p.light.lx = rng.uniform(-1.0, 1.0);
  p.light.ly = rng.uniform(-1.0, 1.0);
  return p;
}

render::RenderOutputT<double> render_sample(uint64_t corpus_seed, const SampleParams& p) {
  Identity ident = gen_identity(identity_seed(corpus_seed, p.identity));
  auto [albedo, depth] = gen_expression(ident, p.cls, p.magnitude);
  return render::render(albedo, depth, p.pose, p.light, render::Camera::standard());
}

void gen_dataset(const DatasetSpec& spec, const std::string& root) {
  if (spec.n_identities < 1 || spec.frames_per_identity < 1)
    throw InvalidInputError("dataset counts must be >= 1");
  int n_train = static_cast<int>(std::floor(0.8 * spec.n_identities));
  fs::create_directories(root);

  std::ofstream labels(fs::path(root) / "labels.csv");
  if (!labels) throw IoError("cannot write labels.csv");
  labels << "split,identity,frame,class,magnitude,yaw,pitch,roll,tx,ty,tz,ka,kd,lx,ly\n";

  render::Camera cam = render::Camera::standard();
  for (int id = 0; id < spec.n_identities; ++id) {
    std::string split = id < n_train ? "train" : "eval";
    Identity ident = gen_identity(identity_seed(spec.seed, id));
    fs::path dir = fs::path(root) / split / id_dir(id);
    fs::create_directories(dir);
    for (int fr = 0; fr < spec.frames_per_identity; ++fr) {
      SampleParams p = draw_sample_params(spec.seed, id, fr);
      auto [albedo, depth] = gen_expression(ident, p.cls, p.magnitude);
      auto out = render::render(albedo, depth, p.pose, p.light, cam);
      img::write_png_rgb((dir / (frame_name(fr) + ".png")).string(), out.image);
      labels << split << ',' << id_dir(id) << ',' << frame_name(fr) << ',' << p.cls << ','
             << fmt17(p.magnitude) << ',' << fmt17(p.pose.yaw) << ',' << fmt17(p.pose.pitch)
             << ',' << fmt17(p.pose.roll) << ',' << fmt17(p.pose.tx) << ',' << fmt17(p.pose.ty)
             << ',' << fmt17(p.pose.tz) << ',' << fmt17(p.light.ka) << ',' << fmt17(p.light.kd)
             << ',' << fmt17(p.light.lx) << ',' << fmt17(p.light.ly) << '\n';
    }
  }
  labels.close();

  // verification pairs over the eval split
  int n_eval = spec.n_identities - n_train;
  std::ofstream pairs(fs::path(root) / "pairs.csv");
  if (!pairs) throw IoError("cannot write pairs.csv");
  pairs << "img_a,img_b,same\n";
  if (n_eval >= 2 && spec.frames_per_identity >= 2) {
    Rng rng(hash_mix(spec.seed, hash_str("pairs")));
    auto rel = [&](int id, int fr) {
      return "eval/" + id_dir(id) + "/" + frame_name(fr) + ".png";
    };
    std::set<std::tuple<int, int, int, int>> seen;
    int64_t max_pos = static_cast<int64_t>(n_eval) * spec.frames_per_identity *
                      (spec.frames_per_identity - 1) / 2;
    int want_pos = static_cast<int>(std::min<int64_t>(spec.pos_pairs, max_pos));
    int made = 0;
    while (made < want_pos) {
      int id = n_train + static_cast<int>(rng.uniform_int(0, n_eval - 1));
      int fa = static_cast<int>(rng.uniform_int(0, spec.frames_per_identity - 1));
      int fb = static_cast<int>(rng.uniform_int(0, spec.frames_per_identity - 1));
      if (fa == fb) continue;
      if (fa > fb) std::swap(fa, fb);
      if (!seen.insert({id, fa, id, fb}).second) continue;
      pairs << rel(id, fa) << ',' << rel(id, fb) << ",1\n";
      ++made;
    }
    int64_t max_neg = static_cast<int64_t>(n_eval) * (n_eval - 1) / 2 *
                      spec.frames_per_identity * spec.frames_per_identity;
    int want_neg = static_cast<int>(std::min<int64_t>(spec.neg_pairs, max_neg));
    made = 0;
    while (made < want_neg) {
      int ia = n_train + static_cast<int>(rng.uniform_int(0, n_eval - 1));
      int ib = n_train + static_cast<int>(rng.uniform_int(0, n_eval - 1));
      if (ia == ib) continue;
      if (ia > ib) std::swap(ia, ib);
      int fa = static_cast<int>(rng.uniform_int(0, spec.frames_per_identity - 1));
      int fb = static_cast<int>(rng.uniform_int(0, spec.frames_per_identity - 1));
      if (!seen.insert({ia, fa, ib, fb}).second) continue;
      pairs << rel(ia, fa) << ',' << rel(ib, fb) << ",0\n";
      ++made;
    }
  }
  pairs.close();

  nlohmann::json manifest{{"seed", spec.seed},
                          {"n_identities", spec.n_identities},
                          {"frames_per_identity", spec.frames_per_identity},
                          {"train_identities", n_train},
                          {"pos_pairs", spec.pos_pairs},
                          {"neg_pairs", spec.neg_pairs},
                          {"generator_version", kGeneratorVersion}};
  std::ofstream mf(fs::path(root) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest.json");
  mf << manifest.dump(2) << '\n';
}

}  // namespace lf::synth
