#include "latentface/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "latentface/diffusion.hpp"
#include "latentface/stage1.hpp"

namespace lf::gradcheck {

namespace {

using render::Camera;
using render::LightT;
using render::PoseT;

struct Scene {
  DTensor albedo, depth;
  PoseT<double> pose;
  LightT<double> light;
};

Scene random_scene(int res, Rng& rng) {
  Scene sc;
  // low-frequency depth keeps triangles well conditioned under +-h probes
  double ax = rng.uniform(1.0, 2.5), ay = rng.uniform(1.0, 2.5);
  double bx = rng.uniform(0.0, 6.28), by = rng.uniform(0.0, 6.28);
  double cx = rng.uniform(-1.0, 1.0), cy = rng.uniform(-1.0, 1.0);
  sc.depth = DTensor({res, res});
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      double x = render::detail::grid_coord<double>(j, res);
      double y = render::detail::grid_coord<double>(i, res);
      sc.depth.at2(i, j) =
          1.0 + 0.04 * std::sin(ax * x + bx) * std::sin(ay * y + by) + 0.015 * (cx * x + cy * y);
    }
  sc.albedo = DTensor({3, res, res});
  sc.albedo.fill_uniform(rng, 0.2, 0.8);
  sc.pose.yaw = rng.uniform(-0.3, 0.3) * render::kYawMax;
  sc.pose.pitch = rng.uniform(-0.3, 0.3) * render::kPitchMax;
  sc.pose.roll = rng.uniform(-0.3, 0.3) * render::kRollMax;
  sc.pose.tx = rng.uniform(-0.05, 0.05);
  sc.pose.ty = rng.uniform(-0.05, 0.05);
  sc.pose.tz = rng.uniform(-0.05, 0.05);
  sc.light.ka = rng.uniform(0.2, 0.8);
  sc.light.kd = rng.uniform(0.2, 0.8);
  sc.light.lx = rng.uniform(-0.5, 0.5);
  sc.light.ly = rng.uniform(-0.5, 0.5);
  return sc;
}

// interior pixels that stay inside one triangle under small perturbations
DTensor probe_weights(const render::RenderContextT<double>& ctx, Rng& rng) {
  const int h = ctx.h, w = ctx.w;
  DTensor weights({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) continue;
      bool ok = true;
      for (int dy = -1; dy <= 1 && ok; ++dy)
        for (int dx = -1; dx <= 1 && ok; ++dx)
          if (!ctx.out.mask.at2(y + dy, x + dx)) ok = false;
      for (int k = 0; k < 3 && ok; ++k)
        if (ctx.bary.at3(y, x, k) < 0.05) ok = false;
      if (!ok) continue;
      for (int c = 0; c < 3; ++c) weights.at3(c, y, x) = rng.uniform(0.5, 1.5);
    }
  return weights;
}

double probe_loss(const Scene& sc, const Camera& cam, const DTensor& weights) {
  auto ctx = render::render_forward(sc.albedo, sc.depth, sc.pose, sc.light, cam);
  double loss = 0;
  for (int64_t i = 0; i < weights.numel(); ++i) loss += weights[i] * ctx.out.image[i];
  return loss;
}

double rel_err(double analytic, double fd) {
  double den = std::max({std::abs(analytic), std::abs(fd), 1e-2});
  return std::abs(analytic - fd) / den;
}

}  // namespace

SuiteResult renderer_suite(int res, double h, int seeds, double tol, bool sabotage_shading) {
  if (res < 4) throw InvalidInputError("renderer_suite: resolution too small");
  Camera cam = Camera::standard();
  SuiteResult out;
  out.groups = {{"albedo", 0}, {"depth", 0}, {"pose", 0}, {"light", 0}};
  auto& g_alb = out.groups[0].max_rel_err;
  auto& g_dep = out.groups[1].max_rel_err;
  auto& g_pose = out.groups[2].max_rel_err;
  auto& g_light = out.groups[3].max_rel_err;

  for (int s = 0; s < seeds; ++s) {
    Rng rng(hash_mix(static_cast<uint64_t>(s), hash_str("gradcheck")));
    Scene sc = random_scene(res, rng);
    auto ctx = render::render_forward(sc.albedo, sc.depth, sc.pose, sc.light, cam);
    DTensor weights = probe_weights(ctx, rng);
    auto grads = render::render_backward(ctx, weights, sabotage_shading);

    auto fd_pair = [&](Scene& mut, double& slot) {
      double saved = slot;
      slot = saved + h;
      double lp = probe_loss(mut, cam, weights);
      slot = saved - h;
      double lm = probe_loss(mut, cam, weights);
      slot = saved;
      return (lp - lm) / (2 * h);
    };

    Scene mut = sc;
    for (int64_t i = 0; i < mut.albedo.numel(); ++i)
      g_alb = std::max(g_alb, rel_err(grads.d_albedo[i], fd_pair(mut, mut.albedo[i])));
    for (int64_t i = 0; i < mut.depth.numel(); ++i)
      g_dep = std::max(g_dep, rel_err(grads.d_depth[i], fd_pair(mut, mut.depth[i])));
    double* pose_fields[6] = {&mut.pose.yaw, &mut.pose.pitch, &mut.pose.roll,
                              &mut.pose.tx,  &mut.pose.ty,    &mut.pose.tz};
    for (int i = 0; i < 6; ++i)
      g_pose = std::max(g_pose, rel_err(grads.d_pose[i], fd_pair(mut, *pose_fields[i])));
    double* light_fields[4] = {&mut.light.ka, &mut.light.kd, &mut.light.lx, &mut.light.ly};
    for (int i = 0; i < 4; ++i)
      g_light = std::max(g_light, rel_err(grads.d_light[i], fd_pair(mut, *light_fields[i])));
  }

  out.worst = 0;
  for (const auto& g : out.groups) out.worst = std::max(out.worst, g.max_rel_err);
  out.pass = out.worst < tol;
  return out;
}

double pipeline_latent_max_rel_err(int check_coords, double h, uint64_t seed) {
  using T = double;
  nets::Widths ws = nets::Widths::tiny8();
  stage1::Model<T> m(ws, seed);
  stage1::Config cfg;
  cfg.seed = seed;

  Rng rng(hash_mix(seed, hash_str("pipeline-fd")));
  TensorT<T> images({2, 3, m.image_size, m.image_size});
  images.fill_uniform(rng, 0.0, 1.0);
  TensorT<T> z0({2, ws.latent});
  z0.fill_uniform(rng, -0.5, 0.5);

  auto eval_loss = [&](const TensorT<T>& z) {
    stage1::Overrides<T> ov;
    ov.z_tex = ad::Var<T>::constant(z);
    auto fw = stage1::forward_autoencode(m, images, cfg, ov);
    return stage1::reconstruction_loss(m, images, fw, cfg).total.value()[0];
  };

  stage1::Overrides<T> ov;
  ov.z_tex = ad::Var<T>::param(z0);
  auto fw = stage1::forward_autoencode(m, images, cfg, ov);
  auto losses = stage1::reconstruction_loss(m, images, fw, cfg);
  m.ps.zero_grad();
  ov.z_tex.zero_grad();
  ad::backward(losses.total);
  const TensorT<T>& g = ov.z_tex.grad();
  if (!g.numel()) throw NumericalError("pipeline check produced no latent gradient");

  double worst = 0;
  for (int k = 0; k < check_coords; ++k) {
    TensorT<T> zp = z0, zm = z0;
    zp[k] += h;
    zm[k] -= h;
    double fd = (eval_loss(zp) - eval_loss(zm)) / (2 * h);
    double den = std::max({std::abs(g[k]), std::abs(fd), 1e-6});
    worst = std::max(worst, std::abs(g[k] - fd) / den);
  }
  return worst;
}

std::vector<InvariantResult> invariant_suite() {
  std::vector<InvariantResult> out;
  Camera cam = Camera::standard();
  constexpr int kRes = 64;

  {  // flipping the last axis twice is the identity, bit for bit
    Rng rng(hash_str("inv-flip"));
    Tensor x({3, 5, 7});
    x.fill_uniform(rng, -1.0f, 1.0f);
    Tensor y = hflip(hflip(x));
    double worst = 0;
    for (int64_t i = 0; i < x.numel(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(x[i] - y[i])));
    out.push_back({"flip-involution", worst == 0.0, worst});
  }

  {  // frontal pose, x-symmetric light: the flip render mirrors the direct one
    // up to the rasterizer's split-diagonal tolerance on smooth fields
    Rng rng(hash_str("inv-mirror"));
    DTensor albedo({3, kRes, kRes}), depth({kRes, kRes});
    double fr = rng.uniform(1.0, 2.0), fc = rng.uniform(1.0, 2.0);
    double cx = rng.uniform(-0.4, 0.4), cy = rng.uniform(-0.4, 0.4);
    for (int y = 0; y < kRes; ++y)
      for (int x = 0; x < kRes; ++x) {
        double u = render::detail::grid_coord<double>(x, kRes);
        double v = render::detail::grid_coord<double>(y, kRes);
        for (int c = 0; c < 3; ++c)
          albedo.at3(c, y, x) =
              0.5 + 0.3 * std::sin(fr * u + 0.7 * c) * std::cos(fc * v - 0.4 * c);
        double r2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
        depth.at2(y, x) = 1.0 + 0.08 * std::exp(-r2 / 0.3) - 0.04;
      }
    LightT<double> light{0.4, 0.6, 0.0, 0.3};
    auto pose = PoseT<double>::identity();
    auto direct = render::render(albedo, depth, pose, light, cam);
    auto flipped = render::render_flipped(albedo, depth, pose, light, cam);
    DTensor mirrored = hflip(direct.image);
    double worst = 0;
    for (int64_t i = 0; i < mirrored.numel(); ++i)
      worst = std::max(worst, std::abs(flipped.image[i] - mirrored[i]));
    out.push_back({"frontal-mirror-symmetry", worst < 1e-3, worst});
  }

  {  // constant depth => normals exactly (0,0,1)
    DTensor depth = DTensor::full({kRes, kRes}, 1.03);
    DTensor n = render::compute_normals(depth);
    double worst = 0;
    for (int y = 0; y < kRes; ++y)
      for (int x = 0; x < kRes; ++x) {
        worst = std::max(worst, std::abs(n.at3(0, y, x)));
        worst = std::max(worst, std::abs(n.at3(1, y, x)));
        worst = std::max(worst, std::abs(n.at3(2, y, x) - 1.0));
      }
    out.push_back({"flat-depth-normals", worst == 0.0, worst});
  }

  {  // identity pose at reference depth reproduces the albedo pixel for pixel
    Rng rng(hash_str("inv-mag"));
    DTensor albedo({3, kRes, kRes});
    albedo.fill_uniform(rng, 0.0, 1.0);
    DTensor depth = DTensor::full({kRes, kRes}, 1.0);
    LightT<double> light{1.0, 0.0, 0.0, 0.0};
    auto ro = render::render(albedo, depth, PoseT<double>::identity(), light, cam);
    double worst = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < kRes; ++y)
        for (int x = 0; x < kRes; ++x)
          if (ro.mask.at2(y, x))
            worst = std::max(worst, std::abs(ro.image.at3(c, y, x) - albedo.at3(c, y, x)));
    bool covered = true;
    for (int y = 0; y < kRes; ++y)
      for (int x = 0; x < kRes; ++x)
        if (!ro.mask.at2(y, x)) covered = false;
    out.push_back({"identity-pose-magnification", covered && worst < 1e-3, worst});
  }

  {  // 10-degree field of view fixes the focal length
    double expect = 1.0 / (2.0 * std::tan(5.0 * M_PI / 180.0));
    double rel = std::abs(cam.f - expect) / expect;
    double inv = std::abs(1.0 / cam.f - 2.0 * std::tan(cam.fov_deg * M_PI / 360.0));
    out.push_back({"focal-length", rel < 1e-6 && inv < 1e-12, rel});
  }

  {  // full light direction is unit length with positive z
    Rng rng(hash_str("inv-light"));
    double worst = 0;
    bool zpos = true;
    for (int i = 0; i < 100; ++i) {
      LightT<double> li{0.5, 0.5, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      auto d = render::light_direction(li);
      worst = std::max(worst,
                       std::abs(std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 1.0));
      if (d[2] <= 0) zpos = false;
    }
    out.push_back({"light-unit-norm", zpos && worst < 1e-12, worst});
  }

  {  // the noise schedule hits its documented endpoints and decays
    auto sched = diffusion::make_schedule(1000);
    double worst = std::abs(sched.beta[1] - 1e-4);
    worst = std::max(worst, std::abs(sched.beta[1000] - 0.02));
    worst = std::max(worst, std::abs(sched.alpha_bar[0] - 1.0));
    bool mono = true;
    double wmax = 0;
    for (int64_t t = 1; t <= 1000; ++t) {
      if (!(sched.alpha_bar[t] < sched.alpha_bar[t - 1])) mono = false;
      wmax = std::max(wmax, sched.weight[t]);
    }
    bool ok = mono && worst < 1e-12 && sched.alpha_bar[1000] < 0.01 && wmax <= 1000.0;
    out.push_back({"schedule-endpoints", ok, worst});
  }

  return out;
}

}  // namespace lf::gradcheck
