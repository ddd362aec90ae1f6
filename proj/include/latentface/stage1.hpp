#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latentface/autodiff.hpp"
#include "latentface/checkpoint.hpp"
#include "latentface/common.hpp"
#include "latentface/data.hpp"
#include "latentface/nets.hpp"
#include "latentface/renderer.hpp"
#include "latentface/tensor.hpp"

// Stage 1: symmetric 3D autoencoding. Texture and shape encoders feed map
// decoders whose outputs are rendered back (directly and mirrored) under the
// predicted pose and light; confidence maps calibrate a Laplacian
// reconstruction loss at pixel and perceptual-feature level.
namespace lf::stage1 {

using ad::Var;

inline constexpr const char* kArch = "latentface-stage1-v1";

struct Config {
  int epochs = 30;
  int batch_size = 16;
  float learning_rate = 1e-4f;
  float lambda_f = 1.0f;
  float lambda_flip = 0.5f;
  uint64_t seed = 0;
  bool disable_light = false;
  bool disable_pose = false;
  bool disable_shape = false;
  bool disable_texture = false;
};

struct LossReport {
  double lp = 0, lf = 0, lp_flip = 0, lf_flip = 0, total = 0;
};

template <class T>
struct Model {
  nets::Widths ws;
  ad::ParamStore<T> ps;
  nets::FeatureEncoder<T> tex_enc, shape_enc;
  nets::Decoder<T> tex_dec, shape_dec;
  nets::NumericEncoder<T> pose_enc, light_enc;
  nets::ConfNet<T> conf;
  nets::FeatNet<T> feat;
  render::Camera cam = render::Camera::standard();
  int64_t image_size = 0;

  Model() = default;
  Model(const nets::Widths& w, uint64_t seed) : ws(w) {
    Rng rng(hash_mix(seed, hash_str("stage1-init")));
    nets::LayerFactory<T> f{ps, rng};
    tex_enc = nets::FeatureEncoder<T>(f, "tex_enc", w);
    tex_dec = nets::Decoder<T>(f, "tex_dec", w, 3);
    shape_enc = nets::FeatureEncoder<T>(f, "shape_enc", w);
    shape_dec = nets::Decoder<T>(f, "shape_dec", w, 1);
    pose_enc = nets::NumericEncoder<T>(f, "pose", w, 6);
    light_enc = nets::NumericEncoder<T>(f, "light", w, 4);
    conf = nets::ConfNet<T>(f, "conf", w);
    feat = nets::FeatNet<T>(f, "feat", w);
    // the perceptual extractor is fixed random features; gradients still
    // reach its inputs
    for (auto& [name, p] : ps.items())
      if (name.rfind("feat.", 0) == 0) p.set_requires_grad(false);
    image_size = int64_t{1} << (w.enc.size() + 1);
    if (w.dec.size() != w.enc.size() + 1)
      throw InvalidInputError("decoder stage count must match the encoder resolution");
  }
};

// ---- differentiable render over a batch ----

template <class T>
struct RenderedBatch {
  Var<T> image;    // [N,3,H,W], unclamped
  TensorT<T> mask; // [N,1,H,W], 0/1, fixed (no gradient through visibility)
};

// albedo [N,3,H,W], depth [N,1,H,W], pose [N,6] (yaw,pitch,roll,tx,ty,tz),
// light [N,4] (ka,kd,lx,ly)
template <class T>
RenderedBatch<T> render_batch_op(const Var<T>& albedo, const Var<T>& depth, const Var<T>& pose,
                                 const Var<T>& light, const render::Camera& cam,
                                 bool sabotage_shading_grad = false) {
  const auto& av = albedo.value();
  const auto& dv = depth.value();
  const auto& pv = pose.value();
  const auto& lv = light.value();
  if (av.rank() != 4 || av.dim(1) != 3) throw InvalidInputError("render: albedo must be N x 3 x H x W");
  if (dv.rank() != 4 || dv.dim(1) != 1 || dv.dim(0) != av.dim(0) || dv.dim(2) != av.dim(2) ||
      dv.dim(3) != av.dim(3))
    throw InvalidInputError("render: depth must be N x 1 x H x W matching the albedo");
  if (pv.rank() != 2 || pv.dim(0) != av.dim(0) || pv.dim(1) != 6)
    throw InvalidInputError("render: pose must be N x 6");
  if (lv.rank() != 2 || lv.dim(0) != av.dim(0) || lv.dim(1) != 4)
    throw InvalidInputError("render: light must be N x 4");
  const int64_t n = av.dim(0), h = av.dim(2), w = av.dim(3);

  auto ctxs = std::make_shared<std::vector<render::RenderContextT<T>>>();
  ctxs->reserve(n);
  TensorT<T> out({n, 3, h, w});
  RenderedBatch<T> rb;
  rb.mask = TensorT<T>({n, 1, h, w});
  for (int64_t s = 0; s < n; ++s) {
    TensorT<T> a({3, h, w});
    std::copy_n(av.data.data() + s * 3 * h * w, 3 * h * w, a.data.data());
    TensorT<T> d({h, w});
    std::copy_n(dv.data.data() + s * h * w, h * w, d.data.data());
    render::PoseT<T> p{pv.at2(s, 0), pv.at2(s, 1), pv.at2(s, 2),
                       pv.at2(s, 3), pv.at2(s, 4), pv.at2(s, 5)};
    render::LightT<T> l{lv.at2(s, 0), lv.at2(s, 1), lv.at2(s, 2), lv.at2(s, 3)};
    ctxs->push_back(render::render_forward(a, d, p, l, cam));
    const auto& ctx = ctxs->back();
    std::copy_n(ctx.out.image.data.data(), 3 * h * w, out.data.data() + s * 3 * h * w);
    for (int64_t i = 0; i < h * w; ++i)
      rb.mask.data[s * h * w + i] = static_cast<T>(ctx.out.mask.data[i]);
  }

  auto ap = albedo.node(), dp = depth.node(), pp = pose.node(), lp = light.node();
  rb.image = ad::make_op<T>(
      std::move(out), {ap, dp, pp, lp},
      [ap, dp, pp, lp, ctxs, n, h, w, sabotage_shading_grad](ad::Node<T>& self) mutable {
        if (ap->requires_grad) ap->ensure_grad();
        if (dp->requires_grad) dp->ensure_grad();
        if (pp->requires_grad) pp->ensure_grad();
        if (lp->requires_grad) lp->ensure_grad();
        TensorT<T> dimg({3, h, w});
        for (int64_t s = 0; s < n; ++s) {
          std::copy_n(self.grad.data.data() + s * 3 * h * w, 3 * h * w, dimg.data.data());
          auto g = render::render_backward((*ctxs)[s], dimg, sabotage_shading_grad);
          if (ap->requires_grad) {
            T* dst = ap->grad.data.data() + s * 3 * h * w;
            for (int64_t i = 0; i < 3 * h * w; ++i) dst[i] += g.d_albedo[i];
          }
          if (dp->requires_grad) {
            T* dst = dp->grad.data.data() + s * h * w;
            for (int64_t i = 0; i < h * w; ++i) dst[i] += g.d_depth[i];
          }
          if (pp->requires_grad)
            for (int k = 0; k < 6; ++k) pp->grad.at2(s, k) += g.d_pose[k];
          if (lp->requires_grad)
            for (int k = 0; k < 4; ++k) lp->grad.at2(s, k) += g.d_light[k];
        }
      });
  return rb;
}

// ---- confidence-calibrated Laplacian loss ----

// Single-map reference: pred/target [C,H,W], sigma/mask [H,W]; the residual
// at a pixel is the channel mean of |pred - target|.
template <class T>
T conf_loss(const TensorT<T>& pred, const TensorT<T>& target, const TensorT<T>& sigma,
            const TensorT<uint8_t>& mask) {
  if (pred.rank() != 3 || !pred.same_shape(target))
    throw InvalidInputError("conf_loss: pred and target must be C x H x W with equal shapes");
  const int64_t c = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  if (sigma.rank() != 2 || sigma.dim(0) != h || sigma.dim(1) != w)
    throw InvalidInputError("conf_loss: sigma must be H x W");
  if (mask.rank() != 2 || mask.dim(0) != h || mask.dim(1) != w)
    throw InvalidInputError("conf_loss: mask must be H x W");
  const T sqrt2 = std::sqrt(T(2));
  T acc = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (!mask.at2(i, j)) continue;
      T s = sigma.at2(i, j);
      if (!(s > T(0))) throw InvalidInputError("conf_loss: nonpositive sigma inside the mask");
      T d = 0;
      for (int64_t k = 0; k < c; ++k) d += std::abs(pred.at3(k, i, j) - target.at3(k, i, j));
      d /= static_cast<T>(c);
      acc += std::log(sqrt2 * s) + sqrt2 * d / s;
      ++count;
    }
  if (count == 0) throw InvalidInputError("conf_loss: empty mask");
  return acc / static_cast<T>(count);
}

namespace detail {

// per-pixel weights folding the mask and the (batch x |mask|) normalization
template <class T>
TensorT<T> masked_weights(const TensorT<T>& mask) {
  const int64_t n = mask.dim(0), hw = mask.dim(2) * mask.dim(3);
  TensorT<T> w(mask.shape);
  for (int64_t s = 0; s < n; ++s) {
    T count = 0;
    for (int64_t i = 0; i < hw; ++i) count += mask.data[s * hw + i];
    if (count == T(0)) throw InvalidInputError("conf_loss: empty render mask");
    T inv = T(1) / (static_cast<T>(n) * count);
    for (int64_t i = 0; i < hw; ++i) w.data[s * hw + i] = mask.data[s * hw + i] * inv;
  }
  return w;
}

template <class T>
TensorT<T> full_weights(int64_t n, int64_t h, int64_t w) {
  return TensorT<T>::full({n, 1, h, w}, T(1) / static_cast<T>(n * h * w));
}

// batch mean of (1/|omega_i|) sum [ln(sqrt2 sigma) + sqrt2 d / sigma], with
// the mask and normalization baked into `weights`
template <class T>
Var<T> conf_term(const Var<T>& pred, const Var<T>& target, const Var<T>& sigma,
                 TensorT<T> weights) {
  const T sqrt2 = std::sqrt(T(2));
  Var<T> d = ad::mean_channels(ad::abs(ad::sub(pred, target)));
  Var<T> term = ad::add(ad::log(ad::scale(sigma, sqrt2)), ad::scale(ad::div(d, sigma), sqrt2));
  return ad::sum(ad::mul(term, Var<T>::constant(std::move(weights))));
}

// per-column affine map y = x*scale + offset applied rowwise over [N,K]
template <class T>
Var<T> rowwise_affine(const Var<T>& x, const std::vector<double>& sc,
                      const std::vector<double>& of) {
  const int64_t n = x.value().dim(0), k = x.value().dim(1);
  if (x.value().rank() != 2 || k != static_cast<int64_t>(sc.size()))
    throw InvalidInputError("rowwise_affine: shape mismatch");
  TensorT<T> s({n, k}), o({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      s.at2(i, j) = static_cast<T>(sc[j]);
      o.at2(i, j) = static_cast<T>(of[j]);
    }
  return ad::add(ad::mul(x, Var<T>::constant(std::move(s))), Var<T>::constant(std::move(o)));
}

}  // namespace detail

// raw tanh outputs -> physical pose (radians / canonical translation units)
template <class T>
Var<T> map_pose(const Var<T>& raw) {
  return detail::rowwise_affine<T>(
      raw,
      {render::kYawMax, render::kPitchMax, render::kRollMax, render::kTransMax,
       render::kTransMax, render::kTransMax},
      {0, 0, 0, 0, 0, 0});
}

// raw tanh outputs -> (ka, kd in [0,1], lx, ly in (-1,1))
template <class T>
Var<T> map_light(const Var<T>& raw) {
  return detail::rowwise_affine<T>(raw, {0.5, 0.5, 1.0, 1.0}, {0.5, 0.5, 0.0, 0.0});
}

// optional leaf replacements for the encoder outputs, used by the
// finite-difference pipeline check to perturb a latent directly
template <class T>
struct Overrides {
  Var<T> z_tex, z_shape;
};

template <class T>
struct ForwardResult {
  Var<T> z_tex, z_shape;            // [N, latent]
  Var<T> pose_params, light_params; // mapped [N,6] / [N,4]
  Var<T> albedo;                    // [N,3,S,S] in [0,1]
  Var<T> depth;                     // [N,1,S,S] in [0.9,1.1]
  Var<T> recon, recon_flip;         // renders, unclamped
  TensorT<T> mask, mask_flip;       // [N,1,S,S]
  Var<T> sigma_p, sigma_f;          // [N,2,S,S] / [N,2,S/4,S/4]
};

// Full pipeline: encode, decode canonical maps, render direct and mirrored
// under the shared pose and light, predict confidences. Ablation flags pin
// the corresponding factor to its neutral constant.
template <class T>
ForwardResult<T> forward_autoencode(const Model<T>& m, const TensorT<T>& images,
                                    const Config& cfg, const Overrides<T>& ov = {}) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != m.image_size ||
      images.dim(3) != m.image_size)
    throw InvalidInputError("forward_autoencode: images must be N x 3 x S x S for the model size");
  const int64_t n = images.dim(0), s = m.image_size;
  Var<T> x = Var<T>::constant(images);

  ForwardResult<T> r;
  r.z_tex = ov.z_tex.defined() ? ov.z_tex : m.tex_enc.forward(x);
  r.z_shape = ov.z_shape.defined() ? ov.z_shape : m.shape_enc.forward(x);
  if (r.z_tex.value().dim(0) != n || r.z_tex.value().dim(1) != m.ws.latent ||
      !r.z_shape.value().same_shape(r.z_tex.value()))
    throw InvalidInputError("forward_autoencode: latent override shape mismatch");

  if (cfg.disable_texture)
    r.albedo = Var<T>::constant(TensorT<T>::full({n, 3, s, s}, T(0.5)));
  else
    r.albedo = ad::scale(ad::add_scalar(m.tex_dec.forward(r.z_tex), T(1)), T(0.5));
  if (cfg.disable_shape)
    r.depth = Var<T>::constant(TensorT<T>::full({n, 1, s, s}, T(1)));
  else
    r.depth = ad::add_scalar(ad::scale(m.shape_dec.forward(r.z_shape), T(0.1)), T(1));

  if (cfg.disable_pose)
    r.pose_params = Var<T>::constant(TensorT<T>({n, 6}));
  else
    r.pose_params = map_pose(m.pose_enc.forward(x));
  if (cfg.disable_light) {
    TensorT<T> neutral({n, 4});
    for (int64_t i = 0; i < n; ++i) {
      neutral.at2(i, 0) = T(0.7);
      neutral.at2(i, 1) = T(0.3);
    }
    r.light_params = Var<T>::constant(std::move(neutral));
  } else {
    r.light_params = map_light(m.light_enc.forward(x));
  }

  auto direct = render_batch_op(r.albedo, r.depth, r.pose_params, r.light_params, m.cam);
  r.recon = direct.image;
  r.mask = std::move(direct.mask);
  auto flip = render_batch_op(ad::hflip4(r.albedo), ad::hflip4(r.depth), r.pose_params,
                              r.light_params, m.cam);
  r.recon_flip = flip.image;
  r.mask_flip = std::move(flip.mask);

  auto sig = m.conf.forward(x);
  r.sigma_p = sig.first;
  r.sigma_f = sig.second;
  return r;
}

template <class T>
struct Losses {
  Var<T> total;  // [1]
  LossReport report;
};

// total = L_p + lambda_f L_f + lambda_flip (L_p' + lambda_f L_f'). Pixel
// terms use the per-render masks; feature terms use every position.
template <class T>
Losses<T> reconstruction_loss(const Model<T>& m, const TensorT<T>& images,
                              const ForwardResult<T>& fw, const Config& cfg) {
  if (cfg.lambda_f < 0 || cfg.lambda_flip < 0)
    throw InvalidInputError("loss weights must be nonnegative");
  Var<T> target = Var<T>::constant(images);
  Var<T> feat_target = m.feat.forward(target);
  Var<T> feat_pred = m.feat.forward(fw.recon);
  Var<T> feat_pred_flip = m.feat.forward(fw.recon_flip);

  Var<T> lp = detail::conf_term(fw.recon, target, ad::slice_channels(fw.sigma_p, 0, 1),
                                detail::masked_weights(fw.mask));
  Var<T> lpf = detail::conf_term(fw.recon_flip, target, ad::slice_channels(fw.sigma_p, 1, 1),
                                 detail::masked_weights(fw.mask_flip));
  const auto& fv = feat_target.value();
  Var<T> lf = detail::conf_term(feat_pred, feat_target, ad::slice_channels(fw.sigma_f, 0, 1),
                                detail::full_weights<T>(fv.dim(0), fv.dim(2), fv.dim(3)));
  Var<T> lff = detail::conf_term(feat_pred_flip, feat_target, ad::slice_channels(fw.sigma_f, 1, 1),
                                 detail::full_weights<T>(fv.dim(0), fv.dim(2), fv.dim(3)));

  Losses<T> out;
  out.total = ad::add(ad::add(lp, ad::scale(lf, T(cfg.lambda_f))),
                      ad::scale(ad::add(lpf, ad::scale(lff, T(cfg.lambda_f))), T(cfg.lambda_flip)));
  out.report.lp = static_cast<double>(lp.value()[0]);
  out.report.lf = static_cast<double>(lf.value()[0]);
  out.report.lp_flip = static_cast<double>(lpf.value()[0]);
  out.report.lf_flip = static_cast<double>(lff.value()[0]);
  out.report.total = static_cast<double>(out.total.value()[0]);
  return out;
}

// ---- training / persistence / evaluation (float instantiations) ----

nlohmann::json widths_to_json(const nets::Widths& ws);
nets::Widths widths_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);
Config config_from_json(const nlohmann::json& j);

ckpt::Checkpoint model_checkpoint(const Model<float>& m, const Config& cfg, int epoch);

struct LoadedStage1 {
  Model<float> model;
  Config cfg;
};
LoadedStage1 load_stage1(const std::string& path);

struct EpochStat {
  int epoch = 0;
  double mean_total = 0;
};

struct TrainSummary {
  std::vector<EpochStat> epochs;
  int best_epoch = 0;
  std::string best_path, last_path, loss_csv;
};

// Adam over shuffled batches; per-step CSV log; best (by epoch mean total)
// and last checkpoints written under out_dir. Deterministic given the seed.
TrainSummary train_stage1(const data::Corpus& corpus, const Config& cfg, const nets::Widths& ws,
                          const std::string& out_dir);

struct EvalRow {
  double psnr = 0;                 // clamped reconstruction vs input, peak 1
  std::array<double, 6> pose{};    // mapped pose parameters
  std::array<double, 4> light{};   // mapped light parameters
};

std::vector<EvalRow> evaluate(const Model<float>& m, const Config& cfg,
                              const data::Corpus& corpus, const std::vector<int64_t>& indices,
                              int batch_size);

struct ReconOut {
  Tensor recon;    // [3,S,S] unclamped render under predicted pose/light
  Tensor frontal;  // [3,S,S] canonical view, identity pose + neutral light
  Tensor albedo;   // [3,S,S]
  Tensor depth;    // [S,S]
};

ReconOut reconstruct_one(const Model<float>& m, const Config& cfg, const Tensor& image);

}  // namespace lf::stage1
