#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentface/autodiff.hpp"
#include "latentface/common.hpp"
#include "latentface/tensor.hpp"

// Network architectures: feature/numerical encoders, map decoders, the
// confidence net, the frozen perceptual extractor, the latent denoiser and
// its encoder baseline, and the linear probe head. All parameters live in a
// ParamStore and are created (or rebound) by name, so checkpoints can be
// loaded into a freshly built model.
namespace lf::nets {

using lf::ad::Var;

inline int64_t gn_groups(int64_t ch) { return ch % 8 == 0 ? 8 : 1; }

template <class T>
struct LayerFactory {
  ad::ParamStore<T>& ps;
  Rng& rng;

  Var<T> weight(const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
    TensorT<T> t(shape);
    T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    t.fill_uniform(rng, -bound, bound);
    return ps.add(name, std::move(t));
  }
  Var<T> zeros(const std::string& name, std::vector<int64_t> shape) {
    return ps.add(name, TensorT<T>(shape));
  }
  Var<T> ones(const std::string& name, std::vector<int64_t> shape) {
    return ps.add(name, TensorT<T>::full(shape, T(1)));
  }
};

template <class T>
struct Conv {
  Var<T> w, b;
  int stride = 1, pad = 0;
  Var<T> operator()(const Var<T>& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

template <class T>
struct ConvT {
  Var<T> w, b;
  int stride = 1, pad = 0;
  Var<T> operator()(const Var<T>& x) const { return ad::conv_transpose2d(x, w, b, stride, pad); }
};

template <class T>
struct GNorm {
  Var<T> gamma, beta;
  int64_t groups = 1;
  Var<T> operator()(const Var<T>& x) const { return ad::group_norm(x, gamma, beta, groups); }
};

template <class T>
struct Linear {
  Var<T> w, b;
  Var<T> operator()(const Var<T>& x) const { return ad::linear(x, w, b); }
};

template <class T>
Conv<T> make_conv(LayerFactory<T>& f, const std::string& name, int64_t ci, int64_t co, int k,
                  int s, int p) {
  Conv<T> c;
  c.w = f.weight(name + ".w", {co, ci, k, k}, ci * k * k);
  c.b = f.zeros(name + ".b", {co});
  c.stride = s;
  c.pad = p;
  return c;
}

template <class T>
ConvT<T> make_convt(LayerFactory<T>& f, const std::string& name, int64_t ci, int64_t co, int k,
                    int s, int p) {
  ConvT<T> c;
  c.w = f.weight(name + ".w", {ci, co, k, k}, ci * k * k);
  c.b = f.zeros(name + ".b", {co});
  c.stride = s;
  c.pad = p;
  return c;
}

template <class T>
GNorm<T> make_gn(LayerFactory<T>& f, const std::string& name, int64_t ch) {
  GNorm<T> g;
  g.gamma = f.ones(name + ".g", {ch});
  g.beta = f.zeros(name + ".be", {ch});
  g.groups = gn_groups(ch);
  return g;
}

template <class T>
Linear<T> make_linear(LayerFactory<T>& f, const std::string& name, int64_t fi, int64_t fo) {
  Linear<T> l;
  l.w = f.weight(name + ".w", {fo, fi}, fi);
  l.b = f.zeros(name + ".b", {fo});
  return l;
}

// Channel plans, shrinkable for gradient-check builds.
struct Widths {
  int64_t latent = 256;
  std::vector<int64_t> enc = {32, 64, 128, 256, 256};   // feature encoder interior channels
  std::vector<int64_t> num = {16, 32, 64, 128, 128};    // numerical encoder interior channels
  std::vector<int64_t> dec = {256, 128, 64, 48, 24, 12};  // decoder channels after each upsample
  std::vector<int64_t> conf_enc = {16, 32, 64};
  std::vector<int64_t> conf_dec = {32, 16, 8};  // long path back to full resolution
  int64_t conf_short = 16;
  std::vector<int64_t> feat = {16, 32, 32};

  static Widths tiny() {
    Widths w;
    w.latent = 8;
    w.enc = {4, 8, 8, 8, 8};
    w.num = {4, 4, 8, 8, 8};
    w.dec = {8, 8, 8, 6, 6, 4};
    w.conf_enc = {4, 6, 8};
    w.conf_dec = {6, 4, 4};
    w.conf_short = 4;
    w.feat = {4, 6, 6};
    return w;
  }

  // shallow variant for 8x8 inputs (three stride-2 stages each way)
  static Widths tiny8() {
    Widths w;
    w.latent = 8;
    w.enc = {4, 8};
    w.num = {4, 8};
    w.dec = {8, 6, 4};
    w.conf_enc = {4, 6};
    w.conf_dec = {6, 4};
    w.conf_short = 4;
    w.feat = {4, 6, 6};
    return w;
  }
};

// Six stride-2 k4p1 convolutions take 64x64 to 1x1; group norm + leaky
// rectifier between them, raw linear output. Fully convolutional.
template <class T>
struct FeatureEncoder {
  std::vector<Conv<T>> convs;
  std::vector<GNorm<T>> gns;
  int64_t latent = 0;

  FeatureEncoder() = default;
  FeatureEncoder(LayerFactory<T>& f, const std::string& pfx, const Widths& ws) {
    latent = ws.latent;
    std::vector<int64_t> chain = {3};
    chain.insert(chain.end(), ws.enc.begin(), ws.enc.end());
    chain.push_back(ws.latent);
    for (size_t i = 0; i + 1 < chain.size(); ++i) {
      convs.push_back(make_conv(f, pfx + ".c" + std::to_string(i), chain[i], chain[i + 1], 4, 2, 1));
      if (i + 2 < chain.size())
        gns.push_back(make_gn(f, pfx + ".n" + std::to_string(i), chain[i + 1]));
    }
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
      h = convs[i](h);
      if (i < gns.size()) h = ad::leaky_relu(gns[i](h), T(0.2));
    }
    return ad::reshape(h, {h.value().dim(0), latent});
  }
};

// Same downsampling trunk with plain rectifiers and a tanh head emitting a
// few numeric outputs (6 pose values or 4 light values).
template <class T>
struct NumericEncoder {
  std::vector<Conv<T>> convs;
  int64_t out_dim = 0;

  NumericEncoder() = default;
  NumericEncoder(LayerFactory<T>& f, const std::string& pfx, const Widths& ws, int64_t out) {
    out_dim = out;
    std::vector<int64_t> chain = {3};
    chain.insert(chain.end(), ws.num.begin(), ws.num.end());
    chain.push_back(out);
    for (size_t i = 0; i + 1 < chain.size(); ++i)
      convs.push_back(make_conv(f, pfx + ".c" + std::to_string(i), chain[i], chain[i + 1], 4, 2, 1));
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
      h = convs[i](h);
      if (i + 1 < convs.size()) h = ad::relu(h);
    }
    h = ad::tanh(h);
    return ad::reshape(h, {h.value().dim(0), out_dim});
  }
};

// Latent back to a map: six stride-2 k4p1 transposed convolutions
// (1 -> 2 -> ... -> 64), then a 3x3 convolution to the output channels, tanh.
template <class T>
struct Decoder {
  std::vector<ConvT<T>> ups;
  std::vector<GNorm<T>> gns;
  Conv<T> head;
  int64_t latent = 0;

  Decoder() = default;
  Decoder(LayerFactory<T>& f, const std::string& pfx, const Widths& ws, int64_t out_ch) {
    latent = ws.latent;
    std::vector<int64_t> chain = {ws.latent};
    chain.insert(chain.end(), ws.dec.begin(), ws.dec.end());
    for (size_t i = 0; i + 1 < chain.size(); ++i) {
      ups.push_back(make_convt(f, pfx + ".u" + std::to_string(i), chain[i], chain[i + 1], 4, 2, 1));
      gns.push_back(make_gn(f, pfx + ".n" + std::to_string(i), chain[i + 1]));
    }
    head = make_conv(f, pfx + ".head", chain.back(), out_ch, 3, 1, 1);
  }

  Var<T> forward(const Var<T>& z) const {
    Var<T> h = ad::reshape(z, {z.value().dim(0), latent, 1, 1});
    for (size_t i = 0; i < ups.size(); ++i) h = ad::leaky_relu(gns[i](ups[i](h)), T(0.2));
    return ad::tanh(head(h));
  }
};

// Encoder-decoder emitting two confidence maps: sigma_p at input resolution
// (2 channels: one for the direct render, one for the flip render) and
// sigma_f at the perceptual feature resolution (input/4) via a shorter
// decoding path.
template <class T>
struct ConfNet {
  std::vector<Conv<T>> enc;
  std::vector<GNorm<T>> enc_gn;
  std::vector<ConvT<T>> dec;
  std::vector<GNorm<T>> dec_gn;
  Conv<T> head_p;
  std::vector<ConvT<T>> short_ups;
  std::vector<GNorm<T>> short_gns;
  Conv<T> head_f;

  ConfNet() = default;
  ConfNet(LayerFactory<T>& f, const std::string& pfx, const Widths& ws) {
    std::vector<int64_t> down = {3};
    down.insert(down.end(), ws.conf_enc.begin(), ws.conf_enc.end());
    for (size_t i = 0; i + 1 < down.size(); ++i) {
      enc.push_back(make_conv(f, pfx + ".e" + std::to_string(i), down[i], down[i + 1], 4, 2, 1));
      enc_gn.push_back(make_gn(f, pfx + ".en" + std::to_string(i), down[i + 1]));
    }
    if (ws.conf_dec.size() != ws.conf_enc.size() || ws.conf_enc.size() < 2)
      throw InvalidInputError("confidence net needs matching up/down stage counts (>= 2)");
    std::vector<int64_t> up = {ws.conf_enc.back()};
    up.insert(up.end(), ws.conf_dec.begin(), ws.conf_dec.end());
    for (size_t i = 0; i + 1 < up.size(); ++i) {
      dec.push_back(make_convt(f, pfx + ".d" + std::to_string(i), up[i], up[i + 1], 4, 2, 1));
      dec_gn.push_back(make_gn(f, pfx + ".dn" + std::to_string(i), up[i + 1]));
    }
    head_p = make_conv(f, pfx + ".hp", up.back(), 2, 3, 1, 1);
    // the short path climbs back only to input/4, where the perceptual
    // features live
    int64_t prev = ws.conf_enc.back();
    for (size_t i = 0; i + 2 < ws.conf_enc.size(); ++i) {
      short_ups.push_back(make_convt(f, pfx + ".s" + std::to_string(i), prev, ws.conf_short, 4, 2, 1));
      short_gns.push_back(make_gn(f, pfx + ".sn" + std::to_string(i), ws.conf_short));
      prev = ws.conf_short;
    }
    head_f = make_conv(f, pfx + ".hf", prev, 2, 3, 1, 1);
  }

  // returns (sigma_p [N,2,H,W], sigma_f [N,2,H/4,W/4])
  std::pair<Var<T>, Var<T>> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (size_t i = 0; i < enc.size(); ++i) h = ad::leaky_relu(enc_gn[i](enc[i](h)), T(0.2));
    Var<T> p = h;
    for (size_t i = 0; i < dec.size(); ++i) p = ad::leaky_relu(dec_gn[i](dec[i](p)), T(0.2));
    Var<T> sigma_p = ad::softplus(head_p(p));
    Var<T> s = h;
    for (size_t i = 0; i < short_ups.size(); ++i)
      s = ad::leaky_relu(short_gns[i](short_ups[i](s)), T(0.2));
    Var<T> sigma_f = ad::softplus(head_f(s));
    return {sigma_p, sigma_f};
  }
};

// Fixed random convolutional features standing in for a pretrained
// perceptual network; weights are seeded, then frozen. Gradients still flow
// to the input.
template <class T>
struct FeatNet {
  Conv<T> c0, c1, c2;

  FeatNet() = default;
  FeatNet(LayerFactory<T>& f, const std::string& pfx, const Widths& ws) {
    c0 = make_conv(f, pfx + ".c0", 3, ws.feat[0], 4, 2, 1);
    c1 = make_conv(f, pfx + ".c1", ws.feat[0], ws.feat[1], 4, 2, 1);
    c2 = make_conv(f, pfx + ".c2", ws.feat[1], ws.feat[2], 3, 1, 1);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = ad::leaky_relu(c0(x), T(0.2));
    h = ad::leaky_relu(c1(h), T(0.2));
    return c2(h);
  }
};

// Sinusoidal timestep embedding; `dim` must be even.
template <class T>
TensorT<T> timestep_embedding(const std::vector<int64_t>& taus, int64_t dim) {
  int64_t half = dim / 2;
  int64_t n = static_cast<int64_t>(taus.size());
  TensorT<T> out({n, dim});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < half; ++k) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                             static_cast<double>(half - 1));
      double a = static_cast<double>(taus[i]) * freq;
      out.at2(i, k) = static_cast<T>(std::sin(a));
      out.at2(i, half + k) = static_cast<T>(std::cos(a));
    }
  return out;
}

template <class T>
struct ResBlock {
  Linear<T> l1, l2, tproj;
  bool has_temb = false;

  ResBlock() = default;
  ResBlock(LayerFactory<T>& f, const std::string& pfx, int64_t width, int64_t temb_dim) {
    l1 = make_linear(f, pfx + ".l1", width, width);
    l2 = make_linear(f, pfx + ".l2", width, width);
    if (temb_dim > 0) {
      tproj = make_linear(f, pfx + ".t", temb_dim, width);
      has_temb = true;
    }
  }

  Var<T> forward(const Var<T>& x, const Var<T>& temb) const {
    Var<T> h = l1(ad::swish(x));
    if (has_temb) h = ad::add(h, tproj(temb));
    h = l2(ad::swish(h));
    return ad::add(x, h);
  }
};

// 1-D latent U-shaped denoiser: stem over the concatenated noisy latent and
// condition, three stages of two residual layers (widths wide/narrow/mid),
// a skip from the stem fused before the last stage, sinusoidal timestep
// embedding injected into every residual layer.
template <class T>
struct Denoiser {
  Linear<T> stem, trans1, trans2, fuse, head;
  ResBlock<T> rb[6];
  int64_t latent = 256, temb_dim = 128;

  Denoiser() = default;
  Denoiser(LayerFactory<T>& f, const std::string& pfx, int64_t latent_dim = 256,
           int64_t wide = 512, int64_t narrow = 128, int64_t mid = 256, int64_t temb = 128) {
    latent = latent_dim;
    temb_dim = temb;
    stem = make_linear(f, pfx + ".stem", 2 * latent_dim, wide);
    rb[0] = ResBlock<T>(f, pfx + ".b0a", wide, temb);
    rb[1] = ResBlock<T>(f, pfx + ".b0b", wide, temb);
    trans1 = make_linear(f, pfx + ".t1", wide, narrow);
    rb[2] = ResBlock<T>(f, pfx + ".b1a", narrow, temb);
    rb[3] = ResBlock<T>(f, pfx + ".b1b", narrow, temb);
    trans2 = make_linear(f, pfx + ".t2", narrow, mid);
    fuse = make_linear(f, pfx + ".fuse", mid + wide, mid);
    rb[4] = ResBlock<T>(f, pfx + ".b2a", mid, temb);
    rb[5] = ResBlock<T>(f, pfx + ".b2b", mid, temb);
    head = make_linear(f, pfx + ".head", mid, latent_dim);
  }

  // z_noisy [N,L], cond [N,L], taus one per row -> predicted clean latent
  Var<T> forward(const Var<T>& z_noisy, const Var<T>& cond,
                 const std::vector<int64_t>& taus) const {
    Var<T> temb = Var<T>::constant(timestep_embedding<T>(taus, temb_dim));
    Var<T> s = stem(ad::concat_cols(z_noisy, cond));
    Var<T> h = rb[1].forward(rb[0].forward(s, temb), temb);
    h = trans1(ad::swish(h));
    h = rb[3].forward(rb[2].forward(h, temb), temb);
    h = trans2(ad::swish(h));
    h = fuse(ad::concat_cols(h, s));
    h = rb[5].forward(rb[4].forward(h, temb), temb);
    return head(ad::swish(h));
  }
};

// Residual vector regressor: the direct identity predictor used as the
// diffusion model's ablation baseline.
template <class T>
struct BaselineRegressor {
  ResBlock<T> rb[3];
  Linear<T> head;
  int64_t latent = 256;

  BaselineRegressor() = default;
  BaselineRegressor(LayerFactory<T>& f, const std::string& pfx, int64_t latent_dim = 256) {
    latent = latent_dim;
    for (int i = 0; i < 3; ++i)
      rb[i] = ResBlock<T>(f, pfx + ".r" + std::to_string(i), latent_dim, 0);
    head = make_linear(f, pfx + ".head", latent_dim, latent_dim);
  }

  Var<T> forward(const Var<T>& z) const {
    Var<T> h = z;
    Var<T> none;
    for (int i = 0; i < 3; ++i) h = rb[i].forward(h, none);
    return head(h);
  }
};

// Normalization layer + one linear map; the only trainable part of a probe.
template <class T>
struct ProbeHead {
  Var<T> gamma, beta;
  Linear<T> lin;
  ad::BnStats<T> stats;

  ProbeHead() = default;
  ProbeHead(LayerFactory<T>& f, const std::string& pfx, int64_t feat_dim, int64_t n_classes) {
    gamma = f.ones(pfx + ".g", {feat_dim});
    beta = f.zeros(pfx + ".be", {feat_dim});
    lin = make_linear(f, pfx + ".lin", feat_dim, n_classes);
    stats.init(feat_dim);
  }

  Var<T> forward(const Var<T>& x, bool training) {
    return lin(ad::batch_norm1d(x, gamma, beta, stats, training));
  }
};

}  // namespace lf::nets
