#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latentface/autodiff.hpp"
#include "latentface/common.hpp"
#include "latentface/tensor.hpp"

using namespace lf;
using ad::Var;
using lftest::fd_max_rel_err;

TEST_CASE("tensor indexing agrees with flat layout") {
  DTensor t({2, 3, 4});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at3(1, 2, 3) == 23.0);
  CHECK(t.at3(0, 1, 0) == 4.0);
  DTensor r = t.reshaped({6, 4});
  CHECK(r.at2(5, 3) == 23.0);
  CHECK(t.numel() == 24);
  CHECK(TensorT<float>::full({2, 2}, 3.f)[3] == 3.f);
}

TEST_CASE("hflip reverses the last axis and is an involution") {
  Rng rng(11);
  DTensor t = lftest::rand_tensor({3, 5, 7}, rng);
  DTensor f = hflip(t);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 7; ++j) CHECK(f.at3(c, i, j) == t.at3(c, i, 6 - j));
  DTensor ff = hflip(f);
  CHECK(ff.data == t.data);
}

TEST_CASE("seeded rng streams reproduce exactly and differ across seeds") {
  Rng a(42), b(42), c(43);
  bool same = true, diff = false;
  for (int i = 0; i < 32; ++i) {
    uint64_t x = a.next_u64();
    same = same && (x == b.next_u64());
    diff = diff || (x != c.next_u64());
  }
  CHECK(same);
  CHECK(diff);

  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    int64_t k = r.uniform_int(-3, 3);
    CHECK(k >= -3);
    CHECK(k <= 3);
  }

  std::vector<int> v(20);
  for (int i = 0; i < 20; ++i) v[i] = i;
  Rng s(9);
  s.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("hash_mix is order sensitive") {
  CHECK(hash_mix(1, 2) != hash_mix(2, 1));
  CHECK(hash_str("tex") != hash_str("shape"));
  CHECK(hash_mix(7, hash_str("a"), 0) != hash_mix(7, hash_str("a"), 1));
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(3);
  // operands kept away from the abs/relu kinks and div-by-small regions
  DTensor av = lftest::rand_tensor({2, 3}, rng, 0.3, 1.2);
  DTensor bv = lftest::rand_tensor({2, 3}, rng, 1.5, 2.5);
  DTensor wv = lftest::rand_tensor({2, 3}, rng, 0.5, 1.5);
  Var<double> a = Var<double>::param(av);
  Var<double> b = Var<double>::param(bv);
  Var<double> w = Var<double>::constant(wv);

  auto weighted = [&](Var<double> x) { return ad::sum(ad::mul(x, w)); };

  struct Case {
    const char* name;
    std::function<Var<double>()> loss;
  };
  std::vector<Case> cases = {
      {"add", [&] { return weighted(ad::add(a, b)); }},
      {"sub", [&] { return weighted(ad::sub(a, b)); }},
      {"mul", [&] { return weighted(ad::mul(a, b)); }},
      {"div", [&] { return weighted(ad::div(a, b)); }},
      {"abs", [&] { return weighted(ad::abs(ad::sub(a, b))); }},
      {"log", [&] { return weighted(ad::log(b)); }},
      {"relu", [&] { return weighted(ad::relu(ad::sub(a, b))); }},
      {"leaky_relu", [&] { return weighted(ad::leaky_relu(ad::sub(a, b), 0.2)); }},
      {"tanh", [&] { return weighted(ad::tanh(a)); }},
      {"sigmoid", [&] { return weighted(ad::sigmoid(a)); }},
      {"swish", [&] { return weighted(ad::swish(a)); }},
      {"softplus", [&] { return weighted(ad::softplus(a)); }},
      {"scale", [&] { return weighted(ad::scale(a, -1.7)); }},
      {"add_scalar", [&] { return weighted(ad::add_scalar(a, 2.5)); }},
      {"mean", [&] { return ad::mean(ad::mul(a, b)); }},
  };
  Rng wrng(8);
  DTensor cw = lftest::rand_tensor({2, 6}, wrng);
  cases.push_back({"concat_cols", [&] {
                     return ad::sum(ad::mul(ad::concat_cols(a, b), Var<double>::constant(cw)));
                   }});

  for (auto& c : cases) {
    CAPTURE(c.name);
    CHECK(fd_max_rel_err({a, b}, c.loss) < 1e-6);
  }
}

TEST_CASE("spatial op gradients match finite differences") {
  Rng rng(4);
  DTensor xv = lftest::rand_tensor({2, 4, 3, 3}, rng);
  Var<double> x = Var<double>::param(xv);
  DTensor w4 = lftest::rand_tensor({2, 4, 3, 3}, rng, 0.5, 1.5);
  DTensor w1 = lftest::rand_tensor({2, 1, 3, 3}, rng, 0.5, 1.5);
  DTensor w2 = lftest::rand_tensor({2, 2, 3, 3}, rng, 0.5, 1.5);

  auto hflip_loss = [&] {
    return ad::sum(ad::mul(ad::hflip4(x), Var<double>::constant(w4)));
  };
  CHECK(fd_max_rel_err({x}, hflip_loss) < 1e-6);

  auto mean_ch_loss = [&] {
    return ad::sum(ad::mul(ad::mean_channels(x), Var<double>::constant(w1)));
  };
  CHECK(fd_max_rel_err({x}, mean_ch_loss) < 1e-6);

  auto slice_loss = [&] {
    return ad::sum(ad::mul(ad::slice_channels(x, 1, 2), Var<double>::constant(w2)));
  };
  CHECK(fd_max_rel_err({x}, slice_loss) < 1e-6);

  auto reshape_loss = [&] {
    return ad::sum(ad::mul(ad::reshape(x, {4, 18}),
                           Var<double>::constant(w4.reshaped({4, 18}))));
  };
  CHECK(fd_max_rel_err({x}, reshape_loss) < 1e-6);
}

TEST_CASE("linear and conv gradients match finite differences") {
  Rng rng(7);

  Var<double> x = Var<double>::param(lftest::rand_tensor({3, 4}, rng));
  Var<double> w = Var<double>::param(lftest::rand_tensor({2, 4}, rng));
  Var<double> b = Var<double>::param(lftest::rand_tensor({2}, rng));
  DTensor lw = lftest::rand_tensor({3, 2}, rng, 0.5, 1.5);
  auto lin_loss = [&] {
    return ad::sum(ad::mul(ad::linear(x, w, b), Var<double>::constant(lw)));
  };
  CHECK(fd_max_rel_err({x, w, b}, lin_loss) < 1e-6);

  Var<double> cx = Var<double>::param(lftest::rand_tensor({1, 2, 6, 6}, rng));
  Var<double> cw = Var<double>::param(lftest::rand_tensor({3, 2, 4, 4}, rng));
  Var<double> cb = Var<double>::param(lftest::rand_tensor({3}, rng));
  DTensor cwt = lftest::rand_tensor({1, 3, 3, 3}, rng, 0.5, 1.5);
  auto conv_loss = [&] {
    return ad::sum(ad::mul(ad::conv2d(cx, cw, cb, 2, 1), Var<double>::constant(cwt)));
  };
  CHECK(fd_max_rel_err({cx, cw, cb}, conv_loss) < 1e-6);

  Var<double> tx = Var<double>::param(lftest::rand_tensor({1, 3, 3, 3}, rng));
  Var<double> tw = Var<double>::param(lftest::rand_tensor({3, 2, 4, 4}, rng));
  Var<double> tb = Var<double>::param(lftest::rand_tensor({2}, rng));
  DTensor twt = lftest::rand_tensor({1, 2, 6, 6}, rng, 0.5, 1.5);
  auto convt_loss = [&] {
    return ad::sum(ad::mul(ad::conv_transpose2d(tx, tw, tb, 2, 1), Var<double>::constant(twt)));
  };
  CHECK(fd_max_rel_err({tx, tw, tb}, convt_loss) < 1e-6);
}

TEST_CASE("normalization and classification gradients match finite differences") {
  Rng rng(13);

  Var<double> gx = Var<double>::param(lftest::rand_tensor({2, 4, 3, 3}, rng));
  Var<double> gg = Var<double>::param(lftest::rand_tensor({4}, rng, 0.5, 1.5));
  Var<double> gb = Var<double>::param(lftest::rand_tensor({4}, rng));
  DTensor gw = lftest::rand_tensor({2, 4, 3, 3}, rng, 0.5, 1.5);
  auto gn_loss = [&] {
    return ad::sum(ad::mul(ad::group_norm(gx, gg, gb, 2), Var<double>::constant(gw)));
  };
  CHECK(fd_max_rel_err({gx, gg, gb}, gn_loss) < 1e-5);

  Var<double> bx = Var<double>::param(lftest::rand_tensor({5, 3}, rng));
  Var<double> bg = Var<double>::param(lftest::rand_tensor({3}, rng, 0.5, 1.5));
  Var<double> bb = Var<double>::param(lftest::rand_tensor({3}, rng));
  ad::BnStats<double> stats;
  stats.init(3);
  DTensor bw = lftest::rand_tensor({5, 3}, rng, 0.5, 1.5);
  auto bn_train_loss = [&] {
    return ad::sum(ad::mul(ad::batch_norm1d(bx, bg, bb, stats, true), Var<double>::constant(bw)));
  };
  CHECK(fd_max_rel_err({bx, bg, bb}, bn_train_loss) < 1e-5);
  auto bn_eval_loss = [&] {
    return ad::sum(ad::mul(ad::batch_norm1d(bx, bg, bb, stats, false), Var<double>::constant(bw)));
  };
  CHECK(fd_max_rel_err({bx, bg, bb}, bn_eval_loss) < 1e-5);

  Var<double> lx = Var<double>::param(lftest::rand_tensor({4, 3}, rng));
  std::vector<int> labels = {0, 2, 1, 2};
  auto nll = [&] { return ad::nll_loss(ad::log_softmax(lx), labels); };
  CHECK(fd_max_rel_err({lx}, nll) < 1e-6);
}

TEST_CASE("log_softmax rows are normalized log probabilities") {
  Rng rng(2);
  Var<double> x = Var<double>::constant(lftest::rand_tensor({3, 5}, rng, -4.0, 4.0));
  auto lp = ad::log_softmax(x);
  for (int64_t i = 0; i < 3; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 5; ++j) s += std::exp(lp.value().at2(i, j));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward needs a trainable leaf and constants prune the graph") {
  Rng rng(1);
  Var<double> c = Var<double>::constant(lftest::rand_tensor({2, 2}, rng));
  Var<double> y = ad::sum(ad::mul(c, c));
  CHECK_FALSE(y.node()->requires_grad);
  CHECK(y.node()->parents.empty());
  CHECK_THROWS_AS(ad::backward(y), InvalidInputError);

  Var<double> p = Var<double>::param(lftest::rand_tensor({2, 2}, rng));
  Var<double> z = ad::sum(ad::mul(p, c));
  CHECK(z.node()->requires_grad);
  ad::backward(z);
  CHECK(p.grad().numel() == 4);
}

TEST_CASE("batch and label validation errors") {
  Rng rng(6);
  Var<double> one = Var<double>::param(lftest::rand_tensor({1, 3}, rng));
  Var<double> g = Var<double>::param(DTensor::full({3}, 1.0));
  Var<double> be = Var<double>::param(DTensor({3}));
  ad::BnStats<double> stats;
  stats.init(3);
  CHECK_THROWS_AS(ad::batch_norm1d(one, g, be, stats, true), InvalidInputError);
  CHECK_NOTHROW(ad::batch_norm1d(one, g, be, stats, false));

  Var<double> lp = Var<double>::constant(DTensor({2, 3}));
  CHECK_THROWS_AS(ad::nll_loss(lp, {0}), InvalidInputError);
  CHECK_THROWS_AS(ad::nll_loss(lp, {0, 3}), InvalidInputError);
}

TEST_CASE("adam walks a quadratic to its minimum") {
  ad::ParamStore<double> ps;
  Rng rng(20);
  Var<double>& x = ps.add("x", lftest::rand_tensor({4}, rng, -2.0, 2.0));
  DTensor target({4});
  target[0] = 0.3;
  target[1] = -0.7;
  target[2] = 1.1;
  target[3] = 0.0;
  Var<double> c = Var<double>::constant(target);
  ad::Adam<double> opt(ps, 0.05);
  for (int it = 0; it < 800; ++it) {
    ps.zero_grad();
    Var<double> d = ad::sub(x, c);
    Var<double> loss = ad::sum(ad::mul(d, d));
    ad::backward(loss);
    opt.step();
  }
  for (int64_t i = 0; i < 4; ++i)
    CHECK(std::abs(x.value()[i] - target[i]) < 2e-2);
  CHECK(opt.steps() == 800);
}

TEST_CASE("duplicate and missing parameter names are rejected") {
  ad::ParamStore<float> ps;
  ps.add("a", Tensor({2}));
  CHECK_THROWS_AS(ps.add("a", Tensor({2})), InvalidInputError);
  CHECK_THROWS_AS(ps.get("b"), InvalidInputError);
  CHECK(ps.has("a"));
  CHECK(ps.count_scalars() == 2);
}
