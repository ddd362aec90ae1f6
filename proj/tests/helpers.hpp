#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "latentface/autodiff.hpp"
#include "latentface/tensor.hpp"

namespace lftest {

// Scratch directory removed at scope exit.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("lf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

// Worst relative error between the analytic gradient of a scalar loss and a
// central finite difference, over every scalar of every leaf. The builder
// must reconstruct the graph from the leaves' current values on each call.
inline double fd_max_rel_err(std::vector<lf::ad::Var<double>> leaves,
                             const std::function<lf::ad::Var<double>()>& loss_fn,
                             double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  lf::ad::Var<double> loss = loss_fn();
  lf::ad::backward(loss);
  double worst = 0;
  for (auto& l : leaves) {
    for (int64_t i = 0; i < l.value().numel(); ++i) {
      double keep = l.value()[i];
      l.value()[i] = keep + h;
      double up = loss_fn().value()[0];
      l.value()[i] = keep - h;
      double dn = loss_fn().value()[0];
      l.value()[i] = keep;
      double fd = (up - dn) / (2.0 * h);
      double an = l.grad().numel() ? l.grad()[i] : 0.0;
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline lf::DTensor rand_tensor(std::vector<int64_t> shape, lf::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
  lf::DTensor t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

}  // namespace lftest
