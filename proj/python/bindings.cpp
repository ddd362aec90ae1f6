#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latentface/checkpoint.hpp"
#include "latentface/data.hpp"
#include "latentface/diffusion.hpp"
#include "latentface/gradcheck.hpp"
#include "latentface/renderer.hpp"
#include "latentface/stage1.hpp"
#include "latentface/synth.hpp"

namespace py = pybind11;
using namespace lf;

namespace {

template <class T>
py::array_t<T> to_numpy(const TensorT<T>& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<T> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

template <class T>
TensorT<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  TensorT<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

render::PoseT<double> pose_from(const std::vector<double>& v) {
  if (v.size() != 6) throw InvalidInputError("pose must be [yaw, pitch, roll, tx, ty, tz]");
  render::PoseT<double> p;
  p.yaw = v[0];
  p.pitch = v[1];
  p.roll = v[2];
  p.tx = v[3];
  p.ty = v[4];
  p.tz = v[5];
  return p;
}

render::LightT<double> light_from(const std::vector<double>& v) {
  if (v.size() != 4) throw InvalidInputError("light must be [ka, kd, lx, ly]");
  return render::LightT<double>{v[0], v[1], v[2], v[3]};
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Symmetric 3D-aware autoencoding with latent diffusion: core operations";

  auto err = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInputError>(m, "InvalidInputError", err);
  py::register_exception<DataError>(m, "DataError", err);
  py::register_exception<NumericalError>(m, "NumericalError", err);

  m.def("focal_length", [] { return render::Camera::standard().f; },
        "Projection focal length of the standard camera (10 degree fov).");

  m.def(
      "render",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& albedo,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& depth,
         const std::vector<double>& pose, const std::vector<double>& light) {
        auto out = render::render(from_numpy(albedo), from_numpy(depth), pose_from(pose),
                                  light_from(light), render::Camera::standard());
        return to_numpy(out.image);
      },
      py::arg("albedo"), py::arg("depth"),
      py::arg("pose") = std::vector<double>{0, 0, 0, 0, 0, 0},
      py::arg("light") = std::vector<double>{0.7, 0.3, 0, 0},
      "Shade and project an albedo [3,H,W] / depth [H,W] pair; returns the image [3,H,W].");

  m.def(
      "frontalize",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& albedo,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& depth) {
        auto out =
            render::frontalize(from_numpy(albedo), from_numpy(depth), render::Camera::standard());
        return to_numpy(out.image);
      },
      py::arg("albedo"), py::arg("depth"),
      "Render at the identity pose under neutral light.");

  m.def(
      "make_schedule",
      [](int64_t T) {
        auto s = diffusion::make_schedule(T);
        py::dict d;
        d["T"] = s.T;
        d["beta"] = py::cast(s.beta);
        d["alpha"] = py::cast(s.alpha);
        d["alpha_bar"] = py::cast(s.alpha_bar);
        d["weight"] = py::cast(s.weight);
        return d;
      },
      py::arg("T") = 1000,
      "Linear noise schedule; arrays are 1-indexed by timestep with entry 0 at the clean limit.");

  m.def(
      "q_sample",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z0, int64_t tau,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& eps, int64_t T) {
        auto sched = diffusion::make_schedule(T);
        return to_numpy(diffusion::q_sample(from_numpy(z0), tau, from_numpy(eps), sched));
      },
      py::arg("z0"), py::arg("tau"), py::arg("eps"), py::arg("T") = 1000,
      "Forward-noise z0 to timestep tau with the given standard-normal draw.");

  m.def(
      "ddim_sample",
      [](const std::function<py::array_t<double>(py::array_t<double>, int64_t)>& denoise,
         int64_t n, int64_t latent_dim, int64_t T, int64_t S, uint64_t seed) {
        std::function<DTensor(const DTensor&, int64_t)> wrapped =
            [&](const DTensor& z, int64_t tau) {
              py::array_t<double, py::array::c_style | py::array::forcecast> out(
                  denoise(to_numpy(z), tau));
              return from_numpy(out);
            };
        auto sched = diffusion::make_schedule(T);
        return to_numpy(diffusion::ddim_sample<double>(wrapped, n, latent_dim, sched, S, seed));
      },
      py::arg("denoise"), py::arg("n"), py::arg("latent_dim"), py::arg("T") = 1000,
      py::arg("S") = 5, py::arg("seed") = 0,
      "Deterministic DDIM over a batch; denoise(z [n,L], tau) must return predicted clean "
      "latents of the same shape.");

  m.def(
      "conf_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& target,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& sigma,
         const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
        return stage1::conf_loss(from_numpy(pred), from_numpy(target), from_numpy(sigma),
                                 from_numpy(mask));
      },
      py::arg("pred"), py::arg("target"), py::arg("sigma"), py::arg("mask"),
      "Confidence-weighted Laplacian reconstruction loss over the masked pixels.");

  m.def(
      "invariants",
      [] {
        py::list out;
        for (const auto& r : gradcheck::invariant_suite()) {
          py::dict d;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["value"] = r.value;
          out.append(d);
        }
        return out;
      },
      "Exact renderer and schedule identities with their measured deviations.");

  m.def(
      "gen_dataset",
      [](const std::string& root, int n_identities, int frames_per_identity, uint64_t seed,
         int pos_pairs, int neg_pairs) {
        synth::DatasetSpec spec;
        spec.n_identities = n_identities;
        spec.frames_per_identity = frames_per_identity;
        spec.seed = seed;
        spec.pos_pairs = pos_pairs;
        spec.neg_pairs = neg_pairs;
        synth::gen_dataset(spec, root);
      },
      py::arg("root"), py::arg("n_identities") = 64, py::arg("frames_per_identity") = 16,
      py::arg("seed") = 7, py::arg("pos_pairs") = 300, py::arg("neg_pairs") = 300,
      "Write a synthetic face corpus (train/eval PNG trees, labels.csv, pairs.csv, "
      "manifest.json).");

  m.def(
      "render_sample",
      [](uint64_t corpus_seed, int identity, int frame) {
        auto p = synth::draw_sample_params(corpus_seed, identity, frame);
        return to_numpy(synth::render_sample(corpus_seed, p).image);
      },
      py::arg("corpus_seed"), py::arg("identity"), py::arg("frame"),
      "Ground-truth render for one corpus sample, reproducible from the seed alone.");

  m.def(
      "read_checkpoint_meta",
      [](const std::string& path) { return json_to_py(ckpt::load(path).meta); },
      py::arg("path"), "Metadata block of a checkpoint container.");

  m.def(
      "read_checkpoint_tensors",
      [](const std::string& path) {
        py::dict out;
        for (const auto& [name, tensor] : ckpt::load(path).tensors)
          out[py::str(name)] = to_numpy(tensor);
        return out;
      },
      py::arg("path"), "All tensors of a checkpoint container, keyed by name.");

  m.def(
      "reconstruct",
      [](const std::string& ckpt_path,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& image) {
        auto loaded = stage1::load_stage1(ckpt_path);
        auto rec = stage1::reconstruct_one(loaded.model, loaded.cfg, from_numpy(image));
        py::dict out;
        out["recon"] = to_numpy(rec.recon);
        out["frontal"] = to_numpy(rec.frontal);
        out["albedo"] = to_numpy(rec.albedo);
        out["depth"] = to_numpy(rec.depth);
        return out;
      },
      py::arg("ckpt_path"), py::arg("image"),
      "Run a trained autoencoder on one [3,64,64] image in [0,1].");
}
