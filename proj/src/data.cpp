#include "latentface/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latentface/common.hpp"
#include "latentface/image_io.hpp"

namespace lf::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad numeric field '" + s + "' in " + what);
  }
}

}  // namespace

Corpus Corpus::open(const std::string& root) {
  Corpus c;
  c.root = root;
  if (!fs::is_directory(root)) throw DataError("corpus root not found: " + root);

  for (const char* split : {"train", "eval"}) {
    fs::path dir = fs::path(root) / split;
    if (!fs::is_directory(dir)) continue;
    for (const auto& ident : fs::directory_iterator(dir)) {
      if (!ident.is_directory()) continue;
      for (const auto& f : fs::directory_iterator(ident.path())) {
        if (f.path().extension() != ".png") continue;
        SampleRef s;
        s.split = split;
        s.identity = ident.path().filename().string();
        s.frame = f.path().stem().string();
        s.path = std::string(split) + "/" + s.identity + "/" + f.path().filename().string();
        c.samples.push_back(std::move(s));
      }
    }
  }
  std::sort(c.samples.begin(), c.samples.end(),
            [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; });
  if (c.samples.empty()) throw DataError("corpus has no images: " + root);

  fs::path labels_path = fs::path(root) / "labels.csv";
  if (fs::exists(labels_path)) {
    std::ifstream in(labels_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("labels.csv empty");
    if (split_csv_line(line) !=
        std::vector<std::string>{"split", "identity", "frame", "class", "magnitude", "yaw",
                                 "pitch", "roll", "tx", "ty", "tz", "ka", "kd", "lx", "ly"})
      throw DataError("labels.csv has an unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() != 15) throw DataError("labels.csv row has wrong field count");
      LabelRow row;
      row.cls = static_cast<int>(parse_double(f[3], "labels.csv"));
      row.magnitude = parse_double(f[4], "labels.csv");
      row.yaw = parse_double(f[5], "labels.csv");
      row.pitch = parse_double(f[6], "labels.csv");
      row.roll = parse_double(f[7], "labels.csv");
      row.tx = parse_double(f[8], "labels.csv");
      row.ty = parse_double(f[9], "labels.csv");
      row.tz = parse_double(f[10], "labels.csv");
      row.ka = parse_double(f[11], "labels.csv");
      row.kd = parse_double(f[12], "labels.csv");
      row.lx = parse_double(f[13], "labels.csv");
      row.ly = parse_double(f[14], "labels.csv");
      c.labels[f[0] + "/" + f[1] + "/" + f[2] + ".png"] = row;
    }
  }

  fs::path pairs_path = fs::path(root) / "pairs.csv";
  if (fs::exists(pairs_path)) {
    std::ifstream in(pairs_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("pairs.csv empty");
    if (split_csv_line(line) != std::vector<std::string>{"img_a", "img_b", "same"})
      throw DataError("pairs.csv has an unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() != 3) throw DataError("pairs.csv row has wrong field count");
      c.pairs.push_back({f[0], f[1], static_cast<int>(parse_double(f[2], "pairs.csv"))});
    }
  }

  for (const auto& s : c.samples)
    if (!fs::exists(c.abs_path(s.path))) throw DataError("indexed file vanished: " + s.path);
  return c;
}

std::vector<int64_t> Corpus::split_indices(const std::string& split) const {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < static_cast<int64_t>(samples.size()); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

std::string Corpus::abs_path(const std::string& rel) const {
  return (fs::path(root) / rel).string();
}

const LabelRow* Corpus::label(const SampleRef& s) const {
  auto it = labels.find(s.path);
  return it == labels.end() ? nullptr : &it->second;
}

Tensor load_image(const std::string& path) {
  Tensor img = img::read_png_rgb(path);
  if (img.dim(1) == 64 && img.dim(2) == 64) return img;
  return img::resize_bilinear(img.cast<double>(), 64, 64).cast<float>();
}

Tensor load_batch(const Corpus& corpus, const std::vector<int64_t>& indices) {
  int64_t n = static_cast<int64_t>(indices.size());
  Tensor out({n, 3, 64, 64});
  for (int64_t i = 0; i < n; ++i) {
    Tensor img = load_image(corpus.abs_path(corpus.samples[indices[i]].path));
    std::copy_n(img.data.data(), img.numel(), out.data.data() + i * img.numel());
  }
  return out;
}

std::vector<std::vector<int64_t>> plan_batches(int64_t n, int64_t batch_size, uint64_t seed,
                                               int64_t epoch) {
  if (n < 1) throw InvalidInputError("plan_batches: empty dataset");
  if (batch_size < 1) throw InvalidInputError("plan_batches: batch size must be >= 1");
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(hash_mix(seed, hash_str("batch-plan"), static_cast<uint64_t>(epoch)));
  rng.shuffle(perm);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace lf::data
