#include "latentface/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "latentface/common.hpp"

namespace lf::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png_impl(const std::string& path, const std::vector<uint8_t>& rows_data, int64_t h,
                    int64_t w, int color_type, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  // fixed settings keep output byte-identical across runs
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int64_t i = 0; i < h; ++i)
    rows[i] = const_cast<png_bytep>(rows_data.data() + i * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <class T>
std::vector<uint8_t> pack_rgb(const TensorT<T>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw InvalidInputError("image must be 3 x H x W");
  int64_t h = image.dim(1), w = image.dim(2);
  std::vector<uint8_t> buf(static_cast<size_t>(3 * h * w));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        buf[(i * w + j) * 3 + c] = quantize8(static_cast<double>(image.at3(c, i, j)));
  return buf;
}

}  // namespace

uint8_t quantize8(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::nearbyint(v * 255.0));
}

void write_png_rgb(const std::string& path, const Tensor& image) {
  write_png_impl(path, pack_rgb(image), image.dim(1), image.dim(2), PNG_COLOR_TYPE_RGB, 3);
}

void write_png_rgb(const std::string& path, const DTensor& image) {
  write_png_impl(path, pack_rgb(image), image.dim(1), image.dim(2), PNG_COLOR_TYPE_RGB, 3);
}

void write_png_gray(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) throw InvalidInputError("gray image must be H x W");
  int64_t h = image.dim(0), w = image.dim(1);
  std::vector<uint8_t> buf(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      buf[i * w + j] = quantize8(static_cast<double>(image.at2(i, j)));
  write_png_impl(path, buf, h, w, PNG_COLOR_TYPE_GRAY, 1);
}

Tensor read_png_rgb(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  uint8_t header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw CorruptFileError("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFileError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  int64_t h = png_get_image_height(png, info);
  int64_t w = png_get_image_width(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFileError("unexpected channel count after expansion: " + path);
  }
  std::vector<uint8_t> buf(static_cast<size_t>(3 * h * w));
  std::vector<png_bytep> rows(h);
  for (int64_t i = 0; i < h; ++i) rows[i] = buf.data() + i * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({3, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        out.at3(c, i, j) = static_cast<float>(buf[(i * w + j) * 3 + c]) / 255.0f;
  return out;
}

void write_pgm(const std::string& path, const Tensor& image, double lo, double hi) {
  if (image.rank() != 2) throw InvalidInputError("pgm image must be H x W");
  if (!(hi > lo)) throw InvalidInputError("pgm range must satisfy hi > lo");
  int64_t h = image.dim(0), w = image.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> buf(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      buf[i * w + j] = quantize8((static_cast<double>(image.at2(i, j)) - lo) / (hi - lo));
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("pgm write failed: " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
      if (c == '#') {
        while ((c = f.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  if (next_token() != "P5") throw CorruptFileError("not a binary PGM: " + path);
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(next_token());
    h = std::stoll(next_token());
    maxval = std::stoll(next_token());
  } catch (const std::exception&) {
    throw CorruptFileError("bad PGM header: " + path);
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw CorruptFileError("unsupported PGM header: " + path);
  std::vector<uint8_t> buf(static_cast<size_t>(h * w));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw CorruptFileError("truncated PGM: " + path);
  Tensor out({h, w});
  for (int64_t i = 0; i < h * w; ++i) out.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

DTensor resize_bilinear(const DTensor& src, int64_t out_h, int64_t out_w) {
  if (src.rank() != 3) throw InvalidInputError("resize expects C x h x w");
  int64_t ch = src.dim(0), ih = src.dim(1), iw = src.dim(2);
  DTensor out({ch, out_h, out_w});
  double sy = static_cast<double>(ih) / static_cast<double>(out_h);
  double sx = static_cast<double>(iw) / static_cast<double>(out_w);
  for (int64_t i = 0; i < out_h; ++i) {
    double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - static_cast<double>(y0);
    int64_t y0c = std::clamp<int64_t>(y0, 0, ih - 1);
    int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, ih - 1);
    for (int64_t j = 0; j < out_w; ++j) {
      double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - static_cast<double>(x0);
      int64_t x0c = std::clamp<int64_t>(x0, 0, iw - 1);
      int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, iw - 1);
      for (int64_t c = 0; c < ch; ++c) {
        double v00 = src.at3(c, y0c, x0c), v01 = src.at3(c, y0c, x1c);
        double v10 = src.at3(c, y1c, x0c), v11 = src.at3(c, y1c, x1c);
        out.at3(c, i, j) =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

}  // namespace lf::img
