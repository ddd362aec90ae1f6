#include "latentface/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "latentface/common.hpp"

namespace lf::ckpt {

namespace {

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw CorruptFileError("checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

std::vector<uint8_t> read_file(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open: " + path);
  std::fseek(fp.get(), 0, SEEK_END);
  long size = std::ftell(fp.get());
  std::fseek(fp.get(), 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  if (size > 0 && std::fread(buf.data(), 1, buf.size(), fp.get()) != buf.size())
    throw IoError("short read: " + path);
  return buf;
}

}  // namespace

void save(const std::string& path, const Checkpoint& ck) {
  std::vector<uint8_t> buf;
  buf.push_back('L');
  buf.push_back('F');
  buf.push_back('C');
  buf.push_back('K');
  put_u32(buf, kFormatVersion);
  std::string meta = ck.meta.dump();
  put_u64(buf, meta.size());
  buf.insert(buf.end(), meta.begin(), meta.end());
  for (const auto& [name, t] : ck.tensors) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape) put_u64(buf, static_cast<uint64_t>(d));
    put_u64(buf, static_cast<uint64_t>(t.numel()) * 4);
    for (int64_t i = 0; i < t.numel(); ++i) put_u32(buf, std::bit_cast<uint32_t>(t[i]));
  }
  uint32_t crc = static_cast<uint32_t>(::crc32(0, buf.data(), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open for writing: " + path);
  if (std::fwrite(buf.data(), 1, buf.size(), fp.get()) != buf.size())
    throw IoError("short write: " + path);
}

Checkpoint load(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  if (buf.size() < 4 + 4 + 8 + 4) throw CorruptFileError("checkpoint truncated");
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
  uint32_t crc =
      static_cast<uint32_t>(::crc32(0, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored_crc) throw CorruptFileError("checkpoint checksum mismatch");

  Reader r{buf};
  if (r.str(4) != "LFCK") throw CorruptFileError("bad checkpoint magic");
  uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw VersionMismatchError("unsupported checkpoint format version " + std::to_string(version));
  uint64_t meta_len = r.u64();
  std::string meta_str = r.str(meta_len);
  Checkpoint ck;
  try {
    ck.meta = json::parse(meta_str);
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("checkpoint metadata invalid: ") + e.what());
  }
  size_t end = buf.size() - 4;
  while (r.pos < end) {
    uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    uint32_t rank = r.u32();
    if (rank > 8) throw CorruptFileError("implausible tensor rank");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(r.u64());
      if (shape[i] <= 0 || numel > (1LL << 33) / std::max<int64_t>(shape[i], 1))
        throw CorruptFileError("implausible tensor shape");
      numel *= shape[i];
    }
    uint64_t bytes = r.u64();
    if (bytes != static_cast<uint64_t>(numel) * 4)
      throw CorruptFileError("tensor byte length mismatch");
    Tensor t(shape);
    for (int64_t i = 0; i < numel; ++i) t[i] = std::bit_cast<float>(r.u32());
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

uint32_t file_crc32(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  return static_cast<uint32_t>(::crc32(0, buf.data(), static_cast<uInt>(buf.size())));
}

Checkpoint from_params(const ad::ParamStore<float>& ps, json meta) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& [name, v] : ps.items()) ck.tensors.emplace_back(name, v.value());
  return ck;
}

void load_params(const Checkpoint& ck, ad::ParamStore<float>& ps,
                 const std::string& expected_arch) {
  std::string arch = ck.meta.value("arch", "");
  if (arch != expected_arch)
    throw VersionMismatchError("checkpoint architecture '" + arch + "', expected '" +
                               expected_arch + "'");
  for (auto& [name, v] : ps.items()) {
    const Tensor* t = ck.find(name);
    if (!t) throw VersionMismatchError("checkpoint missing tensor: " + name);
    if (!t->same_shape(v.value()))
      throw VersionMismatchError("checkpoint tensor shape mismatch: " + name);
    v.value() = *t;
  }
}

}  // namespace lf::ckpt
