#include "ucsd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "ucsd/error.hpp"

namespace ucsd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string origin)
      : bytes_(bytes), end_(end), origin_(std::move(origin)) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) throw IoError(origin_ + ": checkpoint truncated while reading " + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_;
  std::string origin_;
};

std::uint32_t checksum(const std::string& bytes, std::size_t n) {
  uLong a = adler32(0L, Z_NULL, 0);
  a = adler32(a, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(a);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "UCSD";
  put<std::uint8_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.empty() || name.size() > 0xffff) throw ValidationError("checkpoint: bad tensor name length");
    if (t.rank() == 0 || t.rank() > 255) throw ValidationError("checkpoint: bad rank for '" + name + "'");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  put<std::uint32_t>(out, checksum(out, out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 + 1 + 4 + 4 + 4) throw IoError(origin + ": file too short for a checkpoint");
  if (bytes.compare(0, 4, "UCSD") != 0) throw IoError(origin + ": bad magic (not a checkpoint)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  Reader r(bytes, body, origin);
  r.take(4, "magic");
  const auto version = r.get<std::uint8_t>("version");
  if (version != kCheckpointVersion) {
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (stored != checksum(bytes, body)) throw IoError(origin + ": checksum mismatch");
  Checkpoint ckpt;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.take(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    const std::size_t n = shape_numel(shape);
    std::string payload = r.take(n * sizeof(float), "payload");
    std::vector<float> data(n);
    std::memcpy(data.data(), payload.data(), payload.size());
    if (!ckpt.tensors.emplace(name, Tensor(shape, std::move(data))).second) {
      throw IoError(origin + ": duplicate tensor '" + name + "'");
    }
  }
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  ckpt.metadata = r.take(meta_len, "metadata");
  if (r.pos() != body) throw IoError(origin + ": trailing bytes after metadata");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path);
}

}  // namespace ucsd
