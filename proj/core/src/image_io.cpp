#include "ucsd/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "ucsd/error.hpp"

namespace ucsd {

namespace {

std::uint8_t to_byte(double v, const std::string& path) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(path + ": pixel value " + std::to_string(v) + " outside [0,1]");
  }
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void write_netpbm(const std::string& path, const char* magic, std::size_t h, std::size_t w,
                  const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Reads the header token by token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw IoError(path + ": truncated header");
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::string& path) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    throw IoError(path + ": bad header field '" + tok + "'");
  }
  if (pos != tok.size() || v == 0 || v > 1u << 16) throw IoError(path + ": bad header field '" + tok + "'");
  return v;
}

std::vector<std::uint8_t> read_netpbm(const std::string& path, const char* magic, std::size_t channels,
                                      std::size_t& h, std::size_t& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  if (next_token(in, path) != magic) throw IoError(path + ": expected " + magic + " file");
  w = parse_dim(next_token(in, path), path);
  h = parse_dim(next_token(in, path), path);
  if (next_token(in, path) != "255") throw IoError(path + ": maxval must be 255");
  std::vector<std::uint8_t> bytes(h * w * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw IoError(path + ": truncated pixel data (" + std::to_string(in.gcount()) + " of " +
                  std::to_string(bytes.size()) + " bytes)");
  }
  return bytes;
}

}  // namespace

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void write_pgm(const std::string& path, const TensorD& map) {
  if (map.rank() != 2) throw ShapeError(path + ": PGM needs an HxW map, got " + shape_str(map.shape()));
  std::vector<std::uint8_t> bytes(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) bytes[i] = to_byte(map[i], path);
  write_netpbm(path, "P5", map.dim(0), map.dim(1), bytes);
}

TensorD read_pgm(const std::string& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_netpbm(path, "P5", 1, h, w);
  TensorD out({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

void write_ppm(const std::string& path, const TensorD& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError(path + ": PPM needs a 3xHxW image, got " + shape_str(rgb.shape()));
  }
  const std::size_t hw = rgb.dim(1) * rgb.dim(2);
  std::vector<std::uint8_t> bytes(3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) bytes[3 * i + c] = to_byte(rgb[c * hw + i], path);
  }
  write_netpbm(path, "P6", rgb.dim(1), rgb.dim(2), bytes);
}

TensorD read_ppm(const std::string& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_netpbm(path, "P6", 3, h, w);
  TensorD out({3, h, w});
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = bytes[3 * i + c] / 255.0;
  }
  return out;
}

}  // namespace ucsd
