#include "ucsd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ucsd/image_io.hpp"
#include "ucsd/losses.hpp"

namespace fs = std::filesystem;

namespace ucsd {

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "' (expected train or test)");
}

void SceneSpec::validate() const {
  if (size != 32 && size != 64) throw ValidationError("scene: size must be 32 or 64");
  if (max_secondary > 2) throw ValidationError("scene: at most 2 secondary objects");
  if (!(p_ambiguous >= 0.0 && p_ambiguous <= 1.0)) throw ValidationError("scene: ambiguity must be in [0,1]");
  if (annotators == 0 || annotators % 2 == 0) throw ValidationError("scene: annotator count must be odd");
  for (double v : {primary_contrast, secondary_contrast, primary_depth, secondary_depth, background_depth,
                   depth_noise, texture_amplitude}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("scene: appearance parameters must be in [0,1]");
  }
}

namespace {

struct Shape2 {
  bool ellipse = false;
  double cy = 0, cx = 0, ry = 0, rx = 0;

  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    if (ellipse) return dy * dy + dx * dx <= 1.0;
    return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

Shape2 random_shape(RngStream& rng, double size, double lo, double hi) {
  Shape2 s;
  s.ellipse = rng.below(2) == 1;
  s.ry = rng.uniform(lo, hi) * size;
  s.rx = rng.uniform(lo, hi) * size;
  s.cy = rng.uniform(s.ry, size - 1.0 - s.ry);
  s.cx = rng.uniform(s.rx, size - 1.0 - s.rx);
  return s;
}

Map rasterize(const Shape2& s, std::size_t size) {
  Map m({size, size});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      m[i * size + j] = s.contains(static_cast<double>(i), static_cast<double>(j)) ? 1.0 : 0.0;
    }
  }
  return m;
}

double area(const Map& m) {
  double a = 0;
  for (double v : m.data()) a += v;
  return a;
}

double overlap(const Map& a, const Map& b) {
  double o = 0;
  for (std::size_t i = 0; i < a.size(); ++i) o += a[i] * b[i];
  return o;
}

// Object color: background shifted by ±contrast on each channel.
std::array<double, 3> object_color(RngStream& rng, const std::array<double, 3>& bg, double contrast) {
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) {
    const double shift = contrast * rng.uniform(0.7, 1.0);
    double v = bg[k] + (rng.below(2) == 1 ? shift : -shift);
    if (v < 0.0 || v > 1.0) v = bg[k] - (v - bg[k]);
    c[k] = std::clamp(v, 0.0, 1.0);
  }
  return c;
}

}  // namespace

RgbdSample synth_scene(const SceneSpec& spec, RngStream& rng, std::string id) {
  spec.validate();
  const std::size_t n = spec.size;
  const double size = static_cast<double>(n);
  RgbdSample s;
  s.id = std::move(id);

  std::array<double, 3> bg{};
  for (auto& v : bg) v = rng.uniform(0.3, 0.7);
  const double fy = rng.uniform(0.5, 2.0), fx = rng.uniform(0.5, 2.0), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Shape2 primary = random_shape(rng, size, 0.18, 0.28);
  Map primary_mask = rasterize(primary, n);
  const auto primary_color = object_color(rng, bg, spec.primary_contrast);

  s.n_secondary = static_cast<std::size_t>(rng.below(spec.max_secondary + 1));
  std::vector<Map> secondary_masks;
  std::vector<std::array<double, 3>> secondary_colors;
  Map occupied = primary_mask;
  for (std::size_t k = 0; k < s.n_secondary; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Map m = rasterize(random_shape(rng, size, 0.08, 0.13), n);
      if (area(m) >= 9 && overlap(m, occupied) == 0) {
        for (std::size_t i = 0; i < m.size(); ++i) occupied[i] = std::max(occupied[i], m[i]);
        secondary_masks.push_back(std::move(m));
        secondary_colors.push_back(object_color(rng, bg, spec.secondary_contrast));
        break;
      }
    }
  }
  s.n_secondary = secondary_masks.size();

  s.rgb = TensorD({3, n, n});
  s.depth = Map({n, n});
  const std::size_t hw = n * n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t p = i * n + j;
      const double tex = spec.texture_amplitude *
                         std::sin(2.0 * std::numbers::pi * (fy * i + fx * j) / size + phase);
      std::array<double, 3> color = bg;
      double depth = spec.background_depth;
      for (std::size_t k = 0; k < secondary_masks.size(); ++k) {
        if (secondary_masks[k][p] == 1.0) {
          color = secondary_colors[k];
          depth = spec.secondary_depth;
        }
      }
      if (primary_mask[p] == 1.0) {
        color = primary_color;
        depth = spec.primary_depth;
      }
      const bool background = occupied[p] == 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.5, 0.5) * spec.texture_amplitude;
        s.rgb[c * hw + p] = quantize8(color[c] + (background ? tex : 0.0) + noise);
      }
      s.depth[p] = quantize8(depth + rng.uniform(-1.0, 1.0) * spec.depth_noise);
    }
  }

  for (std::size_t a = 0; a < spec.annotators; ++a) {
    Map m = primary_mask;
    for (const auto& sec : secondary_masks) {
      if (rng.uniform() < spec.p_ambiguous) {
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], sec[i]);
      }
    }
    s.annotations.push_back(std::move(m));
  }
  s.gt = majority_map(s.annotations);
  s.ambiguous = s.n_secondary > 0 && spec.p_ambiguous > 0.0 && spec.p_ambiguous < 1.0;
  return s;
}

std::vector<RgbdSample> synth_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
  spec.validate();
  std::vector<RgbdSample> out;
  out.reserve(count);
  const RngStream root(seed, 0);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = root.derive(purpose::kScene, i);
    char id[32];
    std::snprintf(id, sizeof id, "s%04zu", i);
    out.push_back(synth_scene(spec, rng, id));
  }
  return out;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory '" + dir + "'");
  std::ostringstream manifest;
  manifest << kManifestHeader << "\tsplit=" << to_string(data.split) << '\n';
  std::set<std::string> ids;
  for (const auto& s : data.samples) {
    if (!ids.insert(s.id).second) throw ValidationError("save_dataset: duplicate id '" + s.id + "'");
    const std::string rgb = s.id + "_rgb.ppm", depth = s.id + "_depth.pgm";
    write_ppm((fs::path(dir) / rgb).string(), s.rgb);
    write_pgm((fs::path(dir) / depth).string(), s.depth);
    manifest << s.id << '\t' << rgb << '\t' << depth;
    for (std::size_t a = 0; a < s.annotations.size(); ++a) {
      const std::string name = s.id + "_a" + std::to_string(a) + ".pgm";
      write_pgm((fs::path(dir) / name).string(), s.annotations[a]);
      manifest << '\t' << name;
    }
    manifest << '\t' << (s.ambiguous ? 1 : 0) << '\n';
  }
  std::ofstream out(fs::path(dir) / kManifestName, std::ios::binary);
  out << manifest.str();
  if (!out) throw IoError("cannot write manifest in '" + dir + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  return out;
}

struct Record {
  std::string id, rgb, depth;
  std::vector<std::string> annotations;
  bool ambiguous = false;
};

}  // namespace

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / kManifestName;
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("missing manifest '" + manifest_path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError(manifest_path.string() + ": empty manifest");
  const auto header = split_tabs(line);
  if (header.size() != 2 || header[0] != kManifestHeader || header[1].rfind("split=", 0) != 0) {
    throw IoError(manifest_path.string() + ": bad header '" + line + "'");
  }
  Dataset data;
  data.split = parse_split(header[1].substr(6));

  std::vector<Record> records;
  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    if (f.size() < 5) throw IoError(where + ": expected at least 5 fields");
    Record r{f[0], f[1], f[2], {f.begin() + 3, f.end() - 1}, false};
    if (f.back() != "0" && f.back() != "1") throw IoError(where + ": ambiguous flag must be 0 or 1");
    r.ambiguous = f.back() == "1";
    if (!ids.insert(r.id).second) throw IoError(where + ": duplicate id '" + r.id + "'");
    if (!records.empty() && r.annotations.size() != records.front().annotations.size()) {
      throw IoError(where + ": annotator count differs from first record");
    }
    for (const auto* name : {&r.rgb, &r.depth}) {
      if (!fs::is_regular_file(fs::path(dir) / *name)) throw IoError(where + ": missing file '" + *name + "'");
    }
    for (const auto& name : r.annotations) {
      if (!fs::is_regular_file(fs::path(dir) / name)) throw IoError(where + ": missing file '" + name + "'");
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw IoError(manifest_path.string() + ": no samples");

  for (const auto& r : records) {
    RgbdSample s;
    s.id = r.id;
    s.ambiguous = r.ambiguous;
    s.rgb = read_ppm((fs::path(dir) / r.rgb).string());
    s.depth = read_pgm((fs::path(dir) / r.depth).string());
    const Shape hw{s.rgb.dim(1), s.rgb.dim(2)};
    if (s.depth.shape() != hw) throw IoError(r.depth + ": dimensions differ from " + r.rgb);
    for (const auto& name : r.annotations) {
      Map a = read_pgm((fs::path(dir) / name).string());
      if (a.shape() != hw) throw IoError(name + ": dimensions differ from " + r.rgb);
      for (double v : a.data()) {
        if (v != 0.0 && v != 1.0) throw IoError(name + ": annotation is not binary");
      }
      s.annotations.push_back(std::move(a));
    }
    s.gt = majority_map(s.annotations);
    if (!data.samples.empty() && data.samples.front().depth.shape() != hw) {
      throw IoError(r.rgb + ": image size differs from the rest of the dataset");
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

Tensor input_batch(const std::vector<const RgbdSample*>& samples) {
  if (samples.empty()) throw ValidationError("input_batch: no samples");
  const std::size_t h = samples.front()->depth.dim(0), w = samples.front()->depth.dim(1), hw = h * w;
  Tensor x({samples.size(), 4, h, w});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = *samples[n];
    if (s.depth.shape() != Shape{h, w}) throw ShapeError("input_batch: mixed image sizes");
    float* dst = x.data().data() + n * 4 * hw;
    for (std::size_t i = 0; i < 3 * hw; ++i) dst[i] = static_cast<float>(s.rgb[i]);
    for (std::size_t i = 0; i < hw; ++i) dst[3 * hw + i] = static_cast<float>(s.depth[i]);
  }
  return x;
}

Tensor gray_batch(const std::vector<const RgbdSample*>& samples) {
  if (samples.empty()) throw ValidationError("gray_batch: no samples");
  const std::size_t h = samples.front()->depth.dim(0), w = samples.front()->depth.dim(1), hw = h * w;
  Tensor g({samples.size(), 1, h, w});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const TensorD gray = rgb_to_gray(samples[n]->rgb);
    for (std::size_t i = 0; i < hw; ++i) g[n * hw + i] = static_cast<float>(gray[i]);
  }
  return g;
}

Tensor target_batch(const std::vector<const RgbdSample*>& samples, const std::vector<std::size_t>& annotator) {
  if (samples.empty() || annotator.size() != samples.size()) {
    throw ValidationError("target_batch: need one annotator index per sample");
  }
  const std::size_t h = samples.front()->depth.dim(0), w = samples.front()->depth.dim(1), hw = h * w;
  Tensor y({samples.size(), 1, h, w});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& anns = samples[n]->annotations;
    if (annotator[n] >= anns.size()) throw ValidationError("target_batch: annotator index out of range");
    for (std::size_t i = 0; i < hw; ++i) y[n * hw + i] = static_cast<float>(anns[annotator[n]][i]);
  }
  return y;
}

}  // namespace ucsd
