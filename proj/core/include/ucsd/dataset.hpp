#pragma once

#include <string>
#include <vector>

#include "ucsd/consensus.hpp"

namespace ucsd {

enum class Split { Train, Test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

// Synthetic RGB-D scene: one large, near, high-contrast primary object, and
// up to max_secondary smaller objects that each annotator marks salient with
// probability p_ambiguous.
struct SceneSpec {
  std::size_t size = 32;
  std::size_t max_secondary = 2;
  double p_ambiguous = 0.5;
  std::size_t annotators = 5;
  double primary_contrast = 0.55;
  double secondary_contrast = 0.35;
  double primary_depth = 0.8;
  double secondary_depth = 0.55;
  double background_depth = 0.2;
  double depth_noise = 0.02;
  double texture_amplitude = 0.06;

  void validate() const;
};

struct RgbdSample {
  std::string id;
  TensorD rgb;                   // 3×H×W
  Map depth;                     // H×W, near = large
  std::vector<Map> annotations;  // A binary maps
  Map gt;                        // majority of the annotations
  bool ambiguous = false;
  std::size_t n_secondary = 0;
};

// Randomized scene drawn entirely from rng; all values lie on the k/255 grid.
RgbdSample synth_scene(const SceneSpec& spec, RngStream& rng, std::string id = "s0000");

// Sample i of a dataset uses stream (seed, kScene, i).
std::vector<RgbdSample> synth_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed);

struct Dataset {
  Split split = Split::Train;
  std::vector<RgbdSample> samples;
};

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kManifestHeader = "ucsd-manifest v1";

void save_dataset(const std::string& dir, const Dataset& data);
// Validates the manifest and every referenced file before decoding any
// image; gt is recomputed as the annotation majority.
Dataset load_dataset(const std::string& dir);

// Network inputs for one or more samples: x N×4×H×W (RGB, depth), gray
// N×1×H×W linearized luminance.
Tensor input_batch(const std::vector<const RgbdSample*>& samples);
Tensor gray_batch(const std::vector<const RgbdSample*>& samples);
// Stacks one annotation per sample (annotator[i] for sample i) as N×1×H×W.
Tensor target_batch(const std::vector<const RgbdSample*>& samples, const std::vector<std::size_t>& annotator);

}  // namespace ucsd
