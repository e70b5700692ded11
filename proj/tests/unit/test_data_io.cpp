#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "ucsd/checkpoint.hpp"
#include "ucsd/dataset.hpp"
#include "ucsd/image_io.hpp"

using namespace ucsd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ucsd_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

std::vector<std::string> files_of(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("pgm and ppm round trip on the 8-bit grid") {
  TempDir tmp("img");
  RngStream rng(1, 0);
  TensorD map({5, 7});
  for (auto& v : map.data()) v = static_cast<double>(rng.below(256)) / 255.0;
  write_pgm(tmp / "a.pgm", map);
  CHECK(read_pgm(tmp / "a.pgm") == map);
  TensorD rgb({3, 4, 6});
  for (auto& v : rgb.data()) v = static_cast<double>(rng.below(256)) / 255.0;
  write_ppm(tmp / "b.ppm", rgb);
  CHECK(read_ppm(tmp / "b.ppm") == rgb);
  CHECK(slurp(tmp / "a.pgm").substr(0, 2) == "P5");
  CHECK(quantize8(0.5) == doctest::Approx(128.0 / 255.0));
  CHECK_THROWS_AS(write_pgm(tmp / "c.pgm", TensorD({2, 2}, 1.5)), ValidationError);
}

TEST_CASE("image read errors name the file") {
  TempDir tmp("imgerr");
  write_pgm(tmp / "a.pgm", TensorD({8, 8}, 0.5));
  const std::string bytes = slurp(tmp / "a.pgm");
  spit(tmp / "short.pgm", bytes.substr(0, bytes.size() - 5));
  try {
    read_pgm(tmp / "short.pgm");
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("short.pgm") != std::string::npos);
  }
  spit(tmp / "bad.pgm", "P2\n8 8\n255\n");
  CHECK_THROWS_AS(read_pgm(tmp / "bad.pgm"), IoError);
  CHECK_THROWS_AS(read_pgm(tmp / "missing.pgm"), IoError);
  CHECK_THROWS_AS(read_ppm(tmp / "a.pgm"), IoError);
}

TEST_CASE("scene spec validation") {
  SceneSpec s;
  s.validate();
  s.annotators = 4;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SceneSpec{};
  s.size = 48;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SceneSpec{};
  s.p_ambiguous = 1.5;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SceneSpec{};
  s.max_secondary = 3;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("synthesized scenes satisfy their invariants") {
  SceneSpec spec;
  const auto samples = synth_dataset(spec, 40, 7);
  std::size_t ambiguous = 0;
  for (const auto& s : samples) {
    CHECK(s.rgb.shape() == Shape{3, 32, 32});
    CHECK(s.annotations.size() == 5);
    CHECK(s.gt == majority_map(s.annotations));
    CHECK(s.ambiguous == (s.n_secondary > 0));
    ambiguous += s.ambiguous;
    for (double v : s.rgb.data()) CHECK(v == quantize8(v));
    for (double v : s.depth.data()) CHECK(v == quantize8(v));
    // The primary object is in every annotation: the pixels marked by all
    // annotators cover at least 9 pixels.
    std::size_t common = 0;
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      bool all = true;
      for (const auto& a : s.annotations) all = all && a[i] == 1.0;
      common += all;
    }
    CHECK(common >= 9);
    // Salient pixels are nearer than the background on average.
    double fg = 0, bg = 0, nf = 0, nb = 0;
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      (s.gt[i] == 1.0 ? fg : bg) += s.depth[i];
      (s.gt[i] == 1.0 ? nf : nb) += 1;
    }
    CHECK(fg / nf > bg / nb + 0.2);
  }
  CHECK(ambiguous > 0);
  CHECK(ambiguous < samples.size());
}

TEST_CASE("majority ground truth drops objects marked by two of five annotators") {
  SceneSpec spec;
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 50 && !seen; ++seed) {
    for (const auto& s : synth_dataset(spec, 10, seed)) {
      for (std::size_t i = 0; i < s.gt.size(); ++i) {
        std::size_t votes = 0;
        for (const auto& a : s.annotations) votes += a[i] == 1.0;
        if (votes == 2) {
          seen = true;
          CHECK(s.gt[i] == 0.0);
        }
        if (votes >= 3) CHECK(s.gt[i] == 1.0);
      }
    }
  }
  CHECK(seen);
}

TEST_CASE("extreme ambiguity probabilities give unanimous annotators") {
  for (double p : {0.0, 1.0}) {
    SceneSpec spec;
    spec.p_ambiguous = p;
    for (const auto& s : synth_dataset(spec, 10, 3)) {
      CHECK_FALSE(s.ambiguous);
      for (const auto& a : s.annotations) CHECK(a == s.gt);
    }
  }
}

TEST_CASE("synthesis is deterministic per seed") {
  SceneSpec spec;
  spec.size = 64;
  const auto a = synth_dataset(spec, 3, 11);
  const auto b = synth_dataset(spec, 3, 11);
  const auto c = synth_dataset(spec, 3, 12);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].rgb == b[i].rgb);
    CHECK(a[i].depth == b[i].depth);
    CHECK(a[i].gt == b[i].gt);
  }
  CHECK_FALSE(a[0].rgb == c[0].rgb);
  // Sample i does not depend on how many samples are drawn.
  CHECK(synth_dataset(spec, 1, 11)[0].rgb == a[0].rgb);
}

TEST_CASE("dataset save and load round trip") {
  TempDir tmp("ds");
  Dataset data{Split::Test, synth_dataset(SceneSpec{}, 6, 2)};
  save_dataset(tmp.path.string(), data);
  const Dataset back = load_dataset(tmp.path.string());
  CHECK(back.split == Split::Test);
  REQUIRE(back.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto &x = data.samples[i], &y = back.samples[i];
    CHECK(x.id == y.id);
    CHECK(x.rgb == y.rgb);
    CHECK(x.depth == y.depth);
    CHECK(x.gt == y.gt);
    CHECK(x.ambiguous == y.ambiguous);
    for (std::size_t k = 0; k < 5; ++k) CHECK(x.annotations[k] == y.annotations[k]);
  }
  const std::string manifest = slurp(tmp / kManifestName);
  CHECK(manifest.rfind(kManifestHeader, 0) == 0);

  TempDir again("ds2");
  save_dataset(again.path.string(), back);
  CHECK(files_of(tmp.path) == files_of(again.path));
  for (const auto& f : files_of(tmp.path)) CHECK(slurp(tmp / f) == slurp(again / f));
}

TEST_CASE("dataset load validates before decoding") {
  TempDir tmp("dsbad");
  save_dataset(tmp.path.string(), Dataset{Split::Train, synth_dataset(SceneSpec{}, 3, 4)});
  fs::remove(tmp.path / "s0002_a4.pgm");
  try {
    load_dataset(tmp.path.string());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("s0002_a4.pgm") != std::string::npos);
  }
  TempDir trunc("dstrunc");
  save_dataset(trunc.path.string(), Dataset{Split::Train, synth_dataset(SceneSpec{}, 2, 4)});
  const std::string rgb = slurp(trunc / "s0001_rgb.ppm");
  spit(trunc / "s0001_rgb.ppm", rgb.substr(0, rgb.size() / 2));
  try {
    load_dataset(trunc.path.string());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("s0001_rgb.ppm") != std::string::npos);
  }
  spit(trunc / kManifestName, "not a manifest\n");
  CHECK_THROWS_AS(load_dataset(trunc.path.string()), IoError);
  CHECK_THROWS_AS(load_dataset((tmp.path / "nope").string()), IoError);
}

TEST_CASE("network batches") {
  const auto samples = synth_dataset(SceneSpec{}, 2, 5);
  const std::vector<const RgbdSample*> ptrs = {&samples[0], &samples[1]};
  const Tensor x = input_batch(ptrs);
  CHECK(x.shape() == Shape{2, 4, 32, 32});
  CHECK(x.at(1, 3, 4, 5) == static_cast<float>(samples[1].depth[4 * 32 + 5]));
  CHECK(x.at(0, 1, 2, 3) == static_cast<float>(samples[0].rgb[32 * 32 + 2 * 32 + 3]));
  const Tensor y = target_batch(ptrs, {0, 4});
  CHECK(y.at(1, 0, 7, 7) == static_cast<float>(samples[1].annotations[4][7 * 32 + 7]));
  CHECK(gray_batch(ptrs).shape() == Shape{2, 1, 32, 32});
  CHECK_THROWS(target_batch(ptrs, {0, 5}));
}

TEST_CASE("checkpoint round trip and canonical bytes") {
  TempDir tmp("ckpt");
  RngStream rng(6, 0);
  Checkpoint c;
  c.tensors["gen/out.w"] = oracle::random_tensor({1, 8, 1, 1}, rng).cast<float>();
  c.tensors["abp.bank"] = oracle::random_tensor({64, 3}, rng).cast<float>();
  c.tensors["scalar"] = Tensor({1}, 2.5f);
  c.metadata = "{\"epoch\": 3}";
  save_checkpoint(tmp / "m.ckpt", c);
  const Checkpoint back = load_checkpoint(tmp / "m.ckpt");
  CHECK(back.metadata == c.metadata);
  CHECK(back.tensors.size() == 3);
  for (const auto& [name, t] : c.tensors) CHECK(back.tensors.at(name) == t);
  save_checkpoint(tmp / "m2.ckpt", back);
  CHECK(slurp(tmp / "m.ckpt") == slurp(tmp / "m2.ckpt"));
  CHECK(encode_checkpoint(c) == slurp(tmp / "m.ckpt"));
  CHECK(slurp(tmp / "m.ckpt").substr(0, 5) == std::string("UCSD\x01", 5));
}

TEST_CASE("checkpoint corruption is rejected") {
  Checkpoint c;
  c.tensors["w"] = Tensor({2, 2}, 1.0f);
  const std::string good = encode_checkpoint(c);
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  bad = good;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  bad = good;
  bad[20] ^= 1;
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 3)), IoError);
  CHECK_THROWS_AS(decode_checkpoint(good + "x"), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ucsd.ckpt"), IoError);
}
