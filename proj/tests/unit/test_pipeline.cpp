#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ucsd/pipeline.hpp"

using namespace ucsd;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(Inference inf) {
  RunConfig cfg;
  cfg.inference = inf;
  cfg.generator.base_channels = 4;
  cfg.generator.levels = 2;
  cfg.encoder.widths = {4, 4, 4, 4, 4};
  cfg.epochs = 2;
  cfg.batch = 3;
  cfg.lr = 1e-3;
  cfg.seed = 9;
  return cfg;
}

const Dataset& tiny_data() {
  static const Dataset data{Split::Train, synth_dataset(SceneSpec{}, 4, 1)};
  return data;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("learning rate decays once at the 80% mark") {
  RunConfig cfg;
  CHECK(learning_rate(0, cfg) == 5e-5);
  CHECK(learning_rate(79, cfg) == 5e-5);
  CHECK(learning_rate(80, cfg) == doctest::Approx(4.5e-5));
  CHECK(learning_rate(99, cfg) == doctest::Approx(4.5e-5));
  cfg.epochs = 7;  // ceil(5.6) = 6
  CHECK(learning_rate(5, cfg) == 5e-5);
  CHECK(learning_rate(6, cfg) == doctest::Approx(4.5e-5));
  cfg.lr_decay = 0.1;
  CHECK(learning_rate(6, cfg) == doctest::Approx(5e-6));
}

TEST_CASE("enum names") {
  for (auto i : {Inference::Cvae, Inference::Gsnn, Inference::Abp}) CHECK(parse_inference(to_string(i)) == i);
  for (auto m : {GradMode::Gaussian, GradMode::LossBased}) CHECK(parse_grad_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_inference("vae"), ValidationError);
}

TEST_CASE("run config json round trip and validation") {
  RunConfig cfg = tiny_config(Inference::Abp);
  cfg.generator.fusion = Fusion::Late;
  cfg.kl_anneal = false;
  cfg.langevin.steps = 7;
  cfg.langevin.grad_mode = GradMode::Gaussian;
  cfg.recon_scale = 3.5;
  const RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.generator.fusion == Fusion::Late);
  CHECK(back.langevin.steps == 7);
  CHECK_FALSE(back.kl_anneal);
  CHECK_THROWS(RunConfig::from_json("{\"epochs\": \"many\"}"));
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  for (auto inf : {Inference::Cvae, Inference::Gsnn, Inference::Abp}) {
    CAPTURE(to_string(inf));
    const RunConfig cfg = tiny_config(inf);
    std::vector<EpochLog> log;
    const Model a = train_model(cfg, tiny_data(), &log);
    const Model b = train_model(cfg, tiny_data());
    REQUIRE(log.size() == 2);
    CHECK(std::isfinite(log.back().total));
    const std::string bytes = encode_checkpoint(to_checkpoint(a));
    CHECK(bytes == encode_checkpoint(to_checkpoint(b)));
    const Model back = from_checkpoint(decode_checkpoint(bytes));
    CHECK(encode_checkpoint(to_checkpoint(back)) == bytes);
    CHECK(back.epochs_trained == 2);

    const Checkpoint ck = to_checkpoint(a);
    CHECK((ck.tensors.count("abp.bank") == 1) == (inf == Inference::Abp));
    bool has_post = false, has_prior = false;
    for (const auto& [name, t] : ck.tensors) {
      has_post = has_post || name.rfind("post/", 0) == 0;
      has_prior = has_prior || name.rfind("prior/", 0) == 0;
    }
    CHECK(has_post == (inf == Inference::Cvae));
    CHECK(has_prior == (inf != Inference::Abp));
    if (inf == Inference::Abp) CHECK(ck.tensors.at("abp.bank").shape() == Shape{4, 3});

    Checkpoint broken = ck;
    broken.tensors.erase("gen/out.b");
    CHECK_THROWS_AS(from_checkpoint(broken), ShapeError);
    broken = ck;
    broken.tensors["gen/out.w"] = Tensor({1, 5, 1, 1});
    CHECK_THROWS_AS(from_checkpoint(broken), ShapeError);
  }
}

TEST_CASE("kl annealing flag changes the logged weight") {
  RunConfig on = tiny_config(Inference::Cvae), off = on;
  off.kl_anneal = false;
  std::vector<EpochLog> lon, loff;
  train_model(on, tiny_data(), &lon);
  train_model(off, tiny_data(), &loff);
  CHECK(lon[0].lambda_kl < 1.0);
  CHECK(loff[0].lambda_kl == 1.0);
  CHECK(loff[1].lambda_kl == 1.0);
}

TEST_CASE("single-sample prediction makes every estimator the sample itself") {
  const Model m = train_model(tiny_config(Inference::Cvae), tiny_data());
  const auto& s = tiny_data().samples[0];
  const ImagePrediction p = predict_image(m, s, 1, predict_stream(3, 0));
  REQUIRE(p.samples.size() == 1);
  CHECK(p.consensus.gray_consensus == p.samples[0]);
  CHECK(p.avep == p.samples[0]);
  for (double v : p.consensus.variance.data()) CHECK(v == 0.0);
  CHECK(p.mean_variance == 0.0);

  const ImagePrediction q = predict_image(m, s, 5, predict_stream(3, 0));
  const ImagePrediction r = predict_image(m, s, 5, predict_stream(3, 0));
  CHECK(q.samples.size() == 5);
  for (std::size_t c = 0; c < 5; ++c) CHECK(q.samples[c] == r.samples[c]);
  CHECK(q.consensus.gray_consensus == r.consensus.gray_consensus);
  CHECK_FALSE(predict_stream(3, 0).normal() == predict_stream(3, 1).normal());
}

TEST_CASE("train, predict and eval commands write consistent files") {
  const fs::path root = fs::temp_directory_path() / ("ucsd_pipe_" + std::to_string(::getpid()));
  fs::remove_all(root);
  save_dataset((root / "train").string(), tiny_data());
  save_dataset((root / "test").string(), Dataset{Split::Test, synth_dataset(SceneSpec{}, 3, 2)});

  RunConfig cfg = tiny_config(Inference::Cvae);
  cfg.data_dir = (root / "train").string();
  cfg.out_path = (root / "m.ckpt").string();
  cmd_train(cfg);
  CHECK(line_count(root / "m.ckpt.log.csv") == 3);
  cfg.data_dir = (root / "test").string();
  CHECK_THROWS_AS(cmd_train(cfg), ValidationError);

  PredictConfig pc;
  pc.ckpt = (root / "m.ckpt").string();
  pc.data_dir = (root / "test").string();
  pc.out_dir = (root / "pred").string();
  pc.samples = 3;
  CHECK(cmd_predict(pc).size() == 3);
  CHECK(fs::exists(root / "pred" / kPredictionManifest));
  CHECK(fs::exists(root / "pred" / "s0000_sample2.pgm"));
  PredictConfig mismatch = pc;
  mismatch.latent_dim = 5;
  CHECK_THROWS_AS(cmd_predict(mismatch), ValidationError);

  EvalConfig ec{(root / "pred").string(), (root / "test").string(), (root / "eval" / "report.csv").string()};
  const auto rows = cmd_eval(ec);
  CHECK(rows.size() % 4 == 0);
  CHECK(line_count(root / "eval" / "report.csv") == rows.size() + 1);
  CHECK(line_count(root / "eval" / "f_curve.csv") == 257);
  CHECK(line_count(root / "eval" / "e_curve.csv") == 257);
  const std::string first = slurp(root / "eval" / "report.csv");
  cmd_eval(ec);
  CHECK(slurp(root / "eval" / "report.csv") == first);

  EvalConfig wrong{(root / "pred").string(), (root / "train").string(), (root / "bad.csv").string()};
  CHECK_THROWS(cmd_eval(wrong));
  fs::remove_all(root);
}
