#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ucsd/abp.hpp"
#include "ucsd/checkpoint.hpp"
#include "ucsd/dataset.hpp"
#include "ucsd/metrics.hpp"

// End-to-end drivers behind the command-line tool: training, stochastic
// prediction with consensus, evaluation and reporting.
namespace ucsd {

enum class Inference { Cvae, Gsnn, Abp };
const char* to_string(Inference i);
Inference parse_inference(const std::string& s);
const char* to_string(GradMode m);
GradMode parse_grad_mode(const std::string& s);

using LogFn = std::function<void(const std::string&)>;

struct RunConfig {
  std::string data_dir;
  std::string out_path;
  Inference inference = Inference::Cvae;
  GeneratorConfig generator;
  EncoderConfig encoder;
  std::size_t epochs = 100;
  std::size_t batch = 5;
  double lr = 5e-5;
  // Multiplier applied once, from epoch ceil(0.8·epochs) on.
  double lr_decay = 0.9;
  double alpha = 0.5;
  bool kl_anneal = true;
  LangevinConfig langevin;
  // Scale of the per-pixel structure-aware loss; <= 0 means H·W, which
  // makes the reconstruction term a per-image negative log-likelihood.
  double recon_scale = 0.0;
  std::uint64_t seed = 0;
  // Extra checkpoints at <out>.epN every save_every epochs (0 = final only).
  std::size_t save_every = 0;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

double learning_rate(std::size_t epoch, const RunConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double lambda_kl = 0;
  double recon = 0;
  double kl = 0;
  double smooth = 0;
  double total = 0;
};

struct Model {
  RunConfig config;
  CvaeModel nets;  // generator always; encoders for cvae / gsnn
  LatentBank bank;  // abp only
  std::size_t epochs_trained = 0;
};

CvaeTrainConfig cvae_config(const RunConfig& cfg, double recon_scale);
AbpTrainConfig abp_config(const RunConfig& cfg, double recon_scale);

// Trains on data (train split) without touching the filesystem except for
// intermediate checkpoints when cfg.save_every > 0.
Model train_model(const RunConfig& cfg, const Dataset& data, std::vector<EpochLog>* log = nullptr,
                  const LogFn& on_epoch = {});

Checkpoint to_checkpoint(const Model& model);
// Rejects checkpoints whose tensors do not match the schema implied by the
// embedded configuration.
Model from_checkpoint(const Checkpoint& ckpt);

// Loads the dataset, trains, writes the checkpoint and <out>.log.csv.
Model cmd_train(const RunConfig& cfg, const LogFn& log = {});

struct ImagePrediction {
  std::string id;
  bool ambiguous = false;
  std::vector<Map> samples;
  std::vector<Tensor> latents;
  ConsensusOutput consensus;
  Map avep;
  Map avez;
  double mean_variance = 0;
};

// C stochastic predictions for one sample plus every test-time estimator.
ImagePrediction predict_image(const Model& model, const RgbdSample& sample, std::size_t samples,
                              RngStream rng);
// Stream for image index i at a given seed.
RngStream predict_stream(std::uint64_t seed, std::size_t index);

struct PredictConfig {
  std::string ckpt;
  std::string data_dir;
  std::string out_dir;
  std::size_t samples = 5;
  std::uint64_t seed = 0;
  // Optional generator flags; when set they must match the checkpoint.
  std::optional<Fusion> fusion;
  std::optional<std::size_t> latent_dim;
  std::optional<std::size_t> base_channels;
};

inline constexpr const char* kPredictionManifest = "predictions.tsv";
inline constexpr const char* kImageVariance = "image_variance.csv";

std::vector<ImagePrediction> cmd_predict(const PredictConfig& cfg, const LogFn& log = {});

struct EvalConfig {
  std::string pred_dir;
  std::string data_dir;
  std::string out_csv;
};

inline constexpr const char* kEstimators[] = {"consensus", "avep", "avez", "sample_mean"};

struct EvalRow {
  std::string split;
  std::string estimator;
  MetricReport report;
};

// Writes out_csv plus f_curve.csv, e_curve.csv and variance.csv next to it.
std::vector<EvalRow> cmd_eval(const EvalConfig& cfg, const LogFn& log = {});

// Reads evaluated run directories and writes SVG plots and combined CSVs.
void cmd_report(const std::vector<std::string>& runs, const std::string& out_dir, const LogFn& log = {});

// CSV number formatting shared by every writer (fixed, 6 decimals).
std::string csv_number(double v);

}  // namespace ucsd
