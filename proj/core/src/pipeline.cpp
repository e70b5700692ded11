#include "ucsd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ucsd/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ucsd {

const char* to_string(Inference i) {
  switch (i) {
    case Inference::Cvae: return "cvae";
    case Inference::Gsnn: return "gsnn";
    case Inference::Abp: return "abp";
  }
  return "?";
}

Inference parse_inference(const std::string& s) {
  if (s == "cvae") return Inference::Cvae;
  if (s == "gsnn") return Inference::Gsnn;
  if (s == "abp") return Inference::Abp;
  throw ValidationError("unknown inference mode '" + s + "' (expected cvae, gsnn or abp)");
}

const char* to_string(GradMode m) { return m == GradMode::Gaussian ? "gaussian" : "loss"; }

GradMode parse_grad_mode(const std::string& s) {
  if (s == "gaussian") return GradMode::Gaussian;
  if (s == "loss") return GradMode::LossBased;
  throw ValidationError("unknown Langevin gradient mode '" + s + "' (expected gaussian or loss)");
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void RunConfig::validate() const {
  generator.validate();
  langevin.validate();
  if (epochs == 0) throw ValidationError("train: epochs must be >= 1");
  if (batch == 0) throw ValidationError("train: batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train: learning rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("train: lr decay must be in (0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("train: alpha must be in [0, 1]");
  if (!std::isfinite(recon_scale)) throw ValidationError("train: recon scale must be finite");
  if (generator.input_channels != 4) throw ValidationError("train: RGB-D input has 4 channels");
}

std::string RunConfig::to_json() const {
  json j;
  j["data"] = data_dir;
  j["out"] = out_path;
  j["inference"] = to_string(inference);
  j["fusion"] = to_string(generator.fusion);
  j["base_channels"] = generator.base_channels;
  j["levels"] = generator.levels;
  j["latent_dim"] = generator.latent_dim;
  j["input_channels"] = generator.input_channels;
  j["leaky_slope"] = generator.leaky_slope;
  j["attention_reduction"] = generator.attention_reduction;
  j["encoder_widths"] = encoder.widths;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["lr"] = lr;
  j["lr_decay"] = lr_decay;
  j["alpha"] = alpha;
  j["kl_anneal"] = kl_anneal;
  j["langevin_steps"] = langevin.steps;
  j["langevin_step_size"] = langevin.step_size;
  j["langevin_sigma"] = langevin.sigma_obs;
  j["langevin_grad"] = to_string(langevin.grad_mode);
  j["recon_scale"] = recon_scale;
  j["seed"] = seed;
  j["save_every"] = save_every;
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    c.data_dir = j.at("data").get<std::string>();
    c.out_path = j.at("out").get<std::string>();
    c.inference = parse_inference(j.at("inference").get<std::string>());
    c.generator.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.generator.base_channels = j.at("base_channels").get<std::size_t>();
    c.generator.levels = j.at("levels").get<std::size_t>();
    c.generator.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.generator.input_channels = j.at("input_channels").get<std::size_t>();
    c.generator.leaky_slope = j.at("leaky_slope").get<float>();
    c.generator.attention_reduction = j.at("attention_reduction").get<std::size_t>();
    c.encoder.widths = j.at("encoder_widths").get<std::vector<std::size_t>>();
    c.encoder.latent_dim = c.generator.latent_dim;
    c.encoder.leaky_slope = c.generator.leaky_slope;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch = j.at("batch").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.kl_anneal = j.at("kl_anneal").get<bool>();
    c.langevin.steps = j.at("langevin_steps").get<std::size_t>();
    c.langevin.step_size = j.at("langevin_step_size").get<double>();
    c.langevin.sigma_obs = j.at("langevin_sigma").get<double>();
    c.langevin.grad_mode = parse_grad_mode(j.at("langevin_grad").get<std::string>());
    c.recon_scale = j.at("recon_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.save_every = j.at("save_every").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  return c;
}

double learning_rate(std::size_t epoch, const RunConfig& cfg) {
  const auto decay_from = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(cfg.epochs)));
  return epoch >= decay_from ? cfg.lr * cfg.lr_decay : cfg.lr;
}

CvaeTrainConfig cvae_config(const RunConfig& cfg, double recon_scale) {
  CvaeTrainConfig c;
  c.generator = cfg.generator;
  c.encoder = cfg.encoder;
  c.encoder.latent_dim = cfg.generator.latent_dim;
  c.variant = cfg.inference == Inference::Gsnn ? CvaeVariant::Gsnn : CvaeVariant::Hybrid;
  c.alpha = cfg.alpha;
  c.kl_anneal = cfg.kl_anneal;
  c.schedule.max_epoch = cfg.epochs;
  c.recon_scale = recon_scale;
  c.adam.lr = cfg.lr;
  return c;
}

AbpTrainConfig abp_config(const RunConfig& cfg, double recon_scale) {
  AbpTrainConfig c;
  c.generator = cfg.generator;
  c.langevin = cfg.langevin;
  c.recon_scale = recon_scale;
  c.adam.lr = cfg.lr;
  return c;
}

namespace {

double resolved_scale(const RunConfig& cfg, const Dataset& data) {
  if (cfg.recon_scale > 0.0) return cfg.recon_scale;
  const auto& d = data.samples.front().depth;
  return static_cast<double>(d.dim(0) * d.dim(1));
}

std::vector<std::size_t> shuffled(std::size_t n, RngStream rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

const char* kGenPrefix = "gen/";
const char* kPriorPrefix = "prior/";
const char* kPostPrefix = "post/";
const char* kBankName = "abp.bank";

void put_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params) {
  for (const auto& [name, t] : params) ckpt.tensors.emplace(prefix + name, t);
}

ParamSet take_params(const Checkpoint& ckpt, const std::string& prefix) {
  ParamSet out;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

EncoderConfig encoder_for(const RunConfig& cfg, std::size_t extra) {
  EncoderConfig e = cfg.encoder;
  e.latent_dim = cfg.generator.latent_dim;
  e.input_channels = cfg.generator.input_channels + extra;
  return e;
}

}  // namespace

Model train_model(const RunConfig& cfg, const Dataset& data, std::vector<EpochLog>* log,
                  const LogFn& on_epoch) {
  cfg.validate();
  if (data.samples.empty()) throw ValidationError("train: dataset is empty");
  const auto& first = data.samples.front();
  cfg.generator.validate_input(first.depth.dim(0), first.depth.dim(1));
  const double scale = resolved_scale(cfg, data);
  const RngStream root(cfg.seed, 0);
  const std::size_t n = data.samples.size();

  Model model;
  model.config = cfg;
  model.config.recon_scale = scale;
  CvaeTrainConfig ccfg = cvae_config(cfg, scale);
  AbpTrainConfig acfg = abp_config(cfg, scale);
  {
    RngStream init = root.derive(purpose::kInit);
    model.nets = build_cvae(ccfg, init);
  }
  const bool abp = cfg.inference == Inference::Abp;
  if (abp) {
    model.nets.encoders = {};
    RngStream bank_rng = root.derive(purpose::kBank);
    model.bank = LatentBank(n, cfg.generator.latent_dim, bank_rng);
  } else if (cfg.inference == Inference::Gsnn) {
    model.nets.encoders.posterior_phi.clear();
  }

  CvaeOptimState cstate;
  AdamState astate;
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    ccfg.adam.lr = acfg.adam.lr = learning_rate(ep, cfg);
    const auto order = shuffled(n, root.derive(purpose::kShuffle, ep));
    EpochLog entry;
    entry.epoch = ep;
    entry.lr = ccfg.adam.lr;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t end = std::min(n, start + cfg.batch);
      std::vector<const RgbdSample*> members;
      std::vector<std::size_t> annot;
      Batch batch;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data.samples[order[k]];
        members.push_back(&s);
        batch.indices.push_back(order[k]);
        RngStream pick = root.derive(purpose::kAnnotator, ep, order[k]);
        annot.push_back(static_cast<std::size_t>(pick.below(s.annotations.size())));
      }
      batch.x = input_batch(members);
      batch.y = target_batch(members, annot);
      batch.gray = gray_batch(members);
      const RngStream step_rng = root.derive(purpose::kStep, ep, steps);
      if (abp) {
        const AbpStepStats st = train_step_abp(model.nets.generator, astate, model.bank, batch, acfg, step_rng);
        entry.recon += st.recon;
        entry.smooth += st.smooth;
        entry.total += st.total;
      } else {
        const CvaeStepStats st = train_step_cvae(model.nets, cstate, batch, ep, ccfg, step_rng);
        entry.recon += cfg.inference == Inference::Gsnn ? st.recon_prior : st.recon_post;
        entry.kl += st.kl;
        entry.lambda_kl = st.lambda_kl;
        entry.smooth += st.smooth;
        entry.total += st.total;
      }
      ++steps;
    }
    entry.recon /= static_cast<double>(steps);
    entry.kl /= static_cast<double>(steps);
    entry.smooth /= static_cast<double>(steps);
    entry.total /= static_cast<double>(steps);
    model.epochs_trained = ep + 1;
    if (log != nullptr) log->push_back(entry);
    if (on_epoch) {
      char line[256];
      std::snprintf(line, sizeof line, "epoch %zu/%zu lr=%.3g recon=%.4f kl=%.4f smooth=%.4f total=%.4f",
                    ep + 1, cfg.epochs, entry.lr, entry.recon, entry.kl, entry.smooth, entry.total);
      on_epoch(line);
    }
    if (cfg.save_every > 0 && (ep + 1) % cfg.save_every == 0 && ep + 1 < cfg.epochs && !cfg.out_path.empty()) {
      save_checkpoint(cfg.out_path + ".ep" + std::to_string(ep + 1), to_checkpoint(model));
    }
  }
  return model;
}

Checkpoint to_checkpoint(const Model& model) {
  Checkpoint ckpt;
  put_params(ckpt, kGenPrefix, model.nets.generator);
  put_params(ckpt, kPriorPrefix, model.nets.encoders.prior_theta);
  put_params(ckpt, kPostPrefix, model.nets.encoders.posterior_phi);
  if (model.bank.size() > 0) ckpt.tensors.emplace(kBankName, model.bank.tensor());
  json meta;
  meta["format"] = "ucsd-model";
  meta["epochs_trained"] = model.epochs_trained;
  meta["rng"] = {{"generator", "philox4x32-10"}, {"master_seed", model.config.seed}};
  meta["config"] = json::parse(model.config.to_json());
  ckpt.metadata = meta.dump();
  return ckpt;
}

Model from_checkpoint(const Checkpoint& ckpt) {
  Model model;
  try {
    const json meta = json::parse(ckpt.metadata);
    if (meta.at("format") != "ucsd-model") throw ValidationError("checkpoint: not a model checkpoint");
    model.epochs_trained = meta.at("epochs_trained").get<std::size_t>();
    model.config = RunConfig::from_json(meta.at("config").dump());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint metadata: ") + e.what());
  }
  const RunConfig& cfg = model.config;
  model.nets.generator = take_params(ckpt, kGenPrefix);
  check_schema(model.nets.generator, generator_schema(cfg.generator), "checkpoint generator");
  std::size_t expected = model.nets.generator.size();
  if (cfg.inference != Inference::Abp) {
    model.nets.encoders.prior_theta = take_params(ckpt, kPriorPrefix);
    check_schema(model.nets.encoders.prior_theta, encoder_schema(encoder_for(cfg, 0)), "checkpoint prior");
    expected += model.nets.encoders.prior_theta.size();
  }
  if (cfg.inference == Inference::Cvae) {
    model.nets.encoders.posterior_phi = take_params(ckpt, kPostPrefix);
    check_schema(model.nets.encoders.posterior_phi, encoder_schema(encoder_for(cfg, 1)),
                 "checkpoint posterior");
    expected += model.nets.encoders.posterior_phi.size();
  }
  if (cfg.inference == Inference::Abp) {
    auto it = ckpt.tensors.find(kBankName);
    if (it == ckpt.tensors.end()) throw ValidationError("checkpoint: abp model without latent bank");
    if (it->second.rank() != 2 || it->second.dim(1) != cfg.generator.latent_dim) {
      throw ShapeError("checkpoint: latent bank shape " + shape_str(it->second.shape()));
    }
    model.bank = LatentBank(it->second);
    expected += 1;
  }
  if (expected != ckpt.tensors.size()) throw ValidationError("checkpoint: unexpected extra tensors");
  return model;
}

Model cmd_train(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  if (cfg.out_path.empty()) throw ValidationError("train: --out is required");
  const Dataset data = load_dataset(cfg.data_dir);
  if (data.split != Split::Train) throw ValidationError("train: dataset '" + cfg.data_dir + "' is not a train split");
  if (log) log("training " + std::string(to_string(cfg.inference)) + " on " + std::to_string(data.samples.size()) + " samples");
  std::vector<EpochLog> history;
  Model model = train_model(cfg, data, &history, log);
  const fs::path out(cfg.out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(cfg.out_path, to_checkpoint(model));
  std::ofstream csv(cfg.out_path + ".log.csv", std::ios::binary);
  csv << "epoch,lr,lambda_kl,recon,kl,smooth,total\n";
  for (const auto& e : history) {
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.6e", e.lr);
    csv << e.epoch << ',' << lr << ',' << csv_number(e.lambda_kl) << ','
        << csv_number(e.recon) << ',' << csv_number(e.kl) << ',' << csv_number(e.smooth) << ','
        << csv_number(e.total) << '\n';
  }
  if (!csv) throw IoError("cannot write training log for '" + cfg.out_path + "'");
  return model;
}

RngStream predict_stream(std::uint64_t seed, std::size_t index) {
  return RngStream(seed, 0).derive(purpose::kPredict, index);
}

ImagePrediction predict_image(const Model& model, const RgbdSample& sample, std::size_t samples,
                              RngStream rng) {
  if (samples == 0) throw ValidationError("predict: need at least one sample");
  const Tensor x = input_batch({&sample});
  ImagePrediction out;
  out.id = sample.id;
  out.ambiguous = sample.ambiguous;
  const GeneratorConfig& gen = model.config.generator;
  CvaeTrainConfig ccfg = cvae_config(model.config, model.config.recon_scale);
  for (std::size_t c = 0; c < samples; ++c) {
    Tensor z, pred;
    if (model.config.inference == Inference::Abp) {
      pred = sample_prediction_abp(model.nets.generator, x, gen, rng, nullptr, &z);
    } else {
      pred = sample_prediction_cvae(model.nets, x, ccfg, rng, &z);
    }
    out.samples.push_back(to_map(pred));
    out.latents.push_back(std::move(z));
  }
  out.consensus = saliency_consensus(out.samples);
  out.avep = average_predictions(out.samples);
  out.avez = average_latents(out.latents, model.nets.generator, x, gen);
  double s = 0.0;
  for (double v : out.consensus.variance.data()) s += v;
  out.mean_variance = s / static_cast<double>(out.consensus.variance.size());
  return out;
}

namespace {

std::string pred_file(const std::string& id, const std::string& what) { return id + "_" + what + ".pgm"; }

std::string sample_tag(std::size_t c) { return "sample" + std::to_string(c); }

}  // namespace

std::vector<ImagePrediction> cmd_predict(const PredictConfig& cfg, const LogFn& log) {
  if (cfg.samples == 0) throw ValidationError("predict: --samples must be >= 1");
  if (!fs::is_regular_file(cfg.ckpt)) throw ValidationError("predict: missing checkpoint '" + cfg.ckpt + "'");
  const Model model = from_checkpoint(load_checkpoint(cfg.ckpt));
  const GeneratorConfig& gen = model.config.generator;
  if ((cfg.fusion && *cfg.fusion != gen.fusion) || (cfg.latent_dim && *cfg.latent_dim != gen.latent_dim) ||
      (cfg.base_channels && *cfg.base_channels != gen.base_channels)) {
    throw ValidationError("predict: generator flags do not match the checkpoint (fusion " +
                          std::string(to_string(gen.fusion)) + ", latent-dim " + std::to_string(gen.latent_dim) +
                          ", base-channels " + std::to_string(gen.base_channels) + ")");
  }
  const Dataset data = load_dataset(cfg.data_dir);
  gen.validate_input(data.samples.front().depth.dim(0), data.samples.front().depth.dim(1));
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (!fs::is_directory(cfg.out_dir)) throw IoError("cannot create prediction directory '" + cfg.out_dir + "'");
  const fs::path dir(cfg.out_dir);

  std::vector<ImagePrediction> all;
  std::ostringstream manifest, variance;
  manifest << "ucsd-predictions v1\tsamples=" << cfg.samples << "\tsplit=" << to_string(data.split) << '\n';
  variance << "id,ambiguous,mean_variance\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    ImagePrediction p = predict_image(model, data.samples[i], cfg.samples, predict_stream(cfg.seed, i));
    for (std::size_t c = 0; c < p.samples.size(); ++c) {
      write_pgm((dir / pred_file(p.id, sample_tag(c))).string(), p.samples[c]);
    }
    write_pgm((dir / pred_file(p.id, "consensus")).string(), p.consensus.gray_consensus);
    write_pgm((dir / pred_file(p.id, "majority")).string(), p.consensus.binary_majority);
    write_pgm((dir / pred_file(p.id, "avep")).string(), p.avep);
    write_pgm((dir / pred_file(p.id, "avez")).string(), p.avez);
    // Variance is at most 0.25; stored ×4 so the PGM uses its full range.
    Map scaled = p.consensus.variance;
    for (auto& v : scaled.data()) v = std::min(1.0, 4.0 * v);
    write_pgm((dir / pred_file(p.id, "variance")).string(), scaled);
    manifest << p.id << '\t' << (p.ambiguous ? 1 : 0) << '\n';
    variance << p.id << ',' << (p.ambiguous ? 1 : 0) << ',' << csv_number(p.mean_variance) << '\n';
    all.push_back(std::move(p));
  }
  std::ofstream(dir / kPredictionManifest, std::ios::binary) << manifest.str();
  std::ofstream vout(dir / kImageVariance, std::ios::binary);
  vout << variance.str();
  if (!vout) throw IoError("cannot write predictions in '" + cfg.out_dir + "'");
  if (log) log("wrote " + std::to_string(all.size()) + " x " + std::to_string(cfg.samples) + " predictions to " + cfg.out_dir);
  return all;
}

namespace {

struct PredictionRecord {
  std::string id;
  bool ambiguous = false;
  std::vector<Map> samples;
  Map consensus, avep, avez;
};

void accumulate(MetricReport& acc, const MetricReport& r, double w) {
  acc.mae += w * r.mae;
  acc.mean_f += w * r.mean_f;
  acc.mean_e += w * r.mean_e;
  acc.s_measure += w * r.s_measure;
  for (std::size_t t = 0; t < kCurvePoints; ++t) {
    acc.f_curve[t] += w * r.f_curve[t];
    acc.e_curve[t] += w * r.e_curve[t];
  }
}

}  // namespace

std::vector<EvalRow> cmd_eval(const EvalConfig& cfg, const LogFn& log) {
  const Dataset data = load_dataset(cfg.data_dir);
  const fs::path dir(cfg.pred_dir);
  std::ifstream in(dir / kPredictionManifest, std::ios::binary);
  if (!in) throw IoError("missing prediction manifest in '" + cfg.pred_dir + "'");
  std::string line;
  std::getline(in, line);
  std::size_t samples = 0;
  {
    std::istringstream h(line);
    std::string magic, tag, count;
    std::getline(h, magic, '\t');
    std::getline(h, count, '\t');
    if (magic != "ucsd-predictions v1" || count.rfind("samples=", 0) != 0) {
      throw IoError(cfg.pred_dir + ": bad prediction manifest header");
    }
    samples = std::stoul(count.substr(8));
  }
  std::map<std::string, bool> listed;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError(cfg.pred_dir + ": bad prediction manifest line");
    listed[line.substr(0, tab)] = line.substr(tab + 1) == "1";
  }
  if (listed.size() != data.samples.size()) {
    throw ValidationError("eval: " + std::to_string(listed.size()) + " predicted images vs " +
                          std::to_string(data.samples.size()) + " dataset samples");
  }
  // Check every file up front so a misaligned set fails before any work.
  for (const auto& s : data.samples) {
    if (!listed.count(s.id)) throw ValidationError("eval: no predictions for sample '" + s.id + "'");
    std::vector<std::string> names{pred_file(s.id, "consensus"), pred_file(s.id, "avep"), pred_file(s.id, "avez")};
    for (std::size_t c = 0; c < samples; ++c) names.push_back(pred_file(s.id, sample_tag(c)));
    for (const auto& name : names) {
      if (!fs::is_regular_file(dir / name)) throw ValidationError("eval: missing prediction file '" + name + "'");
    }
  }

  const std::string split = to_string(data.split);
  const std::vector<std::pair<std::string, int>> subsets{{split, -1}, {split + ":ambiguous", 1}, {split + ":unambiguous", 0}};
  std::vector<EvalRow> rows;
  std::map<std::string, MetricReport> totals;
  std::map<std::string, std::size_t> counts;
  const auto key = [](const std::string& sub, const std::string& est) { return sub + "|" + est; };
  for (const auto& s : data.samples) {
    const auto read = [&](const std::string& what) {
      Map m = read_pgm((dir / pred_file(s.id, what)).string());
      if (m.shape() != s.gt.shape()) throw ValidationError("eval: prediction '" + s.id + "_" + what + "' has wrong size");
      return m;
    };
    std::map<std::string, MetricReport> per;
    per["consensus"] = evaluate_pair(read("consensus"), s.gt);
    per["avep"] = evaluate_pair(read("avep"), s.gt);
    per["avez"] = evaluate_pair(read("avez"), s.gt);
    MetricReport mean;
    for (std::size_t c = 0; c < samples; ++c) {
      accumulate(mean, evaluate_pair(read(sample_tag(c)), s.gt), 1.0 / static_cast<double>(samples));
    }
    per["sample_mean"] = mean;
    for (const auto& [sub, flag] : subsets) {
      if (flag >= 0 && (flag == 1) != s.ambiguous) continue;
      counts[sub] += 1;
      for (const char* est : kEstimators) accumulate(totals[key(sub, est)], per[est], 1.0);
    }
  }
  for (const auto& [sub, flag] : subsets) {
    if (counts[sub] == 0) continue;
    for (const char* est : kEstimators) {
      MetricReport r = totals[key(sub, est)];
      const double n = static_cast<double>(counts[sub]);
      r.mae /= n, r.mean_f /= n, r.mean_e /= n, r.s_measure /= n;
      for (std::size_t t = 0; t < kCurvePoints; ++t) {
        r.f_curve[t] /= n;
        r.e_curve[t] /= n;
      }
      r.count = counts[sub];
      rows.push_back({sub, est, r});
    }
  }

  const fs::path out(cfg.out_csv);
  const fs::path out_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(out_dir);
  std::ofstream csv(out, std::ios::binary);
  csv << "split,estimator,S,meanF,meanE,MAE\n";
  for (const auto& r : rows) {
    csv << r.split << ',' << r.estimator << ',' << csv_number(r.report.s_measure) << ','
        << csv_number(r.report.mean_f) << ',' << csv_number(r.report.mean_e) << ','
        << csv_number(r.report.mae) << '\n';
  }
  if (!csv) throw IoError("cannot write '" + cfg.out_csv + "'");
  for (const auto& [name, getter] :
       {std::pair<const char*, const Curve MetricReport::*>{"f_curve.csv", &MetricReport::f_curve},
        std::pair<const char*, const Curve MetricReport::*>{"e_curve.csv", &MetricReport::e_curve}}) {
    std::ofstream c(out_dir / name, std::ios::binary);
    c << "threshold";
    for (const char* est : kEstimators) c << ',' << est;
    c << '\n';
    for (std::size_t t = 0; t < kCurvePoints; ++t) {
      c << csv_number(static_cast<double>(t) / 255.0);
      for (std::size_t e = 0; e < std::size(kEstimators); ++e) c << ',' << csv_number((rows[e].report.*getter)[t]);
      c << '\n';
    }
  }
  // Mean per-pixel variance per ambiguity class, from the predictor's
  // full-precision values.
  std::ifstream vin(dir / kImageVariance, std::ios::binary);
  if (!vin) throw IoError(std::string("missing ") + kImageVariance + " in '" + cfg.pred_dir + "'");
  std::getline(vin, line);
  double vsum[2] = {0, 0};
  std::size_t vcount[2] = {0, 0};
  while (std::getline(vin, line)) {
    std::istringstream ls(line);
    std::string id, amb, val;
    std::getline(ls, id, ',');
    std::getline(ls, amb, ',');
    std::getline(ls, val, ',');
    const int k = amb == "1" ? 1 : 0;
    vsum[k] += std::stod(val);
    vcount[k] += 1;
  }
  std::ofstream vcsv(out_dir / "variance.csv", std::ios::binary);
  vcsv << "class,images,mean_variance\n";
  const char* names[2] = {"unambiguous", "ambiguous"};
  for (int k : {1, 0}) {
    vcsv << names[k] << ',' << vcount[k] << ',' << csv_number(vcount[k] ? vsum[k] / static_cast<double>(vcount[k]) : 0.0)
         << '\n';
  }
  if (log) log("evaluated " + std::to_string(data.samples.size()) + " images into " + cfg.out_csv);
  return rows;
}

}  // namespace ucsd
