// ucsd: synthesize RGB-D saliency data, train stochastic models, sample,
// evaluate and plot.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ucsd/pipeline.hpp"

namespace {

void log_line(const std::string& s) { std::cerr << "[ucsd] " << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  using namespace ucsd;
  CLI::App app{"Uncertainty-aware RGB-D saliency: data synthesis, training, sampling and evaluation"};
  app.require_subcommand(1);

  // synth
  std::string synth_out, split_name = "train";
  std::size_t synth_n = 64;
  std::uint64_t synth_seed = 0;
  SceneSpec spec;
  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-annotator dataset");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", spec.size, "Image side (32 or 64)");
  synth->add_option("--annotators", spec.annotators, "Annotators per image (odd)");
  synth->add_option("--ambiguity", spec.p_ambiguous, "Probability an annotator marks a secondary object");
  synth->add_option("--secondary", spec.max_secondary, "Maximum secondary objects per scene (0..2)");
  synth->add_option("--seed", synth_seed, "Master seed");
  synth->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));

  // train
  RunConfig run;
  std::string inference = "cvae", fusion = "early", kl_anneal = "on", grad_mode = "loss";
  auto* train = app.add_subcommand("train", "Train a CVAE, GSNN or ABP model");
  train->add_option("--data", run.data_dir, "Training dataset directory")->required();
  train->add_option("--out", run.out_path, "Checkpoint path")->required();
  train->add_option("--inference", inference, "cvae, gsnn or abp")->check(CLI::IsMember({"cvae", "gsnn", "abp"}));
  train->add_option("--fusion", fusion, "Latent injection point")->check(CLI::IsMember({"early", "middle", "late"}));
  train->add_option("--epochs", run.epochs, "Maximum epoch")->check(CLI::PositiveNumber);
  train->add_option("--batch", run.batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", run.lr, "Base learning rate");
  train->add_option("--lr-decay", run.lr_decay, "Learning-rate multiplier applied from 80% of the epochs");
  train->add_option("--alpha", run.alpha, "Hybrid weight between CVAE and GSNN losses");
  train->add_option("--kl-anneal", kl_anneal, "Linear KL annealing")->check(CLI::IsMember({"on", "off"}));
  train->add_option("--langevin-steps", run.langevin.steps, "Langevin steps per ABP update");
  train->add_option("--langevin-step-size", run.langevin.step_size, "Langevin step size");
  train->add_option("--langevin-sigma", run.langevin.sigma_obs, "Observation noise for gaussian gradients");
  train->add_option("--langevin-grad", grad_mode, "gaussian or loss")->check(CLI::IsMember({"gaussian", "loss"}));
  train->add_option("--latent-dim", run.generator.latent_dim, "Latent dimension");
  train->add_option("--base-channels", run.generator.base_channels, "Generator width");
  train->add_option("--recon-scale", run.recon_scale, "Reconstruction loss scale (0 = pixels per image)");
  train->add_option("--save-every", run.save_every, "Also checkpoint every N epochs");
  train->add_option("--seed", run.seed, "Master seed");

  // predict
  PredictConfig pred;
  std::string pred_fusion;
  std::size_t pred_latent = 0, pred_width = 0;
  auto* predict = app.add_subcommand("predict", "Sample C predictions per image and form consensus maps");
  predict->add_option("--ckpt", pred.ckpt, "Checkpoint")->required();
  predict->add_option("--data", pred.data_dir, "Dataset directory")->required();
  predict->add_option("--out", pred.out_dir, "Output directory")->required();
  predict->add_option("--samples", pred.samples, "Samples per image")->check(CLI::PositiveNumber);
  predict->add_option("--seed", pred.seed, "Sampling seed");
  predict->add_option("--fusion", pred_fusion, "Expected fusion mode")->check(CLI::IsMember({"early", "middle", "late"}));
  predict->add_option("--latent-dim", pred_latent, "Expected latent dimension");
  predict->add_option("--base-channels", pred_width, "Expected generator width");

  // eval
  EvalConfig eval;
  auto* evaluate = app.add_subcommand("eval", "Score predictions against majority ground truth");
  evaluate->add_option("--pred", eval.pred_dir, "Prediction directory")->required();
  evaluate->add_option("--data", eval.data_dir, "Dataset directory")->required();
  evaluate->add_option("--out", eval.out_csv, "Report CSV path")->required();

  // report
  std::vector<std::string> runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Plot curves and variance bars for evaluated runs");
  report->add_option("--runs", runs, "Evaluated run directories")->required()->expected(1, -1);
  report->add_option("--out", report_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      Dataset data;
      data.split = parse_split(split_name);
      data.samples = synth_dataset(spec, synth_n, synth_seed);
      save_dataset(synth_out, data);
      std::size_t ambiguous = 0;
      for (const auto& s : data.samples) ambiguous += s.ambiguous;
      log_line("wrote " + std::to_string(data.samples.size()) + " " + split_name + " samples (" +
               std::to_string(ambiguous) + " ambiguous, " + std::to_string(data.samples.size() - ambiguous) +
               " unambiguous) to " + synth_out);
    } else if (*train) {
      run.inference = parse_inference(inference);
      run.generator.fusion = parse_fusion(fusion);
      run.encoder.latent_dim = run.generator.latent_dim;
      run.kl_anneal = kl_anneal == "on";
      run.langevin.grad_mode = parse_grad_mode(grad_mode);
      cmd_train(run, log_line);
      log_line("checkpoint written to " + run.out_path);
    } else if (*predict) {
      if (!pred_fusion.empty()) pred.fusion = parse_fusion(pred_fusion);
      if (pred_latent > 0) pred.latent_dim = pred_latent;
      if (pred_width > 0) pred.base_channels = pred_width;
      cmd_predict(pred, log_line);
    } else if (*evaluate) {
      for (const auto& row : cmd_eval(eval, log_line)) {
        char line[160];
        std::snprintf(line, sizeof line, "%-18s %-11s S=%.4f meanF=%.4f meanE=%.4f MAE=%.4f", row.split.c_str(),
                      row.estimator.c_str(), row.report.s_measure, row.report.mean_f, row.report.mean_e,
                      row.report.mae);
        log_line(line);
      }
    } else if (*report) {
      cmd_report(runs, report_out, log_line);
    }
  } catch (const NumericError& e) {
    log_line(std::string("numeric error: ") + e.what());
    return 3;
  } catch (const Error& e) {
    log_line(std::string("error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log_line(std::string("unexpected error: ") + e.what());
    return 1;
  }
  return 0;
}
