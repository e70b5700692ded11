#include <benchmark/benchmark.h>

#include "ucsd/consensus.hpp"
#include "ucsd/cvae.hpp"
#include "ucsd/generator.hpp"
#include "ucsd/metrics.hpp"

using namespace ucsd;

namespace {

template <class T>
BasicTensor<T> uniform_tensor(const Shape& shape, RngStream& rng) {
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform());
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  RngStream rng(1, 0);
  const Tensor x = uniform_tensor<float>({5, c, 32, 32}, rng);
  const Tensor w = uniform_tensor<float>({c, c, 3, 3}, rng);
  const Tensor b({c});
  for (auto _ : state) {
    ad::Tape<float> tape;
    auto wv = tape.variable(w);
    auto y = ad::conv2d(tape.constant(x), wv, tape.variable(b), 1, 1);
    tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(tape.grad(wv));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(32);

void BM_GeneratorForward(benchmark::State& state) {
  GeneratorConfig cfg;
  cfg.fusion = static_cast<Fusion>(state.range(0));
  RngStream rng(2, 0);
  const ParamSet params = build_generator(cfg, rng);
  const Tensor x = uniform_tensor<float>({1, cfg.input_channels, 32, 32}, rng);
  const Tensor z = uniform_tensor<float>({1, cfg.latent_dim}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(generator_logits(params, x, z, cfg));
  state.SetLabel(to_string(cfg.fusion));
}
BENCHMARK(BM_GeneratorForward)->Arg(0)->Arg(1)->Arg(2);

void BM_CvaeTrainStep(benchmark::State& state) {
  CvaeTrainConfig cfg;
  cfg.recon_scale = 32.0 * 32.0;
  RngStream rng(3, 0);
  CvaeModel model = build_cvae(cfg, rng);
  CvaeOptimState opt;
  Batch batch;
  batch.x = uniform_tensor<float>({5, 4, 32, 32}, rng);
  batch.y = Tensor({5, 1, 32, 32});
  for (auto& v : batch.y.data()) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
  batch.gray = uniform_tensor<float>({5, 1, 32, 32}, rng);
  batch.indices = {0, 1, 2, 3, 4};
  std::size_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step_cvae(model, opt, batch, 10, cfg, rng.derive(7, step++, 0)));
  }
}
BENCHMARK(BM_CvaeTrainStep)->Unit(benchmark::kMillisecond);

void BM_Consensus(benchmark::State& state) {
  RngStream rng(4, 0);
  std::vector<Map> preds;
  for (int i = 0; i < 5; ++i) preds.push_back(uniform_tensor<double>({64, 64}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(saliency_consensus(preds));
}
BENCHMARK(BM_Consensus);

void BM_EvaluatePair(benchmark::State& state) {
  RngStream rng(5, 0);
  const Map p = uniform_tensor<double>({64, 64}, rng);
  Map g({64, 64});
  for (auto& v : g.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_pair(p, g));
}
BENCHMARK(BM_EvaluatePair)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
