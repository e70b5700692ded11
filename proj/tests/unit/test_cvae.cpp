#include <doctest.h>

#include "oracles.hpp"
#include "ucsd/cvae.hpp"

using namespace ucsd;
using V = ad::Var<double>;
using Tp = ad::Tape<double>;

namespace {

GaussianParams gaussian(std::vector<float> mu, std::vector<float> logvar) {
  const std::size_t k = mu.size();
  return GaussianParams(Tensor({1, k}, std::move(mu)), Tensor({1, k}, std::move(logvar)));
}

CvaeTrainConfig tiny_config() {
  CvaeTrainConfig c;
  c.generator.base_channels = 4;
  c.generator.levels = 2;
  c.encoder.widths = {4, 4, 4, 4, 4};
  c.schedule.max_epoch = 10;
  return c;
}

Batch tiny_batch(std::uint64_t seed) {
  RngStream rng(seed, 0);
  Batch b;
  b.x = oracle::random_tensor({2, 4, 32, 32}, rng, 0, 1).cast<float>();
  b.y = Tensor({2, 1, 32, 32});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 8; i < 20; ++i)
      for (std::size_t j = 10; j < 24; ++j) b.y.at(n, 0, i, j) = 1.0f;
  b.gray = oracle::random_tensor({2, 1, 32, 32}, rng, 0, 1).cast<float>();
  b.indices = {0, 1};
  return b;
}

}  // namespace

TEST_CASE("gaussian params clamp and validate") {
  GaussianParams g = gaussian({0.0f, 1.0f}, {-50.0f, 50.0f});
  CHECK(g.logvar[0] == -10.0f);
  CHECK(g.logvar[1] == 10.0f);
  CHECK(g.sigma(0, 0) > 0);
  CHECK_THROWS_AS(gaussian({NAN}, {0.0f}), NumericError);
}

TEST_CASE("encoder shapes, purity and zero network") {
  EncoderConfig cfg;
  const auto schema = encoder_schema(cfg);
  BasicParamSet<float> zero;
  for (const auto& [name, shape] : schema) zero.emplace(name, Tensor(shape));
  RngStream rng(1, 0);
  const Tensor x = oracle::random_tensor({3, 4, 32, 32}, rng, 0, 1).cast<float>();
  const GaussianParams g = encode(zero, x, cfg);
  CHECK(g.batch() == 3);
  CHECK(g.dim() == 3);
  for (float v : g.mu.data()) CHECK(v == 0.0f);
  for (float v : g.logvar.data()) CHECK(v == 0.0f);

  const ParamSet p = build_encoder(cfg, rng);
  const GaussianParams a = encode(p, x, cfg), b = encode(p, x, cfg);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);
  CHECK_THROWS_AS(encode(p, Tensor({1, 5, 32, 32}), cfg), ShapeError);
}

TEST_CASE("reparameterize") {
  Tp t;
  GaussianVars<double> g{t.variable(TensorD({1, 2}, 0.0)), t.variable(TensorD({1, 2}, 0.0))};
  const TensorD eps({1, 2}, std::vector<double>{0.3, -1.2});
  auto z = reparameterize(g, eps);
  CHECK(z.value() == eps);
  t.backward(ad::sum(z));
  CHECK(t.grad(g.mu)[0] == 1.0);
  CHECK(t.grad(g.logvar)[0] == doctest::Approx(0.5 * 0.3));

  const GaussianParams tight = gaussian({2.0f}, {-100.0f});
  RngStream rng(2, 0);
  for (int i = 0; i < 100; ++i) {
    RngStream probe = rng;
    const double e = probe.normal();
    const Tensor zz = reparameterize(tight, rng);
    CHECK(std::abs(zz[0] - 2.0) <= std::exp(-5.0) * std::abs(e) + 1e-6);
  }

  const GaussianParams unit = gaussian({1.0f}, {0.0f});
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = reparameterize(unit, rng)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(n));
  CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("kl divergence examples") {
  CHECK(kl_divergence(gaussian({1.0f}, {0.0f}), gaussian({0.0f}, {0.0f})) == doctest::Approx(0.5));
  RngStream rng(3, 0);
  for (int i = 0; i < 50; ++i) {
    std::vector<float> m1(3), l1(3), m2(3), l2(3);
    for (int k = 0; k < 3; ++k) {
      m1[k] = rng.uniform(-2, 2), l1[k] = rng.uniform(-2, 2), m2[k] = rng.uniform(-2, 2), l2[k] = rng.uniform(-2, 2);
    }
    const auto q = gaussian(m1, l1), p = gaussian(m2, l2);
    CHECK(kl_divergence(q, p) >= 0.0);
    CHECK(kl_divergence(q, q) == 0.0);
  }
}

TEST_CASE("kl divergence gradient matches finite differences") {
  RngStream rng(4, 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<TensorD> in;
    for (int i = 0; i < 4; ++i) in.push_back(oracle::random_tensor({3, 2}, rng));
    const auto fn = [](Tp&, const std::vector<V>& v) {
      return kl_divergence(GaussianVars<double>{v[0], v[1]}, GaussianVars<double>{v[2], v[3]});
    };
    CHECK(oracle::gradcheck(fn, in).max_rel_error < 1e-3);
  }
}

TEST_CASE("anneal weight") {
  AnnealSchedule s{100};
  CHECK(anneal_weight(0, s) == 0.0);
  CHECK(anneal_weight(100, s) == 1.0);
  CHECK(anneal_weight(50, s) == 0.5);
  CHECK_THROWS_AS(anneal_weight(101, s), ValidationError);
}

TEST_CASE("objective arithmetic") {
  CHECK(loss_cvae(1.0, 2.0, 0.5) == 2.0);
  CHECK(loss_cvae(1.5, 2.0, 0.0) == 1.5);
  CHECK(loss_cvae(1.5, 0.0, 0.7) == 1.5);
  CHECK(loss_gsnn(0.8) == 0.8);
  CHECK(loss_hybrid(2.0, 4.0, 0.5) == 3.0);
  CHECK(loss_hybrid(2.0, 4.0, 1.0) == 2.0);
  CHECK(loss_hybrid(2.0, 4.0, 0.0) == 4.0);
  CHECK_THROWS_AS(loss_hybrid(2.0, 4.0, 1.5), ValidationError);
}

TEST_CASE("kl path sends no gradient to the posterior at zero weight") {
  Tp t;
  auto mq = t.variable(TensorD({1, 2}, 0.4)), lq = t.variable(TensorD({1, 2}, -0.3));
  auto mp = t.constant(TensorD({1, 2}, 0.0)), lp = t.constant(TensorD({1, 2}, 0.1));
  auto kl = kl_divergence(GaussianVars<double>{mq, lq}, GaussianVars<double>{mp, lp});
  auto recon = t.constant(TensorD({1}, 2.0));
  t.backward(loss_cvae(recon, kl, 0.0));
  const TensorD gm = t.grad(mq), gl = t.grad(lq);
  for (double g : gm.data()) CHECK(g == 0.0);
  for (double g : gl.data()) CHECK(g == 0.0);
}

TEST_CASE("train step is deterministic, finite and reaches every network") {
  const CvaeTrainConfig cfg = tiny_config();
  const Batch batch = tiny_batch(5);
  RngStream init_a(6, 0), init_b(6, 0);
  CvaeModel a = build_cvae(cfg, init_a), b = build_cvae(cfg, init_b);
  const CvaeModel before = a;
  CvaeOptimState sa, sb;
  const CvaeStepStats st = train_step_cvae(a, sa, batch, 3, cfg, RngStream(7, 0));
  train_step_cvae(b, sb, batch, 3, cfg, RngStream(7, 0));
  CHECK(a.generator == b.generator);
  CHECK(a.encoders.prior_theta == b.encoders.prior_theta);
  CHECK(a.encoders.posterior_phi == b.encoders.posterior_phi);
  CHECK(std::isfinite(st.total));
  CHECK(st.lambda_kl == doctest::Approx(0.3));
  CHECK(a.generator != before.generator);
  CHECK(a.encoders.prior_theta != before.encoders.prior_theta);
  CHECK(a.encoders.posterior_phi != before.encoders.posterior_phi);

  CvaeTrainConfig gsnn = cfg;
  gsnn.variant = CvaeVariant::Gsnn;
  RngStream init_c(6, 0);
  CvaeModel c = build_cvae(gsnn, init_c);
  CvaeOptimState sc;
  const CvaeStepStats gs = train_step_cvae(c, sc, batch, 3, gsnn, RngStream(7, 0));
  CHECK(gs.kl == 0.0);
  CHECK(c.encoders.prior_theta != before.encoders.prior_theta);
  CHECK(c.encoders.posterior_phi == before.encoders.posterior_phi);
}

TEST_CASE("kl annealing off holds the weight at one") {
  CvaeTrainConfig cfg = tiny_config();
  cfg.kl_anneal = false;
  RngStream init(8, 0);
  CvaeModel m = build_cvae(cfg, init);
  CvaeOptimState s;
  CHECK(train_step_cvae(m, s, tiny_batch(9), 0, cfg, RngStream(1, 0)).lambda_kl == 1.0);
}

TEST_CASE("sample predictions lie in (0,1)") {
  const CvaeTrainConfig cfg = tiny_config();
  RngStream init(10, 0), rng(11, 0);
  const CvaeModel m = build_cvae(cfg, init);
  Tensor z;
  const Tensor p = sample_prediction_cvae(m, tiny_batch(12).x, cfg, rng, &z);
  CHECK(z.shape() == Shape{2, 3});
  for (float v : p.data()) CHECK((v > 0.0f && v < 1.0f));
}
