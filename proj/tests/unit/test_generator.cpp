#include <doctest.h>

#include "oracles.hpp"
#include "ucsd/generator.hpp"

using namespace ucsd;
using V = ad::Var<double>;
using Tp = ad::Tape<double>;

namespace {

// Parameter count written out from the architecture description.
std::size_t expected_params(std::size_t m, std::size_t levels, std::size_t k, std::size_t in, Fusion f) {
  const auto ch = [&](std::size_t l) { return std::min(m << l, 4 * m); };
  const auto conv = [](std::size_t o, std::size_t i, std::size_t ks) { return o * i * ks * ks + o; };
  const auto fc = [](std::size_t o, std::size_t i) { return o * i + o; };
  const auto att = [&](std::size_t c) { const std::size_t h = std::max<std::size_t>(c / 4, 1); return fc(h, c) + fc(c, h); };
  std::size_t n = 0, prev = in + (f == Fusion::Early ? k : 0);
  for (std::size_t l = 0; l < levels; ++l) {
    n += conv(ch(l), prev, 3) + conv(ch(l), ch(l), 3);
    prev = ch(l);
  }
  if (f == Fusion::Middle) n += fc(k, prev) + fc(prev, k);
  n += att(prev);
  for (std::size_t l = levels; l-- > 0;) {
    n += conv(ch(l), prev + ch(l), 3);
    prev = ch(l);
  }
  if (f == Fusion::Late) n += fc(k, prev) + conv(prev, prev + k, 3);
  n += att(prev) + conv(1, prev, 1);
  return n;
}

GeneratorConfig small(Fusion f) {
  GeneratorConfig c;
  c.base_channels = 4;
  c.levels = 2;
  c.latent_dim = 2;
  c.fusion = f;
  return c;
}

}  // namespace

TEST_CASE("parameter count follows the schema") {
  for (Fusion f : {Fusion::Early, Fusion::Middle, Fusion::Late}) {
    GeneratorConfig cfg;
    cfg.fusion = f;
    RngStream rng(0, 0);
    const ParamSet p = build_generator(cfg, rng);
    CHECK(param_count(p) == expected_params(32, 3, 3, 4, f));
  }
}

TEST_CASE("build is deterministic per seed") {
  GeneratorConfig cfg;
  RngStream a(1, 0), b(1, 0), c(2, 0);
  const ParamSet pa = build_generator(cfg, a), pb = build_generator(cfg, b), pc = build_generator(cfg, c);
  CHECK(pa == pb);
  CHECK(pa != pc);
  for (const auto& [name, t] : pa) {
    if (name.ends_with(".b")) {
      for (float v : t.data()) CHECK(v == 0.0f);
    }
  }
  double s2 = 0;
  std::size_t n = 0;
  for (float v : pa.at("dec0.w").data()) s2 += v * v, ++n;
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("config validation") {
  GeneratorConfig cfg;
  cfg.latent_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  CHECK_THROWS_AS(cfg.validate_input(30, 32), ShapeError);
  cfg.validate_input(32, 64);
  CHECK(parse_fusion("late") == Fusion::Late);
  CHECK_THROWS_AS(parse_fusion("side"), ValidationError);
}

TEST_CASE("tile_latent") {
  Tp t;
  auto z = t.variable(TensorD({1, 2}, std::vector<double>{1.0, -1.0}));
  auto tiled = tile_latent(z, 2, 2);
  CHECK(tiled.shape() == Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tiled.value()[i] == 1.0);
    CHECK(tiled.value()[4 + i] == -1.0);
  }
  t.backward(ad::sum(tiled));
  CHECK(t.grad(z)[0] == 4.0);
  CHECK(t.grad(z)[1] == 4.0);
  Tp t0;
  auto zeros = tile_latent(t0.constant(TensorD({1, 3}, 0.0)), 4, 4);
  CHECK(zeros.shape() == Shape{1, 3, 4, 4});
  for (double v : zeros.value().data()) CHECK(v == 0.0);
}

TEST_CASE("channel attention examples") {
  RngStream rng(3, 0);
  BasicParamSet<double> p{{"a.fc1.w", TensorD({1, 4}, 0.0)}, {"a.fc1.b", TensorD({1}, 0.0)},
                          {"a.fc2.w", TensorD({4, 1}, 0.0)}, {"a.fc2.b", TensorD({4}, 0.0)}};
  Tp t;
  BoundParams<double> bp(t, p, false);
  const TensorD x = oracle::random_tensor({2, 4, 3, 3}, rng);
  auto out = channel_attention(t.constant(x), bp, "a", 0.1);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.value()[i] == doctest::Approx(1.5 * x[i]));
  for (auto& [name, v] : p) v = oracle::random_tensor(v.shape(), rng);
  Tp t2;
  BoundParams<double> bp2(t2, p, false);
  auto zero = channel_attention(t2.constant(TensorD({1, 4, 3, 3}, 0.0)), bp2, "a", 0.1);
  for (double v : zero.value().data()) CHECK(v == 0.0);
}

TEST_CASE("mix_channels") {
  RngStream rng(4, 0);
  Tp t;
  const TensorD a = oracle::random_tensor({2, 5}, rng), b = oracle::random_tensor({2, 5}, rng);
  auto same = mix_channels(t.constant(a), t.constant(a), Mixing{true, &rng});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same.value()[i] == doctest::Approx(a[i]));
  auto test_mode = mix_channels(t.constant(a), t.constant(b), Mixing{});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(test_mode.value()[i] == doctest::Approx(0.5 * (a[i] + b[i])));
  auto train = mix_channels(t.constant(a), t.constant(b), Mixing{true, &rng});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(train.value()[i] >= std::min(a[i], b[i]) - 1e-12);
    CHECK(train.value()[i] <= std::max(a[i], b[i]) + 1e-12);
  }
  CHECK_THROWS_AS(mix_channels(t.constant(a), t.constant(b), Mixing{true, nullptr}), ValidationError);
}

TEST_CASE("forward is pure and shape-stable across fusion modes") {
  RngStream rng(5, 0);
  const Tensor x = oracle::random_tensor({2, 4, 16, 16}, rng, 0, 1).cast<float>();
  const Tensor z = oracle::random_tensor({2, 3}, rng).cast<float>();
  for (Fusion f : {Fusion::Early, Fusion::Middle, Fusion::Late}) {
    GeneratorConfig cfg;
    cfg.fusion = f;
    cfg.base_channels = 8;
    RngStream init(6, 0);
    const ParamSet p = build_generator(cfg, init);
    const Tensor a = generator_logits(p, x, z, cfg), b = generator_logits(p, x, z, cfg);
    CHECK(a.shape() == Shape{2, 1, 16, 16});
    CHECK(a == b);
    CHECK_THROWS_AS(generator_logits(p, x, Tensor({2, 2}), cfg), ShapeError);
  }
}

TEST_CASE("early fusion output depends on z at initialization") {
  GeneratorConfig cfg;
  RngStream rng(7, 0);
  const BasicParamSet<double> p = cast_params<double>(build_generator(cfg, rng));
  const TensorD x = oracle::random_tensor({1, 4, 16, 16}, rng, 0, 1);
  Tp t;
  BoundParams<double> bp(t, p, false);
  auto z = t.variable(TensorD({1, 3}, 0.3));
  t.backward(ad::sum(generator_forward(bp, t.constant(x), z, cfg)));
  double norm = 0;
  const TensorD gz = t.grad(z);
  for (double g : gz.data()) norm += std::abs(g);
  CHECK(norm > 0);
}

TEST_CASE("generator gradients match finite differences") {
  for (Fusion f : {Fusion::Early, Fusion::Middle, Fusion::Late}) {
    CAPTURE(to_string(f));
    const GeneratorConfig cfg = small(f);
    RngStream rng(8, static_cast<std::uint64_t>(f));
    BasicParamSet<double> p;
    for (const auto& [name, shape] : generator_schema(cfg)) p.emplace(name, oracle::random_tensor(shape, rng, -0.5, 0.5));
    const TensorD x = oracle::random_tensor({2, 4, 8, 8}, rng, 0, 1);
    const TensorD z = oracle::random_tensor({2, 2}, rng);
    std::vector<std::string> names;
    std::vector<TensorD> inputs{z};
    for (const auto& [name, t] : p) {
      names.push_back(name);
      inputs.push_back(t);
    }
    const auto fn = [&](Tp& t, const std::vector<V>& v) {
      // Rebind parameters from the vector so gradcheck can perturb them.
      std::map<std::string, V> vars;
      for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], v[i + 1]);
      RngStream mix_rng(9, 0);
      const Mixing mixing{true, &mix_rng};
      BoundParams<double> params = BoundParams<double>::from_vars(std::move(vars));
      auto logits = generator_forward(params, t.constant(x), v[0], cfg, mixing);
      RngStream wr(10, 0);
      return ad::sum(ad::mul(logits, t.constant(oracle::random_tensor(logits.shape(), wr))));
    };
    std::vector<std::vector<std::size_t>> coords(inputs.size());
    for (std::size_t i = 1; i < inputs.size(); ++i) coords[i] = {rng.below(inputs[i].size()), rng.below(inputs[i].size())};
    const auto g = oracle::gradcheck(fn, inputs, 1e-6, coords);
    CHECK(g.max_rel_error < 1e-3);
  }
}
