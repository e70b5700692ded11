#include "ucsd/generator.hpp"

#include <algorithm>

namespace ucsd {

const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::Early: return "early";
    case Fusion::Middle: return "middle";
    case Fusion::Late: return "late";
  }
  return "?";
}

Fusion parse_fusion(const std::string& s) {
  if (s == "early") return Fusion::Early;
  if (s == "middle") return Fusion::Middle;
  if (s == "late") return Fusion::Late;
  throw ValidationError("unknown fusion mode '" + s + "'");
}

void GeneratorConfig::validate() const {
  if (latent_dim < 1) throw ValidationError("generator: latent_dim must be >= 1");
  if (levels < 1) throw ValidationError("generator: levels must be >= 1");
  if (base_channels < 4) throw ValidationError("generator: base_channels must be >= 4");
  if (input_channels < 1) throw ValidationError("generator: input_channels must be >= 1");
  if (attention_reduction < 1) throw ValidationError("generator: attention_reduction must be >= 1");
}

std::size_t GeneratorConfig::channels(std::size_t level) const {
  return std::min(base_channels << level, 4 * base_channels);
}

void GeneratorConfig::validate_input(std::size_t height, std::size_t width) const {
  const std::size_t div = std::size_t{1} << levels;
  if (height == 0 || width == 0 || height % div != 0 || width % div != 0) {
    throw ShapeError("generator: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by 2^levels = " + std::to_string(div));
  }
}

namespace {

void add_conv(std::map<std::string, Shape>& s, const std::string& name, std::size_t out,
              std::size_t in, std::size_t k) {
  s[name + ".w"] = {out, in, k, k};
  s[name + ".b"] = {out};
}

void add_fc(std::map<std::string, Shape>& s, const std::string& name, std::size_t out, std::size_t in) {
  s[name + ".w"] = {out, in};
  s[name + ".b"] = {out};
}

void add_attention(std::map<std::string, Shape>& s, const std::string& name, std::size_t c,
                   std::size_t reduction) {
  const std::size_t hidden = std::max<std::size_t>(c / reduction, 1);
  add_fc(s, name + ".fc1", hidden, c);
  add_fc(s, name + ".fc2", c, hidden);
}

}  // namespace

std::map<std::string, Shape> generator_schema(const GeneratorConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  const std::size_t levels = cfg.levels, k = cfg.latent_dim;
  std::size_t in = cfg.input_channels + (cfg.fusion == Fusion::Early ? k : 0);
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t c = cfg.channels(l);
    add_conv(s, "enc" + std::to_string(l) + ".a", c, in, 3);
    add_conv(s, "enc" + std::to_string(l) + ".b", c, c, 3);
    in = c;
  }
  const std::size_t bottleneck = cfg.channels(levels - 1);
  if (cfg.fusion == Fusion::Middle) {
    add_fc(s, "mid.to_latent", k, bottleneck);
    add_fc(s, "mid.from_latent", bottleneck, k);
  }
  add_attention(s, "att_mid", bottleneck, cfg.attention_reduction);
  std::size_t up = bottleneck;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t c = cfg.channels(l);
    add_conv(s, "dec" + std::to_string(l), c, up + c, 3);
    up = c;
  }
  const std::size_t top = cfg.channels(0);
  if (cfg.fusion == Fusion::Late) {
    add_fc(s, "late.to_latent", k, top);
    add_conv(s, "late.conv", top, top + k, 3);
  }
  add_attention(s, "att_out", top, cfg.attention_reduction);
  add_conv(s, "out", 1, top, 1);
  return s;
}

ParamSet build_generator(const GeneratorConfig& cfg, RngStream& rng) {
  ParamSet params;
  for (const auto& [name, shape] : generator_schema(cfg)) {
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    params.emplace(name, bias ? create<float>(shape, init::Zeros{})
                              : create<float>(shape, init::Gaussian{0.0, 0.01, &rng}));
  }
  return params;
}

template <class T>
void check_schema(const BasicParamSet<T>& params, const std::map<std::string, Shape>& schema,
                  const char* what) {
  if (params.size() != schema.size()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(schema.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (const auto& [name, shape] : schema) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError(std::string(what) + ": missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError(std::string(what) + ": tensor '" + name + "' has shape " +
                       shape_str(it->second.shape()) + ", schema wants " + shape_str(shape));
    }
  }
}

template <class T>
ad::Var<T> tile_latent(ad::Var<T> z, std::size_t height, std::size_t width) {
  return ad::tile_spatial(z, height, width);
}

template <class T>
ad::Var<T> channel_attention(ad::Var<T> feat, const BoundParams<T>& p, const std::string& prefix,
                             T slope) {
  auto pooled = ad::global_avg_pool(feat);
  auto hidden = ad::leaky_relu(ad::affine(pooled, p(prefix + ".fc1.w"), p(prefix + ".fc1.b")), slope);
  auto gate = ad::sigmoid(ad::affine(hidden, p(prefix + ".fc2.w"), p(prefix + ".fc2.b")));
  return ad::add(feat, ad::scale_channels(feat, gate));
}

template <class T>
ad::Var<T> mix_channels(ad::Var<T> feat, ad::Var<T> z_proj, const Mixing& mixing) {
  if (feat.shape() != z_proj.shape() || feat.shape().size() != 2) {
    throw ShapeError("mix_channels: " + shape_str(feat.shape()) + " vs " + shape_str(z_proj.shape()));
  }
  auto& tape = feat.tape();
  BasicTensor<T> lam(feat.shape(), T{0.5});
  BasicTensor<T> rest(feat.shape(), T{0.5});
  if (mixing.train) {
    if (mixing.rng == nullptr) throw ValidationError("mix_channels: training mode needs an rng");
    for (std::size_t i = 0; i < lam.size(); ++i) {
      lam[i] = static_cast<T>(mixing.rng->uniform());
      rest[i] = T{1} - lam[i];
    }
  }
  return ad::add(ad::mul(tape.constant(std::move(lam)), feat),
                 ad::mul(tape.constant(std::move(rest)), z_proj));
}

template <class T>
ad::Var<T> generator_forward(const BoundParams<T>& p, ad::Var<T> x, ad::Var<T> z,
                             const GeneratorConfig& cfg, const Mixing& mixing) {
  const Shape xs = x.shape();
  if (xs.size() != 4 || xs[1] != cfg.input_channels) {
    throw ShapeError("generator: input must be Nx" + std::to_string(cfg.input_channels) +
                     "xHxW, got " + shape_str(xs));
  }
  if (z.shape().size() != 2 || z.shape()[0] != xs[0] || z.shape()[1] != cfg.latent_dim) {
    throw ShapeError("generator: latent must be " + std::to_string(xs[0]) + "x" +
                     std::to_string(cfg.latent_dim) + ", got " + shape_str(z.shape()));
  }
  cfg.validate_input(xs[2], xs[3]);
  const T slope = static_cast<T>(cfg.leaky_slope);
  auto conv = [&](ad::Var<T> in, const std::string& name, std::size_t stride, std::size_t pad) {
    return ad::conv2d(in, p(name + ".w"), p(name + ".b"), stride, pad);
  };

  ad::Var<T> h = x;
  if (cfg.fusion == Fusion::Early) h = ad::concat_channels(x, tile_latent(z, xs[2], xs[3]));
  std::vector<ad::Var<T>> skips;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    h = ad::leaky_relu(conv(h, name + ".a", 1, 1), slope);
    skips.push_back(h);
    h = ad::leaky_relu(conv(h, name + ".b", 2, 1), slope);
  }
  if (cfg.fusion == Fusion::Middle) {
    auto projected = ad::affine(ad::global_avg_pool(h), p("mid.to_latent.w"), p("mid.to_latent.b"));
    auto mixed = mix_channels(projected, z, mixing);
    h = ad::add_channels(h, ad::affine(mixed, p("mid.from_latent.w"), p("mid.from_latent.b")));
  }
  h = channel_attention(h, p, "att_mid", slope);
  for (std::size_t l = cfg.levels; l-- > 0;) {
    h = ad::concat_channels(ad::upsample_nearest(h, 2), skips[l]);
    h = ad::leaky_relu(conv(h, "dec" + std::to_string(l), 1, 1), slope);
  }
  if (cfg.fusion == Fusion::Late) {
    auto projected = ad::affine(ad::global_avg_pool(h), p("late.to_latent.w"), p("late.to_latent.b"));
    auto mixed = mix_channels(projected, z, mixing);
    h = ad::concat_channels(h, tile_latent(mixed, xs[2], xs[3]));
    h = ad::leaky_relu(conv(h, "late.conv", 1, 1), slope);
  }
  h = channel_attention(h, p, "att_out", slope);
  return conv(h, "out", 1, 0);
}

Tensor generator_logits(const ParamSet& params, const Tensor& x, const Tensor& z,
                        const GeneratorConfig& cfg) {
  ad::Tape<float> tape;
  BoundParams<float> bound(tape, params, false);
  return generator_forward(bound, tape.constant(x), tape.constant(z), cfg).value();
}

#define UCSD_INSTANTIATE_GEN(T)                                                                     \
  template void check_schema<T>(const BasicParamSet<T>&, const std::map<std::string, Shape>&,       \
                                const char*);                                                       \
  template ad::Var<T> tile_latent<T>(ad::Var<T>, std::size_t, std::size_t);                         \
  template ad::Var<T> channel_attention<T>(ad::Var<T>, const BoundParams<T>&, const std::string&, T); \
  template ad::Var<T> mix_channels<T>(ad::Var<T>, ad::Var<T>, const Mixing&);                       \
  template ad::Var<T> generator_forward<T>(const BoundParams<T>&, ad::Var<T>, ad::Var<T>,           \
                                           const GeneratorConfig&, const Mixing&);

UCSD_INSTANTIATE_GEN(float)
UCSD_INSTANTIATE_GEN(double)

#undef UCSD_INSTANTIATE_GEN

}  // namespace ucsd
