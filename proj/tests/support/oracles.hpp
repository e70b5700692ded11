#pragma once
// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "ucsd/autodiff.hpp"
#include "ucsd/consensus.hpp"
#include "ucsd/rng.hpp"

namespace oracle {

using ucsd::TensorD;
using Var = ucsd::ad::Var<double>;
using Tape = ucsd::ad::Tape<double>;
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline TensorD random_tensor(const ucsd::Shape& shape, ucsd::RngStream& rng, double lo = -2.0, double hi = 2.0) {
  TensorD t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Pushes values at least `gap` away from zero, so kinks (leaky relu, |x|)
// are not straddled by the finite-difference stencil.
inline void avoid_zero(TensorD& t, double gap) {
  for (auto& v : t.data()) {
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  }
}

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Compares tape gradients with central differences for the listed inputs.
// coords[i] empty means every coordinate of input i; inputs with
// check[i] = false are fed as constants.
inline GradCheck gradcheck(const LossFn& f, const std::vector<TensorD>& inputs, double h = 1e-5,
                           const std::vector<std::vector<std::size_t>>& coords = {},
                           const std::vector<bool>& check = {}) {
  const auto eval = [&](const std::vector<TensorD>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : in) vars.push_back(tape.constant(t));
    return f(tape, vars).value()[0];
  };
  Tape tape;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool on = check.empty() || check[i];
    vars.push_back(on ? tape.variable(inputs[i]) : tape.constant(inputs[i]));
  }
  auto loss = f(tape, vars);
  tape.backward(loss);
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!check.empty() && !check[i]) continue;
    const TensorD g = tape.grad(vars[i]);
    std::vector<std::size_t> idx;
    if (i < coords.size() && !coords[i].empty()) {
      idx = coords[i];
    } else {
      for (std::size_t k = 0; k < inputs[i].size(); ++k) idx.push_back(k);
    }
    for (std::size_t k : idx) {
      auto plus = inputs, minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      out.max_rel_error = std::max(out.max_rel_error, rel_error(g[k], fd));
      ++out.checked;
    }
  }
  return out;
}

// Direct nested-loop convolution, NCHW, zero padding.
inline TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  TensorD y({n, o, oh, ow});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oi = 0; oi < o; ++oi)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = b[oi];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                s += x.at(ni, ci, yy, xx) * w.at(oi, ci, u, v);
              }
          y.at(ni, oi, i, j) = s;
        }
  return y;
}

// Zero-padded window mean with divisor (2r+1)².
inline std::vector<double> box_mean(const std::vector<double>& in, std::size_t h, std::size_t w, std::size_t r) {
  std::vector<double> out(h * w);
  const long R = static_cast<long>(r);
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j) {
      double s = 0;
      for (long u = i - R; u <= i + R; ++u)
        for (long v = j - R; v <= j + R; ++v)
          if (u >= 0 && v >= 0 && u < static_cast<long>(h) && v < static_cast<long>(w)) s += in[u * w + v];
      out[i * w + j] = s / static_cast<double>((2 * r + 1) * (2 * r + 1));
    }
  return out;
}

// Per-pixel vote and agreeing-gray average written out longhand.
struct ConsensusPixel {
  double majority = 0, gray = 0;
};

inline ConsensusPixel consensus_pixel(const std::vector<double>& grays, const std::vector<double>& taus) {
  const std::size_t c = grays.size();
  std::vector<int> bin(c);
  double frac = 0;
  for (std::size_t k = 0; k < c; ++k) {
    bin[k] = grays[k] >= taus[k] ? 1 : 0;
    frac += bin[k];
  }
  frac /= static_cast<double>(c);
  ConsensusPixel p;
  p.majority = frac >= 0.5 ? 1.0 : 0.0;
  double num = 0, den = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (bin[k] == static_cast<int>(p.majority)) {
      num += grays[k];
      den += 1;
    }
  }
  p.gray = num / den;
  return p;
}

inline double threshold_of(const ucsd::Map& m) {
  double s = 0;
  for (double v : m.data()) s += v;
  return std::clamp(2.0 * s / static_cast<double>(m.size()), 1e-6, 1.0 - 1e-6);
}

// Posterior of z ~ N(0, I), y = A z + b + σ ε.
struct LinearPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline LinearPosterior linear_posterior(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& y,
                                        double sigma) {
  const Eigen::MatrixXd prec = a.transpose() * a / (sigma * sigma) +
                               Eigen::MatrixXd::Identity(a.cols(), a.cols());
  LinearPosterior p;
  p.cov = prec.inverse();
  p.mean = p.cov * a.transpose() * (y - b) / (sigma * sigma);
  return p;
}

// Effective sample size of a scalar chain via initial positive autocorrelations.
inline double effective_samples(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var == 0) return static_cast<double>(n);
  double tau = 1.0;
  for (std::size_t lag = 1; lag < n / 2; ++lag) {
    double c = 0;
    for (std::size_t i = 0; i + lag < n; ++i) c += (x[i] - mean) * (x[i + lag] - mean);
    c /= static_cast<double>(n) * var;
    if (c <= 0) break;
    tau += 2 * c;
  }
  return static_cast<double>(n) / tau;
}

}  // namespace oracle
