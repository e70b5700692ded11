#include "ucsd/losses.hpp"

#include <cmath>

namespace ucsd {

void LossConfig::validate() const {
  if (!(lambda_smooth >= 0.0) || !(smooth_alpha > 0.0) || boundary_radius == 0 ||
      !(boundary_amp > 0.0) || !(psi_eps > 0.0)) {
    throw ValidationError("loss config: weights must be positive");
  }
}

double rgb_to_linear(double c) {
  if (!(c >= 0.0 && c <= 1.0)) {
    throw ValidationError("rgb_to_linear: channel value " + std::to_string(c) + " outside [0,1]");
  }
  if (c <= 0.04045) return c / 12.92;
  return std::pow((c + 0.055) / 1.055, 2.4);
}

template <class T>
BasicTensor<T> rgb_to_gray(const BasicTensor<T>& rgb) {
  constexpr double kR = 0.2126, kG = 0.7152, kB = 0.0722;
  std::size_t n = 1, c = 0, h = 0, w = 0;
  Shape out_shape;
  if (rgb.rank() == 3) {
    c = rgb.dim(0), h = rgb.dim(1), w = rgb.dim(2);
    out_shape = {h, w};
  } else if (rgb.rank() == 4) {
    n = rgb.dim(0), c = rgb.dim(1), h = rgb.dim(2), w = rgb.dim(3);
    out_shape = {n, 1, h, w};
  } else {
    throw ShapeError("rgb_to_gray: expected 3xHxW or NxCxHxW, got " + shape_str(rgb.shape()));
  }
  if (c < 3) throw ShapeError("rgb_to_gray: need at least three channels");
  BasicTensor<T> out(out_shape);
  const std::size_t hw = h * w;
  for (std::size_t ni = 0; ni < n; ++ni) {
    const T* base = rgb.data().data() + ni * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = kR * rgb_to_linear(base[i]) + kG * rgb_to_linear(base[hw + i]) +
                       kB * rgb_to_linear(base[2 * hw + i]);
      out[ni * hw + i] = static_cast<T>(v);
    }
  }
  return out;
}

template <class T>
BasicTensor<T> boundary_weight(const BasicTensor<T>& gt, const LossConfig& cfg) {
  std::size_t planes = 1, h = 0, w = 0;
  if (gt.rank() == 2) {
    h = gt.dim(0), w = gt.dim(1);
  } else if (gt.rank() == 4 && gt.dim(1) == 1) {
    planes = gt.dim(0), h = gt.dim(2), w = gt.dim(3);
  } else {
    throw ShapeError("boundary_weight: expected HxW or Nx1xHxW, got " + shape_str(gt.shape()));
  }
  for (T v : gt.data()) {
    if (v != T{0} && v != T{1}) throw ValidationError("boundary_weight: ground truth is not binary");
  }
  BasicTensor<T> out(gt.shape());
  std::vector<T> box(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = gt.data().data() + p * h * w;
    ad::box_mean_plane(g, box.data(), h, w, cfg.boundary_radius);
    for (std::size_t i = 0; i < h * w; ++i) {
      out[p * h * w + i] = static_cast<T>(1.0 + cfg.boundary_amp * std::abs(box[i] - g[i]));
    }
  }
  return out;
}

template <class T>
ad::Var<T> smoothness_loss(ad::Var<T> pred, const BasicTensor<T>& gray, const LossConfig& cfg) {
  const Shape ps = pred.shape();
  if (ps.size() != 4 || ps[1] != 1 || gray.shape() != ps) {
    throw ShapeError("smoothness_loss: prediction " + shape_str(ps) + " vs intensity " +
                     shape_str(gray.shape()));
  }
  const std::size_t n = ps[0], h = ps[2], w = ps[3];
  const T eps = static_cast<T>(cfg.psi_eps);
  // Edge weights exp(-α|∂Ig|) for x (horizontal) and y (vertical), zero at
  // the last column/row where the derivative is defined as zero.
  std::vector<T> ex(n * h * w, T{0}), ey(n * h * w, T{0});
  for (std::size_t ni = 0; ni < n; ++ni) {
    const T* ig = gray.data().data() + ni * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t idx = ni * h * w + i * w + j;
        if (j + 1 < w) {
          ex[idx] = static_cast<T>(std::exp(-cfg.smooth_alpha * std::abs(ig[i * w + j + 1] - ig[i * w + j])));
        }
        if (i + 1 < h) {
          ey[idx] = static_cast<T>(std::exp(-cfg.smooth_alpha * std::abs(ig[(i + 1) * w + j] - ig[i * w + j])));
        }
      }
    }
  }
  const T* p = pred.value().data().data();
  // Accumulate in double so the constant-map case is exact to rounding.
  double total = 0.0;
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t idx = ni * h * w + i * w + j;
        const T dx = j + 1 < w ? (p[idx + 1] - p[idx]) * ex[idx] : T{0};
        const T dy = i + 1 < h ? (p[idx + w] - p[idx]) * ey[idx] : T{0};
        total += std::sqrt(static_cast<double>(dx) * dx + cfg.psi_eps);
        total += std::sqrt(static_cast<double>(dy) * dy + cfg.psi_eps);
      }
    }
  }
  const T value = static_cast<T>(total / static_cast<double>(n));
  const auto pid = pred.id();
  return pred.tape().record(
      "smoothness_loss", BasicTensor<T>({1}, std::vector<T>{value}), {pred},
      [=, ex = std::move(ex), ey = std::move(ey)](ad::Tape<T>& t, std::uint32_t self) {
        T* gp = t.grad_accum(pid);
        if (gp == nullptr) return;
        const T g = t.grad_of(self)[0] / static_cast<T>(n);
        const T* pv = t.value(pid).data().data();
        for (std::size_t ni = 0; ni < n; ++ni) {
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t idx = ni * h * w + i * w + j;
              if (j + 1 < w) {
                const T a = (pv[idx + 1] - pv[idx]) * ex[idx];
                const T d = g * a * ex[idx] / std::sqrt(a * a + eps);
                gp[idx + 1] += d;
                gp[idx] -= d;
              }
              if (i + 1 < h) {
                const T a = (pv[idx + w] - pv[idx]) * ey[idx];
                const T d = g * a * ey[idx] / std::sqrt(a * a + eps);
                gp[idx + w] += d;
                gp[idx] -= d;
              }
            }
          }
        }
      });
}

template <class T>
ad::Var<T> structure_aware_loss(ad::Var<T> logits, const BasicTensor<T>& gt,
                                const BasicTensor<T>& weights) {
  const Shape ls = logits.shape();
  if (ls.size() != 4 || ls[1] != 1 || gt.shape() != ls || weights.shape() != ls) {
    throw ShapeError("structure_aware_loss: logits " + shape_str(ls) + ", gt " +
                     shape_str(gt.shape()) + ", weights " + shape_str(weights.shape()));
  }
  for (T v : gt.data()) {
    if (v != T{0} && v != T{1}) throw ValidationError("structure_aware_loss: gt is not binary");
  }
  const std::size_t n = ls[0], hw = ls[2] * ls[3];
  const T* x = logits.value().data().data();
  std::vector<T> prob(n * hw);
  // Per sample: Σw, intersection I, union U.
  std::vector<double> wsum(n), inter(n), uni(n);
  double total = 0.0;
  for (std::size_t ni = 0; ni < n; ++ni) {
    double bce = 0.0, ws = 0.0, in = 1.0, un = 1.0;
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t idx = ni * hw + i;
      const double xv = x[idx], gv = gt[idx], wv = weights[idx];
      const double pv = xv >= 0 ? 1.0 / (1.0 + std::exp(-xv)) : std::exp(xv) / (1.0 + std::exp(xv));
      prob[idx] = static_cast<T>(pv);
      bce += wv * (std::max(xv, 0.0) - xv * gv + std::log1p(std::exp(-std::abs(xv))));
      ws += wv;
      in += wv * pv * gv;
      un += wv * (pv + gv - pv * gv);
    }
    wsum[ni] = ws;
    inter[ni] = in;
    uni[ni] = un;
    total += bce / ws + (1.0 - in / un);
  }
  const T value = static_cast<T>(total / static_cast<double>(n));
  const auto lid = logits.id();
  return logits.tape().record(
      "structure_aware_loss", BasicTensor<T>({1}, std::vector<T>{value}), {logits},
      [=, prob = std::move(prob), wsum = std::move(wsum), inter = std::move(inter),
       uni = std::move(uni)](ad::Tape<T>& t, std::uint32_t self) {
        T* gx = t.grad_accum(lid);
        if (gx == nullptr) return;
        const double g = static_cast<double>(t.grad_of(self)[0]) / static_cast<double>(n);
        for (std::size_t ni = 0; ni < n; ++ni) {
          const double u = uni[ni], in = inter[ni];
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = ni * hw + i;
            const double pv = prob[idx], gv = gt[idx], wv = weights[idx];
            const double d_bce = wv * (pv - gv) / wsum[ni];
            const double d_iou_dp = -wv * (gv * u - in * (1.0 - gv)) / (u * u);
            gx[idx] += static_cast<T>(g * (d_bce + d_iou_dp * pv * (1.0 - pv)));
          }
        }
      });
}

template <class T>
ad::Var<T> structure_aware_loss(ad::Var<T> logits, const BasicTensor<T>& gt, const LossConfig& cfg) {
  return structure_aware_loss(logits, gt, boundary_weight(gt, cfg));
}

template <class T>
ad::Var<T> total_loss(Objective, ad::Var<T> base, ad::Var<T> smooth, double lambda) {
  return ad::add(base, ad::scale(smooth, static_cast<T>(lambda)));
}

double total_loss(Objective, double base, double smooth, double lambda) { return base + lambda * smooth; }

#define UCSD_INSTANTIATE_LOSSES(T)                                                            \
  template BasicTensor<T> rgb_to_gray<T>(const BasicTensor<T>&);                              \
  template BasicTensor<T> boundary_weight<T>(const BasicTensor<T>&, const LossConfig&);       \
  template ad::Var<T> smoothness_loss<T>(ad::Var<T>, const BasicTensor<T>&, const LossConfig&); \
  template ad::Var<T> structure_aware_loss<T>(ad::Var<T>, const BasicTensor<T>&,              \
                                              const BasicTensor<T>&);                         \
  template ad::Var<T> structure_aware_loss<T>(ad::Var<T>, const BasicTensor<T>&,              \
                                              const LossConfig&);                             \
  template ad::Var<T> total_loss<T>(Objective, ad::Var<T>, ad::Var<T>, double);

UCSD_INSTANTIATE_LOSSES(float)
UCSD_INSTANTIATE_LOSSES(double)

#undef UCSD_INSTANTIATE_LOSSES

}  // namespace ucsd
