#include "ucsd/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace ucsd::ad {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

template <class T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (&a.tape() != &b.tape()) shape_fail(op, "operands live on different tapes");
}

template <class T>
void require_rank(const char* op, Var<T> x, std::size_t rank) {
  if (x.shape().size() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

// Unary elementwise op with derivative computed from (input, output).
template <class T, class Fwd, class Deriv>
Var<T> unary(const char* op, Var<T> x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const auto xid = x.id();
  return x.tape().record(op, std::move(out), {x}, [xid, deriv](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    const auto& g = t.grad_of(self);
    const auto& xin = t.value(xid);
    const auto& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xin[i], y[i]);
  });
}

template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((ci * k + ki) * k + kj) * plane;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (ci * h + static_cast<std::size_t>(ih)) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                          ? T{0}
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* dx) {
  const std::size_t plane = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((ci * k + ki) * k + kj) * plane;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = dx + (ci * h + static_cast<std::size_t>(ih)) * w;
          const T* src = row + oh * wo;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) {
              dst[static_cast<std::size_t>(iw)] += src[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Tape

template <class T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, "constant", false});
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::variable(BasicTensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, "variable", true});
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::record(const char* op_name, BasicTensor<T> value,
                       std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  value.require_finite(op_name);
  bool req = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) shape_fail(op_name, "input from a different tape");
    req = req || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, req ? std::move(backward) : BackwardFn{}, op_name, req});
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
T* Tape<T>::grad_accum(std::uint32_t id) {
  auto& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
  return node.grad.data();
}

template <class T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.empty()) return BasicTensor<T>(node.value.shape());
  return BasicTensor<T>(node.value.shape(), node.grad);
}

template <class T>
void Tape<T>::zero_grad() {
  for (auto& node : nodes_) node.grad.clear();
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (nodes_.empty()) throw ValidationError("backward: empty tape");
  if (&loss.tape() != this) throw ValidationError("backward: loss is on another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  zero_grad();
  nodes_[loss.id()].grad.assign(1, T{1});
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (!std::isfinite(node.grad[i])) {
        throw NumericError(std::string("backward: non-finite gradient into op '") + node.op +
                           "' at flat index " + std::to_string(i));
      }
    }
    node.backward(*this, id);
  }
  for (const auto& node : nodes_) {
    for (T g : node.grad) {
      if (!std::isfinite(g)) {
        throw NumericError(std::string("backward: non-finite gradient at node '") + node.op + "'");
      }
    }
  }
}

// ---------------------------------------------------------------- ops

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  constexpr const char* op = "conv2d";
  require_rank(op, x, 4);
  require_rank(op, w, 4);
  require_rank(op, b, 1);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t o = ws[0], k = ws[2];
  if (ws[1] != c) shape_fail(op, "input channels " + std::to_string(c) + " vs kernel " + shape_str(ws));
  if (ws[3] != k || k % 2 == 0) shape_fail(op, "kernel must be square with odd size");
  if (b.shape()[0] != o) shape_fail(op, "bias length mismatch");
  if (stride == 0) shape_fail(op, "stride must be >= 1");
  if (h + 2 * pad < k || wd + 2 * pad < k) shape_fail(op, "kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t ckk = c * k * k;
  const std::size_t plane = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  const bool keep_cols = w.requires_grad() && !pointwise;

  BasicTensor<T> out({n, o, ho, wo});
  AlignedVector<T> saved;
  if (keep_cols) saved.resize(n * ckk * plane);
  AlignedVector<T> scratch(pointwise || keep_cols ? 0 : ckk * plane);

  const ConstMatMap<T> wm(w.value().data().data(), o, ckk);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(b.value().data().data(), o);
  for (std::size_t ni = 0; ni < n; ++ni) {
    const T* xn = x.value().data().data() + ni * c * h * wd;
    const T* cols = xn;
    if (!pointwise) {
      T* dst = keep_cols ? saved.data() + ni * ckk * plane : scratch.data();
      im2col(xn, c, h, wd, k, stride, pad, ho, wo, dst);
      cols = dst;
    }
    MatMap<T> y(out.data().data() + ni * o * plane, o, plane);
    y.noalias() = wm * ConstMatMap<T>(cols, ckk, plane);
    y.colwise() += bias;
  }

  const auto xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape().record(
      op, std::move(out), {x, w, b},
      [=, saved = std::move(saved)](Tape<T>& t, std::uint32_t self) {
        const auto& g = t.grad_of(self);
        T* gx = t.grad_accum(xid);
        T* gw = t.grad_accum(wid);
        T* gb = t.grad_accum(bid);
        const ConstMatMap<T> wmat(t.value(wid).data().data(), o, ckk);
        AlignedVector<T> dcols(gx != nullptr && !pointwise ? ckk * plane : 0);
        AlignedVector<T> cols_tmp;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const ConstMatMap<T> gy(g.data() + ni * o * plane, o, plane);
          if (gb != nullptr) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb, o) += gy.rowwise().sum();
          }
          if (gw != nullptr) {
            const T* cols = nullptr;
            if (pointwise) {
              cols = t.value(xid).data().data() + ni * c * h * wd;
            } else if (!saved.empty()) {
              cols = saved.data() + ni * ckk * plane;
            } else {
              cols_tmp.resize(ckk * plane);
              im2col(t.value(xid).data().data() + ni * c * h * wd, c, h, wd, k, stride, pad, ho,
                     wo, cols_tmp.data());
              cols = cols_tmp.data();
            }
            MatMap<T>(gw, o, ckk).noalias() += gy * ConstMatMap<T>(cols, ckk, plane).transpose();
          }
          if (gx != nullptr) {
            T* gxn = gx + ni * c * h * wd;
            if (pointwise) {
              MatMap<T>(gxn, c, plane).noalias() += wmat.transpose() * gy;
            } else {
              MatMap<T>(dcols.data(), ckk, plane).noalias() = wmat.transpose() * gy;
              col2im(dcols.data(), c, h, wd, k, stride, pad, ho, wo, gxn);
            }
          }
        }
      });
}

template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  constexpr const char* op = "affine";
  require_rank(op, x, 2);
  require_rank(op, w, 2);
  require_rank(op, b, 1);
  const std::size_t n = x.shape()[0], in = x.shape()[1], outd = w.shape()[0];
  if (w.shape()[1] != in) shape_fail(op, shape_str(x.shape()) + " x " + shape_str(w.shape()));
  if (b.shape()[0] != outd) shape_fail(op, "bias length mismatch");
  BasicTensor<T> out({n, outd});
  MatMap<T> y(out.data().data(), n, outd);
  const ConstMatMap<T> xm(x.value().data().data(), n, in);
  const ConstMatMap<T> wm(w.value().data().data(), outd, in);
  y.noalias() = xm * wm.transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data().data(), outd);
  const auto xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape().record(op, std::move(out), {x, w, b}, [=](Tape<T>& t, std::uint32_t self) {
    const ConstMatMap<T> gy(t.grad_of(self).data(), n, outd);
    if (T* gx = t.grad_accum(xid)) {
      MatMap<T>(gx, n, in).noalias() += gy * ConstMatMap<T>(t.value(wid).data().data(), outd, in);
    }
    if (T* gw = t.grad_accum(wid)) {
      MatMap<T>(gw, outd, in).noalias() +=
          gy.transpose() * ConstMatMap<T>(t.value(xid).data().data(), n, in);
    }
    if (T* gb = t.grad_accum(bid)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, outd) += gy.colwise().sum();
    }
  });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) { return logistic(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> exp(Var<T> x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T{1} : T{0}; });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return factor * v; },
                  [factor](T, T) { return factor; });
}

template <class T, class Fwd, class Da, class Db>
Var<T> binary(const char* op, Var<T> a, Var<T> b, Fwd fwd, Da da, Db db) {
  require_same_shape(op, a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    const auto& x = t.value(aid);
    const auto& y = t.value(bid);
    if (T* ga = t.grad_accum(aid)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
    }
    if (T* gb = t.grad_accum(bid)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  const auto xid = x.id();
  return x.tape().record("sum", BasicTensor<T>({1}, std::vector<T>{acc}), {x},
                         [xid](Tape<T>& t, std::uint32_t self) {
                           T* gx = t.grad_accum(xid);
                           if (gx == nullptr) return;
                           const T g = t.grad_of(self)[0];
                           const std::size_t n = t.value(xid).size();
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                         });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  constexpr const char* op = "concat_channels";
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size() || as[0] != bs[0] ||
      !std::equal(as.begin() + 2, as.end(), bs.begin() + 2)) {
    shape_fail(op, shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t n = as[0], ca = as[1], cb = bs[1];
  const std::size_t inner = shape_numel(Shape(as.begin() + 2, as.end()));
  Shape os = as;
  os[1] = ca + cb;
  BasicTensor<T> out(os);
  const T* ap = a.value().data().data();
  const T* bp = b.value().data().data();
  T* op_ = out.data().data();
  for (std::size_t ni = 0; ni < n; ++ni) {
    op_ = std::copy_n(ap + ni * ca * inner, ca * inner, op_);
    op_ = std::copy_n(bp + ni * cb * inner, cb * inner, op_);
  }
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const T* g = t.grad_of(self).data();
    T* ga = t.grad_accum(aid);
    T* gb = t.grad_accum(bid);
    for (std::size_t ni = 0; ni < n; ++ni) {
      const T* gn = g + ni * (ca + cb) * inner;
      if (ga != nullptr) {
        for (std::size_t i = 0; i < ca * inner; ++i) ga[ni * ca * inner + i] += gn[i];
      }
      if (gb != nullptr) {
        for (std::size_t i = 0; i < cb * inner; ++i) gb[ni * cb * inner + i] += gn[ca * inner + i];
      }
    }
  });
}

template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  constexpr const char* op = "slice_channels";
  const Shape xs = x.shape();
  if (xs.size() < 2 || begin >= end || end > xs[1]) {
    shape_fail(op, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                       shape_str(xs));
  }
  const std::size_t n = xs[0], c = xs[1], sc = end - begin;
  const std::size_t inner = shape_numel(Shape(xs.begin() + 2, xs.end()));
  Shape os = xs;
  os[1] = sc;
  BasicTensor<T> out(os);
  const T* src = x.value().data().data();
  for (std::size_t ni = 0; ni < n; ++ni) {
    std::copy_n(src + (ni * c + begin) * inner, sc * inner, out.data().data() + ni * sc * inner);
  }
  const auto xid = x.id();
  return x.tape().record(op, std::move(out), {x}, [=](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    const T* g = t.grad_of(self).data();
    for (std::size_t ni = 0; ni < n; ++ni) {
      T* dst = gx + (ni * c + begin) * inner;
      for (std::size_t i = 0; i < sc * inner; ++i) dst[i] += g[ni * sc * inner + i];
    }
  });
}

template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  constexpr const char* op = "upsample_nearest";
  require_rank(op, x, 4);
  if (factor == 0) shape_fail(op, "factor must be >= 1");
  const Shape xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t ho = h * factor, wo = w * factor;
  BasicTensor<T> out({xs[0], xs[1], ho, wo});
  const T* src = x.value().data().data();
  T* dst = out.data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        dst[(p * ho + i) * wo + j] = src[(p * h + i / factor) * w + j / factor];
      }
    }
  }
  const auto xid = x.id();
  return x.tape().record(op, std::move(out), {x}, [=](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    const T* g = t.grad_of(self).data();
    for (std::size_t p = 0; p < nc; ++p) {
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          gx[(p * h + i / factor) * w + j / factor] += g[(p * ho + i) * wo + j];
        }
      }
    }
  });
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  constexpr const char* op = "global_avg_pool";
  require_rank(op, x, 4);
  const Shape xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], hw = xs[2] * xs[3];
  BasicTensor<T> out({xs[0], xs[1]});
  const T* src = x.value().data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    T acc{0};
    for (std::size_t i = 0; i < hw; ++i) acc += src[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  const auto xid = x.id();
  return x.tape().record(op, std::move(out), {x}, [=](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    const auto& g = t.grad_of(self);
    for (std::size_t p = 0; p < nc; ++p) {
      const T gv = g[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += gv;
    }
  });
}

template <class T>
void box_mean_plane(const T* in, T* out, std::size_t h, std::size_t w, std::size_t radius) {
  // Summed-area table with a zero border; window clipped to the image, so
  // out-of-image pixels contribute zero while the divisor stays (2r+1)².
  std::vector<T> sat((h + 1) * (w + 1), T{0});
  for (std::size_t i = 0; i < h; ++i) {
    T row{0};
    for (std::size_t j = 0; j < w; ++j) {
      row += in[i * w + j];
      sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + row;
    }
  }
  const T inv = T{1} / static_cast<T>((2 * radius + 1) * (2 * radius + 1));
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t i0 = i >= radius ? i - radius : 0;
    const std::size_t i1 = std::min(h, i + radius + 1);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t j0 = j >= radius ? j - radius : 0;
      const std::size_t j1 = std::min(w, j + radius + 1);
      const T s = sat[i1 * (w + 1) + j1] - sat[i0 * (w + 1) + j1] - sat[i1 * (w + 1) + j0] +
                  sat[i0 * (w + 1) + j0];
      out[i * w + j] = s * inv;
    }
  }
}

template <class T>
Var<T> box_mean(Var<T> x, std::size_t radius) {
  constexpr const char* op = "box_mean";
  require_rank(op, x, 4);
  const Shape xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3];
  BasicTensor<T> out(xs);
  for (std::size_t p = 0; p < nc; ++p) {
    box_mean_plane(x.value().data().data() + p * h * w, out.data().data() + p * h * w, h, w, radius);
  }
  const auto xid = x.id();
  return x.tape().record(op, std::move(out), {x}, [=](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    // The zero-padded box filter is symmetric, so its adjoint is itself.
    std::vector<T> plane(h * w);
    const T* g = t.grad_of(self).data();
    for (std::size_t p = 0; p < nc; ++p) {
      box_mean_plane(g + p * h * w, plane.data(), h, w, radius);
      for (std::size_t i = 0; i < h * w; ++i) gx[p * h * w + i] += plane[i];
    }
  });
}

template <class T>
Var<T> tile_spatial(Var<T> z, std::size_t height, std::size_t width) {
  constexpr const char* op = "tile_spatial";
  require_rank(op, z, 2);
  if (height == 0 || width == 0) shape_fail(op, "spatial size must be >= 1");
  const std::size_t n = z.shape()[0], k = z.shape()[1], hw = height * width;
  BasicTensor<T> out({n, k, height, width});
  for (std::size_t p = 0; p < n * k; ++p) {
    std::fill_n(out.data().data() + p * hw, hw, z.value()[p]);
  }
  const auto zid = z.id();
  return z.tape().record(op, std::move(out), {z}, [=](Tape<T>& t, std::uint32_t self) {
    T* gz = t.grad_accum(zid);
    if (gz == nullptr) return;
    const T* g = t.grad_of(self).data();
    for (std::size_t p = 0; p < n * k; ++p) {
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) acc += g[p * hw + i];
      gz[p] += acc;
    }
  });
}

template <class T>
Var<T> scale_channels(Var<T> feat, Var<T> gate) {
  constexpr const char* op = "scale_channels";
  require_rank(op, feat, 4);
  require_rank(op, gate, 2);
  const Shape fs = feat.shape();
  if (gate.shape()[0] != fs[0] || gate.shape()[1] != fs[1]) {
    shape_fail(op, shape_str(fs) + " with gate " + shape_str(gate.shape()));
  }
  const std::size_t nc = fs[0] * fs[1], hw = fs[2] * fs[3];
  BasicTensor<T> out(fs);
  const T* f = feat.value().data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    const T s = gate.value()[p];
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = f[p * hw + i] * s;
  }
  const auto fid = feat.id(), gid = gate.id();
  return feat.tape().record(op, std::move(out), {feat, gate}, [=](Tape<T>& t, std::uint32_t self) {
    const T* g = t.grad_of(self).data();
    const T* fv = t.value(fid).data().data();
    const auto& gv = t.value(gid);
    if (T* gf = t.grad_accum(fid)) {
      for (std::size_t p = 0; p < nc; ++p) {
        for (std::size_t i = 0; i < hw; ++i) gf[p * hw + i] += g[p * hw + i] * gv[p];
      }
    }
    if (T* gg = t.grad_accum(gid)) {
      for (std::size_t p = 0; p < nc; ++p) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += g[p * hw + i] * fv[p * hw + i];
        gg[p] += acc;
      }
    }
  });
}

template <class T>
Var<T> add_channels(Var<T> feat, Var<T> v) {
  constexpr const char* op = "add_channels";
  require_rank(op, feat, 4);
  require_rank(op, v, 2);
  const Shape fs = feat.shape();
  if (v.shape()[0] != fs[0] || v.shape()[1] != fs[1]) {
    shape_fail(op, shape_str(fs) + " with " + shape_str(v.shape()));
  }
  const std::size_t nc = fs[0] * fs[1], hw = fs[2] * fs[3];
  BasicTensor<T> out(fs);
  const T* f = feat.value().data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = f[p * hw + i] + v.value()[p];
  }
  const auto fid = feat.id(), vid = v.id();
  return feat.tape().record(op, std::move(out), {feat, v}, [=](Tape<T>& t, std::uint32_t self) {
    const T* g = t.grad_of(self).data();
    if (T* gf = t.grad_accum(fid)) {
      for (std::size_t i = 0; i < nc * hw; ++i) gf[i] += g[i];
    }
    if (T* gv = t.grad_accum(vid)) {
      for (std::size_t p = 0; p < nc; ++p) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += g[p * hw + i];
        gv[p] += acc;
      }
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto out = x.value().reshaped(std::move(shape));
  const auto xid = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [xid](Tape<T>& t, std::uint32_t self) {
    T* gx = t.grad_accum(xid);
    if (gx == nullptr) return;
    const auto& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

#define UCSD_INSTANTIATE_AD(T)                                                              \
  template class Tape<T>;                                                                   \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);              \
  template Var<T> affine<T>(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> leaky_relu<T>(Var<T>, T);                                                 \
  template Var<T> sigmoid<T>(Var<T>);                                                       \
  template Var<T> exp<T>(Var<T>);                                                           \
  template Var<T> clamp<T>(Var<T>, T, T);                                                   \
  template Var<T> add<T>(Var<T>, Var<T>);                                                   \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                   \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                   \
  template Var<T> scale<T>(Var<T>, T);                                                      \
  template Var<T> sum<T>(Var<T>);                                                           \
  template Var<T> mean<T>(Var<T>);                                                          \
  template Var<T> concat_channels<T>(Var<T>, Var<T>);                                       \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> upsample_nearest<T>(Var<T>, std::size_t);                                 \
  template Var<T> global_avg_pool<T>(Var<T>);                                               \
  template Var<T> box_mean<T>(Var<T>, std::size_t);                                         \
  template Var<T> tile_spatial<T>(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> scale_channels<T>(Var<T>, Var<T>);                                        \
  template Var<T> add_channels<T>(Var<T>, Var<T>);                                          \
  template Var<T> reshape<T>(Var<T>, Shape);                                                \
  template void box_mean_plane<T>(const T*, T*, std::size_t, std::size_t, std::size_t);

UCSD_INSTANTIATE_AD(float)
UCSD_INSTANTIATE_AD(double)

#undef UCSD_INSTANTIATE_AD

}  // namespace ucsd::ad
