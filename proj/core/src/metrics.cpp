#include "ucsd/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ucsd {

namespace {

constexpr double kEps = 2.220446049250313e-16;

double threshold(std::size_t i) { return static_cast<double>(i) / 255.0; }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n − 1 denominator, 0 for a single value).
double std_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double x = mean_of(values);
  const double sigma = std_of(values, x);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

struct Region {
  std::vector<double> pred, gt;
};

double region_ssim(const Region& r) {
  const std::size_t n = r.pred.size();
  if (n == 0) return 0.0;
  const double x = mean_of(r.pred), y = mean_of(r.gt);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (r.pred[i] - x) * (r.pred[i] - x);
    syy += (r.gt[i] - y) * (r.gt[i] - y);
    sxy += (r.pred[i] - x) * (r.gt[i] - y);
  }
  const double denom = static_cast<double>(std::max<std::size_t>(n, 2) - 1);
  sxx /= denom, syy /= denom, sxy /= denom;
  const double a = 4.0 * x * y * sxy;
  const double b = (x * x + y * y) * (sxx + syy);
  if (a != 0.0) return a / (b + kEps);
  if (b == 0.0) return 1.0;
  return 0.0;
}

double gt_mean(const Map& gt) {
  double s = 0.0;
  for (double v : gt.data()) s += v;
  return s / static_cast<double>(gt.size());
}

}  // namespace

void check_pair(const Map& pred, const Map& gt) {
  if (pred.rank() != 2 || pred.shape() != gt.shape()) {
    throw ShapeError("metrics: prediction " + shape_str(pred.shape()) + " vs gt " + shape_str(gt.shape()));
  }
  for (double v : gt.data()) {
    if (v != 0.0 && v != 1.0) throw ValidationError("metrics: gt is not binary");
  }
  for (double v : pred.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("metrics: prediction outside [0,1]");
  }
}

double mae(const Map& pred, const Map& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("mae: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

double f_measure_at(const Map& pred, const Map& gt, double tau, double beta2) {
  check_pair(pred, gt);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= tau, g = gt[i] == 1.0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  const double denom = beta2 * prec + rec;
  return denom > 0 ? (1.0 + beta2) * prec * rec / denom : 0.0;
}

Curve f_curve(const Map& pred, const Map& gt) {
  Curve c{};
  for (std::size_t i = 0; i < kCurvePoints; ++i) c[i] = f_measure_at(pred, gt, threshold(i));
  return c;
}

double mean_f(const Map& pred, const Map& gt) {
  const Curve c = f_curve(pred, gt);
  double s = 0.0;
  for (double v : c) s += v;
  return s / static_cast<double>(kCurvePoints);
}

double s_object(const Map& pred, const Map& gt) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] == 1.0) {
      fg.push_back(pred[i]);
    } else {
      bg.push_back(1.0 - pred[i]);
    }
  }
  const double u = gt_mean(gt);
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double s_region(const Map& pred, const Map& gt) {
  const std::size_t h = gt.dim(0), w = gt.dim(1);
  double total = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (gt[i * w + j] == 1.0) {
        total += 1;
        sx += static_cast<double>(j + 1);
        sy += static_cast<double>(i + 1);
      }
    }
  }
  // Centroid as a 1-based split index: the first cx columns and cy rows form
  // the left and top regions.
  std::size_t cx = w / 2, cy = h / 2;
  if (total > 0) {
    cx = static_cast<std::size_t>(std::lround(sx / total));
    cy = static_cast<std::size_t>(std::lround(sy / total));
  }
  Region regions[4];
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t r = (i < cy ? 0 : 2) + (j < cx ? 0 : 1);
      regions[r].pred.push_back(pred[i * w + j]);
      regions[r].gt.push_back(gt[i * w + j]);
    }
  }
  const double area = static_cast<double>(h * w);
  double q = 0.0;
  for (const auto& r : regions) q += static_cast<double>(r.pred.size()) / area * region_ssim(r);
  return q;
}

double s_measure(const Map& pred, const Map& gt, double alpha) {
  check_pair(pred, gt);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("s_measure: alpha outside [0,1]");
  const double y = gt_mean(gt);
  double pm = 0.0;
  for (double v : pred.data()) pm += v;
  pm /= static_cast<double>(pred.size());
  if (y == 0.0) return 1.0 - pm;
  if (y == 1.0) return pm;
  const double q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
  return std::clamp(q, 0.0, 1.0);
}

double e_measure_binary(const Map& binary, const Map& gt) {
  const double mg = gt_mean(gt);
  double mp = 0.0;
  for (double v : binary.data()) mp += v;
  mp /= static_cast<double>(binary.size());
  if (mg == 0.0 || mg == 1.0) return 1.0 - std::abs(mp - mg);
  double s = 0.0;
  for (std::size_t i = 0; i < binary.size(); ++i) {
    const double a = gt[i] - mg, b = binary[i] - mp;
    const double xi = 2.0 * a * b / (a * a + b * b + kEps);
    s += (1.0 + xi) * (1.0 + xi) / 4.0;
  }
  return s / static_cast<double>(binary.size());
}

double e_measure_at(const Map& pred, const Map& gt, double tau) {
  check_pair(pred, gt);
  Map b(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) b[i] = pred[i] >= tau ? 1.0 : 0.0;
  return e_measure_binary(b, gt);
}

Curve e_curve(const Map& pred, const Map& gt) {
  Curve c{};
  for (std::size_t i = 0; i < kCurvePoints; ++i) c[i] = e_measure_at(pred, gt, threshold(i));
  return c;
}

double mean_e(const Map& pred, const Map& gt) {
  const Curve c = e_curve(pred, gt);
  double s = 0.0;
  for (double v : c) s += v;
  return s / static_cast<double>(kCurvePoints);
}

MetricReport evaluate_pair(const Map& pred, const Map& gt) {
  check_pair(pred, gt);
  MetricReport r;
  r.mae = mae(pred, gt);
  r.f_curve = f_curve(pred, gt);
  r.e_curve = e_curve(pred, gt);
  for (std::size_t i = 0; i < kCurvePoints; ++i) {
    r.mean_f += r.f_curve[i];
    r.mean_e += r.e_curve[i];
  }
  r.mean_f /= static_cast<double>(kCurvePoints);
  r.mean_e /= static_cast<double>(kCurvePoints);
  r.s_measure = s_measure(pred, gt);
  r.count = 1;
  return r;
}

MetricReport evaluate_dataset(const std::vector<Map>& preds, const std::vector<Map>& gts) {
  if (preds.empty()) throw ValidationError("evaluate_dataset: no images");
  if (preds.size() != gts.size()) {
    throw ValidationError("evaluate_dataset: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(gts.size()) + " ground truths");
  }
  MetricReport out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const MetricReport r = evaluate_pair(preds[i], gts[i]);
    out.mae += r.mae;
    out.mean_f += r.mean_f;
    out.mean_e += r.mean_e;
    out.s_measure += r.s_measure;
    for (std::size_t t = 0; t < kCurvePoints; ++t) {
      out.f_curve[t] += r.f_curve[t];
      out.e_curve[t] += r.e_curve[t];
    }
  }
  const double n = static_cast<double>(preds.size());
  out.mae /= n, out.mean_f /= n, out.mean_e /= n, out.s_measure /= n;
  for (std::size_t t = 0; t < kCurvePoints; ++t) {
    out.f_curve[t] /= n;
    out.e_curve[t] /= n;
  }
  out.count = preds.size();
  return out;
}

}  // namespace ucsd
