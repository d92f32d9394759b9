#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlf {

using Labels = std::vector<std::uint8_t>;

inline void require_valid_labels(const Labels& labels, int classes) {
  for (auto v : labels)
    if (v >= classes) throw std::invalid_argument("label value out of class range");
}

// Intersection over union for one class; an empty union counts as 1.
inline double iou(const Labels& pred, const Labels& gt, int cls, int classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("iou: size mismatch");
  require_valid_labels(pred, classes);
  require_valid_labels(gt, classes);
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, g = gt[i] == cls;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double pixel_accuracy(const Labels& pred, const Labels& gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw std::invalid_argument("pixel_accuracy: empty or mismatched inputs");
  long long match = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) match += pred[i] == gt[i];
  return static_cast<double>(match) / static_cast<double>(pred.size());
}

// 100 * sum|p - g| / sum g; requires a positive ground-truth mean.
inline double nmae(const std::vector<double>& preds, const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("nmae: empty or mismatched inputs");
  double abs_err = 0.0, gt_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    abs_err += std::fabs(preds[i] - gts[i]);
    gt_sum += gts[i];
  }
  if (gt_sum <= 0.0) throw std::invalid_argument("nmae: ground-truth mean must be positive");
  return 100.0 * abs_err / gt_sum;
}

// Count-and-sum accumulator; merging is order-free, so shards can be
// reduced in any grouping.
struct MetricsAccumulator {
  int classes = 0;
  std::vector<long long> inter, uni;
  long long correct = 0, pixels = 0;
  double abs_err = 0.0, gt_sum = 0.0;
  long long samples = 0;

  explicit MetricsAccumulator(int c = 4)
      : classes(c),
        inter(static_cast<std::size_t>(c), 0),
        uni(static_cast<std::size_t>(c), 0) {}

  void add_mask(const Labels& pred, const Labels& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("metrics: mask size mismatch");
    require_valid_labels(pred, classes);
    require_valid_labels(gt, classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == gt[i];
      for (int k = 0; k < classes; ++k) {
        const bool p = pred[i] == k, g = gt[i] == k;
        inter[static_cast<std::size_t>(k)] += p && g;
        uni[static_cast<std::size_t>(k)] += p || g;
      }
    }
    pixels += static_cast<long long>(pred.size());
    ++samples;
  }

  void add_measure(double pred, double gt) {
    abs_err += std::fabs(pred - gt);
    gt_sum += gt;
  }

  void merge(const MetricsAccumulator& o) {
    for (int k = 0; k < classes; ++k) {
      inter[static_cast<std::size_t>(k)] += o.inter[static_cast<std::size_t>(k)];
      uni[static_cast<std::size_t>(k)] += o.uni[static_cast<std::size_t>(k)];
    }
    correct += o.correct;
    pixels += o.pixels;
    abs_err += o.abs_err;
    gt_sum += o.gt_sum;
    samples += o.samples;
  }

  double iou_of(int k) const {
    return uni[static_cast<std::size_t>(k)] == 0
               ? 1.0
               : static_cast<double>(inter[static_cast<std::size_t>(k)]) /
                     static_cast<double>(uni[static_cast<std::size_t>(k)]);
  }
  double accuracy() const {
    if (pixels == 0) throw std::invalid_argument("metrics: empty evaluation set");
    return static_cast<double>(correct) / static_cast<double>(pixels);
  }
  double nmae_pct() const {
    if (gt_sum <= 0.0) throw std::invalid_argument("nmae: ground-truth mean must be positive");
    return 100.0 * abs_err / gt_sum;
  }
};

struct MetricsRow {
  int horizon_min = 0;
  std::vector<double> iou;  // per class
  double accuracy = 0.0;
  double nmae_pct = 0.0;
  long long samples = 0;
};

struct MetricsReport {
  int classes = 4;
  std::vector<MetricsRow> rows;

  void add(int horizon_min, const MetricsAccumulator& acc) {
    MetricsRow row;
    row.horizon_min = horizon_min;
    for (int k = 0; k < acc.classes; ++k) row.iou.push_back(acc.iou_of(k));
    row.accuracy = acc.accuracy();
    row.nmae_pct = acc.nmae_pct();
    row.samples = acc.samples;
    rows.push_back(std::move(row));
  }

  // One CSV row per horizon. With the standard four classes the IoU columns
  // are ordered cloud, sky, sun, tracker.
  void to_csv(std::ostream& os) const {
    char buf[64];
    if (classes == 4) {
      os << "horizon_min,iou_cloud,iou_sky,iou_sun,iou_tracker,accuracy,nmae_pct\n";
    } else {
      os << "horizon_min";
      for (int k = 0; k < classes; ++k) os << ",iou_class" << k;
      os << ",accuracy,nmae_pct\n";
    }
    for (const auto& row : rows) {
      os << row.horizon_min;
      auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        os << ',' << buf;
      };
      if (classes == 4) {
        emit(row.iou[1]);  // cloud
        emit(row.iou[0]);  // sky
        emit(row.iou[2]);  // sun
        emit(row.iou[3]);  // tracker
      } else {
        for (int k = 0; k < classes; ++k) emit(row.iou[static_cast<std::size_t>(k)]);
      }
      emit(row.accuracy);
      emit(row.nmae_pct);
      os << '\n';
    }
  }
};

}  // namespace tlf
