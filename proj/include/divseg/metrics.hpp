#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "divseg/colorcore.hpp"
#include "divseg/errors.hpp"
#include "divseg/image.hpp"
#include "divseg/segnet.hpp"

namespace divseg {

struct IouResult {
  // Per class: negative when the class is absent from both masks.
  std::vector<double> per_class;
  double mean = 0.0;
};

// Classes absent from both masks are excluded from the mean. Ignored pixels
// (in either mask) contribute to neither intersection nor union.
inline IouResult iou(const LabelMask& pred, const LabelMask& gt, int num_classes,
                     int ignore_label = LabelMask::kNoIgnore) {
  if (!pred.same_dims(gt)) throw ShapeError("iou: mask dims mismatch");
  std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred.labels()[i];
    const int g = gt.labels()[i];
    if (p == ignore_label || g == ignore_label) continue;
    if (p == g) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  IouResult r;
  r.per_class.assign(num_classes, -1.0);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c)
    if (uni[c] > 0) {
      r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
      sum += r.per_class[c];
      ++present;
    }
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

// Mean IoU between the predictions on the original and on the modified
// image, with the original's prediction as reference. 1.0 = fully invariant.
inline double invariance_overlap(const SegModel& model, const PlanarImage& original,
                                 const PlanarImage& modified) {
  if (!original.same_dims(modified))
    throw ShapeError("invariance_overlap: image dims mismatch");
  const LabelMask ref = predict(model, original);
  const LabelMask mod = predict(model, modified);
  return iou(mod, ref, model.classes).mean;
}

struct PartitionSpec {
  StatsFeature feature = StatsFeature::MeanLum;
  double low_pct = 15.0;
  double high_pct = 85.0;
};

struct Partition {
  std::vector<std::size_t> low;
  std::vector<std::size_t> high;
};

// Extreme-percentile subsets via nearest-rank percentiles; ties broken by
// ascending original index, and the subsets are kept disjoint.
inline Partition partition_extremes(const std::vector<VisualStats>& stats,
                                    const PartitionSpec& spec) {
  if (stats.empty()) throw EmptyDataset("partition_extremes: empty list");
  if (stats.size() < 2) throw InvalidInput("partition_extremes: need >= 2 entries");
  if (!(spec.low_pct > 0.0 && spec.low_pct < spec.high_pct && spec.high_pct < 100.0))
    throw InvalidSpec("partition_extremes: need 0 < low_pct < high_pct < 100");

  const std::size_t n = stats.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stats_feature(stats[a], spec.feature) < stats_feature(stats[b], spec.feature);
  });

  const auto n_low = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * spec.low_pct / 100.0));
  const auto n_high = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * (100.0 - spec.high_pct) / 100.0));

  Partition p;
  p.low.assign(order.begin(), order.begin() + n_low);
  const std::size_t high_start = std::max(n - n_high, n_low);
  p.high.assign(order.begin() + high_start, order.end());
  std::sort(p.low.begin(), p.low.end());
  std::sort(p.high.begin(), p.high.end());
  return p;
}

}  // namespace divseg
