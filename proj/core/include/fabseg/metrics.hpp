#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fabseg/raster.hpp"

namespace fabseg::metrics {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const noexcept { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

struct PixelMetrics {
    double iou = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
};

struct ClassMetrics {
    PixelMetrics scores;
    ConfusionCounts counts;
};

/// Per-class scores plus the composite mean IoU of the region and boundary
/// classes. Counts are accumulated over every evaluated pixel (micro average).
struct MetricsReport {
    std::map<std::string, ClassMetrics> per_class;
    double miou = 0.0;
};

ConfusionCounts confusion_counts(const ByteRaster& pred, const ByteRaster& gt);

/// IoU, F1 and accuracy from counts. When neither prediction nor ground truth
/// has a positive pixel, IoU and F1 are 1 if `empty_class_is_perfect`, else 0.
PixelMetrics pixel_metrics(const ConfusionCounts& c, bool empty_class_is_perfect = true);

double miou(double iou_region, double iou_boundary);

MetricsReport make_report(const ConfusionCounts& region, const ConfusionCounts& boundary,
                          bool empty_class_is_perfect = true);

/// `class,iou,f1,accuracy` lines then `miou,<value>`, as percentages with two
/// decimals.
std::string format_report(const MetricsReport& report);

}  // namespace fabseg::metrics
