#include "fabseg/metrics.hpp"

#include <cstdio>

namespace fabseg::metrics {

ConfusionCounts confusion_counts(const ByteRaster& pred, const ByteRaster& gt) {
    require(pred.same_shape(gt), ErrorKind::ShapeError, "confusion_counts: prediction and ground truth shapes differ");
    ConfusionCounts c;
    const auto& p = pred.pixels();
    const auto& g = gt.pixels();
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(p[i] <= 1 && g[i] <= 1, ErrorKind::InvalidRange, "confusion_counts: masks must be binary");
        if (p[i] && g[i]) ++c.tp;
        else if (p[i]) ++c.fp;
        else if (g[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

PixelMetrics pixel_metrics(const ConfusionCounts& c, bool empty_class_is_perfect) {
    require(c.total() > 0, ErrorKind::EmptyInput, "pixel_metrics: no pixels evaluated");
    PixelMetrics m;
    const auto union_px = c.tp + c.fp + c.fn;
    if (union_px == 0) {
        m.iou = m.f1 = empty_class_is_perfect ? 1.0 : 0.0;
    } else {
        m.iou = static_cast<double>(c.tp) / static_cast<double>(union_px);
        m.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
    }
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return m;
}

double miou(double iou_region, double iou_boundary) {
    require(iou_region >= 0.0 && iou_region <= 1.0 && iou_boundary >= 0.0 && iou_boundary <= 1.0,
            ErrorKind::InvalidArgument, "miou: IoU values must lie in [0,1]");
    return 0.5 * (iou_region + iou_boundary);
}

MetricsReport make_report(const ConfusionCounts& region, const ConfusionCounts& boundary, bool empty_class_is_perfect) {
    MetricsReport r;
    r.per_class["region"] = {pixel_metrics(region, empty_class_is_perfect), region};
    r.per_class["boundary"] = {pixel_metrics(boundary, empty_class_is_perfect), boundary};
    r.miou = miou(r.per_class["region"].scores.iou, r.per_class["boundary"].scores.iou);
    return r;
}

std::string format_report(const MetricsReport& report) {
    std::string out;
    char buf[128];
    for (const char* name : {"region", "boundary"}) {
        auto it = report.per_class.find(name);
        if (it == report.per_class.end()) continue;
        const auto& s = it->second.scores;
        std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.2f\n", name, 100.0 * s.iou, 100.0 * s.f1, 100.0 * s.accuracy);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "miou,%.2f\n", 100.0 * report.miou);
    out += buf;
    return out;
}

}  // namespace fabseg::metrics
