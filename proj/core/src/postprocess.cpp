#include "fabseg/postprocess.hpp"

#include <cmath>
#include <sstream>

namespace fabseg {

ByteRaster binarize(const RealRaster& logits, double threshold) {
    require(logits.channels() == 1, ErrorKind::ShapeError, "binarize expects a single channel");
    ByteRaster out(logits.height(), logits.width(), 1, Domain::Binary);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double v = logits.pixels()[i];
        require(std::isfinite(v), ErrorKind::NumericalError, "binarize: non-finite logit");
        out.pixels()[i] = (1.0 / (1.0 + std::exp(-v))) > threshold ? 1 : 0;
    }
    return out;
}

ByteRaster symmetric_difference(const ByteRaster& region, const ByteRaster& boundary) {
    require(region.same_shape(boundary), ErrorKind::ShapeError, "symmetric_difference: mask shapes differ");
    ByteRaster out(region.height(), region.width(), region.channels(), Domain::Binary);
    for (std::size_t i = 0; i < region.size(); ++i)
        out.pixels()[i] = static_cast<std::uint8_t>((region.pixels()[i] != 0) != (boundary.pixels()[i] != 0));
    return out;
}

ParcelMap extract_parcels(const ByteRaster& region, const ByteRaster& boundary, int min_area) {
    const ByteRaster fused = symmetric_difference(region, boundary);
    const int h = region.height(), w = region.width();
    ParcelMap map;
    map.height = h;
    map.width = w;
    map.labels.assign(static_cast<std::size_t>(h) * w, 0);

    std::vector<int> stack;
    std::vector<int> component;
    for (int start = 0; start < h * w; ++start) {
        if (!fused.pixels()[static_cast<std::size_t>(start)] || !region.pixels()[static_cast<std::size_t>(start)] ||
            map.labels[static_cast<std::size_t>(start)] != 0)
            continue;
        // -1 marks visited pixels until the component is accepted or dropped
        component.clear();
        stack.assign(1, start);
        map.labels[static_cast<std::size_t>(start)] = -1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            component.push_back(p);
            const int r = p / w, c = p % w;
            const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                const int q = nb[0] * w + nb[1];
                const auto qi = static_cast<std::size_t>(q);
                if (map.labels[qi] == 0 && fused.pixels()[qi] && region.pixels()[qi]) {
                    map.labels[qi] = -1;
                    stack.push_back(q);
                }
            }
        }
        const bool keep = static_cast<int>(component.size()) >= min_area;
        ParcelInfo info;
        if (keep) {
            info.id = ++map.parcel_count;
            info.area = static_cast<int>(component.size());
            info.row_min = h;
            info.col_min = w;
            info.row_max = info.col_max = -1;
        }
        for (int p : component) {
            map.labels[static_cast<std::size_t>(p)] = keep ? info.id : -2;
            if (keep) {
                info.row_min = std::min(info.row_min, p / w);
                info.row_max = std::max(info.row_max, p / w);
                info.col_min = std::min(info.col_min, p % w);
                info.col_max = std::max(info.col_max, p % w);
            }
        }
        if (keep) map.parcels.push_back(info);
    }
    for (auto& l : map.labels)
        if (l < 0) l = 0;
    return map;
}

std::string format_parcel_summary(const ParcelMap& parcels) {
    std::ostringstream os;
    os << "parcel_id,area_px,bbox\n";
    for (const auto& p : parcels.parcels)
        os << p.id << ',' << p.area << ',' << p.row_min << ' ' << p.col_min << ' ' << p.row_max << ' ' << p.col_max << '\n';
    return os.str();
}

}  // namespace fabseg
