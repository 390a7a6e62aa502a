#include "fabseg/data_pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fabseg/image_io.hpp"
#include "fabseg/random.hpp"

namespace fabseg {

ByteRaster render_bands(const RawTile& tile, std::int64_t lo, std::int64_t hi) {
    require(lo < hi, ErrorKind::InvalidRange, "render_bands: lo must be < hi");
    require(tile.height >= 1 && tile.width >= 1 && tile.channels >= 1, ErrorKind::EmptyInput, "render_bands: empty tile");
    require(tile.pixels.size() == static_cast<std::size_t>(tile.height) * tile.width * tile.channels, ErrorKind::ShapeError,
            "render_bands: pixel count does not match tile shape");
    ByteRaster out(tile.height, tile.width, tile.channels, Domain::U8);
    const std::int64_t span = hi - lo;
    for (std::size_t i = 0; i < tile.pixels.size(); ++i) {
        const std::int64_t v = tile.pixels[i];
        require(v >= 0, ErrorKind::InvalidRange, "render_bands: negative band value");
        const std::int64_t c = std::clamp(v, lo, hi) - lo;
        // round(255 * c / span) with ties rounding up
        out.pixels()[i] = static_cast<std::uint8_t>((2 * 255 * c + span) / (2 * span));
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<double, 3> ratios, std::uint64_t seed) {
    require(!ids.empty(), ErrorKind::EmptyInput, "split_dataset: no ids");
    for (double r : ratios) require(r >= 0.0, ErrorKind::InvalidRange, "split_dataset: negative ratio");
    require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, ErrorKind::InvalidRange,
            "split_dataset: ratios must sum to 1");

    std::vector<std::string> order = ids;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const auto n = order.size();
    auto count = [n](double r) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)); };
    const std::size_t n_val = count(ratios[1]);
    const std::size_t n_test = count(ratios[2]);
    const std::size_t n_train = n - n_val - n_test;

    DatasetSplit split;
    split.seed = seed;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return split;
}

namespace {

struct Point {
    double x, y;
};

double cross(const Point& o, const Point& a, const Point& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain; counter-clockwise hull without collinear points.
std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
        const auto& p = pts[i - 1];
        while (k >= t && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    hull.resize(k - 1);
    return hull;
}

bool inside_convex(const std::vector<Point>& hull, const Point& p) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i)
        if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
    return true;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, int n_parcels, int size) {
    require(n_parcels >= 1, ErrorKind::InvalidArgument, "generate_synthetic_scene: n_parcels must be >= 1");
    require(size >= 32, ErrorKind::InvalidArgument, "generate_synthetic_scene: size must be >= 32");
    Rng rng(seed);

    const int grid_cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_parcels))));
    const int grid_rows = (n_parcels + grid_cols - 1) / grid_cols;
    const double cell_h = static_cast<double>(size) / grid_rows;
    const double cell_w = static_cast<double>(size) / grid_cols;
    constexpr double margin = 1.5;

    SyntheticScene scene;
    scene.labels.assign(static_cast<std::size_t>(size) * size, 0);

    struct Texture {
        double r, g, b, angle, period, amp;
    };
    std::vector<Texture> textures;

    for (int k = 0; k < n_parcels; ++k) {
        const int gr = k / grid_cols, gc = k % grid_cols;
        const double y0 = gr * cell_h + margin, y1 = (gr + 1) * cell_h - margin;
        const double x0 = gc * cell_w + margin, x1 = (gc + 1) * cell_w - margin;
        // shrink the usable box a little at random so parcels vary in size
        const double sh = rng.uniform(0.0, 0.15) * (y1 - y0), sw = rng.uniform(0.0, 0.15) * (x1 - x0);
        const double oy = rng.uniform(0.0, sh), ox = rng.uniform(0.0, sw);
        const double by0 = y0 + oy, by1 = y1 - (sh - oy), bx0 = x0 + ox, bx1 = x1 - (sw - ox);

        std::vector<Point> pts;
        const int m = 8 + static_cast<int>(rng.below(5));
        for (int i = 0; i < m; ++i) {
            // bias samples toward the box edges so hulls fill the cell
            const int side = static_cast<int>(rng.below(4));
            const double t = rng.uniform();
            const double inset = rng.uniform(0.0, 0.25);
            switch (side) {
                case 0: pts.push_back({bx0 + t * (bx1 - bx0), by0 + inset * (by1 - by0)}); break;
                case 1: pts.push_back({bx0 + t * (bx1 - bx0), by1 - inset * (by1 - by0)}); break;
                case 2: pts.push_back({bx0 + inset * (bx1 - bx0), by0 + t * (by1 - by0)}); break;
                default: pts.push_back({bx1 - inset * (bx1 - bx0), by0 + t * (by1 - by0)}); break;
            }
        }
        const auto hull = convex_hull(std::move(pts));
        const int parcel_id = k + 1;
        int area = 0;
        for (int r = std::max(0, static_cast<int>(by0)); r < std::min(size, static_cast<int>(std::ceil(by1)) + 1); ++r)
            for (int c = std::max(0, static_cast<int>(bx0)); c < std::min(size, static_cast<int>(std::ceil(bx1)) + 1); ++c)
                if (inside_convex(hull, {c + 0.5, r + 0.5})) {
                    scene.labels[static_cast<std::size_t>(r) * size + c] = parcel_id;
                    ++area;
                }
        if (area > 0) ++scene.parcel_count;

        textures.push_back({rng.uniform(40, 110), rng.uniform(120, 200), rng.uniform(30, 80),
                            rng.uniform(0.0, std::numbers::pi), rng.uniform(3.0, 6.0), rng.uniform(10.0, 25.0)});
    }

    scene.image = ByteRaster(size, size, 3, Domain::U8);
    scene.region_mask = ByteRaster(size, size, 1, Domain::Binary);
    scene.boundary_mask = ByteRaster(size, size, 1, Domain::Binary);

    const double bg_fx = rng.uniform(0.05, 0.15), bg_fy = rng.uniform(0.05, 0.15), bg_phase = rng.uniform(0.0, 6.28);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const int label = scene.labels[static_cast<std::size_t>(r) * size + c];
            double rgb[3];
            if (label == 0) {
                const double low = 18.0 * std::sin(bg_fx * c + bg_fy * r + bg_phase);
                rgb[0] = 150 + low;
                rgb[1] = 115 + 0.6 * low;
                rgb[2] = 95 + 0.4 * low;
            } else {
                const auto& t = textures[static_cast<std::size_t>(label - 1)];
                const double s = t.amp * std::sin(2.0 * std::numbers::pi * (c * std::cos(t.angle) + r * std::sin(t.angle)) / t.period);
                rgb[0] = t.r + 0.3 * s;
                rgb[1] = t.g + s;
                rgb[2] = t.b + 0.2 * s;
            }
            for (int ch = 0; ch < 3; ++ch) scene.image.at(r, c, ch) = to_byte(rgb[ch] + rng.uniform(-10.0, 10.0));
            scene.region_mask.at(r, c) = label > 0 ? 1 : 0;
        }

    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            if (!scene.region_mask.at(r, c)) continue;
            const bool edge = (r > 0 && !scene.region_mask.at(r - 1, c)) || (r + 1 < size && !scene.region_mask.at(r + 1, c)) ||
                              (c > 0 && !scene.region_mask.at(r, c - 1)) || (c + 1 < size && !scene.region_mask.at(r, c + 1));
            scene.boundary_mask.at(r, c) = edge ? 1 : 0;
        }
    return scene;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open manifest " + path);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&base](const std::string& p) {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        return fp.is_absolute() ? p : (base / fp).string();
    };
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        require(fields.size() >= 2 && fields.size() <= 3, ErrorKind::DataError,
                path + ":" + std::to_string(line_no) + ": expected 2 or 3 tab-separated fields");
        entries.push_back({resolve(fields[0]), resolve(fields[1]), fields.size() == 3 ? resolve(fields[2]) : std::string{}});
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot write manifest " + path);
    const auto base = std::filesystem::path(path).parent_path();
    auto rel = [&base](const std::string& p) {
        if (p.empty()) return p;
        return std::filesystem::path(p).lexically_relative(base.empty() ? "." : base).generic_string();
    };
    for (const auto& e : entries) {
        out << rel(e.image_path) << '\t' << rel(e.region_path);
        if (!e.boundary_path.empty()) out << '\t' << rel(e.boundary_path);
        out << '\n';
    }
}

std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries) {
    std::vector<Sample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        Sample s;
        s.id = std::filesystem::path(e.image_path).stem().string();
        s.image = read_image_rgb(e.image_path);
        s.region = read_mask(e.region_path);
        require(s.region.height() == s.image.height() && s.region.width() == s.image.width(), ErrorKind::DataError,
                "region mask shape differs from image for " + e.image_path);
        if (!e.boundary_path.empty()) {
            s.boundary = read_mask(e.boundary_path);
            require(s.boundary.same_shape(s.region), ErrorKind::DataError, "boundary mask shape differs for " + e.image_path);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace fabseg
