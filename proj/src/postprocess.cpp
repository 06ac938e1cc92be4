#include "docdet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/imgproc.hpp>

#include "docdet/error.hpp"

namespace docdet {

using nlohmann::json;

void PostprocessConfig::validate() const {
    auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!open_unit(region_threshold) || !open_unit(affinity_threshold) || !open_unit(special_threshold))
        throw ConfigError("postprocess thresholds must lie in (0,1)");
    if (!(proximity_alpha > 0.0)) throw ConfigError("postprocess proximity_alpha must be > 0");
    if (!(min_box_area >= 0.0)) throw ConfigError("postprocess min_box_area must be >= 0");
}

Mask binarize(const Image& map, double threshold) {
    Mask out(map.width(), map.height(), 0);
    const auto src = map.data();
    auto dst = out.data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= threshold ? 1 : 0;
    return out;
}

Components connected_components(const Mask& mask) {
    Components out;
    out.labels = Grid<int>(mask.width(), mask.height(), 0);
    if (mask.empty()) return out;
    cv::Mat m(mask.height(), mask.width(), CV_8U, const_cast<std::uint8_t*>(mask.data().data()));
    cv::Mat labels;
    const int n = cv::connectedComponents(m, labels, 8, CV_32S);
    out.items.resize(static_cast<size_t>(std::max(0, n - 1)));
    for (size_t i = 0; i < out.items.size(); ++i) {
        Component& c = out.items[i];
        c.label = static_cast<int>(i) + 1;
        c.x0 = mask.width();
        c.y0 = mask.height();
    }
    for (int y = 0; y < mask.height(); ++y) {
        const int* row = labels.ptr<int>(y);
        for (int x = 0; x < mask.width(); ++x) {
            const int l = row[x];
            out.labels(x, y) = l;
            if (l == 0) continue;
            Component& c = out.items[static_cast<size_t>(l - 1)];
            c.pixels.push_back(y * mask.width() + x);
            c.x0 = std::min(c.x0, x);
            c.y0 = std::min(c.y0, y);
            c.x1 = std::max(c.x1, x + 1);
            c.y1 = std::max(c.y1, y + 1);
        }
    }
    return out;
}

double median_component_height(const Components& region, int image_height) {
    if (region.items.empty()) return image_height / 50.0;
    std::vector<int> h;
    h.reserve(region.items.size());
    for (const Component& c : region.items) h.push_back(c.height());
    std::sort(h.begin(), h.end());
    const size_t n = h.size();
    return n % 2 ? h[n / 2] : 0.5 * (h[n / 2 - 1] + h[n / 2]);
}

namespace {

void draw_segment(Mask& m, int x0, int y0, int x1, int y1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        m(x0, y0) = 1;
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) err += dy, x0 += sx;
        if (e2 <= dx) err += dx, y0 += sy;
    }
}

struct Nearest {
    long d2 = std::numeric_limits<long>::max();
    int from = 0;  // special pixel index
    int to = 0;    // region pixel index
};

constexpr long kFar = std::numeric_limits<long>::max() / 4;

// Lower envelope of parabolas (Felzenszwalb-Huttenlocher): d[q] = min_p (q - p)^2 + f[p], arg[q] = that p.
// Entries of f at kFar are not sites; with no site at all d stays kFar and arg -1.
struct Envelope {
    std::vector<int> v;
    std::vector<double> z;

    void run(const long* f, int n, long* d, int* arg) {
        v.resize(static_cast<size_t>(n));
        z.resize(static_cast<size_t>(n) + 1);
        int k = -1;
        for (int q = 0; q < n; ++q) {
            if (f[q] >= kFar) continue;
            if (k < 0) {
                k = 0;
                v[0] = q;
                z[0] = -std::numeric_limits<double>::infinity();
                z[1] = std::numeric_limits<double>::infinity();
                continue;
            }
            // z[0] is -inf, so the envelope never empties.
            double s;
            while (true) {
                const int p = v[static_cast<size_t>(k)];
                s = (static_cast<double>(f[q] + long(q) * q) - static_cast<double>(f[p] + long(p) * p)) /
                    (2.0 * (q - p));
                if (s > z[static_cast<size_t>(k)]) break;
                --k;
            }
            ++k;
            v[static_cast<size_t>(k)] = q;
            z[static_cast<size_t>(k)] = s;
            z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
        }
        if (k < 0) {
            std::fill(d, d + n, kFar);
            std::fill(arg, arg + n, -1);
            return;
        }
        k = 0;
        for (int q = 0; q < n; ++q) {
            while (z[static_cast<size_t>(k) + 1] < q) ++k;
            const int p = v[static_cast<size_t>(k)];
            d[q] = long(q - p) * (q - p) + f[p];
            arg[q] = p;
        }
    }
};

// Exact squared Euclidean distance from every cell of a w x h window to the nearest site,
// and the window index of that site.
class SiteDistance {
public:
    void compute(const std::vector<std::uint8_t>& site, int w, int h) {
        const size_t n = static_cast<size_t>(w) * h;
        col_d_.resize(n);
        col_arg_.resize(n);
        dist.resize(n);
        nearest.resize(n);
        f_.resize(static_cast<size_t>(std::max(w, h)));
        d_.resize(f_.size());
        arg_.resize(f_.size());
        // Columns, stored transposed: col_*[x * h + y].
        for (int x = 0; x < w; ++x) {
            for (int y = 0; y < h; ++y) f_[static_cast<size_t>(y)] = site[static_cast<size_t>(y) * w + x] ? 0 : kFar;
            env_.run(f_.data(), h, col_d_.data() + static_cast<size_t>(x) * h, col_arg_.data() + static_cast<size_t>(x) * h);
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) f_[static_cast<size_t>(x)] = col_d_[static_cast<size_t>(x) * h + y];
            env_.run(f_.data(), w, d_.data(), arg_.data());
            for (int x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                dist[i] = d_[static_cast<size_t>(x)];
                const int sx = arg_[static_cast<size_t>(x)];
                nearest[i] = sx < 0 ? -1 : col_arg_[static_cast<size_t>(sx) * h + y] * w + sx;
            }
        }
    }

    std::vector<long> dist;
    std::vector<int> nearest;

private:
    Envelope env_;
    std::vector<long> col_d_, f_, d_;
    std::vector<int> col_arg_, arg_;
};

}  // namespace

Mask combine_channels(const Mask& region_bin, const Mask& affinity_bin, const Mask& special_bin,
                      const PostprocessConfig& cfg) {
    const int w = region_bin.width(), h = region_bin.height();
    if (affinity_bin.width() != w || affinity_bin.height() != h || special_bin.width() != w ||
        special_bin.height() != h)
        throw Error("combine_channels: channel shapes differ");
    Mask out(w, h, 0);
    {
        auto o = out.data();
        const auto r = region_bin.data(), a = affinity_bin.data();
        for (size_t i = 0; i < o.size(); ++i) o[i] = (r[i] | a[i]) ? 1 : 0;
    }
    const Components special = connected_components(special_bin);
    if (special.items.empty()) return out;
    const Components region = connected_components(region_bin);
    if (region.items.empty()) return out;

    const double radius = cfg.proximity_alpha * median_component_height(region, h);
    const long radius2 = static_cast<long>(std::floor(radius * radius));
    const int reach = static_cast<int>(std::ceil(radius));
    std::vector<Nearest> nearest(region.items.size());
    std::vector<int> touched;

    SiteDistance sd;
    std::vector<std::uint8_t> site;
    for (const Component& s : special.items) {
        const int wx0 = std::max(0, s.x0 - reach), wx1 = std::min(w, s.x1 + reach);
        const int wy0 = std::max(0, s.y0 - reach), wy1 = std::min(h, s.y1 + reach);
        const int ww = wx1 - wx0, wh = wy1 - wy0;
        site.assign(static_cast<size_t>(ww) * wh, 0);
        for (int p : s.pixels) site[static_cast<size_t>(p / w - wy0) * ww + (p % w - wx0)] = 1;
        sd.compute(site, ww, wh);
        touched.clear();
        for (int y = wy0; y < wy1; ++y)
            for (int x = wx0; x < wx1; ++x) {
                const int l = region.labels(x, y);
                if (l == 0) continue;
                const size_t i = static_cast<size_t>(y - wy0) * ww + (x - wx0);
                const long d2 = sd.dist[i];
                if (d2 > radius2) continue;
                Nearest& n = nearest[static_cast<size_t>(l - 1)];
                if (n.d2 == std::numeric_limits<long>::max()) touched.push_back(l - 1);
                if (d2 < n.d2) {
                    const int site_i = sd.nearest[i];
                    n = {d2, (wy0 + site_i / ww) * w + wx0 + site_i % ww, y * w + x};
                }
            }
        if (!touched.empty()) {
            for (int p : s.pixels) out.data()[static_cast<size_t>(p)] = 1;
            for (int l : touched) {
                const Nearest& n = nearest[static_cast<size_t>(l)];
                draw_segment(out, n.from % w, n.from / w, n.to % w, n.to / w);
                nearest[static_cast<size_t>(l)] = Nearest{};
            }
        }
    }
    return out;
}

DetectionResult extract_boxes(const Mask& word_mask, const Image& region_map, const PostprocessConfig& cfg,
                              double map_scale) {
    if (region_map.width() != word_mask.width() || region_map.height() != word_mask.height())
        throw Error("extract_boxes: mask and region map shapes differ");
    DetectionResult r;
    r.width = static_cast<int>(std::lround(word_mask.width() / map_scale));
    r.height = static_cast<int>(std::lround(word_mask.height() / map_scale));
    const Components comps = connected_components(word_mask);
    const auto region = region_map.data();
    for (const Component& c : comps.items) {
        const Box b{c.x0 / map_scale, c.y0 / map_scale, c.x1 / map_scale, c.y1 / map_scale};
        if (b.area() < cfg.min_box_area) continue;
        float score = 0.0f;
        for (int p : c.pixels) score = std::max(score, region[static_cast<size_t>(p)]);
        if (score <= 0.0f) continue;
        r.boxes.push_back(b);
        r.scores.push_back(std::min(1.0, static_cast<double>(score)));
    }
    return r;
}

double gaussian_core_fraction(double threshold) { return std::sqrt(2.0 * std::log(1.0 / threshold)) / 2.0; }

DetectionResult restore_box_extent(const DetectionResult& result, const PostprocessConfig& cfg) {
    const double k = gaussian_core_fraction(cfg.region_threshold);
    const double grow = k > 0.0 && k < 1.0 ? (1.0 / k - 1.0) / 2.0 : 0.0;
    DetectionResult out = result;
    for (Box& b : out.boxes) {
        const double pad = std::min(b.width(), b.height()) * grow;
        b = clip_box({b.x0 - pad, b.y0 - pad, b.x1 + pad, b.y1 + pad}, result.width, result.height);
    }
    return out;
}

DetectionResult detect_from_maps(const ScoreMaps& maps, const PostprocessConfig& cfg, double map_scale) {
    cfg.validate();
    const Mask region_bin = binarize(maps.region, cfg.region_threshold);
    const Mask special_bin = binarize(maps.special, cfg.special_threshold);
    Mask affinity_bin;
    if (cfg.combine_mode == CombineMode::SumThenThreshold) {
        Image sum = maps.region;
        auto s = sum.data();
        const auto a = maps.affinity.data();
        for (size_t i = 0; i < s.size(); ++i) s[i] = std::min(1.0f, s[i] + a[i]);
        affinity_bin = binarize(sum, cfg.region_threshold);
    } else {
        affinity_bin = binarize(maps.affinity, cfg.affinity_threshold);
    }
    const Mask mask = combine_channels(region_bin, affinity_bin, special_bin, cfg);
    const DetectionResult raw = extract_boxes(mask, maps.region, cfg, map_scale);
    return cfg.restore_extent ? restore_box_extent(raw, cfg) : raw;
}

json detection_to_json(const DetectionResult& r) {
    json boxes = json::array();
    for (const Box& b : r.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    return {{"boxes", boxes}, {"scores", r.scores}, {"width", r.width}, {"height", r.height}};
}

DetectionResult detection_from_json(const json& j) {
    DetectionResult r;
    for (const json& b : j.at("boxes")) r.boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
    r.scores = j.at("scores").get<std::vector<double>>();
    r.width = j.value("width", 0);
    r.height = j.value("height", 0);
    if (r.scores.size() != r.boxes.size()) throw IoError("detection JSON: boxes and scores differ in length");
    return r;
}

void to_json(json& j, const PostprocessConfig& c) {
    j = {{"region_threshold", c.region_threshold},
         {"affinity_threshold", c.affinity_threshold},
         {"special_threshold", c.special_threshold},
         {"proximity_alpha", c.proximity_alpha},
         {"min_box_area", c.min_box_area},
         {"combine_mode", c.combine_mode == CombineMode::SumThenThreshold ? "sum" : "separate"},
         {"restore_extent", c.restore_extent}};
}

void from_json(const json& j, PostprocessConfig& c) {
    c.region_threshold = j.value("region_threshold", c.region_threshold);
    c.affinity_threshold = j.value("affinity_threshold", c.affinity_threshold);
    c.special_threshold = j.value("special_threshold", c.special_threshold);
    c.proximity_alpha = j.value("proximity_alpha", c.proximity_alpha);
    c.min_box_area = j.value("min_box_area", c.min_box_area);
    const std::string mode = j.value("combine_mode", std::string("separate"));
    if (mode == "separate")
        c.combine_mode = CombineMode::SeparateThresholds;
    else if (mode == "sum")
        c.combine_mode = CombineMode::SumThenThreshold;
    else
        throw ConfigError("combine_mode must be 'separate' or 'sum'");
    c.restore_extent = j.value("restore_extent", c.restore_extent);
}

}  // namespace docdet
