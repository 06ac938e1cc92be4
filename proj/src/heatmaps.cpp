#include "docdet/heatmaps.hpp"

#include <algorithm>
#include <cmath>

#include "docdet/error.hpp"
#include "docdet/page_io.hpp"

namespace docdet {

Image gaussian_template(int size) {
    if (size < 3 || size % 2 == 0) throw ConfigError("gaussian template size must be odd and >= 3");
    Image t(size, size);
    const double c = (size - 1) / 2.0;
    const double sigma = size / 4.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d2 = (x - c) * (x - c) + (y - c) * (y - c);
            t(x, y) = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    return t;
}

namespace {

float sample_bilinear(const Image& t, double u, double v) {
    u = std::clamp(u, 0.0, t.width() - 1.0);
    v = std::clamp(v, 0.0, t.height() - 1.0);
    const int x0 = std::min(static_cast<int>(u), t.width() - 2);
    const int y0 = std::min(static_cast<int>(v), t.height() - 2);
    const double fx = u - x0, fy = v - y0;
    const double top = t(x0, y0) * (1 - fx) + t(x0 + 1, y0) * fx;
    const double bot = t(x0, y0 + 1) * (1 - fx) + t(x0 + 1, y0 + 1) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

Box scaled(const Box& b, double s) { return {b.x0 * s, b.y0 * s, b.x1 * s, b.y1 * s}; }

Box render_box(const Box& b, double min_width_ratio) {
    const double w = min_width_ratio * b.height();
    if (b.width() >= w) return b;
    const double cx = b.center().x;
    return {cx - w / 2, b.y0, cx + w / 2, b.y1};
}

int scaled_dim(int v, double s) { return std::max(1, static_cast<int>(std::lround(v * s))); }

Image render_filtered(std::span<const CharAnnotation> chars, int width, int height, const HeatmapConfig& cfg,
                      bool want_special) {
    Image grid(scaled_dim(width, cfg.scale), scaled_dim(height, cfg.scale), 0.0f);
    const Image tmpl = gaussian_template(cfg.template_size);
    for (const CharAnnotation& c : chars)
        if (c.is_special == want_special)
            splat_gaussian(grid, scaled(render_box(c.box, cfg.min_width_ratio), cfg.scale), tmpl, cfg.min_box_px);
    return grid;
}

}  // namespace

void splat_gaussian(Image& grid, const Box& box_in, const Image& tmpl, double min_box_px) {
    Box box = box_in;
    const Point c = box.center();
    if (box.width() < min_box_px) box.x0 = c.x - min_box_px / 2, box.x1 = c.x + min_box_px / 2;
    if (box.height() < min_box_px) box.y0 = c.y - min_box_px / 2, box.y1 = c.y + min_box_px / 2;
    const int x_begin = std::max(0, static_cast<int>(std::floor(box.x0 - 0.5)));
    const int x_end = std::min(grid.width() - 1, static_cast<int>(std::ceil(box.x1 - 0.5)));
    const int y_begin = std::max(0, static_cast<int>(std::floor(box.y0 - 0.5)));
    const int y_end = std::min(grid.height() - 1, static_cast<int>(std::ceil(box.y1 - 0.5)));
    const double sx = tmpl.width() / box.width();
    const double sy = tmpl.height() / box.height();
    for (int y = y_begin; y <= y_end; ++y) {
        const double py = y + 0.5;
        if (py < box.y0 || py > box.y1) continue;
        const double v = (py - box.y0) * sy - 0.5;
        for (int x = x_begin; x <= x_end; ++x) {
            const double px = x + 0.5;
            if (px < box.x0 || px > box.x1) continue;
            const float val = sample_bilinear(tmpl, (px - box.x0) * sx - 0.5, v);
            float& g = grid(x, y);
            g = std::max(g, val);
        }
    }
}

Image render_region(std::span<const CharAnnotation> chars, int width, int height, const HeatmapConfig& cfg) {
    return render_filtered(chars, width, height, cfg, false);
}

Image render_special(std::span<const CharAnnotation> chars, int width, int height, const HeatmapConfig& cfg) {
    return render_filtered(chars, width, height, cfg, true);
}

std::vector<Box> affinity_boxes(const PageSample& page) {
    std::vector<Box> out;
    for (const Word& w : page.words()) {
        const CharAnnotation* prev = nullptr;
        for (size_t idx : w.char_indices) {
            const CharAnnotation& c = page.chars[idx];
            if (c.is_special) continue;
            if (prev) {
                const Point a = prev->box.center(), b = c.box.center();
                const Point mid{(a.x + b.x) / 2, (a.y + b.y) / 2};
                const double half_w = std::hypot(b.x - a.x, b.y - a.y) / 2;
                const double half_h = (prev->box.height() + c.box.height()) / 4;
                if (half_w > 0 && half_h > 0) out.push_back({mid.x - half_w, mid.y - half_h, mid.x + half_w, mid.y + half_h});
            }
            prev = &c;
        }
    }
    return out;
}

Image render_affinity(const PageSample& page, const HeatmapConfig& cfg) {
    Image grid(scaled_dim(page.width(), cfg.scale), scaled_dim(page.height(), cfg.scale), 0.0f);
    const Image tmpl = gaussian_template(cfg.template_size);
    for (const Box& b : affinity_boxes(page)) splat_gaussian(grid, scaled(b, cfg.scale), tmpl, cfg.min_box_px);
    return grid;
}

HeatmapTarget make_target(const PageSample& page, const HeatmapConfig& cfg) {
    if (!(cfg.scale > 0.0 && cfg.scale <= 1.0)) throw ConfigError("heatmap scale must be in (0,1]");
    if (!(cfg.min_width_ratio >= 0.0)) throw ConfigError("heatmap min_width_ratio must be >= 0");
    HeatmapTarget t;
    t.scale = cfg.scale;
    t.region = render_region(page.chars, page.width(), page.height(), cfg);
    t.affinity = render_affinity(page, cfg);
    t.special = render_special(page.chars, page.width(), page.height(), cfg);
    return t;
}

void write_heatmap_png(const std::filesystem::path& path, const Image& map) { write_image(path, map); }

}  // namespace docdet
