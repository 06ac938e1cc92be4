#include "docdet/synthgen.hpp"

#include <algorithm>
#include <map>
#include <tuple>
#include <cmath>
#include <optional>
#include <string_view>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "docdet/error.hpp"
#include "docdet/random.hpp"

namespace docdet {

namespace {

constexpr int kMaxLayoutAttempts = 8;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid synth spec: " + what);
}

// Ink coverage of one glyph drawn on its own canvas.
struct GlyphRaster {
    cv::Mat coverage;  // CV_32F in [0,1]
    int offset_x = 0;  // page position of coverage(0,0)
    int offset_y = 0;
};

GlyphRaster rasterize(const GlyphRender& g) {
    GlyphRaster r;
    if (g.is_bullet) {
        const int pad = 2;
        const int size = 2 * g.bullet_radius + 2 * pad + 1;
        cv::Mat canvas(size, size, CV_8U, cv::Scalar(0));
        cv::circle(canvas, {pad + g.bullet_radius, pad + g.bullet_radius}, g.bullet_radius, cv::Scalar(255),
                   cv::FILLED, cv::LINE_AA);
        canvas.convertTo(r.coverage, CV_32F, 1.0 / 255.0);
        r.offset_x = g.origin_x - pad;
        r.offset_y = g.origin_y - g.bullet_radius - pad;
        return r;
    }
    const std::string text(1, static_cast<char>(g.codepoint));
    int baseline = 0;
    const cv::Size sz = cv::getTextSize(text, g.font_face, g.font_scale, g.thickness, &baseline);
    const int pad = g.thickness + 2 + sz.height / 2;
    cv::Mat canvas(sz.height + baseline + 2 * pad, sz.width + 2 * pad, CV_8U, cv::Scalar(0));
    cv::putText(canvas, text, {pad, pad + sz.height}, g.font_face, g.font_scale, cv::Scalar(255), g.thickness,
                cv::LINE_AA);
    canvas.convertTo(r.coverage, CV_32F, 1.0 / 255.0);
    r.offset_x = g.origin_x - pad;
    r.offset_y = g.origin_y - sz.height - pad;
    return r;
}

// Blends the glyph into the page and returns the tight bounds of its visible ink.
std::optional<Box> composite(Image& page, const GlyphRaster& r, float ink) {
    int x0 = page.width(), y0 = page.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < r.coverage.rows; ++y) {
        const int py = y + r.offset_y;
        if (py < 0 || py >= page.height()) continue;
        const float* cov = r.coverage.ptr<float>(y);
        for (int x = 0; x < r.coverage.cols; ++x) {
            const int px = x + r.offset_x;
            if (px < 0 || px >= page.width() || cov[x] <= 0.0f) continue;
            float& v = page(px, py);
            v = v * (1.0f - cov[x]) + ink * cov[x];
            x0 = std::min(x0, px);
            y0 = std::min(y0, py);
            x1 = std::max(x1, px);
            y1 = std::max(y1, py);
        }
    }
    if (x1 < 0) return std::nullopt;
    return Box{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

int advance_of(char c, int face, double scale, int thickness) {
    int baseline = 0;
    return cv::getTextSize(std::string(1, c), face, scale, thickness, &baseline).width;
}

// Horizontal ink extent of a glyph relative to its origin.
struct InkSpan {
    int left = 0;
    int width = 0;
};

InkSpan ink_span(char c, int face, double scale, int thickness) {
    thread_local std::map<std::tuple<char, int, double, int>, InkSpan> cache;
    const auto key = std::make_tuple(c, face, scale, thickness);
    if (const auto it = cache.find(key); it != cache.end()) return it->second;
    GlyphRender g;
    g.codepoint = static_cast<char32_t>(c);
    g.font_face = face;
    g.font_scale = scale;
    g.thickness = thickness;
    const GlyphRaster r = rasterize(g);
    cv::Mat cols;
    cv::reduce(r.coverage, cols, 0, cv::REDUCE_MAX);
    int lo = -1, hi = -1;
    for (int x = 0; x < cols.cols; ++x)
        if (cols.at<float>(0, x) > 0.0f) {
            if (lo < 0) lo = x;
            hi = x;
        }
    InkSpan span;
    if (lo >= 0) span = {lo + r.offset_x, hi - lo + 1};
    cache.emplace(key, span);
    return span;
}

std::vector<char> available(std::string_view candidates, const CharSet& specials) {
    std::vector<char> out;
    for (char c : candidates)
        if (specials.contains(static_cast<char32_t>(c))) out.push_back(c);
    return out;
}

char pick(Rng& rng, std::string_view s) { return s[static_cast<size_t>(rng.uniform_int(0, int(s.size()) - 1))]; }

std::string letters(Rng& rng, int n) {
    static constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyzeeaaoinrst";
    std::string s;
    for (int i = 0; i < n; ++i) s += pick(rng, kLetters);
    return s;
}

std::string digits(Rng& rng, int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += static_cast<char>('0' + rng.uniform_int(0, 9));
    return s;
}

// Business-document flavoured tokens; every token holds at least one letter or digit.
std::string make_token(Rng& rng) {
    const double u = rng.uniform();
    std::string tok;
    if (u < 0.45) {
        tok = letters(rng, rng.uniform_int(2, 9));
        const double cap = rng.uniform();
        if (cap < 0.3)
            tok[0] = static_cast<char>(std::toupper(tok[0]));
        else if (cap < 0.4)
            std::transform(tok.begin(), tok.end(), tok.begin(), [](char c) { return char(std::toupper(c)); });
    } else if (u < 0.55) {
        tok = digits(rng, rng.uniform_int(1, 5));
    } else if (u < 0.62) {
        tok = digits(rng, rng.uniform_int(1, 3)) + "." + digits(rng, 2);
    } else if (u < 0.67) {
        tok = digits(rng, 2) + "/" + digits(rng, 2) + "/" + digits(rng, 4);
    } else if (u < 0.70) {
        tok = digits(rng, 2) + ":" + digits(rng, 2);
    } else if (u < 0.78) {
        tok = letters(rng, rng.uniform_int(1, 5)) + "-" + letters(rng, rng.uniform_int(2, 6));
    } else if (u < 0.86) {
        tok = std::string(1, pick(rng, "aAI&#0123456789"));
    } else {
        tok = letters(rng, rng.uniform_int(2, 8));
        tok[0] = static_cast<char>(std::toupper(tok[0]));
    }
    const double tail = rng.uniform();
    if (tail < 0.08)
        tok += ':';
    else if (tail < 0.14)
        tok += ',';
    else if (tail < 0.18)
        tok += '.';
    return tok;
}

struct LineStyle {
    int face = cv::FONT_HERSHEY_SIMPLEX;
    double scale = 0.4;
    int thickness = 1;
    double cap_height = 10.0;
    float ink = 0.0f;

    int tracking() const { return std::max(1, static_cast<int>(std::lround(0.1 * cap_height))); }
    // Pen advance of one glyph: its ink width plus tracking; spaces keep the font advance.
    int advance(char c) const {
        if (c == ' ') return advance_of(c, face, scale, thickness);
        return ink_span(c, face, scale, thickness).width + tracking();
    }
};

class PageBuilder {
public:
    PageBuilder(const SynthSpec& spec, Rng& rng) : spec_(spec), rng_(rng), page_image_(spec.width, spec.height, 1.0f) {}

    bool layout();
    TracedPage finish() && {
        draw_rules();
        TracedPage t;
        t.page.image = std::move(page_image_);
        t.page.chars = std::move(chars_);
        t.glyphs = std::move(glyphs_);
        return t;
    }

private:
    LineStyle sample_style();
    void place(const GlyphRender& g, char32_t cp, int word_id, float ink);
    // Returns the x after the word.
    int place_word(const std::string& word, int x, int baseline, const LineStyle& st, int word_id);
    int word_width(const std::string& word, const LineStyle& st) const;
    bool text_line(int baseline, const LineStyle& st);
    void separator_row(int baseline, const LineStyle& st);
    void draw_rules();

    const SynthSpec& spec_;
    Rng& rng_;
    Image page_image_;
    std::vector<CharAnnotation> chars_;
    std::vector<GlyphRender> glyphs_;
    std::vector<std::pair<cv::Point, cv::Point>> rules_;
    int next_word_ = 0;
    int left_ = 0;
    int right_ = 0;
};

LineStyle PageBuilder::sample_style() {
    LineStyle st;
    const auto& fonts = spec_.font_pool.fonts;
    st.face = resolve_font(fonts[static_cast<size_t>(rng_.uniform_int(0, int(fonts.size()) - 1))]);
    st.cap_height = rng_.uniform(spec_.font_pool.height_px.lo, spec_.font_pool.height_px.hi);
    st.thickness = rng_.bernoulli(spec_.bold_prob) ? 2 : 1;
    st.scale = cv::getFontScaleFromHeight(st.face & 0xF, std::max(1, int(std::lround(st.cap_height))), st.thickness);
    st.ink = static_cast<float>(rng_.uniform(spec_.ink.lo, spec_.ink.hi));
    return st;
}

void PageBuilder::place(const GlyphRender& g, char32_t cp, int word_id, float ink) {
    const auto box = composite(page_image_, rasterize(g), ink);
    if (!box) return;
    chars_.push_back({*box, cp, word_id, spec_.special_chars.contains(cp)});
    glyphs_.push_back(g);
}

int PageBuilder::word_width(const std::string& word, const LineStyle& st) const {
    int w = 0;
    for (char c : word) w += st.advance(c);
    return w;
}

int PageBuilder::place_word(const std::string& word, int x, int baseline, const LineStyle& st, int word_id) {
    for (char c : word) {
        GlyphRender g;
        g.codepoint = static_cast<char32_t>(c);
        g.font_face = st.face;
        g.font_scale = st.scale;
        g.thickness = st.thickness;
        g.origin_x = c == ' ' ? x : x - ink_span(c, st.face, st.scale, st.thickness).left;
        g.origin_y = baseline;
        if (c != ' ') place(g, g.codepoint, word_id, st.ink);
        x += st.advance(c);
    }
    return x;
}

bool PageBuilder::text_line(int baseline, const LineStyle& st) {
    int x = left_ + static_cast<int>(rng_.uniform(0.0, 0.15) * (right_ - left_));
    auto gap = [&] { return static_cast<int>(std::lround(rng_.uniform(spec_.word_gap.lo, spec_.word_gap.hi) * st.cap_height)); };
    bool placed_any = false;
    if (spec_.special_chars.contains(U'•') && rng_.bernoulli(spec_.bullet_prob)) {
        GlyphRender g;
        g.codepoint = U'•';
        g.is_bullet = true;
        g.bullet_radius = std::max(1, static_cast<int>(std::lround(st.cap_height * 0.2)));
        g.origin_x = x;
        g.origin_y = baseline - static_cast<int>(std::lround(st.cap_height * 0.45));
        place(g, U'•', next_word_++, st.ink);
        x += 2 * g.bullet_radius + 1 + gap();
    }
    const auto isolated = available("|*/~", spec_.special_chars);
    for (int guard = 0; guard < 200; ++guard) {
        std::string tok;
        if (placed_any && !isolated.empty() && rng_.bernoulli(spec_.isolated_special_prob))
            tok = std::string(1, isolated[static_cast<size_t>(rng_.uniform_int(0, int(isolated.size()) - 1))]);
        else
            tok = make_token(rng_);
        const int w = word_width(tok, st);
        if (x + w > right_) {
            if (placed_any) break;
            continue;
        }
        x = place_word(tok, x, baseline, st, next_word_++) + gap();
        placed_any = true;
    }
    return placed_any;
}

void PageBuilder::separator_row(int baseline, const LineStyle& st) {
    const auto seps = available("-=_*~.", spec_.special_chars);
    if (seps.empty()) return;
    const char c = seps[static_cast<size_t>(rng_.uniform_int(0, int(seps.size()) - 1))];
    const int adv = std::max(1, st.advance(c));
    const int span = right_ - left_;
    const int start = left_ + static_cast<int>(rng_.uniform(0.0, 0.3) * span);
    const int len = std::max(3, static_cast<int>(rng_.uniform(0.4, 1.0) * (right_ - start)) / adv);
    std::string run(static_cast<size_t>(len), c);
    while (!run.empty() && start + word_width(run, st) > right_) run.pop_back();
    if (run.empty()) return;
    place_word(run, start, baseline, st, next_word_++);
}

bool PageBuilder::layout() {
    const double margin_x = rng_.uniform(0.03, 0.08) * spec_.width;
    const double margin_y = rng_.uniform(0.03, 0.08) * spec_.height;
    left_ = static_cast<int>(margin_x);
    right_ = spec_.width - static_cast<int>(margin_x);
    const int bottom = spec_.height - static_cast<int>(margin_y);
    double top = margin_y;
    int text_lines = 0;
    while (spec_.max_lines == 0 || text_lines < spec_.max_lines) {
        const LineStyle st = sample_style();
        // Baseline-to-top-of-next-line leading, so the gap below descenders never depends on the next style.
        const double leading = (rng_.uniform(spec_.line_pitch.lo, spec_.line_pitch.hi) - 1.0) * st.cap_height;
        const int baseline = static_cast<int>(std::lround(top + st.cap_height));
        if (baseline + 0.4 * st.cap_height > bottom) break;
        if (!text_line(baseline, st)) break;
        ++text_lines;
        top = baseline + leading;
        if (rng_.bernoulli(spec_.rule_line_prob)) {
            const int y = static_cast<int>(std::lround(baseline + 0.6 * leading));
            const int x0 = left_ + static_cast<int>(rng_.uniform(0.0, 0.3) * (right_ - left_));
            const int x1 = right_ - static_cast<int>(rng_.uniform(0.0, 0.3) * (right_ - left_));
            if (y < bottom) rules_.push_back({{x0, y}, {x1, y}});
        }
        if (rng_.bernoulli(spec_.separator_row_prob)) {
            const int sep_baseline = static_cast<int>(std::lround(top + st.cap_height));
            if (sep_baseline + 0.4 * st.cap_height <= bottom) {
                separator_row(sep_baseline, st);
                top = sep_baseline + leading;
            }
        }
    }
    if (text_lines > 0 && rng_.bernoulli(spec_.rule_line_prob)) {
        // Vertical frame line beside the text block.
        const int x = std::max(1, left_ - 3);
        rules_.push_back({{x, static_cast<int>(margin_y)}, {x, static_cast<int>(top)}});
    }
    return text_lines > 0;
}

void PageBuilder::draw_rules() {
    if (rules_.empty()) return;
    cv::Mat m = detail::to_mat(page_image_);
    for (const auto& [a, b] : rules_) {
        const double ink = rng_.uniform(spec_.ink.lo, spec_.ink.hi);
        cv::line(m, a, b, cv::Scalar(ink), rng_.uniform_int(1, 2), cv::LINE_AA);
    }
    page_image_ = detail::from_mat(m);
}

}  // namespace

int resolve_font(const std::string& name) {
    std::string base = name;
    int flags = 0;
    constexpr std::string_view kItalic = "_italic";
    if (base.size() > kItalic.size() && base.ends_with(kItalic)) {
        base.resize(base.size() - kItalic.size());
        flags = cv::FONT_ITALIC;
    }
    static const std::pair<const char*, int> kFaces[] = {
        {"simplex", cv::FONT_HERSHEY_SIMPLEX},
        {"plain", cv::FONT_HERSHEY_PLAIN},
        {"duplex", cv::FONT_HERSHEY_DUPLEX},
        {"complex", cv::FONT_HERSHEY_COMPLEX},
        {"triplex", cv::FONT_HERSHEY_TRIPLEX},
        {"complex_small", cv::FONT_HERSHEY_COMPLEX_SMALL},
        {"script_simplex", cv::FONT_HERSHEY_SCRIPT_SIMPLEX},
        {"script_complex", cv::FONT_HERSHEY_SCRIPT_COMPLEX},
    };
    for (const auto& [n, face] : kFaces)
        if (base == n) return face | flags;
    throw ConfigError("cannot load font '" + name + "'");
}

void SynthSpec::validate() const {
    require(width >= 64 && height >= 64, "page dimensions must be >= 64");
    require(!font_pool.fonts.empty(), "font_pool must not be empty");
    for (const auto& f : font_pool.fonts) resolve_font(f);
    require(font_pool.height_px.lo >= 4.0 && font_pool.height_px.lo <= font_pool.height_px.hi,
            "font_pool.height_px must satisfy 4 <= lo <= hi");
    require(is_probability(separator_row_prob), "separator_row_prob must be in [0,1]");
    require(is_probability(rule_line_prob), "rule_line_prob must be in [0,1]");
    require(is_probability(bold_prob), "bold_prob must be in [0,1]");
    require(is_probability(bullet_prob), "bullet_prob must be in [0,1]");
    require(is_probability(isolated_special_prob), "isolated_special_prob must be in [0,1]");
    require(word_gap.lo > 0 && word_gap.lo <= word_gap.hi, "word_gap must satisfy 0 < lo <= hi");
    require(line_pitch.lo >= 1.0 && line_pitch.lo <= line_pitch.hi, "line_pitch must satisfy 1 <= lo <= hi");
    require(ink.lo >= 0 && ink.lo <= ink.hi && ink.hi <= 1, "ink must satisfy 0 <= lo <= hi <= 1");
    require(max_lines >= 0, "max_lines must be >= 0");
    const NoiseSpec& n = noise;
    require(n.dot_density >= 0, "noise.dot_density must be >= 0");
    require(n.short_line_count.lo >= 0 && n.short_line_count.lo <= n.short_line_count.hi,
            "noise.short_line_count must satisfy 0 <= lo <= hi");
    require(n.blur_sigma.lo >= 0 && n.blur_sigma.lo <= n.blur_sigma.hi, "noise.blur_sigma must satisfy 0 <= lo <= hi");
    require(is_probability(n.salt_pepper_prob), "noise.salt_pepper_prob must be in [0,1]");
    require(is_probability(n.background_texture_strength), "noise.background_texture_strength must be in [0,1]");
    require(n.jpeg_quality.lo >= 0 && n.jpeg_quality.lo <= n.jpeg_quality.hi && n.jpeg_quality.hi <= 100,
            "noise.jpeg_quality must satisfy 0 <= lo <= hi <= 100");
    const DistortionSpec& d = distortion;
    require(d.max_rotation_deg >= 0 && d.max_perspective_jitter >= 0 && d.elastic_strength >= 0,
            "distortion bounds must be non-negative");
    require(d.elastic_strength <= 1, "distortion.elastic_strength must be in [0,1]");
}

TracedPage generate_page_traced(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    for (int attempt = 0; attempt < kMaxLayoutAttempts; ++attempt) {
        Rng layout_rng = rng.fork(static_cast<std::uint64_t>(attempt));
        PageBuilder builder(spec, layout_rng);
        if (!builder.layout()) continue;
        TracedPage traced = std::move(builder).finish();
        const std::uint64_t distort_seed = layout_rng.next();
        const std::uint64_t noise_seed = layout_rng.next();
        traced.page = apply_distortion(traced.page, spec.distortion, distort_seed);
        traced.page = apply_noise(traced.page, spec.noise, noise_seed);
        return traced;
    }
    throw Error("synth: layout overflow after " + std::to_string(kMaxLayoutAttempts) +
                " attempts (font too large for the page?)");
}

PageSample generate_page(const SynthSpec& spec, std::uint64_t seed) { return generate_page_traced(spec, seed).page; }

PageSample warp_page(const PageSample& page, const Homography& h) {
    cv::Mat dst;
    cv::warpPerspective(detail::to_mat(page.image), dst, detail::to_cv_homography(h),
                        cv::Size(page.width(), page.height()), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(1.0));
    PageSample out;
    out.image = detail::from_mat(dst);
    for (const CharAnnotation& c : page.chars) {
        CharAnnotation moved = c;
        moved.box = clip_box(transform_box(c.box, h), page.width(), page.height());
        if (moved.box.valid()) out.chars.push_back(moved);
    }
    return out;
}

namespace {

PageSample apply_elastic(const PageSample& page, double strength, Rng& rng) {
    const int w = page.width(), h = page.height();
    cv::Mat dx(h, w, CV_32F), dy(h, w, CV_32F);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            dx.at<float>(y, x) = static_cast<float>(rng.normal());
            dy.at<float>(y, x) = static_cast<float>(rng.normal());
        }
    const double sigma = 0.06 * std::min(w, h);
    cv::GaussianBlur(dx, dx, cv::Size(0, 0), sigma);
    cv::GaussianBlur(dy, dy, cv::Size(0, 0), sigma);
    double mx = 0.0, my = 0.0;
    cv::minMaxLoc(cv::abs(dx), nullptr, &mx);
    cv::minMaxLoc(cv::abs(dy), nullptr, &my);
    const double amplitude = strength * 0.012 * std::min(w, h);
    const double norm = std::max({mx, my, 1e-12});
    dx *= amplitude / norm;
    dy *= amplitude / norm;

    cv::Mat map_x(h, w, CV_32F), map_y(h, w, CV_32F);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            map_x.at<float>(y, x) = static_cast<float>(x) + dx.at<float>(y, x);
            map_y.at<float>(y, x) = static_cast<float>(y) + dy.at<float>(y, x);
        }
    cv::Mat dst;
    cv::remap(detail::to_mat(page.image), dst, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(1.0));

    // dst(p) = src(p + d(p)), so a source point s lands near s - d(s).
    auto move = [&](double px, double py) {
        const int ix = std::clamp(static_cast<int>(px), 0, w - 1);
        const int iy = std::clamp(static_cast<int>(py), 0, h - 1);
        return Point{px - dx.at<float>(iy, ix), py - dy.at<float>(iy, ix)};
    };
    PageSample out;
    out.image = detail::from_mat(dst);
    for (const CharAnnotation& c : page.chars) {
        const Box& b = c.box;
        const Point cx = b.center();
        const std::array<Point, 8> pts{move(b.x0, b.y0), move(b.x1, b.y0), move(b.x1, b.y1), move(b.x0, b.y1),
                                       move(cx.x, b.y0), move(cx.x, b.y1), move(b.x0, cx.y), move(b.x1, cx.y)};
        Box moved{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
        for (const Point& p : pts) moved = box_union(moved, Box{p.x, p.y, p.x, p.y});
        CharAnnotation a = c;
        a.box = clip_box(moved, w, h);
        if (a.box.valid()) out.chars.push_back(a);
    }
    return out;
}

}  // namespace

PageSample apply_distortion(const PageSample& page, const DistortionSpec& d, std::uint64_t seed) {
    if (d.max_rotation_deg == 0.0 && d.max_perspective_jitter == 0.0 && d.elastic_strength == 0.0) return page;
    Rng rng(seed);
    const double w = page.width(), h = page.height();
    Homography hom;
    if (d.max_rotation_deg > 0.0) {
        const double deg = rng.uniform(-d.max_rotation_deg, d.max_rotation_deg);
        hom = Homography::rotation(deg * M_PI / 180.0, {w / 2.0, h / 2.0});
    }
    if (d.max_perspective_jitter > 0.0) {
        const std::array<Point, 4> src{Point{0, 0}, Point{w, 0}, Point{w, h}, Point{0, h}};
        std::array<Point, 4> dst = src;
        const double j = d.max_perspective_jitter;
        for (Point& p : dst) {
            p.x += rng.uniform(-j, j) * w;
            p.y += rng.uniform(-j, j) * h;
        }
        hom = Homography::from_correspondences(src, dst) * hom;
    }
    PageSample out = (d.max_rotation_deg > 0.0 || d.max_perspective_jitter > 0.0) ? warp_page(page, hom) : page;
    if (d.elastic_strength > 0.0) out = apply_elastic(out, d.elastic_strength, rng);
    return out;
}

PageSample apply_noise(const PageSample& page, const NoiseSpec& n, std::uint64_t seed) {
    Rng rng(seed);
    PageSample out = page;
    const int w = page.width(), h = page.height();
    cv::Mat m = detail::to_mat(page.image);
    bool touched = false;

    if (n.background_texture_strength > 0.0) {
        cv::Mat coarse(6, 6, CV_32F);
        for (int y = 0; y < coarse.rows; ++y)
            for (int x = 0; x < coarse.cols; ++x) coarse.at<float>(y, x) = static_cast<float>(rng.uniform());
        cv::Mat field;
        cv::resize(coarse, field, cv::Size(w, h), 0, 0, cv::INTER_CUBIC);
        const auto s = static_cast<float>(n.background_texture_strength);
        for (int y = 0; y < h; ++y) {
            float* row = m.ptr<float>(y);
            const float* f = field.ptr<float>(y);
            for (int x = 0; x < w; ++x)
                row[x] = row[x] * (1.0f - 0.25f * s * std::clamp(f[x], 0.0f, 1.0f)) +
                         0.03f * s * static_cast<float>(rng.normal());
        }
        touched = true;
    }

    const std::uint64_t dots = rng.poisson(n.dot_density * w * h / 1e6);
    for (std::uint64_t i = 0; i < dots; ++i) {
        const cv::Point c(rng.uniform_int(0, w - 1), rng.uniform_int(0, h - 1));
        cv::circle(m, c, rng.uniform_int(0, 1), cv::Scalar(rng.uniform(0.0, 0.4)), cv::FILLED, cv::LINE_8);
        touched = true;
    }

    const int lines = rng.uniform_int(n.short_line_count.lo, n.short_line_count.hi);
    for (int i = 0; i < lines; ++i) {
        const cv::Point2d a(rng.uniform(0, w), rng.uniform(0, h));
        const double len = rng.uniform(3.0, 3.0 + 0.06 * std::min(w, h));
        const double ang = rng.uniform(0.0, M_PI);
        const cv::Point2d b = a + cv::Point2d(len * std::cos(ang), len * std::sin(ang));
        cv::line(m, cv::Point(a), cv::Point(b), cv::Scalar(rng.uniform(0.0, 0.5)), 1, cv::LINE_AA);
        touched = true;
    }

    if (n.blur_sigma.hi > 0.0) {
        const double sigma = rng.uniform(n.blur_sigma.lo, n.blur_sigma.hi);
        if (sigma > 0.05) {
            cv::GaussianBlur(m, m, cv::Size(0, 0), sigma);
            touched = true;
        }
    }

    if (n.jpeg_quality.hi > 0) {
        const int q = rng.uniform_int(std::max(1, n.jpeg_quality.lo), n.jpeg_quality.hi);
        cv::Mat u8, decoded;
        m.convertTo(u8, CV_8U, 255.0);
        std::vector<std::uint8_t> buf;
        cv::imencode(".jpg", u8, buf, {cv::IMWRITE_JPEG_QUALITY, q});
        decoded = cv::imdecode(buf, cv::IMREAD_GRAYSCALE);
        decoded.convertTo(m, CV_32F, 1.0 / 255.0);
        touched = true;
    }

    if (n.salt_pepper_prob > 0.0) {
        for (int y = 0; y < h; ++y) {
            float* row = m.ptr<float>(y);
            for (int x = 0; x < w; ++x)
                if (rng.bernoulli(n.salt_pepper_prob)) row[x] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        }
        touched = true;
    }

    if (!touched) return out;
    cv::min(cv::max(m, 0.0), 1.0, m);
    out.image = detail::from_mat(m);
    return out;
}

}  // namespace docdet
