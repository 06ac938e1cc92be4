#include "docdet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "docdet/error.hpp"
#include "docdet/random.hpp"

namespace docdet {

using nlohmann::json;

void ModelConfig::validate() const {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("model channel counts must be positive");
    if (level_channels.size() != 4)
        throw ConfigError("model needs exactly 4 encoder levels, got " + std::to_string(level_channels.size()));
    for (int c : level_channels)
        if (c < 1) throw ConfigError("model level widths must be positive");
    if (!(norm_momentum > 0.0 && norm_momentum <= 1.0)) throw ConfigError("norm_momentum must be in (0,1]");
    if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be > 0");
}

void to_json(json& j, const ModelConfig& c) {
    j = {{"in_channels", c.in_channels},
         {"level_channels", c.level_channels},
         {"out_channels", c.out_channels},
         {"norm", c.norm == NormKind::Batch ? "batch" : "none"},
         {"norm_momentum", c.norm_momentum},
         {"norm_eps", c.norm_eps}};
}

void from_json(const json& j, ModelConfig& c) {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.level_channels = j.value("level_channels", c.level_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    const std::string norm = j.value("norm", std::string("batch"));
    if (norm == "batch")
        c.norm = NormKind::Batch;
    else if (norm == "none")
        c.norm = NormKind::None;
    else
        throw ConfigError("model norm must be 'batch' or 'none'");
    c.norm_momentum = j.value("norm_momentum", c.norm_momentum);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// im2col blocks hold about this many output pixels.
constexpr int kBlockPixels = 4096;

enum class Init { He, Zero, One, HeadBias, Xavier };

struct Spec {
    std::string name;
    std::vector<int> shape;
    Init init = Init::Zero;
    int fan_in = 1;
};

struct UnitIndex {
    int cin = 0, cout = 0;
    int weight = -1, bias = -1, gamma = -1, beta = -1;
    int mean = -1, var = -1;  // buffer indices
};

struct UpIndex {
    int cin = 0, cout = 0;
    int weight = -1, bias = -1;
};

// Parameter and buffer order of a config. Units: encoder levels shallowest first (two each),
// then decoder levels deepest first (two each). ups[i] feeds decoder level levels - 2 - i.
struct Layout {
    std::vector<UnitIndex> units;
    std::vector<UpIndex> ups;
    int head_weight = -1, head_bias = -1, head_cin = 0, head_cout = 0;
    std::vector<Spec> params;
    std::vector<Spec> buffers;
    int levels = 0;
};

Layout make_layout(const ModelConfig& cfg) {
    Layout L;
    L.levels = static_cast<int>(cfg.level_channels.size());
    auto add = [](std::vector<Spec>& v, std::string name, std::vector<int> shape, Init init, int fan_in = 1) {
        v.push_back({std::move(name), std::move(shape), init, fan_in});
        return static_cast<int>(v.size()) - 1;
    };
    auto unit = [&](const std::string& prefix, int k, int cin, int cout) {
        UnitIndex u;
        u.cin = cin;
        u.cout = cout;
        const std::string conv = prefix + ".conv" + std::to_string(k);
        u.weight = add(L.params, conv + ".weight", {cout, cin, 3, 3}, Init::He, cin * 9);
        u.bias = add(L.params, conv + ".bias", {cout}, Init::Zero);
        if (cfg.norm == NormKind::Batch) {
            const std::string norm = prefix + ".norm" + std::to_string(k);
            u.gamma = add(L.params, norm + ".weight", {cout}, Init::One);
            u.beta = add(L.params, norm + ".bias", {cout}, Init::Zero);
            u.mean = add(L.buffers, norm + ".running_mean", {cout}, Init::Zero);
            u.var = add(L.buffers, norm + ".running_var", {cout}, Init::One);
        }
        L.units.push_back(u);
    };
    int cin = cfg.in_channels;
    for (int l = 0; l < L.levels; ++l) {
        const int c = cfg.level_channels[static_cast<size_t>(l)];
        unit("enc" + std::to_string(l), 1, cin, c);
        unit("enc" + std::to_string(l), 2, c, c);
        cin = c;
    }
    for (int l = L.levels - 2; l >= 0; --l) {
        const int c = cfg.level_channels[static_cast<size_t>(l)];
        const std::string prefix = "dec" + std::to_string(l);
        UpIndex up;
        up.cin = cin;
        up.cout = c;
        up.weight = add(L.params, prefix + ".up.weight", {cin, c, 2, 2}, Init::He, cin);
        up.bias = add(L.params, prefix + ".up.bias", {c}, Init::Zero);
        L.ups.push_back(up);
        unit(prefix, 1, 2 * c, c);
        unit(prefix, 2, c, c);
        cin = c;
    }
    L.head_cin = cin;
    L.head_cout = cfg.out_channels;
    L.head_weight = add(L.params, "head.weight", {cfg.out_channels, cin, 1, 1}, Init::Xavier, cin);
    L.head_bias = add(L.params, "head.bias", {cfg.out_channels}, Init::HeadBias);
    return L;
}

size_t numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

// ---- 3x3 convolution, stride 1, zero padding 1 ----

template <typename T>
void im2col(const Tensor<T>& x, int n, int y0, int rows, RowMat<T>& col) {
    const int W = x.width, H = x.height;
    col.resize(static_cast<Eigen::Index>(x.channels) * 9, static_cast<Eigen::Index>(rows) * W);
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.plane(c, n);
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col.row(c * 9 + ky * 3 + kx).data();
                for (int r = 0; r < rows; ++r) {
                    T* d = dst + static_cast<size_t>(r) * W;
                    const int sy = y0 + r + ky - 1;
                    if (sy < 0 || sy >= H) {
                        std::fill(d, d + W, T(0));
                        continue;
                    }
                    const T* s = src + static_cast<size_t>(sy) * W;
                    if (kx == 1) {
                        std::memcpy(d, s, sizeof(T) * W);
                    } else if (kx == 0) {
                        d[0] = T(0);
                        std::memcpy(d + 1, s, sizeof(T) * (W - 1));
                    } else {
                        std::memcpy(d, s + 1, sizeof(T) * (W - 1));
                        d[W - 1] = T(0);
                    }
                }
            }
    }
}

template <typename T>
void col2im_add(const RowMat<T>& col, int n, int y0, int rows, Tensor<T>& dx) {
    const int W = dx.width, H = dx.height;
    for (int c = 0; c < dx.channels; ++c) {
        T* dst = dx.plane(c, n);
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col.row(c * 9 + ky * 3 + kx).data();
                for (int r = 0; r < rows; ++r) {
                    const int sy = y0 + r + ky - 1;
                    if (sy < 0 || sy >= H) continue;
                    const T* s = src + static_cast<size_t>(r) * W;
                    T* d = dst + static_cast<size_t>(sy) * W;
                    if (kx == 1) {
                        for (int x = 0; x < W; ++x) d[x] += s[x];
                    } else if (kx == 0) {
                        for (int x = 1; x < W; ++x) d[x - 1] += s[x];
                    } else {
                        for (int x = 0; x + 1 < W; ++x) d[x + 1] += s[x];
                    }
                }
            }
    }
}

int rows_per_block(int width) { return std::max(1, kBlockPixels / std::max(1, width)); }

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const T* w, const T* b, int cout) {
    Tensor<T> y(cout, x.batch, x.height, x.width);
    const ConstMap<T> wm(w, cout, static_cast<Eigen::Index>(x.channels) * 9);
    const int R = rows_per_block(x.width);
    RowMat<T> col;
    for (int n = 0; n < x.batch; ++n)
        for (int y0 = 0; y0 < x.height; y0 += R) {
            const int rows = std::min(R, x.height - y0);
            im2col(x, n, y0, rows, col);
            StridedMap<T> out(y.plane(0, n) + static_cast<size_t>(y0) * x.width, cout,
                              static_cast<Eigen::Index>(rows) * x.width,
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(y.channel_size())));
            out.noalias() = wm * col;
            for (int c = 0; c < cout; ++c) out.row(c).array() += b[c];
        }
    return y;
}

// Eigen's vectorized reductions depend on pointer alignment; a plain loop keeps gradients reproducible.
template <typename Row>
auto ordered_sum(const Row& row) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) s += static_cast<double>(row(i));
    return static_cast<typename Row::Scalar>(s);
}

template <typename T>
Tensor<T> conv3x3_backward(const Tensor<T>& x, const Tensor<T>& dy, const T* w, T* dw, T* db) {
    const int cout = dy.channels;
    const Eigen::Index k = static_cast<Eigen::Index>(x.channels) * 9;
    const ConstMap<T> wm(w, cout, k);
    Map<T> dwm(dw, cout, k);
    Tensor<T> dx(x.channels, x.batch, x.height, x.width);
    const int R = rows_per_block(x.width);
    RowMat<T> col, dcol;
    for (int n = 0; n < x.batch; ++n)
        for (int y0 = 0; y0 < x.height; y0 += R) {
            const int rows = std::min(R, x.height - y0);
            im2col(x, n, y0, rows, col);
            const ConstStridedMap<T> g(dy.plane(0, n) + static_cast<size_t>(y0) * x.width, cout,
                                       static_cast<Eigen::Index>(rows) * x.width,
                                       Eigen::OuterStride<>(static_cast<Eigen::Index>(dy.channel_size())));
            dwm.noalias() += g * col.transpose();
            for (int c = 0; c < cout; ++c) db[c] += ordered_sum(g.row(c));
            dcol.noalias() = wm.transpose() * g;
            col2im_add(dcol, n, y0, rows, dx);
        }
    return dx;
}

// ---- normalization + relu ----

template <typename T>
struct NormStats {
    std::vector<T> mean, inv_std, var;
};

template <typename T>
NormStats<T> batch_stats(const Tensor<T>& x, double eps) {
    NormStats<T> s;
    const size_t m = x.channel_size();
    for (int c = 0; c < x.channels; ++c) {
        const T* p = x.channel(c);
        double sum = 0.0;
        for (size_t i = 0; i < m; ++i) sum += p[i];
        const double mean = sum / static_cast<double>(m);
        double sq = 0.0;
        for (size_t i = 0; i < m; ++i) sq += (p[i] - mean) * (p[i] - mean);
        const double var = sq / static_cast<double>(m);
        s.mean.push_back(static_cast<T>(mean));
        s.inv_std.push_back(static_cast<T>(1.0 / std::sqrt(var + eps)));
        s.var.push_back(static_cast<T>(m > 1 ? sq / static_cast<double>(m - 1) : var));
    }
    return s;
}

// y = relu(gamma * (x - mean) * inv_std + beta); gamma/beta null means identity norm.
template <typename T>
Tensor<T> norm_relu(const Tensor<T>& x, const NormStats<T>& s, const T* gamma, const T* beta) {
    Tensor<T> y(x.channels, x.batch, x.height, x.width);
    const size_t m = x.channel_size();
    for (int c = 0; c < x.channels; ++c) {
        const T* p = x.channel(c);
        T* q = y.channel(c);
        if (!gamma) {
            for (size_t i = 0; i < m; ++i) q[i] = std::max(p[i], T(0));
            continue;
        }
        const T scale = gamma[c] * s.inv_std[c];
        const T shift = beta[c] - s.mean[c] * scale;
        for (size_t i = 0; i < m; ++i) q[i] = std::max(p[i] * scale + shift, T(0));
    }
    return y;
}

// ---- pooling / upsampling / concat ----

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, std::vector<std::uint8_t>* argmax) {
    const int h = x.height / 2, w = x.width / 2;
    Tensor<T> y(x.channels, x.batch, h, w);
    if (argmax) argmax->assign(y.size(), 0);
    size_t o = 0;
    for (int c = 0; c < x.channels; ++c)
        for (int n = 0; n < x.batch; ++n) {
            const T* p = x.plane(c, n);
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx, ++o) {
                    const T* a = p + static_cast<size_t>(2 * yy) * x.width + 2 * xx;
                    const T v[4] = {a[0], a[1], a[x.width], a[x.width + 1]};
                    std::uint8_t best = 0;
                    for (std::uint8_t k = 1; k < 4; ++k)
                        if (v[k] > v[best]) best = k;
                    y.data[o] = v[best];
                    if (argmax) (*argmax)[o] = best;
                }
        }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax, int height, int width) {
    Tensor<T> dx(dy.channels, dy.batch, height, width);
    size_t o = 0;
    for (int c = 0; c < dy.channels; ++c)
        for (int n = 0; n < dy.batch; ++n) {
            T* p = dx.plane(c, n);
            for (int yy = 0; yy < dy.height; ++yy)
                for (int xx = 0; xx < dy.width; ++xx, ++o) {
                    const int k = argmax[o];
                    p[static_cast<size_t>(2 * yy + k / 2) * width + 2 * xx + k % 2] += dy.data[o];
                }
        }
    return dx;
}

// 2x2 stride-2 transposed convolution; weight [cin][cout][2][2].
template <typename T>
Tensor<T> upconv(const Tensor<T>& x, const T* w, const T* b, int cout) {
    const Eigen::Index p = static_cast<Eigen::Index>(x.channel_size());
    const ConstMap<T> wm(w, x.channels, static_cast<Eigen::Index>(cout) * 4);
    const ConstMap<T> xm(x.data.data(), x.channels, p);
    const RowMat<T> z = wm.transpose() * xm;
    Tensor<T> y(cout, x.batch, 2 * x.height, 2 * x.width);
    for (int c = 0; c < cout; ++c)
        for (int k = 0; k < 4; ++k) {
            const T* zr = z.row(c * 4 + k).data();
            const int dy = k / 2, dx = k % 2;
            for (int n = 0; n < x.batch; ++n) {
                T* out = y.plane(c, n);
                const T* zn = zr + n * x.plane();
                for (int yy = 0; yy < x.height; ++yy)
                    for (int xx = 0; xx < x.width; ++xx)
                        out[static_cast<size_t>(2 * yy + dy) * y.width + 2 * xx + dx] =
                            zn[static_cast<size_t>(yy) * x.width + xx] + b[c];
            }
        }
    return y;
}

template <typename T>
Tensor<T> upconv_backward(const Tensor<T>& x, const Tensor<T>& dy, const T* w, T* dw, T* db) {
    const int cout = dy.channels;
    const Eigen::Index p = static_cast<Eigen::Index>(x.channel_size());
    RowMat<T> dz(static_cast<Eigen::Index>(cout) * 4, p);
    for (int c = 0; c < cout; ++c) {
        for (size_t i = 0; i < dy.channel_size(); ++i) db[c] += dy.channel(c)[i];
        for (int k = 0; k < 4; ++k) {
            T* zr = dz.row(c * 4 + k).data();
            const int oy = k / 2, ox = k % 2;
            for (int n = 0; n < x.batch; ++n) {
                const T* g = dy.plane(c, n);
                T* zn = zr + n * x.plane();
                for (int yy = 0; yy < x.height; ++yy)
                    for (int xx = 0; xx < x.width; ++xx)
                        zn[static_cast<size_t>(yy) * x.width + xx] =
                            g[static_cast<size_t>(2 * yy + oy) * dy.width + 2 * xx + ox];
            }
        }
    }
    const ConstMap<T> wm(w, x.channels, static_cast<Eigen::Index>(cout) * 4);
    Map<T> dwm(dw, x.channels, static_cast<Eigen::Index>(cout) * 4);
    const ConstMap<T> xm(x.data.data(), x.channels, p);
    dwm.noalias() += xm * dz.transpose();
    Tensor<T> dx(x.channels, x.batch, x.height, x.width);
    Map<T>(dx.data.data(), x.channels, p).noalias() = wm * dz;
    return dx;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out;
    out.channels = a.channels + b.channels;
    out.batch = a.batch;
    out.height = a.height;
    out.width = a.width;
    out.data.reserve(a.size() + b.size());
    out.data.insert(out.data.end(), a.data.begin(), a.data.end());
    out.data.insert(out.data.end(), b.data.begin(), b.data.end());
    return out;
}

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& t, int first, int count) {
    Tensor<T> out(count, t.batch, t.height, t.width);
    std::copy_n(t.channel(first), out.size(), out.data.begin());
    return out;
}

template <typename T>
T sigmoid_open(T z) {
    constexpr T lo = std::numeric_limits<T>::epsilon();
    const T s = T(1) / (T(1) + std::exp(-z));
    return std::clamp(s, lo, T(1) - lo);
}

}  // namespace

size_t parameter_count(const ModelConfig& config) {
    config.validate();
    size_t n = 0;
    for (const Spec& s : make_layout(config).params) n += numel(s.shape);
    return n;
}

template <typename T>
UNet<T> UNet<T>::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const Layout L = make_layout(config);
    UNet<T> m;
    m.config_ = config;
    Rng rng(seed);
    auto make = [&](const Spec& s) {
        Parameter<T> p{s.name, s.shape, std::vector<T>(numel(s.shape))};
        switch (s.init) {
            case Init::He: {
                const double sd = std::sqrt(2.0 / s.fan_in);
                for (T& v : p.value) v = static_cast<T>(rng.normal(0.0, sd));
                break;
            }
            case Init::Xavier: {
                const double sd = std::sqrt(1.0 / s.fan_in);
                for (T& v : p.value) v = static_cast<T>(rng.normal(0.0, sd));
                break;
            }
            case Init::One: std::fill(p.value.begin(), p.value.end(), T(1)); break;
            // Output maps are mostly background; start near it.
            case Init::HeadBias: std::fill(p.value.begin(), p.value.end(), T(-2)); break;
            case Init::Zero: break;
        }
        return p;
    };
    for (const Spec& s : L.params) m.params_.push_back(make(s));
    for (const Spec& s : L.buffers) m.buffers_.push_back(make(s));
    return m;
}

template <typename T>
size_t UNet<T>::parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <typename T>
Gradients<T> UNet<T>::zero_gradients() const {
    Gradients<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.size(), T(0));
    return g;
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& input, NormMode mode, Tape<T>* tape) const {
    const Layout L = make_layout(config_);
    if (input.channels != config_.in_channels)
        throw Error("forward: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                    std::to_string(input.channels));
    const int mult = config_.size_multiple();
    if (input.height % mult || input.width % mult || input.height == 0 || input.width == 0 || input.batch == 0)
        throw Error("forward: input " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                    " must be non-empty with sides divisible by " + std::to_string(mult) +
                    "; pad with white (1.0) and crop the output");
    auto P = [&](int i) { return params_[static_cast<size_t>(i)].value.data(); };
    auto B = [&](int i) { return buffers_[static_cast<size_t>(i)].value.data(); };

    if (tape) {
        *tape = Tape<T>{};
        tape->mode = mode;
        tape->input_channels = input.channels;
        tape->units.reserve(L.units.size());
    }
    Tensor<T> storage;
    const Tensor<T>* cur = &input;

    auto run_unit = [&](size_t k, bool keep_input) {
        const UnitIndex& u = L.units[k];
        Tensor<T> pre = conv3x3(*cur, P(u.weight), P(u.bias), u.cout);
        NormStats<T> st;
        const T* gamma = nullptr;
        const T* beta = nullptr;
        if (u.gamma >= 0) {
            gamma = P(u.gamma);
            beta = P(u.beta);
            if (mode == NormMode::Batch) {
                st = batch_stats(pre, config_.norm_eps);
            } else {
                const T* rm = B(u.mean);
                const T* rv = B(u.var);
                for (int c = 0; c < u.cout; ++c) {
                    st.mean.push_back(rm[c]);
                    st.inv_std.push_back(static_cast<T>(1.0 / std::sqrt(double(rv[c]) + config_.norm_eps)));
                }
            }
        }
        Tensor<T> out = norm_relu(pre, st, gamma, beta);
        if (tape) {
            auto& rec = tape->units.emplace_back();
            if (keep_input) rec.input = *cur;
            rec.pre_norm = std::move(pre);
            rec.mean = std::move(st.mean);
            rec.inv_std = std::move(st.inv_std);
            rec.batch_var = std::move(st.var);
            rec.output = std::move(out);
            cur = &rec.output;
        } else {
            storage = std::move(out);
            cur = &storage;
        }
    };

    std::vector<Tensor<T>> skip_store;
    skip_store.reserve(static_cast<size_t>(L.levels));
    std::vector<const Tensor<T>*> skips;
    size_t k = 0;
    for (int l = 0; l < L.levels; ++l) {
        if (l > 0) {
            std::vector<std::uint8_t>* arg = nullptr;
            if (tape) arg = &tape->pool_argmax.emplace_back();
            Tensor<T> pooled = maxpool2(*cur, arg);
            storage = std::move(pooled);
            cur = &storage;
        }
        run_unit(k++, true);
        run_unit(k++, false);
        if (l < L.levels - 1) {
            if (tape) {
                skips.push_back(cur);
            } else {
                skip_store.push_back(std::move(storage));
                skips.push_back(&skip_store.back());
                cur = skips.back();
            }
        }
    }
    for (size_t i = 0; i < L.ups.size(); ++i) {
        const UpIndex& up = L.ups[i];
        const int level = L.levels - 2 - static_cast<int>(i);
        if (tape) tape->up_inputs.push_back(*cur);
        Tensor<T> u = upconv(*cur, P(up.weight), P(up.bias), up.cout);
        storage = concat(u, *skips[static_cast<size_t>(level)]);
        cur = &storage;
        run_unit(k++, true);
        run_unit(k++, false);
    }

    const ConstMap<T> wh(P(L.head_weight), L.head_cout, L.head_cin);
    const ConstMap<T> a(cur->data.data(), L.head_cin, static_cast<Eigen::Index>(cur->channel_size()));
    Tensor<T> out(L.head_cout, input.batch, input.height, input.width);
    Map<T> om(out.data.data(), L.head_cout, static_cast<Eigen::Index>(out.channel_size()));
    om.noalias() = wh * a;
    const T* hb = P(L.head_bias);
    for (int c = 0; c < L.head_cout; ++c) {
        T* q = out.channel(c);
        for (size_t i = 0; i < out.channel_size(); ++i) q[i] = sigmoid_open(q[i] + hb[c]);
    }
    if (tape) tape->output = out;
    return out;
}

template <typename T>
Tensor<T> UNet<T>::backward(const Tape<T>& tape, const Tensor<T>& grad_output, Gradients<T>* grads) const {
    const Layout L = make_layout(config_);
    if (!tape.output.same_shape(grad_output)) throw Error("backward: gradient shape differs from the recorded output");
    if (tape.units.size() != L.units.size()) throw Error("backward: tape does not belong to this model");
    Gradients<T> scratch;
    if (!grads) {
        scratch = zero_gradients();
        grads = &scratch;
    }
    auto P = [&](int i) { return params_[static_cast<size_t>(i)].value.data(); };
    auto G = [&](int i) { return (*grads)[static_cast<size_t>(i)].data(); };

    // Head: sigmoid then 1x1 conv.
    const Tensor<T>& head_in = tape.units.back().output;
    Tensor<T> dz = grad_output;
    for (size_t i = 0; i < dz.size(); ++i) {
        const T s = tape.output.data[i];
        dz.data[i] *= s * (T(1) - s);
    }
    const Eigen::Index px = static_cast<Eigen::Index>(dz.channel_size());
    const ConstMap<T> dzm(dz.data.data(), L.head_cout, px);
    const ConstMap<T> am(head_in.data.data(), L.head_cin, px);
    Map<T>(G(L.head_weight), L.head_cout, L.head_cin).noalias() += dzm * am.transpose();
    for (int c = 0; c < L.head_cout; ++c) G(L.head_bias)[c] += ordered_sum(dzm.row(c));
    Tensor<T> g(L.head_cin, head_in.batch, head_in.height, head_in.width);
    Map<T>(g.data.data(), L.head_cin, px).noalias() =
        ConstMap<T>(P(L.head_weight), L.head_cout, L.head_cin).transpose() * dzm;

    auto unit_backward = [&](size_t k, Tensor<T> grad) {
        const UnitIndex& u = L.units[k];
        const auto& rec = tape.units[k];
        const Tensor<T>& in = rec.input.data.empty() ? tape.units[k - 1].output : rec.input;
        const size_t m = grad.channel_size();
        for (size_t i = 0; i < grad.size(); ++i)
            if (!(rec.output.data[i] > T(0))) grad.data[i] = T(0);
        if (u.gamma >= 0) {
            const T* gamma = P(u.gamma);
            T* dgamma = G(u.gamma);
            T* dbeta = G(u.beta);
            for (int c = 0; c < u.cout; ++c) {
                T* gp = grad.channel(c);
                const T* x = rec.pre_norm.channel(c);
                const T mean = rec.mean[static_cast<size_t>(c)];
                const T inv = rec.inv_std[static_cast<size_t>(c)];
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t i = 0; i < m; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * (x[i] - mean) * inv;
                }
                dgamma[c] += static_cast<T>(sum_gx);
                dbeta[c] += static_cast<T>(sum_g);
                const T scale = gamma[c] * inv;
                if (tape.mode == NormMode::Batch) {
                    const T mg = static_cast<T>(sum_g / static_cast<double>(m));
                    const T mgx = static_cast<T>(sum_gx / static_cast<double>(m));
                    for (size_t i = 0; i < m; ++i) gp[i] = scale * (gp[i] - mg - (x[i] - mean) * inv * mgx);
                } else {
                    for (size_t i = 0; i < m; ++i) gp[i] *= scale;
                }
            }
        }
        return conv3x3_backward(in, grad, P(u.weight), G(u.weight), G(u.bias));
    };

    std::vector<Tensor<T>> skip_grads(static_cast<size_t>(L.levels - 1));
    size_t k = L.units.size();
    for (size_t i = L.ups.size(); i-- > 0;) {
        const UpIndex& up = L.ups[i];
        const int level = L.levels - 2 - static_cast<int>(i);
        g = unit_backward(--k, std::move(g));
        g = unit_backward(--k, std::move(g));
        skip_grads[static_cast<size_t>(level)] = channel_slice(g, up.cout, g.channels - up.cout);
        const Tensor<T> g_up = channel_slice(g, 0, up.cout);
        g = upconv_backward(tape.up_inputs[i], g_up, P(up.weight), G(up.weight), G(up.bias));
    }
    for (int l = L.levels - 1; l >= 0; --l) {
        if (l < L.levels - 1) {
            const Tensor<T>& s = skip_grads[static_cast<size_t>(l)];
            for (size_t i = 0; i < g.size(); ++i) g.data[i] += s.data[i];
        }
        g = unit_backward(--k, std::move(g));
        g = unit_backward(--k, std::move(g));
        if (l > 0) {
            const Tensor<T>& before = tape.units[k - 1].output;
            g = maxpool2_backward(g, tape.pool_argmax[static_cast<size_t>(l - 1)], before.height, before.width);
        }
    }
    return g;
}

template <typename T>
void UNet<T>::update_running_stats(const Tape<T>& tape) {
    if (tape.mode != NormMode::Batch) return;
    const Layout L = make_layout(config_);
    const T mom = static_cast<T>(config_.norm_momentum);
    for (size_t k = 0; k < L.units.size(); ++k) {
        const UnitIndex& u = L.units[k];
        if (u.mean < 0) continue;
        const auto& rec = tape.units[k];
        T* rm = buffers_[static_cast<size_t>(u.mean)].value.data();
        T* rv = buffers_[static_cast<size_t>(u.var)].value.data();
        for (int c = 0; c < u.cout; ++c) {
            rm[c] = (T(1) - mom) * rm[c] + mom * rec.mean[static_cast<size_t>(c)];
            rv[c] = (T(1) - mom) * rv[c] + mom * rec.batch_var[static_cast<size_t>(c)];
        }
    }
}

template <typename T>
template <typename U>
UNet<U> UNet<T>::cast() const {
    UNet<U> out;
    out.config_ = config_;
    auto conv = [](const std::vector<Parameter<T>>& src, std::vector<Parameter<U>>& dst) {
        for (const auto& p : src) dst.push_back({p.name, p.shape, std::vector<U>(p.value.begin(), p.value.end())});
    };
    conv(params_, out.params_);
    conv(buffers_, out.buffers_);
    return out;
}

template <typename T>
Tensor<T> batch_from_images(std::span<const Image> images) {
    if (images.empty()) return {};
    const int w = images.front().width(), h = images.front().height();
    Tensor<T> t(1, static_cast<int>(images.size()), h, w);
    for (size_t n = 0; n < images.size(); ++n) {
        if (images[n].width() != w || images[n].height() != h) throw Error("batch_from_images: image sizes differ");
        std::copy(images[n].data().begin(), images[n].data().end(), t.plane(0, static_cast<int>(n)));
    }
    return t;
}

template <typename T>
Image plane_to_image(const Tensor<T>& t, int c, int n) {
    Image img(t.width, t.height);
    const T* p = t.plane(c, n);
    std::transform(p, p + t.plane(), img.data().begin(), [](T v) { return static_cast<float>(v); });
    return img;
}

template <typename T>
Tensor<T> sample_of(const Tensor<T>& t, int n) {
    Tensor<T> out(t.channels, 1, t.height, t.width);
    for (int c = 0; c < t.channels; ++c) std::copy_n(t.plane(c, n), t.plane(), out.plane(c, 0));
    return out;
}

ScoreMaps predict_maps(const UNet<float>& model, const Image& image) {
    if (model.config().out_channels != 3 || model.config().in_channels != 1)
        throw Error("predict_maps: model must map 1 channel to 3");
    const int mult = model.config().size_multiple();
    const int w = image.width(), h = image.height();
    if (w == 0 || h == 0) throw Error("predict_maps: empty image");
    const int pw = (w + mult - 1) / mult * mult, ph = (h + mult - 1) / mult * mult;
    Tensor<float> in(1, 1, ph, pw, 1.0f);
    for (int y = 0; y < h; ++y) std::copy_n(image.row(y).data(), w, in.plane(0, 0) + static_cast<size_t>(y) * pw);
    const Tensor<float> out = model.forward(in, NormMode::Running);
    auto crop = [&](int c) {
        Image m(w, h);
        for (int y = 0; y < h; ++y) std::copy_n(out.plane(c, 0) + static_cast<size_t>(y) * pw, w, m.row(y).data());
        return m;
    };
    return {crop(0), crop(1), crop(2)};
}

template class UNet<float>;
template class UNet<double>;
template UNet<double> UNet<float>::cast<double>() const;
template UNet<float> UNet<double>::cast<float>() const;
template UNet<float> UNet<float>::cast<float>() const;
template UNet<double> UNet<double>::cast<double>() const;
template Tensor<float> batch_from_images<float>(std::span<const Image>);
template Tensor<double> batch_from_images<double>(std::span<const Image>);
template Image plane_to_image<float>(const Tensor<float>&, int, int);
template Image plane_to_image<double>(const Tensor<double>&, int, int);
template Tensor<float> sample_of<float>(const Tensor<float>&, int);
template Tensor<double> sample_of<double>(const Tensor<double>&, int);

}  // namespace docdet
