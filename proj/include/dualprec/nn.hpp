#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dualprec/compress.hpp"
#include "dualprec/data.hpp"
#include "dualprec/tensor.hpp"

namespace dualprec {

// Layer forward/backward with pluggable activation-cache strategies. The
// forward pass always propagates exact activations; the strategy only decides
// what gets cached for the backward pass. relu / pooling / dropout use their
// lossless operator caches under every strategy.

enum class Act : uint8_t { Identity, Sigmoid, Tanh, Softplus, Relu };
enum class LayerKind : uint8_t { Linear, Conv2d, BatchNorm2d, Relu, MaxPool, AvgPool, Dropout, Flatten };

inline float act_apply(Act a, float z) {
    switch (a) {
        case Act::Identity: return z;
        case Act::Sigmoid: return 1.0f / (1.0f + std::exp(-z));
        case Act::Tanh: return std::tanh(z);
        case Act::Softplus: return z > 30.0f ? z : std::log1p(std::exp(z));
        case Act::Relu: return z > 0.0f ? z : 0.0f;
    }
    return z;
}

inline float act_deriv(Act a, float z) {
    switch (a) {
        case Act::Identity: return 1.0f;
        case Act::Sigmoid: {
            float s = 1.0f / (1.0f + std::exp(-z));
            return s * (1.0f - s);
        }
        case Act::Tanh: {
            float t = std::tanh(z);
            return 1.0f - t * t;
        }
        case Act::Softplus: return 1.0f / (1.0f + std::exp(-z));
        case Act::Relu: return z > 0.0f ? 1.0f : 0.0f;
    }
    return 1.0f;
}

struct LayerSpec {
    LayerKind kind = LayerKind::Linear;
    size_t in = 0, out = 0;       // features (linear) or channels (conv2d / bn)
    size_t kernel = 0, pad = 0;   // conv2d, stride fixed at 1
    size_t pool = 0;              // pooling kernel = stride
    float drop_p = 0.0f;
    Act act = Act::Identity;      // fused activation on linear / conv2d

    static LayerSpec linear(size_t in, size_t out, Act act = Act::Identity) {
        return {LayerKind::Linear, in, out, 0, 0, 0, 0.0f, act};
    }
    static LayerSpec conv2d(size_t in, size_t out, size_t kernel, size_t pad, Act act = Act::Identity) {
        return {LayerKind::Conv2d, in, out, kernel, pad, 0, 0.0f, act};
    }
    static LayerSpec batchnorm2d(size_t channels) {
        return {LayerKind::BatchNorm2d, channels, channels, 0, 0, 0, 0.0f, Act::Identity};
    }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec maxpool(size_t k) { return {LayerKind::MaxPool, 0, 0, 0, 0, k}; }
    static LayerSpec avgpool(size_t k) { return {LayerKind::AvgPool, 0, 0, 0, 0, k}; }
    static LayerSpec dropout(float p) { return {LayerKind::Dropout, 0, 0, 0, 0, 0, p}; }
    static LayerSpec flatten() { return {LayerKind::Flatten}; }
};

struct Layer {
    LayerSpec spec;
    Tensor w, b;
    Tensor gamma, beta, running_mean, running_var;
    Tensor vw, vb, vgamma, vbeta;  // momentum buffers
};

struct Network {
    std::vector<Layer> layers;
    bool classifier = true;  // softmax cross-entropy head; its logits cache exactly
};

inline Network build_network(std::span<const LayerSpec> specs, Rng& rng) {
    Network net;
    for (const LayerSpec& s : specs) {
        Layer l;
        l.spec = s;
        if (s.kind == LayerKind::Linear || s.kind == LayerKind::Conv2d) {
            size_t fan_in = s.kind == LayerKind::Linear ? s.in : s.in * s.kernel * s.kernel;
            size_t fan_out = s.kind == LayerKind::Linear ? s.out : s.out * s.kernel * s.kernel;
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Shape ws = s.kind == LayerKind::Linear ? Shape{s.out, s.in} : Shape{s.out, s.in, s.kernel, s.kernel};
            l.w = Tensor::f32(ws);
            for (float& x : l.w.f32s()) x = static_cast<float>(rng.uniform(-limit, limit));
            l.b = Tensor::f32({s.out});
            l.vw = Tensor::f32(ws);
            l.vb = Tensor::f32({s.out});
        } else if (s.kind == LayerKind::BatchNorm2d) {
            l.gamma = Tensor::f32({s.in});
            for (float& x : l.gamma.f32s()) x = 1.0f;
            l.beta = Tensor::f32({s.in});
            l.running_mean = Tensor::f32({s.in});
            l.running_var = Tensor::f32({s.in});
            for (float& x : l.running_var.f32s()) x = 1.0f;
            l.vgamma = Tensor::f32({s.in});
            l.vbeta = Tensor::f32({s.in});
        }
        net.layers.push_back(std::move(l));
    }
    return net;
}

// --- cache strategy -----------------------------------------------------------

struct CacheStrategy {
    enum class Kind : uint8_t { Exact, Division, FixedQuant, LfcOnly, HfcOnly };
    Kind kind = Kind::Exact;
    size_t block = 8;
    int qbits = 2;

    static CacheStrategy exact() { return {Kind::Exact, 1, 8}; }
    static CacheStrategy division(size_t b, int q) { return {Kind::Division, b, q}; }
    static CacheStrategy fixed_quant(int q) { return {Kind::FixedQuant, 1, q}; }
    static CacheStrategy lfc_only(size_t b) { return {Kind::LfcOnly, b, 0}; }
    static CacheStrategy hfc_only(int q, size_t b = 8) { return {Kind::HfcOnly, b, q}; }

    void validate() const {
        if (kind == Kind::Exact) return;
        if ((kind == Kind::Division || kind == Kind::LfcOnly) && block < 1)
            throw ParamError("block size must be >= 1");
        if (kind != Kind::LfcOnly && qbits != 1 && qbits != 2 && qbits != 4 && qbits != 8)
            throw ParamError("quantization bit width must be 1/2/4/8");
    }

    std::string label() const {
        switch (kind) {
            case Kind::Exact: return "exact";
            case Kind::Division: return strf("division(B=%zu,Q=%d)", block, qbits);
            case Kind::FixedQuant: return strf("fixed_quant(Q=%d)", qbits);
            case Kind::LfcOnly: return strf("lfc_only(B=%zu)", block);
            case Kind::HfcOnly: return strf("hfc_only(Q=%d)", qbits);
        }
        return "?";
    }
};

/// Axis convention for the codec: rank-2 activations are minibatch x features
/// (one pooled axis), higher ranks are minibatch x channel x spatial...
inline int activation_spatial_ndim(const Tensor& t) {
    if (t.ndim() <= 1) return 0;
    if (t.ndim() == 2) return 1;
    return static_cast<int>(t.ndim()) - 2;
}

// --- per-layer cache ------------------------------------------------------------

struct LayerCache {
    LayerKind kind = LayerKind::Flatten;
    CacheStrategy::Kind ckind = CacheStrategy::Kind::Exact;
    Tensor exact_input;
    std::optional<CompressedActivation> comp;
    std::vector<float> bn_mean, bn_invstd;  // exact per-channel statistics
    BitMask mask;
    MaxPoolCache pool;
    Shape in_shape;
    size_t bytes = 0;

    Tensor reconstruct() const {
        if (ckind == CacheStrategy::Kind::Exact) {
            if (exact_input.numel() == 0) throw StateError("backward without a matching forward cache");
            return exact_input;
        }
        if (!comp) throw StateError("backward without a matching forward cache");
        return decompress(*comp);
    }

    void release() {
        exact_input = Tensor();
        comp.reset();
        bn_mean.clear();
        bn_invstd.clear();
        mask = BitMask();
        pool = MaxPoolCache();
    }
};

// --- dense layer math -------------------------------------------------------------

namespace detail {

inline Tensor linear_preact(const Tensor& x, const Layer& l) {
    size_t m = x.dim(0), in = l.spec.in, out = l.spec.out;
    if (x.ndim() != 2 || x.dim(1) != in)
        throw ShapeError(strf("linear layer expects [M, %zu] input", in));
    Tensor z = Tensor::f32({m, out});
    auto xs = x.f32s();
    auto ws = l.w.f32s();
    auto bs = l.b.f32s();
    auto zs = z.f32s();
    for (size_t r = 0; r < m; ++r) {
        const float* xr = xs.data() + r * in;
        float* zr = zs.data() + r * out;
        for (size_t o = 0; o < out; ++o) {
            double acc = bs[o];
            const float* wr = ws.data() + o * in;
            for (size_t i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * wr[i];
            zr[o] = static_cast<float>(acc);
        }
    }
    return z;
}

inline Tensor conv2d_preact(const Tensor& x, const Layer& l) {
    const LayerSpec& s = l.spec;
    if (x.ndim() != 4 || x.dim(1) != s.in)
        throw ShapeError(strf("conv layer expects [M, %zu, H, W] input", s.in));
    size_t m = x.dim(0), hh = x.dim(2), ww = x.dim(3);
    size_t oh = hh + 2 * s.pad - s.kernel + 1, ow = ww + 2 * s.pad - s.kernel + 1;
    Tensor z = Tensor::f32({m, s.out, oh, ow});
    auto xs = x.f32s();
    auto ws = l.w.f32s();
    auto bs = l.b.f32s();
    auto zs = z.f32s();
    long pad = static_cast<long>(s.pad);
    for (size_t bi = 0; bi < m; ++bi)
        for (size_t o = 0; o < s.out; ++o) {
            float* zp = zs.data() + (bi * s.out + o) * oh * ow;
            for (size_t y = 0; y < oh; ++y)
                for (size_t xcol = 0; xcol < ow; ++xcol) {
                    double acc = bs[o];
                    for (size_t c = 0; c < s.in; ++c) {
                        const float* xp = xs.data() + (bi * s.in + c) * hh * ww;
                        const float* wp = ws.data() + ((o * s.in + c) * s.kernel) * s.kernel;
                        for (size_t dy = 0; dy < s.kernel; ++dy) {
                            long iy = static_cast<long>(y + dy) - pad;
                            if (iy < 0 || iy >= static_cast<long>(hh)) continue;
                            for (size_t dx = 0; dx < s.kernel; ++dx) {
                                long ix = static_cast<long>(xcol + dx) - pad;
                                if (ix < 0 || ix >= static_cast<long>(ww)) continue;
                                acc += static_cast<double>(xp[iy * ww + ix]) * wp[dy * s.kernel + dx];
                            }
                        }
                    }
                    zp[y * ow + xcol] = static_cast<float>(acc);
                }
        }
    return z;
}

inline void apply_act_inplace(Tensor& z, Act a) {
    if (a == Act::Identity) return;
    for (float& v : z.f32s()) v = act_apply(a, v);
}

}  // namespace detail

// --- forward ------------------------------------------------------------------

struct ForwardResult {
    Tensor logits;
    std::vector<LayerCache> caches;
    size_t cache_bytes = 0;  // activation payload after the forward pass
};

namespace detail {

constexpr uint64_t kStreamDropout = 1;
constexpr uint64_t kStreamQuant = 2;

inline void cache_dense_input(LayerCache& cache, const Tensor& x, const CacheStrategy& st, Rng& qrng) {
    cache.ckind = st.kind;
    int sdim = activation_spatial_ndim(x);
    switch (st.kind) {
        case CacheStrategy::Kind::Exact:
            cache.exact_input = x;
            cache.bytes = 4 * x.numel();
            return;
        case CacheStrategy::Kind::Division:
            cache.comp = compress(x, sdim, st.block, st.qbits, qrng);
            break;
        case CacheStrategy::Kind::FixedQuant:
            cache.comp = compress_fixed_quant(x, sdim, st.qbits, qrng);
            break;
        case CacheStrategy::Kind::LfcOnly:
            cache.comp = compress_lfc_only(x, sdim, st.block);
            break;
        case CacheStrategy::Kind::HfcOnly:
            cache.comp = compress_hfc_only(x, sdim, st.block, st.qbits, qrng);
            break;
    }
    cache.bytes = cache.comp->payload_bytes();
}

}  // namespace detail

/// One forward pass. Exact activations always flow to the next layer; each
/// linear / conv / batchnorm input is cached per the strategy when caching is
/// on. Random streams are derived per (seed, batch counter, layer, purpose),
/// so dropout masks do not depend on the cache strategy.
inline ForwardResult forward(Network& net, const Tensor& batch, const CacheStrategy& strategy,
                             uint64_t seed, uint64_t batch_counter = 0, bool train_mode = true) {
    strategy.validate();
    ForwardResult res;
    Tensor x = batch;
    for (size_t li = 0; li < net.layers.size(); ++li) {
        Layer& l = net.layers[li];
        LayerCache cache;
        cache.kind = l.spec.kind;
        switch (l.spec.kind) {
            case LayerKind::Linear:
            case LayerKind::Conv2d: {
                if (train_mode) {
                    Rng qrng(derive_seed(seed, batch_counter, li, detail::kStreamQuant));
                    detail::cache_dense_input(cache, x, strategy, qrng);
                }
                Tensor z = l.spec.kind == LayerKind::Linear ? detail::linear_preact(x, l)
                                                            : detail::conv2d_preact(x, l);
                detail::apply_act_inplace(z, l.spec.act);
                x = std::move(z);
                break;
            }
            case LayerKind::BatchNorm2d: {
                if (x.ndim() != 4 || x.dim(1) != l.spec.in)
                    throw ShapeError("batchnorm expects [M, C, H, W] input with matching channels");
                if (train_mode) {
                    Rng qrng(derive_seed(seed, batch_counter, li, detail::kStreamQuant));
                    detail::cache_dense_input(cache, x, strategy, qrng);
                }
                size_t m = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
                size_t n = m * plane;
                Tensor y = Tensor::f32(x.shape());
                auto xs = x.f32s();
                auto ys = y.f32s();
                auto gm = l.gamma.f32s();
                auto bt = l.beta.f32s();
                auto rm = l.running_mean.f32s();
                auto rv = l.running_var.f32s();
                for (size_t c = 0; c < ch; ++c) {
                    double mean, var;
                    if (train_mode) {
                        double acc = 0.0;
                        for (size_t bi = 0; bi < m; ++bi) {
                            const float* p = xs.data() + (bi * ch + c) * plane;
                            for (size_t i = 0; i < plane; ++i) acc += p[i];
                        }
                        mean = acc / static_cast<double>(n);
                        double vacc = 0.0;
                        for (size_t bi = 0; bi < m; ++bi) {
                            const float* p = xs.data() + (bi * ch + c) * plane;
                            for (size_t i = 0; i < plane; ++i) {
                                double d = p[i] - mean;
                                vacc += d * d;
                            }
                        }
                        var = vacc / static_cast<double>(n);
                        rm[c] = static_cast<float>(0.9 * rm[c] + 0.1 * mean);
                        rv[c] = static_cast<float>(0.9 * rv[c] + 0.1 * var);
                    } else {
                        mean = rm[c];
                        var = rv[c];
                    }
                    double invstd = 1.0 / std::sqrt(var + 1e-5);
                    if (train_mode) {
                        cache.bn_mean.push_back(static_cast<float>(mean));
                        cache.bn_invstd.push_back(static_cast<float>(invstd));
                    }
                    for (size_t bi = 0; bi < m; ++bi) {
                        const float* p = xs.data() + (bi * ch + c) * plane;
                        float* q = ys.data() + (bi * ch + c) * plane;
                        for (size_t i = 0; i < plane; ++i)
                            q[i] = static_cast<float>(gm[c] * (p[i] - mean) * invstd + bt[c]);
                    }
                }
                x = std::move(y);
                break;
            }
            case LayerKind::Relu: {
                auto [out, mask] = relu_cache(x);
                if (train_mode) {
                    cache.mask = std::move(mask);
                    cache.bytes = cache.mask.payload_bytes();
                }
                x = std::move(out);
                break;
            }
            case LayerKind::MaxPool: {
                auto [out, pc] = maxpool_cache(x, l.spec.pool);
                if (train_mode) {
                    cache.pool = std::move(pc);
                    cache.bytes = cache.pool.payload_bytes();
                }
                x = std::move(out);
                break;
            }
            case LayerKind::AvgPool: {
                cache.in_shape = x.shape();
                x = avgpool_forward(x, l.spec.pool);
                break;
            }
            case LayerKind::Dropout: {
                if (train_mode) {
                    Rng drng(derive_seed(seed, batch_counter, li, detail::kStreamDropout));
                    auto [out, mask] = dropout_cache(x, l.spec.drop_p, drng);
                    cache.mask = std::move(mask);
                    cache.bytes = cache.mask.payload_bytes();
                    x = std::move(out);
                }
                break;
            }
            case LayerKind::Flatten: {
                cache.in_shape = x.shape();
                x = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
                break;
            }
        }
        res.caches.push_back(std::move(cache));
    }
    res.cache_bytes = 0;
    for (const LayerCache& c : res.caches) res.cache_bytes += c.bytes;
    if (net.classifier) res.cache_bytes += 4 * x.numel();
    res.logits = std::move(x);
    return res;
}

// --- backward -----------------------------------------------------------------

struct Gradients {
    struct PerLayer {
        Tensor w, b, gamma, beta;
    };
    std::vector<PerLayer> layers;
};

/// Reverse pass from a loss gradient on the logits. Each dense layer
/// reconstructs its input from the cache; a fused activation recomputes the
/// pre-activation from the reconstructed input for its derivative. Caches are
/// released layer-by-layer once consumed.
inline Gradients backward(Network& net, std::vector<LayerCache>& caches, const Tensor& grad_logits) {
    if (caches.size() != net.layers.size()) throw StateError("cache list does not match network");
    Gradients grads;
    grads.layers.resize(net.layers.size());
    Tensor g = grad_logits;
    for (size_t li = net.layers.size(); li-- > 0;) {
        Layer& l = net.layers[li];
        LayerCache& cache = caches[li];
        if (cache.kind != l.spec.kind) throw StateError("cache list does not match network");
        switch (l.spec.kind) {
            case LayerKind::Linear: {
                Tensor x = cache.reconstruct();
                size_t m = x.dim(0), in = l.spec.in, out = l.spec.out;
                Tensor dz = g;
                if (l.spec.act != Act::Identity) {
                    Tensor z = detail::linear_preact(x, l);
                    auto zs = z.f32s();
                    auto ds = dz.f32s();
                    for (size_t i = 0; i < ds.size(); ++i) ds[i] *= act_deriv(l.spec.act, zs[i]);
                }
                Gradients::PerLayer& pg = grads.layers[li];
                pg.w = Tensor::f32({out, in});
                pg.b = Tensor::f32({out});
                Tensor gin = Tensor::f32({m, in});
                auto xs = x.f32s();
                auto ws = l.w.f32s();
                auto dzs = dz.f32s();
                auto dws = pg.w.f32s();
                auto dbs = pg.b.f32s();
                auto gis = gin.f32s();
                for (size_t r = 0; r < m; ++r) {
                    const float* xr = xs.data() + r * in;
                    const float* dzr = dzs.data() + r * out;
                    float* gir = gis.data() + r * in;
                    for (size_t o = 0; o < out; ++o) {
                        float d = dzr[o];
                        dbs[o] += d;
                        float* dwr = dws.data() + o * in;
                        const float* wr = ws.data() + o * in;
                        for (size_t i = 0; i < in; ++i) {
                            dwr[i] += d * xr[i];
                            gir[i] += d * wr[i];
                        }
                    }
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::Conv2d: {
                Tensor x = cache.reconstruct();
                const LayerSpec& s = l.spec;
                size_t m = x.dim(0), hh = x.dim(2), ww = x.dim(3);
                size_t oh = hh + 2 * s.pad - s.kernel + 1, ow = ww + 2 * s.pad - s.kernel + 1;
                Tensor dz = g;
                if (s.act != Act::Identity) {
                    Tensor z = detail::conv2d_preact(x, l);
                    auto zs = z.f32s();
                    auto ds = dz.f32s();
                    for (size_t i = 0; i < ds.size(); ++i) ds[i] *= act_deriv(s.act, zs[i]);
                }
                Gradients::PerLayer& pg = grads.layers[li];
                pg.w = Tensor::f32(l.w.shape());
                pg.b = Tensor::f32({s.out});
                Tensor gin = Tensor::f32(x.shape());
                auto xs = x.f32s();
                auto ws = l.w.f32s();
                auto dzs = dz.f32s();
                auto dws = pg.w.f32s();
                auto dbs = pg.b.f32s();
                auto gis = gin.f32s();
                long pad = static_cast<long>(s.pad);
                for (size_t bi = 0; bi < m; ++bi)
                    for (size_t o = 0; o < s.out; ++o) {
                        const float* dzp = dzs.data() + (bi * s.out + o) * oh * ow;
                        for (size_t y = 0; y < oh; ++y)
                            for (size_t xcol = 0; xcol < ow; ++xcol) {
                                float d = dzp[y * ow + xcol];
                                if (d == 0.0f) continue;
                                dbs[o] += d;
                                for (size_t c = 0; c < s.in; ++c) {
                                    const float* xp = xs.data() + (bi * s.in + c) * hh * ww;
                                    float* gip = gis.data() + (bi * s.in + c) * hh * ww;
                                    float* dwp = dws.data() + ((o * s.in + c) * s.kernel) * s.kernel;
                                    const float* wp = ws.data() + ((o * s.in + c) * s.kernel) * s.kernel;
                                    for (size_t dy = 0; dy < s.kernel; ++dy) {
                                        long iy = static_cast<long>(y + dy) - pad;
                                        if (iy < 0 || iy >= static_cast<long>(hh)) continue;
                                        for (size_t dx = 0; dx < s.kernel; ++dx) {
                                            long ix = static_cast<long>(xcol + dx) - pad;
                                            if (ix < 0 || ix >= static_cast<long>(ww)) continue;
                                            dwp[dy * s.kernel + dx] += d * xp[iy * ww + ix];
                                            gip[iy * ww + ix] += d * wp[dy * s.kernel + dx];
                                        }
                                    }
                                }
                            }
                    }
                g = std::move(gin);
                break;
            }
            case LayerKind::BatchNorm2d: {
                Tensor x = cache.reconstruct();
                size_t m = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
                double n = static_cast<double>(m * plane);
                Gradients::PerLayer& pg = grads.layers[li];
                pg.gamma = Tensor::f32({ch});
                pg.beta = Tensor::f32({ch});
                Tensor gin = Tensor::f32(x.shape());
                auto xs = x.f32s();
                auto gs = g.f32s();
                auto gis = gin.f32s();
                auto gm = l.gamma.f32s();
                auto dgm = pg.gamma.f32s();
                auto dbt = pg.beta.f32s();
                for (size_t c = 0; c < ch; ++c) {
                    float mean = cache.bn_mean[c];
                    float invstd = cache.bn_invstd[c];
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (size_t bi = 0; bi < m; ++bi) {
                        const float* xp = xs.data() + (bi * ch + c) * plane;
                        const float* gp = gs.data() + (bi * ch + c) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            double xhat = (xp[i] - mean) * invstd;
                            sum_g += gp[i];
                            sum_gx += gp[i] * xhat;
                        }
                    }
                    dgm[c] = static_cast<float>(sum_gx);
                    dbt[c] = static_cast<float>(sum_g);
                    double scale = gm[c] * invstd / n;
                    for (size_t bi = 0; bi < m; ++bi) {
                        const float* xp = xs.data() + (bi * ch + c) * plane;
                        const float* gp = gs.data() + (bi * ch + c) * plane;
                        float* gip = gis.data() + (bi * ch + c) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            double xhat = (xp[i] - mean) * invstd;
                            gip[i] = static_cast<float>(scale * (n * gp[i] - sum_g - xhat * sum_gx));
                        }
                    }
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::Relu: g = relu_backward(cache.mask, g); break;
            case LayerKind::MaxPool: g = maxpool_backward(cache.pool, g); break;
            case LayerKind::AvgPool: g = avgpool_backward(l.spec.pool, cache.in_shape, g); break;
            case LayerKind::Dropout: g = dropout_backward(cache.mask, g); break;
            case LayerKind::Flatten: g = g.reshaped(cache.in_shape); break;
        }
        cache.release();
    }
    return grads;
}

// --- loss ------------------------------------------------------------------------

/// Softmax cross-entropy; returns mean loss and the gradient on the logits.
inline std::pair<double, Tensor> softmax_xent(const Tensor& logits, std::span<const int32_t> labels) {
    size_t m = logits.dim(0), k = logits.dim(1);
    if (labels.size() != m) throw ShapeError("label count does not match batch");
    for (int32_t y : labels)
        if (y < 0 || static_cast<size_t>(y) >= k)
            throw ShapeError(strf("label %d outside the %zu network outputs", y, k));
    Tensor grad = Tensor::f32(logits.shape());
    auto ls = logits.f32s();
    auto gs = grad.f32s();
    double loss = 0.0;
    for (size_t r = 0; r < m; ++r) {
        const float* lr = ls.data() + r * k;
        float* gr = gs.data() + r * k;
        double mx = lr[0];
        for (size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
        double z = 0.0;
        for (size_t c = 0; c < k; ++c) z += std::exp(lr[c] - mx);
        double logz = std::log(z) + mx;
        loss += logz - lr[labels[r]];
        for (size_t c = 0; c < k; ++c) {
            double p = std::exp(lr[c] - logz);
            gr[c] = static_cast<float>((p - (static_cast<int32_t>(c) == labels[r] ? 1.0 : 0.0)) /
                                       static_cast<double>(m));
        }
    }
    return {loss / static_cast<double>(m), std::move(grad)};
}

// --- optimizer --------------------------------------------------------------------

struct TrainConfig {
    size_t epochs = 10;
    size_t batch_size = 64;
    double lr = 0.05;
    enum class Sched : uint8_t { Cosine, Step } sched = Sched::Cosine;
    size_t step_every = 30;
    double step_gamma = 0.1;
    double weight_decay = 0.0;
    double momentum = 0.9;
    uint64_t seed = 1;
    std::vector<size_t> checkpoint_epochs;

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw ParamError("epochs and batch size must be positive");
        if (lr < 0 || weight_decay < 0 || momentum < 0) throw ParamError("negative optimizer parameter");
        if (sched == Sched::Step && step_every < 1) throw ParamError("step schedule period must be >= 1");
    }
};

inline double lr_at(const TrainConfig& cfg, size_t epoch) {
    if (cfg.sched == TrainConfig::Sched::Cosine)
        return cfg.lr * 0.5 *
               (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
    return cfg.lr * std::pow(cfg.step_gamma, static_cast<double>(epoch / cfg.step_every));
}

namespace detail {

inline void sgd_update(std::span<float> w, std::span<float> v, std::span<const float> g, double mu,
                       double wd, double lr) {
    for (size_t i = 0; i < w.size(); ++i) {
        double vel = mu * v[i] + g[i] + wd * w[i];
        v[i] = static_cast<float>(vel);
        w[i] = static_cast<float>(w[i] - lr * vel);
    }
}

}  // namespace detail

/// v <- mu*v + g + wd*w; w <- w - lr(epoch)*v, applied to every parameter.
inline void sgd_step(Network& net, const Gradients& grads, const TrainConfig& cfg, size_t epoch) {
    double lr = lr_at(cfg, epoch);
    for (size_t li = 0; li < net.layers.size(); ++li) {
        Layer& l = net.layers[li];
        const Gradients::PerLayer& pg = grads.layers[li];
        if (l.w.numel()) {
            detail::sgd_update(l.w.f32s(), l.vw.f32s(), pg.w.f32s(), cfg.momentum, cfg.weight_decay, lr);
            detail::sgd_update(l.b.f32s(), l.vb.f32s(), pg.b.f32s(), cfg.momentum, cfg.weight_decay, lr);
        }
        if (l.gamma.numel()) {
            detail::sgd_update(l.gamma.f32s(), l.vgamma.f32s(), pg.gamma.f32s(), cfg.momentum,
                               cfg.weight_decay, lr);
            detail::sgd_update(l.beta.f32s(), l.vbeta.f32s(), pg.beta.f32s(), cfg.momentum,
                               cfg.weight_decay, lr);
        }
    }
}

// --- training loop -----------------------------------------------------------------

inline Tensor make_batch(const Dataset& ds, std::span<const size_t> idx, std::vector<int32_t>& labels) {
    Shape s = ds.features.shape();
    s[0] = idx.size();
    Tensor batch = Tensor::f32(s);
    size_t stride = ds.sample_stride();
    auto src = ds.features.f32s();
    auto dst = batch.f32s();
    labels.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(src.data() + idx[i] * stride, stride, dst.data() + i * stride);
        labels[i] = ds.labels[idx[i]];
    }
    return batch;
}

/// Top-1 accuracy; ties resolve to the lowest class index.
inline double evaluate(Network& net, const Dataset& ds) {
    if (ds.size() == 0) throw ParamError("cannot evaluate on an empty dataset");
    size_t correct = 0;
    std::vector<int32_t> labels;
    std::vector<size_t> idx;
    const size_t chunk = 256;
    for (size_t begin = 0; begin < ds.size(); begin += chunk) {
        size_t end = std::min(ds.size(), begin + chunk);
        idx.resize(end - begin);
        for (size_t i = begin; i < end; ++i) idx[i - begin] = i;
        Tensor batch = make_batch(ds, idx, labels);
        ForwardResult fr = forward(net, batch, CacheStrategy::exact(), 0, 0, /*train_mode=*/false);
        size_t k = fr.logits.dim(1);
        auto ls = fr.logits.f32s();
        for (size_t r = 0; r < idx.size(); ++r) {
            const float* lr = ls.data() + r * k;
            size_t best = 0;
            for (size_t c = 1; c < k; ++c)
                if (lr[c] > lr[best]) best = c;
            if (static_cast<int32_t>(best) == labels[r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct EpochMetrics {
    size_t epoch;
    double train_loss;
    double eval_accuracy;
    double peak_cache_bytes;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    bool diverged = false;
    std::string message;
};

using EpochCallback = std::function<void(size_t epoch, Network& net)>;

/// Epochs of forward / backward / step with per-epoch metrics. Peak cache
/// bytes is the post-forward payload maximum over the epoch's batches (the
/// floor after backward is zero: caches are freed as they are consumed).
/// A non-finite loss aborts with the partial history attached by the caller.
inline TrainResult train(Network& net, const Dataset& train_set, const Dataset& eval_set,
                         const CacheStrategy& strategy, const TrainConfig& cfg,
                         const EpochCallback& after_epoch = {}) {
    cfg.validate();
    strategy.validate();
    TrainResult result;
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    uint64_t batch_counter = 0;
    std::vector<int32_t> labels;
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE9, epoch));
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double loss_sum = 0.0;
        size_t batches = 0;
        size_t peak = 0;
        for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            size_t end = std::min(order.size(), begin + cfg.batch_size);
            Tensor batch = make_batch(train_set, std::span(order).subspan(begin, end - begin), labels);
            ForwardResult fr = forward(net, batch, strategy, cfg.seed, batch_counter, true);
            auto [loss, dlogits] = softmax_xent(fr.logits, labels);
            if (!std::isfinite(loss)) {
                result.diverged = true;
                result.message = strf("non-finite loss at epoch %zu batch %llu", epoch,
                                      static_cast<unsigned long long>(batch_counter));
                return result;
            }
            peak = std::max(peak, fr.cache_bytes);
            Gradients grads = backward(net, fr.caches, dlogits);
            sgd_step(net, grads, cfg, epoch);
            loss_sum += loss;
            ++batches;
            ++batch_counter;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(batches);
        m.eval_accuracy = evaluate(net, eval_set);
        m.peak_cache_bytes = static_cast<double>(peak);
        result.history.push_back(m);
        if (after_epoch) after_epoch(epoch, net);
    }
    return result;
}

/// Input-activation shapes for every layer plus the network output shape.
inline std::vector<Shape> layer_input_shapes(const Network& net, const Shape& batch_shape,
                                             Shape* out_shape = nullptr) {
    std::vector<Shape> shapes;
    Shape x = batch_shape;
    for (const Layer& l : net.layers) {
        shapes.push_back(x);
        const LayerSpec& s = l.spec;
        switch (s.kind) {
            case LayerKind::Linear:
                if (x.size() != 2 || x[1] != s.in) throw ShapeError("linear layer shape mismatch");
                x = {x[0], s.out};
                break;
            case LayerKind::Conv2d:
                if (x.size() != 4 || x[1] != s.in) throw ShapeError("conv layer shape mismatch");
                x = {x[0], s.out, x[2] + 2 * s.pad - s.kernel + 1, x[3] + 2 * s.pad - s.kernel + 1};
                break;
            case LayerKind::BatchNorm2d:
                if (x.size() != 4 || x[1] != s.in) throw ShapeError("batchnorm shape mismatch");
                break;
            case LayerKind::Relu:
            case LayerKind::Dropout: break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                if (x.size() != 4) throw ShapeError("pooling expects rank-4 input");
                x = {x[0], x[1], x[2] / s.pool, x[3] / s.pool};
                break;
            case LayerKind::Flatten: {
                size_t rest = 1;
                for (size_t a = 1; a < x.size(); ++a) rest *= x[a];
                x = {x[0], rest};
                break;
            }
        }
    }
    if (out_shape) *out_shape = x;
    return shapes;
}

}  // namespace dualprec
