#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dualprec/tensor.hpp"

namespace dualprec {

// Activation codec: a high-precision low-frequency copy obtained by block
// average pooling (stored bf16) plus a Q-bit stochastically rounded residual,
// and the lossless per-operator caches for relu / pooling / dropout.

// --- pooling and upsampling -------------------------------------------------

namespace detail {

struct SpatialView {
    size_t groups;                  // product of leading (batch/channel) axes
    std::vector<size_t> sizes;      // trailing spatial extents
    size_t spatial_count;
};

inline SpatialView spatial_view(const Tensor& t, int spatial_ndim) {
    if (spatial_ndim < 0 || static_cast<size_t>(spatial_ndim) > t.ndim())
        throw ShapeError("spatial rank exceeds tensor rank");
    SpatialView v;
    v.sizes.assign(t.shape().end() - spatial_ndim, t.shape().end());
    v.spatial_count = shape_numel(v.sizes);
    v.groups = t.numel() / std::max<size_t>(v.spatial_count, 1);
    return v;
}

inline void spatial_unravel(size_t flat, std::span<const size_t> sizes, size_t* idx) {
    for (size_t a = sizes.size(); a-- > 0;) {
        idx[a] = flat % sizes[a];
        flat /= sizes[a];
    }
}

}  // namespace detail

/// Non-overlapping mean pooling with kernel = stride = B along each spatial
/// axis. An axis shorter than B collapses to a single output (kernel = axis
/// length); trailing elements beyond the last full block are excluded.
inline Tensor avg_pool_lfc(const Tensor& h, int spatial_ndim, size_t block) {
    if (block < 1) throw ParamError("pooling block must be >= 1");
    if (spatial_ndim < 1) throw ParamError("pooling needs at least one spatial axis");
    auto v = detail::spatial_view(h, spatial_ndim);
    std::vector<size_t> kernel(v.sizes.size()), out_sizes(v.sizes.size());
    for (size_t a = 0; a < v.sizes.size(); ++a) {
        kernel[a] = std::min(block, v.sizes[a]);
        out_sizes[a] = v.sizes[a] / kernel[a];
    }
    Shape out_shape(h.shape().begin(), h.shape().end() - spatial_ndim);
    out_shape.insert(out_shape.end(), out_sizes.begin(), out_sizes.end());
    Tensor out = Tensor::f32(out_shape);

    size_t out_count = shape_numel(out_sizes);
    size_t kernel_count = shape_numel(kernel);
    auto src = h.f32s();
    auto dst = out.f32s();
    std::vector<size_t> oidx(v.sizes.size()), kidx(v.sizes.size());
    for (size_t g = 0; g < v.groups; ++g) {
        const float* gsrc = src.data() + g * v.spatial_count;
        float* gdst = dst.data() + g * out_count;
        for (size_t o = 0; o < out_count; ++o) {
            detail::spatial_unravel(o, out_sizes, oidx.data());
            double acc = 0.0;
            for (size_t kf = 0; kf < kernel_count; ++kf) {
                detail::spatial_unravel(kf, kernel, kidx.data());
                size_t flat = 0;
                for (size_t a = 0; a < v.sizes.size(); ++a)
                    flat = flat * v.sizes[a] + (oidx[a] * kernel[a] + kidx[a]);
                acc += gsrc[flat];
            }
            gdst[o] = static_cast<float>(acc / static_cast<double>(kernel_count));
        }
    }
    return out;
}

/// Nearest-neighbour enlargement: output index i along each axis reads source
/// index floor(i * L / N).
inline Tensor upsample_nearest(const Tensor& l, int spatial_ndim, std::span<const size_t> target) {
    auto v = detail::spatial_view(l, spatial_ndim);
    if (target.size() != v.sizes.size()) throw ShapeError("target rank does not match spatial rank");
    for (size_t a = 0; a < target.size(); ++a)
        if (target[a] < v.sizes[a]) throw ParamError("upsample target smaller than source");

    Shape out_shape(l.shape().begin(), l.shape().end() - spatial_ndim);
    out_shape.insert(out_shape.end(), target.begin(), target.end());
    Tensor out = Tensor::f32(out_shape);
    size_t out_count = shape_numel(target);
    auto src = l.f32s();
    auto dst = out.f32s();
    std::vector<size_t> oidx(target.size());
    for (size_t g = 0; g < v.groups; ++g) {
        const float* gsrc = src.data() + g * v.spatial_count;
        float* gdst = dst.data() + g * out_count;
        for (size_t o = 0; o < out_count; ++o) {
            detail::spatial_unravel(o, target, oidx.data());
            size_t flat = 0;
            for (size_t a = 0; a < target.size(); ++a)
                flat = flat * v.sizes[a] + (oidx[a] * v.sizes[a]) / target[a];
            gdst[o] = gsrc[flat];
        }
    }
    return out;
}

// --- group quantization -----------------------------------------------------

inline uint8_t stochastic_round_code(double t, int qbits, Rng& rng) {
    double fl = std::floor(t);
    double frac = t - fl;
    long v = static_cast<long>(fl) + (rng.uniform() < frac ? 1 : 0);
    long hi = (1l << qbits) - 1;
    return static_cast<uint8_t>(std::clamp(v, 0l, hi));
}

struct GroupQuant {
    std::vector<uint8_t> codes;
    float step;
    float offset;
};

/// offset = min(g), step = (max(g) - offset) / (2^Q - 1), codes by unbiased
/// stochastic rounding of (g - offset)/step. A degenerate group (max == min)
/// gets step 0 and all-zero codes.
inline GroupQuant quantize_group(std::span<const float> g, int qbits, Rng& rng) {
    if (g.empty()) throw ParamError("quantization group must be nonempty");
    GroupQuant q;
    float lo = g[0], hi = g[0];
    for (float x : g) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    q.offset = lo;
    q.codes.assign(g.size(), 0);
    if (hi == lo) {
        q.step = 0.0f;
        return q;
    }
    q.step = static_cast<float>((static_cast<double>(hi) - lo) / ((1 << qbits) - 1));
    if (!std::isfinite(q.step)) {
        q.step = 0.0f;
        return q;
    }
    for (size_t i = 0; i < g.size(); ++i) {
        double t = (static_cast<double>(g[i]) - q.offset) / q.step;
        q.codes[i] = stochastic_round_code(t, qbits, rng);
    }
    return q;
}

inline void dequantize_group(std::span<const uint8_t> codes, float step, float offset, std::span<float> out) {
    if (codes.size() != out.size()) throw ShapeError("code count does not match output");
    for (size_t i = 0; i < codes.size(); ++i)
        out[i] = static_cast<float>(static_cast<double>(step) * codes[i] + offset);
}

struct GroupQuantStored {
    std::vector<uint8_t> codes;
    uint16_t step_b;
    uint16_t offset_b;
};

/// Quantization against the parameters decompression will actually see: the
/// offset is bf16-rounded first, the step is derived from the stored offset
/// and bf16-rounded, and codes are computed against the decoded values. This
/// keeps the per-element reconstruction error below step*(1 + 2^-7).
inline GroupQuantStored quantize_group_stored(std::span<const float> g, int qbits, Rng& rng) {
    if (g.empty()) throw ParamError("quantization group must be nonempty");
    GroupQuantStored q;
    float lo = g[0], hi = g[0];
    for (float x : g) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    q.offset_b = bf16_encode(lo);
    q.codes.assign(g.size(), 0);
    float offset = bf16_decode(q.offset_b);
    double span = static_cast<double>(hi) - offset;
    if (hi == lo || span <= 0.0) {
        q.step_b = 0;
        return q;
    }
    q.step_b = bf16_encode(static_cast<float>(span / ((1 << qbits) - 1)));
    float step = bf16_decode(q.step_b);
    if (!(step > 0.0f) || !std::isfinite(step)) {
        q.step_b = 0;
        return q;
    }
    for (size_t i = 0; i < g.size(); ++i) {
        double t = (static_cast<double>(g[i]) - offset) / step;
        q.codes[i] = stochastic_round_code(t, qbits, rng);
    }
    return q;
}

// --- bit packing ------------------------------------------------------------

/// Element e occupies bits (e mod (8/Q))*Q .. +Q-1 of byte floor(e*Q/8),
/// little-endian within each byte. The result is padded to whole bytes.
inline std::vector<uint8_t> pack_codes(std::span<const uint8_t> codes, int qbits) {
    if (qbits != 1 && qbits != 2 && qbits != 4 && qbits != 8)
        throw ParamError(strf("bit width must be 1/2/4/8, got %d", qbits));
    size_t per_byte = 8 / static_cast<size_t>(qbits);
    std::vector<uint8_t> out((codes.size() + per_byte - 1) / per_byte, 0);
    for (size_t e = 0; e < codes.size(); ++e) {
        if (codes[e] >= (1u << qbits))
            throw ParamError(strf("code %u does not fit %d bits", codes[e], qbits));
        out[e / per_byte] |= static_cast<uint8_t>(codes[e] << ((e % per_byte) * qbits));
    }
    return out;
}

inline std::vector<uint8_t> unpack_codes(std::span<const uint8_t> bytes, int qbits, size_t count) {
    size_t per_byte = 8 / static_cast<size_t>(qbits);
    size_t need = (count + per_byte - 1) / per_byte;
    if (bytes.size() < need) throw FormatError("packed payload shorter than element count requires");
    std::vector<uint8_t> out(count);
    uint8_t mask = static_cast<uint8_t>((1u << qbits) - 1);
    for (size_t e = 0; e < count; ++e)
        out[e] = static_cast<uint8_t>(bytes[e / per_byte] >> ((e % per_byte) * qbits)) & mask;
    return out;
}

// --- the cached activation tuple ---------------------------------------------

struct CompressedActivation {
    Shape original_shape;
    int spatial_ndim = 0;
    size_t block = 1;
    int qbits = 0;
    bool has_lfc = false;
    bool has_hfc = false;
    Tensor lfc;                      // bf16, pooled spatial extents
    std::vector<uint8_t> hfc_bits;   // groups x padded bytes, concatenated
    std::vector<uint16_t> steps;     // one bf16 step per group
    std::vector<uint16_t> offsets;   // one bf16 offset per group
    size_t groups = 0;
    size_t spatial_count = 0;

    size_t group_bytes() const { return (spatial_count * static_cast<size_t>(qbits) + 7) / 8; }

    size_t payload_bytes() const {
        size_t b = 0;
        if (has_lfc) b += lfc.numel() * 2;
        if (has_hfc) b += hfc_bits.size() + 4 * groups;
        return b;
    }
};

namespace detail {

inline void quantize_residual(CompressedActivation& c, const Tensor& residual, int qbits, Rng& rng) {
    auto v = spatial_view(residual, c.spatial_ndim);
    c.qbits = qbits;
    c.groups = v.groups;
    c.spatial_count = v.spatial_count;
    c.has_hfc = true;
    c.steps.resize(v.groups);
    c.offsets.resize(v.groups);
    c.hfc_bits.clear();
    c.hfc_bits.reserve(v.groups * c.group_bytes());
    auto src = residual.f32s();
    for (size_t g = 0; g < v.groups; ++g) {
        GroupQuantStored q = quantize_group_stored(src.subspan(g * v.spatial_count, v.spatial_count), qbits, rng);
        c.steps[g] = q.step_b;
        c.offsets[g] = q.offset_b;
        std::vector<uint8_t> packed = pack_codes(q.codes, qbits);
        c.hfc_bits.insert(c.hfc_bits.end(), packed.begin(), packed.end());
    }
}

inline Tensor lfc_and_residual(CompressedActivation& c, const Tensor& h, size_t block) {
    Tensor pooled = avg_pool_lfc(h, c.spatial_ndim, block);
    c.lfc = to_bf16(pooled);
    c.has_lfc = true;
    auto v = spatial_view(h, c.spatial_ndim);
    Tensor up = upsample_nearest(to_f32(c.lfc), c.spatial_ndim, v.sizes);
    Tensor residual = Tensor::f32(h.shape());
    auto hs = h.f32s();
    auto us = up.f32s();
    auto rs = residual.f32s();
    for (size_t i = 0; i < rs.size(); ++i) rs[i] = hs[i] - us[i];
    return residual;
}

}  // namespace detail

/// Full codec: bf16 block-mean LFC plus Q-bit residual. The residual is taken
/// against the upsampled *stored* LFC so that reconstruction error comes only
/// from residual quantization. Activations with no spatial axis are cached as
/// bf16 alone.
inline CompressedActivation compress(const Tensor& h, int spatial_ndim, size_t block, int qbits, Rng& rng) {
    CompressedActivation c;
    c.original_shape = h.shape();
    c.spatial_ndim = spatial_ndim;
    c.block = block;
    if (spatial_ndim == 0) {
        c.lfc = to_bf16(h);
        c.has_lfc = true;
        return c;
    }
    Tensor residual = detail::lfc_and_residual(c, h, block);
    detail::quantize_residual(c, residual, qbits, rng);
    return c;
}

/// LFC half only: bf16 block means, nothing else cached.
inline CompressedActivation compress_lfc_only(const Tensor& h, int spatial_ndim, size_t block) {
    CompressedActivation c;
    c.original_shape = h.shape();
    c.spatial_ndim = spatial_ndim;
    c.block = block;
    if (spatial_ndim == 0) {
        c.lfc = to_bf16(h);
        c.has_lfc = true;
        return c;
    }
    c.lfc = to_bf16(avg_pool_lfc(h, spatial_ndim, block));
    c.has_lfc = true;
    return c;
}

/// Residual half only: the residual is still formed against the block-mean
/// LFC, but the LFC is dropped and reconstruction dequantizes the residual
/// with the low-frequency term set to zero.
inline CompressedActivation compress_hfc_only(const Tensor& h, int spatial_ndim, size_t block, int qbits, Rng& rng) {
    CompressedActivation c;
    c.original_shape = h.shape();
    c.spatial_ndim = spatial_ndim;
    c.block = block;
    if (spatial_ndim == 0) {
        c.lfc = to_bf16(h);
        c.has_lfc = true;
        return c;
    }
    Tensor residual = detail::lfc_and_residual(c, h, block);
    detail::quantize_residual(c, residual, qbits, rng);
    c.lfc = Tensor();
    c.has_lfc = false;
    return c;
}

/// Whole-activation Q-bit quantization per group, no frequency split.
inline CompressedActivation compress_fixed_quant(const Tensor& h, int spatial_ndim, int qbits, Rng& rng) {
    CompressedActivation c;
    c.original_shape = h.shape();
    c.spatial_ndim = spatial_ndim;
    c.block = 1;
    if (spatial_ndim == 0) {
        c.lfc = to_bf16(h);
        c.has_lfc = true;
        return c;
    }
    detail::quantize_residual(c, h, qbits, rng);
    return c;
}

inline Tensor decompress(const CompressedActivation& c) {
    if (c.spatial_ndim == 0) return to_f32(c.lfc);

    Shape spatial(c.original_shape.end() - c.spatial_ndim, c.original_shape.end());
    Tensor out;
    if (c.has_lfc) {
        out = upsample_nearest(to_f32(c.lfc), c.spatial_ndim, spatial);
        out = out.reshaped(c.original_shape);
    } else {
        out = Tensor::f32(c.original_shape);
    }
    if (!c.has_hfc) return out;

    if (c.hfc_bits.size() != c.groups * c.group_bytes())
        throw FormatError(strf("residual payload is %zu bytes, expected %zu", c.hfc_bits.size(),
                               c.groups * c.group_bytes()));
    auto dst = out.f32s();
    size_t gb = c.group_bytes();
    for (size_t g = 0; g < c.groups; ++g) {
        std::vector<uint8_t> codes =
            unpack_codes(std::span(c.hfc_bits).subspan(g * gb, gb), c.qbits, c.spatial_count);
        float step = bf16_decode(c.steps[g]);
        float offset = bf16_decode(c.offsets[g]);
        float* o = dst.data() + g * c.spatial_count;
        for (size_t i = 0; i < c.spatial_count; ++i)
            o[i] += static_cast<float>(static_cast<double>(step) * codes[i] + offset);
    }
    return out;
}

// --- lossless operator caches -------------------------------------------------

struct BitMask {
    std::vector<uint8_t> bytes;
    size_t count = 0;

    explicit BitMask(size_t n = 0) : bytes((n + 7) / 8, 0), count(n) {}
    bool get(size_t i) const { return (bytes[i / 8] >> (i % 8)) & 1; }
    void set(size_t i) { bytes[i / 8] |= static_cast<uint8_t>(1u << (i % 8)); }
    size_t payload_bytes() const { return bytes.size(); }
};

/// Sign cache: 1 where h > 0 (strictly), stored one bit per element.
inline std::pair<Tensor, BitMask> relu_cache(const Tensor& h) {
    Tensor out = Tensor::f32(h.shape());
    BitMask mask(h.numel());
    auto src = h.f32s();
    auto dst = out.f32s();
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i] > 0.0f) {
            mask.set(i);
            dst[i] = src[i];
        } else {
            dst[i] = 0.0f;
        }
    }
    return {std::move(out), std::move(mask)};
}

inline Tensor relu_backward(const BitMask& mask, const Tensor& grad_out) {
    if (mask.count != grad_out.numel()) throw StateError("relu cache does not match gradient shape");
    Tensor grad_in = Tensor::f32(grad_out.shape());
    auto src = grad_out.f32s();
    auto dst = grad_in.f32s();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = mask.get(i) ? src[i] : 0.0f;
    return grad_in;
}

struct MaxPoolCache {
    std::vector<uint8_t> argmax;  // in-window index, row-major, one per window
    Shape in_shape;
    size_t k = 1;
    size_t payload_bytes() const { return argmax.size(); }
};

/// kernel = stride = k over the two trailing axes of a rank-4 map. Ties break
/// to the first element in row-major window order.
inline std::pair<Tensor, MaxPoolCache> maxpool_cache(const Tensor& h, size_t k) {
    if (h.ndim() != 4) throw ShapeError("max pooling expects a rank-4 activation");
    if (k < 1 || k > 16) throw ParamError("pool kernel must be in [1, 16]");
    size_t m = h.dim(0), ch = h.dim(1), hh = h.dim(2), ww = h.dim(3);
    size_t oh = hh / k, ow = ww / k;
    Tensor out = Tensor::f32({m, ch, oh, ow});
    MaxPoolCache cache;
    cache.in_shape = h.shape();
    cache.k = k;
    cache.argmax.resize(m * ch * oh * ow);
    auto src = h.f32s();
    auto dst = out.f32s();
    size_t w_idx = 0;
    for (size_t b = 0; b < m; ++b)
        for (size_t c = 0; c < ch; ++c) {
            const float* plane = src.data() + (b * ch + c) * hh * ww;
            for (size_t y = 0; y < oh; ++y)
                for (size_t x = 0; x < ow; ++x) {
                    float best = plane[(y * k) * ww + x * k];
                    size_t best_at = 0;
                    for (size_t dy = 0; dy < k; ++dy)
                        for (size_t dx = 0; dx < k; ++dx) {
                            float v = plane[(y * k + dy) * ww + (x * k + dx)];
                            if (v > best) {
                                best = v;
                                best_at = dy * k + dx;
                            }
                        }
                    dst[w_idx] = best;
                    cache.argmax[w_idx] = static_cast<uint8_t>(best_at);
                    ++w_idx;
                }
        }
    return {std::move(out), std::move(cache)};
}

inline Tensor maxpool_backward(const MaxPoolCache& cache, const Tensor& grad_out) {
    size_t k = cache.k;
    size_t m = cache.in_shape[0], ch = cache.in_shape[1], hh = cache.in_shape[2], ww = cache.in_shape[3];
    size_t oh = hh / k, ow = ww / k;
    if (grad_out.numel() != m * ch * oh * ow) throw StateError("pool cache does not match gradient shape");
    Tensor grad_in = Tensor::f32(cache.in_shape);
    auto src = grad_out.f32s();
    auto dst = grad_in.f32s();
    size_t w_idx = 0;
    for (size_t b = 0; b < m; ++b)
        for (size_t c = 0; c < ch; ++c) {
            float* plane = dst.data() + (b * ch + c) * hh * ww;
            for (size_t y = 0; y < oh; ++y)
                for (size_t x = 0; x < ow; ++x) {
                    size_t at = cache.argmax[w_idx];
                    plane[(y * k + at / k) * ww + (x * k + at % k)] += src[w_idx];
                    ++w_idx;
                }
        }
    return grad_in;
}

inline Tensor avgpool_forward(const Tensor& h, size_t k) {
    if (h.ndim() != 4) throw ShapeError("average pooling expects a rank-4 activation");
    return avg_pool_lfc(h, 2, k);
}

/// Every input position of a window receives k^-2 times the window's output
/// gradient; no cache is needed.
inline Tensor avgpool_backward(size_t k, const Shape& in_shape, const Tensor& grad_out) {
    size_t m = in_shape[0], ch = in_shape[1], hh = in_shape[2], ww = in_shape[3];
    size_t oh = hh / k, ow = ww / k;
    if (grad_out.numel() != m * ch * oh * ow) throw StateError("pool gradient shape mismatch");
    Tensor grad_in = Tensor::f32(in_shape);
    auto src = grad_out.f32s();
    auto dst = grad_in.f32s();
    float inv = 1.0f / static_cast<float>(k * k);
    size_t w_idx = 0;
    for (size_t b = 0; b < m; ++b)
        for (size_t c = 0; c < ch; ++c) {
            float* plane = dst.data() + (b * ch + c) * hh * ww;
            for (size_t y = 0; y < oh; ++y)
                for (size_t x = 0; x < ow; ++x) {
                    float g = src[w_idx++] * inv;
                    for (size_t dy = 0; dy < k; ++dy)
                        for (size_t dx = 0; dx < k; ++dx) plane[(y * k + dy) * ww + (x * k + dx)] += g;
                }
        }
    return grad_in;
}

/// Bernoulli keep mask with keep probability 1-p; no rescale is applied.
inline std::pair<Tensor, BitMask> dropout_cache(const Tensor& h, float p, Rng& rng) {
    if (!(p >= 0.0f && p < 1.0f)) throw ParamError("dropout probability must be in [0, 1)");
    Tensor out = Tensor::f32(h.shape());
    BitMask mask(h.numel());
    auto src = h.f32s();
    auto dst = out.f32s();
    for (size_t i = 0; i < src.size(); ++i) {
        if (rng.uniform() >= p) {
            mask.set(i);
            dst[i] = src[i];
        } else {
            dst[i] = 0.0f;
        }
    }
    return {std::move(out), std::move(mask)};
}

inline Tensor dropout_backward(const BitMask& mask, const Tensor& grad_out) {
    return relu_backward(mask, grad_out);
}

}  // namespace dualprec
