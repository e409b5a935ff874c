#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "dualprec/common.hpp"

namespace dualprec {

/// Storage formats. Packed tensors carry unsigned integer codes of a fixed
/// bit width; their payload is padded to whole bytes per row of the last axis
/// (one row = one quantization group when used by the codec).
enum class DType : uint8_t { F32 = 0, BF16 = 1, Packed = 2 };

using Shape = std::vector<size_t>;

inline size_t shape_numel(std::span<const size_t> shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

// --- bfloat16 -------------------------------------------------------------

/// Round an f32 to the nearest bfloat16 bit pattern (ties to even).
/// NaN maps to a quiet NaN that keeps the sign bit.
inline uint16_t bf16_encode(float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0) {
        return static_cast<uint16_t>((bits >> 16) | 0x0040u);
    }
    uint32_t high = bits >> 16;
    uint32_t low = bits & 0xFFFFu;
    if (low > 0x8000u || (low == 0x8000u && (high & 1u))) high += 1;
    return static_cast<uint16_t>(high);
}

inline float bf16_decode(uint16_t b) {
    uint32_t bits = static_cast<uint32_t>(b) << 16;
    float x;
    std::memcpy(&x, &bits, 4);
    return x;
}

/// f32 value as it will read back after bf16 storage.
inline float bf16_round(float x) { return bf16_decode(bf16_encode(x)); }

// --- dense tensor ---------------------------------------------------------

/// Dense n-dimensional array, row-major, last axis fastest. The payload is a
/// contiguous little-endian byte buffer whose size is fully determined by
/// (shape, dtype, qbits).
class Tensor {
  public:
    Tensor() : dtype_(DType::F32) {}

    static Tensor f32(Shape shape) { return Tensor(std::move(shape), DType::F32, 0); }
    static Tensor bf16(Shape shape) { return Tensor(std::move(shape), DType::BF16, 0); }
    static Tensor packed(Shape shape, int qbits) {
        if (qbits != 1 && qbits != 2 && qbits != 4 && qbits != 8)
            throw ParamError(strf("packed tensor bit width must be 1/2/4/8, got %d", qbits));
        return Tensor(std::move(shape), DType::Packed, qbits);
    }

    static Tensor from_values(Shape shape, std::span<const float> v) {
        Tensor t = f32(std::move(shape));
        if (v.size() != t.numel()) throw ShapeError("value count does not match shape");
        std::memcpy(t.bytes_.data(), v.data(), v.size() * 4);
        return t;
    }

    DType dtype() const { return dtype_; }
    int qbits() const { return qbits_; }
    const Shape& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_[i]; }
    /// Element count; a default-constructed tensor is empty.
    size_t numel() const { return shape_.empty() ? 0 : shape_numel(shape_); }
    size_t byte_size() const { return bytes_.size(); }

    const uint8_t* raw() const { return bytes_.data(); }
    uint8_t* raw() { return bytes_.data(); }

    std::span<float> f32s() {
        require(DType::F32);
        return {reinterpret_cast<float*>(bytes_.data()), numel()};
    }
    std::span<const float> f32s() const {
        require(DType::F32);
        return {reinterpret_cast<const float*>(bytes_.data()), numel()};
    }
    std::span<uint16_t> u16s() {
        require(DType::BF16);
        return {reinterpret_cast<uint16_t*>(bytes_.data()), numel()};
    }
    std::span<const uint16_t> u16s() const {
        require(DType::BF16);
        return {reinterpret_cast<const uint16_t*>(bytes_.data()), numel()};
    }

    float* data() { return f32s().data(); }
    const float* data() const { return f32s().data(); }

    /// Payload size implied by shape and dtype. Packed payloads pad each row
    /// of the last axis to a whole number of bytes.
    static size_t expected_bytes(std::span<const size_t> shape, DType dtype, int qbits) {
        size_t n = shape_numel(shape);
        switch (dtype) {
            case DType::F32: return n * 4;
            case DType::BF16: return n * 2;
            case DType::Packed: {
                size_t last = shape.empty() ? 1 : shape.back();
                size_t rows = shape.empty() ? 1 : n / std::max<size_t>(last, 1);
                if (last == 0) return 0;
                return rows * ((last * static_cast<size_t>(qbits) + 7) / 8);
            }
        }
        return 0;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) throw ShapeError("reshape changes element count");
        if (dtype_ == DType::Packed) throw ShapeError("packed tensors cannot be reshaped");
        Tensor t = *this;
        t.shape_ = std::move(s);
        return t;
    }

  private:
    Tensor(Shape shape, DType dtype, int qbits) : shape_(std::move(shape)), dtype_(dtype), qbits_(qbits) {
        for (size_t d : shape_)
            if (d < 1) throw ShapeError("tensor dimensions must all be >= 1");
        bytes_.assign(expected_bytes(shape_, dtype_, qbits_), 0);
    }

    void require(DType d) const {
        if (dtype_ != d) throw ShapeError("tensor dtype does not support this access");
    }

    Shape shape_;
    DType dtype_;
    int qbits_ = 0;
    std::vector<uint8_t> bytes_;
};

inline Tensor to_bf16(const Tensor& t) {
    Tensor out = Tensor::bf16(t.shape());
    auto src = t.f32s();
    auto dst = out.u16s();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = bf16_encode(src[i]);
    return out;
}

inline Tensor to_f32(const Tensor& t) {
    if (t.dtype() == DType::F32) return t;
    Tensor out = Tensor::f32(t.shape());
    auto src = t.u16s();
    auto dst = out.f32s();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = bf16_decode(src[i]);
    return out;
}

/// sqrt of the sum of squares, accumulated in double precision.
inline double frobenius_norm(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.f32s()) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

inline double frobenius_norm(std::span<const float> v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

inline double frobenius_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// --- deterministic random source -------------------------------------------

/// SplitMix64: counter-based, 64-bit state advanced by a fixed odd constant,
/// output produced by a bijective mix of the counter. Identical seeds give
/// identical streams on every platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    size_t below(size_t n) { return static_cast<size_t>(next_u64() % n); }

    /// Standard normal via Box-Muller; draws two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Derive an independent stream seed from a base seed and up to three stream
/// coordinates (layer index, batch counter, purpose tag, ...).
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    auto mix = [](uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    };
    uint64_t h = mix(seed + 0x9E3779B97F4A7C15ull);
    h = mix(h ^ (a + 0xA0761D6478BD642Full));
    h = mix(h ^ (b + 0xE7037ED1A0B428DBull));
    h = mix(h ^ (c + 0x8EBC6AF09C88C6E3ull));
    return h;
}

}  // namespace dualprec
