#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dualprec/tensor.hpp"

namespace dualprec {

// Orthonormal type-II DCT and its type-III inverse, applied separably along
// the trailing `ndim` axes (all of size N). Leading axes are batch/channel
// and transform independently. Direct O(N^2)-per-axis evaluation; N stays
// small at this scale.

namespace detail {

/// cosines[k*n + m] = s_k * cos(pi*(m+1/2)*k/n), s_0 = sqrt(1/n), s_k = sqrt(2/n)
inline std::vector<double> dct_basis(size_t n) {
    std::vector<double> c(n * n);
    const double pi = 3.14159265358979323846264338327950288;
    for (size_t k = 0; k < n; ++k) {
        double s = (k == 0) ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
        for (size_t m = 0; m < n; ++m)
            c[k * n + m] = s * std::cos(pi * (static_cast<double>(m) + 0.5) * static_cast<double>(k) / static_cast<double>(n));
    }
    return c;
}

/// Apply y_k = sum_m basis[k][m] * x_m (forward) or y_m = sum_k basis[k][m] * x_k
/// (inverse, the transpose) along axis `axis` of a tensor viewed as
/// [outer, n, inner].
inline void apply_axis(std::vector<double>& data, size_t outer, size_t n, size_t inner,
                       const std::vector<double>& basis, bool transpose) {
    std::vector<double> row(n), out(n);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t i = 0; i < inner; ++i) {
            double* base = data.data() + o * n * inner + i;
            for (size_t m = 0; m < n; ++m) row[m] = base[m * inner];
            for (size_t k = 0; k < n; ++k) {
                double acc = 0.0;
                if (!transpose) {
                    const double* bk = basis.data() + k * n;
                    for (size_t m = 0; m < n; ++m) acc += bk[m] * row[m];
                } else {
                    for (size_t m = 0; m < n; ++m) acc += basis[m * n + k] * row[m];
                }
                out[k] = acc;
            }
            for (size_t k = 0; k < n; ++k) base[k * inner] = out[k];
        }
    }
}

inline size_t check_trailing_axes(const Tensor& t, int ndim) {
    if (ndim < 1 || ndim > 3) throw ParamError(strf("transform rank must be 1, 2 or 3, got %d", ndim));
    if (t.ndim() < static_cast<size_t>(ndim))
        throw ShapeError("tensor has fewer axes than the transform rank");
    size_t n = t.dim(t.ndim() - 1);
    for (int a = 1; a < ndim; ++a)
        if (t.dim(t.ndim() - 1 - static_cast<size_t>(a)) != n)
            throw ShapeError("trailing transform axes must be equal-sized");
    return n;
}

inline Tensor transform(const Tensor& h, int ndim, bool inverse) {
    size_t n = check_trailing_axes(h, ndim);
    auto src = h.f32s();
    std::vector<double> work(src.begin(), src.end());
    std::vector<double> basis = dct_basis(n);

    size_t inner = 1;
    for (int a = 0; a < ndim; ++a) {
        size_t outer = h.numel() / (n * inner);
        apply_axis(work, outer, n, inner, basis, inverse);
        inner *= n;
    }

    Tensor out = Tensor::f32(h.shape());
    auto dst = out.f32s();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(work[i]);
    return out;
}

}  // namespace detail

inline Tensor dct(const Tensor& h, int ndim) { return detail::transform(h, ndim, false); }
inline Tensor idct(const Tensor& ht, int ndim) { return detail::transform(ht, ndim, true); }

/// 0/1 low-pass region in DCT index space: element is 1 iff every frequency
/// index along every masked axis is < w (0-based).
struct LowPassMask {
    int ndim;
    size_t n;
    size_t w;

    LowPassMask(int ndim_, size_t n_, size_t w_) : ndim(ndim_), n(n_), w(w_) {
        if (w < 1 || w > n) throw ParamError(strf("cutoff must satisfy 1 <= w <= n, got w=%zu n=%zu", w, n));
    }

    /// flat_idx indexes the trailing transform axes only (row-major, size n^ndim).
    bool low(size_t flat_idx) const {
        for (int a = 0; a < ndim; ++a) {
            if (flat_idx % n >= w) return false;
            flat_idx /= n;
        }
        return true;
    }
};

/// Zero out the kept-out part of the spectrum: keep_low selects the low-pass
/// region, otherwise its complement.
inline Tensor apply_mask(const Tensor& freq, const LowPassMask& m, bool keep_low) {
    size_t n = detail::check_trailing_axes(freq, m.ndim);
    if (n != m.n) throw ShapeError("mask size does not match trailing axes");
    size_t tail = 1;
    for (int a = 0; a < m.ndim; ++a) tail *= n;
    Tensor out = Tensor::f32(freq.shape());
    auto src = freq.f32s();
    auto dst = out.f32s();
    for (size_t i = 0; i < src.size(); ++i) {
        bool lo = m.low(i % tail);
        dst[i] = (lo == keep_low) ? src[i] : 0.0f;
    }
    return out;
}

/// Split a spatial tensor into its low- and high-frequency parts:
/// lfc = idct(dct(h) . M), hfc = idct(dct(h) . (1 - M)). The two parts sum
/// back to h because the masks are complementary and the transform is linear.
inline std::pair<Tensor, Tensor> split_frequency(const Tensor& h, const LowPassMask& m) {
    Tensor freq = dct(h, m.ndim);
    Tensor lfc = idct(apply_mask(freq, m, true), m.ndim);
    Tensor hfc = idct(apply_mask(freq, m, false), m.ndim);
    return {std::move(lfc), std::move(hfc)};
}

}  // namespace dualprec
