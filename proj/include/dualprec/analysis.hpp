#pragma once

#include <cmath>
#include <vector>

#include "dualprec/dct.hpp"
#include "dualprec/nn.hpp"

namespace dualprec::analysis {

// Theory instruments, all in double precision: masked spectral norms of
// activation maps, the layerwise upper bound on the weight-gradient error
// when a frequency component replaces the exact activation in backward, the
// frequency response of the block-mean filter, and the convolution norm
// inequality the bound construction rests on.

// --- masked spectral norms ------------------------------------------------------

struct FrequencyNorms {
    double low = 0.0;   // Frobenius norm of the kept low-pass spectrum
    double high = 0.0;  // Frobenius norm of the complement
};

/// Cutoff W = max(1, floor(w_frac * N)) on every transformed axis. The two
/// norms partition the spectrum, so low^2 + high^2 equals the squared
/// Frobenius norm of the input (orthonormal transform).
inline FrequencyNorms frequency_norms(const Tensor& h, int spatial_ndim, double w_frac) {
    if (!(w_frac > 0.0 && w_frac <= 1.0)) throw ParamError("w_frac must be in (0, 1]");
    size_t n = h.dim(h.ndim() - 1);
    size_t w = std::max<size_t>(1, static_cast<size_t>(std::floor(w_frac * static_cast<double>(n))));
    Tensor freq = dct(h, spatial_ndim);
    LowPassMask mask(spatial_ndim, n, w);
    size_t tail = 1;
    for (int a = 0; a < spatial_ndim; ++a) tail *= n;
    double lo = 0.0, hi = 0.0;
    auto fs = freq.f32s();
    for (size_t i = 0; i < fs.size(); ++i) {
        double v = fs[i];
        if (mask.low(i % tail))
            lo += v * v;
        else
            hi += v * v;
    }
    return {std::sqrt(lo), std::sqrt(hi)};
}

// --- f64 plane helpers -----------------------------------------------------------

using Plane = std::vector<double>;  // n x n, row-major

namespace detail {

inline Plane dct2(const Plane& h, size_t n, bool inverse) {
    std::vector<double> basis = dualprec::detail::dct_basis(n);
    Plane tmp(n * n, 0.0), out(n * n, 0.0);
    for (size_t r = 0; r < n; ++r)
        for (size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            for (size_t m = 0; m < n; ++m)
                acc += (inverse ? basis[m * n + k] : basis[k * n + m]) * h[r * n + m];
            tmp[r * n + k] = acc;
        }
    for (size_t c = 0; c < n; ++c)
        for (size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            for (size_t m = 0; m < n; ++m)
                acc += (inverse ? basis[m * n + k] : basis[k * n + m]) * tmp[m * n + c];
            out[k * n + c] = acc;
        }
    return out;
}

/// Low- or high-pass component of an n x n plane at cutoff w.
inline Plane masked_component(const Plane& h, size_t n, size_t w, bool keep_low) {
    Plane freq = dct2(h, n, false);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            bool lo = i < w && j < w;
            if (lo != keep_low) freq[i * n + j] = 0.0;
        }
    return dct2(freq, n, true);
}

/// Same-padded cross-correlation of an n x n plane with a k x k kernel.
inline Plane corr_same(const Plane& h, size_t n, const std::vector<double>& w, size_t k) {
    long pad = static_cast<long>((k - 1) / 2);
    Plane z(n * n, 0.0);
    for (size_t y = 0; y < n; ++y)
        for (size_t x = 0; x < n; ++x) {
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) {
                long iy = static_cast<long>(y + p) - pad;
                if (iy < 0 || iy >= static_cast<long>(n)) continue;
                for (size_t q = 0; q < k; ++q) {
                    long ix = static_cast<long>(x + q) - pad;
                    if (ix < 0 || ix >= static_cast<long>(n)) continue;
                    acc += w[p * k + q] * h[iy * n + ix];
                }
            }
            z[y * n + x] = acc;
        }
    return z;
}

/// Gradient of corr_same with respect to the plane.
inline Plane corr_same_back_data(const Plane& dz, size_t n, const std::vector<double>& w, size_t k) {
    long pad = static_cast<long>((k - 1) / 2);
    Plane dh(n * n, 0.0);
    for (size_t y = 0; y < n; ++y)
        for (size_t x = 0; x < n; ++x) {
            double d = dz[y * n + x];
            for (size_t p = 0; p < k; ++p) {
                long iy = static_cast<long>(y + p) - pad;
                if (iy < 0 || iy >= static_cast<long>(n)) continue;
                for (size_t q = 0; q < k; ++q) {
                    long ix = static_cast<long>(x + q) - pad;
                    if (ix < 0 || ix >= static_cast<long>(n)) continue;
                    dh[iy * n + ix] += d * w[p * k + q];
                }
            }
        }
    return dh;
}

/// Gradient of corr_same with respect to the kernel.
inline std::vector<double> corr_same_back_kernel(const Plane& dz, const Plane& h, size_t n, size_t k) {
    long pad = static_cast<long>((k - 1) / 2);
    std::vector<double> dw(k * k, 0.0);
    for (size_t y = 0; y < n; ++y)
        for (size_t x = 0; x < n; ++x) {
            double d = dz[y * n + x];
            for (size_t p = 0; p < k; ++p) {
                long iy = static_cast<long>(y + p) - pad;
                if (iy < 0 || iy >= static_cast<long>(n)) continue;
                for (size_t q = 0; q < k; ++q) {
                    long ix = static_cast<long>(x + q) - pad;
                    if (ix < 0 || ix >= static_cast<long>(n)) continue;
                    dw[p * k + q] += d * h[iy * n + ix];
                }
            }
        }
    return dw;
}

inline double norm(const Plane& p) { return frobenius_norm(std::span<const double>(p)); }

inline double act_apply_d(Act a, double z) {
    switch (a) {
        case Act::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Act::Tanh: return std::tanh(z);
        case Act::Softplus: return z > 30.0 ? z : std::log1p(std::exp(z));
        default: return z;
    }
}

inline double act_deriv_d(Act a, double z) {
    switch (a) {
        case Act::Sigmoid: {
            double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 - s);
        }
        case Act::Tanh: {
            double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Act::Softplus: return 1.0 / (1.0 + std::exp(-z));
        default: return 1.0;
    }
}

}  // namespace detail

// --- bound coefficients ------------------------------------------------------------

/// Per-layer norms the bound is built from. Index i runs over layers 0..L-1;
/// activation i is the input of layer i (activation 0 = network input).
///   c[i]            size constant K_i + N - 1, or 1 for linear layers
///   w_norm[i]       Frobenius norm of the layer's weight
///   zgrad_norm[i]   norm of the pre-activation gradient of the substituted run
///   sprime_norm[i]  norm of the activation derivative at the exact pre-activation
///   h_norm[i]       norm of the exact input activation of layer i
struct LayerNormProfile {
    std::vector<double> c, w_norm, zgrad_norm, sprime_norm, h_norm;
    size_t layer_count() const { return c.size(); }
};

struct BoundCoefficients {
    std::vector<double> alpha;  // alpha[i - l] for i = l .. L-1; alpha for i = L-1 is 0
    double beta = 0.0;
    std::vector<double> gamma;  // gamma[j - l] for j = l .. L-2
};

/// Coefficients of the layerwise error recursion for layer l (0-based). The
/// term referencing the layer past the stack is zero: the final pre-activation
/// gradient is exact when the loss attaches directly to the last activation.
inline BoundCoefficients bound_coefficients(const LayerNormProfile& p, size_t l) {
    size_t L = p.layer_count();
    if (l >= L) throw ParamError("layer index out of range");
    BoundCoefficients bc;
    bc.beta = p.c[l] * p.zgrad_norm[l];
    for (size_t i = l; i < L; ++i) {
        double a = 0.0;
        if (i + 1 < L)
            a = p.c[l] * p.c[i] * p.c[i] * p.zgrad_norm[i + 1] * p.w_norm[i + 1] * p.w_norm[i];
        bc.alpha.push_back(a);
    }
    for (size_t j = l; j + 1 < L; ++j) bc.gamma.push_back(p.c[j] * p.w_norm[j + 1] * p.sprime_norm[j]);
    return bc;
}

/// Upper bound on || grad_W error || at layer l given per-activation
/// substitution errors delta[i] = ||a_i_hat - a_i||_F for i = 0..L-1.
inline double grad_error_bound(const LayerNormProfile& p, size_t l, std::span<const double> delta) {
    BoundCoefficients bc = bound_coefficients(p, l);
    double total = (bc.alpha[0] * p.h_norm[l] + bc.beta) * delta[l];
    double gprod = 1.0;
    for (size_t i = l + 1; i < p.layer_count(); ++i) {
        gprod *= bc.gamma[i - 1 - l];
        total += p.h_norm[l] * bc.alpha[i - l] * delta[i] * gprod;
    }
    return total;
}

/// Difference of the two bounds (low-frequency run minus high-frequency run)
/// evaluated with shared coefficients; its sign follows the sign of
/// high - low norms when that sign is uniform across layers.
inline double bound_gap(const LayerNormProfile& p, size_t l, std::span<const double> lambda_low,
                        std::span<const double> lambda_high) {
    std::vector<double> dl(lambda_high.begin(), lambda_high.end());
    std::vector<double> dh(lambda_low.begin(), lambda_low.end());
    return grad_error_bound(p, l, dl) - grad_error_bound(p, l, dh);
}

// --- substituted-backward verification ------------------------------------------------

/// Single-channel stack of same-padded square convolutions with a smooth
/// fused activation and a quadratic loss on the final map.
struct ConvStack {
    struct ConvLayer {
        size_t kernel;
        Act act;
        std::vector<double> w;
        double bias;
    };
    size_t n;  // map size, constant through the stack
    std::vector<ConvLayer> layers;

    static ConvStack random(size_t n, std::span<const size_t> kernels, Act act, Rng& rng) {
        ConvStack s;
        s.n = n;
        for (size_t k : kernels) {
            if (k % 2 == 0) throw ParamError("analysis kernels must be odd");
            ConvLayer l;
            l.kernel = k;
            l.act = act;
            l.w.resize(k * k);
            double scale = 1.0 / static_cast<double>(k);
            for (double& x : l.w) x = rng.uniform(-scale, scale);
            l.bias = rng.uniform(-0.1, 0.1);
            s.layers.push_back(std::move(l));
        }
        return s;
    }
};

enum class SubstMode { Lfc, Hfc };

struct BoundTrial {
    std::vector<double> observed;  // per layer
    std::vector<double> bound;
    std::vector<double> lambda_low, lambda_high;  // per cached activation
    LayerNormProfile profile;                     // norms the bound was built from
    bool holds = true;
};

/// Runs the exact backward and the backward with every cached activation
/// replaced by its masked frequency component, and checks the observed
/// weight-gradient error against the bound at every layer.
///
/// The substituted backward recomputes each pre-activation from the
/// substituted input for the activation derivative; the final layer's
/// derivative comes from the exact output, which is never cached lossily,
/// so its pre-activation gradient is exact and the recursion terminates.
inline BoundTrial verify_frequency_bound(const ConvStack& net, const Plane& input, const Plane& target,
                                         SubstMode mode, double w_frac) {
    for (const auto& l : net.layers)
        if (l.act == Act::Relu || l.act == Act::Identity)
            throw ParamError("bound verification needs a smooth activation (sigmoid/tanh/softplus)");
    size_t n = net.n;
    size_t L = net.layers.size();
    if (input.size() != n * n || target.size() != n * n) throw ShapeError("plane size mismatch");
    size_t w_cut = std::max<size_t>(1, static_cast<size_t>(std::floor(w_frac * static_cast<double>(n))));

    // exact forward
    std::vector<Plane> acts(L + 1), zs(L);
    acts[0] = input;
    for (size_t l = 0; l < L; ++l) {
        zs[l] = detail::corr_same(acts[l], n, net.layers[l].w, net.layers[l].kernel);
        for (double& v : zs[l]) v += net.layers[l].bias;
        acts[l + 1] = zs[l];
        for (double& v : acts[l + 1]) v = detail::act_apply_d(net.layers[l].act, v);
    }

    // exact backward, quadratic loss 0.5 * || a_L - target ||^2
    Plane dh(n * n);
    for (size_t i = 0; i < n * n; ++i) dh[i] = acts[L][i] - target[i];
    std::vector<std::vector<double>> dw_exact(L);
    {
        Plane g = dh;
        for (size_t l = L; l-- > 0;) {
            Plane dz = g;
            for (size_t i = 0; i < n * n; ++i) dz[i] *= detail::act_deriv_d(net.layers[l].act, zs[l][i]);
            dw_exact[l] = detail::corr_same_back_kernel(dz, acts[l], n, net.layers[l].kernel);
            if (l > 0) g = detail::corr_same_back_data(dz, n, net.layers[l].w, net.layers[l].kernel);
        }
    }

    // substituted activations for the cached inputs a_0 .. a_{L-1}
    std::vector<Plane> subst(L);
    BoundTrial trial;
    for (size_t i = 0; i < L; ++i) {
        subst[i] = detail::masked_component(acts[i], n, w_cut, mode == SubstMode::Lfc);
        Plane freq = detail::dct2(acts[i], n, false);
        double lo = 0.0, hi = 0.0;
        for (size_t a = 0; a < n; ++a)
            for (size_t b = 0; b < n; ++b)
                (a < w_cut && b < w_cut ? lo : hi) += freq[a * n + b] * freq[a * n + b];
        trial.lambda_low.push_back(std::sqrt(lo));
        trial.lambda_high.push_back(std::sqrt(hi));
    }

    // substituted backward
    std::vector<std::vector<double>> dw_subst(L);
    std::vector<double> zgrad_subst(L);
    {
        Plane g = dh;  // exact: the final activation feeds the loss uncompressed
        for (size_t l = L; l-- > 0;) {
            Plane dz = g;
            if (l + 1 == L) {
                for (size_t i = 0; i < n * n; ++i) dz[i] *= detail::act_deriv_d(net.layers[l].act, zs[l][i]);
            } else {
                Plane zhat = detail::corr_same(subst[l], n, net.layers[l].w, net.layers[l].kernel);
                for (size_t i = 0; i < n * n; ++i)
                    dz[i] *= detail::act_deriv_d(net.layers[l].act, zhat[i] + net.layers[l].bias);
            }
            zgrad_subst[l] = detail::norm(dz);
            dw_subst[l] = detail::corr_same_back_kernel(dz, subst[l], n, net.layers[l].kernel);
            if (l > 0) g = detail::corr_same_back_data(dz, n, net.layers[l].w, net.layers[l].kernel);
        }
    }

    LayerNormProfile prof;
    std::vector<double> delta(L);
    for (size_t l = 0; l < L; ++l) {
        prof.c.push_back(static_cast<double>(net.layers[l].kernel + n - 1));
        prof.w_norm.push_back(frobenius_norm(std::span<const double>(net.layers[l].w)));
        prof.zgrad_norm.push_back(zgrad_subst[l]);
        Plane sp = zs[l];
        for (double& v : sp) v = detail::act_deriv_d(net.layers[l].act, v);
        prof.sprime_norm.push_back(detail::norm(sp));
        prof.h_norm.push_back(detail::norm(acts[l]));
        delta[l] = mode == SubstMode::Lfc ? trial.lambda_high[l] : trial.lambda_low[l];
    }

    for (size_t l = 0; l < L; ++l) {
        std::vector<double> diff(dw_exact[l].size());
        for (size_t i = 0; i < diff.size(); ++i) diff[i] = dw_subst[l][i] - dw_exact[l][i];
        double observed = frobenius_norm(std::span<const double>(diff));
        double bound = grad_error_bound(prof, l, delta);
        trial.observed.push_back(observed);
        trial.bound.push_back(bound);
        // the absolute term only matters when both sides are numerical dust
        // (zero perturbation); real bounds are many orders larger
        if (!(observed <= bound * (1.0 + 1e-9) + 1e-9)) trial.holds = false;
    }
    trial.profile = std::move(prof);
    return trial;
}

// --- the same verification for dense (vector) stacks --------------------------------------

/// Stack of square dense layers on an N-vector, z = W h + b, h' = act(z).
/// The bound coefficients are the conv ones with every size constant at 1.
struct DenseStack {
    size_t n;
    struct DenseLayer {
        Act act;
        std::vector<double> w;  // n x n
        std::vector<double> b;  // n
    };
    std::vector<DenseLayer> layers;

    static DenseStack random(size_t n, size_t depth, Act act, Rng& rng) {
        DenseStack s;
        s.n = n;
        double scale = 1.0 / std::sqrt(static_cast<double>(n));
        for (size_t l = 0; l < depth; ++l) {
            DenseLayer dl;
            dl.act = act;
            dl.w.resize(n * n);
            dl.b.resize(n);
            for (double& x : dl.w) x = rng.uniform(-scale, scale);
            for (double& x : dl.b) x = rng.uniform(-0.1, 0.1);
            s.layers.push_back(std::move(dl));
        }
        return s;
    }
};

namespace detail {

inline std::vector<double> dct1(const std::vector<double>& h, size_t n, bool inverse) {
    std::vector<double> basis = dualprec::detail::dct_basis(n);
    std::vector<double> out(n, 0.0);
    for (size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (size_t m = 0; m < n; ++m) acc += (inverse ? basis[m * n + k] : basis[k * n + m]) * h[m];
        out[k] = acc;
    }
    return out;
}

inline std::vector<double> masked_component_1d(const std::vector<double>& h, size_t n, size_t w,
                                               bool keep_low) {
    std::vector<double> freq = dct1(h, n, false);
    for (size_t k = 0; k < n; ++k)
        if ((k < w) != keep_low) freq[k] = 0.0;
    return dct1(freq, n, true);
}

inline std::vector<double> matvec(const std::vector<double>& w, const std::vector<double>& x, size_t n,
                                  bool transpose) {
    std::vector<double> y(n, 0.0);
    for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < n; ++c) y[r] += (transpose ? w[c * n + r] : w[r * n + c]) * x[c];
    return y;
}

}  // namespace detail

/// Dense-stack analogue of verify_frequency_bound: quadratic loss on the
/// final activation, every cached input replaced by a masked 1-D frequency
/// component, exact final-layer derivative.
inline BoundTrial verify_frequency_bound_linear(const DenseStack& net, const std::vector<double>& input,
                                                const std::vector<double>& target, SubstMode mode,
                                                double w_frac) {
    for (const auto& l : net.layers)
        if (l.act == Act::Relu || l.act == Act::Identity)
            throw ParamError("bound verification needs a smooth activation (sigmoid/tanh/softplus)");
    size_t n = net.n;
    size_t L = net.layers.size();
    if (input.size() != n || target.size() != n) throw ShapeError("vector size mismatch");
    size_t w_cut = std::max<size_t>(1, static_cast<size_t>(std::floor(w_frac * static_cast<double>(n))));

    std::vector<std::vector<double>> acts(L + 1), zs(L);
    acts[0] = input;
    for (size_t l = 0; l < L; ++l) {
        zs[l] = detail::matvec(net.layers[l].w, acts[l], n, false);
        for (size_t i = 0; i < n; ++i) zs[l][i] += net.layers[l].b[i];
        acts[l + 1] = zs[l];
        for (double& v : acts[l + 1]) v = detail::act_apply_d(net.layers[l].act, v);
    }

    std::vector<double> dh(n);
    for (size_t i = 0; i < n; ++i) dh[i] = acts[L][i] - target[i];

    auto outer_grad = [&](const std::vector<double>& dz, const std::vector<double>& h) {
        std::vector<double> dw(n * n);
        for (size_t r = 0; r < n; ++r)
            for (size_t c = 0; c < n; ++c) dw[r * n + c] = dz[r] * h[c];
        return dw;
    };

    std::vector<std::vector<double>> dw_exact(L);
    {
        std::vector<double> g = dh;
        for (size_t l = L; l-- > 0;) {
            std::vector<double> dz = g;
            for (size_t i = 0; i < n; ++i) dz[i] *= detail::act_deriv_d(net.layers[l].act, zs[l][i]);
            dw_exact[l] = outer_grad(dz, acts[l]);
            if (l > 0) g = detail::matvec(net.layers[l].w, dz, n, true);
        }
    }

    std::vector<std::vector<double>> subst(L);
    BoundTrial trial;
    for (size_t i = 0; i < L; ++i) {
        subst[i] = detail::masked_component_1d(acts[i], n, w_cut, mode == SubstMode::Lfc);
        std::vector<double> freq = detail::dct1(acts[i], n, false);
        double lo = 0.0, hi = 0.0;
        for (size_t k = 0; k < n; ++k) (k < w_cut ? lo : hi) += freq[k] * freq[k];
        trial.lambda_low.push_back(std::sqrt(lo));
        trial.lambda_high.push_back(std::sqrt(hi));
    }

    std::vector<std::vector<double>> dw_subst(L);
    std::vector<double> zgrad_subst(L);
    {
        std::vector<double> g = dh;
        for (size_t l = L; l-- > 0;) {
            std::vector<double> dz = g;
            if (l + 1 == L) {
                for (size_t i = 0; i < n; ++i) dz[i] *= detail::act_deriv_d(net.layers[l].act, zs[l][i]);
            } else {
                std::vector<double> zhat = detail::matvec(net.layers[l].w, subst[l], n, false);
                for (size_t i = 0; i < n; ++i)
                    dz[i] *= detail::act_deriv_d(net.layers[l].act, zhat[i] + net.layers[l].b[i]);
            }
            zgrad_subst[l] = frobenius_norm(std::span<const double>(dz));
            dw_subst[l] = outer_grad(dz, subst[l]);
            if (l > 0) g = detail::matvec(net.layers[l].w, dz, n, true);
        }
    }

    LayerNormProfile prof;
    std::vector<double> delta(L);
    for (size_t l = 0; l < L; ++l) {
        prof.c.push_back(1.0);  // dense layers carry no size constant
        prof.w_norm.push_back(frobenius_norm(std::span<const double>(net.layers[l].w)));
        prof.zgrad_norm.push_back(zgrad_subst[l]);
        std::vector<double> sp = zs[l];
        for (double& v : sp) v = detail::act_deriv_d(net.layers[l].act, v);
        prof.sprime_norm.push_back(frobenius_norm(std::span<const double>(sp)));
        prof.h_norm.push_back(frobenius_norm(std::span<const double>(acts[l])));
        delta[l] = mode == SubstMode::Lfc ? trial.lambda_high[l] : trial.lambda_low[l];
    }

    for (size_t l = 0; l < L; ++l) {
        std::vector<double> diff(dw_exact[l].size());
        for (size_t i = 0; i < diff.size(); ++i) diff[i] = dw_subst[l][i] - dw_exact[l][i];
        double observed = frobenius_norm(std::span<const double>(diff));
        double bound = grad_error_bound(prof, l, delta);
        trial.observed.push_back(observed);
        trial.bound.push_back(bound);
        if (!(observed <= bound * (1.0 + 1e-9) + 1e-9)) trial.holds = false;
    }
    trial.profile = std::move(prof);
    return trial;
}

// --- block-mean frequency response -----------------------------------------------------

/// Max absolute deviation, over DFT bins k < n/8, between the discrete
/// magnitude response of a length-2B box kernel (value 1/(2B)) and the
/// continuous envelope |sin(wB)/(wB)| at w = 2*pi*k/n.
inline double box_filter_response(size_t b_samples, size_t n) {
    if (b_samples < 1) throw ParamError("kernel half-width must be >= 1");
    size_t m = 2 * b_samples;
    if (n < 8 * m) throw ParamError("n must be much larger than the kernel");
    const double pi = 3.14159265358979323846;
    double worst = 0.0;
    for (size_t k = 0; k < n / 8; ++k) {
        double re = 0.0, im = 0.0;
        for (size_t s = 0; s < m; ++s) {
            double ang = -2.0 * pi * static_cast<double>(k) * static_cast<double>(s) / static_cast<double>(n);
            re += std::cos(ang);
            im += std::sin(ang);
        }
        double disc = std::sqrt(re * re + im * im) / static_cast<double>(m);
        double env;
        if (k == 0) {
            env = 1.0;
        } else {
            double wb = 2.0 * pi * static_cast<double>(k) / static_cast<double>(n) * static_cast<double>(b_samples);
            env = std::fabs(std::sin(wb) / wb);
        }
        worst = std::max(worst, std::fabs(disc - env));
    }
    return worst;
}

// --- convolution norm inequality ---------------------------------------------------------

struct InequalityCheck {
    double lhs = 0.0, rhs = 0.0;
    bool holds = true;
};

/// Full (zero-padded, size K+N-1) convolution:
/// || W * H ||_F <= (K + N - 1) ||W||_F ||H||_F.
inline InequalityCheck conv_norm_inequality(const Tensor& w, const Tensor& h) {
    if (w.ndim() != 2 || w.dim(0) != w.dim(1)) throw ShapeError("kernel must be square");
    if (h.ndim() != 2 || h.dim(0) != h.dim(1)) throw ShapeError("matrix must be square");
    size_t k = w.dim(0), n = h.dim(0), full = k + n - 1;
    auto ws = w.f32s();
    auto hs = h.f32s();
    double lhs_sq = 0.0;
    for (size_t u = 0; u < full; ++u)
        for (size_t v = 0; v < full; ++v) {
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) {
                if (u < p || u - p >= n) continue;
                for (size_t q = 0; q < k; ++q) {
                    if (v < q || v - q >= n) continue;
                    acc += static_cast<double>(ws[p * k + q]) * hs[(u - p) * n + (v - q)];
                }
            }
            lhs_sq += acc * acc;
        }
    InequalityCheck c;
    c.lhs = std::sqrt(lhs_sq);
    c.rhs = static_cast<double>(full) * frobenius_norm(w) * frobenius_norm(h);
    c.holds = c.lhs <= c.rhs * (1.0 + 1e-12) + 1e-300;
    return c;
}

}  // namespace dualprec::analysis
