#pragma once

#include <string>
#include <vector>

#include "dualprec/nn.hpp"

namespace dualprec {

// Byte accounting of the activation cache per strategy, and the closed-form
// per-block compression rates. Byte counts follow fixed conventions:
//   exact    : dense (linear/conv/bn) inputs at 4 B/element, relu at 1 B/element
//   lossy    : LFC at 2 B/pooled element, residual at Q/8 B/element,
//              4 B per quantization group for (step, offset), relu at 1/8 B/element
//   always   : maxpool location bytes and dropout mask bytes as stored,
//              classifier logits at 4 B/element
// Sub-byte charges are kept exact (bit counts), so per-layer bytes may be
// fractional. Batch-statistics vectors saved by batchnorm are not activation
// payload and are not counted.

struct MemoryEntry {
    size_t layer_index;
    std::string layer;
    double bytes;
};

struct MemoryReport {
    std::string strategy;
    std::vector<MemoryEntry> entries;
    double total_bytes = 0.0;
    double exact_bytes = 0.0;
    double compression_rate = 1.0;  // exact bytes / strategy bytes
};

namespace detail {

inline const char* layer_name(LayerKind k) {
    switch (k) {
        case LayerKind::Linear: return "linear";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm2d: return "batchnorm2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

inline int shape_spatial_ndim(const Shape& s) {
    if (s.size() <= 1) return 0;
    if (s.size() == 2) return 1;
    return static_cast<int>(s.size()) - 2;
}

/// Dense-input cache bytes for one activation of the given shape.
inline double dense_cache_bytes(const Shape& shape, const CacheStrategy& st) {
    double count = static_cast<double>(shape_numel(shape));
    int sdim = shape_spatial_ndim(shape);
    if (st.kind == CacheStrategy::Kind::Exact) return 4.0 * count;
    if (sdim == 0) return 2.0 * count;  // no spatial axis: bf16 copy only

    double groups = count;
    double pooled = 1.0;
    for (int a = 0; a < sdim; ++a) {
        size_t n = shape[shape.size() - 1 - static_cast<size_t>(a)];
        groups /= static_cast<double>(n);
        size_t kernel = std::min(st.block, n);
        pooled *= static_cast<double>(n / kernel);
    }
    double lfc = 2.0 * groups * pooled;
    double hfc = static_cast<double>(st.qbits) / 8.0 * count + 4.0 * groups;
    switch (st.kind) {
        case CacheStrategy::Kind::Division: return lfc + hfc;
        case CacheStrategy::Kind::LfcOnly: return lfc;
        case CacheStrategy::Kind::HfcOnly:
        case CacheStrategy::Kind::FixedQuant: return hfc;
        case CacheStrategy::Kind::Exact: break;
    }
    return 4.0 * count;
}

}  // namespace detail

inline MemoryReport account(const Network& net, const Shape& batch_shape, const CacheStrategy& strategy) {
    strategy.validate();
    MemoryReport report;
    report.strategy = strategy.label();
    Shape out_shape;
    std::vector<Shape> inputs = layer_input_shapes(net, batch_shape, &out_shape);
    CacheStrategy exact = CacheStrategy::exact();

    for (size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& s = net.layers[li].spec;
        const Shape& in = inputs[li];
        double count = static_cast<double>(shape_numel(in));
        double bytes = 0.0, ebytes = 0.0;
        switch (s.kind) {
            case LayerKind::Linear:
            case LayerKind::Conv2d:
            case LayerKind::BatchNorm2d:
                bytes = detail::dense_cache_bytes(in, strategy);
                ebytes = detail::dense_cache_bytes(in, exact);
                break;
            case LayerKind::Relu:
                bytes = strategy.kind == CacheStrategy::Kind::Exact ? count : count / 8.0;
                ebytes = count;
                break;
            case LayerKind::MaxPool: {
                double windows = count / static_cast<double>(s.pool * s.pool);
                bytes = ebytes = windows;  // one stored location byte per window
                break;
            }
            case LayerKind::Dropout:
                bytes = ebytes = std::ceil(count / 8.0);  // mask bytes as stored
                break;
            case LayerKind::AvgPool:
            case LayerKind::Flatten: bytes = ebytes = 0.0; break;
        }
        report.entries.push_back({li, detail::layer_name(s.kind), bytes});
        report.total_bytes += bytes;
        report.exact_bytes += ebytes;
    }
    if (net.classifier) {
        double logit_bytes = 4.0 * static_cast<double>(shape_numel(out_shape));
        report.entries.push_back({net.layers.size(), "loss_input", logit_bytes});
        report.total_bytes += logit_bytes;
        report.exact_bytes += logit_bytes;
    }
    report.compression_rate = report.total_bytes > 0 ? report.exact_bytes / report.total_bytes : 1.0;
    return report;
}

/// Closed-form average compression rate of a conv-bn-relu block with
/// N x N activation maps:  9 / (4/min{B^2,N^2} + Q/4 + 8/N^2 + 1/8).
inline double rate_conv_block(double n, double b, int q) {
    if (n < 1 || b < 1) throw ParamError("block rate needs N, B >= 1");
    double mn = std::min(b * b, n * n);
    return 9.0 / (4.0 / mn + static_cast<double>(q) / 4.0 + 8.0 / (n * n) + 1.0 / 8.0);
}

/// Closed-form average compression rate of a linear-relu block with N-wide
/// activations:  5 / (2/min{B,N} + Q/8 + 4/N + 1/8).
inline double rate_linear_block(double n, double b, int q) {
    if (n < 1 || b < 1) throw ParamError("block rate needs N, B >= 1");
    double mn = std::min(b, n);
    return 5.0 / (2.0 / mn + static_cast<double>(q) / 8.0 + 4.0 / n + 1.0 / 8.0);
}

}  // namespace dualprec
