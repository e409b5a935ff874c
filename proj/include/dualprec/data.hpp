#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dualprec/tensor.hpp"

namespace dualprec {

struct Dataset {
    Tensor features;              // count x dim  or  count x channel x H x W
    std::vector<int32_t> labels;  // in [0, num_classes)
    int num_classes = 0;

    size_t size() const { return labels.size(); }
    size_t sample_stride() const { return features.numel() / std::max<size_t>(labels.size(), 1); }
};

/// Isotropic Gaussian clusters at seeded random centers (centers i.i.d.
/// standard normal per coordinate, samples = center + spread * noise).
inline Dataset gen_blobs(int classes, size_t dim, size_t per_class, double spread, uint64_t seed) {
    if (classes < 1 || dim < 1 || per_class < 1) throw ParamError("blob parameters must be positive");
    if (spread < 0) throw ParamError("spread must be nonnegative");
    Rng rng(derive_seed(seed, 0xB10B));
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers)
        for (auto& x : c) x = rng.normal();

    size_t count = static_cast<size_t>(classes) * per_class;
    Dataset ds;
    ds.num_classes = classes;
    ds.features = Tensor::f32({count, dim});
    ds.labels.resize(count);
    auto out = ds.features.f32s();
    for (int k = 0; k < classes; ++k)
        for (size_t i = 0; i < per_class; ++i) {
            size_t row = static_cast<size_t>(k) * per_class + i;
            ds.labels[row] = k;
            float* f = out.data() + row * dim;
            for (size_t d = 0; d < dim; ++d)
                f[d] = static_cast<float>(centers[k][d] + spread * rng.normal());
        }
    return ds;
}

/// Single-channel images mixing a class-specific base level, an oriented
/// linear gradient, an oriented stripe pattern and pixel noise, clamped to
/// [0, 1]. Classes differ in base level, gradient direction and stripe
/// frequency, so both coarse and fine structure carry label information.
inline Dataset gen_textured_images(int classes, size_t size, size_t per_class, uint64_t seed) {
    if (classes < 1 || per_class < 1) throw ParamError("image parameters must be positive");
    if (size < 8) throw ParamError("image size must be >= 8");
    Rng rng(derive_seed(seed, 0x1347E));
    size_t count = static_cast<size_t>(classes) * per_class;
    Dataset ds;
    ds.num_classes = classes;
    ds.features = Tensor::f32({count, 1, size, size});
    ds.labels.resize(count);
    auto out = ds.features.f32s();
    const double pi = 3.14159265358979323846;
    double n = static_cast<double>(size);
    for (int k = 0; k < classes; ++k) {
        double base = 0.42 + 0.12 * static_cast<double>(k) / std::max(1, classes - 1);
        double grad_theta = pi * static_cast<double>(k) / classes;
        double gx = std::cos(grad_theta), gy = std::sin(grad_theta);
        double stripe_freq = 3.0 + 2.0 * (k % 3);
        double stripe_theta = pi * (2.0 * k + 1.0) / (2.0 * classes);
        double sx = std::cos(stripe_theta), sy = std::sin(stripe_theta);
        for (size_t i = 0; i < per_class; ++i) {
            size_t row = static_cast<size_t>(k) * per_class + i;
            ds.labels[row] = k;
            float* img = out.data() + row * size * size;
            double phase = rng.uniform(0.0, 2.0 * pi);
            double grad_amp = 0.08 * (1.0 + 0.25 * rng.uniform());
            double stripe_amp = 0.06 * (1.0 + 0.3 * rng.uniform());
            for (size_t y = 0; y < size; ++y)
                for (size_t x = 0; x < size; ++x) {
                    double u = (2.0 * x - (n - 1)) / n;
                    double v = (2.0 * y - (n - 1)) / n;
                    double val = base;
                    val += grad_amp * (u * gx + v * gy);
                    val += stripe_amp * std::sin(2.0 * pi * stripe_freq * (u * sx + v * sy) / 2.0 + phase);
                    val += 0.25 * rng.normal();
                    img[y * size + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
                }
        }
    }
    return ds;
}

// --- delimited text ---------------------------------------------------------

/// Rectangular numeric table with one label column. Features are standardized
/// to zero mean / unit variance per column; labels are factorized to 0..k-1 in
/// first-appearance order.
inline Dataset load_delimited(const std::string& path, size_t label_column, char delimiter) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t start = 0;
        while (true) {
            size_t at = line.find(delimiter, start);
            cells.push_back(line.substr(start, at - start));
            if (at == std::string::npos) break;
            start = at + 1;
        }
        if (!rows.empty() && cells.size() != rows[0].size())
            throw ParseError(strf("%s: row %zu has %zu cells, expected %zu", path.c_str(), line_no,
                                  cells.size(), rows[0].size()));
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw ParseError(path + ": empty table");
    size_t cols = rows[0].size();
    if (label_column >= cols)
        throw ParseError(strf("%s: label column %zu out of range (%zu columns)", path.c_str(), label_column, cols));

    size_t dim = cols - 1;
    Dataset ds;
    ds.features = Tensor::f32({rows.size(), dim});
    ds.labels.resize(rows.size());
    std::vector<std::string> label_values;
    auto out = ds.features.f32s();
    for (size_t r = 0; r < rows.size(); ++r) {
        size_t d = 0;
        for (size_t c = 0; c < cols; ++c) {
            const std::string& cell = rows[r][c];
            if (c == label_column) {
                auto it = std::find(label_values.begin(), label_values.end(), cell);
                if (it == label_values.end()) {
                    label_values.push_back(cell);
                    ds.labels[r] = static_cast<int32_t>(label_values.size() - 1);
                } else {
                    ds.labels[r] = static_cast<int32_t>(it - label_values.begin());
                }
            } else {
                char* end = nullptr;
                double v = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str() || *end != '\0')
                    throw ParseError(strf("%s: row %zu column %zu: '%s' is not numeric", path.c_str(), r + 1,
                                          c + 1, cell.c_str()));
                out[r * dim + d] = static_cast<float>(v);
                ++d;
            }
        }
    }
    ds.num_classes = static_cast<int>(label_values.size());

    // per-column standardization
    for (size_t c = 0; c < dim; ++c) {
        double mean = 0.0;
        for (size_t r = 0; r < rows.size(); ++r) mean += out[r * dim + c];
        mean /= static_cast<double>(rows.size());
        double var = 0.0;
        for (size_t r = 0; r < rows.size(); ++r) {
            double d = out[r * dim + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(rows.size());
        double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
        for (size_t r = 0; r < rows.size(); ++r)
            out[r * dim + c] = static_cast<float>((out[r * dim + c] - mean) * inv);
    }
    return ds;
}

/// Seeded shuffle split into disjoint, exhaustive train/eval parts.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_frac, uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ParamError("train fraction must be in (0, 1)");
    size_t count = ds.size();
    std::vector<size_t> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x59117));
    for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    size_t n_train = std::max<size_t>(1, static_cast<size_t>(std::floor(train_frac * count)));
    n_train = std::min(n_train, count - 1);
    size_t stride = ds.sample_stride();
    auto take = [&](size_t begin, size_t end) {
        Dataset part;
        part.num_classes = ds.num_classes;
        Shape s = ds.features.shape();
        s[0] = end - begin;
        part.features = Tensor::f32(s);
        part.labels.resize(end - begin);
        auto src = ds.features.f32s();
        auto dst = part.features.f32s();
        for (size_t i = begin; i < end; ++i) {
            size_t at = order[i];
            std::copy_n(src.data() + at * stride, stride, dst.data() + (i - begin) * stride);
            part.labels[i - begin] = ds.labels[at];
        }
        return part;
    };
    return {take(0, n_train), take(n_train, count)};
}

// --- binary tensor container --------------------------------------------------

// Layout: magic "DIVT", version u8 = 1, dtype u8 (0 = f32, 1 = bf16,
// 2 = packed + following u8 bit width), ndim u8, ndim x u64 little-endian
// dims, then the raw little-endian payload.

inline void write_divt(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write("DIVT", 4);
    uint8_t version = 1;
    uint8_t dtype = static_cast<uint8_t>(t.dtype());
    uint8_t ndim = static_cast<uint8_t>(t.ndim());
    f.put(static_cast<char>(version));
    f.put(static_cast<char>(dtype));
    if (t.dtype() == DType::Packed) f.put(static_cast<char>(t.qbits()));
    f.put(static_cast<char>(ndim));
    for (size_t d : t.shape()) {
        uint64_t v = d;
        for (int b = 0; b < 8; ++b) f.put(static_cast<char>((v >> (8 * b)) & 0xFF));
    }
    f.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.byte_size()));
    if (!f) throw FormatError("write failed for " + path);
}

inline Tensor read_divt(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "DIVT")
        throw FormatError(path + ": bad magic, expected \"DIVT\"");
    auto get_u8 = [&](const char* what) {
        int c = f.get();
        if (c < 0) throw FormatError(path + ": truncated before " + what);
        return static_cast<uint8_t>(c);
    };
    uint8_t version = get_u8("version");
    if (version != 1) throw FormatError(strf("%s: unsupported version %u", path.c_str(), version));
    uint8_t dtype = get_u8("dtype");
    if (dtype > 2) throw FormatError(strf("%s: unknown dtype %u", path.c_str(), dtype));
    int qbits = 0;
    if (dtype == 2) qbits = get_u8("bit width");
    uint8_t ndim = get_u8("rank");
    Shape shape(ndim);
    for (size_t a = 0; a < ndim; ++a) {
        uint64_t v = 0;
        for (int b = 0; b < 8; ++b) {
            int c = f.get();
            if (c < 0) throw FormatError(path + ": truncated in dims");
            v |= static_cast<uint64_t>(c) << (8 * b);
        }
        if (v == 0) throw FormatError(path + ": zero dimension");
        shape[a] = static_cast<size_t>(v);
    }
    Tensor t;
    switch (static_cast<DType>(dtype)) {
        case DType::F32: t = Tensor::f32(shape); break;
        case DType::BF16: t = Tensor::bf16(shape); break;
        case DType::Packed: t = Tensor::packed(shape, qbits); break;
    }
    f.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.byte_size()));
    if (static_cast<size_t>(f.gcount()) != t.byte_size())
        throw FormatError(strf("%s: payload is %zd bytes, expected %zu", path.c_str(),
                               static_cast<ptrdiff_t>(f.gcount()), t.byte_size()));
    char extra;
    if (f.read(&extra, 1)) throw FormatError(path + ": trailing bytes after payload");
    return t;
}

}  // namespace dualprec
