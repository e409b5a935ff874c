#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dualprec/dct.hpp"

using namespace dualprec;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Direct O(N^4) evaluation of the orthonormally scaled 2-D cosine transform
// double sum; deliberately not separable so it checks the implementation.
std::vector<double> dct2_bruteforce(std::span<const float> h, size_t n) {
    std::vector<double> out(n * n, 0.0);
    auto scale = [n](size_t k) {
        return k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    };
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t m = 0; m < n; ++m)
                for (size_t p = 0; p < n; ++p)
                    acc += h[m * n + p] * std::cos(kPi / n * (m + 0.5) * i) * std::cos(kPi / n * (p + 0.5) * j);
            out[i * n + j] = scale(i) * scale(j) * acc;
        }
    return out;
}

std::vector<double> idct2_bruteforce(std::span<const float> ht, size_t n) {
    std::vector<double> out(n * n, 0.0);
    auto scale = [n](size_t k) {
        return k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    };
    for (size_t m = 0; m < n; ++m)
        for (size_t p = 0; p < n; ++p) {
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < n; ++j)
                    acc += scale(i) * scale(j) * ht[i * n + j] * std::cos(kPi / n * (m + 0.5) * i) *
                           std::cos(kPi / n * (p + 0.5) * j);
            out[m * n + p] = acc;
        }
    return out;
}

Tensor random_tensor(const Shape& s, uint64_t seed) {
    Tensor t = Tensor::f32(s);
    Rng rng(seed);
    for (float& v : t.f32s()) v = static_cast<float>(rng.normal());
    return t;
}

}  // namespace

TEST_CASE("constant map transforms to a single DC coefficient") {
    Tensor h = Tensor::f32({4, 4});
    for (float& v : h.f32s()) v = 1.0f;
    Tensor f = dct(h, 2);
    auto fs = f.f32s();
    CHECK_THAT(fs[0], Catch::Matchers::WithinAbs(4.0, 1e-5));
    for (size_t i = 1; i < fs.size(); ++i) CHECK_THAT(fs[i], Catch::Matchers::WithinAbs(0.0, 1e-5));
}

TEST_CASE("zero maps to zero") {
    Tensor z = Tensor::f32({8, 8});
    CHECK(frobenius_norm(dct(z, 2)) == 0.0);
    CHECK(frobenius_norm(idct(z, 2)) == 0.0);
}

TEST_CASE("forward transform matches the brute-force double sum on 8x8") {
    Tensor h = random_tensor({8, 8}, 99);
    Tensor f = dct(h, 2);
    std::vector<double> oracle = dct2_bruteforce(h.f32s(), 8);
    auto fs = f.f32s();
    for (size_t i = 0; i < oracle.size(); ++i)
        CHECK_THAT(static_cast<double>(fs[i]), Catch::Matchers::WithinAbs(oracle[i], 1e-4));
}

TEST_CASE("unit impulse at DC inverts to a constant 1/N map") {
    Tensor f = Tensor::f32({4, 4});
    f.f32s()[0] = 1.0f;
    Tensor h = idct(f, 2);
    std::vector<double> oracle = idct2_bruteforce(f.f32s(), 4);
    for (size_t i = 0; i < 16; ++i) {
        CHECK_THAT(h.f32s()[i], Catch::Matchers::WithinAbs(0.25, 1e-6));
        CHECK_THAT(static_cast<double>(h.f32s()[i]), Catch::Matchers::WithinAbs(oracle[i], 1e-6));
    }
}

TEST_CASE("roundtrip identity on random 32x32") {
    Tensor h = random_tensor({32, 32}, 5);
    Tensor back = idct(dct(h, 2), 2);
    auto a = h.f32s();
    auto b = back.f32s();
    for (size_t i = 0; i < a.size(); ++i) CHECK_THAT(b[i], Catch::Matchers::WithinAbs(a[i], 1e-4));
}

TEST_CASE("Parseval holds under the orthonormal convention") {
    for (int nd = 1; nd <= 3; ++nd) {
        Shape s;
        for (int a = 0; a < nd; ++a) s.push_back(8);
        Tensor h = random_tensor(s, 100 + nd);
        double direct = frobenius_norm(h);
        double freq = frobenius_norm(dct(h, nd));
        CHECK_THAT(freq, Catch::Matchers::WithinRel(direct, 1e-4));
    }
}

TEST_CASE("linearity") {
    Tensor x = random_tensor({16, 16}, 21), y = random_tensor({16, 16}, 22);
    Tensor fx = dct(x, 2), fy = dct(y, 2);
    Tensor mix = Tensor::f32({16, 16});
    for (size_t i = 0; i < mix.numel(); ++i) mix.f32s()[i] = 2.0f * x.f32s()[i] - 3.0f * y.f32s()[i];
    Tensor fmix = dct(mix, 2);
    for (size_t i = 0; i < mix.numel(); ++i)
        CHECK_THAT(fmix.f32s()[i], Catch::Matchers::WithinAbs(2.0f * fx.f32s()[i] - 3.0f * fy.f32s()[i], 1e-4));
}

TEST_CASE("leading axes transform independently") {
    Tensor h = random_tensor({3, 2, 8, 8}, 77);
    Tensor f = dct(h, 2);
    // slice 1: transform of the slice alone must match
    Tensor slice = Tensor::f32({8, 8});
    std::copy_n(h.f32s().data() + 64, 64, slice.f32s().data());
    Tensor fslice = dct(slice, 2);
    for (size_t i = 0; i < 64; ++i)
        CHECK_THAT(f.f32s()[64 + i], Catch::Matchers::WithinAbs(fslice.f32s()[i], 1e-5));
}

TEST_CASE("low-pass mask definition") {
    LowPassMask m(2, 4, 2);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 4; ++j) CHECK(m.low(i * 4 + j) == (i < 2 && j < 2));

    LowPassMask full(2, 6, 6);
    for (size_t i = 0; i < 36; ++i) CHECK(full.low(i));

    LowPassMask vec(1, 5, 1);
    CHECK(vec.low(0));
    for (size_t i = 1; i < 5; ++i) CHECK(!vec.low(i));

    CHECK_THROWS_AS(LowPassMask(2, 4, 0), ParamError);
    CHECK_THROWS_AS(LowPassMask(2, 4, 5), ParamError);
}

TEST_CASE("mask application is idempotent") {
    Tensor h = random_tensor({8, 8}, 31);
    LowPassMask m(2, 8, 3);
    Tensor once = apply_mask(h, m, true);
    Tensor twice = apply_mask(once, m, true);
    for (size_t i = 0; i < h.numel(); ++i) CHECK(once.f32s()[i] == twice.f32s()[i]);
}

TEST_CASE("constant input splits into itself and nothing") {
    Tensor h = Tensor::f32({2, 6, 6});
    for (float& v : h.f32s()) v = 2.5f;
    auto [lfc, hfc] = split_frequency(h, LowPassMask(2, 6, 1));
    for (size_t i = 0; i < h.numel(); ++i) {
        CHECK_THAT(lfc.f32s()[i], Catch::Matchers::WithinAbs(2.5, 1e-4));
        CHECK_THAT(hfc.f32s()[i], Catch::Matchers::WithinAbs(0.0, 1e-4));
    }
}

TEST_CASE("split components sum back to the input") {
    Tensor h = random_tensor({16, 16}, 404);
    auto [lfc, hfc] = split_frequency(h, LowPassMask(2, 16, 5));
    for (size_t i = 0; i < h.numel(); ++i)
        CHECK_THAT(lfc.f32s()[i] + hfc.f32s()[i], Catch::Matchers::WithinAbs(h.f32s()[i], 1e-4));
}

TEST_CASE("alternating vector concentrates in the high band") {
    Tensor h = Tensor::f32({8});
    for (size_t i = 0; i < 8; ++i) h.f32s()[i] = (i % 2 == 0) ? 1.0f : -1.0f;
    Tensor f = dct(h, 1);
    // oracle: 1-D orthonormal transform evaluated directly
    std::vector<double> oracle(8, 0.0);
    for (size_t k = 0; k < 8; ++k) {
        double s = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        for (size_t m = 0; m < 8; ++m)
            oracle[k] += h.f32s()[m] * std::cos(kPi / 8.0 * (m + 0.5) * k);
        oracle[k] *= s;
    }
    double low_sq = 0.0, total_sq = 0.0;
    for (size_t k = 0; k < 8; ++k) {
        CHECK_THAT(f.f32s()[k], Catch::Matchers::WithinAbs(oracle[k], 1e-5));
        total_sq += oracle[k] * oracle[k];
        if (k < 4) low_sq += oracle[k] * oracle[k];
    }
    // oracle: 7.8% of the energy sits below the cutoff, 82% in the top bin
    CHECK(low_sq < 0.1 * total_sq);
    CHECK(oracle[7] * oracle[7] > 0.8 * total_sq);

    auto [lfc, hfc] = split_frequency(h, LowPassMask(1, 8, 4));
    // the low half carries sqrt(0.622/8) = 28% of the amplitude (oracle above);
    // the top bin dominates the rest
    CHECK_THAT(frobenius_norm(lfc), Catch::Matchers::WithinAbs(std::sqrt(low_sq), 1e-4));
    CHECK(frobenius_norm(hfc) > 0.95 * frobenius_norm(h));
}

TEST_CASE("mismatched trailing axes are rejected") {
    Tensor h = Tensor::f32({4, 6});
    CHECK_THROWS_AS(dct(h, 2), ShapeError);
    CHECK_THROWS_AS(split_frequency(h, LowPassMask(2, 4, 2)), ShapeError);
}
