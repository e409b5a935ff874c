#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "dualprec/tensor.hpp"

using namespace dualprec;

namespace {

float f32_from_bits(uint32_t bits) {
    float x;
    std::memcpy(&x, &bits, 4);
    return x;
}

// Independent nearest-bf16 oracle: the two candidate patterns around a finite
// f32 are its truncated high half and that plus one (the integer increment
// walks the IEEE grid in magnitude order, including the overflow-to-infinity
// step). Pick the closer, ties to the even pattern.
uint16_t bf16_nearest_oracle(float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    uint16_t lo = static_cast<uint16_t>(bits >> 16);
    uint16_t hi = static_cast<uint16_t>(lo + 1);
    double dx = x;
    double dl = std::abs(dx - static_cast<double>(bf16_decode(lo)));
    double dh = std::abs(static_cast<double>(bf16_decode(hi)) - dx);
    if (dl < dh) return lo;
    if (dh < dl) return hi;
    return (lo & 1) ? hi : lo;
}

}  // namespace

TEST_CASE("bf16 encode matches the stated bit-level examples") {
    CHECK(bf16_encode(1.0f) == 0x3F80);
    CHECK(bf16_encode(f32_from_bits(0x3F808000u)) == 0x3F80);  // exact halfway, round to even
    CHECK(bf16_encode(f32_from_bits(0x3F804000u)) == 0x3F80);  // below halfway
    CHECK(bf16_encode(f32_from_bits(0x3F818000u)) == 0x3F82);  // halfway above an odd pattern
}

TEST_CASE("bf16 decode maps patterns back to f32") {
    CHECK(bf16_decode(0x3F80) == 1.0f);
    CHECK(bf16_decode(0x0000) == 0.0f);
    CHECK(!std::signbit(bf16_decode(0x0000)));
    CHECK(bf16_decode(0xC000) == -2.0f);
}

TEST_CASE("bf16 encode agrees with a brute-force nearest oracle") {
    Rng rng(42);
    size_t checked = 0;
    while (checked < 20000) {
        uint32_t bits = static_cast<uint32_t>(rng.next_u64());
        float x = f32_from_bits(bits);
        if (!std::isfinite(x)) continue;
        INFO("bits=" << std::hex << bits);
        REQUIRE(bf16_encode(x) == bf16_nearest_oracle(x));
        ++checked;
    }
}

TEST_CASE("bf16 special values") {
    float inf = std::numeric_limits<float>::infinity();
    CHECK(bf16_decode(bf16_encode(inf)) == inf);
    CHECK(bf16_decode(bf16_encode(-inf)) == -inf);
    CHECK(std::isnan(bf16_decode(bf16_encode(std::nanf("")))));
    // largest finite f32 rounds up past the bf16 grid
    CHECK(bf16_decode(bf16_encode(f32_from_bits(0x7F7FFFFFu))) == inf);
}

TEST_CASE("bf16 roundtrip relative error stays within 2^-8 for normal values") {
    Rng rng(7);
    for (int i = 0; i < 5000; ++i) {
        float x = static_cast<float>(rng.uniform(-1e6, 1e6));
        if (x == 0.0f) continue;
        float back = bf16_round(x);
        CHECK(std::abs(back - x) <= std::abs(x) * (1.0f / 256.0f));
    }
}

TEST_CASE("frobenius norm") {
    Tensor t = Tensor::from_values({2, 2}, std::array<float, 4>{1, 2, 3, 4});
    CHECK_THAT(frobenius_norm(t), Catch::Matchers::WithinAbs(std::sqrt(30.0), 1e-12));

    Tensor z = Tensor::f32({5, 7});
    CHECK(frobenius_norm(z) == 0.0);

    Tensor eye = Tensor::f32({3, 3});
    for (size_t i = 0; i < 3; ++i) eye.f32s()[i * 3 + i] = 1.0f;
    CHECK_THAT(frobenius_norm(eye), Catch::Matchers::WithinAbs(std::sqrt(3.0), 1e-12));
}

TEST_CASE("norm scales linearly in |c|") {
    Rng rng(3);
    Tensor t = Tensor::f32({4, 9});
    for (float& v : t.f32s()) v = static_cast<float>(rng.normal());
    double base = frobenius_norm(t);

    // scaling held in double: 1e-12 relative
    std::vector<double> d(t.f32s().begin(), t.f32s().end());
    for (double c : {-3.0, 0.5, 2.0}) {
        std::vector<double> s = d;
        for (double& v : s) v *= c;
        CHECK_THAT(frobenius_norm(std::span<const double>(s)),
                   Catch::Matchers::WithinRel(std::abs(c) * base, 1e-12));
    }
    // scaling stored back to f32 re-rounds each element
    for (float c : {-3.0f, 0.5f, 2.0f}) {
        Tensor s = t;
        for (float& v : s.f32s()) v *= c;
        CHECK_THAT(frobenius_norm(s), Catch::Matchers::WithinRel(std::abs(c) * base, 1e-6));
    }
}

TEST_CASE("equal seeds give equal streams") {
    Rng a(123456789), b(123456789);
    for (int i = 0; i < 1000000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng c(1), d(2);
    CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("tensor payload sizes follow dtype rules") {
    CHECK(Tensor::f32({3, 5}).byte_size() == 60);
    CHECK(Tensor::bf16({3, 5}).byte_size() == 30);
    // packed rows pad to whole bytes per last-axis row
    CHECK(Tensor::packed({4, 5}, 2).byte_size() == 4 * 2);
    CHECK(Tensor::packed({4, 5}, 4).byte_size() == 4 * 3);
    CHECK(Tensor::packed({9}, 1).byte_size() == 2);
    CHECK_THROWS_AS(Tensor::f32({3, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor::packed({4}, 3), ParamError);
}

TEST_CASE("bf16 conversion round trips through tensors") {
    Rng rng(11);
    Tensor t = Tensor::f32({6, 6});
    for (float& v : t.f32s()) v = static_cast<float>(rng.normal());
    Tensor b = to_bf16(t);
    Tensor back = to_f32(b);
    auto ts = t.f32s();
    auto bs = back.f32s();
    for (size_t i = 0; i < ts.size(); ++i) CHECK(bs[i] == bf16_round(ts[i]));
}
