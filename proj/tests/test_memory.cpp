#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dualprec/memory.hpp"

using namespace dualprec;

namespace {

Network conv_bn_relu_block() {
    std::vector<LayerSpec> spec = {LayerSpec::conv2d(1, 1, 3, 1), LayerSpec::batchnorm2d(1),
                                   LayerSpec::relu()};
    Rng rng(1);
    Network net = build_network(spec, rng);
    net.classifier = false;
    return net;
}

}  // namespace

TEST_CASE("exact accounting of a single conv input") {
    std::vector<LayerSpec> spec = {LayerSpec::conv2d(1, 1, 3, 1)};
    Rng rng(1);
    Network net = build_network(spec, rng);
    net.classifier = false;
    MemoryReport r = account(net, {1, 1, 8, 8}, CacheStrategy::exact());
    CHECK(r.total_bytes == 256.0);

    // division: 2 (one bf16 LFC cell) + 16 (64 codes at 2 bits) + 4 (step, offset)
    MemoryReport d = account(net, {1, 1, 8, 8}, CacheStrategy::division(8, 2));
    CHECK(d.total_bytes == 22.0);
}

TEST_CASE("closed-form conv block rate") {
    CHECK_THAT(rate_conv_block(7, 8, 2), Catch::Matchers::WithinAbs(10.346, 0.005));
    // asymptotic value with the 8/N^2 term gone
    CHECK_THAT(rate_conv_block(1e9, 8, 2), Catch::Matchers::WithinAbs(9.0 / (4.0 / 64 + 0.5 + 0.125), 1e-6));
    // rate strictly drops as the bit width grows
    CHECK(rate_conv_block(16, 8, 4) < rate_conv_block(16, 8, 2));
    CHECK(rate_conv_block(16, 8, 8) < rate_conv_block(16, 8, 4));
}

TEST_CASE("closed-form linear block rate") {
    CHECK_THAT(rate_linear_block(128, 16, 2), Catch::Matchers::WithinAbs(9.4118, 5e-4));
    // B >= N engages the min{B, N} branch
    CHECK(rate_linear_block(8, 16, 2) == rate_linear_block(8, 8, 2));
    // rate grows with N at fixed B, Q
    CHECK(rate_linear_block(64, 16, 2) < rate_linear_block(128, 16, 2));
    CHECK(rate_linear_block(128, 16, 2) < rate_linear_block(512, 16, 2));
}

TEST_CASE("accountant matches the conv-block formula when blocks divide or cover the map") {
    for (size_t n : {7u, 8u, 16u, 32u}) {
        Network block = conv_bn_relu_block();
        MemoryReport r = account(block, {1, 1, n, n}, CacheStrategy::division(8, 2));
        double formula = rate_conv_block(static_cast<double>(n), 8.0, 2);
        INFO("N = " << n);
        REQUIRE_THAT(r.compression_rate, Catch::Matchers::WithinRel(formula, 1e-9));
    }
}

TEST_CASE("accountant diverges from the idealized formula when B does not divide N") {
    // N = 12, B = 8: the stored low-frequency grid is 1x1 while the formula
    // assumes N^2/B^2 cells; actual bytes are authoritative
    Network block = conv_bn_relu_block();
    MemoryReport r = account(block, {1, 1, 12, 12}, CacheStrategy::division(8, 2));
    double formula = rate_conv_block(12, 8, 2);
    CHECK(std::abs(r.compression_rate - formula) > 1e-9 * formula);
}

TEST_CASE("accountant matches the linear-block formula") {
    std::vector<LayerSpec> spec = {LayerSpec::linear(128, 128), LayerSpec::relu()};
    Rng rng(1);
    Network net = build_network(spec, rng);
    net.classifier = false;
    MemoryReport r = account(net, {1, 128}, CacheStrategy::division(16, 2));
    REQUIRE_THAT(r.compression_rate, Catch::Matchers::WithinRel(rate_linear_block(128, 16, 2), 1e-9));
}

TEST_CASE("lossy strategies never exceed exact bytes and R >= 1") {
    std::vector<LayerSpec> spec = {LayerSpec::conv2d(1, 2, 3, 1), LayerSpec::batchnorm2d(2),
                                   LayerSpec::relu(), LayerSpec::maxpool(2), LayerSpec::flatten(),
                                   LayerSpec::linear(2 * 8 * 8, 4)};
    Rng rng(2);
    Network net = build_network(spec, rng);
    Shape batch{4, 1, 16, 16};
    MemoryReport exact = account(net, batch, CacheStrategy::exact());
    for (CacheStrategy st : {CacheStrategy::division(8, 2), CacheStrategy::fixed_quant(2),
                             CacheStrategy::lfc_only(8), CacheStrategy::hfc_only(2)}) {
        MemoryReport r = account(net, batch, st);
        CHECK(r.total_bytes <= exact.total_bytes);
        CHECK(r.compression_rate >= 1.0);
        // totals equal the sum of entries
        double sum = 0;
        for (const MemoryEntry& e : r.entries) sum += e.bytes;
        CHECK_THAT(r.total_bytes, Catch::Matchers::WithinRel(sum, 1e-12));
    }
}

TEST_CASE("classifier head charges its logits under every strategy") {
    std::vector<LayerSpec> spec = {LayerSpec::linear(16, 4)};
    Rng rng(3);
    Network net = build_network(spec, rng);
    MemoryReport exact = account(net, {2, 16}, CacheStrategy::exact());
    MemoryReport div = account(net, {2, 16}, CacheStrategy::division(8, 2));
    REQUIRE(exact.entries.back().layer == "loss_input");
    CHECK(exact.entries.back().bytes == 32.0);
    CHECK(div.entries.back().bytes == 32.0);
}
