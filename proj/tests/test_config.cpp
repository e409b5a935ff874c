#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "dualprec/config.hpp"

using namespace dualprec;
namespace fs = std::filesystem;

TEST_CASE("net spec grammar") {
    auto layers = parse_net_spec("conv:1:6:3:1,relu,maxpool:2,conv:6:12:3:1:sigmoid,flatten,linear:192:4");
    REQUIRE(layers.size() == 6);
    CHECK(layers[0].kind == LayerKind::Conv2d);
    CHECK(layers[0].in == 1);
    CHECK(layers[0].out == 6);
    CHECK(layers[0].kernel == 3);
    CHECK(layers[0].pad == 1);
    CHECK(layers[0].act == Act::Identity);
    CHECK(layers[1].kind == LayerKind::Relu);
    CHECK(layers[2].pool == 2);
    CHECK(layers[3].act == Act::Sigmoid);
    CHECK(layers[4].kind == LayerKind::Flatten);
    CHECK(layers[5].in == 192);
    CHECK(layers[5].out == 4);

    CHECK_THROWS_AS(parse_net_spec(""), ConfigError);
    CHECK_THROWS_AS(parse_net_spec("linear:4"), ConfigError);
    CHECK_THROWS_AS(parse_net_spec("warp:1:2"), ConfigError);
    CHECK_THROWS_AS(parse_net_spec("linear:4:2:bogus"), ConfigError);
}

TEST_CASE("strategy construction and validation") {
    RunConfig cfg;
    cfg.strategy = "division";
    cfg.block = 8;
    cfg.qbits = 2;
    CHECK(strategy_from_config(cfg).kind == CacheStrategy::Kind::Division);
    cfg.strategy = "exact";
    CHECK(strategy_from_config(cfg).kind == CacheStrategy::Kind::Exact);
    cfg.strategy = "fixed_quant";
    cfg.qbits = 3;
    CHECK_THROWS_AS(strategy_from_config(cfg), ParamError);
    cfg.strategy = "nope";
    CHECK_THROWS_AS(strategy_from_config(cfg), ConfigError);
}

TEST_CASE("config file parsing with overrides") {
    fs::path p = fs::temp_directory_path() / "dualprec_cfg.txt";
    {
        std::ofstream f(p);
        f << "# comment line\n";
        f << "dataset = blobs\n";
        f << "classes = 4\n";
        f << "net = linear:8:4\n";
        f << "epochs=12\n";
        f << "lr = 0.25\n";
    }
    RunConfig cfg;
    apply_config_file(cfg, p.string());
    CHECK(cfg.dataset == "blobs");
    CHECK(cfg.classes == 4);
    CHECK(cfg.net_spec == "linear:8:4");
    CHECK(cfg.epochs == 12);
    CHECK(cfg.lr == 0.25);

    // a later flag-style assignment wins over the file value
    apply_config_pair(cfg, "epochs", "7");
    CHECK(cfg.epochs == 7);

    {
        std::ofstream f(p);
        f << "unknown_key = 3\n";
    }
    CHECK_THROWS_AS(apply_config_file(cfg, p.string()), ConfigError);
    {
        std::ofstream f(p);
        f << "just a line without assignment\n";
    }
    CHECK_THROWS_AS(apply_config_file(cfg, p.string()), ConfigError);
    fs::remove(p);
    CHECK_THROWS_AS(apply_config_file(cfg, p.string()), ConfigError);
}

TEST_CASE("list parsing") {
    auto v = parse_size_list("7,8,16,32");
    REQUIRE(v == std::vector<size_t>{7, 8, 16, 32});
    CHECK(parse_size_list("").empty());
    CHECK_THROWS_AS(parse_size_list("1,x"), ConfigError);
    auto d = parse_double_list("0.1,0.5");
    REQUIRE(d.size() == 2);
    CHECK(d[1] == 0.5);
}

TEST_CASE("train config mapping validates schedules") {
    RunConfig cfg;
    cfg.lr_schedule = "cosine";
    CHECK(train_config_from(cfg).sched == TrainConfig::Sched::Cosine);
    cfg.lr_schedule = "step";
    CHECK(train_config_from(cfg).sched == TrainConfig::Sched::Step);
    cfg.lr_schedule = "linear";
    CHECK_THROWS_AS(train_config_from(cfg), ConfigError);
}
