#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprec/analysis.hpp"
#include "dualprec/config.hpp"
#include "dualprec/data.hpp"
#include "dualprec/memory.hpp"
#include "dualprec/nn.hpp"

namespace dualprec::run {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Command implementations behind the CLI. Every artifact except
// run-meta.json is a pure function of the config, so re-running a command
// overwrites byte-identical outputs.

inline std::string fmt_full(double v) { return strf("%.17g", v); }

inline void write_text(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline void write_run_meta(const RunConfig& cfg, const fs::path& dir) {
    json meta;
    meta["command"] = cfg.command;
    meta["seed"] = cfg.seed;
    meta["data_seed"] = cfg.data_seed;
    meta["strategy"] = cfg.strategy;
    meta["dataset"] = cfg.dataset;
    meta["train_frac"] = cfg.train_frac;
    meta["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    write_text(dir / "run-meta.json", meta.dump(2) + "\n");
}

inline Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.dataset == "blobs")
        return gen_blobs(static_cast<int>(cfg.classes), cfg.dim, cfg.per_class, cfg.spread, cfg.data_seed);
    if (cfg.dataset == "textured")
        return gen_textured_images(static_cast<int>(cfg.classes), cfg.image_size, cfg.per_class, cfg.data_seed);
    if (cfg.dataset == "csv") {
        if (cfg.dataset_path.empty()) throw ConfigError("dataset = csv requires dataset_path");
        if (!fs::exists(cfg.dataset_path)) throw ConfigError("dataset file not found: " + cfg.dataset_path);
        if (cfg.delimiter.size() != 1) throw ConfigError("delimiter must be a single character");
        return load_delimited(cfg.dataset_path, cfg.label_column, cfg.delimiter[0]);
    }
    throw ConfigError("unknown dataset '" + cfg.dataset + "'");
}

// --- checkpoints ------------------------------------------------------------

inline void save_checkpoint(const Network& net, const fs::path& dir, const std::string& net_spec) {
    fs::create_directories(dir);
    json manifest;
    manifest["net_spec"] = net_spec;
    manifest["layers"] = json::array();
    for (size_t li = 0; li < net.layers.size(); ++li) {
        const Layer& l = net.layers[li];
        json entry;
        entry["index"] = li;
        entry["kind"] = detail::layer_name(l.spec.kind);
        entry["tensors"] = json::object();
        auto dump = [&](const char* name, const Tensor& t) {
            if (t.numel() == 0) return;
            std::string file = strf("l%03zu_%s.divt", li, name);
            write_divt((dir / file).string(), t);
            entry["tensors"][name] = file;
            json shape = json::array();
            for (size_t d : t.shape()) shape.push_back(d);
            entry[std::string(name) + "_shape"] = shape;
        };
        dump("w", l.w);
        dump("b", l.b);
        dump("gamma", l.gamma);
        dump("beta", l.beta);
        dump("running_mean", l.running_mean);
        dump("running_var", l.running_var);
        manifest["layers"].push_back(entry);
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Network load_checkpoint(const fs::path& dir) {
    fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw ConfigError("no checkpoint manifest at " + mpath.string());
    std::ifstream f(mpath);
    json manifest = json::parse(f);
    Rng init(0);
    std::vector<LayerSpec> specs = parse_net_spec(manifest["net_spec"].get<std::string>());
    Network net = build_network(specs, init);
    for (const json& entry : manifest["layers"]) {
        size_t li = entry["index"].get<size_t>();
        Layer& l = net.layers.at(li);
        auto load = [&](const char* name, Tensor& t) {
            if (!entry["tensors"].contains(name)) return;
            t = read_divt((dir / entry["tensors"][name].get<std::string>()).string());
        };
        load("w", l.w);
        load("b", l.b);
        load("gamma", l.gamma);
        load("beta", l.beta);
        load("running_mean", l.running_mean);
        load("running_var", l.running_var);
    }
    return net;
}

// --- shared report pieces ------------------------------------------------------

inline std::string memory_report_csv(const MemoryReport& report) {
    std::string csv = "layer_index,layer,strategy,bytes\n";
    for (const MemoryEntry& e : report.entries)
        csv += strf("%zu,", e.layer_index) + e.layer + "," + report.strategy + "," + fmt_full(e.bytes) + "\n";
    return csv;
}

inline json memory_report_json(const MemoryReport& report) {
    json j;
    j["strategy"] = report.strategy;
    j["total_bytes"] = report.total_bytes;
    j["exact_bytes"] = report.exact_bytes;
    j["compression_rate"] = report.compression_rate;
    j["layers"] = json::array();
    for (const MemoryEntry& e : report.entries) {
        json le;
        le["index"] = e.layer_index;
        le["layer"] = e.layer;
        le["bytes"] = e.bytes;
        j["layers"].push_back(le);
    }
    return j;
}

inline std::string metrics_csv(const TrainResult& result) {
    std::string out = "epoch,loss,accuracy,peak_cache_bytes\n";
    for (const EpochMetrics& m : result.history)
        out += strf("%zu,", m.epoch) + fmt_full(m.train_loss) + "," + fmt_full(m.eval_accuracy) + "," +
               fmt_full(m.peak_cache_bytes) + "\n";
    return out;
}

struct PreparedRun {
    Dataset train_set, eval_set;
    Network net;
    CacheStrategy strategy;
    TrainConfig tcfg;
    Shape batch_shape;
};

inline PreparedRun prepare_run(const RunConfig& cfg) {
    PreparedRun r;
    r.strategy = strategy_from_config(cfg);
    r.tcfg = train_config_from(cfg);
    std::vector<LayerSpec> specs = parse_net_spec(cfg.net_spec);
    Dataset full = load_dataset(cfg);
    auto [train_set, eval_set] = split_dataset(full, cfg.train_frac, cfg.data_seed);
    r.train_set = std::move(train_set);
    r.eval_set = std::move(eval_set);
    Rng init(derive_seed(cfg.seed, 0x11717));
    r.net = build_network(specs, init);
    r.batch_shape = r.train_set.features.shape();
    r.batch_shape[0] = std::min<size_t>(r.tcfg.batch_size, r.train_set.size());
    // validate layer compatibility before any compute
    layer_input_shapes(r.net, r.batch_shape);
    return r;
}

// --- commands ------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg) {
    PreparedRun r = prepare_run(cfg);
    fs::create_directories(cfg.out_dir);
    fs::path out(cfg.out_dir);

    std::vector<size_t> marks = r.tcfg.checkpoint_epochs;
    EpochCallback cb;
    if (!marks.empty()) {
        cb = [&](size_t epoch, Network& net) {
            if (std::find(marks.begin(), marks.end(), epoch + 1) != marks.end())
                save_checkpoint(net, out / strf("checkpoint-ep%03zu", epoch + 1), cfg.net_spec);
        };
    }

    TrainResult result = train(r.net, r.train_set, r.eval_set, r.strategy, r.tcfg, cb);
    write_text(out / "metrics.csv", metrics_csv(result));
    MemoryReport report = account(r.net, r.batch_shape, r.strategy);
    write_text(out / "memory.json", memory_report_json(report).dump(2) + "\n");
    write_text(out / "memory.csv", memory_report_csv(report));
    save_checkpoint(r.net, out / "checkpoint-final", cfg.net_spec);
    write_run_meta(cfg, out);
    if (result.diverged) {
        std::fprintf(stderr, "training diverged: %s\n", result.message.c_str());
        return 1;
    }
    return 0;
}

inline int cmd_ablate(const RunConfig& cfg) {
    // same net and seed under all six cache strategies
    std::vector<CacheStrategy> strategies = {
        CacheStrategy::exact(),
        CacheStrategy::division(cfg.block, cfg.qbits),
        CacheStrategy::lfc_only(cfg.block),
        CacheStrategy::hfc_only(cfg.qbits, cfg.block),
        CacheStrategy::fixed_quant(cfg.qbits),
        CacheStrategy::fixed_quant(4),
    };
    std::string csv = "strategy,seed,final_accuracy,final_loss,peak_cache_bytes,accounted_compression_rate\n";
    bool diverged = false;
    for (const CacheStrategy& st : strategies) {
        PreparedRun r = prepare_run(cfg);  // fresh identically seeded network
        TrainResult result = train(r.net, r.train_set, r.eval_set, st, r.tcfg);
        MemoryReport report = account(r.net, r.batch_shape, st);
        const EpochMetrics& last = result.history.back();
        csv += st.label() + strf(",%llu,", static_cast<unsigned long long>(cfg.seed)) +
               fmt_full(last.eval_accuracy) + "," + fmt_full(last.train_loss) + "," +
               fmt_full(last.peak_cache_bytes) + "," + fmt_full(report.compression_rate) + "\n";
        diverged = diverged || result.diverged;
    }
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "ablation.csv", csv);
    write_run_meta(cfg, cfg.out_dir);
    return diverged ? 1 : 0;
}

inline int cmd_analyze(const RunConfig& cfg) {
    fs::path ckroot = cfg.checkpoint_dir.empty() ? fs::path(cfg.out_dir) : fs::path(cfg.checkpoint_dir);
    std::vector<fs::path> checkpoints;
    if (fs::exists(ckroot))
        for (const auto& e : fs::directory_iterator(ckroot))
            if (e.is_directory() && e.path().filename().string().rfind("checkpoint-", 0) == 0)
                checkpoints.push_back(e.path());
    std::sort(checkpoints.begin(), checkpoints.end());
    if (checkpoints.empty()) throw ConfigError("no checkpoint-* directories under " + ckroot.string());
    std::vector<double> w_fracs = parse_double_list(cfg.w_fracs);
    if (w_fracs.empty()) throw ConfigError("w_fracs is empty");

    Dataset full = load_dataset(cfg);
    auto [train_set, eval_set] = split_dataset(full, cfg.train_frac, cfg.data_seed);
    size_t probe_n = std::min(cfg.probe_count, eval_set.size());
    std::vector<size_t> idx(probe_n);
    for (size_t i = 0; i < probe_n; ++i) idx[i] = i;
    std::vector<int32_t> labels;
    Tensor probe = make_batch(eval_set, idx, labels);

    fs::create_directories(cfg.out_dir);
    fs::path out(cfg.out_dir);

    // masked spectral norms of the cached conv/linear inputs per checkpoint
    std::string lambda_csv = "checkpoint,layer_index,layer,w_frac,low_norm,high_norm,ratio\n";
    for (const fs::path& ck : checkpoints) {
        Network net = load_checkpoint(ck);
        ForwardResult fr = forward(net, probe, CacheStrategy::exact(), 0, 0, true);
        for (size_t li = 0; li < net.layers.size(); ++li) {
            LayerKind kind = net.layers[li].spec.kind;
            if (kind != LayerKind::Conv2d && kind != LayerKind::Linear) continue;
            const Tensor& input = fr.caches[li].exact_input;
            int sdim = activation_spatial_ndim(input);
            for (double wf : w_fracs) {
                analysis::FrequencyNorms norms = analysis::frequency_norms(input, sdim, wf);
                lambda_csv += ck.filename().string() + strf(",%zu,", li) +
                              (kind == LayerKind::Conv2d ? "conv2d," : "linear,") + fmt_full(wf) + "," +
                              fmt_full(norms.low) + "," + fmt_full(norms.high) + "," +
                              fmt_full(norms.high > 0 ? norms.low / norms.high : 0.0) + "\n";
            }
        }
    }
    write_text(out / "lambda.csv", lambda_csv);

    // bound verification trials on two-layer smooth conv stacks, both modes
    json geb;
    geb["stack"] = {{"map_size", 10}, {"kernels", {3, 3}}, {"activation", "sigmoid"}};
    geb["w_frac"] = 0.25;
    geb["trials"] = json::array();
    bool all_hold = true;
    for (size_t t = 0; t < cfg.geb_trials; ++t) {
        Rng rng(derive_seed(cfg.seed, 0x6EB, t));
        std::array<size_t, 2> kernels{3, 3};
        analysis::ConvStack stack = analysis::ConvStack::random(10, kernels, Act::Sigmoid, rng);
        analysis::Plane input(100), target(100);
        for (double& v : input) v = rng.normal();
        for (double& v : target) v = rng.normal();
        std::vector<double> bound_by_mode[2];
        for (analysis::SubstMode mode : {analysis::SubstMode::Lfc, analysis::SubstMode::Hfc}) {
            analysis::BoundTrial trial = analysis::verify_frequency_bound(stack, input, target, mode, 0.25);
            json jt;
            jt["trial"] = t;
            jt["mode"] = mode == analysis::SubstMode::Lfc ? "lfc" : "hfc";
            jt["observed"] = trial.observed;
            jt["bound"] = trial.bound;
            jt["lambda_low"] = trial.lambda_low;
            jt["lambda_high"] = trial.lambda_high;
            jt["holds"] = trial.holds;
            bound_by_mode[mode == analysis::SubstMode::Lfc ? 0 : 1] = trial.bound;
            if (t == 0 && mode == analysis::SubstMode::Lfc) {
                json prof;
                prof["w_norm"] = trial.profile.w_norm;
                prof["zgrad_norm"] = trial.profile.zgrad_norm;
                prof["sprime_norm"] = trial.profile.sprime_norm;
                prof["h_norm"] = trial.profile.h_norm;
                json coeff = json::array();
                for (size_t l = 0; l < trial.profile.layer_count(); ++l) {
                    analysis::BoundCoefficients bc = analysis::bound_coefficients(trial.profile, l);
                    coeff.push_back({{"layer", l}, {"alpha", bc.alpha}, {"beta", bc.beta}, {"gamma", bc.gamma}});
                }
                prof["coefficients"] = coeff;
                geb["profile"] = prof;
            }
            geb["trials"].push_back(jt);
            all_hold = all_hold && trial.holds;
        }
        json gap = json::array();
        for (size_t l = 0; l < bound_by_mode[0].size(); ++l)
            gap.push_back(bound_by_mode[0][l] - bound_by_mode[1][l]);
        geb["trials"].back()["bound_gap_lfc_minus_hfc"] = gap;
    }
    // dense-layer variant of the bound (size constants drop out)
    geb["dense_trials"] = json::array();
    for (size_t t = 0; t < std::max<size_t>(1, cfg.geb_trials / 4); ++t) {
        Rng rng(derive_seed(cfg.seed, 0xDE2, t));
        analysis::DenseStack stack = analysis::DenseStack::random(24, 2, Act::Sigmoid, rng);
        std::vector<double> input(24), target(24);
        for (double& v : input) v = rng.normal();
        for (double& v : target) v = rng.normal();
        for (analysis::SubstMode mode : {analysis::SubstMode::Lfc, analysis::SubstMode::Hfc}) {
            analysis::BoundTrial trial =
                analysis::verify_frequency_bound_linear(stack, input, target, mode, 0.25);
            json jt;
            jt["trial"] = t;
            jt["mode"] = mode == analysis::SubstMode::Lfc ? "lfc" : "hfc";
            jt["observed"] = trial.observed;
            jt["bound"] = trial.bound;
            jt["holds"] = trial.holds;
            geb["dense_trials"].push_back(jt);
            all_hold = all_hold && trial.holds;
        }
    }
    geb["all_hold"] = all_hold;
    write_text(out / "geb.json", geb.dump(2) + "\n");

    // block-mean frequency response at a fixed physical width, halving grids
    json th2;
    th2["kernel_fraction_of_n"] = 8.0 / 4096.0;
    th2["entries"] = json::array();
    bool monotone = true;
    double prev = 0.0;
    for (size_t i = 0; i < 3; ++i) {
        size_t n = 4096u << i;
        size_t half_width = (4u << i);
        double dev = analysis::box_filter_response(half_width, n);
        json e;
        e["n"] = n;
        e["kernel_samples"] = 2 * half_width;
        e["max_deviation"] = dev;
        th2["entries"].push_back(e);
        if (i > 0 && dev >= prev) monotone = false;
        prev = dev;
    }
    th2["monotone_decreasing"] = monotone;
    write_text(out / "theorem2.json", th2.dump(2) + "\n");

    // randomized convolution-norm inequality trials
    size_t violations = 0;
    double max_ratio = 0.0;
    for (size_t t = 0; t < cfg.corollary_trials; ++t) {
        Rng rng(derive_seed(cfg.seed, 0xC0170, t));
        size_t k = 1 + rng.below(5), n = 1 + rng.below(12);
        Tensor w = Tensor::f32({k, k}), h = Tensor::f32({n, n});
        for (float& v : w.f32s()) v = static_cast<float>(rng.normal());
        for (float& v : h.f32s()) v = static_cast<float>(rng.normal());
        analysis::InequalityCheck c = analysis::conv_norm_inequality(w, h);
        if (!c.holds) ++violations;
        if (c.rhs > 0) max_ratio = std::max(max_ratio, c.lhs / c.rhs);
    }
    json cor;
    cor["trials"] = cfg.corollary_trials;
    cor["violations"] = violations;
    cor["max_lhs_over_rhs"] = max_ratio;
    write_text(out / "corollary1.json", cor.dump(2) + "\n");

    write_run_meta(cfg, out);
    return 0;
}

inline int cmd_memory(const RunConfig& cfg) {
    std::vector<size_t> ns = parse_size_list(cfg.grid_n);
    std::vector<size_t> bs = parse_size_list(cfg.grid_b);
    std::vector<size_t> qs = parse_size_list(cfg.grid_q);
    if (ns.empty() || bs.empty() || qs.empty()) throw ConfigError("memory grid lists must be nonempty");

    std::string csv = "N,B,Q,formula_R,accounted_R,divergent\n";
    for (size_t n : ns)
        for (size_t b : bs)
            for (size_t q : qs) {
                double formula = rate_conv_block(static_cast<double>(n), static_cast<double>(b),
                                                 static_cast<int>(q));
                // one conv-bn-relu block, minibatch 1, single channel
                std::vector<LayerSpec> specs = {LayerSpec::conv2d(1, 1, 3, 1), LayerSpec::batchnorm2d(1),
                                                LayerSpec::relu()};
                Rng rng(1);
                Network block = build_network(specs, rng);
                block.classifier = false;
                MemoryReport report =
                    account(block, {1, 1, n, n}, CacheStrategy::division(b, static_cast<int>(q)));
                double accounted = report.compression_rate;
                bool divergent = std::abs(accounted - formula) > 1e-9 * formula;
                csv += strf("%zu,%zu,%zu,", n, b, q) + fmt_full(formula) + "," + fmt_full(accounted) + "," +
                       (divergent ? "1" : "0") + "\n";
            }
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "memory_grid.csv", csv);
    write_run_meta(cfg, cfg.out_dir);
    return 0;
}

inline int cmd_dump_cache(const RunConfig& cfg) {
    if (cfg.input_path.empty()) throw ConfigError("dump-cache requires input_path");
    if (!fs::exists(cfg.input_path)) throw ConfigError("input tensor not found: " + cfg.input_path);
    Tensor h = read_divt(cfg.input_path);
    if (h.dtype() != DType::F32) throw ConfigError("dump-cache expects an f32 tensor");
    Rng rng(derive_seed(cfg.seed, 0xD0));
    int sdim = activation_spatial_ndim(h);
    CompressedActivation c = compress(h, sdim, cfg.block, cfg.qbits, rng);

    fs::create_directories(cfg.out_dir);
    fs::path out(cfg.out_dir);
    write_divt((out / "lfc.divt").string(), c.lfc);
    if (c.has_hfc) {
        Tensor packed = Tensor::packed({c.groups, c.spatial_count}, c.qbits);
        std::copy(c.hfc_bits.begin(), c.hfc_bits.end(), packed.raw());
        write_divt((out / "hfc.divt").string(), packed);
        Tensor scales = Tensor::bf16({c.groups, 2});
        auto ss = scales.u16s();
        for (size_t g = 0; g < c.groups; ++g) {
            ss[2 * g] = c.steps[g];
            ss[2 * g + 1] = c.offsets[g];
        }
        write_divt((out / "scales.divt").string(), scales);
    }
    json header;
    header["block"] = c.block;
    header["qbits"] = c.qbits;
    header["spatial_ndim"] = c.spatial_ndim;
    header["original_shape"] = json::array();
    for (size_t d : c.original_shape) header["original_shape"].push_back(d);
    header["payload_bytes"] = c.payload_bytes();
    write_text(out / "cache.json", header.dump(2) + "\n");
    write_run_meta(cfg, out);
    return 0;
}

inline int dispatch(const RunConfig& cfg) {
    if (cfg.command == "train") return cmd_train(cfg);
    if (cfg.command == "ablate") return cmd_ablate(cfg);
    if (cfg.command == "analyze") return cmd_analyze(cfg);
    if (cfg.command == "memory") return cmd_memory(cfg);
    if (cfg.command == "dump-cache") return cmd_dump_cache(cfg);
    throw ConfigError("unknown command '" + cfg.command + "'");
}

}  // namespace dualprec::run
