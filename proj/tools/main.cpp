#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "dualprec/run.hpp"

using namespace dualprec;

namespace {

// Wire the shared option set onto a subcommand. A config file loads first
// (via --config), then flags override individual keys.
void add_common_options(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option("--dataset", cfg.dataset, "blobs | textured | csv");
    cmd->add_option("--dataset-path", cfg.dataset_path, "delimited text file for dataset = csv");
    cmd->add_option("--label-column", cfg.label_column);
    cmd->add_option("--delimiter", cfg.delimiter);
    cmd->add_option("--classes", cfg.classes);
    cmd->add_option("--dim", cfg.dim);
    cmd->add_option("--per-class", cfg.per_class);
    cmd->add_option("--spread", cfg.spread);
    cmd->add_option("--image-size", cfg.image_size);
    cmd->add_option("--train-frac", cfg.train_frac);
    cmd->add_option("--data-seed", cfg.data_seed);
    cmd->add_option("--net", cfg.net_spec, "layer list, e.g. linear:128:64,relu,linear:64:6");
    cmd->add_option("--strategy", cfg.strategy, "exact | division | lfc_only | hfc_only | fixed_quant");
    cmd->add_option("--B,--block", cfg.block, "pooling block size");
    cmd->add_option("--Q,--qbits", cfg.qbits, "quantization bit width");
    cmd->add_option("--epochs", cfg.epochs);
    cmd->add_option("--batch-size", cfg.batch_size);
    cmd->add_option("--lr", cfg.lr);
    cmd->add_option("--lr-schedule", cfg.lr_schedule, "cosine | step");
    cmd->add_option("--lr-step-every", cfg.lr_step_every);
    cmd->add_option("--lr-step-gamma", cfg.lr_step_gamma);
    cmd->add_option("--weight-decay", cfg.weight_decay);
    cmd->add_option("--momentum", cfg.momentum);
    cmd->add_option("--seed", cfg.seed);
    cmd->add_option("--checkpoint-epochs", cfg.checkpoint_epochs, "comma-separated epoch list");
    cmd->add_option("--w-fracs", cfg.w_fracs, "comma-separated cutoff fractions");
    cmd->add_option("--probe-count", cfg.probe_count);
    cmd->add_option("--geb-trials", cfg.geb_trials);
    cmd->add_option("--corollary-trials", cfg.corollary_trials);
    cmd->add_option("--grid-n", cfg.grid_n);
    cmd->add_option("--grid-b", cfg.grid_b);
    cmd->add_option("--grid-q", cfg.grid_q);
    cmd->add_option("--checkpoint-dir", cfg.checkpoint_dir);
    cmd->add_option("--out-dir", cfg.out_dir);
    cmd->add_option("--input", cfg.input_path, "input tensor for dump-cache");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"activation-compressed training engine"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    const char* names[] = {"train", "ablate", "analyze", "memory", "dump-cache"};
    const char* descs[] = {"train one model under one cache strategy",
                           "train the same seed under all six cache strategies",
                           "spectral norms, gradient error bounds, filter response, norm inequality",
                           "accountant vs closed-form compression rates over an (N, B, Q) grid",
                           "compress one tensor and dump the cached tuple"};
    std::vector<CLI::App*> subs;
    for (size_t i = 0; i < 5; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descs[i]);
        add_common_options(sub, cfg, config_path);
        subs.push_back(sub);
    }

    // Pre-scan for --config so file values load before flag parsing overrides them.
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                apply_config_file(cfg, argv[i + 1]);
            } catch (const Error& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return 2;
            }
            break;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (size_t i = 0; i < 5; ++i)
        if (subs[i]->parsed()) cfg.command = names[i];
    apply_env_overrides(cfg);

    try {
        return run::dispatch(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ParamError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
