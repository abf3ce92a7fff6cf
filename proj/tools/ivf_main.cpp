#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "ivf/commands.hpp"

namespace {

// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 io error.
constexpr int kOk = 0;
constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;
constexpr int kIoExit = 4;

uint64_t parse_seed_env(uint64_t fallback) {
    const char* env = std::getenv("IVF_SEED");
    if (!env || !*env) return fallback;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw ivf::ConfigError("IVF_SEED is not an integer: " + std::string(env));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"image/video joint transformer trainer"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_kind = "blobs-image", synth_out, synth_name;
    ivf::SynthParams sp;
    synth->add_option("--kind", synth_kind, "blobs-image | blobs-video | frame-order");
    synth->add_option("--classes", sp.classes, "class count");
    synth->add_option("--samples", sp.train_samples, "training samples");
    synth->add_option("--val-samples", sp.val_samples, "validation samples");
    synth->add_option("--height", sp.height, "native height");
    synth->add_option("--width", sp.width, "native width");
    synth->add_option("--frames", sp.frames, "frames per stored video");
    synth->add_option("--seed", sp.seed, "generator seed");
    synth->add_option("--name", synth_name, "dataset name");
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "run a training experiment");
    std::string train_config;
    uint64_t train_seed = 0, train_iters = 0;
    std::string train_out, train_weighter;
    bool has_seed = false, has_iters = false;
    train->add_option("--config", train_config, "run config JSON")->required();
    train->add_option("--seed", train_seed, "override schedule.seed")
        ->each([&](const std::string&) { has_seed = true; });
    train->add_option("--iterations", train_iters, "override schedule.iterations")
        ->each([&](const std::string&) { has_iters = true; });
    train->add_option("--out", train_out, "override io.out_dir");
    train->add_option("--weighter", train_weighter, "override weighter.kind");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_dataset, eval_split = "val";
    size_t eval_head = 0, eval_batch = 6;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--dataset", eval_dataset, "dataset directory")->required();
    eval->add_option("--split", eval_split, "train | val");
    eval->add_option("--head", eval_head, "classifier head / dataset id");
    eval->add_option("--batch", eval_batch, "evaluation batch size");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    bool gc_noshift = false, gc_sabotage = false;
    double gc_tol = 1e-4;
    gradcheck->add_flag("--no-shift", gc_noshift, "check the shift-disabled variant");
    gradcheck->add_flag("--sabotage", gc_sabotage,
                        "corrupt the MSA backward on purpose (negative control)");
    gradcheck->add_option("--tolerance", gc_tol, "max relative error allowed");

    // export
    auto* exp = app.add_subcommand("export", "convert metrics JSONL to per-dataset CSV");
    std::string exp_metrics, exp_out = ".";
    exp->add_option("--metrics", exp_metrics, "metrics.jsonl path")->required();
    exp->add_option("--out", exp_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kConfigExit;
    }

    try {
        if (synth->parsed()) {
            sp.kind = ivf::synth_kind_from(synth_kind);
            sp.name = synth_name;
            ivf::DatasetSpec spec = ivf::cmd_synth(sp, synth_out);
            std::cout << "wrote " << spec.name << " (" << ivf::modality_name(spec.modality)
                      << ", " << spec.num_classes << " classes) to " << synth_out << "\n";
        } else if (train->parsed()) {
            ivf::RunConfig cfg = ivf::load_run_config(train_config);
            cfg.schedule.seed = parse_seed_env(cfg.schedule.seed);
            if (has_seed) cfg.schedule.seed = train_seed;
            if (has_iters) cfg.schedule.iterations = train_iters;
            if (!train_out.empty()) cfg.out_dir = train_out;
            if (!train_weighter.empty())
                cfg.weighter.kind = ivf::weight_kind_from(train_weighter);
            ivf::TrainOutputs out = ivf::cmd_train(cfg);
            std::cout << "checkpoint: " << out.checkpoint.string() << "\n"
                      << "metrics:    " << out.metrics.string() << "\n";
        } else if (eval->parsed()) {
            if (eval_split != "train" && eval_split != "val")
                throw ivf::ConfigError("unknown split: " + eval_split);
            ivf::EvalResult r =
                ivf::cmd_eval(eval_ckpt, eval_dataset,
                              eval_split == "train" ? ivf::Split::train : ivf::Split::val,
                              eval_head, eval_batch);
            std::cout << "top1 " << r.top1 << "  top5 " << r.top5 << "  (" << r.samples
                      << " samples)\n";
            std::cout << nlohmann::json{{"top1", r.top1}, {"top5", r.top5},
                                        {"samples", r.samples}}
                             .dump()
                      << "\n";
        } else if (gradcheck->parsed()) {
            ivf::GradcheckReport r = ivf::cmd_gradcheck(!gc_noshift, gc_sabotage, gc_tol);
            std::cout << "max relative error " << r.max_rel_err << " (tolerance " << r.tolerance
                      << ")\n";
            if (!r.pass) {
                std::cerr << "gradient check FAILED\n";
                return kNumericExit;
            }
        } else if (exp->parsed()) {
            auto files = ivf::cmd_export(exp_metrics, exp_out);
            for (const auto& f : files) std::cout << f.string() << "\n";
        }
    } catch (const ivf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericExit;
    } catch (const ivf::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoExit;
    } catch (const ivf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigExit;
    }
    return kOk;
}
