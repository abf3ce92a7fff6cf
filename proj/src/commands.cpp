#include "ivf/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <map>

#include "ivf/ops.hpp"
#include "ivf/tensor_io.hpp"

namespace ivf {

using nlohmann::json;

DirLock::DirLock(const std::filesystem::path& dir) : file_(dir / "ivf.lock") {
    int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw IoError("output directory " + dir.string() +
                      " is locked by another run (ivf.lock exists)");
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    std::filesystem::remove(file_, ec);
}

DatasetSpec cmd_synth(const SynthParams& params, const std::filesystem::path& out_dir) {
    return synth_dataset(params, out_dir);
}

json metrics_to_json(const MetricsRecord& r) {
    return json{{"iteration", r.iteration}, {"dataset", r.dataset}, {"loss", r.loss},
                {"w", r.w},                 {"top1", r.top1},       {"top5", r.top5}};
}

TrainOutputs cmd_train(const RunConfig& input) {
    RunConfig cfg = input;
    if (cfg.out_dir.empty()) throw ConfigError("io.out_dir is required for training");
    std::filesystem::create_directories(cfg.out_dir);
    DirLock lock(cfg.out_dir);
    std::filesystem::path out(cfg.out_dir);

    std::vector<Dataset> datasets;
    std::vector<DatasetSpec> specs;
    datasets.reserve(cfg.dataset_dirs.size());
    for (size_t i = 0; i < cfg.dataset_dirs.size(); ++i) {
        datasets.emplace_back(cfg.dataset_dirs[i]);
        datasets.back().spec().id = i;
        specs.push_back(datasets.back().spec());
    }
    cfg.model.head_classes.clear();
    for (const auto& s : specs) cfg.model.head_classes.push_back(s.num_classes);
    cfg.model.validate();
    std::vector<OptimizerConfig> optimizers = cfg.regime.resolve(specs);

    TrainOutputs paths;
    paths.resolved_config = out / "config.resolved.json";
    paths.metrics = out / "metrics.jsonl";
    paths.eval_metrics = out / "eval.jsonl";
    paths.checkpoint = out / "checkpoint.ivc";

    {
        std::ofstream rc(paths.resolved_config);
        if (!rc) throw IoError("cannot write " + paths.resolved_config.string());
        rc << run_config_to_json(cfg).dump(2) << "\n";
    }

    ViTModel model = ViTModel::init(cfg.model, cfg.schedule.seed);
    TrainSetup setup;
    setup.optimizers = optimizers;
    setup.weighter = cfg.weighter;
    setup.augment = cfg.augment;
    setup.batch_size = cfg.schedule.batch_size;
    setup.seed = cfg.schedule.seed;
    MultiTrainer trainer(std::move(model), datasets, setup);

    std::ofstream metrics(paths.metrics);
    std::ofstream evals(paths.eval_metrics);
    if (!metrics || !evals) throw IoError("cannot open metrics files in " + out.string());

    auto run_eval = [&](uint64_t iteration) {
        for (const Dataset& d : datasets) {
            EvalResult r = evaluate(trainer.model(), d, Split::val, cfg.augment,
                                    cfg.schedule.batch_size);
            evals << json{{"iteration", iteration},
                          {"dataset", d.spec().id},
                          {"split", "val"},
                          {"top1", r.top1},
                          {"top5", r.top5}}
                         .dump()
                  << "\n";
        }
        evals.flush();
    };

    for (uint64_t t = 0; t < cfg.schedule.iterations; ++t) {
        for (const MetricsRecord& r : trainer.train_iteration())
            metrics << metrics_to_json(r).dump() << "\n";
        if (cfg.schedule.eval_every && (t + 1) % cfg.schedule.eval_every == 0)
            run_eval(t + 1);
    }
    if (cfg.schedule.eval_every && cfg.schedule.iterations % cfg.schedule.eval_every != 0)
        run_eval(cfg.schedule.iterations);
    metrics.flush();
    if (!metrics || !evals) throw IoError("metrics write failed in " + out.string());

    checkpoint_save(trainer.model(), paths.checkpoint);
    return paths;
}

EvalResult cmd_eval(const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset_dir, Split split, size_t head_id,
                    size_t batch_size) {
    ViTModel model = checkpoint_load(checkpoint);
    if (head_id >= model.heads.size())
        throw ConfigError("head " + std::to_string(head_id) + " out of range, checkpoint has " +
                          std::to_string(model.heads.size()) + " heads");
    Dataset dataset(dataset_dir);
    dataset.spec().id = head_id;
    AugmentConfig cfg;
    cfg.out_size = model.cfg.image_h;
    cfg.video_resize_min = cfg.video_resize_max = cfg.out_size;
    return evaluate(model, dataset, split, cfg, batch_size);
}

namespace {

struct ScopedGradScale {
    explicit ScopedGradScale(double s) : saved(debug::msa_grad_scale()) {
        debug::msa_grad_scale() = s;
    }
    ~ScopedGradScale() { debug::msa_grad_scale() = saved; }
    double saved;
};

}  // namespace

GradcheckReport cmd_gradcheck(bool shift_enabled, bool sabotage, double tolerance) {
    ViTConfig cfg;
    cfg.image_h = cfg.image_w = 8;
    cfg.patch = 4;  // N = 4
    cfg.dim = 16;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 32;
    cfg.shift_enabled = shift_enabled;
    cfg.shift_back = 2;
    cfg.shift_fwd = 2;
    cfg.dtype = DType::f64;
    cfg.head_classes = {3};

    ViTModel model = ViTModel::init(cfg, 42);
    // Generic O(0.1) weights: the training init (sigma 0.02) leaves some
    // gradient elements below what h=1e-5 central differences can resolve.
    Rng wrng(mix_seed(17, 0xC0DE));
    for (auto& p : model.parameters())
        for (size_t i = 0; i < p.value.numel(); ++i) p.value.set(i, wrng.uniform(-0.5, 0.5));
    for (auto& b : model.blocks) {
        for (size_t i = 0; i < b.ln1.gamma.numel(); ++i)
            b.ln1.gamma.set(i, 1.0 + wrng.uniform(-0.1, 0.1));
        for (size_t i = 0; i < b.ln2.gamma.numel(); ++i)
            b.ln2.gamma.set(i, 1.0 + wrng.uniform(-0.1, 0.1));
    }
    Rng rng(mix_seed(9, 0xF00D));
    Tensor pixels = Tensor::empty({2, 3, 3, 8, 8}, DType::f64);
    for (size_t i = 0; i < pixels.numel(); ++i) pixels.set(i, rng.uniform01());
    SampleBatch batch;
    batch.modality = Modality::video;
    batch.pixels = pixels;
    batch.labels = {0, 2};

    ScopedGradScale scale(sabotage ? 1.05 : 1.0);

    auto loss_value = [&]() {
        Tensor logits = forward_logits(model, batch, 0);
        return cross_entropy(logits, batch.labels).item();
    };
    auto analytic = [&]() {
        Tape tape;
        ViTModel traced = model.traced(tape);
        Tensor logits = forward_logits(traced, batch, 0);
        Tensor loss = cross_entropy(logits, batch.labels);
        std::vector<std::pair<std::string, Tensor>> named;
        for (auto& p : traced.parameters()) named.emplace_back(p.name, p.value);
        return parameter_gradients(tape, loss, named);
    };

    auto params = model.parameters();
    GradcheckReport report;
    report.tolerance = tolerance;
    report.max_rel_err = finite_diff_check(loss_value, analytic, params, 1e-5);
    report.pass = report.max_rel_err < tolerance;
    return report;
}

std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& metrics,
                                              const std::filesystem::path& out_dir) {
    std::ifstream in(metrics);
    if (!in) throw IoError("cannot open " + metrics.string());
    std::filesystem::create_directories(out_dir);
    std::map<size_t, std::vector<json>> by_dataset;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            j.at("iteration");
            j.at("dataset");
            j.at("loss");
            j.at("w");
            j.at("top1");
            j.at("top5");
        } catch (const json::exception& e) {
            throw ConfigError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
        by_dataset[j["dataset"].get<size_t>()].push_back(std::move(j));
    }
    std::vector<std::filesystem::path> written;
    for (const auto& [id, rows] : by_dataset) {
        std::filesystem::path path = out_dir / ("dataset_" + std::to_string(id) + ".csv");
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path.string());
        out << "iteration,loss,w,top1,top5\n";
        for (const json& r : rows)
            out << r["iteration"].dump() << "," << r["loss"].dump() << "," << r["w"].dump()
                << "," << r["top1"].dump() << "," << r["top5"].dump() << "\n";
        if (!out) throw IoError("write failed: " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace ivf
