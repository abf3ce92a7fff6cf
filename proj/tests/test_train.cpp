#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "ivf/data.hpp"
#include "ivf/ops.hpp"
#include "ivf/train.hpp"

using namespace ivf;
namespace fs = std::filesystem;

namespace {

fs::path make_image_dataset(const std::string& name, uint64_t seed, size_t classes = 2,
                            size_t samples = 12) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    SynthParams p;
    p.kind = SynthKind::blobs_image;
    p.classes = classes;
    p.train_samples = samples;
    p.val_samples = 4;
    p.height = p.width = 12;
    p.seed = seed;
    synth_dataset(p, dir);
    return dir;
}

ViTConfig desk_model(std::vector<size_t> heads) {
    ViTConfig cfg;
    cfg.image_h = cfg.image_w = 8;
    cfg.patch = 4;
    cfg.dim = 16;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 24;
    cfg.head_classes = std::move(heads);
    cfg.dtype = DType::f32;
    return cfg;
}

TrainSetup desk_setup(size_t datasets, uint64_t seed, double lr = 1e-3) {
    TrainSetup s;
    OptimizerConfig o;
    o.kind = OptKind::adamw;
    o.lr = lr;
    s.optimizers.assign(datasets, o);
    s.augment.out_size = 8;
    s.augment.video_resize_min = 8;
    s.augment.video_resize_max = 10;
    s.batch_size = 4;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("cross entropy reference values") {
    Tensor uniform = Tensor::zeros({1, 4}, DType::f64);
    CHECK(cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor confident = Tensor::zeros({1, 3}, DType::f64);
    confident.set(1, 1000.0);
    CHECK(cross_entropy(confident, {1}).item() == doctest::Approx(0.0).epsilon(1e-9));

    Tensor two = Tensor::from({1, 2}, {1, 2}, DType::f64);
    // -ln(e^2/(e^1+e^2)) = ln(1+e^-1)
    CHECK(cross_entropy(two, {1}).item() ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(cross_entropy(two, {1}).item() == doctest::Approx(0.313262).epsilon(1e-6));

    CHECK_THROWS_AS(cross_entropy(two, {5}), ContractError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(19);
    Tensor logits = Tensor::empty({3, 5}, DType::f64);
    for (size_t i = 0; i < logits.numel(); ++i) logits.set(i, rng.uniform(-2, 2));
    std::vector<size_t> labels{1, 4, 0};

    auto loss_value = [&]() { return cross_entropy(logits, labels).item(); };
    auto analytic = [&]() {
        Tape tape;
        Tensor lt = tape.watch(logits);
        Tensor loss = cross_entropy(lt, labels);
        return parameter_gradients(tape, loss, {{"logits", lt}});
    };
    std::vector<Parameter> params{{"logits", logits}};
    CHECK(finite_diff_check(loss_value, analytic, params, 1e-5) < 1e-6);
}

TEST_CASE("sgd single step hand trace") {
    OptimizerConfig cfg;
    cfg.kind = OptKind::sgd;
    cfg.lr = 0.1;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0;
    std::vector<Parameter> params{{"p", Tensor::scalar(1.0, DType::f64)}};
    GradientMap grads{{"p", Tensor::scalar(1.0, DType::f64)}};
    OptimizerState state;
    optimizer_step(cfg, params, grads, state);
    CHECK(state.m1["p"].item() == doctest::Approx(1.0));
    CHECK(params[0].value.item() == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("adam first step moves by roughly lr") {
    OptimizerConfig cfg;
    cfg.kind = OptKind::adam;
    cfg.lr = 0.01;
    cfg.weight_decay = 0;
    std::vector<Parameter> params{{"p", Tensor::scalar(1.0, DType::f64)}};
    GradientMap grads{{"p", Tensor::scalar(2.0, DType::f64)}};
    OptimizerState state;
    optimizer_step(cfg, params, grads, state);
    // bias correction gives mhat = g, vhat = g^2
    CHECK(params[0].value.item() == doctest::Approx(0.99).epsilon(1e-8));
}

TEST_CASE("zero gradients leave parameters unchanged without decay") {
    for (OptKind kind : {OptKind::sgd, OptKind::adam, OptKind::adamw}) {
        OptimizerConfig cfg;
        cfg.kind = kind;
        cfg.lr = 0.05;
        cfg.weight_decay = 0;
        std::vector<Parameter> params{{"p", Tensor::from({1.5, -2.5}, {2}, DType::f64)}};
        GradientMap grads{{"p", Tensor::zeros({2}, DType::f64)}};
        OptimizerState state;
        for (int i = 0; i < 5; ++i) optimizer_step(cfg, params, grads, state);
        CHECK(params[0].value.to_vector() == std::vector<double>{1.5, -2.5});
    }
}

TEST_CASE("adamw with zero decay is bitwise adam over 100 steps") {
    Rng rng(23);
    Tensor start = Tensor::empty({16}, DType::f32);
    for (size_t i = 0; i < 16; ++i) start.set(i, rng.uniform(-1, 1));

    auto run = [&](OptKind kind) {
        OptimizerConfig cfg;
        cfg.kind = kind;
        cfg.lr = 3e-3;
        cfg.weight_decay = 0;
        std::vector<Parameter> params{{"p", start.clone()}};
        OptimizerState state;
        Rng grng(31);
        for (int step = 0; step < 100; ++step) {
            Tensor g = Tensor::empty({16}, DType::f32);
            for (size_t i = 0; i < 16; ++i) g.set(i, grng.uniform(-1, 1));
            GradientMap grads{{"p", g}};
            optimizer_step(cfg, params, grads, state);
        }
        return params[0].value;
    };
    Tensor a = run(OptKind::adam), w = run(OptKind::adamw);
    CHECK(std::memcmp(a.span<float>().data(), w.span<float>().data(), 16 * sizeof(float)) == 0);
}

TEST_CASE("non-finite gradients abort the step") {
    OptimizerConfig cfg;
    std::vector<Parameter> params{{"p", Tensor::scalar(1.0, DType::f64)}};
    GradientMap grads{{"p", Tensor::scalar(std::nan(""), DType::f64)}};
    OptimizerState state;
    CHECK_THROWS_AS(optimizer_step(cfg, params, grads, state), NumericError);
}

TEST_CASE("dwa weights") {
    SUBCASE("equal ratios give unit weights") {
        std::vector<std::pair<double, double>> means{{0.8, 0.8}, {1.3, 1.3}, {0.2, 0.2}};
        for (double w : dwa_weights(means, 1.0)) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("direct evaluation at D_N = 2") {
        // r = (0.5, 1.0): w_i = 2 exp(r_i) / (e^0.5 + e^1)
        std::vector<std::pair<double, double>> means{{0.5, 1.0}, {1.0, 1.0}};
        auto w = dwa_weights(means, 1.0);
        double denom = std::exp(0.5) + std::exp(1.0);
        CHECK(w[0] == doctest::Approx(2.0 * std::exp(0.5) / denom).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(2.0 * std::exp(1.0) / denom).epsilon(1e-12));
        CHECK(w[0] == doctest::Approx(0.7550813).epsilon(1e-6));
        CHECK(w[0] + w[1] == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("high temperature flattens the weights") {
        std::vector<std::pair<double, double>> means{{0.4, 1.0}, {1.6, 1.0}};
        for (double w : dwa_weights(means, 1e9)) CHECK(w == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("weights increase with the loss ratio") {
        std::vector<std::pair<double, double>> means{{0.9, 1.0}, {1.0, 1.0}};
        auto w1 = dwa_weights(means, 1.0);
        means[0].first = 1.1;
        auto w2 = dwa_weights(means, 1.0);
        CHECK(w2[0] > w1[0]);
    }
    SUBCASE("non-positive means fall back to ones") {
        std::vector<std::pair<double, double>> means{{0.0, 1.0}, {1.0, 1.0}};
        for (double w : dwa_weights(means, 1.0)) CHECK(w == 1.0);
    }
}

TEST_CASE("dtp weights") {
    CHECK(dtp_weight(0.5, 1.0) == doctest::Approx(0.346574).epsilon(1e-6));
    CHECK(dtp_weight(std::exp(-1.0), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dtp_weight(1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-5));
    for (double gamma : {0.0, 0.5, 1.0, 2.0}) {
        double prev = 1e300;
        for (int i = 1; i < 1000; ++i) {
            double kappa = double(i) / 1000.0;
            double w = dtp_weight(kappa, gamma);
            CHECK(w < prev);
            prev = w;
        }
    }
}

TEST_CASE("weighter window bookkeeping") {
    WeighterConfig cfg;
    cfg.kind = WeightKind::dwa;
    cfg.window = 10;
    LossWeighter w(cfg, 2);

    // warm-up: both datasets still report 1
    CHECK(w.weight(0) == 1.0);
    for (int i = 0; i < 10; ++i) w.update(0, 1.0 + i, 0.5);
    CHECK(!w.loss_window_means(0).has_value());  // one window is not enough
    CHECK(w.weight(0) == 1.0);

    for (int i = 0; i < 10; ++i) w.update(0, 2.0, 0.5);
    auto means = w.loss_window_means(0);
    REQUIRE(means.has_value());
    CHECK(means->first == doctest::Approx(2.0));          // L(t-1)
    CHECK(means->second == doctest::Approx(1.0 + 4.5));   // L(t-2) = mean of 1..10
    CHECK(w.weight(0) == 1.0);  // dataset 1 still warming up

    for (int i = 0; i < 20; ++i) w.update(1, 3.0, 0.5);
    auto weights = w.weights();
    CHECK(weights[0] + weights[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(weights[0] < 1.0);  // dataset 0's loss fell, dataset 1's did not
    CHECK(weights[1] > 1.0);
}

TEST_CASE("dtp warm-up and constant streams") {
    WeighterConfig cfg;
    cfg.kind = WeightKind::dtp;
    cfg.window = 5;
    LossWeighter w(cfg, 1);
    CHECK(w.weight(0) == 1.0);  // before any update
    for (int i = 0; i < 5; ++i) w.update(0, 1.0, 0.5);
    CHECK(w.weight(0) == doctest::Approx(dtp_weight(0.5, 1.0)).epsilon(1e-12));

    WeighterConfig dcfg;
    dcfg.kind = WeightKind::dwa;
    dcfg.window = 5;
    LossWeighter d(dcfg, 1);
    for (int i = 0; i < 25; ++i) d.update(0, 0.7, 0.5);
    CHECK(d.weight(0) == doctest::Approx(1.0).epsilon(1e-12));  // constant loss, r = 1
}

TEST_CASE("scaling the loss scales the gradient") {
    Rng rng(37);
    Tensor x = Tensor::empty({8}, DType::f64);
    for (size_t i = 0; i < 8; ++i) x.set(i, rng.uniform(-1, 1));
    double w = 0.37;

    Tape t1;
    Tensor x1 = t1.watch(x);
    t1.backward(ops::scale(ops::sum_all(ops::gelu(ops::mul(x1, x1))), w));
    auto g1 = t1.grad(x1).to_vector();

    Tape t2;
    Tensor x2 = t2.watch(x);
    t2.backward(ops::sum_all(ops::gelu(ops::mul(x2, x2))));
    auto g2 = t2.grad(x2).to_vector();

    for (size_t i = 0; i < 8; ++i) CHECK(std::abs(g1[i] - w * g2[i]) < 1e-12);
}

TEST_CASE("epoch sampler partitions each epoch without repeats") {
    EpochSampler s(10, 123);
    auto first = s.next(6);
    auto second = s.next(6);  // 4 from epoch one, 2 from epoch two
    std::vector<size_t> epoch1(first);
    epoch1.insert(epoch1.end(), second.begin(), second.begin() + 4);
    std::sort(epoch1.begin(), epoch1.end());
    for (size_t i = 0; i < 10; ++i) CHECK(epoch1[i] == i);

    auto third = s.next(6);
    std::vector<size_t> epoch2(second.begin() + 4, second.end());
    epoch2.insert(epoch2.end(), third.begin(), third.end());
    std::sort(epoch2.begin(), epoch2.end());
    CHECK(std::adjacent_find(epoch2.begin(), epoch2.end()) == epoch2.end());  // no repeats
    for (size_t v : epoch2) CHECK(v < 10);
}

TEST_CASE("topk tie handling") {
    Tensor perfect = Tensor::from({0, 5, 0, 0}, {1, 4}, DType::f64);
    CHECK(topk_rate(perfect, {1}, 1) == 1.0);
    CHECK(topk_rate(perfect, {1}, 5) == 1.0);

    Tensor constant = Tensor::zeros({4, 4}, DType::f64);
    std::vector<size_t> labels{0, 1, 2, 0};
    CHECK(topk_rate(constant, labels, 1) == doctest::Approx(0.5));  // ties pick class 0
    CHECK(topk_rate(constant, labels, 5) == 1.0);                   // C <= 5
}

TEST_CASE("train iteration performs one update per dataset in order") {
    fs::path d0 = make_image_dataset("ivf_train_a", 51);
    fs::path d1 = make_image_dataset("ivf_train_b", 52, 3);
    std::vector<Dataset> datasets;
    datasets.emplace_back(d0);
    datasets.emplace_back(d1);
    datasets[0].spec().id = 0;
    datasets[1].spec().id = 1;

    ViTModel model = ViTModel::init(desk_model({2, 3}), 7);
    MultiTrainer trainer(model, datasets, desk_setup(2, 7));

    auto records = trainer.train_iteration();
    REQUIRE(records.size() == 2);
    CHECK(records[0].dataset == 0);
    CHECK(records[1].dataset == 1);
    CHECK(records[0].iteration == 0);
    for (const auto& r : records) CHECK(r.w == 1.0);  // static weighting

    // per-dataset moments stay disjoint: each state only knows its own head
    const OptimizerState& s0 = trainer.optimizer_state(0);
    const OptimizerState& s1 = trainer.optimizer_state(1);
    CHECK(s0.m1.count("head0.w") == 1);
    CHECK(s0.m1.count("head1.w") == 0);
    CHECK(s1.m1.count("head1.w") == 1);
    CHECK(s1.m1.count("head0.w") == 0);
    CHECK(s0.m1.count("block0.msa.wq") == 1);
    CHECK(s1.m1.count("block0.msa.wq") == 1);

    fs::remove_all(d0);
    fs::remove_all(d1);
}

TEST_CASE("lr zero leaves parameters unchanged and losses repeat") {
    fs::path d0 = make_image_dataset("ivf_train_lr0", 53);
    std::vector<Dataset> datasets;
    datasets.emplace_back(d0);

    ViTModel model = ViTModel::init(desk_model({2}), 8);
    Tensor before = model.embed.clone();
    MultiTrainer trainer(model, datasets, desk_setup(1, 9, 0.0));
    auto r1 = trainer.train_iteration();

    std::vector<Dataset> datasets2;
    datasets2.emplace_back(d0);
    ViTModel model2 = ViTModel::init(desk_model({2}), 8);
    MultiTrainer trainer2(model2, datasets2, desk_setup(1, 9, 0.0));
    auto r2 = trainer2.train_iteration();

    CHECK(trainer.model().embed.to_vector() == before.to_vector());
    CHECK(r1[0].loss == r2[0].loss);
    fs::remove_all(d0);
}

TEST_CASE("training streams are deterministic in the seed") {
    fs::path d0 = make_image_dataset("ivf_train_det", 54);
    auto run = [&]() {
        std::vector<Dataset> datasets;
        datasets.emplace_back(d0);
        ViTModel model = ViTModel::init(desk_model({2}), 11);
        MultiTrainer trainer(model, datasets, desk_setup(1, 13));
        std::vector<MetricsRecord> all;
        for (int i = 0; i < 4; ++i)
            for (auto& r : trainer.train_iteration()) all.push_back(r);
        return all;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].loss == b[i].loss);
        CHECK(a[i].top1 == b[i].top1);
        CHECK(a[i].w == b[i].w);
    }
    fs::remove_all(d0);
}
