#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "ivf/data.hpp"
#include "ivf/tensor_io.hpp"

using namespace ivf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool dirs_equal(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    for (auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& rel : fa)
        if (read_bytes(a / rel) != read_bytes(b / rel)) return false;
    return true;
}

AugmentConfig desk_augment(size_t out) {
    AugmentConfig cfg;
    cfg.out_size = out;
    cfg.video_resize_min = out;
    cfg.video_resize_max = out + out / 4;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic datasets are deterministic in the seed") {
    SynthParams p;
    p.kind = SynthKind::blobs_image;
    p.classes = 3;
    p.train_samples = 9;
    p.val_samples = 3;
    p.height = p.width = 12;
    p.seed = 77;
    fs::path a = fresh_dir("ivf_synth_a"), b = fresh_dir("ivf_synth_b");
    synth_dataset(p, a);
    synth_dataset(p, b);
    CHECK(dirs_equal(a, b));

    fs::path c = fresh_dir("ivf_synth_c");
    p.seed = 78;
    synth_dataset(p, c);
    CHECK(!dirs_equal(a, c));
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("frame-order clips come in exact reversed pairs") {
    SynthParams p;
    p.kind = SynthKind::frame_order;
    p.classes = 2;
    p.train_samples = 8;
    p.val_samples = 4;
    p.height = p.width = 10;
    p.frames = 4;
    p.seed = 5;
    fs::path dir = fresh_dir("ivf_synth_fo");
    DatasetSpec spec = synth_dataset(p, dir);
    Manifest m = load_manifest(spec, Split::train);
    REQUIRE(m.size() == 8);
    size_t fsz = 3 * 10 * 10;
    for (size_t pair = 0; pair < 4; ++pair) {
        const auto& fwd = m.records[2 * pair];
        const auto& rev = m.records[2 * pair + 1];
        CHECK(fwd.label == 0);
        CHECK(rev.label == 1);
        Tensor tf = load_tensor(dir / fwd.file);
        Tensor tr = load_tensor(dir / rev.file);
        for (size_t t = 0; t < 4; ++t)
            for (size_t i = 0; i < fsz; ++i)
                CHECK(tf.at(t * fsz + i) == tr.at((3 - t) * fsz + i));
    }
    fs::remove_all(dir);
}

TEST_CASE("blob classes are linearly separable on raw pixels") {
    SynthParams p;
    p.kind = SynthKind::blobs_image;
    p.classes = 4;
    p.train_samples = 64;
    p.val_samples = 16;
    p.height = p.width = 16;
    p.seed = 3;
    fs::path dir = fresh_dir("ivf_synth_sep");
    DatasetSpec spec = synth_dataset(p, dir);
    Manifest m = load_manifest(spec, Split::train);

    // nearest-mean probe == linear classifier argmax_c <x, mu_c> - |mu_c|^2/2
    size_t n = 3 * 16 * 16;
    std::vector<std::vector<double>> mean(4, std::vector<double>(n, 0.0));
    std::vector<size_t> counts(4, 0);
    std::vector<std::vector<double>> pixels;
    std::vector<size_t> labels;
    for (const auto& rec : m.records) {
        Tensor t = load_tensor(dir / rec.file);
        pixels.push_back(t.to_vector());
        labels.push_back(rec.label);
        for (size_t i = 0; i < n; ++i) mean[rec.label][i] += pixels.back()[i];
        counts[rec.label] += 1;
    }
    for (size_t c = 0; c < 4; ++c)
        for (size_t i = 0; i < n; ++i) mean[c][i] /= double(counts[c]);
    size_t correct = 0;
    for (size_t s = 0; s < pixels.size(); ++s) {
        double best = -1e300;
        size_t arg = 0;
        for (size_t c = 0; c < 4; ++c) {
            double score = 0, norm = 0;
            for (size_t i = 0; i < n; ++i) {
                score += pixels[s][i] * mean[c][i];
                norm += mean[c][i] * mean[c][i];
            }
            score -= norm / 2;
            if (score > best) {
                best = score;
                arg = c;
            }
        }
        if (arg == labels[s]) ++correct;
    }
    CHECK(correct == pixels.size());
    fs::remove_all(dir);
}

TEST_CASE("manifest validation reports the record index") {
    SynthParams p;
    p.kind = SynthKind::blobs_image;
    p.classes = 2;
    p.train_samples = 4;
    p.val_samples = 2;
    p.height = p.width = 8;
    p.seed = 9;
    fs::path dir = fresh_dir("ivf_manifest");
    DatasetSpec spec = synth_dataset(p, dir);
    CHECK(load_manifest(spec, Split::train).size() == 4);

    SUBCASE("label out of range") {
        nlohmann::json j;
        std::ifstream in(dir / "train.json");
        in >> j;
        in.close();
        j["records"][1]["label"] = 2;  // == num_classes
        std::ofstream out(dir / "train.json");
        out << j.dump();
        out.close();
        try {
            load_manifest(spec, Split::train);
            FAIL("no error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("record 1") != std::string::npos);
        }
    }
    SUBCASE("dangling tensor path") {
        nlohmann::json j;
        std::ifstream in(dir / "train.json");
        in >> j;
        in.close();
        j["records"][2]["file"] = "data/nowhere.ivt";
        std::ofstream out(dir / "train.json");
        out << j.dump();
        out.close();
        try {
            load_manifest(spec, Split::train);
            FAIL("no error");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("record 2") != std::string::npos);
        }
    }
    SUBCASE("dimension mismatch") {
        save_tensor(dir / "data/train_00000.ivt", Tensor::zeros({3, 4, 4}, DType::f32));
        try {
            load_manifest(spec, Split::train);
            FAIL("no error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("record 0") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("full-area unit-aspect crop is a plain resize") {
    Rng rng(1);
    Tensor img = Tensor::empty({3, 10, 10}, DType::f32);
    for (size_t i = 0; i < img.numel(); ++i) img.set(i, rng.uniform01());
    AugmentConfig cfg = desk_augment(8);
    cfg.area_min = cfg.area_max = 1.0;
    cfg.aspect_min = cfg.aspect_max = 1.0;
    cfg.hflip_prob = 0.0;
    Rng draw(2);
    Tensor out = augment_image(img, cfg, draw);
    Tensor direct = bilinear_resize(img, 8, 8);
    CHECK(out.to_vector() == direct.to_vector());
}

TEST_CASE("hflip is an involution") {
    Rng rng(4);
    Tensor img = Tensor::empty({3, 5, 7}, DType::f32);
    for (size_t i = 0; i < img.numel(); ++i) img.set(i, rng.uniform01());
    CHECK(hflip(hflip(img)).to_vector() == img.to_vector());
}

TEST_CASE("augmentation draws are reproducible from the seed") {
    Rng rng(6);
    Tensor img = Tensor::empty({3, 14, 14}, DType::f32);
    for (size_t i = 0; i < img.numel(); ++i) img.set(i, rng.uniform01());
    AugmentConfig cfg = desk_augment(8);
    Rng r1(99), r2(99);
    CHECK(augment_image(img, cfg, r1).to_vector() == augment_image(img, cfg, r2).to_vector());
}

TEST_CASE("clip sampling follows the stride formula") {
    AugmentConfig cfg = desk_augment(8);
    cfg.fps = 30.0;
    cfg.clip_seconds = 2.67;  // window of 80 frames

    Rng rng(8);
    auto idx = sample_clip(100, 16, cfg, &rng);
    REQUIRE(idx.size() == 16);
    for (size_t k = 0; k < 16; ++k) CHECK(idx[k] - idx[0] == 5 * k);

    auto exact = sample_clip(16, 16, cfg, &rng);
    for (size_t k = 0; k < 16; ++k) CHECK(exact[k] == k);

    auto single = sample_clip(1, 16, cfg, &rng);
    for (size_t k = 0; k < 16; ++k) CHECK(single[k] == 0);

    CHECK_THROWS_AS(sample_clip(0, 16, cfg, &rng), ContractError);
}

TEST_CASE("image batches stack to (B,3,S,S)") {
    SynthParams p;
    p.kind = SynthKind::blobs_image;
    p.classes = 2;
    p.train_samples = 8;
    p.val_samples = 2;
    p.height = p.width = 12;
    p.seed = 11;
    fs::path dir = fresh_dir("ivf_batch_img");
    synth_dataset(p, dir);
    Dataset ds(dir);
    AugmentConfig cfg = desk_augment(8);
    Rng rng(42);
    std::vector<size_t> idx{0, 1, 2, 3, 4, 5};
    SampleBatch batch = ds.assemble(Split::train, idx, cfg, &rng);
    CHECK(batch.pixels.shape() == Shape{6, 3, 8, 8});
    CHECK(batch.labels.size() == 6);
    CHECK(batch.modality == Modality::image);

    std::vector<size_t> one{3};
    CHECK(ds.assemble(Split::train, one, cfg, &rng).pixels.shape() == Shape{1, 3, 8, 8});
    fs::remove_all(dir);
}

TEST_CASE("video batches stack 16-frame clips to 96 frames") {
    SynthParams p;
    p.kind = SynthKind::blobs_video;
    p.classes = 2;
    p.train_samples = 6;
    p.val_samples = 2;
    p.height = p.width = 8;
    p.frames = 16;
    p.seed = 12;
    fs::path dir = fresh_dir("ivf_batch_vid");
    synth_dataset(p, dir);
    Dataset ds(dir);
    AugmentConfig cfg = desk_augment(8);
    Rng rng(43);
    std::vector<size_t> idx{0, 1, 2, 3, 4, 5};
    SampleBatch batch = ds.assemble(Split::train, idx, cfg, &rng);
    CHECK(batch.pixels.shape() == Shape{6, 16, 3, 8, 8});  // 96 frames in total
    CHECK(batch.frames() == 16);
    fs::remove_all(dir);
}

TEST_CASE("every frame of a clip shares one augmentation draw") {
    // all-equal frames stay equal after augmentation iff the draw is shared
    fs::path dir = fresh_dir("ivf_clip_draw");
    fs::create_directories(dir / "data");
    Rng rng(13);
    size_t T = 4, H = 12;
    Tensor frame = Tensor::empty({3, H, H}, DType::f32);
    for (size_t i = 0; i < frame.numel(); ++i) frame.set(i, rng.uniform01());
    Tensor clip = Tensor::empty({T, 3, H, H}, DType::f32);
    for (size_t t = 0; t < T; ++t)
        for (size_t i = 0; i < frame.numel(); ++i) clip.set(t * frame.numel() + i, frame.at(i));
    save_tensor(dir / "data/train_00000.ivt", clip);
    save_tensor(dir / "data/val_00000.ivt", clip);
    nlohmann::json rec{{"records",
                        {{{"file", "data/train_00000.ivt"}, {"label", 0}, {"frames", T}}}}};
    std::ofstream(dir / "train.json") << rec.dump();
    rec["records"][0]["file"] = "data/val_00000.ivt";
    std::ofstream(dir / "val.json") << rec.dump();
    nlohmann::json dj{{"name", "clipdraw"},   {"modality", "video"},  {"num_classes", 1},
                      {"frames_per_clip", T}, {"native_h", H},        {"native_w", H},
                      {"train_manifest", "train.json"}, {"val_manifest", "val.json"}};
    std::ofstream(dir / "dataset.json") << dj.dump();

    Dataset ds(dir);
    AugmentConfig cfg = desk_augment(8);
    Rng draw(21);
    std::vector<size_t> idx{0};
    SampleBatch batch = ds.assemble(Split::train, idx, cfg, &draw);
    size_t fsz = 3 * 8 * 8;
    for (size_t t = 1; t < T; ++t)
        for (size_t i = 0; i < fsz; ++i)
            CHECK(batch.pixels.at(t * fsz + i) == batch.pixels.at(i));
    fs::remove_all(dir);
}

TEST_CASE("augment config invariants") {
    AugmentConfig cfg = desk_augment(16);
    cfg.video_resize_min = 8;  // smaller than out_size
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = desk_augment(16);
    cfg.area_min = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = desk_augment(16);
    cfg.aspect_min = 2.0;  // empty range
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("frame-order synthesis rejects odd counts and wrong class counts") {
    SynthParams p;
    p.kind = SynthKind::frame_order;
    p.classes = 3;
    p.train_samples = 8;
    p.val_samples = 4;
    fs::path dir = fresh_dir("ivf_fo_bad");
    CHECK_THROWS_AS(synth_dataset(p, dir), ConfigError);
    p.classes = 2;
    p.train_samples = 7;
    CHECK_THROWS_AS(synth_dataset(p, dir), ConfigError);
    fs::remove_all(dir);
}
