#include "ivf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "ivf/ops.hpp"
#include "ivf/tensor_io.hpp"

namespace ivf {

using nlohmann::json;

void DatasetSpec::validate() const {
    if (num_classes == 0) throw ConfigError("dataset " + name + ": num_classes must be positive");
    if (native_h == 0 || native_w == 0)
        throw ConfigError("dataset " + name + ": native size must be positive");
    if (modality == Modality::image && frames_per_clip != 1)
        throw ConfigError("dataset " + name + ": image datasets must have frames_per_clip == 1");
    if (modality == Modality::video && frames_per_clip < 1)
        throw ConfigError("dataset " + name + ": video datasets need frames_per_clip >= 1");
}

void AugmentConfig::validate() const {
    if (!(area_min > 0) || area_min > area_max || area_max > 1.0)
        throw ConfigError("augment: bad crop area range");
    if (!(aspect_min > 0) || aspect_min > aspect_max)
        throw ConfigError("augment: bad aspect ratio range");
    if (out_size == 0) throw ConfigError("augment: out_size must be positive");
    if (video_resize_min > video_resize_max)
        throw ConfigError("augment: bad video resize range");
    if (out_size > video_resize_min)
        throw ConfigError("augment: out_size exceeds the minimum video short edge");
    if (hflip_prob < 0 || hflip_prob > 1) throw ConfigError("augment: bad hflip probability");
    if (clip_seconds <= 0 || fps <= 0) throw ConfigError("augment: bad clip window");
}

Tensor bilinear_resize(const Tensor& img, size_t out_h, size_t out_w) {
    if (img.rank() != 3) throw ShapeError("resize expects (C,H,W), got " + shape_str(img.shape()));
    size_t C = img.extent(0), H = img.extent(1), W = img.extent(2);
    if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be positive");
    Tensor out = Tensor::empty({C, out_h, out_w}, img.dtype());
    detail::dispatch(img.dtype(), [&]<class T>() {
        auto src = img.span<T>();
        auto dst = out.span<T>();
        double sy_scale = static_cast<double>(H) / out_h;
        double sx_scale = static_cast<double>(W) / out_w;
        for (size_t oy = 0; oy < out_h; ++oy) {
            double sy = (oy + 0.5) * sy_scale - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
            size_t y0 = static_cast<size_t>(sy);
            size_t y1 = std::min(y0 + 1, H - 1);
            double wy = sy - y0;
            for (size_t ox = 0; ox < out_w; ++ox) {
                double sx = (ox + 0.5) * sx_scale - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
                size_t x0 = static_cast<size_t>(sx);
                size_t x1 = std::min(x0 + 1, W - 1);
                double wx = sx - x0;
                for (size_t c = 0; c < C; ++c) {
                    const T* p = src.data() + c * H * W;
                    double v = (1 - wy) * ((1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                               wy * ((1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
                    dst[(c * out_h + oy) * out_w + ox] = static_cast<T>(v);
                }
            }
        }
    });
    return out;
}

Tensor hflip(const Tensor& img) {
    if (img.rank() < 1) throw ShapeError("hflip needs rank >= 1");
    size_t W = img.shape().back();
    size_t rows = img.numel() / W;
    Tensor out = Tensor::empty(img.shape(), img.dtype());
    detail::dispatch(img.dtype(), [&]<class T>() {
        auto src = img.span<T>();
        auto dst = out.span<T>();
        for (size_t r = 0; r < rows; ++r)
            for (size_t x = 0; x < W; ++x) dst[r * W + x] = src[r * W + (W - 1 - x)];
    });
    return out;
}

Tensor crop(const Tensor& img, size_t y0, size_t x0, size_t h, size_t w) {
    if (img.rank() != 3) throw ShapeError("crop expects (C,H,W)");
    return ops::slice(img, {0, y0, x0}, {img.extent(0), y0 + h, x0 + w});
}

Tensor augment_image(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (img.rank() != 3) throw ShapeError("augment_image expects (C,H,W)");
    size_t H0 = img.extent(1), W0 = img.extent(2);
    size_t cw = 0, ch = 0, cx0 = 0, cy0 = 0;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        double area = rng.uniform(cfg.area_min, cfg.area_max) * static_cast<double>(H0 * W0);
        double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
        auto w = static_cast<long>(std::lround(std::sqrt(area * aspect)));
        auto h = static_cast<long>(std::lround(std::sqrt(area / aspect)));
        if (w >= 1 && h >= 1 && w <= static_cast<long>(W0) && h <= static_cast<long>(H0)) {
            cw = static_cast<size_t>(w);
            ch = static_cast<size_t>(h);
            cx0 = rng.uniform_int(W0 - cw + 1);
            cy0 = rng.uniform_int(H0 - ch + 1);
            ok = true;
        }
    }
    if (!ok) {
        size_t side = std::min(H0, W0);
        ch = cw = side;
        cy0 = (H0 - side) / 2;
        cx0 = (W0 - side) / 2;
    }
    Tensor out = bilinear_resize(crop(img, cy0, cx0, ch, cw), cfg.out_size, cfg.out_size);
    if (rng.bernoulli(cfg.hflip_prob)) out = hflip(out);
    return out;
}

ClipAugDraw draw_clip_augment(const AugmentConfig& cfg, Rng& rng) {
    ClipAugDraw d;
    d.short_edge = cfg.video_resize_min +
                   rng.uniform_int(cfg.video_resize_max - cfg.video_resize_min + 1);
    d.crop_u = rng.uniform01();
    d.crop_v = rng.uniform01();
    d.flip = rng.bernoulli(cfg.hflip_prob);
    return d;
}

namespace {

// Aspect-preserving resize putting the short edge at `target`.
Tensor short_edge_resize(const Tensor& frame, size_t target) {
    size_t H0 = frame.extent(1), W0 = frame.extent(2);
    size_t rh, rw;
    if (H0 <= W0) {
        rh = target;
        rw = std::max<size_t>(target,
                              static_cast<size_t>(std::lround(double(W0) * target / H0)));
    } else {
        rw = target;
        rh = std::max<size_t>(target,
                              static_cast<size_t>(std::lround(double(H0) * target / W0)));
    }
    return bilinear_resize(frame, rh, rw);
}

}  // namespace

Tensor augment_video_frame(const Tensor& frame, const AugmentConfig& cfg,
                           const ClipAugDraw& draw) {
    Tensor resized = short_edge_resize(frame, draw.short_edge);
    size_t rh = resized.extent(1), rw = resized.extent(2), S = cfg.out_size;
    size_t y0 = static_cast<size_t>(draw.crop_v * static_cast<double>(rh - S + 1));
    size_t x0 = static_cast<size_t>(draw.crop_u * static_cast<double>(rw - S + 1));
    Tensor out = crop(resized, y0, x0, S, S);
    if (draw.flip) out = hflip(out);
    return out;
}

Tensor eval_image_transform(const Tensor& img, size_t out_size) {
    return bilinear_resize(img, out_size, out_size);
}

Tensor eval_video_frame_transform(const Tensor& frame, size_t out_size) {
    Tensor resized = short_edge_resize(frame, out_size);
    size_t rh = resized.extent(1), rw = resized.extent(2);
    return crop(resized, (rh - out_size) / 2, (rw - out_size) / 2, out_size, out_size);
}

std::vector<size_t> sample_clip(size_t total_frames, size_t frames_per_clip,
                                const AugmentConfig& cfg, Rng* rng) {
    if (total_frames == 0) throw ContractError("cannot sample a clip from an empty video");
    if (frames_per_clip == 0) throw ContractError("frames_per_clip must be positive");
    size_t window, start;
    if (rng) {
        window = static_cast<size_t>(std::llround(cfg.fps * cfg.clip_seconds));
        window = std::max<size_t>(1, std::min(window, total_frames));
        start = rng->uniform_int(total_frames - window + 1);
    } else {
        window = total_frames;
        start = 0;
    }
    std::vector<size_t> idx(frames_per_clip);
    for (size_t k = 0; k < frames_per_clip; ++k) idx[k] = start + (k * window) / frames_per_clip;
    return idx;
}

// On-disk formats --------------------------------------------------------------

namespace {

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

DatasetSpec load_dataset_spec(const std::filesystem::path& dir) {
    json j = read_json_file(dir / "dataset.json");
    DatasetSpec s;
    s.root = dir;
    try {
        s.name = j.at("name").get<std::string>();
        std::string mod = j.at("modality").get<std::string>();
        if (mod != "image" && mod != "video")
            throw ConfigError("dataset " + s.name + ": unknown modality " + mod);
        s.modality = mod == "image" ? Modality::image : Modality::video;
        s.num_classes = j.at("num_classes").get<size_t>();
        s.frames_per_clip = j.at("frames_per_clip").get<size_t>();
        s.native_h = j.at("native_h").get<size_t>();
        s.native_w = j.at("native_w").get<size_t>();
        s.train_manifest = j.value("train_manifest", "train.json");
        s.val_manifest = j.value("val_manifest", "val.json");
    } catch (const json::exception& e) {
        throw ConfigError("bad dataset.json in " + dir.string() + ": " + e.what());
    }
    s.validate();
    return s;
}

Manifest load_manifest(const DatasetSpec& spec, Split split) {
    std::filesystem::path path =
        spec.root / (split == Split::train ? spec.train_manifest : spec.val_manifest);
    json j = read_json_file(path);
    Manifest m;
    if (!j.contains("records") || !j["records"].is_array())
        throw ConfigError("manifest " + path.string() + " has no records array");
    size_t idx = 0;
    for (const auto& r : j["records"]) {
        ManifestRecord rec;
        try {
            rec.file = r.at("file").get<std::string>();
            rec.label = r.at("label").get<size_t>();
            rec.frames = r.value("frames", size_t{1});
        } catch (const json::exception& e) {
            throw ConfigError("manifest " + path.string() + " record " + std::to_string(idx) +
                              ": " + e.what());
        }
        if (rec.label >= spec.num_classes)
            throw ConfigError("manifest " + path.string() + " record " + std::to_string(idx) +
                              ": label " + std::to_string(rec.label) + " out of range for " +
                              std::to_string(spec.num_classes) + " classes");
        std::filesystem::path file = spec.root / rec.file;
        if (!std::filesystem::exists(file))
            throw IoError("manifest " + path.string() + " record " + std::to_string(idx) +
                          ": missing tensor file " + file.string());
        Shape shape = peek_tensor_shape(file);
        Shape want = spec.modality == Modality::image
                         ? Shape{3, spec.native_h, spec.native_w}
                         : Shape{rec.frames, 3, spec.native_h, spec.native_w};
        if (shape != want)
            throw ConfigError("manifest " + path.string() + " record " + std::to_string(idx) +
                              ": tensor shape " + shape_str(shape) + " does not match declared " +
                              shape_str(want));
        m.records.push_back(std::move(rec));
        ++idx;
    }
    return m;
}

// Synthetic datasets -------------------------------------------------------------

namespace {

Tensor blob_pattern(size_t h, size_t w, Rng& rng) {
    Tensor img = Tensor::zeros({3, h, w}, DType::f32);
    auto p = img.span<float>();
    for (int blob = 0; blob < 3; ++blob) {
        double cy = rng.uniform(0.15, 0.85) * h;
        double cx = rng.uniform(0.15, 0.85) * w;
        double sig = rng.uniform(0.08, 0.22) * std::min(h, w);
        double amp[3] = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
        for (size_t c = 0; c < 3; ++c)
            for (size_t y = 0; y < h; ++y)
                for (size_t x = 0; x < w; ++x) {
                    double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    p[(c * h + y) * w + x] +=
                        static_cast<float>(amp[c] * std::exp(-d2 / (2 * sig * sig)));
                }
    }
    for (float& v : img.span<float>()) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

Tensor with_noise(const Tensor& base, double sigma, Rng& rng) {
    Tensor out = base.clone();
    for (float& v : out.span<float>())
        v = std::clamp(v + static_cast<float>(rng.normal() * sigma), 0.0f, 1.0f);
    return out;
}

}  // namespace

const char* synth_kind_name(SynthKind k) {
    switch (k) {
        case SynthKind::blobs_image: return "blobs-image";
        case SynthKind::blobs_video: return "blobs-video";
        case SynthKind::frame_order: return "frame-order";
    }
    return "?";
}

SynthKind synth_kind_from(const std::string& s) {
    if (s == "blobs-image") return SynthKind::blobs_image;
    if (s == "blobs-video") return SynthKind::blobs_video;
    if (s == "frame-order") return SynthKind::frame_order;
    throw ConfigError("unknown synthetic dataset kind: " + s);
}

DatasetSpec synth_dataset(const SynthParams& p, const std::filesystem::path& dir) {
    if (p.classes == 0) throw ConfigError("synth: classes must be positive");
    if (p.kind == SynthKind::frame_order && p.classes != 2)
        throw ConfigError("frame-order datasets have exactly 2 classes");
    if (p.kind == SynthKind::frame_order &&
        (p.train_samples % 2 != 0 || p.val_samples % 2 != 0))
        throw ConfigError("frame-order sample counts must be even (forward/reversed pairs)");
    if (p.train_samples == 0 || p.val_samples == 0)
        throw ConfigError("synth: sample counts must be positive");
    if (p.kind != SynthKind::blobs_image && p.frames < 2)
        throw ConfigError("synth: video kinds need frames >= 2");

    std::filesystem::create_directories(dir / "data");

    DatasetSpec spec;
    spec.name = p.name.empty() ? synth_kind_name(p.kind) : p.name;
    spec.modality = p.kind == SynthKind::blobs_image ? Modality::image : Modality::video;
    spec.num_classes = p.classes;
    spec.frames_per_clip = spec.modality == Modality::image ? 1 : p.frames;
    spec.native_h = p.height;
    spec.native_w = p.width;
    spec.root = dir;

    std::vector<Tensor> class_patterns;
    if (p.kind != SynthKind::frame_order) {
        for (size_t c = 0; c < p.classes; ++c) {
            Rng rng(mix_seed(p.seed, 0xB10B, c));
            class_patterns.push_back(blob_pattern(p.height, p.width, rng));
        }
    }

    auto make_split = [&](Split split, size_t count) {
        const char* tag = split == Split::train ? "train" : "val";
        Rng rng(mix_seed(p.seed, 0x5EED, split == Split::train ? 1 : 2));
        std::vector<ManifestRecord> records;
        size_t file_no = 0;
        auto emit = [&](const Tensor& t, size_t label, size_t frames) {
            char name[64];
            std::snprintf(name, sizeof(name), "data/%s_%05zu.ivt", tag, file_no++);
            save_tensor(dir / name, t);
            records.push_back({name, label, frames});
        };
        if (p.kind == SynthKind::blobs_image) {
            for (size_t i = 0; i < count; ++i) {
                size_t label = i % p.classes;
                emit(with_noise(class_patterns[label], 0.04, rng), label, 1);
            }
        } else if (p.kind == SynthKind::blobs_video) {
            for (size_t i = 0; i < count; ++i) {
                size_t label = i % p.classes;
                Tensor clip = Tensor::empty({p.frames, 3, p.height, p.width}, DType::f32);
                auto dst = clip.span<float>();
                size_t fsz = 3 * p.height * p.width;
                for (size_t t = 0; t < p.frames; ++t) {
                    Tensor frame = with_noise(class_patterns[label], 0.04, rng);
                    std::memcpy(dst.data() + t * fsz, frame.span<float>().data(),
                                fsz * sizeof(float));
                }
                emit(clip, label, p.frames);
            }
        } else {
            // Per-frame intensity ramp on a shared base pattern; reversing
            // the clip reverses the ramp, and each frame occurs in both
            // classes, so single frames carry no label information.
            for (size_t pair = 0; pair < count / 2; ++pair) {
                Tensor base = blob_pattern(p.height, p.width, rng);
                std::vector<Tensor> frames;
                for (size_t t = 0; t < p.frames; ++t) {
                    double ramp = 0.3 + 0.7 * double(t) / double(p.frames - 1);
                    Tensor f = base.clone();
                    for (float& v : f.span<float>()) v = static_cast<float>(v * ramp);
                    frames.push_back(with_noise(f, 0.02, rng));
                }
                size_t fsz = 3 * p.height * p.width;
                Tensor fwd = Tensor::empty({p.frames, 3, p.height, p.width}, DType::f32);
                Tensor rev = Tensor::empty({p.frames, 3, p.height, p.width}, DType::f32);
                for (size_t t = 0; t < p.frames; ++t) {
                    std::memcpy(fwd.span<float>().data() + t * fsz,
                                frames[t].span<float>().data(), fsz * sizeof(float));
                    std::memcpy(rev.span<float>().data() + t * fsz,
                                frames[p.frames - 1 - t].span<float>().data(),
                                fsz * sizeof(float));
                }
                emit(fwd, 0, p.frames);
                emit(rev, 1, p.frames);
            }
        }
        json m;
        m["records"] = json::array();
        for (const auto& r : records)
            m["records"].push_back({{"file", r.file}, {"label", r.label}, {"frames", r.frames}});
        write_json_file(dir / (split == Split::train ? spec.train_manifest : spec.val_manifest),
                        m);
    };

    make_split(Split::train, p.train_samples);
    make_split(Split::val, p.val_samples);

    json dj = {{"name", spec.name},
               {"modality", modality_name(spec.modality)},
               {"num_classes", spec.num_classes},
               {"frames_per_clip", spec.frames_per_clip},
               {"native_h", spec.native_h},
               {"native_w", spec.native_w},
               {"train_manifest", spec.train_manifest},
               {"val_manifest", spec.val_manifest}};
    write_json_file(dir / "dataset.json", dj);
    return spec;
}

// Runtime dataset -----------------------------------------------------------------

Dataset::Dataset(const std::filesystem::path& dir)
    : spec_(load_dataset_spec(dir)),
      train_(load_manifest(spec_, Split::train)),
      val_(load_manifest(spec_, Split::val)) {}

const Tensor& Dataset::load_record(Split split, size_t index) const {
    auto key = std::make_pair(split == Split::train ? 0 : 1, index);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const Manifest& m = manifest(split);
    if (index >= m.size())
        throw IndexError("record index " + std::to_string(index) + " out of range");
    Tensor t = load_tensor(spec_.root / m.records[index].file, DType::f32);
    return cache_.emplace(key, std::move(t)).first->second;
}

SampleBatch Dataset::assemble(Split split, std::span<const size_t> indices,
                              const AugmentConfig& cfg, Rng* rng) const {
    if (indices.empty()) throw ContractError("cannot assemble an empty batch");
    cfg.validate();
    const Manifest& m = manifest(split);
    size_t B = indices.size(), S = cfg.out_size;
    SampleBatch batch;
    batch.modality = spec_.modality;
    batch.dataset_id = spec_.id;
    if (spec_.modality == Modality::image) {
        batch.pixels = Tensor::empty({B, 3, S, S}, DType::f32);
        auto dst = batch.pixels.span<float>();
        size_t isz = 3 * S * S;
        for (size_t b = 0; b < B; ++b) {
            const Tensor& img = load_record(split, indices[b]);
            Tensor a = rng ? augment_image(img, cfg, *rng) : eval_image_transform(img, S);
            std::memcpy(dst.data() + b * isz, a.span<float>().data(), isz * sizeof(float));
            batch.labels.push_back(m.records[indices[b]].label);
        }
    } else {
        size_t T = spec_.frames_per_clip;
        batch.pixels = Tensor::empty({B, T, 3, S, S}, DType::f32);
        auto dst = batch.pixels.span<float>();
        size_t fsz = 3 * S * S;
        for (size_t b = 0; b < B; ++b) {
            const Tensor& clip = load_record(split, indices[b]);
            size_t total = clip.extent(0);
            size_t src_fsz = 3 * spec_.native_h * spec_.native_w;
            std::vector<size_t> fidx = sample_clip(total, T, cfg, rng);
            ClipAugDraw draw{};
            if (rng) draw = draw_clip_augment(cfg, *rng);
            for (size_t k = 0; k < T; ++k) {
                Tensor frame = Tensor::empty({3, spec_.native_h, spec_.native_w}, DType::f32);
                std::memcpy(frame.span<float>().data(),
                            clip.span<float>().data() + fidx[k] * src_fsz,
                            src_fsz * sizeof(float));
                Tensor a = rng ? augment_video_frame(frame, cfg, draw)
                               : eval_video_frame_transform(frame, S);
                std::memcpy(dst.data() + (b * T + k) * fsz, a.span<float>().data(),
                            fsz * sizeof(float));
            }
            batch.labels.push_back(m.records[indices[b]].label);
        }
    }
    return batch;
}

}  // namespace ivf
