#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ivf/batch.hpp"
#include "ivf/rng.hpp"
#include "ivf/tensor.hpp"

namespace ivf {

enum class Split { train, val };

struct DatasetSpec {
    size_t id = 0;  // dense per run, assigned by registration order
    std::string name;
    Modality modality = Modality::image;
    size_t num_classes = 0;
    size_t frames_per_clip = 1;  // T; 1 for images
    size_t native_h = 0, native_w = 0;
    std::filesystem::path root;
    std::string train_manifest = "train.json";
    std::string val_manifest = "val.json";

    void validate() const;
};

struct ManifestRecord {
    std::string file;   // relative to the dataset root
    size_t label = 0;
    size_t frames = 1;  // stored frame count, 1 for images
};

struct Manifest {
    std::vector<ManifestRecord> records;
    size_t size() const { return records.size(); }
};

struct AugmentConfig {
    double area_min = 0.08, area_max = 1.0;
    double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
    size_t out_size = 224;
    double hflip_prob = 0.5;
    size_t video_resize_min = 224, video_resize_max = 320;
    double clip_seconds = 2.67;
    double fps = 30.0;

    void validate() const;
};

// Kernels ---------------------------------------------------------------------

/// Bilinear resampling, half-pixel centers (align_corners=false), edges
/// clamped. (3,H,W) -> (3,out_h,out_w).
Tensor bilinear_resize(const Tensor& img, size_t out_h, size_t out_w);

Tensor hflip(const Tensor& img);  // (…,W) mirrored along the last axis

Tensor crop(const Tensor& img, size_t y0, size_t x0, size_t h, size_t w);  // (3,H,W)

// Augmentation ----------------------------------------------------------------

/// Random resized crop: area fraction and aspect ratio drawn uniformly from
/// the configured ranges, up to 10 attempts, then a centered square
/// fallback. Resizes to out_size and flips with hflip_prob.
Tensor augment_image(const Tensor& img, const AugmentConfig& cfg, Rng& rng);

/// One spatial draw shared by every frame of a clip: short-edge target,
/// fractional crop position, flip.
struct ClipAugDraw {
    size_t short_edge;
    double crop_u, crop_v;
    bool flip;
};
ClipAugDraw draw_clip_augment(const AugmentConfig& cfg, Rng& rng);
Tensor augment_video_frame(const Tensor& frame, const AugmentConfig& cfg,
                           const ClipAugDraw& draw);

/// Deterministic eval transforms: images resize to out_size; video frames
/// short-edge resize to out_size then center crop.
Tensor eval_image_transform(const Tensor& img, size_t out_size);
Tensor eval_video_frame_transform(const Tensor& frame, size_t out_size);

/// Frame indices for one clip: a random window of round(fps*clip_seconds)
/// frames (clamped to the video length), then frames_per_clip indices
/// start + floor(k*W/T). Pass rng = nullptr for the deterministic eval
/// variant (start 0, window = whole video).
std::vector<size_t> sample_clip(size_t total_frames, size_t frames_per_clip,
                                const AugmentConfig& cfg, Rng* rng);

// Datasets on disk -------------------------------------------------------------

DatasetSpec load_dataset_spec(const std::filesystem::path& dir);

/// Loads and validates a manifest: labels in range, every tensor file
/// present with the declared dimensions. Errors carry the record index.
Manifest load_manifest(const DatasetSpec& spec, Split split);

enum class SynthKind { blobs_image, blobs_video, frame_order };

struct SynthParams {
    SynthKind kind = SynthKind::blobs_image;
    size_t classes = 4;
    size_t train_samples = 128;
    size_t val_samples = 32;
    size_t height = 32, width = 32;
    size_t frames = 4;  // video kinds
    uint64_t seed = 0;
    std::string name;
};

/// Writes dataset.json, train/val manifests and tensor files under `dir`.
/// Deterministic in `seed`. frame_order emits adjacent forward/reversed
/// pairs: every clip with label 0 is followed by its exact frame reversal
/// with label 1.
DatasetSpec synth_dataset(const SynthParams& params, const std::filesystem::path& dir);

// Runtime dataset ---------------------------------------------------------------

/// Manifest-backed dataset with an in-memory tensor cache. Confined to the
/// training thread.
class Dataset {
  public:
    explicit Dataset(const std::filesystem::path& dir);

    const DatasetSpec& spec() const { return spec_; }
    DatasetSpec& spec() { return spec_; }
    const Manifest& manifest(Split split) const {
        return split == Split::train ? train_ : val_;
    }

    /// Stacks the selected records into a batch. rng != nullptr applies the
    /// training augmentation (videos share one draw per clip); rng ==
    /// nullptr applies the deterministic eval transform.
    SampleBatch assemble(Split split, std::span<const size_t> indices,
                         const AugmentConfig& cfg, Rng* rng) const;

  private:
    const Tensor& load_record(Split split, size_t index) const;

    DatasetSpec spec_;
    Manifest train_, val_;
    mutable std::map<std::pair<int, size_t>, Tensor> cache_;
};

const char* synth_kind_name(SynthKind k);
SynthKind synth_kind_from(const std::string& s);

}  // namespace ivf
