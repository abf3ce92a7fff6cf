#pragma once

#include <vector>

#include "ivf/tensor.hpp"

namespace ivf {

enum class Modality { image, video };

inline const char* modality_name(Modality m) { return m == Modality::image ? "image" : "video"; }

/// One training/eval mini-batch. Image batches carry pixels (B,3,H,W);
/// video batches carry (B,T,3,H,W). Labels are class indices.
struct SampleBatch {
    Modality modality = Modality::image;
    Tensor pixels;
    std::vector<size_t> labels;
    size_t dataset_id = 0;

    size_t size() const { return labels.size(); }
    size_t frames() const {
        return modality == Modality::video ? pixels.extent(1) : 1;
    }
};

}  // namespace ivf
