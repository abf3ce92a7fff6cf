#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivf/batch.hpp"
#include "ivf/tape.hpp"
#include "ivf/tensor.hpp"

namespace ivf {

struct ViTConfig {
    size_t image_h = 224;
    size_t image_w = 224;
    size_t patch = 16;
    size_t dim = 768;        // token embedding width
    size_t blocks = 12;
    size_t heads = 12;
    size_t mlp_hidden = 3072;
    size_t shift_back = 0;   // class-token channels taken from the previous frame
    size_t shift_fwd = 0;    // class-token channels taken from the next frame
    bool shift_enabled = false;
    std::vector<size_t> head_classes;  // one classifier per dataset, C_i each
    DType dtype = DType::f32;

    size_t patches() const { return (image_h / patch) * (image_w / patch); }
    size_t patch_dim() const { return 3 * patch * patch; }
    size_t tokens() const { return patches() + 1; }
    size_t head_dim() const { return dim / heads; }

    void validate() const;
    bool operator==(const ViTConfig&) const = default;
};

/// shift_back = shift_fwd = dim/8 unless set explicitly.
ViTConfig with_default_shift(ViTConfig cfg);

struct LayerNormParams {
    Tensor gamma, beta;
};

struct AttentionParams {
    // No key bias: a constant key offset shifts every score in a softmax
    // row equally, so it cannot affect the output.
    Tensor wq, bq, wk, wv, bv, wo, bo;
};

struct MlpParams {
    Tensor w1, b1, w2, b2;
};

struct BlockParams {
    LayerNormParams ln1;
    AttentionParams msa;
    LayerNormParams ln2;
    MlpParams mlp;
};

struct HeadParams {
    Tensor w, b;
};

/// Token activations for B*T rows. Token 0 of every row is the class token.
struct ActivationSet {
    Tensor z;       // (rows, N+1, D)
    size_t batch;   // B
    size_t frames;  // T, 1 for image batches
};

struct ViTModel {
    ViTConfig cfg;
    Tensor embed;      // (d, D)
    Tensor pos_embed;  // (N+1, D)
    Tensor cls_token;  // (D)
    std::vector<BlockParams> blocks;
    std::vector<HeadParams> heads;

    static ViTModel init(const ViTConfig& cfg, uint64_t seed);

    /// Named aliases of every parameter tensor, in checkpoint order.
    std::vector<Parameter> parameters();
    std::vector<Parameter> parameters() const;

    /// Copy of the model whose parameters are watched leaves on `tape`.
    ViTModel traced(Tape& tape) const;

    ViTModel astype(DType dt) const;
};

// Model operations -----------------------------------------------------------

/// (B',3,H,W) -> (B',N,d). Patches in raster order; each patch flattened
/// channel-major, then rows, then columns. This order is part of the
/// checkpoint contract.
Tensor patchify(const Tensor& x, size_t patch);

/// z0 = [c0, p1 E, ..., pN E] + E_pos.
ActivationSet embed_patches(const Tensor& patches, const ViTModel& m, size_t batch,
                            size_t frames);

/// Class-token temporal shift. Channels [0, back) of frame t take frame
/// t-1's values (zeros at the first frame); [back, back+fwd) take frame
/// t+1's (zeros at the last frame); the rest and all non-class tokens pass
/// through.
ActivationSet token_shift(const ActivationSet& z, size_t back, size_t fwd);

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, size_t heads);

/// One encoder step: z' = MSA(LN(z)) + z; y = MLP(LN(z')) + z'. With
/// shift_enabled the class-token shift is applied to y, so each block moves
/// class-token information by exactly one frame.
ActivationSet encoder_block(const ActivationSet& z, const BlockParams& blk,
                            const ViTConfig& cfg, bool shift_enabled);

/// (B,T,D) -> (B,D), arithmetic mean over frames.
Tensor temporal_mean_pool(const Tensor& class_tokens);

struct ForwardResult {
    Tensor logits;        // (B, C_i)
    Tensor class_tokens;  // (B, T, D), pre-pooling
};

/// Shared image/video path: an image batch is a one-frame video. Video
/// pixels (B,T,3,H,W) are folded to (BT,3,H,W), run through the blocks,
/// regrouped, mean-pooled and classified. Returns raw logits.
ForwardResult forward_full(const ViTModel& m, const SampleBatch& batch, size_t head_id);
Tensor forward_logits(const ViTModel& m, const SampleBatch& batch, size_t head_id);

// Checkpoints ----------------------------------------------------------------

void checkpoint_save(const ViTModel& m, const std::filesystem::path& path);

/// Loads a checkpoint; with `expected` set, the stored config must match.
/// Parameters are validated name-by-name; the error names the first
/// offending one. Nothing is returned on failure.
ViTModel checkpoint_load(const std::filesystem::path& path,
                         const std::optional<ViTConfig>& expected = std::nullopt,
                         DType dtype = DType::f32);

namespace debug {
/// Multiplies the gradient flowing through the MSA query projection.
/// 1.0 (the default) is a no-op; gradient-check negative controls set it.
double& msa_grad_scale();
}  // namespace debug

}  // namespace ivf
