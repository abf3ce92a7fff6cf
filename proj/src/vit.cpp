#include "ivf/vit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>

#include "ivf/json_io.hpp"
#include "ivf/ops.hpp"
#include "ivf/rng.hpp"
#include "ivf/tensor_io.hpp"

namespace ivf {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr char kCheckpointMagic[4] = {'I', 'V', 'C', '1'};

template <class Model, class F>
void for_each_param(Model& m, F f) {
    f("embed.e", m.embed);
    f("embed.e_pos", m.pos_embed);
    f("embed.c0", m.cls_token);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        std::string p = "block" + std::to_string(i) + ".";
        f(p + "ln1.gamma", b.ln1.gamma);
        f(p + "ln1.beta", b.ln1.beta);
        f(p + "msa.wq", b.msa.wq);
        f(p + "msa.bq", b.msa.bq);
        f(p + "msa.wk", b.msa.wk);
        f(p + "msa.wv", b.msa.wv);
        f(p + "msa.bv", b.msa.bv);
        f(p + "msa.wo", b.msa.wo);
        f(p + "msa.bo", b.msa.bo);
        f(p + "ln2.gamma", b.ln2.gamma);
        f(p + "ln2.beta", b.ln2.beta);
        f(p + "mlp.w1", b.mlp.w1);
        f(p + "mlp.b1", b.mlp.b1);
        f(p + "mlp.w2", b.mlp.w2);
        f(p + "mlp.b2", b.mlp.b2);
    }
    for (size_t h = 0; h < m.heads.size(); ++h) {
        std::string p = "head" + std::to_string(h) + ".";
        f(p + "w", m.heads[h].w);
        f(p + "b", m.heads[h].b);
    }
}

Tensor trunc_normal(Shape shape, double sigma, DType dt, Rng& rng) {
    Tensor t = Tensor::empty(std::move(shape), dt);
    for (size_t i = 0; i < t.numel(); ++i) t.set(i, rng.truncated_normal(sigma));
    return t;
}

}  // namespace

void ViTConfig::validate() const {
    if (patch == 0 || image_h == 0 || image_w == 0 || dim == 0 || blocks == 0 || heads == 0 ||
        mlp_hidden == 0)
        throw ConfigError("model dimensions must be positive");
    if (image_h % patch != 0 || image_w % patch != 0)
        throw ConfigError("image size " + std::to_string(image_h) + "x" +
                          std::to_string(image_w) + " is not divisible by patch size " +
                          std::to_string(patch));
    if (dim % heads != 0)
        throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    if (shift_back + shift_fwd > dim)
        throw ConfigError("shift amounts " + std::to_string(shift_back) + "+" +
                          std::to_string(shift_fwd) + " exceed embedding dim " +
                          std::to_string(dim));
    for (size_t c : head_classes)
        if (c == 0) throw ConfigError("head class count must be positive");
}

ViTConfig with_default_shift(ViTConfig cfg) {
    if (cfg.shift_enabled && cfg.shift_back == 0 && cfg.shift_fwd == 0) {
        cfg.shift_back = cfg.dim / 8;
        cfg.shift_fwd = cfg.dim / 8;
    }
    return cfg;
}

ViTModel ViTModel::init(const ViTConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x1217));
    ViTModel m;
    m.cfg = cfg;
    DType dt = cfg.dtype;
    size_t d = cfg.patch_dim(), D = cfg.dim;
    m.embed = trunc_normal({d, D}, 0.02, dt, rng);
    m.pos_embed = Tensor::zeros({cfg.tokens(), D}, dt);
    m.cls_token = Tensor::zeros({D}, dt);
    for (size_t i = 0; i < cfg.blocks; ++i) {
        BlockParams b;
        b.ln1 = {Tensor::full({D}, 1.0, dt), Tensor::zeros({D}, dt)};
        b.msa.wq = trunc_normal({D, D}, 0.02, dt, rng);
        b.msa.bq = Tensor::zeros({D}, dt);
        b.msa.wk = trunc_normal({D, D}, 0.02, dt, rng);
        b.msa.wv = trunc_normal({D, D}, 0.02, dt, rng);
        b.msa.bv = Tensor::zeros({D}, dt);
        b.msa.wo = trunc_normal({D, D}, 0.02, dt, rng);
        b.msa.bo = Tensor::zeros({D}, dt);
        b.ln2 = {Tensor::full({D}, 1.0, dt), Tensor::zeros({D}, dt)};
        b.mlp.w1 = trunc_normal({D, cfg.mlp_hidden}, 0.02, dt, rng);
        b.mlp.b1 = Tensor::zeros({cfg.mlp_hidden}, dt);
        b.mlp.w2 = trunc_normal({cfg.mlp_hidden, D}, 0.02, dt, rng);
        b.mlp.b2 = Tensor::zeros({D}, dt);
        m.blocks.push_back(std::move(b));
    }
    for (size_t c : cfg.head_classes) {
        HeadParams h;
        h.w = trunc_normal({D, c}, 0.02, dt, rng);
        h.b = Tensor::zeros({c}, dt);
        m.heads.push_back(std::move(h));
    }
    return m;
}

std::vector<Parameter> ViTModel::parameters() {
    std::vector<Parameter> out;
    for_each_param(*this, [&](const std::string& name, Tensor& t) {
        out.push_back({name, t});
    });
    return out;
}

std::vector<Parameter> ViTModel::parameters() const {
    std::vector<Parameter> out;
    for_each_param(*this, [&](const std::string& name, const Tensor& t) {
        out.push_back({name, t});
    });
    return out;
}

ViTModel ViTModel::traced(Tape& tape) const {
    ViTModel copy = *this;
    for_each_param(copy, [&](const std::string&, Tensor& t) { t = tape.watch(t); });
    return copy;
}

ViTModel ViTModel::astype(DType dt) const {
    ViTModel copy = *this;
    copy.cfg.dtype = dt;
    for_each_param(copy, [&](const std::string&, Tensor& t) { t = t.astype(dt); });
    return copy;
}

Tensor patchify(const Tensor& x, size_t patch) {
    if (x.rank() != 4 || x.extent(1) != 3)
        throw ShapeError("patchify expects (B,3,H,W), got " + shape_str(x.shape()));
    size_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    if (patch == 0 || H % patch != 0 || W % patch != 0)
        throw ConfigError("image " + std::to_string(H) + "x" + std::to_string(W) +
                          " is not divisible by patch size " + std::to_string(patch));
    size_t gh = H / patch, gw = W / patch;
    size_t n = gh * gw, d = 3 * patch * patch;
    Tensor out = Tensor::empty({B, n, d}, x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        for (size_t b = 0; b < B; ++b)
            for (size_t gy = 0; gy < gh; ++gy)
                for (size_t gx = 0; gx < gw; ++gx) {
                    T* dst = po.data() + (b * n + gy * gw + gx) * d;
                    for (size_t c = 0; c < 3; ++c)
                        for (size_t py = 0; py < patch; ++py) {
                            const T* src = px.data() +
                                           ((b * 3 + c) * H + gy * patch + py) * W + gx * patch;
                            std::memcpy(dst + (c * patch + py) * patch, src, patch * sizeof(T));
                        }
                }
    });
    return out;
}

ActivationSet embed_patches(const Tensor& patches, const ViTModel& m, size_t batch,
                            size_t frames) {
    size_t rows = patches.extent(0);
    if (rows != batch * frames)
        throw ShapeError("patch rows " + std::to_string(rows) + " != batch*frames");
    if (patches.extent(2) != m.embed.extent(0))
        throw ConfigError("patch dim " + std::to_string(patches.extent(2)) +
                          " does not match embedding rows " +
                          std::to_string(m.embed.extent(0)));
    size_t D = m.cfg.dim, n = patches.extent(1);
    Tensor pe = ops::matmul(patches, m.embed);  // (rows, N, D)
    Tensor cls = ops::add(Tensor::zeros({rows, 1, D}, pe.dtype()),
                          ops::reshape(m.cls_token, {1, 1, D}));
    Tensor z = ops::concat({cls, pe}, 1);
    z = ops::add(z, ops::reshape(m.pos_embed, {1, n + 1, D}));
    return {z, batch, frames};
}

ActivationSet token_shift(const ActivationSet& z, size_t back, size_t fwd) {
    size_t rows = z.z.extent(0), tokens = z.z.extent(1), D = z.z.extent(2);
    if (rows != z.batch * z.frames)
        throw ShapeError("activation rows do not factor into batch*frames");
    if (back + fwd > D)
        throw ConfigError("shift amounts " + std::to_string(back) + "+" + std::to_string(fwd) +
                          " exceed embedding dim " + std::to_string(D));
    if (back + fwd == 0) return z;
    size_t B = z.batch, T = z.frames;
    Tensor cls = ops::reshape(ops::slice_axis(z.z, 1, 0, 1), {B, T, D});
    std::vector<Tensor> parts;
    if (back > 0) {
        if (T > 1)
            parts.push_back(ops::zero_pad_assign(
                ops::slice(cls, {0, 0, 0}, {B, T - 1, back}), {B, T, back}, {0, 1, 0}));
        else
            parts.push_back(Tensor::zeros({B, T, back}, cls.dtype()));
    }
    if (fwd > 0) {
        if (T > 1)
            parts.push_back(ops::zero_pad_assign(
                ops::slice(cls, {0, 1, back}, {B, T, back + fwd}), {B, T, fwd}, {0, 0, 0}));
        else
            parts.push_back(Tensor::zeros({B, T, fwd}, cls.dtype()));
    }
    if (back + fwd < D) parts.push_back(ops::slice(cls, {0, 0, back + fwd}, {B, T, D}));
    Tensor shifted = parts.size() == 1 ? parts[0] : ops::concat(parts, 2);
    Tensor new_cls = ops::reshape(shifted, {rows, 1, D});
    Tensor out = tokens > 1
                     ? ops::concat({new_cls, ops::slice_axis(z.z, 1, 1, tokens)}, 1)
                     : new_cls;
    return {out, B, T};
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, size_t heads) {
    size_t rows = x.extent(0), tokens = x.extent(1), D = x.extent(2);
    if (D % heads != 0) throw ConfigError("attention width not divisible by head count");
    size_t hd = D / heads;
    Tensor q = ops::add(ops::matmul(x, p.wq), p.bq);
    q = ops::debug_grad_scale(q, debug::msa_grad_scale());
    Tensor k = ops::matmul(x, p.wk);
    Tensor v = ops::add(ops::matmul(x, p.wv), p.bv);
    auto split = [&](const Tensor& t) {
        return ops::permute(ops::reshape(t, {rows, tokens, heads, hd}), {0, 2, 1, 3});
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores =
        ops::scale(ops::matmul(qh, ops::transpose_last2(kh)), 1.0 / std::sqrt(double(hd)));
    Tensor attn = ops::softmax(scores, 3);
    Tensor ctx = ops::matmul(attn, vh);  // (rows, heads, tokens, hd)
    Tensor merged = ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {rows, tokens, D});
    return ops::add(ops::matmul(merged, p.wo), p.bo);
}

ActivationSet encoder_block(const ActivationSet& z, const BlockParams& blk,
                            const ViTConfig& cfg, bool shift_enabled) {
    const Tensor& x = z.z;
    Tensor attn_in = ops::layer_norm(x, blk.ln1.gamma, blk.ln1.beta, kLayerNormEps);
    Tensor h = ops::add(multi_head_attention(attn_in, blk.msa, cfg.heads), x);
    Tensor mlp_in = ops::layer_norm(h, blk.ln2.gamma, blk.ln2.beta, kLayerNormEps);
    Tensor hidden = ops::gelu(ops::add(ops::matmul(mlp_in, blk.mlp.w1), blk.mlp.b1));
    Tensor y = ops::add(ops::add(ops::matmul(hidden, blk.mlp.w2), blk.mlp.b2), h);
    ActivationSet out{y, z.batch, z.frames};
    if (shift_enabled) out = token_shift(out, cfg.shift_back, cfg.shift_fwd);
    return out;
}

Tensor temporal_mean_pool(const Tensor& class_tokens) {
    if (class_tokens.rank() != 3)
        throw ShapeError("temporal_mean_pool expects (B,T,D), got " +
                         shape_str(class_tokens.shape()));
    return ops::mean_axis(class_tokens, 1);
}

ForwardResult forward_full(const ViTModel& m, const SampleBatch& batch, size_t head_id) {
    if (head_id >= m.heads.size())
        throw ConfigError("unknown head id " + std::to_string(head_id) + ", model has " +
                          std::to_string(m.heads.size()) + " heads");
    const ViTConfig& cfg = m.cfg;
    Tensor pixels = batch.pixels;
    if (pixels.dtype() != cfg.dtype) pixels = pixels.astype(cfg.dtype);
    size_t B, T;
    if (batch.modality == Modality::video) {
        if (pixels.rank() != 5)
            throw ShapeError("video batch expects (B,T,3,H,W), got " +
                             shape_str(pixels.shape()));
        B = pixels.extent(0);
        T = pixels.extent(1);
        pixels = pixels.reshaped_view({B * T, pixels.extent(2), pixels.extent(3),
                                       pixels.extent(4)});
    } else {
        if (pixels.rank() != 4)
            throw ShapeError("image batch expects (B,3,H,W), got " + shape_str(pixels.shape()));
        B = pixels.extent(0);
        T = 1;
    }
    if (pixels.extent(2) != cfg.image_h || pixels.extent(3) != cfg.image_w)
        throw ConfigError("batch pixels " + shape_str(pixels.shape()) +
                          " do not match model input " + std::to_string(cfg.image_h) + "x" +
                          std::to_string(cfg.image_w));
    if (cfg.shift_enabled && T > cfg.blocks) {
        static std::once_flag warn_once;
        std::call_once(warn_once, [&] {
            std::cerr << "warning: clip length " << T << " exceeds block count " << cfg.blocks
                      << "; the shift cannot mix the whole clip\n";
        });
    }
    Tensor patches = patchify(pixels, cfg.patch);
    ActivationSet z = embed_patches(patches, m, B, T);
    for (const BlockParams& blk : m.blocks) z = encoder_block(z, blk, cfg, cfg.shift_enabled);
    Tensor cls = ops::reshape(ops::slice_axis(z.z, 1, 0, 1), {B, T, cfg.dim});
    Tensor pooled = temporal_mean_pool(cls);
    Tensor logits = ops::add(ops::matmul(pooled, m.heads[head_id].w), m.heads[head_id].b);
    return {logits, cls};
}

Tensor forward_logits(const ViTModel& m, const SampleBatch& batch, size_t head_id) {
    return forward_full(m, batch, head_id).logits;
}

void to_json(nlohmann::json& j, const ViTConfig& cfg) {
    j = nlohmann::json{{"image_h", cfg.image_h},
                       {"image_w", cfg.image_w},
                       {"patch", cfg.patch},
                       {"dim", cfg.dim},
                       {"blocks", cfg.blocks},
                       {"heads", cfg.heads},
                       {"mlp_hidden", cfg.mlp_hidden},
                       {"shift_back", cfg.shift_back},
                       {"shift_fwd", cfg.shift_fwd},
                       {"shift_enabled", cfg.shift_enabled},
                       {"head_classes", cfg.head_classes},
                       {"dtype", cfg.dtype == DType::f32 ? "f32" : "f64"}};
}

void from_json(const nlohmann::json& j, ViTConfig& cfg) {
    j.at("image_h").get_to(cfg.image_h);
    j.at("image_w").get_to(cfg.image_w);
    j.at("patch").get_to(cfg.patch);
    j.at("dim").get_to(cfg.dim);
    j.at("blocks").get_to(cfg.blocks);
    j.at("heads").get_to(cfg.heads);
    j.at("mlp_hidden").get_to(cfg.mlp_hidden);
    j.at("shift_back").get_to(cfg.shift_back);
    j.at("shift_fwd").get_to(cfg.shift_fwd);
    j.at("shift_enabled").get_to(cfg.shift_enabled);
    j.at("head_classes").get_to(cfg.head_classes);
    std::string dt = j.value("dtype", "f32");
    if (dt != "f32" && dt != "f64") throw ConfigError("unknown dtype " + dt);
    cfg.dtype = dt == "f32" ? DType::f32 : DType::f64;
}

void checkpoint_save(const ViTModel& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    nlohmann::json header;
    header["config"] = m.cfg;
    auto params = m.parameters();
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : params)
        plist.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    header["params"] = plist;
    std::string hs = header.dump();
    out.write(kCheckpointMagic, 4);
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : params) write_tensor(out, p.value);
    if (!out) throw IoError("checkpoint write failed: " + path.string());
}

ViTModel checkpoint_load(const std::filesystem::path& path,
                         const std::optional<ViTConfig>& expected, DType dtype) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in) throw IoError("truncated checkpoint header: " + path.string());
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    if (!in) throw IoError("truncated checkpoint header: " + path.string());
    nlohmann::json header;
    ViTConfig stored;
    try {
        header = nlohmann::json::parse(hs);
        stored = header.at("config").get<ViTConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }

    ViTConfig cfg = expected.value_or(stored);
    cfg.dtype = dtype;
    ViTModel model = ViTModel::init(cfg, 0);
    auto params = model.parameters();
    std::vector<std::pair<std::string, Tensor>> loaded;
    std::map<std::string, bool> seen;
    std::map<std::string, Parameter*> lookup;
    for (auto& p : params) lookup[p.name] = &p;

    if (!header.contains("params") || !header["params"].is_array())
        throw IoError("corrupt checkpoint header in " + path.string() + ": missing params");
    for (const auto& entry : header["params"]) {
        std::string name = entry.at("name").get<std::string>();
        Tensor record = read_tensor(in, dtype, path.string() + ":" + name);
        auto it = lookup.find(name);
        if (it == lookup.end())
            throw ConfigError("checkpoint parameter " + name + " does not exist in the model");
        if (record.shape() != it->second->value.shape())
            throw ConfigError("checkpoint parameter " + name + " has shape " +
                              shape_str(record.shape()) + ", config expects " +
                              shape_str(it->second->value.shape()));
        loaded.emplace_back(name, std::move(record));
        seen[name] = true;
    }
    for (const auto& p : params)
        if (!seen.count(p.name))
            throw ConfigError("checkpoint is missing parameter " + p.name);

    // All records validated; only now touch the model.
    for (auto& [name, record] : loaded) {
        Tensor& dst = lookup[name]->value;
        detail::dispatch(dtype, [&]<class T>() {
            auto s = record.span<T>();
            auto d = dst.span<T>();
            std::copy(s.begin(), s.end(), d.begin());
        });
    }
    return model;
}

namespace debug {
double& msa_grad_scale() {
    static double scale = 1.0;
    return scale;
}
}  // namespace debug

}  // namespace ivf
