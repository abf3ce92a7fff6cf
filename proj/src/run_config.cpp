#include "ivf/run_config.hpp"

#include <cmath>
#include <fstream>

namespace ivf {

using nlohmann::json;

const char* regime_mode_name(RegimeConfig::Mode m) {
    switch (m) {
        case RegimeConfig::Mode::all: return "all";
        case RegimeConfig::Mode::domain: return "domain";
        case RegimeConfig::Mode::each: return "each";
    }
    return "?";
}

RegimeConfig::Mode regime_mode_from(const std::string& s) {
    if (s == "all") return RegimeConfig::Mode::all;
    if (s == "domain") return RegimeConfig::Mode::domain;
    if (s == "each") return RegimeConfig::Mode::each;
    throw ConfigError("unknown regime mode: " + s);
}

std::vector<OptimizerConfig> RegimeConfig::resolve(const std::vector<DatasetSpec>& specs) const {
    std::vector<OptimizerConfig> out;
    switch (mode) {
        case Mode::all:
            out.assign(specs.size(), all);
            break;
        case Mode::domain:
            for (const auto& s : specs)
                out.push_back(s.modality == Modality::image ? domain_image : domain_video);
            break;
        case Mode::each:
            if (each.size() != specs.size())
                throw ConfigError("regime 'each' lists " + std::to_string(each.size()) +
                                  " optimizers for " + std::to_string(specs.size()) +
                                  " datasets");
            out = each;
            break;
    }
    for (auto& o : out) o.validate();
    return out;
}

namespace {

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig o;
    o.kind = opt_kind_from(j.value("optimizer", std::string("adamw")));
    o.lr = j.value("lr", o.lr);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    o.momentum = j.value("momentum", o.momentum);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.eps = j.value("eps", o.eps);
    o.validate();
    return o;
}

json optimizer_to_json(const OptimizerConfig& o) {
    return json{{"optimizer", opt_kind_name(o.kind)}, {"lr", o.lr},
                {"weight_decay", o.weight_decay},     {"momentum", o.momentum},
                {"beta1", o.beta1},                   {"beta2", o.beta2},
                {"eps", o.eps}};
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    try {
        const json& m = j.at("model");
        if (m.contains("image_size")) {
            cfg.model.image_h = m.at("image_size").get<size_t>();
            cfg.model.image_w = cfg.model.image_h;
        } else {
            cfg.model.image_h = m.at("image_h").get<size_t>();
            cfg.model.image_w = m.at("image_w").get<size_t>();
        }
        cfg.model.patch = m.at("patch").get<size_t>();
        cfg.model.dim = m.at("dim").get<size_t>();
        cfg.model.blocks = m.at("blocks").get<size_t>();
        cfg.model.heads = m.at("heads").get<size_t>();
        cfg.model.mlp_hidden = m.at("mlp_hidden").get<size_t>();
        std::string shift = m.value("shift", std::string("none"));
        if (shift != "none" && shift != "tokenshift")
            throw ConfigError("unknown shift variant: " + shift);
        cfg.model.shift_enabled = shift == "tokenshift";
        cfg.model.shift_back = m.value("shift_back", size_t{0});
        cfg.model.shift_fwd = m.value("shift_fwd", size_t{0});
        cfg.model = with_default_shift(cfg.model);
        std::string dt = m.value("dtype", std::string("f32"));
        if (dt != "f32" && dt != "f64") throw ConfigError("unknown dtype " + dt);
        cfg.model.dtype = dt == "f32" ? DType::f32 : DType::f64;

        cfg.dataset_dirs = j.at("datasets").get<std::vector<std::string>>();
        if (cfg.dataset_dirs.empty()) throw ConfigError("config lists no datasets");

        if (j.contains("regime")) {
            const json& r = j.at("regime");
            cfg.regime.mode = regime_mode_from(r.value("mode", std::string("all")));
            if (r.contains("all")) cfg.regime.all = optimizer_from_json(r.at("all"));
            if (r.contains("domain")) {
                cfg.regime.domain_image = optimizer_from_json(r.at("domain").at("image"));
                cfg.regime.domain_video = optimizer_from_json(r.at("domain").at("video"));
            }
            if (r.contains("each"))
                for (const auto& e : r.at("each"))
                    cfg.regime.each.push_back(optimizer_from_json(e));
        }

        if (j.contains("weighter")) {
            const json& w = j.at("weighter");
            cfg.weighter.kind = weight_kind_from(w.value("kind", std::string("static")));
            cfg.weighter.gamma = w.value("gamma", cfg.weighter.gamma);
            cfg.weighter.temperature = w.value("temperature", cfg.weighter.temperature);
            cfg.weighter.window = w.value("window", cfg.weighter.window);
            cfg.weighter.validate();
        }

        cfg.augment.out_size = cfg.model.image_h;
        if (j.contains("augment")) {
            const json& a = j.at("augment");
            cfg.augment.out_size = a.value("out_size", cfg.augment.out_size);
            if (a.contains("area")) {
                cfg.augment.area_min = a.at("area").at(0).get<double>();
                cfg.augment.area_max = a.at("area").at(1).get<double>();
            }
            if (a.contains("aspect")) {
                cfg.augment.aspect_min = a.at("aspect").at(0).get<double>();
                cfg.augment.aspect_max = a.at("aspect").at(1).get<double>();
            }
            cfg.augment.hflip_prob = a.value("hflip", cfg.augment.hflip_prob);
            if (a.contains("video_resize")) {
                cfg.augment.video_resize_min = a.at("video_resize").at(0).get<size_t>();
                cfg.augment.video_resize_max = a.at("video_resize").at(1).get<size_t>();
            } else {
                cfg.augment.video_resize_min = cfg.augment.out_size;
                cfg.augment.video_resize_max = std::max(
                    cfg.augment.out_size,
                    static_cast<size_t>(std::lround(cfg.augment.out_size * 320.0 / 224.0)));
            }
            cfg.augment.clip_seconds = a.value("clip_seconds", cfg.augment.clip_seconds);
            cfg.augment.fps = a.value("fps", cfg.augment.fps);
        } else {
            cfg.augment.video_resize_min = cfg.augment.out_size;
            cfg.augment.video_resize_max = std::max(
                cfg.augment.out_size,
                static_cast<size_t>(std::lround(cfg.augment.out_size * 320.0 / 224.0)));
        }
        cfg.augment.validate();
        if (cfg.augment.out_size != cfg.model.image_h || cfg.model.image_h != cfg.model.image_w)
            throw ConfigError("augment out_size must match the square model input size");

        if (j.contains("schedule")) {
            const json& s = j.at("schedule");
            cfg.schedule.iterations = s.value("iterations", cfg.schedule.iterations);
            cfg.schedule.batch_size = s.value("batch_size", cfg.schedule.batch_size);
            cfg.schedule.eval_every = s.value("eval_every", cfg.schedule.eval_every);
            cfg.schedule.seed = s.value("seed", cfg.schedule.seed);
        }
        if (cfg.schedule.batch_size == 0) throw ConfigError("batch_size must be positive");

        if (j.contains("io")) cfg.out_dir = j.at("io").value("out_dir", std::string());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json m{{"image_h", cfg.model.image_h},
           {"image_w", cfg.model.image_w},
           {"patch", cfg.model.patch},
           {"dim", cfg.model.dim},
           {"blocks", cfg.model.blocks},
           {"heads", cfg.model.heads},
           {"mlp_hidden", cfg.model.mlp_hidden},
           {"shift", cfg.model.shift_enabled ? "tokenshift" : "none"},
           {"shift_back", cfg.model.shift_back},
           {"shift_fwd", cfg.model.shift_fwd},
           {"dtype", cfg.model.dtype == DType::f32 ? "f32" : "f64"}};
    json r{{"mode", regime_mode_name(cfg.regime.mode)},
           {"all", optimizer_to_json(cfg.regime.all)},
           {"domain",
            {{"image", optimizer_to_json(cfg.regime.domain_image)},
             {"video", optimizer_to_json(cfg.regime.domain_video)}}}};
    json each = json::array();
    for (const auto& e : cfg.regime.each) each.push_back(optimizer_to_json(e));
    r["each"] = each;
    json w{{"kind", weight_kind_name(cfg.weighter.kind)},
           {"gamma", cfg.weighter.gamma},
           {"temperature", cfg.weighter.temperature},
           {"window", cfg.weighter.window}};
    json a{{"out_size", cfg.augment.out_size},
           {"area", {cfg.augment.area_min, cfg.augment.area_max}},
           {"aspect", {cfg.augment.aspect_min, cfg.augment.aspect_max}},
           {"hflip", cfg.augment.hflip_prob},
           {"video_resize", {cfg.augment.video_resize_min, cfg.augment.video_resize_max}},
           {"clip_seconds", cfg.augment.clip_seconds},
           {"fps", cfg.augment.fps}};
    json s{{"iterations", cfg.schedule.iterations},
           {"batch_size", cfg.schedule.batch_size},
           {"eval_every", cfg.schedule.eval_every},
           {"seed", cfg.schedule.seed}};
    return json{{"model", m},
                {"datasets", cfg.dataset_dirs},
                {"regime", r},
                {"weighter", w},
                {"augment", a},
                {"schedule", s},
                {"io", {{"out_dir", cfg.out_dir}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace ivf
