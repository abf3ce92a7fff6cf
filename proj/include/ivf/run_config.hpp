#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivf/data.hpp"
#include "ivf/optim.hpp"
#include "ivf/vit.hpp"
#include "ivf/weighting.hpp"

namespace ivf {

struct ScheduleConfig {
    uint64_t iterations = 1000;
    size_t batch_size = 6;
    size_t eval_every = 0;  // 0 disables periodic eval
    uint64_t seed = 0;
};

struct RegimeConfig {
    enum class Mode { all, domain, each };
    Mode mode = Mode::all;
    OptimizerConfig all;
    OptimizerConfig domain_image, domain_video;
    std::vector<OptimizerConfig> each;

    /// One optimizer config per dataset, by mode: all -> shared, domain ->
    /// per modality, each -> positional (arity must match).
    std::vector<OptimizerConfig> resolve(const std::vector<DatasetSpec>& specs) const;
};

const char* regime_mode_name(RegimeConfig::Mode m);
RegimeConfig::Mode regime_mode_from(const std::string& s);

struct RunConfig {
    ViTConfig model;  // head_classes resolved from the datasets at load time
    std::vector<std::string> dataset_dirs;
    RegimeConfig regime;
    WeighterConfig weighter;
    AugmentConfig augment;
    ScheduleConfig schedule;
    std::string out_dir;
};

/// Canonical serialization: parse(dump(parse(x))) == parse(x).
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ivf
