#pragma once

#include <filesystem>
#include <optional>

#include "ivf/run_config.hpp"
#include "ivf/train.hpp"

namespace ivf {

/// Exclusive lock on a run's output directory, released on destruction.
class DirLock {
  public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::filesystem::path file_;
};

DatasetSpec cmd_synth(const SynthParams& params, const std::filesystem::path& out_dir);

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;       // JSONL, one record per dataset per iteration
    std::filesystem::path eval_metrics;  // JSONL, periodic validation results
    std::filesystem::path resolved_config;
};

TrainOutputs cmd_train(const RunConfig& cfg);

EvalResult cmd_eval(const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset_dir, Split split, size_t head_id,
                    size_t batch_size);

struct GradcheckReport {
    double max_rel_err = 0;
    double tolerance = 1e-4;
    bool pass = false;
};

/// Finite-difference check of the full model gradient on a tiny config
/// (D=16, L=2, N=4, T=3) at f64, h=1e-5. `sabotage` corrupts the MSA query
/// backward on purpose so the check's sensitivity can be demonstrated.
GradcheckReport cmd_gradcheck(bool shift_enabled, bool sabotage, double tolerance = 1e-4);

/// Splits a metrics JSONL file into one CSV per dataset
/// (columns iteration,loss,w,top1,top5).
std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& metrics,
                                              const std::filesystem::path& out_dir);

nlohmann::json metrics_to_json(const MetricsRecord& r);

}  // namespace ivf
