#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdlab/adversarial.hpp"
#include "hdlab/pipeline.hpp"

namespace hdlab {

// Capacity sweep: per (size, seed), a flow-matching teacher evaluated with a
// multi-step sampler against the one-step distilled student, on the shared
// probe set. Budgets default to a grid that finishes on a small CPU box; raise
// them from the CLI for longer runs.
struct SweepSettings {
    std::vector<std::string> sizes = {"S", "B", "L", "XL", "XXL", "XXXL"};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int batch = 128;
    long teacher_iters = 3000;
    long td_iters = 4000;
    int sample_steps = 50;
    int probe_n = 4096;
    int jobs = 2;
};

struct SweepCell {
    std::string size;
    std::uint64_t seed = 0;
    double teacher_distance = 0.0;
    double student_distance = 0.0;
};

struct SweepResult {
    std::vector<std::string> sizes;
    std::vector<SweepCell> cells;  // ordered by (size, seed)
    std::vector<double> teacher_medians;
    std::vector<double> student_medians;
    std::vector<std::size_t> param_counts;
};

SweepResult size_sweep(const SweepSettings& settings);

void write_sweep_csv(const SweepResult& result, const std::string& path);
// Long format for capacity-trend plots: size,params,seed,role,distance.
void write_sweep_long_csv(const SweepResult& result, const std::string& path);
void write_sweep_summary(const SweepResult& result, const std::string& path);

// Ablation arms over the stage grid at a fixed size.
enum class AblationArm { TdOnly, DmdOnly, DmdGap, TdDmd, TdDmdGap, TdDmdAwd };
const char* arm_name(AblationArm arm);
const std::vector<AblationArm>& all_arms();

struct AblationSettings {
    std::string size = "XL";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int batch = 128;
    long teacher_iters = 3000;
    long td_iters = 4000;
    long stage2_iters = 1500;
    LossWeights weights;
    double gen_lr = 0.0;     // 0 derives size learning rate / 10
    double branch_lr = 0.0;  // 0 derives 5x the generator rate
    int sample_steps = 50;
    int probe_n = 4096;
    int jobs = 2;
};

struct AblationResult {
    std::vector<std::string> arms;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> distances;  // [arm][seed]
    std::vector<double> medians;                 // per arm
};

AblationResult ablation_grid(const AblationSettings& settings);

void write_ablation_csv(const AblationResult& result, const std::string& path);
void write_ablation_summary(const AblationResult& result, const std::string& path);

}  // namespace hdlab
