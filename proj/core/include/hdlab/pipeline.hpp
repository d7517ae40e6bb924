#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hdlab/adversarial.hpp"
#include "hdlab/dmd.hpp"
#include "hdlab/experiment.hpp"
#include "hdlab/meanflow.hpp"
#include "hdlab/nets.hpp"

namespace hdlab {

enum class DiscKind { Off, Gap, Awd };
const char* disc_kind_name(DiscKind kind);
DiscKind disc_kind_from(const std::string& name);

struct StageFlags {
    bool teacher = true;
    bool td = true;
    bool dmd = true;
};

// One experiment cell: which stages run, at which size and seed, and with
// which budgets and loss weights. Serializes to/from JSON for the CLI.
struct ExperimentConfig {
    std::string run_id = "run";
    std::string size = "XL";
    std::uint64_t seed = 1;
    StageFlags stages;
    DiscKind disc = DiscKind::Off;
    int batch = 128;
    long teacher_iters = 50000;
    long td_iters = 20000;
    long stage2_iters = 10000;
    int sample_steps = 50;
    double cfg_scale = 0.0;
    bool conditional = false;
    LossWeights weights;
    double r_neq_t_ratio = 1.0;
    double stage2_gen_lr = 0.0;     // 0 derives size learning rate / 10
    double stage2_branch_lr = 0.0;  // 0 derives 5x the generator rate
    int fake_steps_per_gen = 1;
    int probe_every = 250;
    int probe_n = 4096;
    std::string teacher_checkpoint;
    bool init_student_from_teacher = false;
    bool measure_grad_variance = false;

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    std::string hash() const;
    double gen_lr() const;
    double branch_lr() const;
};

// Flow-matching teacher training with a periodic multi-step probe.
struct TeacherSettings {
    long iters = 50000;
    int batch = 128;
    AdamConfig adam{};
    int probe_every = 500;
    int probe_n = 512;
    int sample_steps = 50;
    bool conditional = false;
    double cond_drop_prob = 0.1;  // null-condition fraction during training
};

ExperimentRecord train_teacher(VelocityNet& teacher, std::uint64_t master_seed,
                               const TeacherSettings& settings);

// Stage 2: distribution matching plus optional adversarial refinement.
struct Stage2Settings {
    long iters = 10000;
    int batch = 128;
    DiscKind disc = DiscKind::Off;
    LossWeights weights;
    double gen_lr = 1e-5;
    double branch_lr = 5e-5;
    int fake_steps_per_gen = 1;
    int probe_every = 250;
    int probe_n = 4096;
};

struct Stage2Result {
    ExperimentRecord record;
    ScoreBranches branches;
    std::optional<DiscriminatorHead> head;
};

Stage2Result refine_stage2(VelocityNet& generator, const VelocityNet& teacher,
                           std::uint64_t master_seed, const Stage2Settings& settings);

struct PipelineResult {
    ExperimentRecord record;
    std::string teacher_path;
    std::string student_td_path;
    std::string stage2_path;
    bool aborted = false;
    std::string abort_reason;
};

// Runs the enabled stages in order teacher -> TD -> DMD(+adversarial),
// writing per-stage checkpoints, metrics.csv, and summary.json under out_dir.
// A non-finite loss aborts the run but keeps the last good checkpoint.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::string& out_dir);

// Copies every identically named, identically shaped parameter.
void copy_matching_params(const VelocityNet& source, VelocityNet& dest);

}  // namespace hdlab
