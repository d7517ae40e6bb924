#include "hdlab/sweep.hpp"

#include <atomic>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "hdlab/dataset.hpp"
#include "hdlab/flow.hpp"
#include "hdlab/io.hpp"
#include "hdlab/metrics.hpp"

namespace hdlab {

namespace {

// Runs fn(i) for i in [0, n) across `jobs` worker threads. Results must be
// written into per-index slots so assembly stays deterministic.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct TrainedPair {
    VelocityNet teacher;
    VelocityNet student;
};

TrainedPair train_teacher_and_student(const SizeConfig& size, std::uint64_t master, int batch,
                                      long teacher_iters, long td_iters) {
    TrainedPair pair{
        VelocityNet::build(size, CondSet{true, false, false}, derive_seed(master, "teacher.init")),
        VelocityNet::build(size, CondSet{true, true, false}, derive_seed(master, "student.init"))};
    TeacherSettings ts;
    ts.iters = teacher_iters;
    ts.batch = batch;
    ts.adam.lr = size.learning_rate;
    ts.probe_every = 0;  // no tracked probes inside grid cells
    train_teacher(pair.teacher, master, ts);

    MFConfig mf;
    mf.source = VelocitySource::TeacherCfg;
    DistillSettings ds;
    ds.iters = td_iters;
    ds.batch = batch;
    ds.adam.lr = size.learning_rate;
    ds.probe_every = 0;
    distill_stage1(pair.student, &pair.teacher, master, mf, ds);
    return pair;
}

}  // namespace

SweepResult size_sweep(const SweepSettings& settings) {
    if (settings.sizes.size() < 2) throw std::invalid_argument("size_sweep: need >= 2 sizes");
    SweepResult result;
    result.sizes = settings.sizes;
    const std::size_t n_seeds = settings.seeds.size();
    result.cells.resize(settings.sizes.size() * n_seeds);
    const Tensor probe = probe_prior(static_cast<std::size_t>(settings.probe_n));

    parallel_for(result.cells.size(), settings.jobs, [&](std::size_t idx) {
        const std::size_t si = idx / n_seeds;
        const std::size_t ki = idx % n_seeds;
        const SizeConfig size = SizeConfig::preset(settings.sizes[si]);
        const std::uint64_t master =
            derive_seed(settings.seeds[ki], "sweep." + settings.sizes[si]);
        TrainedPair pair = train_teacher_and_student(size, master, settings.batch,
                                                     settings.teacher_iters, settings.td_iters);
        SweepCell cell;
        cell.size = settings.sizes[si];
        cell.seed = settings.seeds[ki];
        cell.teacher_distance = mean_circle_distance(
            euler_sample(velocity_fn(pair.teacher), probe, settings.sample_steps).x0);
        cell.student_distance = mean_circle_distance(one_step_sample(pair.student, probe));
        result.cells[idx] = std::move(cell);
    });

    for (std::size_t si = 0; si < settings.sizes.size(); ++si) {
        std::vector<double> tvals, svals;
        for (std::size_t ki = 0; ki < n_seeds; ++ki) {
            tvals.push_back(result.cells[si * n_seeds + ki].teacher_distance);
            svals.push_back(result.cells[si * n_seeds + ki].student_distance);
        }
        result.teacher_medians.push_back(median(tvals));
        result.student_medians.push_back(median(svals));
        result.param_counts.push_back(
            VelocityNet::build(SizeConfig::preset(settings.sizes[si]), CondSet{true, true, false},
                               0)
                .param_count());
    }
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::string csv = "size,seed,teacher_distance,student_distance\n";
    for (const SweepCell& c : result.cells) {
        csv += c.size + "," + std::to_string(c.seed) + "," + format_double(c.teacher_distance) +
               "," + format_double(c.student_distance) + "\n";
    }
    write_text_file(path, csv);
}

void write_sweep_long_csv(const SweepResult& result, const std::string& path) {
    std::string csv = "size,params,seed,role,distance\n";
    for (std::size_t si = 0; si < result.sizes.size(); ++si) {
        for (const SweepCell& c : result.cells) {
            if (c.size != result.sizes[si]) continue;
            const std::string prefix =
                c.size + "," + std::to_string(result.param_counts[si]) + "," +
                std::to_string(c.seed) + ",";
            csv += prefix + "teacher," + format_double(c.teacher_distance) + "\n";
            csv += prefix + "student," + format_double(c.student_distance) + "\n";
        }
    }
    write_text_file(path, csv);
}

void write_sweep_summary(const SweepResult& result, const std::string& path) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json sizes = nlohmann::ordered_json::array();
    for (std::size_t si = 0; si < result.sizes.size(); ++si) {
        sizes.push_back({{"size", result.sizes[si]},
                         {"params", result.param_counts[si]},
                         {"teacher_median", result.teacher_medians[si]},
                         {"student_median", result.student_medians[si]}});
    }
    j["sweep"] = std::move(sizes);
    write_text_file(path, j.dump(2) + "\n");
}

const char* arm_name(AblationArm arm) {
    switch (arm) {
        case AblationArm::TdOnly: return "td_only";
        case AblationArm::DmdOnly: return "dmd_only";
        case AblationArm::DmdGap: return "dmd_gap";
        case AblationArm::TdDmd: return "td_dmd";
        case AblationArm::TdDmdGap: return "td_dmd_gap";
        case AblationArm::TdDmdAwd: return "td_dmd_awd";
    }
    return "unknown";
}

const std::vector<AblationArm>& all_arms() {
    static const std::vector<AblationArm> kArms = {
        AblationArm::TdOnly,    AblationArm::DmdOnly,   AblationArm::DmdGap,
        AblationArm::TdDmd,     AblationArm::TdDmdGap,  AblationArm::TdDmdAwd,
    };
    return kArms;
}

AblationResult ablation_grid(const AblationSettings& settings) {
    const SizeConfig size = SizeConfig::preset(settings.size);
    const double gen_lr =
        settings.gen_lr > 0.0 ? settings.gen_lr : size.learning_rate * 0.1;
    const double branch_lr = settings.branch_lr > 0.0 ? settings.branch_lr : gen_lr * 5.0;

    AblationResult result;
    for (AblationArm arm : all_arms()) result.arms.emplace_back(arm_name(arm));
    result.seeds = settings.seeds;
    result.distances.assign(all_arms().size(),
                            std::vector<double>(settings.seeds.size(), 0.0));
    const Tensor probe = probe_prior(static_cast<std::size_t>(settings.probe_n));

    parallel_for(settings.seeds.size(), settings.jobs, [&](std::size_t ki) {
        const std::uint64_t master =
            derive_seed(settings.seeds[ki], "ablate." + settings.size);
        TrainedPair pair = train_teacher_and_student(size, master, settings.batch,
                                                     settings.teacher_iters, settings.td_iters);
        const VelocityNet fresh = VelocityNet::build(size, CondSet{true, true, false},
                                                     derive_seed(master, "student.init"));

        auto run_arm = [&](const VelocityNet& init, DiscKind disc) {
            VelocityNet gen = init;
            Stage2Settings s2;
            s2.iters = settings.stage2_iters;
            s2.batch = settings.batch;
            s2.disc = disc;
            s2.weights = settings.weights;
            s2.gen_lr = gen_lr;
            s2.branch_lr = branch_lr;
            s2.probe_every = 0;
            refine_stage2(gen, pair.teacher, master, s2);
            return mean_circle_distance(one_step_sample(gen, probe));
        };

        for (std::size_t ai = 0; ai < all_arms().size(); ++ai) {
            switch (all_arms()[ai]) {
                case AblationArm::TdOnly:
                    result.distances[ai][ki] =
                        mean_circle_distance(one_step_sample(pair.student, probe));
                    break;
                case AblationArm::DmdOnly:
                    result.distances[ai][ki] = run_arm(fresh, DiscKind::Off);
                    break;
                case AblationArm::DmdGap:
                    result.distances[ai][ki] = run_arm(fresh, DiscKind::Gap);
                    break;
                case AblationArm::TdDmd:
                    result.distances[ai][ki] = run_arm(pair.student, DiscKind::Off);
                    break;
                case AblationArm::TdDmdGap:
                    result.distances[ai][ki] = run_arm(pair.student, DiscKind::Gap);
                    break;
                case AblationArm::TdDmdAwd:
                    result.distances[ai][ki] = run_arm(pair.student, DiscKind::Awd);
                    break;
            }
        }
    });

    for (const auto& per_arm : result.distances) result.medians.push_back(median(per_arm));
    return result;
}

void write_ablation_csv(const AblationResult& result, const std::string& path) {
    std::string csv = "arm,seed,distance\n";
    for (std::size_t ai = 0; ai < result.arms.size(); ++ai) {
        for (std::size_t ki = 0; ki < result.seeds.size(); ++ki) {
            csv += result.arms[ai] + "," + std::to_string(result.seeds[ki]) + "," +
                   format_double(result.distances[ai][ki]) + "\n";
        }
    }
    write_text_file(path, csv);
}

void write_ablation_summary(const AblationResult& result, const std::string& path) {
    nlohmann::ordered_json arms = nlohmann::ordered_json::array();
    for (std::size_t ai = 0; ai < result.arms.size(); ++ai) {
        arms.push_back({{"arm", result.arms[ai]}, {"median", result.medians[ai]}});
    }
    nlohmann::ordered_json j;
    j["ablation"] = std::move(arms);
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace hdlab
