#include "hdlab/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hdlab/checkpoint.hpp"
#include "hdlab/dataset.hpp"
#include "hdlab/flow.hpp"
#include "hdlab/io.hpp"
#include "hdlab/metrics.hpp"

namespace hdlab {

const char* disc_kind_name(DiscKind kind) {
    switch (kind) {
        case DiscKind::Off: return "off";
        case DiscKind::Gap: return "gap";
        case DiscKind::Awd: return "awd";
    }
    return "off";
}

DiscKind disc_kind_from(const std::string& name) {
    if (name == "off") return DiscKind::Off;
    if (name == "gap") return DiscKind::Gap;
    if (name == "awd") return DiscKind::Awd;
    throw std::invalid_argument("unknown discriminator kind '" + name + "'");
}

std::string ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["size"] = size;
    j["seed"] = seed;
    j["stages"] = {{"teacher", stages.teacher}, {"td", stages.td}, {"dmd", stages.dmd}};
    j["disc"] = disc_kind_name(disc);
    j["batch"] = batch;
    j["teacher_iters"] = teacher_iters;
    j["td_iters"] = td_iters;
    j["stage2_iters"] = stage2_iters;
    j["sample_steps"] = sample_steps;
    j["cfg_scale"] = cfg_scale;
    j["conditional"] = conditional;
    j["lambda1"] = weights.lambda1;
    j["lambda2"] = weights.lambda2;
    j["lambda3"] = weights.lambda3;
    j["r_neq_t_ratio"] = r_neq_t_ratio;
    j["stage2_gen_lr"] = stage2_gen_lr;
    j["stage2_branch_lr"] = stage2_branch_lr;
    j["fake_steps_per_gen"] = fake_steps_per_gen;
    j["probe_every"] = probe_every;
    j["probe_n"] = probe_n;
    j["teacher_checkpoint"] = teacher_checkpoint;
    j["init_student_from_teacher"] = init_student_from_teacher;
    j["measure_grad_variance"] = measure_grad_variance;
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("cannot parse experiment config: ") + e.what());
    }
    ExperimentConfig c;
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("run_id", c.run_id);
    get("size", c.size);
    get("seed", c.seed);
    if (j.contains("stages")) {
        const auto& s = j.at("stages");
        c.stages.teacher = s.value("teacher", c.stages.teacher);
        c.stages.td = s.value("td", c.stages.td);
        c.stages.dmd = s.value("dmd", c.stages.dmd);
    }
    if (j.contains("disc")) c.disc = disc_kind_from(j.at("disc").get<std::string>());
    get("batch", c.batch);
    get("teacher_iters", c.teacher_iters);
    get("td_iters", c.td_iters);
    get("stage2_iters", c.stage2_iters);
    get("sample_steps", c.sample_steps);
    get("cfg_scale", c.cfg_scale);
    get("conditional", c.conditional);
    get("lambda1", c.weights.lambda1);
    get("lambda2", c.weights.lambda2);
    get("lambda3", c.weights.lambda3);
    get("r_neq_t_ratio", c.r_neq_t_ratio);
    get("stage2_gen_lr", c.stage2_gen_lr);
    get("stage2_branch_lr", c.stage2_branch_lr);
    get("fake_steps_per_gen", c.fake_steps_per_gen);
    get("probe_every", c.probe_every);
    get("probe_n", c.probe_n);
    get("teacher_checkpoint", c.teacher_checkpoint);
    get("init_student_from_teacher", c.init_student_from_teacher);
    get("measure_grad_variance", c.measure_grad_variance);
    return c;
}

std::string ExperimentConfig::hash() const {
    char hex[19];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json())));
    return hex;
}

double ExperimentConfig::gen_lr() const {
    if (stage2_gen_lr > 0.0) return stage2_gen_lr;
    return SizeConfig::preset(size).learning_rate * 0.1;
}

double ExperimentConfig::branch_lr() const {
    if (stage2_branch_lr > 0.0) return stage2_branch_lr;
    return gen_lr() * 5.0;
}

namespace {

std::vector<Tensor> snapshot_params(const VelocityNet& net) {
    std::vector<Tensor> out;
    out.reserve(net.params().size());
    for (const auto& np : net.params()) out.push_back(np.value);
    return out;
}

void restore_params(VelocityNet& net, const std::vector<Tensor>& snapshot) {
    for (std::size_t i = 0; i < snapshot.size(); ++i) net.params()[i].value = snapshot[i];
}

std::vector<Tensor> extract_param_grads(const ad::Graph& g,
                                        const std::vector<ad::ValueId>& param_leaves,
                                        std::vector<Tensor>& grads) {
    std::vector<Tensor> out(param_leaves.size());
    for (std::size_t i = 0; i < param_leaves.size(); ++i) {
        const int leaf_index = g.node(param_leaves[i]).leaf_index;
        out[i] = std::move(grads[static_cast<std::size_t>(leaf_index)]);
    }
    return out;
}

}  // namespace

ExperimentRecord train_teacher(VelocityNet& teacher, std::uint64_t master_seed,
                               const TeacherSettings& settings) {
    if (settings.conditional && !teacher.cond().c) {
        throw std::invalid_argument("train_teacher: conditional run needs a class-aware teacher");
    }
    ExperimentRecord record;
    record.run_id = "teacher";
    record.seed = master_seed;

    const auto batch = static_cast<std::size_t>(settings.batch);
    FmLossGraph lg = build_fm_loss_graph(teacher, batch);
    Adam adam(settings.adam);
    Rng data_rng = make_stream(master_seed, "fm.data");
    Rng t_rng = make_stream(master_seed, "fm.t");
    Rng drop_rng = make_stream(master_seed, "fm.drop");

    const Tensor probe = probe_prior(static_cast<std::size_t>(settings.probe_n));
    std::vector<int> probe_labels;
    if (settings.conditional) {
        Rng probe_cls = make_stream(kProbeSeed, "probe.class");
        probe_labels.resize(probe.rows());
        for (int& c : probe_labels) c = probe_cls.uniform_int(0, teacher.num_classes() - 1);
    }
    auto probe_distance = [&]() {
        VFn v = settings.conditional ? cfg_velocity_fn(teacher, 0.0, probe_labels)
                                     : velocity_fn(teacher);
        return mean_circle_distance(euler_sample(v, probe, settings.sample_steps).x0);
    };

    std::vector<Tensor> bindings(lg.graph.leaf_count());
    std::vector<Tensor> last_good = snapshot_params(teacher);
    for (long iter = 1; iter <= settings.iters; ++iter) {
        Tensor x0;
        std::vector<int> labels;
        if (settings.conditional) {
            auto [data, lab] = ToyDataset::sample_target_classed(data_rng, batch);
            x0 = std::move(data);
            labels = std::move(lab);
            for (int& c : labels) {
                if (drop_rng.bernoulli(settings.cond_drop_prob)) c = VelocityNet::kNullClass;
            }
        } else {
            x0 = ToyDataset::sample_target(data_rng, batch);
        }
        Tensor x1 = ToyDataset::sample_prior(data_rng, batch);
        Tensor t_col = random_uniform(t_rng, batch, 1, 0.0, 1.0);
        Tensor x_t = interpolate(x0, x1, t_col);
        Tensor target = sub(x1, x0);

        ad::set_leaf(bindings, lg.graph, lg.x_t, x_t);
        ad::set_leaf(bindings, lg.graph, lg.t, t_col);
        ad::set_leaf(bindings, lg.graph, lg.target, target);
        if (settings.conditional) {
            ad::set_leaf(bindings, lg.graph, lg.class_onehot, teacher.class_onehot(labels));
        }
        for (std::size_t i = 0; i < teacher.params().size(); ++i) {
            ad::set_leaf(bindings, lg.graph, lg.param_leaves[i], teacher.params()[i].value);
        }

        ad::Evaluation ev = ad::forward(lg.graph, bindings);
        const double loss = ev.at(lg.loss).value();
        if (!std::isfinite(loss)) {
            restore_params(teacher, last_good);
            throw DivergenceError("teacher: loss became non-finite at iteration " +
                                      std::to_string(iter),
                                  iter);
        }
        std::vector<Tensor> grads = ad::backward(lg.graph, ev, lg.loss, Tensor::scalar(1.0));
        std::vector<Tensor> pgrads = extract_param_grads(lg.graph, lg.param_leaves, grads);
        adam.step(teacher.params(), pgrads);

        MetricRow row;
        row.stage = "teacher";
        row.iteration = iter;
        row.loss = loss;
        if (settings.probe_every > 0 &&
            (iter % settings.probe_every == 0 || iter == settings.iters)) {
            row.circle_distance = probe_distance();
            last_good = snapshot_params(teacher);
        }
        record.add_row(std::move(row));
    }
    record.summary()["teacher_final_distance"] = probe_distance();
    return record;
}

Stage2Result refine_stage2(VelocityNet& generator, const VelocityNet& teacher,
                           std::uint64_t master_seed, const Stage2Settings& settings) {
    if (generator.cond().c) {
        throw std::invalid_argument("refine_stage2: conditional generators are not supported");
    }
    settings.weights.validate();

    Stage2Result result;
    result.record.run_id = "stage2";
    result.record.seed = master_seed;
    result.branches = ScoreBranches::init(teacher);
    FeatureExtractor extractor = FeatureExtractor::all_blocks(teacher);
    if (settings.disc != DiscKind::Off) {
        result.head = DiscriminatorHead::build(
            settings.disc == DiscKind::Awd ? HeadVariant::Awd : HeadVariant::Gap,
            teacher.hidden_dim(), derive_seed(master_seed, "s2.head"));
    }
    DiscriminatorHead* head = result.head ? &*result.head : nullptr;

    const auto batch = static_cast<std::size_t>(settings.batch);
    Adam adam_gen({settings.gen_lr, 0.9, 0.95, 1e-8});
    Adam adam_disc({settings.branch_lr, 0.9, 0.95, 1e-8});
    FakeBranchTrainer fake_trainer(result.branches.fake, settings.batch,
                                   {settings.branch_lr, 0.9, 0.95, 1e-8});

    Rng x1_rng = make_stream(master_seed, "s2.x1");
    Rng dmd_t_rng = make_stream(master_seed, "s2.dmd.t");
    Rng dmd_noise_rng = make_stream(master_seed, "s2.dmd.noise");
    Rng adv_t_rng = make_stream(master_seed, "s2.adv.t");
    Rng adv_noise_rng = make_stream(master_seed, "s2.adv.noise");
    Rng fake_gen_rng = make_stream(master_seed, "s2.fake.gen");
    Rng fake_x1_rng = make_stream(master_seed, "s2.fake.x1");
    Rng fake_t_rng = make_stream(master_seed, "s2.fake.t");
    Rng disc_gen_rng = make_stream(master_seed, "s2.disc.gen");
    Rng disc_real_rng = make_stream(master_seed, "s2.disc.real");
    Rng disc_noise_rng = make_stream(master_seed, "s2.disc.noise");
    Rng disc_t_rng = make_stream(master_seed, "s2.disc.t");

    const Tensor probe = probe_prior(static_cast<std::size_t>(settings.probe_n));
    auto probe_distance = [&]() {
        return mean_circle_distance(one_step_sample(generator, probe));
    };
    result.record.summary()["s2_initial_distance"] = probe_distance();

    // With no head attached the generator record is static; with a head it is
    // rebuilt per iteration so the frozen scorer tracks the trained
    // discriminator and its current spectral estimate.
    Stage2GenGraph static_graph;
    if (head == nullptr) {
        static_graph = build_stage2_gen_graph(generator, extractor, nullptr, batch,
                                              settings.weights);
    }

    long clamped_total = 0;
    std::vector<Tensor> last_good = snapshot_params(generator);

    for (long iter = 1; iter <= settings.iters; ++iter) {
        // Generator update against frozen branches and scorer.
        Tensor x1 = ToyDataset::sample_prior(x1_rng, batch);
        Tensor x0hat = one_step_sample(generator, x1);
        Tensor t_dmd = random_uniform(dmd_t_rng, batch, 1, 0.02, 0.98);
        Tensor noise_dmd = ToyDataset::sample_prior(dmd_noise_rng, batch);
        DmdGrad dgrad = dmd_grad(result.branches, x0hat, t_dmd, noise_dmd);
        clamped_total += dgrad.clamped;

        Stage2GenGraph rebuilt;
        Stage2GenGraph* gg = &static_graph;
        if (head != nullptr) {
            rebuilt = build_stage2_gen_graph(generator, extractor, head, batch,
                                             settings.weights);
            gg = &rebuilt;
        }
        std::vector<Tensor> bindings(gg->graph.leaf_count());
        ad::set_leaf(bindings, gg->graph, gg->x1, x1);
        ad::set_leaf(bindings, gg->graph, gg->grad, dgrad.grad);
        if (head != nullptr) {
            ad::set_leaf(bindings, gg->graph, gg->adv_t,
                         random_uniform(adv_t_rng, batch, 1, 0.02, 0.98));
            ad::set_leaf(bindings, gg->graph, gg->adv_noise,
                         ToyDataset::sample_prior(adv_noise_rng, batch));
        }
        for (std::size_t i = 0; i < generator.params().size(); ++i) {
            ad::set_leaf(bindings, gg->graph, gg->param_leaves[i], generator.params()[i].value);
        }
        ad::Evaluation ev = ad::forward(gg->graph, bindings);
        const double total = ev.at(gg->total).value();
        const double loss_dmd = ev.at(gg->dmd_loss).value();
        const double loss_adv_g = head ? ev.at(gg->adv_loss).value() : kUnset;
        if (!std::isfinite(total)) {
            restore_params(generator, last_good);
            throw DivergenceError("stage2: generator objective became non-finite at iteration " +
                                      std::to_string(iter),
                                  iter);
        }
        std::vector<Tensor> grads = ad::backward(gg->graph, ev, gg->total, Tensor::scalar(1.0));
        std::vector<Tensor> pgrads = extract_param_grads(gg->graph, gg->param_leaves, grads);
        adam_gen.step(generator.params(), pgrads);

        // Fake-branch updates against the frozen generator.
        double fake_loss = kUnset;
        for (int k = 0; k < settings.fake_steps_per_gen; ++k) {
            Tensor gen_x0 = one_step_sample(generator, ToyDataset::sample_prior(fake_gen_rng, batch));
            Tensor x1f = ToyDataset::sample_prior(fake_x1_rng, batch);
            Tensor tf = random_uniform(fake_t_rng, batch, 1, 0.0, 1.0);
            fake_loss = fake_trainer.step(gen_x0, x1f, tf);
        }

        // Discriminator update against the frozen generator.
        double loss_adv_d = kUnset, disc_real = kUnset, disc_fake = kUnset, entropy = kUnset;
        if (head != nullptr) {
            Tensor gen_x0 = one_step_sample(generator, ToyDataset::sample_prior(disc_gen_rng, batch));
            Tensor real_x0 = ToyDataset::sample_target(disc_real_rng, batch);
            Tensor t_d = random_uniform(disc_t_rng, batch, 1, 0.02, 0.98);
            Tensor noise_r = ToyDataset::sample_prior(disc_noise_rng, batch);
            Tensor noise_f = ToyDataset::sample_prior(disc_noise_rng, batch);
            DiscLossGraph dg = build_disc_loss_graph(*head, extractor, batch,
                                                     settings.weights.lambda3);
            std::vector<Tensor> dbind(dg.graph.leaf_count());
            ad::set_leaf(dbind, dg.graph, dg.real_xt, interpolate(real_x0, noise_r, t_d));
            ad::set_leaf(dbind, dg.graph, dg.fake_xt, interpolate(gen_x0, noise_f, t_d));
            ad::set_leaf(dbind, dg.graph, dg.t, t_d);
            for (std::size_t i = 0; i < head->params().size(); ++i) {
                ad::set_leaf(dbind, dg.graph, dg.param_leaves[i], head->params()[i].value);
            }
            ad::Evaluation dev = ad::forward(dg.graph, dbind);
            loss_adv_d = dev.at(dg.hinge).value();
            disc_real = dev.at(dg.real_score_mean).value();
            disc_fake = dev.at(dg.fake_score_mean).value();
            double ent = 0.0;
            for (std::size_t j = 0; j < dg.fake_weights.size(); ++j) {
                const Tensor& w = dev.at(dg.fake_weights[j]);
                for (std::size_t i = 0; i < w.numel(); ++i) {
                    if (w[i] > 0.0) ent -= w[i] * std::log(w[i]);
                }
            }
            entropy = ent / static_cast<double>(batch);
            if (!std::isfinite(loss_adv_d)) {
                restore_params(generator, last_good);
                throw DivergenceError("stage2: hinge loss became non-finite at iteration " +
                                          std::to_string(iter),
                                      iter);
            }
            std::vector<Tensor> dgrads =
                ad::backward(dg.graph, dev, dg.loss, Tensor::scalar(1.0));
            std::vector<Tensor> hgrads = extract_param_grads(dg.graph, dg.param_leaves, dgrads);
            adam_disc.step(head->params(), hgrads);
        }

        MetricRow row;
        row.stage = "stage2";
        row.iteration = iter;
        row.loss = total;
        row.loss_dmd = loss_dmd;
        row.loss_adv_g = loss_adv_g;
        row.loss_adv_d = loss_adv_d;
        row.disc_real = disc_real;
        row.disc_fake = disc_fake;
        row.awd_entropy = entropy;
        row.clamped = dgrad.clamped;
        (void)fake_loss;
        if (settings.probe_every > 0 &&
            (iter % settings.probe_every == 0 || iter == settings.iters)) {
            row.circle_distance = probe_distance();
            last_good = snapshot_params(generator);
        }
        result.record.add_row(std::move(row));
    }

    result.record.summary()["s2_final_distance"] = probe_distance();
    result.record.summary()["s2_clamped_total"] = static_cast<double>(clamped_total);
    result.record.summary()["s2_real_branch_unchanged"] =
        result.branches.real_unchanged() ? 1.0 : 0.0;
    return result;
}

void copy_matching_params(const VelocityNet& source, VelocityNet& dest) {
    for (auto& np : dest.params()) {
        for (const auto& sp : source.params()) {
            if (sp.name == np.name && sp.value.numel() == np.value.numel() &&
                sp.value.same_shape(np.value)) {
                np.value = sp.value;
                break;
            }
        }
    }
}

PipelineResult run_pipeline(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_directory(out_dir);
    const SizeConfig size = SizeConfig::preset(config.size);
    PipelineResult result;
    result.record.run_id = config.run_id;
    result.record.seed = config.seed;
    result.record.config_hash = config.hash();

    auto merge = [&](const ExperimentRecord& part) {
        for (const MetricRow& row : part.rows()) result.record.add_row(row);
        for (const auto& [k, v] : part.summary()) result.record.summary()[k] = v;
    };
    auto finish = [&]() {
        result.record.write_csv(out_dir + "/metrics.csv");
        result.record.write_summary(out_dir + "/summary.json");
        write_text_file(out_dir + "/config.json", config.to_json());
        return result;
    };

    const Tensor full_probe = probe_prior(static_cast<std::size_t>(config.probe_n));

    // Teacher stage: train or load.
    VelocityNet teacher = VelocityNet::build(size, CondSet{true, false, config.conditional},
                                             derive_seed(config.seed, "teacher.init"));
    std::optional<VelocityNet> student;
    try {
        if (config.stages.teacher) {
            TeacherSettings ts;
            ts.iters = config.teacher_iters;
            ts.batch = config.batch;
            ts.adam.lr = size.learning_rate;
            ts.sample_steps = config.sample_steps;
            ts.conditional = config.conditional;
            merge(train_teacher(teacher, config.seed, ts));
            result.teacher_path = out_dir + "/teacher.json";
            save_net(teacher, result.teacher_path);
        } else {
            if (config.teacher_checkpoint.empty()) {
                throw std::invalid_argument(
                    "run_pipeline: TD/DMD stages need a teacher checkpoint when the teacher "
                    "stage is disabled");
            }
            teacher = load_net(config.teacher_checkpoint);
            result.teacher_path = config.teacher_checkpoint;
        }
        VFn teacher_v = config.conditional
                            ? cfg_velocity_fn(teacher, 0.0, std::vector<int>(full_probe.rows(), 0))
                            : velocity_fn(teacher);
        result.record.summary()["teacher_50step_distance"] =
            mean_circle_distance(euler_sample(teacher_v, full_probe, config.sample_steps).x0);

        // Student: fresh by default, optionally warmed from the teacher.
        student = VelocityNet::build(size, CondSet{true, true, config.conditional},
                                     derive_seed(config.seed, "student.init"));
        if (config.init_student_from_teacher) copy_matching_params(teacher, *student);

        if (config.stages.td) {
            MFConfig mf;
            mf.r_neq_t_ratio = config.r_neq_t_ratio;
            mf.source = VelocitySource::TeacherCfg;
            mf.cfg_scale = config.cfg_scale;
            mf.conditional = config.conditional;
            DistillSettings ds;
            ds.iters = config.td_iters;
            ds.batch = config.batch;
            ds.adam.lr = size.learning_rate;
            ds.probe_every = config.probe_every;
            ds.probe_n = config.probe_n;
            merge(distill_stage1(*student, &teacher, config.seed, mf, ds, config.run_id));
            result.student_td_path = out_dir + "/student_td.json";
            save_net(*student, result.student_td_path);

            if (config.measure_grad_variance) {
                MFConfig scratch = mf;
                scratch.source = VelocitySource::GroundTruth;
                scratch.conditional = false;
                scratch.cfg_scale = 0.0;
                MFConfig distilled = scratch;
                distilled.source = VelocitySource::TeacherCfg;
                if (!config.conditional) {
                    result.record.summary()["grad_variance_scratch"] = mf_gradient_variance(
                        *student, nullptr, config.seed, scratch, config.batch, 16);
                    result.record.summary()["grad_variance_distilled"] = mf_gradient_variance(
                        *student, &teacher, config.seed, distilled, config.batch, 16);
                }
            }
        }

        if (config.stages.dmd) {
            if (config.conditional) {
                throw std::invalid_argument("run_pipeline: stage 2 runs unconditionally");
            }
            Stage2Settings s2;
            s2.iters = config.stage2_iters;
            s2.batch = config.batch;
            s2.disc = config.disc;
            s2.weights = config.weights;
            s2.gen_lr = config.gen_lr();
            s2.branch_lr = config.branch_lr();
            s2.fake_steps_per_gen = config.fake_steps_per_gen;
            s2.probe_every = config.probe_every;
            s2.probe_n = config.probe_n;
            Stage2Result s2res = refine_stage2(*student, teacher, config.seed, s2);
            merge(s2res.record);
            Stage2Checkpoint ckpt{*student, s2res.branches.fake, result.teacher_path,
                                  s2res.branches.real_checksum};
            result.stage2_path = out_dir + "/stage2.json";
            save_stage2(ckpt, result.stage2_path);
        }

        if (config.stages.td || config.stages.dmd) {
            if (config.conditional) {
                Rng probe_cls = make_stream(kProbeSeed, "probe.class");
                std::vector<int> labels(full_probe.rows());
                for (int& c : labels) c = probe_cls.uniform_int(0, student->num_classes() - 1);
                result.record.summary()["final_1step_distance"] =
                    mean_circle_distance(one_step_sample(*student, full_probe, &labels));
            } else {
                result.record.summary()["final_1step_distance"] =
                    mean_circle_distance(one_step_sample(*student, full_probe));
            }
        }
        result.record.summary()["aborted"] = 0.0;
    } catch (const DivergenceError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        result.record.summary()["aborted"] = 1.0;
        // Keep whatever stage checkpoints were already written; the trainers
        // restored their last good parameters before unwinding.
        save_net(teacher, out_dir + "/teacher_last_good.json");
        if (student) save_net(*student, out_dir + "/student_last_good.json");
        return finish();
    }
    return finish();
}

}  // namespace hdlab
