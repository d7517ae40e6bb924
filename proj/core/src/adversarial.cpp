#include "hdlab/adversarial.hpp"

#include <stdexcept>

#include "hdlab/flow.hpp"

namespace hdlab {

FeatureExtractor FeatureExtractor::all_blocks(const VelocityNet& teacher) {
    std::vector<int> blocks(static_cast<std::size_t>(teacher.depth()));
    for (int i = 0; i < teacher.depth(); ++i) blocks[static_cast<std::size_t>(i)] = i;
    return select(teacher, std::move(blocks));
}

FeatureExtractor FeatureExtractor::select(const VelocityNet& teacher, std::vector<int> blocks) {
    if (blocks.empty()) throw std::invalid_argument("FeatureExtractor: no blocks selected");
    for (int b : blocks) {
        if (b < 0 || b >= teacher.depth()) {
            throw std::invalid_argument("FeatureExtractor: block index out of range");
        }
    }
    FeatureExtractor fe;
    fe.teacher = &teacher;
    fe.blocks = std::move(blocks);
    return fe;
}

std::vector<Tensor> FeatureExtractor::extract(const Tensor& x, const Tensor& t_col,
                                              const std::vector<int>* labels) const {
    auto ev = teacher->eval_batch(x, t_col, nullptr, labels, /*want_hidden=*/true);
    std::vector<Tensor> tokens;
    tokens.reserve(blocks.size());
    for (int b : blocks) tokens.push_back(ev.hidden[static_cast<std::size_t>(b)]);
    return tokens;
}

std::vector<ad::ValueId> FeatureExtractor::emit(ad::Graph& g, ad::ValueId x, ad::ValueId t,
                                                std::optional<ad::ValueId> class_onehot) const {
    auto emitted =
        teacher->emit(g, x, t, std::nullopt, class_onehot, VelocityNet::Mode::Frozen);
    std::vector<ad::ValueId> tokens;
    tokens.reserve(blocks.size());
    for (int b : blocks) tokens.push_back(emitted.hidden[static_cast<std::size_t>(b)]);
    return tokens;
}

void LossWeights::validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) {
        throw std::invalid_argument("LossWeights: weights must be nonnegative");
    }
}

std::pair<double, double> stage2_total_loss(const LossWeights& weights, double dmd_loss,
                                            double adv_g, double adv_d) {
    weights.validate();
    return {weights.lambda1 * dmd_loss + weights.lambda2 * adv_g, weights.lambda3 * adv_d};
}

double adv_generator_loss(const DiscriminatorHead& head, const FeatureExtractor& extractor,
                          const Tensor& gen_x0, const Tensor& t_col, const Tensor& noise) {
    Tensor x_t = interpolate(gen_x0, noise, t_col);
    auto res = head.score_batch(extractor.extract(x_t, t_col));
    return -mean(res.score);
}

double adv_discriminator_loss(const DiscriminatorHead& head, const FeatureExtractor& extractor,
                              const Tensor& real_x0, const Tensor& noise_real,
                              const Tensor& fake_x0, const Tensor& noise_fake,
                              const Tensor& t_col) {
    Tensor real_xt = interpolate(real_x0, noise_real, t_col);
    Tensor fake_xt = interpolate(fake_x0, noise_fake, t_col);
    auto real = head.score_batch(extractor.extract(real_xt, t_col));
    auto fake = head.score_batch(extractor.extract(fake_xt, t_col));
    double loss = 0.0;
    const auto n = static_cast<double>(real.score.rows());
    for (std::size_t i = 0; i < real.score.rows(); ++i) {
        loss += std::max(0.0, 1.0 - real.score[i]);
        loss += std::max(0.0, 1.0 + fake.score[i]);
    }
    return loss / n;
}

Stage2GenGraph build_stage2_gen_graph(const VelocityNet& generator,
                                      const FeatureExtractor& extractor,
                                      const DiscriminatorHead* head, std::size_t batch,
                                      const LossWeights& weights) {
    weights.validate();
    Stage2GenGraph sg;
    auto& g = sg.graph;
    const auto d = static_cast<std::size_t>(generator.data_dim());

    sg.x1 = g.leaf({batch, d}, "x1");
    sg.grad = g.leaf({batch, d}, "grad");
    ad::ValueId r0 = g.constant(Tensor::zeros(batch, 1));
    ad::ValueId t1 = g.constant(Tensor::ones(batch, 1));
    auto emitted = generator.emit(g, sg.x1, t1, r0, std::nullopt, VelocityNet::Mode::Trainable);
    sg.param_leaves = emitted.param_leaves;
    sg.x0hat = g.sub(sg.x1, emitted.output);

    ad::ValueId dmd_target = g.stop_gradient(g.sub(sg.x0hat, sg.grad));
    sg.dmd_loss = g.scale(g.sum(g.square(g.sub(sg.x0hat, dmd_target))),
                          1.0 / static_cast<double>(batch));
    sg.total = g.scale(sg.dmd_loss, weights.lambda1);

    if (head != nullptr) {
        sg.adv_t = g.leaf({batch, 1}, "adv_t");
        sg.adv_noise = g.leaf({batch, d}, "adv_noise");
        // x_t = (1 - t) x0hat + t noise, kept inside the record so the score
        // gradient reaches the generator.
        ad::ValueId one_minus_t = g.sub(g.constant_scalar(1.0), sg.adv_t);
        ad::ValueId x_t =
            g.add(g.mul(one_minus_t, sg.x0hat), g.mul(sg.adv_t, sg.adv_noise));
        std::vector<ad::ValueId> tokens = extractor.emit(g, x_t, sg.adv_t);
        auto scored = head->emit(g, tokens, VelocityNet::Mode::Frozen);
        sg.adv_loss = g.neg(g.mean(scored.score));
        sg.total = g.add(sg.total, g.scale(sg.adv_loss, weights.lambda2));
    }
    return sg;
}

DiscLossGraph build_disc_loss_graph(const DiscriminatorHead& head,
                                    const FeatureExtractor& extractor, std::size_t batch,
                                    double lambda3) {
    if (lambda3 < 0.0) throw std::invalid_argument("build_disc_loss_graph: lambda3 < 0");
    DiscLossGraph dg;
    auto& g = dg.graph;
    const auto d = static_cast<std::size_t>(extractor.teacher->data_dim());

    dg.real_xt = g.leaf({batch, d}, "real_xt");
    dg.fake_xt = g.leaf({batch, d}, "fake_xt");
    dg.t = g.leaf({batch, 1}, "t");

    std::vector<ad::ValueId> real_tokens = extractor.emit(g, dg.real_xt, dg.t);
    std::vector<ad::ValueId> fake_tokens = extractor.emit(g, dg.fake_xt, dg.t);
    auto scored = head.emit_many(g, {real_tokens, fake_tokens}, VelocityNet::Mode::Trainable);
    dg.param_leaves = scored.param_leaves;
    dg.fake_weights = scored.weights[1];

    ad::ValueId real_score = scored.scores[0];
    ad::ValueId fake_score = scored.scores[1];
    dg.real_score_mean = g.mean(real_score);
    dg.fake_score_mean = g.mean(fake_score);
    ad::ValueId hinge_real = g.mean(g.relu(g.sub(g.constant_scalar(1.0), real_score)));
    ad::ValueId hinge_fake = g.mean(g.relu(g.add_scalar(fake_score, 1.0)));
    dg.hinge = g.add(hinge_real, hinge_fake);
    dg.loss = g.scale(dg.hinge, lambda3);
    return dg;
}

}  // namespace hdlab
