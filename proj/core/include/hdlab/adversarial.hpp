#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "hdlab/nets.hpp"
#include "hdlab/tensor.hpp"

namespace hdlab {

// Reads the frozen teacher's residual-block activations as feature tokens.
// With a depth-L teacher and all blocks selected, an input yields L tokens of
// the hidden width each.
struct FeatureExtractor {
    const VelocityNet* teacher = nullptr;
    std::vector<int> blocks;

    static FeatureExtractor all_blocks(const VelocityNet& teacher);
    static FeatureExtractor select(const VelocityNet& teacher, std::vector<int> blocks);

    std::vector<Tensor> extract(const Tensor& x, const Tensor& t_col,
                                const std::vector<int>* labels = nullptr) const;
    std::vector<ad::ValueId> emit(ad::Graph& g, ad::ValueId x, ad::ValueId t,
                                  std::optional<ad::ValueId> class_onehot = {}) const;
};

struct LossWeights {
    double lambda1 = 1.0;   // distribution matching
    double lambda2 = 0.05;  // adversarial, generator side
    double lambda3 = 0.01;  // adversarial, discriminator side
    void validate() const;
};

// (generator objective, discriminator objective) =
// (lambda1 * dmd + lambda2 * adv_g, lambda3 * adv_d).
std::pair<double, double> stage2_total_loss(const LossWeights& weights, double dmd_loss,
                                            double adv_g, double adv_d);

// Value forms over an already generated batch; the head and extractor are
// treated as frozen.
double adv_generator_loss(const DiscriminatorHead& head, const FeatureExtractor& extractor,
                          const Tensor& gen_x0, const Tensor& t_col, const Tensor& noise);
double adv_discriminator_loss(const DiscriminatorHead& head, const FeatureExtractor& extractor,
                              const Tensor& real_x0, const Tensor& noise_real,
                              const Tensor& fake_x0, const Tensor& noise_fake,
                              const Tensor& t_col);

// Generator-update record: one-step generation, the stop-gradient DMD loss,
// and optionally the adversarial score term, combined as
// lambda1 * L_dmd + lambda2 * L_adv_g.
struct Stage2GenGraph {
    ad::Graph graph;
    ad::ValueId total = -1;
    ad::ValueId dmd_loss = -1;
    ad::ValueId adv_loss = -1;  // -1 when no head is attached
    ad::ValueId x0hat = -1;
    ad::ValueId x1 = -1;
    ad::ValueId grad = -1;
    ad::ValueId adv_t = -1;      // -1 when no head
    ad::ValueId adv_noise = -1;  // -1 when no head
    std::vector<ad::ValueId> param_leaves;
};

Stage2GenGraph build_stage2_gen_graph(const VelocityNet& generator,
                                      const FeatureExtractor& extractor,
                                      const DiscriminatorHead* head, std::size_t batch,
                                      const LossWeights& weights);

// Discriminator-update record: hinge loss on noised real data against frozen
// generator samples, scaled by lambda3. The same t column noises both paths.
struct DiscLossGraph {
    ad::Graph graph;
    ad::ValueId loss = -1;   // lambda3-scaled
    ad::ValueId hinge = -1;  // unscaled hinge value
    ad::ValueId real_xt = -1;
    ad::ValueId fake_xt = -1;
    ad::ValueId t = -1;
    ad::ValueId real_score_mean = -1;
    ad::ValueId fake_score_mean = -1;
    std::vector<ad::ValueId> fake_weights;  // per-token attention weights, fake path
    std::vector<ad::ValueId> param_leaves;
};

DiscLossGraph build_disc_loss_graph(const DiscriminatorHead& head,
                                    const FeatureExtractor& extractor, std::size_t batch,
                                    double lambda3);

}  // namespace hdlab
