#include "conceptmil/model.hpp"

#include <cmath>
#include <string>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

void ModelHyper::validate() const {
  if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0) {
    throw ConfigError("adapter blend ratios must lie in [0,1]");
  }
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be positive");
  if (!(logit_scale > 0.0)) throw ConfigError("logit scale must be positive");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("leaky slope must lie in (0,1)");
  }
}

std::size_t ModelHyper::resolved_hidden(std::size_t embed_dim) const {
  if (adapter_hidden > 0) return adapter_hidden;
  return embed_dim >= 4 ? embed_dim / 4 : 1;
}

Model Model::create(ConceptBank bank, const ModelConfig& config,
                    std::uint64_t seed) {
  bank.validate();
  config.hyper.validate();
  const std::size_t d = bank.embed_dim;
  Model model{std::move(bank),
              FrozenEncoder(config.vocab, config.token_dim, d, seed),
              config,
              seed,
              {}};
  const std::size_t h = config.hyper.resolved_hidden(d);
  model.params.hyper = config.hyper;
  model.params.tokens =
      TokenParams::init(model.bank, config.context_len, config.data_context_len,
                        config.token_dim, config.token_init_std, seed);
  // W1 random, W2 zero: adapters start as a pure pass-through of the blend.
  const double w1_std = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng_v(mix_seed(seed, "adapter.visual"));
  model.params.adapter_w1v = Matrix(d, h, rng_v.normal_vector(d * h, w1_std));
  model.params.adapter_w2v = Matrix(h, d);
  Rng rng_t(mix_seed(seed, "adapter.textual"));
  model.params.adapter_w1t = Matrix(d, h, rng_t.normal_vector(d * h, w1_std));
  model.params.adapter_w2t = Matrix(h, d);
  return model;
}

Var instance_concept_weights(Tape& tape, Var patches, Var concepts,
                             double logit_scale, Axis over) {
  if (tape.value(patches).rows() == 0) {
    throw DegenerateInputError("instance_concept_weights: empty bag");
  }
  Var sim = tape.matmul(patches, tape.transpose(concepts));
  return tape.softmax(sim, over, logit_scale);
}

Var concept_features(Tape& tape, Var weights, Var patches) {
  return tape.matmul(tape.transpose(weights), patches);
}

Var bag_guidance_weights(Tape& tape, Var concepts, Var bag_prompt,
                         double logit_scale) {
  if (tape.value(concepts).rows() == 0) {
    throw DegenerateInputError("bag_guidance_weights: no concepts");
  }
  Var sim = tape.matmul(concepts, tape.transpose(bag_prompt));
  return tape.softmax(sim, Axis::cols, logit_scale);
}

Var bag_representation(Tape& tape, Var guidance, Var features) {
  Var weighted = tape.matmul(tape.transpose(guidance), features);
  return tape.add(weighted, tape.mean_rows(features));
}

Var slide_adapt(Tape& tape, Var x, Var w1, Var w2, double ratio, double slope) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw ConfigError("slide_adapt: ratio must lie in [0,1]");
  }
  Var bottleneck =
      tape.matmul(tape.leaky_relu(tape.matmul(x, w1), slope), w2);
  return tape.add(tape.scale(bottleneck, ratio), tape.scale(x, 1.0 - ratio));
}

Var class_probabilities(Tape& tape, std::span<const Var> cosines, double tau) {
  if (!(tau > 0.0)) throw ConfigError("class_probabilities: tau must be positive");
  Var stacked = tape.concat_rows(cosines);
  return tape.softmax(stacked, Axis::cols, 1.0 / tau);
}

ForwardResult forward_model(Tape& tape, const Matrix& patches,
                            const BankEmbeddings& bank_emb,
                            const ModelHyper& hyper, Var w1v, Var w2v, Var w1t,
                            Var w2t) {
  if (patches.rows() == 0) {
    throw DegenerateInputError("forward: empty bag");
  }
  const std::size_t num_classes = bank_emb.instance_concepts.size();
  const Axis attention_axis =
      hyper.softmax_over_instances ? Axis::cols : Axis::rows;

  ForwardResult result;
  const Var z = tape.constant(patches);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const Var concepts = bank_emb.instance_concepts[c];
    const Var raw_sim = tape.matmul(z, tape.transpose(concepts));
    result.raw_similarities.push_back(tape.value(raw_sim));

    const Var weights = tape.softmax(raw_sim, attention_axis, hyper.logit_scale);
    result.instance_weights.push_back(tape.value(weights));

    const Var features = concept_features(tape, weights, z);
    result.concept_features_values.push_back(tape.value(features));

    Var guidance;
    if (hyper.bag_guidance) {
      guidance = bag_guidance_weights(tape, concepts, bank_emb.bag_prompts[c],
                                      hyper.logit_scale);
    } else {
      const std::size_t m = tape.value(concepts).rows();
      guidance = tape.constant(
          Matrix::filled(m, 1, 1.0 / static_cast<double>(m)));
    }
    const Var bag_feature = bag_representation(tape, guidance, features);
    result.bag_features.push_back(tape.value(bag_feature));

    Var adapted_feature = bag_feature;
    Var adapted_prompt = bank_emb.bag_prompts[c];
    if (hyper.adapters) {
      adapted_feature = slide_adapt(tape, bag_feature, w1v, w2v, hyper.alpha,
                                    hyper.leaky_slope);
      adapted_prompt = slide_adapt(tape, bank_emb.bag_prompts[c], w1t, w2t,
                                   hyper.beta, hyper.leaky_slope);
    }
    result.cosines.push_back(tape.cosine(adapted_feature, adapted_prompt));
  }

  result.probs = class_probabilities(tape, result.cosines, hyper.tau);
  const Matrix& probs = tape.value(result.probs);
  result.probabilities.assign(probs.data().begin(), probs.data().end());
  return result;
}

ForwardResult forward(Tape& tape, const Matrix& patches, Model& model,
                      ParamRegistry& registry, BankEmbeddings* bank_out) {
  BankEmbeddings bank_emb =
      embed_bank(tape, model.bank, model.encoder, model.params.tokens, registry);
  Var w1v, w2v, w1t, w2t;
  if (model.params.hyper.adapters) {
    w1v = registry.bind(tape, "adapter.w1v", model.params.adapter_w1v);
    w2v = registry.bind(tape, "adapter.w2v", model.params.adapter_w2v);
    w1t = registry.bind(tape, "adapter.w1t", model.params.adapter_w1t);
    w2t = registry.bind(tape, "adapter.w2t", model.params.adapter_w2t);
  }
  ForwardResult result = forward_model(tape, patches, bank_emb,
                                       model.params.hyper, w1v, w2v, w1t, w2t);
  if (bank_out) *bank_out = std::move(bank_emb);
  return result;
}

}  // namespace conceptmil
