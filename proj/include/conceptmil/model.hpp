#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "conceptmil/concept_bank.hpp"
#include "conceptmil/encoder.hpp"
#include "conceptmil/matrix.hpp"
#include "conceptmil/tape.hpp"

namespace conceptmil {

// Fixed hyperparameters of the aggregation model.
struct ModelHyper {
  double alpha = 0.2;         // visual adapter blend
  double beta = 0.2;          // textual adapter blend
  double tau = 0.07;          // class-probability temperature
  double logit_scale = 10.0;  // sharpening for both attention softmaxes
  double leaky_slope = 0.01;
  std::size_t adapter_hidden = 0;      // 0 -> embed_dim / 4
  bool softmax_over_instances = true;  // false: normalize each patch over concepts
  bool bag_guidance = true;            // false: uniform concept weights
  bool adapters = true;                // false: skip the adapter blend entirely

  void validate() const;
  std::size_t resolved_hidden(std::size_t embed_dim) const;
};

// Shape/init configuration for a fresh model.
struct ModelConfig {
  std::size_t vocab = 4096;
  std::size_t token_dim = 64;
  std::size_t context_len = 16;
  std::size_t data_context_len = 16;
  double token_init_std = 0.1;
  ModelHyper hyper;
};

// All learnable tensors plus the fixed hyperparameters. Adapter weights are
// shared across classes (one visual, one textual pair).
struct ModelParams {
  ModelHyper hyper;
  TokenParams tokens;
  Matrix adapter_w1v, adapter_w2v;  // d x h, h x d
  Matrix adapter_w1t, adapter_w2t;
};

// Bank + frozen encoder + parameters: the complete trainable state.
struct Model {
  ConceptBank bank;
  FrozenEncoder encoder;
  ModelConfig config;
  std::uint64_t seed = 0;
  ModelParams params;

  static Model create(ConceptBank bank, const ModelConfig& config,
                      std::uint64_t seed);
};

// --- Aggregation steps (each is differentiable on the tape) ---

// Attention of every patch row of `patches` (n x d) against every concept row
// (m x d): softmax over the patch axis of logit_scale * (Z * C^T), so each
// concept column sums to 1. `over` switches the normalization axis.
Var instance_concept_weights(Tape& tape, Var patches, Var concepts,
                             double logit_scale, Axis over = Axis::cols);

// Concept-specific slide features H = W^T * Z (m x d).
Var concept_features(Tape& tape, Var weights, Var patches);

// Softmax over concepts of logit_scale * (C * c_bag^T): m x 1, sums to 1.
Var bag_guidance_weights(Tape& tape, Var concepts, Var bag_prompt,
                         double logit_scale);

// Overall slide representation F = w^T H + mean(H) (1 x d).
Var bag_representation(Tape& tape, Var guidance, Var features);

// Bottleneck adapter with residual blend:
// x* = ratio * (LeakyReLU(x W1) W2) + (1 - ratio) * x.
Var slide_adapt(Tape& tape, Var x, Var w1, Var w2, double ratio, double slope);

// Temperature softmax over per-class cosines: K x 1 probabilities.
Var class_probabilities(Tape& tape, std::span<const Var> cosines, double tau);

// --- Full forward pass ---

struct ForwardResult {
  Var probs;                              // K x 1 node
  std::vector<double> probabilities;      // extracted values
  std::vector<Var> cosines;               // per class 1 x 1
  std::vector<Matrix> instance_weights;   // per class n x m attention
  std::vector<Matrix> raw_similarities;   // per class n x m pre-softmax Z*C^T
  std::vector<Matrix> concept_features_values;  // per class m x d
  std::vector<Matrix> bag_features;       // per class 1 x d, pre-adapter
};

// Composes the two-stage aggregation for every class. `patches` must be the
// bag's n x d embedding matrix (rows expected unit-norm; enforced upstream).
// Throws DegenerateInputError on an empty bag.
ForwardResult forward_model(Tape& tape, const Matrix& patches,
                            const BankEmbeddings& bank_emb,
                            const ModelHyper& hyper, Var w1v, Var w2v, Var w1t,
                            Var w2t);

// Registers adapter weights and runs forward_model. The single entry point
// used by training and inference.
ForwardResult forward(Tape& tape, const Matrix& patches, Model& model,
                      ParamRegistry& registry, BankEmbeddings* bank_out = nullptr);

}  // namespace conceptmil
