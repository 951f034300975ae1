#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptmil/concept_bank.hpp"
#include "conceptmil/dataio.hpp"
#include "conceptmil/model.hpp"

namespace conceptmil {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 2;  // realized as gradient accumulation
  std::size_t epochs = 20;
  double lambda_mutual = 0.1;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  bool normalize_embeddings = true;
  // Ablations.
  bool no_bag_guidance = false;
  bool no_adapters = false;
  std::optional<std::size_t> n_data_driven;  // overrides every class's slot count
  // Early stopping is off by default; when patience > 0 training stops after
  // that many epochs without the mean training loss improving by min_delta.
  std::size_t early_stop_patience = 0;
  double early_stop_min_delta = 1e-4;
  bool parallel_folds = false;

  void validate() const;
};

struct FoldMetrics {
  double auc = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
};

struct CVReport {
  std::vector<FoldMetrics> folds;
  FoldMetrics mean;
  FoldMetrics stddev;  // population standard deviation

  std::string to_json() const;      // deterministic bytes
  std::string table() const;        // human-readable
  static CVReport from_folds(std::vector<FoldMetrics> folds);
};

// Sum over classes of pairwise cosines among that class's concept
// embeddings, each unordered pair counted once. A single-concept class
// contributes zero.
Var mutual_loss(Tape& tape, const BankEmbeddings& bank_emb);

// -log probs[label] + lambda * mutual, with the probability clamped at
// 1e-12 before the log.
Var total_loss(Tape& tape, Var probs, std::size_t label, Var mutual,
               double lambda);

// p <- p - lr * grad for every binding. Throws NumericError (naming the
// parameter) on a non-finite gradient.
void sgd_step(Tape& tape, std::span<const ParamBinding> bindings, double lr);

// Patient-level fold assignment: returns slide indices per fold. All slides
// of a patient land in one fold; fold sizes differ by at most one patient.
// Throws ConfigError when there are fewer patients than folds.
std::vector<std::vector<std::size_t>> split_folds(const Manifest& manifest,
                                                  std::size_t k,
                                                  std::uint64_t seed);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};
using EpochLogger = std::function<void(const EpochStats&)>;

// Trains the model in place over the given bags. Bag rows must already be
// normalized if the config asks for it (the caller owns loading).
void train_model(Model& model, std::span<const SlideBag* const> bags,
                 const TrainConfig& config, std::uint64_t shuffle_seed,
                 const EpochLogger& logger = nullptr);

// Inference over one bag: class probabilities (length K).
std::vector<double> predict(Model& model, const SlideBag& bag);

// N x K probability matrix over a set of bags.
Matrix predict_all(Model& model, std::span<const SlideBag* const> bags);

FoldMetrics evaluate(Model& model, std::span<const SlideBag* const> bags);

struct CVRun {
  CVReport report;
  std::vector<Model> fold_models;
  std::vector<std::vector<std::size_t>> fold_indices;
};

// Patient-level k-fold cross-validation. Deterministic for a fixed seed.
CVRun cross_validate(const Manifest& manifest, std::span<const SlideBag> bags,
                     const ConceptBank& bank, const ModelConfig& model_config,
                     const TrainConfig& config,
                     const EpochLogger& logger = nullptr);

// Applies trainer-level ablation switches to a bank/model configuration.
ConceptBank apply_data_driven_override(ConceptBank bank,
                                       const std::optional<std::size_t>& n);
ModelHyper apply_ablations(ModelHyper hyper, const TrainConfig& config);

}  // namespace conceptmil
