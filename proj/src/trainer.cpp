#include "conceptmil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "conceptmil/errors.hpp"
#include "conceptmil/metrics.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (lambda_mutual < 0.0) throw ConfigError("train: lambda must be >= 0");
  if (folds < 2) throw ConfigError("train: folds must be >= 2");
}

CVReport CVReport::from_folds(std::vector<FoldMetrics> folds) {
  CVReport report;
  report.folds = std::move(folds);
  const double k = static_cast<double>(report.folds.size());
  for (const auto& f : report.folds) {
    report.mean.auc += f.auc / k;
    report.mean.acc += f.acc / k;
    report.mean.f1 += f.f1 / k;
  }
  for (const auto& f : report.folds) {
    report.stddev.auc += (f.auc - report.mean.auc) * (f.auc - report.mean.auc) / k;
    report.stddev.acc += (f.acc - report.mean.acc) * (f.acc - report.mean.acc) / k;
    report.stddev.f1 += (f.f1 - report.mean.f1) * (f.f1 - report.mean.f1) / k;
  }
  report.stddev.auc = std::sqrt(report.stddev.auc);
  report.stddev.acc = std::sqrt(report.stddev.acc);
  report.stddev.f1 = std::sqrt(report.stddev.f1);
  return report;
}

std::string CVReport::to_json() const {
  json root;
  root["folds"] = json::array();
  for (const auto& f : folds) {
    root["folds"].push_back({{"auc", f.auc}, {"acc", f.acc}, {"f1", f.f1}});
  }
  root["mean"] = {{"auc", mean.auc}, {"acc", mean.acc}, {"f1", mean.f1}};
  root["std"] = {{"auc", stddev.auc}, {"acc", stddev.acc}, {"f1", stddev.f1}};
  return root.dump(2) + "\n";
}

std::string CVReport::table() const {
  std::ostringstream out;
  char line[128];
  out << "fold       auc       acc        f1\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    std::snprintf(line, sizeof(line), "%4zu  %8.4f  %8.4f  %8.4f\n", i,
                  folds[i].auc, folds[i].acc, folds[i].f1);
    out << line;
  }
  std::snprintf(line, sizeof(line), "mean  %8.4f  %8.4f  %8.4f\n", mean.auc,
                mean.acc, mean.f1);
  out << line;
  std::snprintf(line, sizeof(line), " std  %8.4f  %8.4f  %8.4f\n", stddev.auc,
                stddev.acc, stddev.f1);
  out << line;
  return out.str();
}

Var mutual_loss(Tape& tape, const BankEmbeddings& bank_emb) {
  std::optional<Var> total;
  for (const auto& rows : bank_emb.concept_rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        Var pair = tape.cosine(rows[i], rows[j]);
        total = total ? tape.add(*total, pair) : pair;
      }
    }
  }
  if (!total) total = tape.constant(Matrix(1, 1));
  return *total;
}

Var total_loss(Tape& tape, Var probs, std::size_t label, Var mutual,
               double lambda) {
  const Matrix& p = tape.value(probs);
  if (label >= p.rows()) {
    throw ValidationError("total_loss: label " + std::to_string(label) +
                          " outside " + std::to_string(p.rows()) + " classes");
  }
  Var ce = tape.scale(tape.log_clamped(tape.select(probs, label, 0)), -1.0);
  return tape.add(ce, tape.scale(mutual, lambda));
}

void sgd_step(Tape& tape, std::span<const ParamBinding> bindings, double lr) {
  for (const auto& b : bindings) {
    const Matrix g = tape.grad(b.var);
    if (!g.all_finite()) {
      throw NumericError("training aborted: non-finite gradient for '" + b.name +
                         "'");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      b.storage->data()[i] -= lr * g.data()[i];
    }
  }
}

std::vector<std::vector<std::size_t>> split_folds(const Manifest& manifest,
                                                  std::size_t k,
                                                  std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < manifest.slides.size(); ++i) {
    by_patient[manifest.slides[i].patient_id].push_back(i);
  }
  if (by_patient.size() < k) {
    throw ConfigError("split_folds: " + std::to_string(by_patient.size()) +
                      " patients cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::string> patients;
  patients.reserve(by_patient.size());
  for (const auto& [patient, _] : by_patient) patients.push_back(patient);
  // by_patient is sorted, so the shuffle sees a stable base order.
  Rng rng(mix_seed(seed, "folds"));
  rng.shuffle(patients);

  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const auto& slides = by_patient[patients[i]];
    auto& fold = folds[i % k];
    fold.insert(fold.end(), slides.begin(), slides.end());
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

namespace {

struct StepOutcome {
  double mean_ce = 0.0;
  double mutual = 0.0;
};

// One optimization step over a batch of bags: a single tape carries the
// bank embeddings, every bag's forward pass, and the combined loss
// mean(CE) + lambda * mutual.
StepOutcome train_step(Model& model, std::span<const SlideBag* const> batch,
                       double lambda, double lr) {
  Tape tape;
  ParamRegistry registry;
  BankEmbeddings bank_emb =
      embed_bank(tape, model.bank, model.encoder, model.params.tokens, registry);
  Var w1v, w2v, w1t, w2t;
  if (model.params.hyper.adapters) {
    w1v = registry.bind(tape, "adapter.w1v", model.params.adapter_w1v);
    w2v = registry.bind(tape, "adapter.w2v", model.params.adapter_w2v);
    w1t = registry.bind(tape, "adapter.w1t", model.params.adapter_w1t);
    w2t = registry.bind(tape, "adapter.w2t", model.params.adapter_w2t);
  }

  std::optional<Var> ce_sum;
  for (const SlideBag* bag : batch) {
    ForwardResult fwd = forward_model(tape, bag->embeddings, bank_emb,
                                      model.params.hyper, w1v, w2v, w1t, w2t);
    Var ce = tape.scale(
        tape.log_clamped(tape.select(fwd.probs, bag->label, 0)), -1.0);
    ce_sum = ce_sum ? tape.add(*ce_sum, ce) : ce;
  }
  Var mean_ce = tape.scale(*ce_sum, 1.0 / static_cast<double>(batch.size()));
  Var mutual = mutual_loss(tape, bank_emb);
  Var loss = tape.add(mean_ce, tape.scale(mutual, lambda));

  StepOutcome outcome{tape.value(mean_ce)(0, 0), tape.value(mutual)(0, 0)};
  tape.backward(loss);
  sgd_step(tape, registry.bindings(), lr);
  return outcome;
}

}  // namespace

void train_model(Model& model, std::span<const SlideBag* const> bags,
                 const TrainConfig& config, std::uint64_t shuffle_seed,
                 const EpochLogger& logger) {
  config.validate();
  if (bags.empty()) throw ValidationError("train: empty training set");

  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(shuffle_seed, "epoch_shuffle", epoch));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t slides_done = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      std::vector<const SlideBag*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(bags[order[i]]);
      const StepOutcome outcome =
          train_step(model, batch, config.lambda_mutual, config.lr);
      loss_sum += (outcome.mean_ce + config.lambda_mutual * outcome.mutual) *
                  static_cast<double>(batch.size());
      slides_done += batch.size();
    }
    const double mean_loss = loss_sum / static_cast<double>(slides_done);

    if (logger) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count();
      logger(EpochStats{epoch, mean_loss, secs});
    }

    if (config.early_stop_patience > 0) {
      if (mean_loss < best_loss - config.early_stop_min_delta) {
        best_loss = mean_loss;
        since_best = 0;
      } else if (++since_best >= config.early_stop_patience) {
        break;
      }
    }
  }
}

std::vector<double> predict(Model& model, const SlideBag& bag) {
  Tape tape;
  ParamRegistry registry;
  ForwardResult fwd = forward(tape, bag.embeddings, model, registry);
  return fwd.probabilities;
}

Matrix predict_all(Model& model, std::span<const SlideBag* const> bags) {
  if (bags.empty()) throw ValidationError("predict_all: no bags");
  const std::size_t k = model.bank.num_classes();
  Matrix probs(bags.size(), k);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto p = predict(model, *bags[i]);
    for (std::size_t c = 0; c < k; ++c) probs(i, c) = p[c];
  }
  return probs;
}

FoldMetrics evaluate(Model& model, std::span<const SlideBag* const> bags) {
  const Matrix probs = predict_all(model, bags);
  std::vector<int> labels(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    labels[i] = static_cast<int>(bags[i]->label);
  }
  FoldMetrics m;
  if (probs.cols() == 2) {
    std::vector<double> scores(bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) scores[i] = probs(i, 1);
    m.auc = roc_auc(scores, labels);
  } else {
    m.auc = macro_auc(probs, labels);
  }
  m.acc = accuracy(probs, labels);
  m.f1 = macro_f1(probs, labels);
  return m;
}

ConceptBank apply_data_driven_override(ConceptBank bank,
                                       const std::optional<std::size_t>& n) {
  if (n) {
    for (auto& cls : bank.classes) cls.n_data_driven = *n;
    bank.validate();
  }
  return bank;
}

ModelHyper apply_ablations(ModelHyper hyper, const TrainConfig& config) {
  if (config.no_bag_guidance) hyper.bag_guidance = false;
  if (config.no_adapters) hyper.adapters = false;
  return hyper;
}

CVRun cross_validate(const Manifest& manifest, std::span<const SlideBag> bags,
                     const ConceptBank& bank, const ModelConfig& model_config,
                     const TrainConfig& config, const EpochLogger& logger) {
  config.validate();
  if (bags.size() != manifest.slides.size()) {
    throw ValidationError("cross_validate: bag count does not match manifest");
  }

  ConceptBank run_bank = apply_data_driven_override(bank, config.n_data_driven);
  ModelConfig run_config = model_config;
  run_config.hyper = apply_ablations(model_config.hyper, config);

  CVRun run;
  run.fold_indices = split_folds(manifest, config.folds, config.seed);
  run.fold_models.reserve(config.folds);
  std::vector<FoldMetrics> fold_metrics(config.folds);

  // Fold models are constructed up front so training can run in parallel.
  for (std::size_t f = 0; f < config.folds; ++f) {
    run.fold_models.push_back(
        Model::create(run_bank, run_config, mix_seed(config.seed, "fold", f)));
  }

  auto run_fold = [&](std::size_t f) {
    std::vector<const SlideBag*> train_bags;
    std::vector<const SlideBag*> test_bags;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const bool held_out = std::binary_search(run.fold_indices[f].begin(),
                                               run.fold_indices[f].end(), i);
      (held_out ? test_bags : train_bags).push_back(&bags[i]);
    }
    EpochLogger fold_logger = nullptr;
    if (logger && !config.parallel_folds) fold_logger = logger;
    train_model(run.fold_models[f], train_bags, config,
                mix_seed(config.seed, "fold_shuffle", f), fold_logger);
    fold_metrics[f] = evaluate(run.fold_models[f], test_bags);
  };

  if (config.parallel_folds) {
    std::vector<std::thread> workers;
    for (std::size_t f = 0; f < config.folds; ++f) {
      workers.emplace_back(run_fold, f);
    }
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t f = 0; f < config.folds; ++f) run_fold(f);
  }

  run.report = CVReport::from_folds(std::move(fold_metrics));
  return run;
}

}  // namespace conceptmil
