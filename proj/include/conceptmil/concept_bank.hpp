#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conceptmil/encoder.hpp"
#include "conceptmil/matrix.hpp"
#include "conceptmil/tape.hpp"

namespace conceptmil {

struct ConceptSource {
  std::string title;    // required for traceability
  std::string locator;  // URL or citation string
  std::optional<std::string> quote;
};

// One induced patch-level concept. When `embedding` is set the concept
// bypasses the text encoder: its representation is the normalized sum of the
// precomputed vector and a learnable delta.
struct ExpertConcept {
  std::string class_name;
  std::string text;
  ConceptSource source;
  std::optional<std::vector<double>> embedding;
};

struct ClassEntry {
  std::string name;
  std::string class_prompt;  // slide-level class description
  std::vector<ExpertConcept> expert_concepts;
  std::size_t n_data_driven = 0;
};

// Per-class concept inventory. Expert concepts keep file order; data-driven
// slots follow them. The order is fixed for the lifetime of a checkpoint.
struct ConceptBank {
  std::string task;
  std::size_t embed_dim = 0;
  std::vector<ClassEntry> classes;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t concepts_in_class(std::size_t c) const {
    return classes[c].expert_concepts.size() + classes[c].n_data_driven;
  }
  std::optional<std::size_t> class_index(std::string_view name) const;

  // Throws ValidationError for duplicate classes, K < 2, empty concept
  // sets, missing source titles, empty texts, wrong embedding dims, or a
  // concept whose class_name is not in the class list.
  void validate() const;

  static ConceptBank load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// The learnable text-side tensors: one shared context per class for its
// expert concepts, one context per class prompt, one token matrix per
// data-driven slot, and one additive delta per precomputed expert concept.
struct TokenParams {
  struct PerClass {
    Matrix expert_context;             // context_len x token_dim
    Matrix prompt_context;             // context_len x token_dim
    std::vector<Matrix> data_driven;   // each data_context_len x token_dim
    std::vector<Matrix> embedding_delta;  // 1 x d, aligned with precomputed concepts
    std::vector<std::size_t> delta_concept_index;  // expert index per delta
  };
  std::vector<PerClass> per_class;

  static TokenParams init(const ConceptBank& bank, std::size_t context_len,
                          std::size_t data_context_len, std::size_t token_dim,
                          double init_std, std::uint64_t seed);
};

// Ties a parameter matrix living in the model state to its node on the
// current tape so the optimizer can route gradients back.
struct ParamBinding {
  std::string name;
  Matrix* storage = nullptr;
  Var var;
};

class ParamRegistry {
 public:
  Var bind(Tape& tape, std::string name, Matrix& storage);
  std::vector<ParamBinding>& bindings() { return bindings_; }
  const std::vector<ParamBinding>& bindings() const { return bindings_; }

 private:
  std::vector<ParamBinding> bindings_;
};

// Tape-level embeddings of a whole bank.
struct BankEmbeddings {
  std::vector<Var> instance_concepts;            // per class: m x d
  std::vector<std::vector<Var>> concept_rows;    // per class, per concept: 1 x d
  std::vector<Var> bag_prompts;                  // per class: 1 x d
};

// Embeds every concept and class prompt of the bank on the tape, binding the
// learnable tokens through `registry`. Row order per class: expert concepts
// in file order, then data-driven slots.
BankEmbeddings embed_bank(Tape& tape, const ConceptBank& bank,
                          const FrozenEncoder& enc, TokenParams& tokens,
                          ParamRegistry& registry);

}  // namespace conceptmil
