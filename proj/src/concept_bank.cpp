#include "conceptmil/concept_bank.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

using json = nlohmann::ordered_json;

std::optional<std::size_t> ConceptBank::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return i;
  }
  return std::nullopt;
}

void ConceptBank::validate() const {
  if (embed_dim == 0) {
    throw ValidationError("bank: embedding dimension d must be positive");
  }
  if (classes.size() < 2) {
    throw ValidationError("bank: needs at least 2 classes, got " +
                          std::to_string(classes.size()));
  }
  std::set<std::string> seen;
  for (const auto& cls : classes) {
    if (cls.name.empty()) throw ValidationError("bank: empty class name");
    if (!seen.insert(cls.name).second) {
      throw ValidationError("bank: duplicate class '" + cls.name + "'");
    }
  }
  for (const auto& cls : classes) {
    if (cls.expert_concepts.size() + cls.n_data_driven == 0) {
      throw ValidationError("bank: class '" + cls.name +
                            "' has no concepts (expert or data-driven)");
    }
    for (const auto& concept_entry : cls.expert_concepts) {
      if (!class_index(concept_entry.class_name)) {
        throw ValidationError("bank: concept references unknown class '" +
                              concept_entry.class_name + "'");
      }
      if (concept_entry.text.empty()) {
        throw ValidationError("bank: empty concept text in class '" + cls.name + "'");
      }
      if (concept_entry.source.title.empty()) {
        throw ValidationError("bank: concept '" + concept_entry.text +
                              "' missing source title");
      }
      if (concept_entry.embedding && concept_entry.embedding->size() != embed_dim) {
        throw ValidationError("bank: precomputed embedding for '" +
                              concept_entry.text + "' has length " +
                              std::to_string(concept_entry.embedding->size()) +
                              ", expected " + std::to_string(embed_dim));
      }
    }
  }
}

namespace {

const json& require_field(const json& obj, const char* key, const char* where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(std::string("bank file: missing field '") + key + "' in " +
                     where);
  }
  return *it;
}

}  // namespace

ConceptBank ConceptBank::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bank file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("bank file " + path.string() + ": " + e.what());
  }

  ConceptBank bank;
  try {
    bank.task = require_field(root, "task", "top level").get<std::string>();
    bank.embed_dim = require_field(root, "d", "top level").get<std::size_t>();
    for (const auto& jcls : require_field(root, "classes", "top level")) {
      ClassEntry cls;
      cls.name = require_field(jcls, "name", "class").get<std::string>();
      cls.class_prompt =
          require_field(jcls, "class_prompt", "class").get<std::string>();
      cls.n_data_driven =
          require_field(jcls, "n_data_driven", "class").get<std::size_t>();
      for (const auto& jc : require_field(jcls, "expert_concepts", "class")) {
        ExpertConcept ec;
        ec.class_name = jc.contains("class") ? jc["class"].get<std::string>()
                                             : cls.name;
        ec.text = require_field(jc, "text", "expert concept").get<std::string>();
        const auto& jsrc = require_field(jc, "source", "expert concept");
        ec.source.title =
            require_field(jsrc, "title", "concept source").get<std::string>();
        ec.source.locator =
            require_field(jsrc, "locator", "concept source").get<std::string>();
        if (jsrc.contains("quote")) {
          ec.source.quote = jsrc["quote"].get<std::string>();
        }
        if (jc.contains("embedding")) {
          ec.embedding = jc["embedding"].get<std::vector<double>>();
        }
        cls.expert_concepts.push_back(std::move(ec));
      }
      bank.classes.push_back(std::move(cls));
    }
  } catch (const json::exception& e) {
    throw ParseError("bank file " + path.string() + ": " + e.what());
  }

  bank.validate();
  return bank;
}

void ConceptBank::save(const std::filesystem::path& path) const {
  json root;
  root["task"] = task;
  root["d"] = embed_dim;
  root["classes"] = json::array();
  for (const auto& cls : classes) {
    json jcls;
    jcls["name"] = cls.name;
    jcls["class_prompt"] = cls.class_prompt;
    jcls["expert_concepts"] = json::array();
    for (const auto& ec : cls.expert_concepts) {
      json jc;
      jc["text"] = ec.text;
      jc["source"] = {{"title", ec.source.title}, {"locator", ec.source.locator}};
      if (ec.source.quote) jc["source"]["quote"] = *ec.source.quote;
      if (ec.embedding) jc["embedding"] = *ec.embedding;
      jcls["expert_concepts"].push_back(std::move(jc));
    }
    jcls["n_data_driven"] = cls.n_data_driven;
    root["classes"].push_back(std::move(jcls));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bank file " + path.string());
  out << root.dump(2) << '\n';
}

TokenParams TokenParams::init(const ConceptBank& bank, std::size_t context_len,
                              std::size_t data_context_len, std::size_t token_dim,
                              double init_std, std::uint64_t seed) {
  TokenParams params;
  for (std::size_t c = 0; c < bank.classes.size(); ++c) {
    const ClassEntry& cls = bank.classes[c];
    TokenParams::PerClass pc;
    {
      Rng rng(mix_seed(seed, "tokens.expert_context", c));
      pc.expert_context = Matrix(context_len, token_dim,
                                 rng.normal_vector(context_len * token_dim, init_std));
    }
    {
      Rng rng(mix_seed(seed, "tokens.prompt_context", c));
      pc.prompt_context = Matrix(context_len, token_dim,
                                 rng.normal_vector(context_len * token_dim, init_std));
    }
    for (std::size_t s = 0; s < cls.n_data_driven; ++s) {
      Rng rng(mix_seed(seed, "tokens.data_driven", c * 100003 + s));
      pc.data_driven.push_back(Matrix(
          data_context_len, token_dim,
          rng.normal_vector(data_context_len * token_dim, init_std)));
    }
    for (std::size_t e = 0; e < cls.expert_concepts.size(); ++e) {
      if (cls.expert_concepts[e].embedding) {
        // Deltas start at zero so the precomputed embedding is used as-is.
        pc.embedding_delta.push_back(Matrix(1, bank.embed_dim));
        pc.delta_concept_index.push_back(e);
      }
    }
    params.per_class.push_back(std::move(pc));
  }
  return params;
}

Var ParamRegistry::bind(Tape& tape, std::string name, Matrix& storage) {
  Var var = tape.param(storage);
  bindings_.push_back(ParamBinding{std::move(name), &storage, var});
  return var;
}

BankEmbeddings embed_bank(Tape& tape, const ConceptBank& bank,
                          const FrozenEncoder& enc, TokenParams& tokens,
                          ParamRegistry& registry) {
  if (bank.embed_dim != enc.embed_dim()) {
    throw ValidationError("bank d=" + std::to_string(bank.embed_dim) +
                          " does not match encoder d=" +
                          std::to_string(enc.embed_dim()));
  }
  BankEmbeddings out;
  const Var projection = tape.constant(enc.projection());
  for (std::size_t c = 0; c < bank.classes.size(); ++c) {
    const ClassEntry& cls = bank.classes[c];
    TokenParams::PerClass& pc = tokens.per_class[c];
    const std::string prefix = "class" + std::to_string(c);

    const Var expert_ctx =
        registry.bind(tape, prefix + ".expert_context", pc.expert_context);

    std::vector<Var> rows;
    std::size_t delta_cursor = 0;
    for (std::size_t e = 0; e < cls.expert_concepts.size(); ++e) {
      const ExpertConcept& ec = cls.expert_concepts[e];
      if (ec.embedding) {
        Var base = tape.constant(Matrix::row(*ec.embedding));
        Var delta = registry.bind(tape,
                                  prefix + ".delta" + std::to_string(delta_cursor),
                                  pc.embedding_delta[delta_cursor]);
        ++delta_cursor;
        rows.push_back(tape.l2_normalize_rows(tape.add(base, delta)));
      } else {
        const auto ids = tokenize(ec.text, static_cast<std::uint32_t>(enc.vocab()));
        rows.push_back(encode_concept(tape, enc, ids, expert_ctx, projection));
      }
    }
    for (std::size_t s = 0; s < cls.n_data_driven; ++s) {
      Var ctx = registry.bind(tape, prefix + ".data" + std::to_string(s),
                              pc.data_driven[s]);
      rows.push_back(encode_concept(tape, enc, {}, ctx, projection));
    }

    const Var prompt_ctx =
        registry.bind(tape, prefix + ".prompt_context", pc.prompt_context);
    const auto prompt_ids =
        tokenize(cls.class_prompt, static_cast<std::uint32_t>(enc.vocab()));
    out.bag_prompts.push_back(
        encode_concept(tape, enc, prompt_ids, prompt_ctx, projection));

    out.instance_concepts.push_back(tape.concat_rows(rows));
    out.concept_rows.push_back(std::move(rows));
  }
  return out;
}

}  // namespace conceptmil
