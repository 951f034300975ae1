#include "conceptmil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

using json = nlohmann::ordered_json;

namespace {

// Fixed parameter walk; checkpoint blob order follows it.
std::vector<std::pair<std::string, Matrix*>> weight_entries(ModelParams& params) {
  std::vector<std::pair<std::string, Matrix*>> entries;
  for (std::size_t c = 0; c < params.tokens.per_class.size(); ++c) {
    auto& pc = params.tokens.per_class[c];
    const std::string prefix = "class" + std::to_string(c);
    entries.emplace_back(prefix + ".expert_context", &pc.expert_context);
    entries.emplace_back(prefix + ".prompt_context", &pc.prompt_context);
    for (std::size_t s = 0; s < pc.data_driven.size(); ++s) {
      entries.emplace_back(prefix + ".data" + std::to_string(s),
                           &pc.data_driven[s]);
    }
    for (std::size_t e = 0; e < pc.embedding_delta.size(); ++e) {
      entries.emplace_back(prefix + ".delta" + std::to_string(e),
                           &pc.embedding_delta[e]);
    }
  }
  entries.emplace_back("adapter.w1v", &params.adapter_w1v);
  entries.emplace_back("adapter.w2v", &params.adapter_w2v);
  entries.emplace_back("adapter.w1t", &params.adapter_w1t);
  entries.emplace_back("adapter.w2t", &params.adapter_w2t);
  return entries;
}

json bank_signature(const ConceptBank& bank) {
  json classes = json::array();
  for (const auto& cls : bank.classes) {
    json jc;
    jc["name"] = cls.name;
    jc["n_expert"] = cls.expert_concepts.size();
    jc["n_data_driven"] = cls.n_data_driven;
    json hashes = json::array();
    json precomputed = json::array();
    for (const auto& ec : cls.expert_concepts) {
      hashes.push_back(fnv1a64(ec.text));
      precomputed.push_back(ec.embedding.has_value());
    }
    jc["text_hash"] = std::move(hashes);
    jc["precomputed"] = std::move(precomputed);
    classes.push_back(std::move(jc));
  }
  return classes;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  // The walk only reads; const_cast keeps a single definition of the order.
  auto entries = weight_entries(const_cast<ModelParams&>(model.params));

  json header;
  header["format_version"] = 1;
  header["seed"] = model.seed;
  header["dims"] = {{"d", model.bank.embed_dim},
                    {"vocab", model.config.vocab},
                    {"token_dim", model.config.token_dim},
                    {"context_len", model.config.context_len},
                    {"data_context_len", model.config.data_context_len}};
  header["token_init_std"] = model.config.token_init_std;
  const ModelHyper& h = model.params.hyper;
  header["hyper"] = {{"alpha", h.alpha},
                     {"beta", h.beta},
                     {"tau", h.tau},
                     {"logit_scale", h.logit_scale},
                     {"leaky_slope", h.leaky_slope},
                     {"adapter_hidden", h.adapter_hidden},
                     {"softmax_over_instances", h.softmax_over_instances},
                     {"bag_guidance", h.bag_guidance},
                     {"adapters", h.adapters}};
  header["task"] = model.bank.task;
  header["classes"] = bank_signature(model.bank);
  json weights = json::array();
  for (const auto& [name, m] : entries) {
    weights.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  }
  header["weights"] = std::move(weights);

  const std::string header_bytes = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  put_u32(out, static_cast<std::uint32_t>(header_bytes.size()));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, m] : entries) {
    for (double v : m->data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      char buf[4];
      for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(buf, 4);
    }
  }
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, ConceptBank bank) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (data.size() < 4) throw ParseError("checkpoint " + path.string() + ": truncated header length");
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) {
    header_len |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[i])) << (8 * i);
  }
  if (data.size() < 4 + static_cast<std::size_t>(header_len)) {
    throw ParseError("checkpoint " + path.string() + ": truncated header");
  }
  json header;
  try {
    header = json::parse(data.substr(4, header_len));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }

  try {
    ModelConfig config;
    const auto& dims = header.at("dims");
    config.vocab = dims.at("vocab").get<std::size_t>();
    config.token_dim = dims.at("token_dim").get<std::size_t>();
    config.context_len = dims.at("context_len").get<std::size_t>();
    config.data_context_len = dims.at("data_context_len").get<std::size_t>();
    config.token_init_std = header.at("token_init_std").get<double>();
    const auto& jh = header.at("hyper");
    config.hyper.alpha = jh.at("alpha").get<double>();
    config.hyper.beta = jh.at("beta").get<double>();
    config.hyper.tau = jh.at("tau").get<double>();
    config.hyper.logit_scale = jh.at("logit_scale").get<double>();
    config.hyper.leaky_slope = jh.at("leaky_slope").get<double>();
    config.hyper.adapter_hidden = jh.at("adapter_hidden").get<std::size_t>();
    config.hyper.softmax_over_instances =
        jh.at("softmax_over_instances").get<bool>();
    config.hyper.bag_guidance = jh.at("bag_guidance").get<bool>();
    config.hyper.adapters = jh.at("adapters").get<bool>();

    if (dims.at("d").get<std::size_t>() != bank.embed_dim) {
      throw ValidationError("checkpoint d=" + dims.at("d").dump() +
                            " does not match bank d=" +
                            std::to_string(bank.embed_dim));
    }
    const json expected = bank_signature(bank);
    if (header.at("classes") != expected) {
      throw ValidationError(
          "checkpoint was trained with a structurally different bank");
    }

    Model model = Model::create(std::move(bank), config,
                                header.at("seed").get<std::uint64_t>());

    auto entries = weight_entries(model.params);
    const auto& jweights = header.at("weights");
    if (jweights.size() != entries.size()) {
      throw ValidationError("checkpoint weight count " +
                            std::to_string(jweights.size()) + " != expected " +
                            std::to_string(entries.size()));
    }
    std::size_t offset = 4 + header_len;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& [name, m] = entries[i];
      const auto& jw = jweights[i];
      if (jw.at("name").get<std::string>() != name ||
          jw.at("rows").get<std::size_t>() != m->rows() ||
          jw.at("cols").get<std::size_t>() != m->cols()) {
        throw ValidationError("checkpoint weight '" +
                              jw.at("name").get<std::string>() +
                              "' does not match expected '" + name + "'");
      }
      const std::size_t bytes = m->size() * 4;
      if (offset + bytes > data.size()) {
        throw ParseError("checkpoint " + path.string() + ": truncated blob for '" +
                         name + "'");
      }
      for (std::size_t e = 0; e < m->size(); ++e) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          bits |= static_cast<std::uint32_t>(
                      static_cast<std::uint8_t>(data[offset + e * 4 + b]))
                  << (8 * b);
        }
        float f;
        std::memcpy(&f, &bits, 4);
        m->data()[e] = static_cast<double>(f);
      }
      offset += bytes;
    }
    if (offset != data.size()) {
      throw ParseError("checkpoint " + path.string() + ": trailing bytes");
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace conceptmil
