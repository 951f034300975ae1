#include "conceptmil/encoder.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

std::vector<std::uint32_t> tokenize(std::string_view text, std::uint32_t vocab) {
  std::vector<std::uint32_t> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      ids.push_back(static_cast<std::uint32_t>(fnv1a64(word) % vocab));
      word.clear();
    }
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      word.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

FrozenEncoder::FrozenEncoder(std::size_t vocab, std::size_t token_dim,
                             std::size_t embed_dim, std::uint64_t seed)
    : vocab_(vocab), token_dim_(token_dim), embed_dim_(embed_dim), seed_(seed) {
  if (vocab == 0 || token_dim == 0 || embed_dim == 0) {
    throw ConfigError("encoder: vocab, token_dim and embed_dim must be positive");
  }
  const double table_std = 1.0 / std::sqrt(static_cast<double>(token_dim));
  Rng table_rng(mix_seed(seed, "encoder.table"));
  table_ = Matrix(vocab, token_dim, table_rng.normal_vector(vocab * token_dim, table_std));
  Rng proj_rng(mix_seed(seed, "encoder.projection"));
  projection_ = Matrix(token_dim, embed_dim,
                       proj_rng.normal_vector(token_dim * embed_dim, table_std));
}

Matrix FrozenEncoder::mean_token_rows(std::span<const std::uint32_t> ids) const {
  Matrix out(1, token_dim_);
  if (ids.empty()) return out;
  for (std::uint32_t id : ids) {
    if (id >= vocab_) {
      throw ValidationError("token id " + std::to_string(id) + " outside vocab " +
                            std::to_string(vocab_));
    }
    for (std::size_t j = 0; j < token_dim_; ++j) out(0, j) += table_(id, j);
  }
  for (double& v : out.data()) v /= static_cast<double>(ids.size());
  return out;
}

Var encode_concept(Tape& tape, const FrozenEncoder& enc,
                   std::span<const std::uint32_t> fixed_ids,
                   std::optional<Var> context, Var projection) {
  const std::size_t n_fixed = fixed_ids.size();
  const std::size_t n_ctx = context ? tape.value(*context).rows() : 0;
  const std::size_t total = n_fixed + n_ctx;
  if (total == 0) {
    throw DegenerateInputError("encode_concept: no tokens to pool");
  }

  // Mean over [context rows ; fixed-token rows] split into a learnable part
  // and a constant part weighted by their row counts.
  std::optional<Var> pooled;
  if (n_ctx > 0) {
    pooled = tape.scale(tape.mean_rows(*context),
                        static_cast<double>(n_ctx) / static_cast<double>(total));
  }
  if (n_fixed > 0) {
    Matrix fixed_mean = enc.mean_token_rows(fixed_ids);
    const double w = static_cast<double>(n_fixed) / static_cast<double>(total);
    for (double& v : fixed_mean.data()) v *= w;
    Var fixed_part = tape.constant(std::move(fixed_mean));
    pooled = pooled ? tape.add(*pooled, fixed_part) : fixed_part;
  }

  return tape.l2_normalize_rows(tape.matmul(*pooled, projection));
}

}  // namespace conceptmil
