#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "conceptmil/matrix.hpp"
#include "conceptmil/tape.hpp"

namespace conceptmil {

// Deterministic tokenizer: lowercase, split on non-alphanumerics, hash each
// token into [0, vocab).
std::vector<std::uint32_t> tokenize(std::string_view text, std::uint32_t vocab);

// Fixed text-side map into the shared embedding space: a seeded token
// embedding table plus a seeded linear projection. The tables never receive
// gradients; the same seed reproduces them bit for bit.
class FrozenEncoder {
 public:
  FrozenEncoder(std::size_t vocab, std::size_t token_dim, std::size_t embed_dim,
                std::uint64_t seed);

  std::size_t vocab() const { return vocab_; }
  std::size_t token_dim() const { return token_dim_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::uint64_t seed() const { return seed_; }

  const Matrix& token_table() const { return table_; }
  const Matrix& projection() const { return projection_; }

  // Mean of the table rows for the given ids; empty ids give a zero row.
  Matrix mean_token_rows(std::span<const std::uint32_t> ids) const;

 private:
  std::size_t vocab_, token_dim_, embed_dim_;
  std::uint64_t seed_;
  Matrix table_;       // vocab x token_dim
  Matrix projection_;  // token_dim x embed_dim
};

// Differentiable concept embedding: mean-pool the learnable context rows
// together with the fixed-token table rows, apply the frozen projection,
// L2-normalize. Gradients reach only the context. `projection` must be a
// constant node holding enc.projection(). Throws DegenerateInputError when
// there is no token at all.
Var encode_concept(Tape& tape, const FrozenEncoder& enc,
                   std::span<const std::uint32_t> fixed_ids,
                   std::optional<Var> context, Var projection);

}  // namespace conceptmil
