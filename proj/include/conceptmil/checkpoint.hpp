#pragma once

#include <filesystem>

#include "conceptmil/model.hpp"

namespace conceptmil {

// Checkpoint file: a little-endian u32 header length, a JSON header (dims,
// seed, hyperparameters, concept ordering, weight manifest), then 32-bit
// little-endian float blobs in the header-declared order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);

// Rebuilds the model from a checkpoint plus the bank it was trained with.
// The bank must structurally match the header (class names, concept counts
// and order, text hashes, embedding flags); mismatches raise ValidationError.
Model load_checkpoint(const std::filesystem::path& path, ConceptBank bank);

}  // namespace conceptmil
