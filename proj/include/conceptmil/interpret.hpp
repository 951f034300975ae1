#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conceptmil/concept_bank.hpp"
#include "conceptmil/dataio.hpp"
#include "conceptmil/model.hpp"

namespace conceptmil {

// Per-patch scores of one concept on the slide's patch grid, min-max
// normalized over the slide. Cells without a patch are background.
struct SimilarityMap {
  std::string class_name;
  std::size_t concept_index = 0;
  std::string concept_text;
  std::optional<std::string> source_title;
  std::size_t grid_width = 0;
  std::size_t grid_height = 0;
  std::vector<double> scores;         // grid cells, row-major
  std::vector<std::uint8_t> present;  // 1 where a patch exists
  double raw_min = 0.0;
  double raw_max = 0.0;
};

// Pre-softmax patch-concept similarities for the chosen concept, min-max
// normalized per slide; a constant column maps to 0.5 everywhere.
SimilarityMap similarity_map(const SlideBag& bag, const ForwardResult& forward,
                             const ConceptBank& bank, std::size_t class_index,
                             std::size_t concept_index);

// PGM (P5) heatmap, zoom pixels per cell, background 0; writes a JSON
// sidecar at <path>.json with the concept identity and normalization bounds.
void write_heatmap(const SimilarityMap& map, const std::filesystem::path& path,
                   int zoom = 1);

}  // namespace conceptmil
