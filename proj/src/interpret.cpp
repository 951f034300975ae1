#include "conceptmil/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "conceptmil/errors.hpp"

namespace conceptmil {

using json = nlohmann::ordered_json;

SimilarityMap similarity_map(const SlideBag& bag, const ForwardResult& forward,
                             const ConceptBank& bank, std::size_t class_index,
                             std::size_t concept_index) {
  if (class_index >= bank.num_classes()) {
    throw ValidationError("similarity_map: class index " +
                          std::to_string(class_index) + " outside " +
                          std::to_string(bank.num_classes()) + " classes");
  }
  const Matrix& raw = forward.raw_similarities.at(class_index);
  if (concept_index >= raw.cols()) {
    throw ValidationError("similarity_map: concept index " +
                          std::to_string(concept_index) + " outside " +
                          std::to_string(raw.cols()) + " concepts");
  }
  if (raw.rows() != bag.patches()) {
    throw ValidationError("similarity_map: forward output is for a different bag");
  }

  SimilarityMap map;
  const ClassEntry& cls = bank.classes[class_index];
  map.class_name = cls.name;
  map.concept_index = concept_index;
  if (concept_index < cls.expert_concepts.size()) {
    map.concept_text = cls.expert_concepts[concept_index].text;
    map.source_title = cls.expert_concepts[concept_index].source.title;
  } else {
    map.concept_text = "data-driven concept " +
                       std::to_string(concept_index - cls.expert_concepts.size());
  }

  std::size_t max_x = 0, max_y = 0;
  for (const auto& [x, y] : bag.coords) {
    max_x = std::max<std::size_t>(max_x, x);
    max_y = std::max<std::size_t>(max_y, y);
  }
  map.grid_width = max_x + 1;
  map.grid_height = max_y + 1;
  map.scores.assign(map.grid_width * map.grid_height, 0.0);
  map.present.assign(map.grid_width * map.grid_height, 0);

  map.raw_min = raw(0, concept_index);
  map.raw_max = map.raw_min;
  for (std::size_t i = 0; i < bag.patches(); ++i) {
    map.raw_min = std::min(map.raw_min, raw(i, concept_index));
    map.raw_max = std::max(map.raw_max, raw(i, concept_index));
  }
  const double span = map.raw_max - map.raw_min;
  const bool constant = span <= 1e-12;
  for (std::size_t i = 0; i < bag.patches(); ++i) {
    const std::size_t cell = static_cast<std::size_t>(bag.coords[i].second) *
                                 map.grid_width +
                             bag.coords[i].first;
    map.present[cell] = 1;
    map.scores[cell] =
        constant ? 0.5 : (raw(i, concept_index) - map.raw_min) / span;
  }
  return map;
}

void write_heatmap(const SimilarityMap& map, const std::filesystem::path& path,
                   int zoom) {
  if (zoom < 1) throw ConfigError("write_heatmap: zoom must be >= 1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write heatmap " + path.string());
  const std::size_t w = map.grid_width * static_cast<std::size_t>(zoom);
  const std::size_t h = map.grid_height * static_cast<std::size_t>(zoom);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cell =
          (y / zoom) * map.grid_width + (x / zoom);
      const std::uint8_t v =
          map.present[cell]
              ? static_cast<std::uint8_t>(std::lround(map.scores[cell] * 255.0))
              : 0;
      out.put(static_cast<char>(v));
    }
  }
  if (!out) throw IoError("short write to heatmap " + path.string());

  json side;
  side["class"] = map.class_name;
  side["concept_index"] = map.concept_index;
  side["concept_text"] = map.concept_text;
  if (map.source_title) side["source_title"] = *map.source_title;
  side["raw_min"] = map.raw_min;
  side["raw_max"] = map.raw_max;
  side["grid"] = {{"width", map.grid_width}, {"height", map.grid_height}};
  side["zoom"] = zoom;
  std::ofstream sidecar(path.string() + ".json");
  if (!sidecar) throw IoError("cannot write sidecar for " + path.string());
  sidecar << side.dump(2) << '\n';
}

}  // namespace conceptmil
