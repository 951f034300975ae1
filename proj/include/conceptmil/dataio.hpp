#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "conceptmil/matrix.hpp"

namespace conceptmil {

// One slide as a bag of patch embeddings with grid coordinates. Embeddings
// are doubles in memory; the file format carries 32-bit floats.
struct SlideBag {
  std::string slide_id;
  std::string patient_id;
  std::uint32_t label = 0;
  Matrix embeddings;  // n x d
  std::vector<std::pair<std::uint32_t, std::uint32_t>> coords;  // patch units

  std::size_t patches() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
  void validate(std::size_t num_classes) const;
};

// Binary bag file, little-endian:
//   magic "CPB1", u32 n, u32 d, u32 label,
//   u16 len + UTF-8 slide id, u16 len + UTF-8 patient id,
//   n*d f32 embeddings row-major, n*2 u32 coords.
void write_bag(const SlideBag& bag, const std::filesystem::path& path);
SlideBag read_bag(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the manifest file
  std::string slide_id;
  std::string patient_id;
  std::uint32_t label = 0;
};

struct Manifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> slides;

  void validate() const;
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Synthetic dataset with planted per-class concept directions: the
// verification oracle for the whole training pipeline.
struct SynthSpec {
  std::size_t num_classes = 2;
  std::size_t directions_per_class = 2;
  // The first `shared_directions` directions are identical across classes
  // (confounders); the rest are class-specific.
  std::size_t shared_directions = 0;
  std::size_t bags_per_class = 40;
  std::size_t dim = 64;
  std::size_t patches_min = 40;
  std::size_t patches_max = 60;
  double signal_fraction = 0.3;  // rho
  double noise_sigma = 0.2;
  std::size_t slides_per_patient = 1;
  // Optional explicit directions, outer index class, inner g x dim matrix.
  std::vector<Matrix> directions;

  void validate() const;
};

// Deterministic planted directions for the spec (generated unless provided).
std::vector<Matrix> planted_directions(const SynthSpec& spec, std::uint64_t seed);

// Writes bags/ plus manifest.json under out_dir and returns the manifest.
// Byte-identical output for identical (spec, seed).
Manifest synth_generate(const SynthSpec& spec, std::uint64_t seed,
                        const std::filesystem::path& out_dir);

// Loads every bag referenced by a manifest (paths resolved relative to the
// manifest's directory).
std::vector<SlideBag> load_bags(const Manifest& manifest,
                                const std::filesystem::path& manifest_path);

}  // namespace conceptmil
