#pragma once

// Shared fixtures for the test suites.

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "conceptmil/concept_bank.hpp"
#include "conceptmil/matrix.hpp"
#include "conceptmil/rng.hpp"

namespace testutil {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("conceptmil_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline conceptmil::Matrix random_matrix(std::size_t rows, std::size_t cols,
                                        std::uint64_t seed, double stddev = 1.0) {
  conceptmil::Rng rng(seed);
  return conceptmil::Matrix(rows, cols, rng.normal_vector(rows * cols, stddev));
}

inline conceptmil::ConceptSource test_source(const std::string& title = "test source") {
  return conceptmil::ConceptSource{title, "file://test", std::nullopt};
}

// Small bank with text expert concepts and data-driven slots.
inline conceptmil::ConceptBank tiny_bank(std::size_t num_classes = 2,
                                         std::size_t experts_per_class = 2,
                                         std::size_t data_driven = 1,
                                         std::size_t embed_dim = 8) {
  conceptmil::ConceptBank bank;
  bank.task = "tiny test task";
  bank.embed_dim = embed_dim;
  for (std::size_t c = 0; c < num_classes; ++c) {
    conceptmil::ClassEntry cls;
    cls.name = "class" + std::to_string(c);
    cls.class_prompt = "a slide of class " + std::to_string(c);
    for (std::size_t e = 0; e < experts_per_class; ++e) {
      conceptmil::ExpertConcept ec;
      ec.class_name = cls.name;
      ec.text = "marker " + std::to_string(e) + " of class " + std::to_string(c);
      ec.source = test_source();
      cls.expert_concepts.push_back(std::move(ec));
    }
    cls.n_data_driven = data_driven;
    bank.classes.push_back(std::move(cls));
  }
  return bank;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace testutil
