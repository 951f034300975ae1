#include "conceptmil/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

using json = nlohmann::ordered_json;

void SlideBag::validate(std::size_t num_classes) const {
  if (patches() == 0) throw ValidationError("bag '" + slide_id + "': no patches");
  if (coords.size() != patches()) {
    throw ValidationError("bag '" + slide_id + "': " + std::to_string(coords.size()) +
                          " coords for " + std::to_string(patches()) + " patches");
  }
  if (num_classes > 0 && label >= num_classes) {
    throw ValidationError("bag '" + slide_id + "': label " + std::to_string(label) +
                          " outside " + std::to_string(num_classes) + " classes");
  }
  embeddings.require_finite("bag embeddings");
}

namespace {

constexpr char kBagMagic[4] = {'C', 'P', 'B', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != data_.size()) {
      throw ParseError("bag file " + path_ + ": trailing bytes after payload");
    }
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw ParseError("bag file " + path_ + ": truncated (needed " +
                       std::to_string(n) + " bytes at offset " +
                       std::to_string(pos_) + ")");
    }
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_bag(const SlideBag& bag, const std::filesystem::path& path) {
  bag.validate(0);
  if (bag.slide_id.size() > 0xffff || bag.patient_id.size() > 0xffff) {
    throw ValidationError("bag ids longer than 65535 bytes");
  }
  std::string out;
  out.append(kBagMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(bag.patches()));
  put_u32(out, static_cast<std::uint32_t>(bag.dim()));
  put_u32(out, bag.label);
  put_u16(out, static_cast<std::uint16_t>(bag.slide_id.size()));
  out += bag.slide_id;
  put_u16(out, static_cast<std::uint16_t>(bag.patient_id.size()));
  out += bag.patient_id;
  for (double v : bag.embeddings.data()) put_f32(out, static_cast<float>(v));
  for (const auto& [x, y] : bag.coords) {
    put_u32(out, x);
    put_u32(out, y);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write bag file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to " + path.string());
}

SlideBag read_bag(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open bag file " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  Reader r(data, path.string());
  if (r.bytes(4) != std::string(kBagMagic, 4)) {
    throw ParseError("bag file " + path.string() + ": bad magic");
  }
  SlideBag bag;
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  bag.label = r.u32();
  bag.slide_id = r.bytes(r.u16());
  bag.patient_id = r.bytes(r.u16());
  Matrix emb(n, d);
  for (double& v : emb.data()) v = static_cast<double>(r.f32());
  bag.embeddings = std::move(emb);
  bag.coords.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t x = r.u32();
    const std::uint32_t y = r.u32();
    bag.coords.emplace_back(x, y);
  }
  r.expect_end();
  bag.validate(0);
  return bag;
}

void Manifest::validate() const {
  if (classes.empty()) throw ValidationError("manifest: empty class list");
  std::set<std::string> ids;
  for (const auto& s : slides) {
    if (!ids.insert(s.slide_id).second) {
      throw ValidationError("manifest: duplicate slide id '" + s.slide_id + "'");
    }
    if (s.label >= classes.size()) {
      throw ValidationError("manifest: slide '" + s.slide_id + "' label " +
                            std::to_string(s.label) + " outside " +
                            std::to_string(classes.size()) + " classes");
    }
  }
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.classes = root.at("classes").get<std::vector<std::string>>();
    for (const auto& js : root.at("slides")) {
      ManifestEntry e;
      e.path = js.at("path").get<std::string>();
      e.slide_id = js.at("slide_id").get<std::string>();
      e.patient_id = js.at("patient_id").get<std::string>();
      e.label = js.at("label").get<std::uint32_t>();
      m.slides.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  json root;
  root["classes"] = classes;
  root["slides"] = json::array();
  for (const auto& s : slides) {
    root["slides"].push_back({{"path", s.path},
                              {"slide_id", s.slide_id},
                              {"patient_id", s.patient_id},
                              {"label", s.label}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << root.dump(2) << '\n';
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (directions_per_class == 0) throw ConfigError("synth: need at least 1 direction per class");
  if (shared_directions > directions_per_class) {
    throw ConfigError("synth: shared_directions exceeds directions_per_class");
  }
  if (bags_per_class == 0) throw ConfigError("synth: need at least 1 bag per class");
  if (dim == 0) throw ConfigError("synth: dim must be positive");
  if (patches_min == 0 || patches_max < patches_min) {
    throw ConfigError("synth: invalid patch count range");
  }
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
    throw ConfigError("synth: signal fraction must lie in (0,1]");
  }
  if (std::ceil(signal_fraction * static_cast<double>(patches_min)) < 1.0) {
    throw ConfigError("synth: signal fraction too small for patch count");
  }
  if (noise_sigma < 0.0) throw ConfigError("synth: noise sigma must be >= 0");
  if (slides_per_patient == 0) throw ConfigError("synth: slides_per_patient must be >= 1");
  if (!directions.empty()) {
    if (directions.size() != num_classes) {
      throw ConfigError("synth: explicit directions must cover every class");
    }
    for (const auto& m : directions) {
      if (m.rows() != directions_per_class || m.cols() != dim) {
        throw ConfigError("synth: direction matrix must be g x dim");
      }
      for (std::size_t r = 0; r < m.rows(); ++r) {
        if (std::fabs(row_norm(m, r) - 1.0) > 1e-9) {
          throw ConfigError("synth: planted directions must be unit norm");
        }
      }
    }
  }
}

namespace {

Matrix unit_row(Rng& rng, std::size_t dim) {
  Matrix row(1, dim);
  double norm = 0.0;
  do {
    row = Matrix(1, dim, rng.normal_vector(dim, 1.0));
    norm = row_norm(row, 0);
  } while (norm == 0.0);
  for (double& v : row.data()) v /= norm;
  return row;
}

}  // namespace

std::vector<Matrix> planted_directions(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!spec.directions.empty()) return spec.directions;
  std::vector<Matrix> shared;
  {
    Rng rng(mix_seed(seed, "synth.shared_directions"));
    for (std::size_t k = 0; k < spec.shared_directions; ++k) {
      shared.push_back(unit_row(rng, spec.dim));
    }
  }
  std::vector<Matrix> out;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    Matrix dirs(spec.directions_per_class, spec.dim);
    Rng rng(mix_seed(seed, "synth.class_directions", c));
    for (std::size_t k = 0; k < spec.directions_per_class; ++k) {
      const Matrix row =
          k < spec.shared_directions ? shared[k] : unit_row(rng, spec.dim);
      std::copy(row.data().begin(), row.data().end(), dirs.row_span(k).begin());
    }
    out.push_back(std::move(dirs));
  }
  return out;
}

Manifest synth_generate(const SynthSpec& spec, std::uint64_t seed,
                        const std::filesystem::path& out_dir) {
  spec.validate();
  const std::vector<Matrix> directions = planted_directions(spec, seed);

  std::filesystem::create_directories(out_dir / "bags");
  Manifest manifest;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    manifest.classes.push_back("class" + std::to_string(c));
  }

  std::size_t bag_counter = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t b = 0; b < spec.bags_per_class; ++b, ++bag_counter) {
      Rng rng(mix_seed(seed, "synth.bag", bag_counter));
      const std::size_t n =
          spec.patches_min + rng.index(spec.patches_max - spec.patches_min + 1);
      const std::size_t n_signal = static_cast<std::size_t>(
          std::ceil(spec.signal_fraction * static_cast<double>(n)));

      SlideBag bag;
      char id[32];
      std::snprintf(id, sizeof(id), "slide_%04zu", bag_counter);
      bag.slide_id = id;
      const std::size_t patient = bag_counter / spec.slides_per_patient;
      std::snprintf(id, sizeof(id), "patient_%04zu", patient);
      bag.patient_id = id;
      bag.label = static_cast<std::uint32_t>(c);

      Matrix emb(n, spec.dim);
      for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        if (i < n_signal) {
          // Planted direction (round-robin) plus isotropic noise, renormalized.
          const std::size_t k = i % spec.directions_per_class;
          for (std::size_t j = 0; j < spec.dim; ++j) {
            emb(i, j) = directions[c](k, j) + spec.noise_sigma * rng.normal();
          }
        } else {
          for (std::size_t j = 0; j < spec.dim; ++j) emb(i, j) = rng.normal();
        }
        norm = row_norm(emb, i);
        if (norm == 0.0) {
          emb(i, 0) = 1.0;
          norm = 1.0;
        }
        for (std::size_t j = 0; j < spec.dim; ++j) emb(i, j) /= norm;
      }
      bag.embeddings = std::move(emb);

      // Row-major square-ish grid coordinates.
      const std::size_t grid_w = static_cast<std::size_t>(
          std::ceil(std::sqrt(static_cast<double>(n))));
      for (std::size_t i = 0; i < n; ++i) {
        bag.coords.emplace_back(static_cast<std::uint32_t>(i % grid_w),
                                static_cast<std::uint32_t>(i / grid_w));
      }

      const std::string file = "bags/" + bag.slide_id + ".cpb";
      write_bag(bag, out_dir / file);
      manifest.slides.push_back(
          ManifestEntry{file, bag.slide_id, bag.patient_id, bag.label});
    }
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

std::vector<SlideBag> load_bags(const Manifest& manifest,
                                const std::filesystem::path& manifest_path) {
  const std::filesystem::path base = manifest_path.parent_path();
  std::vector<SlideBag> bags;
  bags.reserve(manifest.slides.size());
  for (const auto& entry : manifest.slides) {
    SlideBag bag = read_bag(base / entry.path);
    bag.label = entry.label;  // manifest label wins over the bag header
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace conceptmil
