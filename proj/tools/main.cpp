#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "conceptmil/checkpoint.hpp"
#include "conceptmil/concept_bank.hpp"
#include "conceptmil/config.hpp"
#include "conceptmil/dataio.hpp"
#include "conceptmil/errors.hpp"
#include "conceptmil/interpret.hpp"
#include "conceptmil/model.hpp"
#include "conceptmil/preprocess.hpp"
#include "conceptmil/rng.hpp"
#include "conceptmil/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace conceptmil;

namespace {

// Every tunable with its default; the config echo always carries the full
// resolved set.
FlatConfig default_config() {
  FlatConfig c;
  c.set("seed", std::int64_t{0});
  c.set("data.normalize_embeddings", true);
  c.set("data.d", std::int64_t{64});

  c.set("encoder.vocab", std::int64_t{4096});
  c.set("encoder.token_dim", std::int64_t{64});
  c.set("encoder.context_len", std::int64_t{16});
  c.set("encoder.data_context_len", std::int64_t{16});
  c.set("encoder.token_init_std", 0.1);

  c.set("model.alpha", 0.2);
  c.set("model.beta", 0.2);
  c.set("model.tau", 0.07);
  c.set("model.logit_scale", 10.0);
  c.set("model.leaky_slope", 0.01);
  c.set("model.adapter_hidden", std::int64_t{0});
  c.set("model.softmax_over_instances", true);

  c.set("train.lr", 0.0001);
  c.set("train.batch_size", std::int64_t{2});
  c.set("train.epochs", std::int64_t{20});
  c.set("train.lambda_mutual", 0.1);
  c.set("train.folds", std::int64_t{5});
  c.set("train.n_data_driven", std::int64_t{-1});  // -1: use the bank's slots
  c.set("train.no_bag_guidance", false);
  c.set("train.no_adapters", false);
  c.set("train.early_stop_patience", std::int64_t{0});
  c.set("train.early_stop_min_delta", 0.0001);
  c.set("train.parallel_folds", false);

  c.set("bank.expert_concepts_per_class", std::int64_t{26});

  c.set("synth.classes", std::int64_t{2});
  c.set("synth.directions_per_class", std::int64_t{2});
  c.set("synth.shared_directions", std::int64_t{0});
  c.set("synth.expert_directions_per_class", std::int64_t{-1});  // -1: all
  c.set("synth.n_data_driven", std::int64_t{2});
  c.set("synth.bags_per_class", std::int64_t{40});
  c.set("synth.patches_min", std::int64_t{40});
  c.set("synth.patches_max", std::int64_t{60});
  c.set("synth.signal_fraction", 0.3);
  c.set("synth.noise_sigma", 0.2);
  c.set("synth.slides_per_patient", std::int64_t{1});

  c.set("preprocess.saturation_threshold", std::int64_t{20});
  c.set("preprocess.otsu", false);
  c.set("preprocess.median_kernel", std::int64_t{7});
  c.set("preprocess.closing_kernel", std::int64_t{4});
  c.set("preprocess.min_area", std::int64_t{512});
  c.set("preprocess.patch_size", std::int64_t{448});
  c.set("preprocess.downsample", std::int64_t{1});

  c.set("interpret.zoom", std::int64_t{1});
  return c;
}

ModelConfig model_config_from(const FlatConfig& c) {
  ModelConfig m;
  m.vocab = static_cast<std::size_t>(c.get_int("encoder.vocab", 4096));
  m.token_dim = static_cast<std::size_t>(c.get_int("encoder.token_dim", 64));
  m.context_len = static_cast<std::size_t>(c.get_int("encoder.context_len", 16));
  m.data_context_len =
      static_cast<std::size_t>(c.get_int("encoder.data_context_len", 16));
  m.token_init_std = c.get_double("encoder.token_init_std", 0.1);
  m.hyper.alpha = c.get_double("model.alpha", 0.2);
  m.hyper.beta = c.get_double("model.beta", 0.2);
  m.hyper.tau = c.get_double("model.tau", 0.07);
  m.hyper.logit_scale = c.get_double("model.logit_scale", 10.0);
  m.hyper.leaky_slope = c.get_double("model.leaky_slope", 0.01);
  m.hyper.adapter_hidden =
      static_cast<std::size_t>(c.get_int("model.adapter_hidden", 0));
  m.hyper.softmax_over_instances = c.get_bool("model.softmax_over_instances", true);
  return m;
}

TrainConfig train_config_from(const FlatConfig& c) {
  TrainConfig t;
  t.lr = c.get_double("train.lr", 1e-4);
  t.batch_size = static_cast<std::size_t>(c.get_int("train.batch_size", 2));
  t.epochs = static_cast<std::size_t>(c.get_int("train.epochs", 20));
  t.lambda_mutual = c.get_double("train.lambda_mutual", 0.1);
  t.folds = static_cast<std::size_t>(c.get_int("train.folds", 5));
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
  t.normalize_embeddings = c.get_bool("data.normalize_embeddings", true);
  t.no_bag_guidance = c.get_bool("train.no_bag_guidance", false);
  t.no_adapters = c.get_bool("train.no_adapters", false);
  const std::int64_t ndd = c.get_int("train.n_data_driven", -1);
  if (ndd >= 0) t.n_data_driven = static_cast<std::size_t>(ndd);
  t.early_stop_patience =
      static_cast<std::size_t>(c.get_int("train.early_stop_patience", 0));
  t.early_stop_min_delta = c.get_double("train.early_stop_min_delta", 1e-4);
  t.parallel_folds = c.get_bool("train.parallel_folds", false);
  return t;
}

SynthSpec synth_spec_from(const FlatConfig& c) {
  SynthSpec s;
  s.num_classes = static_cast<std::size_t>(c.get_int("synth.classes", 2));
  s.directions_per_class =
      static_cast<std::size_t>(c.get_int("synth.directions_per_class", 2));
  s.shared_directions =
      static_cast<std::size_t>(c.get_int("synth.shared_directions", 0));
  s.bags_per_class = static_cast<std::size_t>(c.get_int("synth.bags_per_class", 40));
  s.dim = static_cast<std::size_t>(c.get_int("data.d", 64));
  s.patches_min = static_cast<std::size_t>(c.get_int("synth.patches_min", 40));
  s.patches_max = static_cast<std::size_t>(c.get_int("synth.patches_max", 60));
  s.signal_fraction = c.get_double("synth.signal_fraction", 0.3);
  s.noise_sigma = c.get_double("synth.noise_sigma", 0.2);
  s.slides_per_patient =
      static_cast<std::size_t>(c.get_int("synth.slides_per_patient", 1));
  return s;
}

SegParams seg_params_from(const FlatConfig& c) {
  SegParams p;
  p.saturation_threshold =
      static_cast<int>(c.get_int("preprocess.saturation_threshold", 20));
  p.otsu = c.get_bool("preprocess.otsu", false);
  p.median_kernel = static_cast<int>(c.get_int("preprocess.median_kernel", 7));
  p.closing_kernel = static_cast<int>(c.get_int("preprocess.closing_kernel", 4));
  p.min_area = static_cast<int>(c.get_int("preprocess.min_area", 512));
  p.patch_size = static_cast<int>(c.get_int("preprocess.patch_size", 448));
  p.downsample = static_cast<int>(c.get_int("preprocess.downsample", 1));
  return p;
}

void write_echo(const FlatConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  config.save(out_dir / "config_echo.toml");
}

std::vector<SlideBag> load_normalized_bags(const Manifest& manifest,
                                           const fs::path& manifest_path,
                                           bool normalize) {
  std::vector<SlideBag> bags = load_bags(manifest, manifest_path);
  if (normalize) {
    for (auto& bag : bags) bag.embeddings = normalized_rows(bag.embeddings);
  }
  return bags;
}

void note_bank_shape(const ConceptBank& bank, const FlatConfig& config) {
  const std::int64_t expected = config.get_int("bank.expert_concepts_per_class", 26);
  for (const auto& cls : bank.classes) {
    if (expected >= 0 &&
        cls.expert_concepts.size() != static_cast<std::size_t>(expected)) {
      std::cerr << "note: class '" << cls.name << "' has "
                << cls.expert_concepts.size() << " expert concepts (configured "
                << expected << ")\n";
    }
  }
}

// Exports the planted directions of a synthetic dataset as a concept bank:
// the leading directions become precomputed expert concepts, the rest is
// left to data-driven slots.
ConceptBank synth_bank(const SynthSpec& spec, std::uint64_t seed,
                       std::int64_t expert_directions, std::size_t n_data_driven) {
  const auto directions = planted_directions(spec, seed);
  const std::size_t n_expert =
      expert_directions < 0
          ? spec.directions_per_class
          : std::min<std::size_t>(static_cast<std::size_t>(expert_directions),
                                  spec.directions_per_class);
  ConceptBank bank;
  bank.task = "synthetic planted-concept classification";
  bank.embed_dim = spec.dim;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    ClassEntry cls;
    cls.name = "class" + std::to_string(c);
    cls.class_prompt = "synthetic slide of class " + std::to_string(c) +
                       " with planted concept directions";
    for (std::size_t k = 0; k < n_expert; ++k) {
      ExpertConcept ec;
      ec.class_name = cls.name;
      ec.text = "planted factor " + std::to_string(k) + " of class " +
                std::to_string(c);
      ec.source.title = "synthetic planted-concept generator";
      ec.source.locator = "synth://class/" + std::to_string(c) + "/direction/" +
                          std::to_string(k);
      ec.embedding = std::vector<double>(directions[c].row_span(k).begin(),
                                         directions[c].row_span(k).end());
      cls.expert_concepts.push_back(std::move(ec));
    }
    cls.n_data_driven = n_data_driven;
    bank.classes.push_back(std::move(cls));
  }
  bank.validate();
  return bank;
}

EpochLogger stdout_logger(std::ofstream* csv) {
  return [csv](const EpochStats& stats) {
    std::printf("epoch %3zu  loss %.6f  %.2fs\n", stats.epoch, stats.mean_loss,
                stats.wall_seconds);
    std::fflush(stdout);
    if (csv && csv->is_open()) {
      (*csv) << stats.epoch << "," << stats.mean_loss << "," << stats.wall_seconds
             << "\n";
    }
  };
}

int cmd_synth(const FlatConfig& config, const fs::path& out_dir) {
  const auto seed = static_cast<std::uint64_t>(config.get_int("seed", 0));
  SynthSpec spec = synth_spec_from(config);
  const Manifest manifest = synth_generate(spec, seed, out_dir);
  const ConceptBank bank = synth_bank(
      spec, seed, config.get_int("synth.expert_directions_per_class", -1),
      static_cast<std::size_t>(config.get_int("synth.n_data_driven", 2)));
  bank.save(out_dir / "bank.json");
  write_echo(config, out_dir);
  std::printf("wrote %zu bags (%zu classes) under %s\n", manifest.slides.size(),
              manifest.classes.size(), out_dir.string().c_str());
  return 0;
}

int cmd_train(const FlatConfig& config, const fs::path& manifest_path,
              const fs::path& bank_path, const fs::path& out_dir,
              const std::string& log_csv) {
  const Manifest manifest = Manifest::load(manifest_path);
  const TrainConfig train_config = train_config_from(config);
  ConceptBank bank = apply_data_driven_override(ConceptBank::load(bank_path),
                                                train_config.n_data_driven);
  note_bank_shape(bank, config);
  ModelConfig model_config = model_config_from(config);
  model_config.hyper = apply_ablations(model_config.hyper, train_config);

  const auto bags = load_normalized_bags(manifest, manifest_path,
                                         train_config.normalize_embeddings);
  std::vector<const SlideBag*> bag_ptrs;
  for (const auto& b : bags) bag_ptrs.push_back(&b);

  Model model = Model::create(bank, model_config, train_config.seed);
  fs::create_directories(out_dir);
  std::ofstream csv;
  if (!log_csv.empty()) {
    csv.open(log_csv);
    csv << "epoch,mean_loss,wall_seconds\n";
  }
  train_model(model, bag_ptrs, train_config,
              mix_seed(train_config.seed, "train"), stdout_logger(&csv));
  save_checkpoint(model, out_dir / "model.ckpt");
  write_echo(config, out_dir);
  std::printf("checkpoint written to %s\n",
              (out_dir / "model.ckpt").string().c_str());
  return 0;
}

int cmd_cv(const FlatConfig& config, const fs::path& manifest_path,
           const fs::path& bank_path, const fs::path& out_dir) {
  const Manifest manifest = Manifest::load(manifest_path);
  const TrainConfig train_config = train_config_from(config);
  const ConceptBank bank = ConceptBank::load(bank_path);
  note_bank_shape(bank, config);
  const ModelConfig model_config = model_config_from(config);
  const auto bags = load_normalized_bags(manifest, manifest_path,
                                         train_config.normalize_embeddings);

  CVRun run = cross_validate(manifest, bags, bank, model_config, train_config,
                             stdout_logger(nullptr));

  fs::create_directories(out_dir);
  for (std::size_t f = 0; f < run.fold_models.size(); ++f) {
    save_checkpoint(run.fold_models[f],
                    out_dir / ("fold" + std::to_string(f) + ".ckpt"));
  }
  {
    std::ofstream report(out_dir / "report.json", std::ios::binary);
    report << run.report.to_json();
  }
  {
    std::ofstream table(out_dir / "report.txt", std::ios::binary);
    table << run.report.table();
  }
  write_echo(config, out_dir);
  std::cout << run.report.table();
  std::printf("mean AUC %.4f (std %.4f) over %zu folds\n", run.report.mean.auc,
              run.report.stddev.auc, run.report.folds.size());
  return 0;
}

int cmd_infer(const FlatConfig& config, const fs::path& checkpoint_path,
              const fs::path& bank_path, const fs::path& bag_path,
              const std::string& out_file) {
  Model model = load_checkpoint(checkpoint_path, ConceptBank::load(bank_path));
  SlideBag bag = read_bag(bag_path);
  if (config.get_bool("data.normalize_embeddings", true)) {
    bag.embeddings = normalized_rows(bag.embeddings);
  }
  const auto probs = predict(model, bag);
  json out;
  out["slide_id"] = bag.slide_id;
  out["probabilities"] = json::object();
  for (std::size_t c = 0; c < probs.size(); ++c) {
    out["probabilities"][model.bank.classes[c].name] = probs[c];
  }
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) {
    std::ofstream f(out_file, std::ios::binary);
    if (!f) throw IoError("cannot write " + out_file);
    f << text;
    write_echo(config, fs::path(out_file).parent_path());
  }
  return 0;
}

int cmd_heatmap(const FlatConfig& config, const fs::path& checkpoint_path,
                const fs::path& bank_path, const fs::path& bag_path,
                const std::string& class_name, std::size_t concept_index,
                const fs::path& out_file) {
  Model model = load_checkpoint(checkpoint_path, ConceptBank::load(bank_path));
  SlideBag bag = read_bag(bag_path);
  if (config.get_bool("data.normalize_embeddings", true)) {
    bag.embeddings = normalized_rows(bag.embeddings);
  }
  const auto class_idx = model.bank.class_index(class_name);
  if (!class_idx) {
    throw ValidationError("unknown class '" + class_name + "'");
  }
  Tape tape;
  ParamRegistry registry;
  const ForwardResult fwd = forward(tape, bag.embeddings, model, registry);
  const SimilarityMap map =
      similarity_map(bag, fwd, model.bank, *class_idx, concept_index);
  const int zoom = static_cast<int>(config.get_int("interpret.zoom", 1));
  write_heatmap(map, out_file, zoom);
  if (out_file.has_parent_path()) write_echo(config, out_file.parent_path());
  std::printf("heatmap written to %s\n", out_file.string().c_str());
  return 0;
}

int cmd_preprocess(const FlatConfig& config, const fs::path& image_path,
                   const fs::path& out_dir, const std::string& slide_id,
                   const std::string& patient_id, std::uint32_t label) {
  const auto seed = static_cast<std::uint64_t>(config.get_int("seed", 0));
  const SegParams params = seg_params_from(config);
  const auto dim = static_cast<std::size_t>(config.get_int("data.d", 64));

  const RasterImage img = RasterImage::load(image_path);
  const TissueMask mask = segment_tissue(img, params);
  const auto coords = tile(mask, params);

  fs::create_directories(out_dir);
  mask.save_pgm(out_dir / "mask.pgm");
  json jcoords = json::array();
  for (const auto& [x, y] : coords) jcoords.push_back({x, y});
  {
    std::ofstream f(out_dir / "coords.json", std::ios::binary);
    f << jcoords.dump() << "\n";
  }
  if (!coords.empty()) {
    SlideBag bag;
    bag.slide_id = slide_id.empty() ? image_path.stem().string() : slide_id;
    bag.patient_id = patient_id.empty() ? bag.slide_id : patient_id;
    bag.label = label;
    bag.coords = coords;
    bag.embeddings = stub_featurize(img, coords, params, dim, seed);
    write_bag(bag, out_dir / "bag.cpb");
  }
  write_echo(config, out_dir);
  std::printf("mask area %zu px, %zu patches%s\n", mask.area(), coords.size(),
              coords.empty() ? " (no bag written)" : "");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concept-guided multiple-instance learning for whole-slide images"};
  app.require_subcommand(1);

  std::string config_file;
  std::optional<std::int64_t> seed_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "TOML config file");
    cmd->add_option("--seed", seed_flag, "RNG seed (overrides config)");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a planted-concept dataset");
  std::string synth_out = "synth_out";
  synth->add_option("--out", synth_out, "output directory");
  std::optional<std::int64_t> opt_classes, opt_bags, opt_dirs, opt_shared,
      opt_expdirs, opt_ndd_synth, opt_pmin, opt_pmax, opt_spp, opt_dim;
  std::optional<double> opt_rho, opt_sigma;
  synth->add_option("--classes", opt_classes);
  synth->add_option("--bags-per-class", opt_bags);
  synth->add_option("--directions-per-class", opt_dirs);
  synth->add_option("--shared-directions", opt_shared);
  synth->add_option("--expert-directions", opt_expdirs);
  synth->add_option("--n-data-driven", opt_ndd_synth);
  synth->add_option("--patches-min", opt_pmin);
  synth->add_option("--patches-max", opt_pmax);
  synth->add_option("--slides-per-patient", opt_spp);
  synth->add_option("--dim", opt_dim);
  synth->add_option("--signal-fraction", opt_rho);
  synth->add_option("--noise-sigma", opt_sigma);
  add_common(synth);

  // shared train/cv flags
  std::string manifest_file, bank_file, out_dir = "run_out", log_csv;
  std::optional<double> opt_lr, opt_lambda;
  std::optional<std::int64_t> opt_epochs, opt_batch, opt_folds, opt_ndd;
  bool flag_no_bag = false, flag_no_adapters = false, flag_parallel = false;

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", manifest_file, "dataset manifest JSON")
        ->required();
    cmd->add_option("--bank", bank_file, "concept bank JSON")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--lr", opt_lr);
    cmd->add_option("--epochs", opt_epochs);
    cmd->add_option("--batch-size", opt_batch);
    cmd->add_option("--lambda", opt_lambda);
    cmd->add_option("--n-data-driven", opt_ndd);
    cmd->add_flag("--no-bag-guidance", flag_no_bag);
    cmd->add_flag("--no-adapters", flag_no_adapters);
    add_common(cmd);
  };

  auto* train = app.add_subcommand("train", "train on every manifest slide");
  add_train_flags(train);
  train->add_option("--log-csv", log_csv, "epoch log CSV path");

  auto* cv = app.add_subcommand("cv", "patient-level k-fold cross-validation");
  add_train_flags(cv);
  cv->add_option("--folds", opt_folds);
  cv->add_flag("--parallel-folds", flag_parallel);

  // infer
  auto* infer = app.add_subcommand("infer", "classify one bag");
  std::string ckpt_file, bag_file, infer_out;
  infer->add_option("--checkpoint", ckpt_file)->required();
  infer->add_option("--bank", bank_file)->required();
  infer->add_option("--bag", bag_file)->required();
  infer->add_option("--out", infer_out, "also write the JSON here");
  add_common(infer);

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "per-concept similarity map");
  std::string class_name, heatmap_out = "heatmap.pgm";
  std::int64_t concept_index = 0, zoom_flag = -1;
  heatmap->add_option("--checkpoint", ckpt_file)->required();
  heatmap->add_option("--bank", bank_file)->required();
  heatmap->add_option("--bag", bag_file)->required();
  heatmap->add_option("--class", class_name, "class name")->required();
  heatmap->add_option("--concept", concept_index, "concept index within the class");
  heatmap->add_option("--out", heatmap_out);
  heatmap->add_option("--zoom", zoom_flag, "pixels per grid cell");
  add_common(heatmap);

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "image -> mask/coords/bag");
  std::string image_file, slide_id, patient_id;
  std::string prep_out = "prep_out";
  std::int64_t label = 0;
  std::optional<std::int64_t> opt_sat, opt_median, opt_close, opt_min_area,
      opt_patch, opt_down;
  bool flag_otsu = false;
  preprocess->add_option("--image", image_file, "PPM (P6) or PNG image")->required();
  preprocess->add_option("--out", prep_out, "output directory");
  preprocess->add_option("--slide-id", slide_id);
  preprocess->add_option("--patient-id", patient_id);
  preprocess->add_option("--label", label);
  preprocess->add_option("--saturation-threshold", opt_sat);
  preprocess->add_flag("--otsu", flag_otsu);
  preprocess->add_option("--median-kernel", opt_median);
  preprocess->add_option("--closing-kernel", opt_close);
  preprocess->add_option("--min-area", opt_min_area);
  preprocess->add_option("--patch-size", opt_patch);
  preprocess->add_option("--downsample", opt_down);
  add_common(preprocess);

  CLI11_PARSE(app, argc, argv);

  try {
    FlatConfig config = default_config();
    if (!config_file.empty()) config.merge(FlatConfig::parse_file(config_file));
    if (seed_flag) config.set("seed", *seed_flag);

    auto set_if = [&](const char* key, const auto& opt) {
      if (opt) config.set(key, *opt);
    };

    if (synth->parsed()) {
      set_if("synth.classes", opt_classes);
      set_if("synth.bags_per_class", opt_bags);
      set_if("synth.directions_per_class", opt_dirs);
      set_if("synth.shared_directions", opt_shared);
      set_if("synth.expert_directions_per_class", opt_expdirs);
      set_if("synth.n_data_driven", opt_ndd_synth);
      set_if("synth.patches_min", opt_pmin);
      set_if("synth.patches_max", opt_pmax);
      set_if("synth.slides_per_patient", opt_spp);
      set_if("data.d", opt_dim);
      set_if("synth.signal_fraction", opt_rho);
      set_if("synth.noise_sigma", opt_sigma);
      return cmd_synth(config, synth_out);
    }

    if (train->parsed() || cv->parsed()) {
      set_if("train.lr", opt_lr);
      set_if("train.epochs", opt_epochs);
      set_if("train.batch_size", opt_batch);
      set_if("train.lambda_mutual", opt_lambda);
      set_if("train.n_data_driven", opt_ndd);
      set_if("train.folds", opt_folds);
      if (flag_no_bag) config.set("train.no_bag_guidance", true);
      if (flag_no_adapters) config.set("train.no_adapters", true);
      if (flag_parallel) config.set("train.parallel_folds", true);
      if (train->parsed()) {
        return cmd_train(config, manifest_file, bank_file, out_dir, log_csv);
      }
      return cmd_cv(config, manifest_file, bank_file, out_dir);
    }

    if (infer->parsed()) {
      return cmd_infer(config, ckpt_file, bank_file, bag_file, infer_out);
    }

    if (heatmap->parsed()) {
      if (zoom_flag > 0) config.set("interpret.zoom", zoom_flag);
      return cmd_heatmap(config, ckpt_file, bank_file, bag_file, class_name,
                         static_cast<std::size_t>(concept_index), heatmap_out);
    }

    if (preprocess->parsed()) {
      set_if("preprocess.saturation_threshold", opt_sat);
      if (flag_otsu) config.set("preprocess.otsu", true);
      set_if("preprocess.median_kernel", opt_median);
      set_if("preprocess.closing_kernel", opt_close);
      set_if("preprocess.min_area", opt_min_area);
      set_if("preprocess.patch_size", opt_patch);
      set_if("preprocess.downsample", opt_down);
      return cmd_preprocess(config, image_file, prep_out, slide_id, patient_id,
                            static_cast<std::uint32_t>(label));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
