// Command-line entry point: train / eval / ablate / synth / selftest.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <streambuf>
#include <string>

#include "sfusnet/config.hpp"
#include "sfusnet/selftest.hpp"
#include "sfusnet/train.hpp"

namespace {

// Exit codes: 0 success, 1 generic/selftest failure, 2 config error,
// 3 data error, 4 numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct NullBuf : std::streambuf {
  int overflow(int c) override { return c; }
};

// SFUSNET_LOG=quiet silences informational output (verbosity only).
std::ostream& log_stream() {
  static NullBuf null_buf;
  static std::ostream null_stream(&null_buf);
  const char* v = std::getenv("SFUSNET_LOG");
  if (v && std::string(v) == "quiet") return null_stream;
  return std::cout;
}

struct CommonFlags {
  std::string config_file;
  std::string preset = "desk";
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
  sfus::index_t epochs = -1;
  sfus::index_t batch_size = -1;
  sfus::index_t folds = -1;
  sfus::index_t synth_per_class = -1;
  sfus::index_t synth_size = -1;
  int threads = -1;
  std::string precision;
  bool deterministic = true;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file (see README for the schema)");
  cmd->add_option("--preset", f.preset, "base profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--dataset", f.dataset, "dataset directory, or 'synthetic'");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "base seed; derives all five seed streams")
      ->each([&f](const std::string&) { f.has_seed = true; });
  cmd->add_option("--epochs", f.epochs, "training epochs per fold");
  cmd->add_option("--batch-size", f.batch_size, "batch size");
  cmd->add_option("--folds", f.folds, "cross-validation folds");
  cmd->add_option("--synth-per-class", f.synth_per_class, "synthetic images per class");
  cmd->add_option("--synth-size", f.synth_size, "synthetic image extent");
  cmd->add_option("--threads", f.threads, "worker threads (0 = hardware)");
  cmd->add_option("--precision", f.precision, "f64 (default) or f32 training mode")
      ->check(CLI::IsMember({"f64", "f32"}));
  cmd->add_flag("--deterministic,!--no-deterministic", f.deterministic,
                "pin reduction order and thread partition (default on)");
}

sfus::ExperimentConfig resolve_config(const CommonFlags& f) {
  sfus::ExperimentConfig cfg = f.preset == "paper" ? sfus::paper_preset() : sfus::desk_preset();
  if (!f.config_file.empty()) cfg = sfus::load_config_file(f.config_file, cfg);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.has_seed) cfg.seeds = sfus::SeedPack::from_base(f.seed);
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.batch_size >= 0) cfg.batch_size = f.batch_size;
  if (f.folds >= 0) cfg.folds = f.folds;
  if (f.synth_per_class >= 0) cfg.synth.per_class = f.synth_per_class;
  if (f.synth_size >= 0) cfg.synth.size = f.synth_size;
  if (f.threads >= 0) cfg.threads = f.threads;
  if (!f.precision.empty()) cfg.precision = f.precision;
  cfg.deterministic = f.deterministic;
  try {
    cfg.validate();
  } catch (const sfus::Error& e) {
    throw sfus::ConfigError(e.what());
  }
  return cfg;
}

// Resolved config is echoed into the output directory before any work runs.
void echo_config(const sfus::ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  sfus::write_text((std::filesystem::path(cfg.out_dir) / "resolved_config.json").string(),
                   sfus::to_json(cfg).dump(2) + "\n");
}

int run_train(const CommonFlags& flags) {
  sfus::ExperimentConfig cfg = resolve_config(flags);
  echo_config(cfg);
  if (cfg.precision == "f32")
    sfus::train_experiment<float>(cfg, log_stream());
  else
    sfus::train_experiment<double>(cfg, log_stream());
  return kExitOk;
}

int run_ablate(const CommonFlags& flags) {
  sfus::ExperimentConfig cfg = resolve_config(flags);
  echo_config(cfg);
  if (cfg.precision == "f32")
    sfus::ablate_experiment<float>(cfg, log_stream());
  else
    sfus::ablate_experiment<double>(cfg, log_stream());
  return kExitOk;
}

int run_synth(const std::string& out_dir, sfus::index_t per_class, sfus::index_t size,
              std::uint64_t seed, const std::string& format) {
  namespace fs = std::filesystem;
  sfus::SynthDataset ds = sfus::synth_dataset(per_class, size, seed);
  for (const auto& name : ds.class_names) fs::create_directories(fs::path(out_dir) / name);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& img = ds.images[i];
    const sfus::ImageU8 u8 = sfus::image_from_tensor(img.pixels);
    fs::path p = fs::path(out_dir) / img.source_id;
    if (format == "bmp") {
      p.replace_extension(".bmp");
      sfus::save_bmp(p.string(), u8);
    } else {
      sfus::save_png(p.string(), u8);
    }
  }
  log_stream() << "wrote " << ds.images.size() << " images under " << out_dir << "\n";
  return kExitOk;
}

int run_selftest_cmd(bool corrupt_fft, int threads) {
  sfus::set_num_threads(threads);
  if (corrupt_fft) sfus::irfft_scale_hook() = 1.01;  // negative-control hook
  bool all_ok = true;
  std::vector<sfus::SuiteResult> results;
  try {
    results = sfus::run_selftest();
  } catch (const std::exception& e) {
    // corrupted transforms may trip internal numeric guards instead of
    // producing out-of-tolerance values
    std::cout << "[FAIL] selftest aborted: " << e.what() << "\n";
    return kExitFailure;
  }
  for (const auto& r : results) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    all_ok = all_ok && r.passed;
  }
  return all_ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SFUSNet: spatial/frequency-domain CNN experiments"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "k-fold training run");
  add_common(train_cmd, train_flags);

  CommonFlags ablate_flags;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train full and no-FFT-branch variants side by side");
  add_common(ablate_cmd, ablate_flags);

  sfus::EvalOptions eval_opts;
  std::string eval_precision = "f64";
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", eval_opts.dataset,
                       "dataset directory, 'synthetic', or 'auto' (checkpoint's own)");
  eval_cmd->add_option("--out", eval_opts.out_dir, "output directory for the report");
  eval_cmd->add_option("--batch-size", eval_opts.batch_size, "evaluation batch size");
  eval_cmd->add_option("--threads", eval_opts.threads, "worker threads (0 = hardware)");
  eval_cmd->add_flag("--use-fold-split", eval_opts.use_fold_split,
                     "evaluate only the checkpoint's held-out fold");
  eval_cmd->add_option("--precision", eval_precision, "f64 or f32")
      ->check(CLI::IsMember({"f64", "f32"}));

  std::string synth_out = "synth_data";
  sfus::index_t synth_pc = 10, synth_sz = 64;
  std::uint64_t synth_seed = 505;
  std::string synth_format = "png";
  CLI::App* synth_cmd = app.add_subcommand("synth", "write the synthetic dataset to disk");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--per-class", synth_pc, "images per class");
  synth_cmd->add_option("--size", synth_sz, "image extent");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--format", synth_format, "png or bmp")
      ->check(CLI::IsMember({"png", "bmp"}));

  bool corrupt_fft = false;
  int selftest_threads = 0;
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the built-in oracle suites");
  selftest_cmd->add_flag("--corrupt-fft", corrupt_fft,
                         "negative control: corrupt the inverse-FFT scale");
  selftest_cmd->add_option("--threads", selftest_threads, "worker threads (0 = hardware)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_flags);
    if (*ablate_cmd) return run_ablate(ablate_flags);
    if (*eval_cmd) {
      if (eval_precision == "f32")
        sfus::eval_checkpoint<float>(eval_opts, log_stream());
      else
        sfus::eval_checkpoint<double>(eval_opts, log_stream());
      return kExitOk;
    }
    if (*synth_cmd) return run_synth(synth_out, synth_pc, synth_sz, synth_seed, synth_format);
    if (*selftest_cmd) return run_selftest_cmd(corrupt_fft, selftest_threads);
  } catch (const sfus::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sfus::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const sfus::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
