#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sfusnet/checkpoint.hpp"
#include "sfusnet/config.hpp"
#include "sfusnet/data.hpp"
#include "sfusnet/report.hpp"

namespace sfus {

struct EpochLog {
  index_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_accuracy = 0;
};

struct FoldRunResult {
  index_t fold = 0;
  std::vector<EpochLog> epochs;
  double wall_seconds = 0;
  ConfusionMatrix val_confusion;
  double val_accuracy = 0;
  index_t best_epoch = 0;
  std::string checkpoint_final;
  std::string checkpoint_best;
};

struct TrainOutcome {
  FoldReport report;
  std::vector<FoldRunResult> folds;
  std::vector<std::string> class_names;
  index_t parameter_count = 0;
};

// Images resized to the model input, normalized, flattened; scalar cast
// happens at batch assembly.
struct PreparedDataset {
  std::vector<std::string> class_names;
  std::vector<index_t> labels;
  std::vector<std::string> source_ids;
  std::vector<ArrayX<double>> pixels;
  index_t input_size = 0;
};

inline PreparedDataset prepare_dataset(const ExperimentConfig& cfg, std::ostream& log) {
  PreparedDataset out;
  out.input_size = cfg.model.input_size;
  std::vector<LabeledImage> images;
  if (cfg.dataset == "synthetic") {
    log << "generating synthetic dataset: 4 classes x " << cfg.synth.per_class << " x "
        << cfg.synth.size << "x" << cfg.synth.size << " (seed " << cfg.seeds.data << ")\n";
    SynthDataset ds = synth_dataset(cfg.synth.per_class, cfg.synth.size, cfg.seeds.data);
    images = std::move(ds.images);
    out.class_names = std::move(ds.class_names);
  } else {
    log << "loading dataset from " << cfg.dataset << "\n";
    LoadedDataset ds = load_dataset(cfg.dataset);
    images = std::move(ds.images);
    out.class_names = std::move(ds.class_names);
    if (ds.skipped > 0) log << "skipped " << ds.skipped << " undecodable files\n";
  }
  if (static_cast<index_t>(out.class_names.size()) != cfg.model.num_classes)
    SFUS_THROW(ConfigError, "dataset has " << out.class_names.size()
                                           << " classes but the model is configured for "
                                           << cfg.model.num_classes);
  const NormalizationConstants norm;
  for (auto& img : images) {
    Tensor<double> t = img.pixels;
    if (t.dim(1) != out.input_size || t.dim(2) != out.input_size)
      t = resize_bilinear(t, out.input_size, out.input_size);
    t = normalize(t, norm);
    out.pixels.push_back(t.array());
    out.labels.push_back(img.label);
    out.source_ids.push_back(std::move(img.source_id));
  }
  log << "dataset ready: " << out.pixels.size() << " images, " << out.class_names.size()
      << " classes\n";
  return out;
}

template <typename S>
Tensor<S> gather_batch(const PreparedDataset& ds, const std::vector<index_t>& idx) {
  const index_t n = static_cast<index_t>(idx.size());
  const index_t len = 3 * ds.input_size * ds.input_size;
  Tensor<S> batch = Tensor<S>::zeros({n, 3, ds.input_size, ds.input_size});
  for (index_t i = 0; i < n; ++i) {
    const ArrayX<double>& src = ds.pixels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    for (index_t j = 0; j < len; ++j) batch.data()[i * len + j] = static_cast<S>(src[j]);
  }
  return batch;
}

inline std::vector<index_t> gather_labels(const PreparedDataset& ds,
                                          const std::vector<index_t>& idx) {
  std::vector<index_t> out;
  out.reserve(idx.size());
  for (index_t i : idx) out.push_back(ds.labels[static_cast<std::size_t>(i)]);
  return out;
}

// Argmax per row; ties resolve to the first index.
template <typename S>
std::vector<index_t> argmax_rows(const Tensor<S>& logits) {
  const index_t n = logits.dim(0), k = logits.dim(1);
  std::vector<index_t> out(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) {
    index_t best = 0;
    for (index_t c = 1; c < k; ++c)
      if (logits.data()[i * k + c] > logits.data()[i * k + best]) best = c;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

// Eval-mode inference over `indices` in order; deterministic.
template <typename S>
ConfusionMatrix evaluate_model(SfusNet<S>& model, const PreparedDataset& ds,
                               const std::vector<index_t>& indices, index_t batch_size) {
  NoGradGuard guard;
  const Mode prev = model.mode;
  model.set_mode(Mode::kEval);
  std::vector<index_t> preds, labels;
  for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<index_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(i),
                               indices.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor<S> x = gather_batch<S>(ds, chunk);
    std::vector<index_t> p = argmax_rows(model.forward(x));
    preds.insert(preds.end(), p.begin(), p.end());
    const std::vector<index_t> l = gather_labels(ds, chunk);
    labels.insert(labels.end(), l.begin(), l.end());
  }
  model.set_mode(prev);
  return confusion_matrix(preds, labels, static_cast<index_t>(ds.class_names.size()));
}

namespace detail {

template <typename S>
struct ModelSnapshot {
  std::vector<ArrayX<S>> params;
  std::vector<RunningStats<S>> stats;
};

template <typename S>
ModelSnapshot<S> take_snapshot(SfusNet<S>& model) {
  ModelSnapshot<S> snap;
  for (auto& p : model.parameters()) snap.params.push_back(p.tensor->array());
  for (auto& bn : model.batchnorms()) snap.stats.push_back(bn.layer->stats);
  return snap;
}

template <typename S>
void restore_snapshot(SfusNet<S>& model, const ModelSnapshot<S>& snap) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->array() = snap.params[i];
  auto bns = model.batchnorms();
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i].layer->stats = snap.stats[i];
}

}  // namespace detail

template <typename S>
FoldRunResult train_fold(const ExperimentConfig& cfg, const PreparedDataset& ds,
                         const FoldPlan& plan, index_t fold, std::ostream& log) {
  const auto t_start = std::chrono::steady_clock::now();
  FoldRunResult result;
  result.fold = fold;

  SfusNet<S> model = build_model<S>(cfg.model, seed_mix({cfg.seeds.init, static_cast<std::uint64_t>(fold)}));
  std::vector<typename SfusNet<S>::NamedParam> params = model.parameters();
  std::vector<AdamState<S>> states;
  for (auto& p : params) states.push_back(AdamState<S>::fresh(p.tensor->numel()));

  const std::vector<index_t> train_idx = plan.train_indices(fold);
  const std::vector<index_t>& val_idx = plan.folds[static_cast<std::size_t>(fold)];

  detail::ModelSnapshot<S> best_snapshot;
  double best_val = -1;

  for (index_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model.set_mode(Mode::kTrain);
    Rng dropblock_rng(seed_mix({cfg.seeds.dropblock, static_cast<std::uint64_t>(fold),
                                static_cast<std::uint64_t>(epoch)}));
    const auto batches = make_batches(
        train_idx, cfg.batch_size,
        seed_mix({cfg.seeds.batch, static_cast<std::uint64_t>(fold),
                  static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0;
    index_t correct = 0, seen = 0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      Tensor<S> x = gather_batch<S>(ds, batch);
      const std::vector<index_t> labels = gather_labels(ds, batch);
      model.zero_grad();
      Tensor<S> logits = model.forward(x, &dropblock_rng);
      Tensor<S> loss = softmax_cross_entropy(logits, labels);
      const double loss_val = static_cast<double>(loss.value());
      if (!std::isfinite(loss_val))
        SFUS_THROW(NumericError, "non-finite loss " << loss_val << " at fold " << fold
                                                    << " epoch " << epoch << " step " << step);
      loss.backward();
      for (std::size_t i = 0; i < params.size(); ++i) {
        SFUS_CHECK(params[i].tensor->has_grad(),
                   "parameter " << params[i].name << " received no gradient");
        adam_step(*params[i].tensor, params[i].tensor->grad(), states[i], cfg.optimizer);
      }
      loss_sum += loss_val * static_cast<double>(batch.size());
      const auto preds = argmax_rows(logits);
      for (std::size_t i = 0; i < preds.size(); ++i) correct += (preds[i] == labels[i]);
      seen += static_cast<index_t>(batch.size());
    }
    const ConfusionMatrix val_cm = evaluate_model(model, ds, val_idx, cfg.batch_size);
    EpochLog el;
    el.epoch = epoch;
    el.train_loss = loss_sum / static_cast<double>(seen);
    el.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    el.val_accuracy = overall_accuracy(val_cm);
    result.epochs.push_back(el);
    if (el.val_accuracy > best_val) {
      best_val = el.val_accuracy;
      result.best_epoch = epoch;
      best_snapshot = detail::take_snapshot(model);
    }
    if (epoch == cfg.epochs) result.val_confusion = val_cm;
    log << "[fold " << fold << "] epoch " << epoch << "/" << cfg.epochs << "  train_loss "
        << el.train_loss << "  train_acc " << el.train_accuracy << "  val_acc "
        << el.val_accuracy << "\n";
  }
  result.val_accuracy = overall_accuracy(result.val_confusion);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  nlohmann::json meta = {{"model_name", cfg.model_name},
                         {"fold", fold},
                         {"folds", cfg.folds},
                         {"seeds", to_json(cfg.seeds)},
                         {"dataset", cfg.dataset},
                         {"synth", {{"per_class", cfg.synth.per_class}, {"size", cfg.synth.size}}},
                         {"class_names", ds.class_names},
                         {"precision", cfg.precision},
                         {"epochs_trained", cfg.epochs},
                         {"best_epoch", result.best_epoch},
                         {"final_val_accuracy", result.val_accuracy},
                         {"best_val_accuracy", best_val}};
  result.checkpoint_final =
      (fs::path(cfg.out_dir) / ("fold" + std::to_string(fold) + "_final.ckpt")).string();
  meta["checkpoint_kind"] = "final";
  save_checkpoint(result.checkpoint_final, model, meta);
  result.checkpoint_best =
      (fs::path(cfg.out_dir) / ("fold" + std::to_string(fold) + "_best.ckpt")).string();
  {
    detail::ModelSnapshot<S> final_snapshot = detail::take_snapshot(model);
    detail::restore_snapshot(model, best_snapshot);
    meta["checkpoint_kind"] = "best";
    save_checkpoint(result.checkpoint_best, model, meta);
    detail::restore_snapshot(model, final_snapshot);
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  nlohmann::json jlog;
  jlog["fold"] = fold;
  jlog["wall_seconds"] = result.wall_seconds;
  jlog["checkpoints"] = {{"final", result.checkpoint_final}, {"best", result.checkpoint_best}};
  jlog["epochs"] = nlohmann::json::array();
  for (const auto& e : result.epochs)
    jlog["epochs"].push_back({{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"train_accuracy", e.train_accuracy},
                              {"val_accuracy", e.val_accuracy}});
  std::ofstream lf(fs::path(cfg.out_dir) / ("fold" + std::to_string(fold) + "_log.json"));
  lf << jlog.dump(2) << "\n";
  return result;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) SFUS_THROW(DataError, "cannot write " << path);
  f << text;
}

// Full k-fold training run; writes checkpoints, logs, the fold-plan manifest
// and the report files into cfg.out_dir.
template <typename S>
TrainOutcome train_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  set_num_threads(cfg.threads);
  const PreparedDataset ds = prepare_dataset(cfg, log);
  SFUS_CHECK(cfg.folds >= 2, "training requires at least 2 folds, got " << cfg.folds);
  const FoldPlan plan = stratified_kfold(ds.labels, cfg.folds, cfg.seeds.fold);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "fold_plan.tsv").string(), [&] {
    std::vector<LabeledImage> stubs;  // manifest needs labels and ids only
    stubs.resize(ds.labels.size());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      stubs[i].label = ds.labels[i];
      stubs[i].source_id = ds.source_ids[i];
    }
    return fold_manifest(plan, stubs);
  }());

  TrainOutcome outcome;
  outcome.class_names = ds.class_names;
  {
    SfusNet<S> probe = build_model<S>(cfg.model, cfg.seeds.init);
    outcome.parameter_count = count_parameters(probe);
    log << "model '" << cfg.model_name << "': " << outcome.parameter_count << " parameters\n";
  }
  std::vector<ConfusionMatrix> fold_cms;
  for (index_t f = 0; f < cfg.folds; ++f) {
    FoldRunResult r = train_fold<S>(cfg, ds, plan, f, log);
    log << "[fold " << f << "] done in " << r.wall_seconds << "s  val_acc " << r.val_accuracy
        << "\n";
    fold_cms.push_back(r.val_confusion);
    outcome.folds.push_back(std::move(r));
  }
  outcome.report = build_fold_report(cfg.model_name, ds.class_names, fold_cms);
  write_text((fs::path(cfg.out_dir) / "report.json").string(),
             emit_report(outcome.report, ReportFormat::kJson));
  write_text((fs::path(cfg.out_dir) / "report.csv").string(),
             emit_report(outcome.report, ReportFormat::kCsv));
  write_text((fs::path(cfg.out_dir) / "report.txt").string(),
             emit_report(outcome.report, ReportFormat::kTable));
  log << emit_report(outcome.report, ReportFormat::kTable);
  return outcome;
}


struct AblateOutcome {
  TrainOutcome full;
  TrainOutcome ablated;
  index_t params_full = 0;
  index_t params_ablated = 0;
  index_t closed_form_freq_params = 0;
};

// Trains the full model and its no-FFT-branch twin with matched seeds and
// otherwise identical config; the comparison is reported, not asserted.
template <typename S>
AblateOutcome ablate_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  AblateOutcome out;

  ExperimentConfig full_cfg = cfg;
  full_cfg.model.fft_branch_enabled = true;
  full_cfg.model_name = cfg.model_name;
  full_cfg.out_dir = (fs::path(cfg.out_dir) / "full").string();

  ExperimentConfig ablated_cfg = full_cfg;
  ablated_cfg.model.fft_branch_enabled = false;
  ablated_cfg.model_name = cfg.model_name + "-nofft";
  ablated_cfg.out_dir = (fs::path(cfg.out_dir) / "ablated").string();

  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "config_full.json").string(),
             to_json(full_cfg).dump(2) + "\n");
  write_text((fs::path(cfg.out_dir) / "config_ablated.json").string(),
             to_json(ablated_cfg).dump(2) + "\n");

  log << "=== full model (fft branch enabled) ===\n";
  out.full = train_experiment<S>(full_cfg, log);
  log << "=== ablated model (fft branch disabled) ===\n";
  out.ablated = train_experiment<S>(ablated_cfg, log);

  out.params_full = out.full.parameter_count;
  out.params_ablated = out.ablated.parameter_count;
  out.closed_form_freq_params = frequency_branch_param_count(full_cfg.model);

  std::ostringstream oss;
  oss << "=== ablation summary ===\n";
  oss << "parameters: full " << out.params_full << ", ablated " << out.params_ablated
      << ", difference " << (out.params_full - out.params_ablated)
      << " (closed-form frequency-branch count " << out.closed_form_freq_params << ")\n\n";
  oss << emit_report(out.full.report, ReportFormat::kTable) << "\n";
  oss << emit_report(out.ablated.report, ReportFormat::kTable);
  write_text((fs::path(cfg.out_dir) / "ablation.txt").string(), oss.str());
  log << oss.str();
  return out;
}

struct EvalOptions {
  std::string checkpoint;
  std::string dataset = "auto";  // "auto": reuse the checkpoint's dataset spec
  index_t batch_size = 64;
  bool use_fold_split = false;
  std::string out_dir;
  int threads = 0;
};

// Eval-mode inference with a Table-2-style per-class report. With
// use_fold_split, re-derives the checkpoint's held-out fold from its recorded
// seeds and evaluates only that split.
template <typename S = double>
FoldReport eval_checkpoint(const EvalOptions& opts, std::ostream& log) {
  set_num_threads(opts.threads);
  LoadedCheckpoint<S> lc = load_checkpoint<S>(opts.checkpoint);
  const nlohmann::json& meta = lc.meta;

  ExperimentConfig data_cfg;
  data_cfg.model = lc.model.config;
  data_cfg.dataset = opts.dataset == "auto"
                         ? meta.value("dataset", std::string("synthetic"))
                         : opts.dataset;
  if (meta.contains("synth")) {
    data_cfg.synth.per_class = meta.at("synth").value("per_class", data_cfg.synth.per_class);
    data_cfg.synth.size = meta.at("synth").value("size", data_cfg.synth.size);
  }
  if (meta.contains("seeds")) data_cfg.seeds = seeds_from_json(meta.at("seeds"));

  PreparedDataset ds;
  try {
    ds = prepare_dataset(data_cfg, log);
  } catch (const ConfigError& e) {
    SFUS_THROW(ConfigError, e.what() << "\ncheckpoint model_config: " << to_json(lc.model.config)
                                     << "\ndataset: " << data_cfg.dataset);
  }

  std::vector<index_t> indices;
  if (opts.use_fold_split) {
    SFUS_CHECK(meta.contains("fold") && meta.contains("folds"),
               "checkpoint carries no fold information; cannot --use-fold-split");
    const index_t fold = meta.at("fold").get<index_t>();
    const index_t k = meta.at("folds").get<index_t>();
    const FoldPlan plan = stratified_kfold(ds.labels, k, data_cfg.seeds.fold);
    indices = plan.folds[static_cast<std::size_t>(fold)];
    log << "evaluating held-out fold " << fold << " of " << k << " (" << indices.size()
        << " samples)\n";
  } else {
    indices.resize(ds.labels.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<index_t>(i);
  }

  const ConfusionMatrix cm = evaluate_model(lc.model, ds, indices, opts.batch_size);
  FoldReport rep = build_fold_report(meta.value("model_name", std::string("sfusnet")),
                                     ds.class_names, {cm});
  log << emit_report(rep, ReportFormat::kTable);
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    write_text((std::filesystem::path(opts.out_dir) / "eval_report.json").string(),
               emit_report(rep, ReportFormat::kJson));
  }
  return rep;
}

}  // namespace sfus
