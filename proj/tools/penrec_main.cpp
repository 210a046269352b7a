// penrec: synth | prep | split | train | eval | decode | params.
// Every subcommand is a thin wrapper around the library; flags override the
// optional JSON config, which overrides built-in defaults.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "penrec/alphabet.hpp"
#include "penrec/checkpoint.hpp"
#include "penrec/common.hpp"
#include "penrec/evaluation.hpp"
#include "penrec/network.hpp"
#include "penrec/run_config.hpp"
#include "penrec/sensor_data.hpp"
#include "penrec/synthgen.hpp"
#include "penrec/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace penrec;

Alphabet make_alphabet(const RunConfig& cfg) {
  return cfg.alphabet.empty() ? Alphabet::latin() : Alphabet(cfg.alphabet);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

const FoldSplit& pick_fold(const SplitManifest& manifest, int fold) {
  if (fold < 1 || fold > manifest.k)
    throw ConfigError("--fold must be in 1.." + std::to_string(manifest.k));
  return manifest.folds.at(static_cast<std::size_t>(fold - 1));
}

// Collected flag values for one invocation. count() on the CLI11 option
// decides whether a flag overrides the config file.
struct Cli {
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string in_path;
  std::string out_path;
  std::string splits_path;
  std::string checkpoint_path;
  std::string model;
  std::string vocab;
  std::vector<std::string> writers;
  int fold = 1;
  int k = 0;
  int n_writers = 0;
  int samples = 0;
  double threshold = 0.0;
  int min_frames = 0;
  int max_frames = 0;
  int batch_size = 0;
  int max_epochs = 0;
  bool prepped = false;
  bool verbose = false;
};

RunConfig effective_config(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_config(a.config_path);
  auto given = [sub](const std::string& name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--threads")) cfg.threads = a.threads;
  if (given("--model")) cfg.model = a.model;
  if (given("--vocab")) cfg.synth_vocab = a.vocab;
  if (given("--writers")) cfg.synth_writers = a.n_writers;
  if (given("--samples")) cfg.synth_samples_per_writer = a.samples;
  if (given("--threshold")) cfg.force_threshold = a.threshold;
  if (given("--min-frames")) cfg.min_frames = a.min_frames;
  if (given("--max-frames")) cfg.max_frames = a.max_frames;
  if (given("--k")) cfg.folds = a.k;
  if (given("--batch-size")) cfg.batch_size = a.batch_size;
  if (given("--max-epochs")) cfg.max_epochs = a.max_epochs;
  validate_config(cfg);
  return cfg;
}

TrainRunConfig train_config(const RunConfig& cfg, bool verbose) {
  TrainRunConfig t;
  t.model = cfg.model;
  t.batch_size = cfg.batch_size;
  t.initial_lr = cfg.initial_lr;
  t.min_lr = cfg.min_lr;
  t.lr_factor = cfg.lr_factor;
  t.lr_patience = cfg.lr_patience;
  t.stop_patience = cfg.stop_patience;
  t.improvement_eps = cfg.improvement_eps;
  t.max_epochs = cfg.max_epochs;
  t.seed = cfg.seed;
  t.threads = cfg.threads;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.adam_eps = cfg.adam_eps;
  t.grad_clip_norm = cfg.grad_clip_norm;
  t.verbose = verbose;
  return t;
}

int run_synth(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  const auto& vocab =
      cfg.synth_vocab == "unseen" ? default_unseen_vocab() : default_main_vocab();
  Dataset data = synth_dataset(vocab, cfg.synth_writers, cfg.synth_samples_per_writer, cfg.seed);
  write_dataset(data, a.out_path);
  std::cout << "wrote " << data.size() << " samples (" << cfg.synth_vocab << " vocabulary, "
            << cfg.synth_writers << " writers) to " << a.out_path << "\n";
  return 0;
}

int run_prep(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  Alphabet alphabet = make_alphabet(cfg);
  Dataset raw = parse_dataset(a.in_path, alphabet);
  PrepStats stats;
  Dataset clean =
      prepare_dataset(raw, cfg.force_threshold, cfg.min_frames, cfg.max_frames, &stats);
  write_dataset(clean, a.out_path);
  std::cout << "kept " << clean.size() << "/" << raw.size() << " samples (dropped "
            << stats.dropped_all_hover << " all-hover, " << stats.removed_by_length
            << " by length) to " << a.out_path << "\n";
  return 0;
}

int run_split(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  Alphabet alphabet = make_alphabet(cfg);
  Dataset data = parse_dataset(a.in_path, alphabet);
  SplitManifest manifest;
  manifest.k = cfg.folds;
  manifest.seed = cfg.seed;
  manifest.folds = split_writer_folds(data, cfg.folds, cfg.seed);
  write_split_manifest(manifest, a.out_path);
  std::cout << "wrote " << manifest.k << "-fold split of " << data.size() << " samples to "
            << a.out_path << "\n";
  return 0;
}

int run_train(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  Alphabet alphabet = make_alphabet(cfg);
  Dataset data = parse_dataset(a.in_path, alphabet);
  SplitManifest manifest = read_split_manifest(a.splits_path);
  const FoldSplit& fold = pick_fold(manifest, a.fold);
  Dataset train_data = select_samples(data, fold.train_samples);
  Dataset val_data = select_samples(data, fold.val_samples);

  ensure_dir(a.out_path);
  write_text(a.out_path + "/config.json", config_to_json(cfg) + "\n");
  TrainResult result = train(train_config(cfg, a.verbose), train_data, val_data, alphabet);
  save_checkpoint(result.best, a.out_path + "/checkpoint.bin");
  write_text(a.out_path + "/train_log.csv", result.log_csv);
  if (result.diverged)
    std::cerr << "warning: training diverged; kept best checkpoint from epoch "
              << result.best.epoch << "\n";
  std::cout << "trained " << cfg.model << " on fold " << a.fold << ": best val loss "
            << result.best.val_loss << " at epoch " << result.best.epoch << " ("
            << result.epochs_run << " epochs run)\n";
  return 0;
}

int run_eval(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  Checkpoint ck = load_checkpoint(a.checkpoint_path);
  Alphabet alphabet{ck.alphabet_chars};
  Dataset data = parse_dataset(a.in_path, alphabet);
  if (!a.splits_path.empty()) {
    SplitManifest manifest = read_split_manifest(a.splits_path);
    data = select_samples(data, pick_fold(manifest, a.fold).test_samples);
  }
  if (!a.writers.empty()) data = select_writers(data, a.writers);
  if (data.size() == 0) throw DataError("no samples selected for evaluation");

  DecodeStats stats;
  std::vector<EvalPair> pairs =
      decode_dataset(ck.spec, ck.params, data, alphabet, cfg.batch_size, cfg.threads, &stats);
  MetricsReport report = evaluate_pairs(pairs);
  ensure_dir(a.out_path);
  write_metrics_report(report, a.out_path);
  if (stats.skipped_too_short > 0)
    std::cerr << "warning: " << stats.skipped_too_short
              << " samples were too short to forward and count as fully wrong\n";
  std::cout << "cer=" << report.cer << " wer=" << report.wer << " crr=" << report.crr << " ("
            << report.num_pairs << " samples) to " << a.out_path << "\n";
  return 0;
}

int run_decode(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  Checkpoint ck = load_checkpoint(a.checkpoint_path);
  Alphabet alphabet{ck.alphabet_chars};
  Dataset data = parse_dataset(a.in_path, alphabet);
  if (!a.prepped) {
    for (auto& sample : data.samples)
      sample = zscore_normalize(trim_hover(sample, cfg.force_threshold));
  }
  DecodeStats stats;
  std::vector<EvalPair> pairs =
      decode_dataset(ck.spec, ck.params, data, alphabet, cfg.batch_size, cfg.threads, &stats);
  for (const auto& p : pairs) std::cout << p.prediction << "\n";
  if (stats.skipped_too_short > 0)
    std::cerr << "warning: " << stats.skipped_too_short << " samples were too short to forward\n";
  return 0;
}

int run_params(const CLI::App* sub, const Cli& a) {
  RunConfig cfg = effective_config(sub, a);
  std::cout << param_count(build_model(cfg.model)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-device handwriting recognition from 13-channel pen sensor streams"};
  app.require_subcommand(1);
  Cli a;

  auto add_common = [&a](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "JSON run config");
    sub->add_option("--seed", a.seed, "master seed");
    sub->add_option("--threads", a.threads, "worker threads (0 = all cores)");
    return sub;
  };

  CLI::App* synth = add_common(app.add_subcommand("synth", "generate a synthetic dataset"));
  synth->add_option("--out", a.out_path, "output JSONL")->required();
  synth->add_option("--vocab", a.vocab, "main or unseen vocabulary");
  synth->add_option("--writers", a.n_writers, "number of writers");
  synth->add_option("--samples", a.samples, "samples per writer");

  CLI::App* prep = add_common(app.add_subcommand("prep", "trim, filter, and normalize"));
  prep->add_option("--in", a.in_path, "raw JSONL")->required();
  prep->add_option("--out", a.out_path, "cleaned JSONL")->required();
  prep->add_option("--threshold", a.threshold, "hover force threshold");
  prep->add_option("--min-frames", a.min_frames, "minimum length kept");
  prep->add_option("--max-frames", a.max_frames, "maximum length kept");

  CLI::App* split = add_common(app.add_subcommand("split", "emit writer-disjoint fold manifest"));
  split->add_option("--in", a.in_path, "cleaned JSONL")->required();
  split->add_option("--out", a.out_path, "manifest JSON")->required();
  split->add_option("--k", a.k, "number of folds");

  CLI::App* train = add_common(app.add_subcommand("train", "train a model on one fold"));
  train->add_option("--in", a.in_path, "cleaned JSONL")->required();
  train->add_option("--splits", a.splits_path, "fold manifest")->required();
  train->add_option("--fold", a.fold, "fold to train (1-based)");
  train->add_option("--model", a.model, "cnn or cldnn");
  train->add_option("--out", a.out_path, "output directory")->required();
  train->add_option("--batch-size", a.batch_size, "batch size");
  train->add_option("--max-epochs", a.max_epochs, "epoch cap");
  train->add_flag("--verbose", a.verbose, "per-epoch progress on stderr");

  CLI::App* eval = add_common(app.add_subcommand("eval", "decode a test set and report metrics"));
  eval->add_option("--in", a.in_path, "cleaned JSONL")->required();
  eval->add_option("--checkpoint", a.checkpoint_path, "model checkpoint")->required();
  eval->add_option("--out", a.out_path, "report directory")->required();
  eval->add_option("--splits", a.splits_path, "fold manifest (evaluate its test side)");
  eval->add_option("--fold", a.fold, "fold whose test side to use");
  eval->add_option("--only-writers", a.writers, "keep only these writer ids")->delimiter(',');
  eval->add_option("--batch-size", a.batch_size, "batch size");

  CLI::App* decode = add_common(app.add_subcommand("decode", "print decoded words"));
  decode->add_option("--in", a.in_path, "sample JSONL (raw unless --prepped)")->required();
  decode->add_option("--checkpoint", a.checkpoint_path, "model checkpoint")->required();
  decode->add_flag("--prepped", a.prepped, "input is already trimmed and normalized");
  decode->add_option("--threshold", a.threshold, "hover force threshold");
  decode->add_option("--batch-size", a.batch_size, "batch size");

  CLI::App* params = add_common(app.add_subcommand("params", "print trainable parameter count"));
  params->add_option("--model", a.model, "cnn or cldnn");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth, a);
    if (prep->parsed()) return run_prep(prep, a);
    if (split->parsed()) return run_split(split, a);
    if (train->parsed()) return run_train(train, a);
    if (eval->parsed()) return run_eval(eval, a);
    if (decode->parsed()) return run_decode(decode, a);
    if (params->parsed()) return run_params(params, a);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const AllHoverError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const UnalignableError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
