// JSON run configuration. Every knob has an explicit default here so a run is
// reproducible from the config file and seed alone.
#pragma once

#include <cstdint>
#include <string>

namespace penrec {

struct RunConfig {
  std::uint64_t seed = 7;
  int threads = 1;
  std::string alphabet;  // empty means A-Z then a-z

  // synth
  std::string synth_vocab = "main";  // main | unseen
  int synth_writers = 8;
  int synth_samples_per_writer = 48;

  // prep
  double force_threshold = 1.0;
  int min_frames = 20;
  int max_frames = 1500;

  // split
  int folds = 5;

  // train
  std::string model = "cldnn";
  int batch_size = 64;
  double initial_lr = 1e-2;
  double min_lr = 1e-4;
  double lr_factor = 0.8;
  int lr_patience = 10;
  int stop_patience = 20;
  double improvement_eps = 1e-4;
  int max_epochs = 400;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-7;
  double grad_clip_norm = 0.0;  // 0 disables clipping
};

// Parses a config file and overlays it on the defaults. Unknown keys and type
// mismatches are rejected so typos cannot silently fall back to defaults.
RunConfig load_config(const std::string& path);

void validate_config(const RunConfig& config);

// Full echo, including every default, for run provenance.
std::string config_to_json(const RunConfig& config);

}  // namespace penrec
