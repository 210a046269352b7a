// Batch assembly, Adam, reduce-on-plateau scheduling, early stopping, and the
// end-to-end training loop.
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "penrec/checkpoint.hpp"
#include "penrec/evaluation.hpp"
#include "penrec/network.hpp"
#include "penrec/sensor_data.hpp"

namespace penrec {

enum class BatchPurpose {
  Training,   // drop samples whose output length cannot align their label
  Inference,  // keep everything the network can forward
};

// Shuffle by seed, stable-sort by length (bucketing limits padding waste),
// then chunk. Dropped samples are described in `warnings` when given.
std::vector<Batch> make_batches(const Dataset& data, const Alphabet& alphabet,
                                const ModelSpec& spec, int batch_size, std::uint64_t seed,
                                BatchPurpose purpose = BatchPurpose::Training,
                                std::vector<std::string>* warnings = nullptr);

struct OptimizerState {
  std::vector<Eigen::MatrixXd> m, v;  // aligned with ParameterStore::tensors
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

OptimizerState make_optimizer_state(const ParameterStore& params);

// Bias-corrected Adam over the trainable tensors. Throws on non-finite
// gradients so the caller can abort the epoch with a diagnostic.
void adam_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double lr);

struct ScheduleState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double lr = 1e-2;
  double min_lr = 1e-4;
  double factor = 0.8;
  int patience = 10;
  double improvement_eps = 1e-4;
};

// Reduce-on-plateau: an improvement (val < best - eps) resets the counter; at
// counter == patience the lr is multiplied by `factor` (floored at min_lr)
// and the counter resets.
ScheduleState schedule_step(ScheduleState state, double val_loss);

// True once the minimum lr has been reached and the last `stop_patience`
// epochs produced no new best (same improvement threshold as the scheduler).
bool early_stop(const std::vector<double>& val_history, const ScheduleState& schedule,
                int stop_patience = 20);

struct TrainRunConfig {
  std::string model = "cldnn";
  int batch_size = 64;
  double initial_lr = 1e-2;
  double min_lr = 1e-4;
  double lr_factor = 0.8;
  int lr_patience = 10;
  int stop_patience = 20;
  double improvement_eps = 1e-4;
  int max_epochs = 400;
  std::uint64_t seed = 1;
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-7;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  bool verbose = false;         // per-epoch progress on stderr
};

struct TrainResult {
  Checkpoint best;
  std::string log_csv;  // "epoch,lr,train_loss,val_loss,val_cer" per epoch
  int epochs_run = 0;
  bool diverged = false;
};

// Per epoch: shuffle -> batches -> forward(train) -> CTC grad -> backward ->
// Adam; then mean validation CTC loss + greedy CER, checkpoint on a new
// minimum, plateau schedule, early stop. Divergence aborts with the last good
// checkpoint. Fully deterministic per seed.
TrainResult train(const TrainRunConfig& config, const Dataset& train_data,
                  const Dataset& val_data, const Alphabet& alphabet);

struct DecodeStats {
  int skipped_too_short = 0;  // samples the stack cannot forward at all
};

// Greedy-decode every sample (eval mode); pairs come back in dataset order.
std::vector<EvalPair> decode_dataset(const ModelSpec& spec, ParameterStore& params,
                                     const Dataset& data, const Alphabet& alphabet,
                                     int batch_size, int threads, DecodeStats* stats = nullptr);

}  // namespace penrec
