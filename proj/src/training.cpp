#include "penrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "penrec/ctc.hpp"
#include "penrec/rng.hpp"

namespace penrec {

namespace {

using Mat = Eigen::MatrixXd;

constexpr std::uint64_t kTagInit = 0x696e6974;   // parameter init stream
constexpr std::uint64_t kTagEpoch = 0x65706f63;  // per-epoch shuffle stream
constexpr std::uint64_t kTagDrop = 0x64726f70;   // dropout stream

std::string csv_line(int epoch, double lr, double train_loss, double val_loss, double val_cer) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", epoch, lr, train_loss, val_loss,
                val_cer);
  return buf;
}

double grad_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads.tensors)
    if (g.size() > 0) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void scale_gradients(Gradients& grads, double factor) {
  for (auto& g : grads.tensors)
    if (g.size() > 0) g *= factor;
}

}  // namespace

std::vector<Batch> make_batches(const Dataset& data, const Alphabet& alphabet,
                                const ModelSpec& spec, int batch_size, std::uint64_t seed,
                                BatchPurpose purpose, std::vector<std::string>* warnings) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  const int min_T = min_input_length(spec);

  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) order.push_back(i);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<int> kept;
  std::vector<LabelSequence> labels(static_cast<std::size_t>(data.size()));
  for (int i : order) {
    const auto& sample = data.samples[static_cast<std::size_t>(i)];
    const int T = sample.num_frames();
    if (T < min_T) {
      if (warnings)
        warnings->push_back("sample " + std::to_string(i) + " (label \"" + sample.label +
                            "\", T=" + std::to_string(T) + ") is shorter than " +
                            std::to_string(min_T) + " frames; excluded");
      continue;
    }
    LabelSequence label = alphabet.encode(sample.label);
    if (purpose == BatchPurpose::Training) {
      int t_out = output_length(spec, T);
      int need = min_alignable_length(label);
      if (t_out < need) {
        if (warnings)
          warnings->push_back("sample " + std::to_string(i) + " (label \"" + sample.label +
                              "\", T=" + std::to_string(T) + " -> T'=" + std::to_string(t_out) +
                              ") cannot align a label needing " + std::to_string(need) +
                              " frames; excluded");
        continue;
      }
    }
    labels[static_cast<std::size_t>(i)] = std::move(label);
    kept.push_back(i);
  }

  // Bucket by length: stable sort keeps the shuffled order within a length.
  std::stable_sort(kept.begin(), kept.end(), [&data](int a, int b) {
    return data.samples[static_cast<std::size_t>(a)].num_frames() <
           data.samples[static_cast<std::size_t>(b)].num_frames();
  });

  std::vector<Batch> batches;
  for (std::size_t lo = 0; lo < kept.size(); lo += static_cast<std::size_t>(batch_size)) {
    std::size_t hi = std::min(kept.size(), lo + static_cast<std::size_t>(batch_size));
    Batch batch;
    int max_T = 0;
    for (std::size_t j = lo; j < hi; ++j)
      max_T = std::max(max_T,
                       data.samples[static_cast<std::size_t>(kept[j])].num_frames());
    for (std::size_t j = lo; j < hi; ++j) {
      const auto& sample = data.samples[static_cast<std::size_t>(kept[j])];
      Mat padded = Mat::Zero(max_T, sample.frames.cols());
      padded.topRows(sample.num_frames()) = sample.frames;
      batch.values.push_back(std::move(padded));
      batch.valid_lengths.push_back(sample.num_frames());
      batch.labels.push_back(labels[static_cast<std::size_t>(kept[j])]);
      batch.sample_indices.push_back(kept[j]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

OptimizerState make_optimizer_state(const ParameterStore& params) {
  OptimizerState state;
  state.m.resize(params.tensors.size());
  state.v.resize(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (!params.tensors[i].trainable) continue;
    state.m[i] = Mat::Zero(params.tensors[i].value.rows(), params.tensors[i].value.cols());
    state.v[i] = state.m[i];
  }
  return state;
}

void adam_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (!params.tensors[i].trainable) continue;
    const Mat& g = grads.tensors[i];
    if (g.size() == 0) continue;
    if (!g.allFinite())
      throw Error("non-finite gradient in " + params.tensors[i].name);
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    params.tensors[i].value.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  }
}

ScheduleState schedule_step(ScheduleState state, double val_loss) {
  if (val_loss < state.best_val_loss - state.improvement_eps) {
    state.best_val_loss = val_loss;
    state.epochs_since_improvement = 0;
    return state;
  }
  state.epochs_since_improvement += 1;
  if (state.epochs_since_improvement >= state.patience) {
    state.lr = std::max(state.lr * state.factor, state.min_lr);
    state.epochs_since_improvement = 0;
  }
  return state;
}

bool early_stop(const std::vector<double>& val_history, const ScheduleState& schedule,
                int stop_patience) {
  if (schedule.lr > schedule.min_lr) return false;
  double best = std::numeric_limits<double>::infinity();
  int last_improvement = -1;
  for (std::size_t i = 0; i < val_history.size(); ++i) {
    if (val_history[i] < best - schedule.improvement_eps) {
      best = val_history[i];
      last_improvement = static_cast<int>(i);
    }
  }
  return static_cast<int>(val_history.size()) - 1 - last_improvement >= stop_patience;
}

TrainResult train(const TrainRunConfig& config, const Dataset& train_data,
                  const Dataset& val_data, const Alphabet& alphabet) {
  ModelSpec spec = build_model(config.model);

  // Exclusions are identical every epoch; surface them once up front.
  std::vector<std::string> warnings;
  make_batches(train_data, alphabet, spec, config.batch_size,
               mix_seed(config.seed, kTagEpoch, 1), BatchPurpose::Training, &warnings);
  std::vector<Batch> val_batches =
      make_batches(val_data, alphabet, spec, config.batch_size, mix_seed(config.seed, kTagEpoch),
                   BatchPurpose::Training, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (val_batches.empty()) throw DataError("no usable validation samples");

  ParameterStore params = init_params(spec, mix_seed(config.seed, kTagInit));
  OptimizerState opt = make_optimizer_state(params);
  opt.beta1 = config.beta1;
  opt.beta2 = config.beta2;
  opt.eps = config.adam_eps;

  ScheduleState sched;
  sched.lr = config.initial_lr;
  sched.min_lr = config.min_lr;
  sched.factor = config.lr_factor;
  sched.patience = config.lr_patience;
  sched.improvement_eps = config.improvement_eps;

  TrainResult result;
  result.best.spec = spec;
  result.best.alphabet_chars = alphabet.characters();
  result.best.params = params;  // fallback if the very first epoch diverges
  result.best.epoch = 0;
  result.log_csv = "epoch,lr,train_loss,val_loss,val_cer\n";

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> history;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr_used = sched.lr;
    std::vector<Batch> batches =
        make_batches(train_data, alphabet, spec, config.batch_size,
                     mix_seed(config.seed, kTagEpoch, static_cast<std::uint64_t>(epoch)),
                     BatchPurpose::Training, nullptr);
    if (batches.empty()) throw DataError("no usable training samples");

    double train_loss_sum = 0.0;
    long train_count = 0;
    bool bad = false;
    int step = 0;
    for (const auto& batch : batches) {
      ++step;
      std::uint64_t drop_seed =
          mix_seed(config.seed, kTagDrop,
                   (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(step));
      ForwardResult fwd =
          forward(spec, params, batch, RunMode::Train, drop_seed, config.threads);

      const int B = batch.size();
      std::vector<Mat> grad_log_probs(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const int v = fwd.valid_out_lengths[static_cast<std::size_t>(b)];
        Mat lp = fwd.log_probs[static_cast<std::size_t>(b)].topRows(v);
        CtcGradResult res = ctc_grad_wrt_log_probs(lp, batch.labels[static_cast<std::size_t>(b)]);
        if (!std::isfinite(res.loss)) {
          bad = true;
          break;
        }
        train_loss_sum += res.loss;
        ++train_count;
        Mat g = Mat::Zero(fwd.log_probs[static_cast<std::size_t>(b)].rows(),
                          fwd.log_probs[static_cast<std::size_t>(b)].cols());
        g.topRows(v) = res.grad / static_cast<double>(B);  // mean loss over the batch
        grad_log_probs[static_cast<std::size_t>(b)] = std::move(g);
      }
      if (bad) break;

      Gradients grads = backward(spec, params, *fwd.cache, grad_log_probs, config.threads);
      if (config.grad_clip_norm > 0.0) {
        double norm = grad_norm(grads);
        if (norm > config.grad_clip_norm) scale_gradients(grads, config.grad_clip_norm / norm);
      }
      try {
        adam_step(params, grads, opt, lr_used);
      } catch (const Error& e) {
        std::fprintf(stderr, "epoch %d aborted: %s\n", epoch, e.what());
        bad = true;
        break;
      }
    }
    if (bad) {
      std::fprintf(stderr,
                   "training diverged at epoch %d; keeping checkpoint from epoch %d\n", epoch,
                   result.best.epoch);
      result.diverged = true;
      break;
    }
    double train_loss = train_loss_sum / static_cast<double>(train_count);

    // Validation loss and greedy CER from one eval-mode pass.
    double val_loss_sum = 0.0;
    long val_count = 0;
    std::vector<EvalPair> pairs;
    for (const auto& vb : val_batches) {
      ForwardResult fwd = forward(spec, params, vb, RunMode::Eval, 0, config.threads);
      for (int b = 0; b < vb.size(); ++b) {
        const int v = fwd.valid_out_lengths[static_cast<std::size_t>(b)];
        Mat lp = fwd.log_probs[static_cast<std::size_t>(b)].topRows(v);
        val_loss_sum += ctc_loss(lp, vb.labels[static_cast<std::size_t>(b)]).loss;
        ++val_count;
        pairs.push_back({greedy_decode(lp, alphabet),
                         alphabet.decode(vb.labels[static_cast<std::size_t>(b)].indices)});
      }
    }
    double val_loss = val_loss_sum / static_cast<double>(val_count);
    double val_cer = cer(pairs);
    if (!std::isfinite(val_loss)) {
      std::fprintf(stderr,
                   "validation loss diverged at epoch %d; keeping checkpoint from epoch %d\n",
                   epoch, result.best.epoch);
      result.diverged = true;
      break;
    }

    result.epochs_run = epoch;
    history.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best.params = params;
      result.best.val_loss = val_loss;
      result.best.epoch = epoch;
    }
    result.log_csv += csv_line(epoch, lr_used, train_loss, val_loss, val_cer);
    if (config.verbose)
      std::fprintf(stderr, "epoch %d lr %.6g train %.6g val %.6g cer %.4f%s\n", epoch, lr_used,
                   train_loss, val_loss, val_cer,
                   val_loss == best_val ? " *" : "");

    sched = schedule_step(sched, val_loss);
    if (early_stop(history, sched, config.stop_patience)) break;
  }
  return result;
}

std::vector<EvalPair> decode_dataset(const ModelSpec& spec, ParameterStore& params,
                                     const Dataset& data, const Alphabet& alphabet,
                                     int batch_size, int threads, DecodeStats* stats) {
  std::vector<Batch> batches =
      make_batches(data, alphabet, spec, batch_size, 0, BatchPurpose::Inference, nullptr);

  std::vector<EvalPair> pairs(static_cast<std::size_t>(data.size()));
  std::vector<bool> covered(static_cast<std::size_t>(data.size()), false);
  for (const auto& batch : batches) {
    ForwardResult fwd = forward(spec, params, batch, RunMode::Eval, 0, threads);
    for (int b = 0; b < batch.size(); ++b) {
      const int v = fwd.valid_out_lengths[static_cast<std::size_t>(b)];
      Mat lp = fwd.log_probs[static_cast<std::size_t>(b)].topRows(v);
      int idx = batch.sample_indices[static_cast<std::size_t>(b)];
      pairs[static_cast<std::size_t>(idx)] = {greedy_decode(lp, alphabet),
                                              data.samples[static_cast<std::size_t>(idx)].label};
      covered[static_cast<std::size_t>(idx)] = true;
    }
  }

  int skipped = 0;
  for (int i = 0; i < data.size(); ++i) {
    if (covered[static_cast<std::size_t>(i)]) continue;
    // Too short to forward; scored as an empty prediction.
    pairs[static_cast<std::size_t>(i)] = {"", data.samples[static_cast<std::size_t>(i)].label};
    ++skipped;
  }
  if (stats) stats->skipped_too_short = skipped;
  return pairs;
}

}  // namespace penrec
