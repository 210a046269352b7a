// CNN and CLDNN sequence models: declarative layer stacks with forward and
// backward passes, parameter counting, and sequence-length bookkeeping.
//
// Conventions:
//  - activations are (time x channels) matrices, one per batch member, all
//    padded to a shared T; rows at or beyond the valid length are kept at
//    exactly zero after every layer so batch composition and padding cannot
//    leak into results
//  - batchnorm statistics are computed over valid frames only
//  - dropout masks are counter-based hashes of (seed, layer, slot, t, c), so
//    they are independent of padding and recomputable in the backward pass
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "penrec/alphabet.hpp"
#include "penrec/common.hpp"

namespace penrec {

enum class LayerKind {
  Conv1d,
  BatchNorm,
  Relu,
  Tanh,
  MaxPool2,
  Dropout,
  Blstm,
  Dense,
  Softmax,
};

struct LayerSpec {
  LayerKind kind;
  int filters = 0;   // Conv1d: output channels
  int kernel = 0;    // Conv1d: width (odd, same padding, stride 1)
  int units = 0;     // Blstm: per-direction units; Dense: output size
  double rate = 0.0;  // Dropout: drop probability in [0, 1)

  static LayerSpec conv1d(int filters, int kernel);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec tanh();
  static LayerSpec maxpool2();
  static LayerSpec dropout(double rate);
  static LayerSpec blstm(int units);
  static LayerSpec dense(int units);
  static LayerSpec softmax();
};

struct ModelSpec {
  std::string name;
  int input_channels = 13;
  int output_classes = 53;
  std::vector<LayerSpec> layers;
};

// "cnn": 4 conv blocks (1024/5, 512/3, 256/3, 128/3); "cldnn": 3 conv blocks
// (512/5, 256/3, 128/3) + 2 BLSTM(64). Both end in per-timestep dense(100) +
// relu + dropout + dense(53) + softmax. Every dropout has rate 0.3; every
// conv block is conv -> batchnorm -> relu -> maxpool2 -> dropout.
ModelSpec build_model(const std::string& name);

// Trainable parameters only; batchnorm running statistics excluded.
long long param_count(const ModelSpec& spec);

int num_pools(const ModelSpec& spec);
int min_input_length(const ModelSpec& spec);  // 2^(#pools)

// Convs preserve length; each maxpool2 floor-halves it. Throws on T too short.
int output_length(const ModelSpec& spec, int T);

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  bool trainable = true;
};

struct ParameterStore {
  std::vector<Tensor> tensors;

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  int index_of(const std::string& name) const;  // -1 when absent
  long long trainable_count() const;
};

// Shapes (layer i numbered per kind, 1-based):
//   conv<i>.kernel   (kernel*in, filters)   conv<i>.bias (1, filters)
//   bn<i>.gamma/.beta (1, C)                bn<i>.running_mean/.running_var (1, C)
//   blstm<i>.{fw,bw}.kernel (in, 4U)  .recurrent (U, 4U)  .bias (1, 4U)
//   dense<i>.kernel  (in, units)            dense<i>.bias (1, units)
// LSTM gate order within the 4U axis: input, forget, cell, output.
ParameterStore make_param_store(const ModelSpec& spec);

// Glorot-uniform kernels, orthogonal recurrent kernels, zero biases except the
// LSTM forget-gate slice (ones); batchnorm scale 1 / shift 0 / running mean 0
// / running var 1. Deterministic per seed.
ParameterStore init_params(const ModelSpec& spec, std::uint64_t seed);

struct Batch {
  std::vector<Eigen::MatrixXd> values;  // B matrices, each padded_T x channels
  std::vector<int> valid_lengths;
  std::vector<LabelSequence> labels;
  std::vector<int> sample_indices;  // positions in the source dataset

  int size() const { return static_cast<int>(values.size()); }
  int padded_length() const { return values.empty() ? 0 : static_cast<int>(values[0].rows()); }
};

enum class RunMode { Train, Eval };

struct ForwardCache;  // internal; produced by train-mode forward

struct ForwardResult {
  std::vector<Eigen::MatrixXd> log_probs;  // B matrices, T' x classes; padding rows zero
  std::vector<int> valid_out_lengths;
  std::shared_ptr<ForwardCache> cache;     // null in eval mode
};

// Train mode updates batchnorm running statistics in `params` (momentum 0.99)
// and applies inverted dropout; eval mode is a pure function of (params,
// batch).
ForwardResult forward(const ModelSpec& spec, ParameterStore& params, const Batch& batch,
                      RunMode mode, std::uint64_t seed, int threads = 1);

// Gradient matrices aligned index-for-index with ParameterStore::tensors;
// non-trainable entries stay empty.
struct Gradients {
  std::vector<Eigen::MatrixXd> tensors;
};

Gradients zero_gradients(const ParameterStore& params);

// grad_log_probs: one T' x classes matrix per batch member; rows at or beyond
// the valid output length are ignored. Requires a train-mode cache.
Gradients backward(const ModelSpec& spec, const ParameterStore& params, const ForwardCache& cache,
                   const std::vector<Eigen::MatrixXd>& grad_log_probs, int threads = 1);

}  // namespace penrec
