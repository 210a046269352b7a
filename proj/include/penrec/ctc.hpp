#pragma once

#include <Eigen/Dense>
#include <string>

#include "penrec/alphabet.hpp"
#include "penrec/common.hpp"

namespace penrec {

/// Label with blanks interleaved and at both ends: [-, c1, -, c2, ..., cL, -].
struct ExtendedLabel {
  std::vector<int> indices;  // length 2L+1; even positions are blank

  int length() const { return static_cast<int>(indices.size()); }
};

ExtendedLabel extend_labels(const LabelSequence& label, int blank_index);

/// Forward/backward tables over the extended label, all in log space.
/// log_beta[t][s] covers path suffixes starting at (t, s), including frame t,
/// so for every t: logsumexp_s(alpha + beta - log y_t) == log_likelihood.
struct CtcTable {
  Eigen::MatrixXd log_alpha;  // T' x (2L+1)
  Eigen::MatrixXd log_beta;   // T' x (2L+1)
  double log_likelihood = 0.0;
};

struct CtcLossResult {
  double loss = 0.0;  // -log p(label | input)
  CtcTable table;
};

/// CTC loss from per-frame log-distributions (rows sum to one in probability
/// space; blank is the last class). Throws UnalignableError when the label
/// cannot be aligned in T' frames.
CtcLossResult ctc_loss(const Eigen::MatrixXd& log_probs, const LabelSequence& label);

struct CtcGradResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // same shape as the input
};

/// Loss and gradient with respect to pre-softmax logits. Per frame the
/// gradient is softmax(logits) minus the posterior class occupancy.
CtcGradResult ctc_grad(const Eigen::MatrixXd& logits, const LabelSequence& label);

/// Loss and gradient with respect to the log-probabilities themselves
/// (the negated posterior occupancy). This is the training-loop hook: the
/// network's own backward pass handles the softmax layer.
CtcGradResult ctc_grad_wrt_log_probs(const Eigen::MatrixXd& log_probs,
                                     const LabelSequence& label);

/// Best-path decoding: per-frame argmax (ties break toward the lowest class
/// index), collapse consecutive repeats, drop blanks.
std::string greedy_decode(const Eigen::MatrixXd& log_probs, const Alphabet& alphabet);

/// Collapse a raw class-index path (repeats then blanks). Exposed for tests.
std::vector<int> collapse_path(const std::vector<int>& path, int blank_index);

/// Independent oracle: enumerates every length-T' path and sums the
/// probabilities of those that collapse to the label. Cost is classes^T',
/// so instances are restricted to T' <= 8 and at most 5 classes.
double brute_force_loss(const Eigen::MatrixXd& log_probs, const LabelSequence& label);

/// Minimum number of frames needed to emit the label (repeats need a blank).
int min_alignable_length(const LabelSequence& label);

/// logsumexp with -inf treated as "absent".
double log_add(double a, double b);

}  // namespace penrec
