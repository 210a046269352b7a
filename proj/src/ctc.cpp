#include "penrec/ctc.hpp"

#include <cmath>
#include <limits>

namespace penrec {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_log_probs(const Eigen::MatrixXd& log_probs, const LabelSequence& label) {
  const auto frames = log_probs.rows();
  const auto classes = log_probs.cols();
  if (frames < 1) throw Error("ctc: need at least one frame");
  if (classes < 2) throw Error("ctc: need at least two classes");
  for (int idx : label.indices) {
    if (idx < 0 || idx >= classes - 1)
      throw Error("ctc: label index outside the non-blank classes");
  }
  for (Eigen::Index t = 0; t < frames; ++t) {
    double max = log_probs.row(t).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < classes; ++k) sum += std::exp(log_probs(t, k) - max);
    double lse = max + std::log(sum);
    if (std::abs(lse) > 1e-6)
      throw Error("ctc: frame " + std::to_string(t) + " is not a normalized distribution");
  }
}

}  // namespace

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

ExtendedLabel extend_labels(const LabelSequence& label, int blank_index) {
  if (label.indices.empty()) throw Error("ctc: empty label");
  ExtendedLabel ext;
  ext.indices.reserve(2 * label.indices.size() + 1);
  ext.indices.push_back(blank_index);
  for (int idx : label.indices) {
    ext.indices.push_back(idx);
    ext.indices.push_back(blank_index);
  }
  return ext;
}

int min_alignable_length(const LabelSequence& label) {
  int pairs = 0;
  for (std::size_t i = 1; i < label.indices.size(); ++i)
    if (label.indices[i] == label.indices[i - 1]) ++pairs;
  return label.length() + pairs;
}

CtcLossResult ctc_loss(const Eigen::MatrixXd& log_probs, const LabelSequence& label) {
  check_log_probs(log_probs, label);
  const int frames = static_cast<int>(log_probs.rows());
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  if (frames < min_alignable_length(label))
    throw UnalignableError("label unalignable: " + std::to_string(frames) +
                           " frames for a minimum path of " +
                           std::to_string(min_alignable_length(label)));

  const ExtendedLabel ext = extend_labels(label, blank);
  const int states = ext.length();
  const auto& l = ext.indices;

  // A transition s-2 -> s is allowed unless it would skip a required blank.
  auto can_skip = [&](int s) {
    return s >= 2 && l[s] != blank && l[s] != l[s - 2];
  };

  CtcTable table;
  table.log_alpha.setConstant(frames, states, kNegInf);
  table.log_beta.setConstant(frames, states, kNegInf);
  auto& alpha = table.log_alpha;
  auto& beta = table.log_beta;

  alpha(0, 0) = log_probs(0, l[0]);
  if (states > 1) alpha(0, 1) = log_probs(0, l[1]);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) alpha(t, s) = acc + log_probs(t, l[s]);
    }
  }

  beta(frames - 1, states - 1) = log_probs(frames - 1, l[states - 1]);
  if (states > 1) beta(frames - 1, states - 2) = log_probs(frames - 1, l[states - 2]);
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < states; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      if (acc != kNegInf) beta(t, s) = acc + log_probs(t, l[s]);
    }
  }

  double loglik = alpha(frames - 1, states - 1);
  if (states > 1) loglik = log_add(loglik, alpha(frames - 1, states - 2));
  if (loglik == kNegInf)
    throw UnalignableError("label unalignable: all paths have zero probability");
  table.log_likelihood = loglik;

  CtcLossResult result;
  result.loss = -loglik;
  result.table = std::move(table);
  return result;
}

namespace {

/// Posterior class occupancy gamma[t][k] = p(path passes class k at t | label).
Eigen::MatrixXd occupancy(const Eigen::MatrixXd& log_probs, const LabelSequence& label,
                          const CtcTable& table) {
  const int frames = static_cast<int>(log_probs.rows());
  const int classes = static_cast<int>(log_probs.cols());
  const ExtendedLabel ext = extend_labels(label, classes - 1);
  Eigen::MatrixXd log_gamma(frames, classes);
  log_gamma.setConstant(kNegInf);
  for (int t = 0; t < frames; ++t) {
    for (int s = 0; s < ext.length(); ++s) {
      double ab = table.log_alpha(t, s) + table.log_beta(t, s);
      if (ab == kNegInf) continue;
      int k = ext.indices[static_cast<std::size_t>(s)];
      double contrib = ab - log_probs(t, k) - table.log_likelihood;
      log_gamma(t, k) = log_add(log_gamma(t, k), contrib);
    }
  }
  return log_gamma.array().exp().matrix();
}

}  // namespace

CtcGradResult ctc_grad_wrt_log_probs(const Eigen::MatrixXd& log_probs,
                                     const LabelSequence& label) {
  CtcLossResult fb = ctc_loss(log_probs, label);
  CtcGradResult result;
  result.loss = fb.loss;
  result.grad = -occupancy(log_probs, label, fb.table);
  return result;
}

CtcGradResult ctc_grad(const Eigen::MatrixXd& logits, const LabelSequence& label) {
  const int frames = static_cast<int>(logits.rows());
  Eigen::MatrixXd log_probs(logits.rows(), logits.cols());
  for (int t = 0; t < frames; ++t) {
    double max = logits.row(t).maxCoeff();
    double lse = max + std::log((logits.row(t).array() - max).exp().sum());
    log_probs.row(t) = logits.row(t).array() - lse;
  }
  CtcLossResult fb = ctc_loss(log_probs, label);
  CtcGradResult result;
  result.loss = fb.loss;
  result.grad = log_probs.array().exp().matrix() - occupancy(log_probs, label, fb.table);
  return result;
}

std::vector<int> collapse_path(const std::vector<int>& path, int blank_index) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != blank_index) out.push_back(k);
    prev = k;
  }
  return out;
}

std::string greedy_decode(const Eigen::MatrixXd& log_probs, const Alphabet& alphabet) {
  if (log_probs.rows() < 1) throw Error("greedy_decode: need at least one frame");
  if (log_probs.cols() != alphabet.num_classes())
    throw Error("greedy_decode: class count does not match the alphabet");
  std::vector<int> path;
  path.reserve(static_cast<std::size_t>(log_probs.rows()));
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    int best = 0;
    for (Eigen::Index k = 1; k < log_probs.cols(); ++k)
      if (log_probs(t, k) > log_probs(t, best)) best = static_cast<int>(k);
    path.push_back(best);
  }
  return alphabet.decode(collapse_path(path, alphabet.blank_index()));
}

double brute_force_loss(const Eigen::MatrixXd& log_probs, const LabelSequence& label) {
  check_log_probs(log_probs, label);
  const int frames = static_cast<int>(log_probs.rows());
  const int classes = static_cast<int>(log_probs.cols());
  if (frames > 8 || classes > 5)
    throw Error("brute_force_loss: instance too large (T' <= 8, classes <= 5)");

  const int blank = classes - 1;
  const Eigen::MatrixXd probs = log_probs.array().exp().matrix();
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  double total = 0.0;
  while (true) {
    double p = 1.0;
    for (int t = 0; t < frames; ++t) p *= probs(t, path[static_cast<std::size_t>(t)]);
    if (collapse_path(path, blank) == label.indices) total += p;
    // Next path in odometer order.
    int t = frames - 1;
    while (t >= 0 && path[static_cast<std::size_t>(t)] == classes - 1) {
      path[static_cast<std::size_t>(t)] = 0;
      --t;
    }
    if (t < 0) break;
    ++path[static_cast<std::size_t>(t)];
  }
  if (total <= 0.0)
    throw UnalignableError("label unalignable: no path collapses to the label");
  return -std::log(total);
}

}  // namespace penrec
