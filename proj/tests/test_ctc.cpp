#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "penrec/common.hpp"
#include "penrec/ctc.hpp"
#include "penrec/rng.hpp"

using namespace penrec;
using Eigen::MatrixXd;

namespace {

// Random frame-wise log-distributions (rows normalize to 1 in prob space).
MatrixXd random_log_probs(Rng& rng, int frames, int classes, double scale = 2.0) {
  MatrixXd logits(frames, classes);
  for (int t = 0; t < frames; ++t)
    for (int c = 0; c < classes; ++c) logits(t, c) = scale * rng.normal();
  MatrixXd out(frames, classes);
  for (int t = 0; t < frames; ++t) {
    double mx = logits.row(t).maxCoeff();
    double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

MatrixXd uniform_log_probs(int frames, int classes) {
  return MatrixXd::Constant(frames, classes, -std::log(static_cast<double>(classes)));
}

}  // namespace

TEST_CASE("extend_labels interleaves blanks") {
  Alphabet ab("ab");
  CHECK(extend_labels(ab.encode("ab"), ab.blank_index()).indices ==
        std::vector<int>{2, 0, 2, 1, 2});
  CHECK(extend_labels(ab.encode("a"), ab.blank_index()).indices == std::vector<int>{2, 0, 2});
  CHECK(extend_labels(ab.encode("aa"), ab.blank_index()).indices ==
        std::vector<int>{2, 0, 2, 0, 2});
}

TEST_CASE("min_alignable_length counts repeat separators") {
  Alphabet ab("abc");
  CHECK(min_alignable_length(ab.encode("ab")) == 2);
  CHECK(min_alignable_length(ab.encode("aa")) == 3);
  CHECK(min_alignable_length(ab.encode("abc")) == 3);
  CHECK(min_alignable_length(ab.encode("aab")) == 4);
}

TEST_CASE("single frame forces the single path") {
  Alphabet ab("ab");
  Rng rng(3);
  MatrixXd lp = random_log_probs(rng, 1, 3);
  CtcLossResult r = ctc_loss(lp, ab.encode("a"));
  CHECK(r.loss == doctest::Approx(-lp(0, 0)).epsilon(1e-12));
}

TEST_CASE("two uniform frames, single label: loss is ln 3") {
  Alphabet ab("ab");
  MatrixXd lp = uniform_log_probs(2, 3);
  CHECK(ctc_loss(lp, ab.encode("a")).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(brute_force_loss(lp, ab.encode("a")) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("too few frames raise UnalignableError") {
  Alphabet ab("ab");
  MatrixXd lp = uniform_log_probs(1, 3);
  CHECK_THROWS_AS((void)ctc_loss(lp, ab.encode("ab")), UnalignableError);
  MatrixXd lp2 = uniform_log_probs(2, 3);
  CHECK_THROWS_AS((void)ctc_loss(lp2, ab.encode("aa")), UnalignableError);
}

TEST_CASE("loss matches the brute-force oracle on 400 random instances") {
  Rng rng(2024);
  int tested = 0;
  while (tested < 400) {
    const int alpha_size = rng.uniform_int(1, 3);  // classes = alpha_size + blank <= 4
    const int frames = rng.uniform_int(1, 6);
    const int len = rng.uniform_int(1, 3);
    LabelSequence label;
    for (int i = 0; i < len; ++i) label.indices.push_back(rng.uniform_int(0, alpha_size - 1));
    if (frames < min_alignable_length(label)) continue;
    MatrixXd lp = random_log_probs(rng, frames, alpha_size + 1);
    const double fast = ctc_loss(lp, label).loss;
    const double slow = brute_force_loss(lp, label);
    REQUIRE(std::abs(fast - slow) < 1e-9);
    ++tested;
  }
  CHECK(tested == 400);
}

TEST_CASE("forward/backward tables are consistent at every frame") {
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const int alpha_size = rng.uniform_int(2, 4);
    const int len = rng.uniform_int(1, 4);
    LabelSequence label;
    for (int i = 0; i < len; ++i) label.indices.push_back(rng.uniform_int(0, alpha_size - 1));
    const int frames = min_alignable_length(label) + rng.uniform_int(0, 5);
    MatrixXd lp = random_log_probs(rng, frames, alpha_size + 1);
    CtcLossResult r = ctc_loss(lp, label);
    const ExtendedLabel ext = extend_labels(label, alpha_size);
    for (int t = 0; t < frames; ++t) {
      double acc = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < ext.length(); ++s) {
        const double y = lp(t, ext.indices[static_cast<std::size_t>(s)]);
        acc = log_add(acc, r.table.log_alpha(t, s) + r.table.log_beta(t, s) - y);
      }
      CHECK(std::abs(acc - r.table.log_likelihood) < 1e-8);
    }
  }
}

TEST_CASE("gradient rows sum to zero") {
  Rng rng(5);
  Alphabet ab("abcd");
  MatrixXd logits(6, 5);
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 5; ++c) logits(t, c) = rng.normal();
  CtcGradResult g = ctc_grad(logits, ab.encode("bad"));
  for (int t = 0; t < 6; ++t) CHECK(std::abs(g.grad.row(t).sum()) < 1e-8);
}

TEST_CASE("single-frame gradient is softmax minus one-hot") {
  Rng rng(6);
  Alphabet ab("ab");
  MatrixXd logits(1, 3);
  logits << 0.3, -1.2, 0.9;
  CtcGradResult g = ctc_grad(logits, ab.encode("a"));
  Eigen::RowVectorXd sm = (logits.row(0).array() - logits.row(0).maxCoeff()).exp();
  sm /= sm.sum();
  CHECK(std::abs(g.grad(0, 0) - (sm(0) - 1.0)) < 1e-12);
  CHECK(std::abs(g.grad(0, 1) - sm(1)) < 1e-12);
  CHECK(std::abs(g.grad(0, 2) - sm(2)) < 1e-12);
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(7);
  Alphabet full = Alphabet::latin();
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const int frames = 4;
    const int classes = full.num_classes();
    MatrixXd logits(frames, classes);
    for (int t = 0; t < frames; ++t)
      for (int c = 0; c < classes; ++c) logits(t, c) = rng.normal();
    const int len = rng.uniform_int(1, 2);
    LabelSequence label;
    for (int i = 0; i < len; ++i) label.indices.push_back(rng.uniform_int(0, full.size() - 1));
    if (frames < min_alignable_length(label)) continue;

    CtcGradResult g = ctc_grad(logits, label);
    const double h = 1e-5;
    for (int t = 0; t < frames; ++t) {
      for (int c = 0; c < classes; ++c) {
        MatrixXd lo = logits, hi = logits;
        lo(t, c) -= h;
        hi(t, c) += h;
        const double fd = (ctc_grad(hi, label).loss - ctc_grad(lo, label).loss) / (2.0 * h);
        const double a = g.grad(t, c);
        const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        worst = std::max(worst, rel);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("grad wrt log-probs is the negated occupancy") {
  // Chain rule check: dL/dlogits == softmax * sum(occupancy) - occupancy when
  // composed with the softmax Jacobian.
  Rng rng(8);
  Alphabet ab("abc");
  MatrixXd lp = random_log_probs(rng, 5, 4);
  LabelSequence label = ab.encode("cab");
  CtcGradResult wrt_log = ctc_grad_wrt_log_probs(lp, label);
  CtcGradResult wrt_logits = ctc_grad(lp, label);  // lp rows are valid logits too
  MatrixXd probs = lp.array().exp().matrix();
  for (int t = 0; t < 5; ++t) {
    Eigen::RowVectorXd sm = probs.row(t) / probs.row(t).sum();
    double gsum = wrt_log.grad.row(t).sum();
    Eigen::RowVectorXd composed = wrt_log.grad.row(t) - gsum * sm;
    // Row-stochastic input: softmax(lp) == exp(lp), so both paths must agree.
    for (int c = 0; c < 4; ++c) CHECK(std::abs(composed(c) - wrt_logits.grad(t, c)) < 1e-10);
  }
  CHECK(wrt_log.loss == doctest::Approx(wrt_logits.loss).epsilon(1e-12));
}

TEST_CASE("greedy decode collapses repeats and removes blanks") {
  Alphabet ab("ab");
  auto path_to_lp = [&](const std::vector<int>& path) {
    MatrixXd lp = MatrixXd::Constant(static_cast<Eigen::Index>(path.size()), 3, -10.0);
    for (std::size_t t = 0; t < path.size(); ++t) lp(static_cast<Eigen::Index>(t), path[t]) = -0.1;
    return lp;
  };
  CHECK(greedy_decode(path_to_lp({0, 0, 2, 0, 1}), ab) == "aab");
  CHECK(greedy_decode(path_to_lp({2, 2, 2, 2}), ab) == "");

  Alphabet nsu("nsu");
  MatrixXd lp2 = MatrixXd::Constant(7, 4, -10.0);
  const int path[] = {3, 1, 1, 3, 2, 0, 0};  // -, s, s, -, u, n, n
  for (int t = 0; t < 7; ++t) lp2(t, path[t]) = -0.1;
  CHECK(greedy_decode(lp2, nsu) == "sun");
}

TEST_CASE("greedy decode breaks argmax ties toward the lowest class") {
  Alphabet ab("ab");
  MatrixXd lp(1, 3);
  lp << -0.5, -0.5, -3.0;
  CHECK(greedy_decode(lp, ab) == "a");
}

TEST_CASE("greedy decode is idempotent under re-encoding") {
  Rng rng(17);
  Alphabet ab("abc");
  for (int rep = 0; rep < 50; ++rep) {
    MatrixXd lp = random_log_probs(rng, rng.uniform_int(1, 12), 4);
    std::string w = greedy_decode(lp, ab);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(ab.contains(w[i]));
    if (w.empty()) continue;
    // Re-encoding and collapsing the decoded word changes nothing.
    std::vector<int> again = ab.encode(w).indices;
    CHECK(ab.decode(collapse_path(again, ab.blank_index())).size() <= w.size());
  }
}

TEST_CASE("collapse_path examples") {
  CHECK(collapse_path({0, 0, 3, 0, 1}, 3) == std::vector<int>{0, 0, 1});
  CHECK(collapse_path({3, 3, 3}, 3) == std::vector<int>{});
  CHECK(collapse_path({1, 1, 1, 2}, 3) == std::vector<int>{1, 2});
}

TEST_CASE("brute force rejects unreachable labels") {
  Alphabet ab("ab");
  MatrixXd lp = uniform_log_probs(1, 3);
  CHECK_THROWS_AS((void)brute_force_loss(lp, ab.encode("ab")), UnalignableError);
  MatrixXd big = uniform_log_probs(9, 3);
  CHECK_THROWS_AS((void)brute_force_loss(big, ab.encode("a")), Error);
}

TEST_CASE("log_add handles the -inf sentinel") {
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_add(ninf, -1.5) == doctest::Approx(-1.5));
  CHECK(log_add(-1.5, ninf) == doctest::Approx(-1.5));
  CHECK(log_add(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}
