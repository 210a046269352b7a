#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "penrec/common.hpp"
#include "penrec/evaluation.hpp"
#include "penrec/rng.hpp"

using namespace penrec;

namespace {

// Independent oracle: the textbook recursive definition with memoization on
// (i, j). Shares no code with the production DP + backtrace.
int oracle_dist(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> memo((n + 1) * (m + 1), -1);
  auto idx = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == n) return static_cast<int>(m - j);
    if (j == m) return static_cast<int>(n - i);
    int& slot = memo[idx(i, j)];
    if (slot >= 0) return slot;
    int best = go(i + 1, j + 1) + (a[i] != b[j] ? 1 : 0);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    return slot = best;
  };
  return go(0, 0);
}

std::vector<std::string> all_strings(const std::string& chars, int max_len) {
  std::vector<std::string> out{""};
  std::size_t start = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = start; i < end; ++i)
      for (char c : chars) out.push_back(out[i] + c);
    start = end;
  }
  return out;
}

std::string random_string(Rng& rng, const std::string& chars, int max_len) {
  std::string s;
  const int len = rng.uniform_int(0, max_len);
  for (int i = 0; i < len; ++i)
    s += chars[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(chars.size()) - 1))];
  return s;
}

}  // namespace

TEST_CASE("distance examples") {
  CHECK(levenshtein("stabilo", "stabilo").distance == 0);
  CHECK(levenshtein("kitten", "sitting").distance == 3);
  LevenshteinResult r = levenshtein("", "ab");
  CHECK(r.distance == 2);
  CHECK(r.counts.insertions == 2);
  CHECK(r.counts.deletions == 0);
  CHECK(r.counts.substitutions == 0);
  LevenshteinResult d = levenshtein("abc", "");
  CHECK(d.distance == 3);
  CHECK(d.counts.deletions == 3);
}

TEST_CASE("matches the oracle on every pair of length <= 5 over three letters") {
  const std::vector<std::string> strings = all_strings("abc", 5);
  REQUIRE(strings.size() == 364);  // 1 + 3 + 9 + 27 + 81 + 243
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      LevenshteinResult r = levenshtein(a, b);
      REQUIRE(r.distance == oracle_dist(a, b));
      REQUIRE(r.counts.total() == r.distance);
    }
  }
}

TEST_CASE("matches the oracle on 500 random pairs of length <= 8") {
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    std::string a = random_string(rng, "abcdeF", 8);
    std::string b = random_string(rng, "abcdeF", 8);
    LevenshteinResult r = levenshtein(a, b);
    REQUIRE(r.distance == oracle_dist(a, b));
    REQUIRE(r.counts.total() == r.distance);
  }
}

TEST_CASE("metric axioms") {
  const std::vector<std::string> strings = all_strings("ab", 4);
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      const int dab = levenshtein(a, b).distance;
      CHECK((dab == 0) == (a == b));
      CHECK(dab == levenshtein(b, a).distance);
    }
  }
  // Triangle inequality on random triples of longer strings.
  Rng rng(33);
  for (int i = 0; i < 2000; ++i) {
    std::string a = random_string(rng, "abcd", 7);
    std::string b = random_string(rng, "abcd", 7);
    std::string c = random_string(rng, "abcd", 7);
    CHECK(levenshtein(a, c).distance <=
          levenshtein(a, b).distance + levenshtein(b, c).distance);
  }
}

TEST_CASE("cer examples") {
  CHECK(cer({{"stablo", "stabilo"}}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(cer({{"sun", "sun"}, {"cat", "cat"}}) == 0.0);
  CHECK_THROWS_AS((void)cer({{"x", ""}}), Error);
}

TEST_CASE("cer concatenation is the length-weighted mean") {
  std::vector<EvalPair> a{{"stablo", "stabilo"}, {"cat", "cat"}};
  std::vector<EvalPair> b{{"sun", "sin"}, {"", "ab"}};
  std::vector<EvalPair> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const double la = 7 + 3, lb = 3 + 2;
  CHECK(cer(both) == doctest::Approx((cer(a) * la + cer(b) * lb) / (la + lb)).epsilon(1e-12));
}

TEST_CASE("wer examples") {
  CHECK(wer({{"sun", "sun"}, {"cat", "car"}}) == doctest::Approx(0.5));
  CHECK(wer({{"a", "a"}}) == 0.0);
  CHECK(wer({{"a", "b"}, {"c", "d"}}) == 1.0);
}

TEST_CASE("per-length report groups by reference length") {
  std::vector<EvalPair> pairs{{"sun", "sin"}, {"cbt", "cat"}, {"abcd", "abcd"}};
  auto rep = per_length_report(pairs);
  REQUIRE(rep.size() == 2);
  CHECK(rep.at(3).mean_distance == doctest::Approx(1.0));
  CHECK(rep.at(3).count == 2);
  CHECK(rep.at(4).mean_distance == doctest::Approx(0.0));
  CHECK(per_length_report({}).empty());
}

TEST_CASE("edit breakdown categories and fractions") {
  std::vector<EvalPair> pairs{
      {"stablo", "stabilo"},  // prediction missing a char -> deletion-dominant
      {"Sun", "sun"},         // case confusion -> substitution-dominant
      {"cats", "cat"},        // extra char -> insertion-dominant
      {"same", "same"},       // correct, excluded from the denominator
  };
  EditBreakdown b = edit_breakdown(pairs);
  CHECK(b.erroneous == 3);
  CHECK(b.deletion_dominant == doctest::Approx(1.0 / 3.0));
  CHECK(b.substitution_dominant == doctest::Approx(1.0 / 3.0));
  CHECK(b.insertion_dominant == doctest::Approx(1.0 / 3.0));
  CHECK(b.deletion_dominant + b.substitution_dominant + b.insertion_dominant ==
        doctest::Approx(1.0).epsilon(1e-12));
  // Mixed edits: any deletion wins.
  EditBreakdown mixed = edit_breakdown({{"stbzlo", "stabilo"}});  // 1 del + subs
  CHECK(mixed.deletion_dominant == doctest::Approx(1.0));
}

TEST_CASE("evaluate_pairs ties the fields together") {
  std::vector<EvalPair> pairs{{"stablo", "stabilo"}, {"sun", "sun"}};
  MetricsReport r = evaluate_pairs(pairs);
  CHECK(r.num_pairs == 2);
  CHECK(r.cer == doctest::Approx(1.0 / 10.0));
  CHECK(r.wer == doctest::Approx(0.5));
  CHECK(r.crr == 1.0 - r.cer);
  CHECK(r.cer + r.crr == 1.0);
  CHECK(r.breakdown.erroneous == 1);
}

TEST_CASE("report files land on disk") {
  namespace fs = std::filesystem;
  const std::string dir = "eval_report_scratch";
  fs::remove_all(dir);
  MetricsReport r = evaluate_pairs({{"stablo", "stabilo"}, {"sun", "sin"}});
  write_metrics_report(r, dir);
  for (const char* name : {"summary.csv", "per_length.csv", "breakdown.csv", "report.json"})
    CHECK(fs::exists(fs::path(dir) / name));
  std::ifstream in(fs::path(dir) / "summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "metric,value");
  std::string json = metrics_to_json(r);
  CHECK(json.find("\"cer\"") != std::string::npos);
  fs::remove_all(dir);
}
