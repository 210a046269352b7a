#include "penrec/evaluation.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace penrec {

LevenshteinResult levenshtein(const std::string& a, const std::string& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());

  std::vector<std::vector<int>> d(static_cast<std::size_t>(n) + 1,
                                  std::vector<int>(static_cast<std::size_t>(m) + 1, 0));
  for (int i = 0; i <= n; ++i) d[static_cast<std::size_t>(i)][0] = i;
  for (int j = 0; j <= m; ++j) d[0][static_cast<std::size_t>(j)] = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      int sub = d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)] +
                (a[static_cast<std::size_t>(i - 1)] == b[static_cast<std::size_t>(j - 1)] ? 0 : 1);
      int del = d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)] + 1;
      int ins = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)] + 1;
      d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::min({sub, del, ins});
    }
  }

  LevenshteinResult result;
  result.distance = d[static_cast<std::size_t>(n)][static_cast<std::size_t>(m)];

  // Backtrace one optimal alignment; tie preference deletion > substitution >
  // insertion.
  int i = n;
  int j = m;
  while (i > 0 || j > 0) {
    int here = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (i > 0 && d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)] + 1 == here) {
      ++result.counts.deletions;
      --i;
    } else if (i > 0 && j > 0 &&
               d[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)] +
                       (a[static_cast<std::size_t>(i - 1)] == b[static_cast<std::size_t>(j - 1)]
                            ? 0
                            : 1) ==
                   here) {
      if (a[static_cast<std::size_t>(i - 1)] != b[static_cast<std::size_t>(j - 1)])
        ++result.counts.substitutions;
      --i;
      --j;
    } else {
      ++result.counts.insertions;
      --j;
    }
  }
  return result;
}

double cer(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) return 0.0;
  long long distance_sum = 0;
  long long length_sum = 0;
  for (const auto& p : pairs) {
    if (p.reference.empty()) throw Error("cer: empty reference");
    distance_sum += levenshtein(p.prediction, p.reference).distance;
    length_sum += static_cast<long long>(p.reference.size());
  }
  return static_cast<double>(distance_sum) / static_cast<double>(length_sum);
}

double wer(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) return 0.0;
  int wrong = 0;
  for (const auto& p : pairs) {
    if (p.reference.empty()) throw Error("wer: empty reference");
    if (p.prediction != p.reference) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

std::map<int, PerLengthStat> per_length_report(const std::vector<EvalPair>& pairs) {
  std::map<int, PerLengthStat> stats;
  for (const auto& p : pairs) {
    int len = static_cast<int>(p.reference.size());
    auto& s = stats[len];
    s.mean_distance += levenshtein(p.prediction, p.reference).distance;
    s.count += 1;
  }
  for (auto& [len, s] : stats) s.mean_distance /= s.count;
  return stats;
}

EditBreakdown edit_breakdown(const std::vector<EvalPair>& pairs) {
  EditBreakdown breakdown;
  int deletion = 0;
  int substitution = 0;
  int insertion = 0;
  for (const auto& p : pairs) {
    if (p.prediction == p.reference) continue;
    // reference -> prediction: deletions are characters the prediction lost.
    auto counts = levenshtein(p.reference, p.prediction).counts;
    if (counts.deletions >= 1)
      ++deletion;
    else if (counts.substitutions >= 1)
      ++substitution;
    else
      ++insertion;
  }
  breakdown.erroneous = deletion + substitution + insertion;
  if (breakdown.erroneous > 0) {
    breakdown.deletion_dominant = static_cast<double>(deletion) / breakdown.erroneous;
    breakdown.substitution_dominant = static_cast<double>(substitution) / breakdown.erroneous;
    breakdown.insertion_dominant = static_cast<double>(insertion) / breakdown.erroneous;
  }
  return breakdown;
}

MetricsReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
  MetricsReport report;
  report.num_pairs = static_cast<int>(pairs.size());
  report.cer = cer(pairs);
  report.wer = wer(pairs);
  report.crr = 1.0 - report.cer;
  report.per_length = per_length_report(pairs);
  report.breakdown = edit_breakdown(pairs);
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["cer"] = report.cer;
  j["wer"] = report.wer;
  j["crr"] = report.crr;
  j["num_pairs"] = report.num_pairs;
  nlohmann::json per_length = nlohmann::json::array();
  for (const auto& [len, s] : report.per_length) {
    per_length.push_back({{"label_length", len},
                          {"mean_distance", s.mean_distance},
                          {"count", s.count}});
  }
  j["per_length"] = per_length;
  j["edit_breakdown"] = {{"deletion_dominant", report.breakdown.deletion_dominant},
                         {"substitution_dominant", report.breakdown.substitution_dominant},
                         {"insertion_dominant", report.breakdown.insertion_dominant},
                         {"erroneous", report.breakdown.erroneous}};
  return j.dump(2);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_metrics_report(const MetricsReport& report, const std::string& out_dir) {
  std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  auto summary = open_out(dir / "summary.csv");
  summary << "metric,value\n";
  summary << "cer," << fmt(report.cer) << "\n";
  summary << "wer," << fmt(report.wer) << "\n";
  summary << "crr," << fmt(report.crr) << "\n";
  summary << "num_pairs," << report.num_pairs << "\n";

  auto per_length = open_out(dir / "per_length.csv");
  per_length << "label_length,mean_distance,count\n";
  for (const auto& [len, s] : report.per_length)
    per_length << len << "," << fmt(s.mean_distance) << "," << s.count << "\n";

  auto breakdown = open_out(dir / "breakdown.csv");
  breakdown << "category,fraction\n";
  breakdown << "deletion_dominant," << fmt(report.breakdown.deletion_dominant) << "\n";
  breakdown << "substitution_dominant," << fmt(report.breakdown.substitution_dominant) << "\n";
  breakdown << "insertion_dominant," << fmt(report.breakdown.insertion_dominant) << "\n";

  auto json = open_out(dir / "report.json");
  json << metrics_to_json(report) << "\n";
}

}  // namespace penrec
