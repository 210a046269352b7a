#pragma once

#include <map>
#include <string>
#include <vector>

#include "penrec/common.hpp"

namespace penrec {

/// Edit counts for one backtraced alignment that transforms `a` into `b`:
/// a deletion drops a character of `a`, an insertion adds a character of `b`.
struct EditCounts {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;

  int total() const { return substitutions + insertions + deletions; }
};

struct LevenshteinResult {
  int distance = 0;
  EditCounts counts;
};

/// Unit-cost edit distance with one backtraced alignment. When several
/// alignments tie, the backtrace prefers deletion, then substitution, then
/// insertion.
LevenshteinResult levenshtein(const std::string& a, const std::string& b);

struct EvalPair {
  std::string prediction;
  std::string reference;
};

/// Character error rate: total edit distance over total reference length.
/// Throws on an empty reference.
double cer(const std::vector<EvalPair>& pairs);

/// Word error rate: fraction of pairs whose prediction is not an exact match.
double wer(const std::vector<EvalPair>& pairs);

struct PerLengthStat {
  double mean_distance = 0.0;
  int count = 0;
};

/// Mean edit distance grouped by reference length.
std::map<int, PerLengthStat> per_length_report(const std::vector<EvalPair>& pairs);

/// Exclusive error categories over erroneous pairs. Edits are counted on the
/// alignment transforming the reference into the prediction, so a "deletion"
/// is a character the prediction is missing. Priority: any deletion makes the
/// word deletion-dominant, else any substitution, else insertion.
struct EditBreakdown {
  double deletion_dominant = 0.0;
  double substitution_dominant = 0.0;
  double insertion_dominant = 0.0;
  int erroneous = 0;
};

EditBreakdown edit_breakdown(const std::vector<EvalPair>& pairs);

struct MetricsReport {
  double cer = 0.0;
  double wer = 0.0;
  double crr = 0.0;  // 1 - cer
  std::map<int, PerLengthStat> per_length;
  EditBreakdown breakdown;
  int num_pairs = 0;
};

MetricsReport evaluate_pairs(const std::vector<EvalPair>& pairs);

/// Writes summary.csv, per_length.csv, breakdown.csv and report.json.
void write_metrics_report(const MetricsReport& report, const std::string& out_dir);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace penrec
