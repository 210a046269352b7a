// Deterministic synthetic 13-channel pen-signal generator. The signals make
// no attempt at physical realism; they keep the structural properties the
// pipeline depends on: distinct per-character temporal signatures, writer
// variation (gain/offset/time-warp/noise), hover/force semantics, and
// variable length.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "penrec/alphabet.hpp"
#include "penrec/sensor_data.hpp"

namespace penrec {

// Templates are shared between datasets (training, unseen-vocabulary test,
// ...), so the bank is seeded independently of any dataset seed.
inline constexpr std::uint64_t kDefaultTemplateSeed = 0x7e4a11ce;

struct CharacterTemplate {
  char ch = 0;
  Eigen::MatrixXd signal;  // base duration x 13; force >= 2 throughout the stroke
};

// One smooth prototype per character: random spline control points per
// channel, deterministic in (bank seed, character).
class TemplateBank {
 public:
  explicit TemplateBank(const Alphabet& alphabet, std::uint64_t seed = kDefaultTemplateSeed);

  const CharacterTemplate& of(char c) const;
  const Alphabet& alphabet() const { return alphabet_; }

 private:
  Alphabet alphabet_;
  std::vector<CharacterTemplate> templates_;
};

struct WriterProfile {
  std::string writer_id;
  Eigen::Array<double, 1, 13> gain;    // per channel, 0.7..1.3
  Eigen::Array<double, 1, 13> offset;  // per channel; zero on the force channel
  double time_warp = 1.0;              // 0.8..1.25
  double noise_level = 0.15;           // sigma as a fraction of per-channel signal std
};

WriterProfile make_writer_profile(std::uint64_t dataset_seed, int writer_index);

// Warped, gain/offset-transformed templates (with per-instance duration and
// energy jitter) joined by 2-8 frame transitions, plus white noise and 5-30
// hover frames (force < 1.0) on both ends. The stroke always spans at least
// 8*(2L+1) frames so a three-pool stack can align the label.
LabeledSample synth_word(const std::string& word, const TemplateBank& bank,
                         const WriterProfile& writer, std::uint64_t seed);

// n_writers profiles, each writing a seeded random multiset of vocab words.
Dataset synth_dataset(const std::vector<std::string>& vocab, int n_writers,
                      int samples_per_writer, std::uint64_t seed);

// 30 pseudo-words: walks in a letter graph with exactly two successors and
// two predecessors per letter, every class in at least three words. Local
// windows never pin down a word — each transition recurs across words with
// two possible continuations.
const std::vector<std::string>& default_main_vocab();
// 10 pseudo-words disjoint from the main set: splices of main-word halves at
// shared bigrams, so all their bigrams/trigrams occur in training data, yet
// each stays >= 3 edits from every main word.
const std::vector<std::string>& default_unseen_vocab();

}  // namespace penrec
