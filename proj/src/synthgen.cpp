#include "penrec/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "penrec/rng.hpp"

namespace penrec {

namespace {

constexpr std::uint64_t kTagTemplate = 0x746d706c;
constexpr std::uint64_t kTagWriter = 0x77727472;
constexpr std::uint64_t kTagWords = 0x776f7264;
constexpr std::uint64_t kTagSample = 0x736d706c;

constexpr double kStrokeForceFloor = 1.5;  // after writer gain, still > trim threshold 1.0
constexpr int kControlPoints = 10;

// Catmull-Rom through uniformly spaced control values, clamped ends.
Eigen::VectorXd spline_track(const std::vector<double>& control, int frames) {
  const int k = static_cast<int>(control.size());
  Eigen::VectorXd out(frames);
  auto at = [&control, k](int i) { return control[static_cast<std::size_t>(std::clamp(i, 0, k - 1))]; };
  for (int t = 0; t < frames; ++t) {
    double u = frames == 1 ? 0.0 : static_cast<double>(t) / (frames - 1) * (k - 1);
    int seg = std::min(static_cast<int>(u), k - 2);
    double s = u - seg;
    double p0 = at(seg - 1), p1 = at(seg), p2 = at(seg + 1), p3 = at(seg + 2);
    double m1 = 0.5 * (p2 - p0);
    double m2 = 0.5 * (p3 - p1);
    double s2 = s * s, s3 = s2 * s;
    out(t) = (2 * s3 - 3 * s2 + 1) * p1 + (s3 - 2 * s2 + s) * m1 + (-2 * s3 + 3 * s2) * p2 +
             (s3 - s2) * m2;
  }
  return out;
}

// Linear time resampling of a (T x C) signal to a new length.
Eigen::MatrixXd resample(const Eigen::MatrixXd& x, int frames) {
  const int T = static_cast<int>(x.rows());
  if (frames == T) return x;
  Eigen::MatrixXd out(frames, x.cols());
  for (int t = 0; t < frames; ++t) {
    double u = frames == 1 ? 0.0 : static_cast<double>(t) / (frames - 1) * (T - 1);
    int lo = std::min(static_cast<int>(u), T - 2);
    double s = u - lo;
    out.row(t) = (1.0 - s) * x.row(lo) + s * x.row(lo + 1);
  }
  return out;
}

}  // namespace

TemplateBank::TemplateBank(const Alphabet& alphabet, std::uint64_t seed) : alphabet_(alphabet) {
  templates_.reserve(static_cast<std::size_t>(alphabet_.size()));
  for (int i = 0; i < alphabet_.size(); ++i) {
    char ch = alphabet_.char_at(i);
    Rng rng(mix_seed(seed, kTagTemplate, static_cast<std::uint64_t>(static_cast<unsigned char>(ch))));

    CharacterTemplate tmpl;
    tmpl.ch = ch;
    int duration = rng.uniform_int(34, 48);
    tmpl.signal.resize(duration, kNumChannels);
    for (int c = 0; c < kNumChannels; ++c) {
      std::vector<double> control(kControlPoints);
      if (c == kForceChannel) {
        for (auto& v : control) v = rng.uniform(3.0, 8.0);
      } else {
        // A per-character DC level on each channel plus spline wiggle: the
        // level differences survive per-sample z-scoring (which removes only
        // the whole-word mean), giving every character a noise-robust local
        // signature on top of its trajectory shape.
        double level = rng.normal() * 0.9;
        for (auto& v : control) v = level + rng.normal() * 1.2;
      }
      tmpl.signal.col(c) = spline_track(control, duration);
    }
    // The stroke keeps firm pen contact; interpolation can undershoot, so clamp.
    tmpl.signal.col(kForceChannel) = tmpl.signal.col(kForceChannel).cwiseMax(2.0);
    templates_.push_back(std::move(tmpl));
  }
}

const CharacterTemplate& TemplateBank::of(char c) const {
  return templates_[static_cast<std::size_t>(alphabet_.index_of(c))];
}

WriterProfile make_writer_profile(std::uint64_t dataset_seed, int writer_index) {
  Rng rng(mix_seed(dataset_seed, kTagWriter, static_cast<std::uint64_t>(writer_index)));
  WriterProfile profile;
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%02d", writer_index + 1);
  profile.writer_id = buf;
  for (int c = 0; c < kNumChannels; ++c) profile.gain(c) = rng.uniform(0.7, 1.3);
  for (int c = 0; c < kNumChannels; ++c)
    profile.offset(c) = c == kForceChannel ? 0.0 : rng.uniform(-0.4, 0.4);
  profile.time_warp = rng.uniform(0.8, 1.25);
  profile.noise_level = 0.15;
  return profile;
}

LabeledSample synth_word(const std::string& word, const TemplateBank& bank,
                         const WriterProfile& writer, std::uint64_t seed) {
  if (word.empty()) throw DataError("synth_word: empty word");
  for (char ch : word)
    if (!bank.alphabet().contains(ch))
      throw DataError(std::string("synth_word: character '") + ch + "' outside the alphabet");

  Rng rng(seed);

  // Transformed character segments. Each instance gets its own duration and
  // energy jitter on top of the writer profile, so whole-word timing and
  // amplitude signatures are unstable while local character shape survives —
  // a recognizer has to read characters, not memorize word trajectories.
  std::vector<Eigen::MatrixXd> segments;
  segments.reserve(word.size());
  for (char ch : word) {
    const Eigen::MatrixXd& base = bank.of(ch).signal;
    double stretch = writer.time_warp * rng.uniform(0.92, 1.09);
    int warped = std::max(
        4, static_cast<int>(std::lround(static_cast<double>(base.rows()) * stretch)));
    Eigen::MatrixXd seg = resample(base, warped);
    seg.array() *= std::exp(rng.normal() * 0.04);
    seg.array().rowwise() *= writer.gain;
    seg.array().rowwise() += writer.offset;
    segments.push_back(std::move(seg));
  }

  // Join with short transitions that dip through the writer's rest pose
  // (offset levels, light pen pressure). Every character boundary then looks
  // alike no matter which characters it joins — boundaries give segmentation
  // cues but no word identity, for seen and unseen words equally.
  std::vector<int> gaps(segments.size() > 0 ? segments.size() - 1 : 0);
  int stroke_T = static_cast<int>(segments[0].rows());
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    gaps[i] = rng.uniform_int(2, 8);
    stroke_T += gaps[i] + static_cast<int>(segments[i + 1].rows());
  }

  Eigen::RowVectorXd rest(kNumChannels);
  for (int c = 0; c < kNumChannels; ++c)
    rest(c) = c == kForceChannel ? kStrokeForceFloor + 0.3 : writer.offset(c);

  Eigen::MatrixXd stroke(stroke_T, kNumChannels);
  int row = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    stroke.middleRows(row, segments[i].rows()) = segments[i];
    row += static_cast<int>(segments[i].rows());
    if (i + 1 < segments.size()) {
      const Eigen::RowVectorXd from = segments[i].row(segments[i].rows() - 1);
      const Eigen::RowVectorXd to = segments[i + 1].row(0);
      for (int g = 0; g < gaps[i]; ++g) {
        double s = static_cast<double>(g + 1) / (gaps[i] + 1);
        double a = std::sin(M_PI * s);
        stroke.row(row++) = (1.0 - a) * ((1.0 - s) * from + s * to) + a * rest;
      }
    }
  }

  // Guarantee CTC feasibility under three poolings: T >= 8 * (2L + 1).
  const int min_stroke = 8 * (2 * static_cast<int>(word.size()) + 1);
  if (stroke_T < min_stroke) {
    stroke = resample(stroke, min_stroke);
    stroke_T = min_stroke;
  }

  // White noise scaled per channel to the stroke's own variability; the force
  // channel gets less so pen contact stays unambiguous.
  Eigen::RowVectorXd mean = stroke.colwise().mean();
  Eigen::RowVectorXd sd =
      ((stroke.rowwise() - mean).array().square().colwise().sum() / stroke_T).sqrt();
  for (int t = 0; t < stroke_T; ++t) {
    for (int c = 0; c < kNumChannels; ++c) {
      double sigma = writer.noise_level * sd(c) * (c == kForceChannel ? 0.3 : 1.0);
      stroke(t, c) += rng.normal() * sigma;
    }
  }
  stroke.col(kForceChannel) = stroke.col(kForceChannel).cwiseMax(kStrokeForceFloor);

  int hover_lead = rng.uniform_int(5, 30);
  int hover_tail = rng.uniform_int(5, 30);
  LabeledSample sample;
  sample.writer_id = writer.writer_id;
  sample.label = word;
  sample.frames.resize(hover_lead + stroke_T + hover_tail, kNumChannels);
  auto hover_row = [&rng, &writer](Eigen::MatrixXd& frames, int r) {
    for (int c = 0; c < kNumChannels; ++c) {
      if (c == kForceChannel)
        frames(r, c) = rng.uniform(0.05, 0.85);
      else
        frames(r, c) = writer.offset(c) + rng.normal() * 0.05;
    }
  };
  for (int r = 0; r < hover_lead; ++r) hover_row(sample.frames, r);
  sample.frames.middleRows(hover_lead, stroke_T) = stroke;
  for (int r = 0; r < hover_tail; ++r) hover_row(sample.frames, hover_lead + stroke_T + r);
  return sample;
}

Dataset synth_dataset(const std::vector<std::string>& vocab, int n_writers,
                      int samples_per_writer, std::uint64_t seed) {
  if (vocab.empty()) throw ConfigError("synth_dataset: empty vocabulary");
  if (n_writers < 1 || samples_per_writer < 1)
    throw ConfigError("synth_dataset: need at least one writer and one sample per writer");

  TemplateBank bank(Alphabet::latin());
  Dataset dataset;
  dataset.provenance = "synthgen";
  dataset.samples.reserve(static_cast<std::size_t>(n_writers) *
                          static_cast<std::size_t>(samples_per_writer));
  for (int w = 0; w < n_writers; ++w) {
    WriterProfile profile = make_writer_profile(seed, w);
    Rng word_rng(mix_seed(seed, kTagWords, static_cast<std::uint64_t>(w)));
    for (int j = 0; j < samples_per_writer; ++j) {
      const std::string& word =
          vocab[static_cast<std::size_t>(word_rng.uniform_int(0, static_cast<int>(vocab.size()) - 1))];
      std::uint64_t sample_seed =
          mix_seed(seed, kTagSample,
                   (static_cast<std::uint64_t>(w) << 32) | static_cast<std::uint64_t>(j));
      dataset.samples.push_back(synth_word(word, bank, profile, sample_seed));
    }
  }
  return dataset;
}

// Pseudo-words built as walks in a fixed letter graph where every letter has
// exactly two successors and two predecessors. Every transition that occurs
// is reused across several words and always admits two continuations, so no
// local window pins down which word it came from — the opposite of natural
// text, where rare pairs act as word signatures. Every one of the 52 classes
// appears in at least three words and never twice in the same word.
const std::vector<std::string>& default_main_vocab() {
  static const std::vector<std::string> vocab = {
      "VjOUSDn",  "uBHaTIA",  "McLsihf",  "oNbtYkq",  "wvJWRYx",  "ytdQzCX",
      "meZlNbS",  "KzVjPkq",  "rsihpRJ",  "gpMcrwG",  "FKVuTIn",  "EmeQzCX",
      "gPxCXyO",  "WRJuBHa",  "DnEmeZl",  "GfoLsd",   "AFbSDM",   "vFKVjO",
      "UjPxKz",   "oNBHaT",   "tYkqWR",   "QhpMcr",   "GfloLs",   "gPkqHayt",
      "IAZUSeQh", "wvFbtdgp", "EmeZUSDn", "ihflNBgp", "OAFbtdQz", "TvJuBHrw",
  };
  return vocab;
}

// Chimeras: each word splices two main words at a shared bigram near the
// middle, so every bigram and trigram it contains occurs in training data and
// only the whole-word composition is new. Each stays at least three edits
// away from every main word, so decoding them well cannot come from snapping
// to the nearest training word.
const std::vector<std::string>& default_unseen_vocab() {
  static const std::vector<std::string> vocab = {
      "meZlNBgp", "vFKVjPkq", "GfoLsihf", "IAZUSDn",  "oNbtdQz",
      "uBHayt",   "rsihpMcr", "wvFbtYkq", "VjOUSeQh", "KzVjPxKz",
  };
  return vocab;
}

}  // namespace penrec
