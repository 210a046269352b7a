#include "penrec/sensor_data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "penrec/rng.hpp"

namespace penrec {

namespace {

using ordered_json = nlohmann::ordered_json;

[[noreturn]] void line_error(const std::string& path, int line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

SensorFrame LabeledSample::frame(int t) const {
  SensorFrame f;
  for (int c = 0; c < kNumChannels; ++c) f.values[static_cast<std::size_t>(c)] = frames(t, c);
  return f;
}

Dataset parse_dataset(const std::string& path, const Alphabet& alphabet) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  Dataset dataset;
  dataset.provenance = path;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;

    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      line_error(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) line_error(path, line_no, "record is not a JSON object");
    if (!j.contains("writer_id") || !j["writer_id"].is_string())
      line_error(path, line_no, "missing string field \"writer_id\"");
    if (!j.contains("label") || !j["label"].is_string())
      line_error(path, line_no, "missing string field \"label\"");
    if (!j.contains("frames") || !j["frames"].is_array())
      line_error(path, line_no, "missing array field \"frames\"");

    LabeledSample sample;
    sample.writer_id = j["writer_id"].get<std::string>();
    sample.label = j["label"].get<std::string>();
    if (sample.label.empty()) line_error(path, line_no, "empty label");
    for (char ch : sample.label) {
      if (!alphabet.contains(ch))
        line_error(path, line_no,
                   std::string("label character '") + ch + "' outside the alphabet");
    }

    const auto& frames = j["frames"];
    if (frames.empty()) line_error(path, line_no, "sample has no frames");
    sample.frames.resize(static_cast<Eigen::Index>(frames.size()), kNumChannels);
    int t = 0;
    for (const auto& row : frames) {
      if (!row.is_array() || row.size() != static_cast<std::size_t>(kNumChannels))
        line_error(path, line_no,
                   "frame " + std::to_string(t) + " has " + std::to_string(row.size()) +
                       " channels, expected " + std::to_string(kNumChannels));
      for (int c = 0; c < kNumChannels; ++c) {
        const auto& v = row[static_cast<std::size_t>(c)];
        if (!v.is_number())
          line_error(path, line_no, "frame " + std::to_string(t) + " has a non-numeric channel");
        sample.frames(t, c) = v.get<double>();
      }
      ++t;
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& sample : dataset.samples) {
    ordered_json j;
    j["writer_id"] = sample.writer_id;
    j["label"] = sample.label;
    ordered_json frames = ordered_json::array();
    for (int t = 0; t < sample.num_frames(); ++t) {
      ordered_json row = ordered_json::array();
      for (int c = 0; c < kNumChannels; ++c) row.push_back(sample.frames(t, c));
      frames.push_back(std::move(row));
    }
    j["frames"] = std::move(frames);
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

LabeledSample trim_hover(const LabeledSample& sample, double threshold) {
  const int T = sample.num_frames();
  int first = -1;
  int last = -1;
  for (int t = 0; t < T; ++t) {
    if (sample.frames(t, kForceChannel) >= threshold) {
      if (first < 0) first = t;
      last = t;
    }
  }
  if (first < 0)
    throw AllHoverError("all-hover sample (writer " + sample.writer_id + ", label \"" +
                        sample.label + "\")");

  LabeledSample out;
  out.writer_id = sample.writer_id;
  out.label = sample.label;
  out.frames = sample.frames.middleRows(first, last - first + 1);
  return out;
}

FilterResult filter_length(const Dataset& dataset, int min_frames, int max_frames) {
  if (min_frames <= 0 || min_frames >= max_frames)
    throw ConfigError("filter_length: need 0 < min_frames < max_frames");
  FilterResult result;
  result.dataset.provenance = dataset.provenance;
  for (const auto& sample : dataset.samples) {
    int T = sample.num_frames();
    if (T >= min_frames && T <= max_frames)
      result.dataset.samples.push_back(sample);
    else
      ++result.removed;
  }
  return result;
}

LabeledSample zscore_normalize(const LabeledSample& sample) {
  constexpr double kEps = 1e-8;
  const double T = static_cast<double>(sample.num_frames());

  LabeledSample out;
  out.writer_id = sample.writer_id;
  out.label = sample.label;
  out.frames.resizeLike(sample.frames);

  Eigen::RowVectorXd mean = sample.frames.colwise().mean();
  Eigen::MatrixXd centered = sample.frames.rowwise() - mean;
  Eigen::RowVectorXd std_dev = (centered.array().square().colwise().sum() / T).sqrt();
  out.frames = centered.array().rowwise() / (std_dev.array() + kEps);
  return out;
}

Dataset prepare_dataset(const Dataset& dataset, double force_threshold, int min_frames,
                        int max_frames, PrepStats* stats) {
  Dataset trimmed;
  trimmed.provenance = dataset.provenance;
  int dropped = 0;
  for (const auto& sample : dataset.samples) {
    try {
      trimmed.samples.push_back(trim_hover(sample, force_threshold));
    } catch (const AllHoverError&) {
      ++dropped;
    }
  }
  FilterResult filtered = filter_length(trimmed, min_frames, max_frames);
  Dataset out;
  out.provenance = dataset.provenance;
  out.samples.reserve(filtered.dataset.samples.size());
  for (const auto& sample : filtered.dataset.samples)
    out.samples.push_back(zscore_normalize(sample));
  if (stats) {
    stats->dropped_all_hover = dropped;
    stats->removed_by_length = filtered.removed;
  }
  return out;
}

std::vector<FoldSplit> split_writer_folds(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("split_writer_folds: k must be >= 2");

  std::set<std::string> writer_set;
  for (const auto& sample : dataset.samples) writer_set.insert(sample.writer_id);
  std::vector<std::string> writers(writer_set.begin(), writer_set.end());
  if (static_cast<int>(writers.size()) < k)
    throw DataError("split_writer_folds: " + std::to_string(writers.size()) +
                    " writers, need at least " + std::to_string(k));

  Rng writer_rng(mix_seed(seed, 0x77726974 /* writer shuffle */));
  writer_rng.shuffle(writers);

  std::map<std::string, int> writer_fold;
  for (std::size_t i = 0; i < writers.size(); ++i)
    writer_fold[writers[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.fold_index = f + 1;
    for (const auto& [writer, assigned] : writer_fold) {
      if (assigned == f)
        fold.test_writers.push_back(writer);
      else
        fold.train_writers.push_back(writer);
    }
    // writer_fold iterates in sorted order, so these are already sorted.

    std::vector<int> training_side;
    for (int i = 0; i < dataset.size(); ++i) {
      const auto& writer = dataset.samples[static_cast<std::size_t>(i)].writer_id;
      if (writer_fold.at(writer) == f)
        fold.test_samples.push_back(i);
      else
        training_side.push_back(i);
    }

    Rng val_rng(mix_seed(seed, 0x76616c20 /* val split */, static_cast<std::uint64_t>(f)));
    val_rng.shuffle(training_side);
    std::size_t n_val = training_side.size() / 5;
    fold.val_samples.assign(training_side.begin(),
                            training_side.begin() + static_cast<std::ptrdiff_t>(n_val));
    fold.train_samples.assign(training_side.begin() + static_cast<std::ptrdiff_t>(n_val),
                              training_side.end());
    std::sort(fold.val_samples.begin(), fold.val_samples.end());
    std::sort(fold.train_samples.begin(), fold.train_samples.end());
  }
  return folds;
}

void write_split_manifest(const SplitManifest& manifest, const std::string& path) {
  ordered_json j;
  j["k"] = manifest.k;
  j["seed"] = manifest.seed;
  ordered_json folds = ordered_json::array();
  for (const auto& fold : manifest.folds) {
    ordered_json fj;
    fj["fold_index"] = fold.fold_index;
    fj["train_writers"] = fold.train_writers;
    fj["test_writers"] = fold.test_writers;
    fj["train_samples"] = fold.train_samples;
    fj["val_samples"] = fold.val_samples;
    fj["test_samples"] = fold.test_samples;
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);

  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

SplitManifest read_split_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }

  SplitManifest manifest;
  try {
    manifest.k = j.at("k").get<int>();
    manifest.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& fj : j.at("folds")) {
      FoldSplit fold;
      fold.fold_index = fj.at("fold_index").get<int>();
      fold.train_writers = fj.at("train_writers").get<std::vector<std::string>>();
      fold.test_writers = fj.at("test_writers").get<std::vector<std::string>>();
      fold.train_samples = fj.at("train_samples").get<std::vector<int>>();
      fold.val_samples = fj.at("val_samples").get<std::vector<int>>();
      fold.test_samples = fj.at("test_samples").get<std::vector<int>>();
      manifest.folds.push_back(std::move(fold));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad split manifest: " + e.what());
  }
  return manifest;
}

Dataset select_samples(const Dataset& dataset, const std::vector<int>& indices) {
  Dataset out;
  out.provenance = dataset.provenance;
  out.samples.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= dataset.size())
      throw DataError("sample index " + std::to_string(i) + " out of range (dataset has " +
                      std::to_string(dataset.size()) + " samples)");
    out.samples.push_back(dataset.samples[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset select_writers(const Dataset& dataset, const std::vector<std::string>& writers) {
  Dataset out;
  out.provenance = dataset.provenance;
  for (const auto& s : dataset.samples) {
    if (std::find(writers.begin(), writers.end(), s.writer_id) != writers.end())
      out.samples.push_back(s);
  }
  return out;
}

}  // namespace penrec
