#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "penrec/alphabet.hpp"
#include "penrec/common.hpp"
#include "penrec/sensor_data.hpp"

using namespace penrec;
namespace fs = std::filesystem;

namespace {

LabeledSample make_sample(const std::string& writer, const std::string& label,
                          const std::vector<double>& force) {
  LabeledSample s;
  s.writer_id = writer;
  s.label = label;
  s.frames = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(force.size()), kNumChannels);
  for (std::size_t t = 0; t < force.size(); ++t) {
    for (int c = 0; c < kNumChannels - 1; ++c)
      s.frames(static_cast<Eigen::Index>(t), c) = 0.1 * static_cast<double>(t) + 0.01 * c;
    s.frames(static_cast<Eigen::Index>(t), kForceChannel) = force[t];
  }
  return s;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { fs::remove(path); }
};

std::string frame_row(double force) {
  std::string row = "[";
  for (int c = 0; c < 12; ++c) row += "0.5,";
  return row + std::to_string(force) + "]";
}

}  // namespace

TEST_CASE("parse accepts a well-formed two-line file") {
  TempFile f("ok.jsonl", "{\"writer_id\":\"w1\",\"label\":\"ab\",\"frames\":[" + frame_row(2.0) +
                             "," + frame_row(3.0) + "]}\n" +
                             "{\"writer_id\":\"w2\",\"label\":\"c\",\"frames\":[" +
                             frame_row(1.0) + "]}\n");
  Dataset d = parse_dataset(f.path, Alphabet("abc"));
  REQUIRE(d.size() == 2);
  CHECK(d.samples[0].writer_id == "w1");
  CHECK(d.samples[0].label == "ab");
  CHECK(d.samples[0].num_frames() == 2);
  CHECK(d.samples[0].frames(1, kForceChannel) == 3.0);
  CHECK(d.samples[0].frame(0).force() == 2.0);
  CHECK(d.samples[1].label == "c");
}

TEST_CASE("parse rejects malformed lines with the line number") {
  TempFile f("bad12.jsonl",
             "{\"writer_id\":\"w\",\"label\":\"a\",\"frames\":[" + frame_row(2.0) + "]}\n" +
                 "{\"writer_id\":\"w\",\"label\":\"a\",\"frames\":[[1,2,3,4,5,6,7,8,9,10,11,12]]}\n");
  try {
    parse_dataset(f.path, Alphabet("abc"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    CHECK(std::string(e.what()).find("12") != std::string::npos);
  }
}

TEST_CASE("parse rejects bad labels") {
  TempFile empty("lbl1.jsonl",
                 "{\"writer_id\":\"w\",\"label\":\"\",\"frames\":[" + frame_row(2.0) + "]}\n");
  CHECK_THROWS_AS((void)parse_dataset(empty.path, Alphabet("abc")), DataError);
  TempFile outside("lbl2.jsonl",
                   "{\"writer_id\":\"w\",\"label\":\"ax\",\"frames\":[" + frame_row(2.0) + "]}\n");
  CHECK_THROWS_AS((void)parse_dataset(outside.path, Alphabet("abc")), DataError);
}

TEST_CASE("empty file and missing file") {
  TempFile f("empty.jsonl", "");
  CHECK(parse_dataset(f.path, Alphabet("abc")).size() == 0);
  CHECK_THROWS_AS((void)parse_dataset("does_not_exist.jsonl", Alphabet("abc")), IoError);
}

TEST_CASE("write/parse round trip is exact") {
  Dataset d;
  d.samples.push_back(make_sample("w1", "ab", {2.0, 0.25, 3.75}));
  d.samples[0].frames(0, 3) = 1.0 / 3.0;  // not representable in short decimal
  d.samples[0].frames(1, 7) = -17.125;
  write_dataset(d, "rt.jsonl");
  Dataset back = parse_dataset("rt.jsonl", Alphabet("abc"));
  REQUIRE(back.size() == 1);
  CHECK(back.samples[0].frames == d.samples[0].frames);
  CHECK(back.samples[0].writer_id == "w1");
  fs::remove("rt.jsonl");
}

TEST_CASE("trim_hover keeps the span between the first and last pressed frame") {
  LabeledSample s = make_sample("w", "a", {0, 0, 3, 5, 0, 4, 0, 0});
  LabeledSample t = trim_hover(s, 1.0);
  REQUIRE(t.num_frames() == 4);
  CHECK(t.frames(0, kForceChannel) == 3.0);
  CHECK(t.frames(1, kForceChannel) == 5.0);
  CHECK(t.frames(2, kForceChannel) == 0.0);
  CHECK(t.frames(3, kForceChannel) == 4.0);
  // Non-force channels come along with their rows.
  CHECK(t.frames(0, 0) == s.frames(2, 0));
}

TEST_CASE("trim_hover identity, idempotence, boundary, and all-hover error") {
  LabeledSample pressed = make_sample("w", "a", {2, 3, 4});
  LabeledSample t = trim_hover(pressed, 1.0);
  CHECK(t.frames == pressed.frames);

  LabeledSample s = make_sample("w", "a", {0.5, 2, 0.1, 3, 0.2});
  LabeledSample once = trim_hover(s, 1.0);
  LabeledSample twice = trim_hover(once, 1.0);
  CHECK(once.frames == twice.frames);
  CHECK(once.frames(0, kForceChannel) >= 1.0);
  CHECK(once.frames(once.num_frames() - 1, kForceChannel) >= 1.0);

  LabeledSample hover = make_sample("w", "a", {0, 0, 0});
  CHECK_THROWS_AS((void)trim_hover(hover, 1.0), AllHoverError);
}

TEST_CASE("filter_length bounds are inclusive") {
  Dataset d;
  d.samples.push_back(make_sample("w", "a", std::vector<double>(10, 2.0)));
  d.samples.push_back(make_sample("w", "b", std::vector<double>(20, 2.0)));
  d.samples.push_back(make_sample("w", "c", std::vector<double>(30, 2.0)));
  FilterResult r = filter_length(d, 20, 30);
  CHECK(r.removed == 1);
  REQUIRE(r.dataset.size() == 2);
  CHECK(r.dataset.samples[0].label == "b");
  FilterResult all = filter_length(d, 1, 100);
  CHECK(all.removed == 0);
  CHECK(all.dataset.size() == 3);
  CHECK_THROWS_AS((void)filter_length(d, 30, 20), ConfigError);
}

TEST_CASE("zscore matches hand-computed values") {
  LabeledSample s = make_sample("w", "a", {2, 2, 2});
  s.frames(0, 0) = 1.0;
  s.frames(1, 0) = 2.0;
  s.frames(2, 0) = 3.0;
  LabeledSample z = zscore_normalize(s);
  CHECK(z.frames(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.frames(1, 0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(z.frames(2, 0) == doctest::Approx(1.2247).epsilon(1e-4));
  // Constant force channel maps to zeros via the epsilon guard.
  CHECK(z.frames(0, kForceChannel) == 0.0);
  CHECK(z.frames(2, kForceChannel) == 0.0);
}

TEST_CASE("zscore output statistics") {
  LabeledSample s = make_sample("w", "a", {2, 7, 1, 9, 4, 6, 3});
  LabeledSample z = zscore_normalize(s);
  for (int c = 0; c < kNumChannels; ++c) {
    double mean = z.frames.col(c).mean();
    double var = (z.frames.col(c).array() - mean).square().sum() /
                 static_cast<double>(z.num_frames());
    if (s.frames.col(c).maxCoeff() > s.frames.col(c).minCoeff()) {
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-3);
    }
  }
  // A second application changes (almost) nothing.
  LabeledSample zz = zscore_normalize(z);
  CHECK((zz.frames - z.frames).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("prepare_dataset composes trim, filter, and normalize") {
  Dataset d;
  std::vector<double> good(40, 2.0);
  good.insert(good.begin(), 5, 0.0);  // hover head
  good.push_back(0.0);                // hover tail
  d.samples.push_back(make_sample("w1", "a", good));
  d.samples.push_back(make_sample("w2", "b", {0.0, 0.0, 0.0}));       // all hover
  d.samples.push_back(make_sample("w3", "c", std::vector<double>(5, 2.0)));  // too short
  PrepStats stats;
  Dataset clean = prepare_dataset(d, 1.0, 20, 1500, &stats);
  CHECK(stats.dropped_all_hover == 1);
  CHECK(stats.removed_by_length == 1);
  REQUIRE(clean.size() == 1);
  CHECK(clean.samples[0].num_frames() == 40);
  CHECK(std::abs(clean.samples[0].frames.col(0).mean()) < 1e-6);
}

TEST_CASE("writer folds: 61 writers deal out as 13,12,12,12,12") {
  Dataset d;
  for (int w = 0; w < 61; ++w)
    for (int j = 0; j < 3; ++j)
      d.samples.push_back(make_sample("writer" + std::to_string(w), "a",
                                      std::vector<double>(25, 2.0)));
  auto folds = split_writer_folds(d, 5, 7);
  REQUIRE(folds.size() == 5);
  std::multiset<std::size_t> sizes;
  for (const auto& f : folds) sizes.insert(f.test_writers.size());
  CHECK(sizes == std::multiset<std::size_t>{12, 12, 12, 12, 13});
}

TEST_CASE("writer folds invariants") {
  Dataset d;
  for (int w = 0; w < 9; ++w)
    for (int j = 0; j < 4; ++j)
      d.samples.push_back(
          make_sample("w" + std::to_string(w), "a", std::vector<double>(25, 2.0)));
  auto folds = split_writer_folds(d, 5, 11);
  REQUIRE(folds.size() == 5);

  std::set<std::string> all_test_writers;
  for (const auto& f : folds) {
    CHECK(f.fold_index >= 1);
    CHECK(f.fold_index <= 5);
    // Disjoint writer sets within the fold.
    for (const auto& w : f.test_writers)
      CHECK(std::find(f.train_writers.begin(), f.train_writers.end(), w) ==
            f.train_writers.end());
    // Every test writer appears in exactly one fold.
    for (const auto& w : f.test_writers) {
      CHECK(all_test_writers.count(w) == 0);
      all_test_writers.insert(w);
    }
    // Sample sides follow the writer sides; no index on both sides.
    std::set<int> train_val(f.train_samples.begin(), f.train_samples.end());
    for (int i : f.val_samples) train_val.insert(i);
    CHECK(train_val.size() == f.train_samples.size() + f.val_samples.size());
    for (int i : f.test_samples) CHECK(train_val.count(i) == 0);
    for (int i : f.train_samples)
      CHECK(std::find(f.train_writers.begin(), f.train_writers.end(),
                      d.samples[static_cast<std::size_t>(i)].writer_id) !=
            f.train_writers.end());
    for (int i : f.test_samples)
      CHECK(std::find(f.test_writers.begin(), f.test_writers.end(),
                      d.samples[static_cast<std::size_t>(i)].writer_id) !=
            f.test_writers.end());
    // 80/20 split by sample count (val = floor(n/5)).
    const std::size_t side = f.train_samples.size() + f.val_samples.size();
    CHECK(f.val_samples.size() == side / 5);
    // Full coverage of the dataset.
    CHECK(side + f.test_samples.size() == static_cast<std::size_t>(d.size()));
  }
  CHECK(all_test_writers.size() == 9);

  auto again = split_writer_folds(d, 5, 11);
  for (std::size_t i = 0; i < folds.size(); ++i) {
    CHECK(folds[i].train_samples == again[i].train_samples);
    CHECK(folds[i].val_samples == again[i].val_samples);
    CHECK(folds[i].test_samples == again[i].test_samples);
  }
  auto other_seed = split_writer_folds(d, 5, 12);
  bool any_diff = false;
  for (std::size_t i = 0; i < folds.size(); ++i)
    any_diff = any_diff || folds[i].test_samples != other_seed[i].test_samples;
  CHECK(any_diff);

  Dataset few;
  for (int w = 0; w < 3; ++w)
    few.samples.push_back(make_sample("w" + std::to_string(w), "a",
                                      std::vector<double>(25, 2.0)));
  CHECK_THROWS_AS((void)split_writer_folds(few, 5, 1), DataError);
}

TEST_CASE("split manifest round trip and determinism on disk") {
  Dataset d;
  for (int w = 0; w < 6; ++w)
    for (int j = 0; j < 2; ++j)
      d.samples.push_back(
          make_sample("w" + std::to_string(w), "a", std::vector<double>(25, 2.0)));
  SplitManifest m;
  m.k = 3;
  m.seed = 42;
  m.folds = split_writer_folds(d, 3, 42);
  write_split_manifest(m, "manifest_a.json");
  write_split_manifest(m, "manifest_b.json");
  std::ifstream fa("manifest_a.json", std::ios::binary), fb("manifest_b.json", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());

  SplitManifest back = read_split_manifest("manifest_a.json");
  CHECK(back.k == 3);
  CHECK(back.seed == 42);
  REQUIRE(back.folds.size() == 3);
  CHECK(back.folds[0].train_samples == m.folds[0].train_samples);
  CHECK(back.folds[2].test_writers == m.folds[2].test_writers);
  fs::remove("manifest_a.json");
  fs::remove("manifest_b.json");
}

TEST_CASE("select_samples and select_writers") {
  Dataset d;
  d.samples.push_back(make_sample("w1", "a", std::vector<double>(25, 2.0)));
  d.samples.push_back(make_sample("w2", "b", std::vector<double>(25, 2.0)));
  d.samples.push_back(make_sample("w1", "c", std::vector<double>(25, 2.0)));
  Dataset sel = select_samples(d, {2, 0});
  REQUIRE(sel.size() == 2);
  CHECK(sel.samples[0].label == "c");
  CHECK(sel.samples[1].label == "a");
  CHECK_THROWS_AS((void)select_samples(d, {3}), DataError);

  Dataset byw = select_writers(d, {"w1"});
  REQUIRE(byw.size() == 2);
  CHECK(byw.samples[0].label == "a");
  CHECK(byw.samples[1].label == "c");
}
