#include "penrec/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "penrec/common.hpp"

namespace penrec {

namespace {

using ordered_json = nlohmann::ordered_json;

class SectionReader {
 public:
  SectionReader(const ordered_json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be a JSON object");
  }

  void field(const char* key, std::function<void(const ordered_json&)> apply) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      apply(*it);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        throw ConfigError("unknown config key " + name_ + "." + key);
    }
  }

 private:
  const ordered_json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

}  // namespace

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }

  RunConfig c;
  SectionReader root(j, "config");
  root.field("seed", [&c](const ordered_json& v) { c.seed = v.get<std::uint64_t>(); });
  root.field("threads", [&c](const ordered_json& v) { c.threads = v.get<int>(); });
  root.field("alphabet", [&c](const ordered_json& v) { c.alphabet = v.get<std::string>(); });

  root.field("synth", [&c](const ordered_json& s) {
    SectionReader sec(s, "synth");
    sec.field("vocab", [&c](const ordered_json& v) { c.synth_vocab = v.get<std::string>(); });
    sec.field("writers", [&c](const ordered_json& v) { c.synth_writers = v.get<int>(); });
    sec.field("samples_per_writer",
              [&c](const ordered_json& v) { c.synth_samples_per_writer = v.get<int>(); });
    sec.finish();
  });

  root.field("prep", [&c](const ordered_json& s) {
    SectionReader sec(s, "prep");
    sec.field("force_threshold",
              [&c](const ordered_json& v) { c.force_threshold = v.get<double>(); });
    sec.field("min_frames", [&c](const ordered_json& v) { c.min_frames = v.get<int>(); });
    sec.field("max_frames", [&c](const ordered_json& v) { c.max_frames = v.get<int>(); });
    sec.finish();
  });

  root.field("split", [&c](const ordered_json& s) {
    SectionReader sec(s, "split");
    sec.field("folds", [&c](const ordered_json& v) { c.folds = v.get<int>(); });
    sec.finish();
  });

  root.field("train", [&c](const ordered_json& s) {
    SectionReader sec(s, "train");
    sec.field("model", [&c](const ordered_json& v) { c.model = v.get<std::string>(); });
    sec.field("batch_size", [&c](const ordered_json& v) { c.batch_size = v.get<int>(); });
    sec.field("initial_lr", [&c](const ordered_json& v) { c.initial_lr = v.get<double>(); });
    sec.field("min_lr", [&c](const ordered_json& v) { c.min_lr = v.get<double>(); });
    sec.field("lr_factor", [&c](const ordered_json& v) { c.lr_factor = v.get<double>(); });
    sec.field("lr_patience", [&c](const ordered_json& v) { c.lr_patience = v.get<int>(); });
    sec.field("stop_patience", [&c](const ordered_json& v) { c.stop_patience = v.get<int>(); });
    sec.field("improvement_eps",
              [&c](const ordered_json& v) { c.improvement_eps = v.get<double>(); });
    sec.field("max_epochs", [&c](const ordered_json& v) { c.max_epochs = v.get<int>(); });
    sec.field("beta1", [&c](const ordered_json& v) { c.beta1 = v.get<double>(); });
    sec.field("beta2", [&c](const ordered_json& v) { c.beta2 = v.get<double>(); });
    sec.field("adam_eps", [&c](const ordered_json& v) { c.adam_eps = v.get<double>(); });
    sec.field("grad_clip_norm",
              [&c](const ordered_json& v) { c.grad_clip_norm = v.get<double>(); });
    sec.finish();
  });
  root.finish();

  validate_config(c);
  return c;
}

void validate_config(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(c.threads >= 0, "threads must be >= 0");
  require(c.synth_vocab == "main" || c.synth_vocab == "unseen",
          "synth.vocab must be main or unseen");
  require(c.synth_writers >= 1, "synth.writers must be positive");
  require(c.synth_samples_per_writer >= 1, "synth.samples_per_writer must be positive");
  require(c.force_threshold > 0.0, "prep.force_threshold must be positive");
  require(c.min_frames > 0 && c.min_frames < c.max_frames,
          "prep needs 0 < min_frames < max_frames");
  require(c.folds >= 2, "split.folds must be >= 2");
  require(c.model == "cnn" || c.model == "cldnn", "train.model must be cnn or cldnn");
  require(c.batch_size >= 1, "train.batch_size must be positive");
  require(c.initial_lr > 0.0 && c.min_lr > 0.0 && c.min_lr <= c.initial_lr,
          "train needs 0 < min_lr <= initial_lr");
  require(c.lr_factor > 0.0 && c.lr_factor < 1.0, "train.lr_factor must be in (0, 1)");
  require(c.lr_patience >= 1 && c.stop_patience >= 1, "train patience values must be positive");
  require(c.improvement_eps >= 0.0, "train.improvement_eps must be >= 0");
  require(c.max_epochs >= 1, "train.max_epochs must be positive");
  require(c.beta1 > 0.0 && c.beta1 < 1.0 && c.beta2 > 0.0 && c.beta2 < 1.0,
          "train betas must be in (0, 1)");
  require(c.adam_eps > 0.0, "train.adam_eps must be positive");
  require(c.grad_clip_norm >= 0.0, "train.grad_clip_norm must be >= 0");
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["alphabet"] = c.alphabet;
  j["synth"] = {{"vocab", c.synth_vocab},
                {"writers", c.synth_writers},
                {"samples_per_writer", c.synth_samples_per_writer}};
  j["prep"] = {{"force_threshold", c.force_threshold},
               {"min_frames", c.min_frames},
               {"max_frames", c.max_frames}};
  j["split"] = {{"folds", c.folds}};
  j["train"] = {{"model", c.model},
                {"batch_size", c.batch_size},
                {"initial_lr", c.initial_lr},
                {"min_lr", c.min_lr},
                {"lr_factor", c.lr_factor},
                {"lr_patience", c.lr_patience},
                {"stop_patience", c.stop_patience},
                {"improvement_eps", c.improvement_eps},
                {"max_epochs", c.max_epochs},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"grad_clip_norm", c.grad_clip_norm}};
  return j.dump(2);
}

}  // namespace penrec
