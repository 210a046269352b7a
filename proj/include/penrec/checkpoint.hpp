// Versioned binary parameter checkpoints. The format is deterministic: the
// same model state always serializes to the same bytes (no timestamps).
#pragma once

#include <limits>
#include <string>

#include "penrec/network.hpp"

namespace penrec {

struct Checkpoint {
  ModelSpec spec;
  std::string alphabet_chars;  // character inventory, blank excluded
  ParameterStore params;
  double val_loss = std::numeric_limits<double>::infinity();
  int epoch = 0;
};

// Layout (little-endian): "PRCK", u32 version, model name, alphabet string,
// layer list, then every tensor in store order as (name, trainable, rows,
// cols, row-major doubles), then val_loss and epoch.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace penrec
