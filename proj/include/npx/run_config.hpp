#pragma once

#include <string>

#include "npx/model.hpp"
#include "npx/synthgen.hpp"
#include "npx/trainer.hpp"

namespace npx {

// Flat key = value run configuration. Unknown keys are rejected; every run
// writes the fully resolved config next to its outputs.
struct RunConfig {
  std::string genotypes;
  std::string gwas;
  std::string genes;
  std::string gmt;
  std::string exclude;
  std::string imaging;
  std::string labels;
  std::string out;

  ModelConfig model;  // n_pathways / n_rois / d filled from data at run time
  TrainConfig train;
  SynthSpec synth;

  int window_kb = 50;
  bool normalize_pathways = true;
  bool delta_auto = true;  // per-fold NC fraction unless delta is set

  static RunConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value, const std::string& context);
  void write_resolved(const std::string& path) const;
};

}  // namespace npx
