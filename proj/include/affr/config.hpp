// Flat key=value run configuration with dotted namespaces.
//
// Files hold one "key = value" pair per line ('#' comments, blank lines
// ignored). Every key is registered with a type; unknown keys and type
// mismatches are rejected through ConfigError carrying the offending key,
// which the command line maps to exit code 2. The canonical echo lists
// every key in sorted order, so identical configurations hash identically.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "affr/detector.hpp"
#include "affr/losses.hpp"

namespace affr {

struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string k, const std::string& what)
      : std::runtime_error(what), key(std::move(k)) {}
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;

  struct Optim {
    std::string kind = "adam";
    double lr = 3e-4;
    double text_lr = 0;  // 0 = same as lr
    int batch = 8;
    int epochs = 3;
    int distill_batch = 8;
    int distill_epochs = 3;
  } optim;

  struct Distill {
    int n_mem = 64;
    int k = 3;
    bool frozen_teacher = true;
    int recluster_every = 8;  // bank reclustering period, in steps
  } distill;

  struct Data {
    int train_per_task = 60;
    int test_per_task = 15;
    double frac_mcmo = 0.4;
    double frac_scmo = 0.4;
    double frac_scso = 0.1;
    double frac_others = 0.1;
    int canvas = 64;
    bool augment = false;
  } data;

  struct PromptCfg {
    std::string pronoun = "something";  // something | it | them | <placeholder surface>
  } prompt;

  struct Eval {
    double threshold = 0.9;
    std::string sweep = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
  } eval;

  uint64_t seed = 1;
  std::string out = "runs";

  // Full effective configuration, one sorted "key = value" per line.
  std::string canonical() const;
  std::string hash() const;

  std::vector<double> sweep_thresholds() const;
};

// Applies one assignment; throws ConfigError on unknown key or bad value.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses config text over the given base. Lines are "key = value"; parse
// errors name the line, validation errors name the key.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});

RunConfig load_config(const std::string& path, RunConfig base = {});

}  // namespace affr
