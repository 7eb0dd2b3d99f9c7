#pragma once
// Run configuration: a strict subset of TOML. One `[section]` header per
// group, `key = value` lines, `#` comments. Values are integers, floats,
// true/false, double-quoted strings or flat arrays of integers. Unknown
// sections or keys, duplicates and type mismatches are ConfigErrors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transsleep/model.hpp"
#include "transsleep/preprocess.hpp"
#include "transsleep/train.hpp"

namespace transsleep::config {

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  preprocess::PipelineConfig pipeline;
  std::size_t folds = 20;
  std::uint64_t fold_seed = 0;
  std::string data_dir;
  std::string cache_dir;
  std::string out_dir = "runs";
};

std::string ablation_name(const train::Ablation& a);
// "full", "case1", "case2" or "case3".
train::Ablation ablation_from_name(const std::string& name);

// Every key in file order, as "section.key".
std::vector<std::string> keys();

RunConfig parse(const std::string& text, const std::string& source = "<config>");
RunConfig load(const std::filesystem::path& path);
// Sets one dotted key from its TOML value text ("0.001", "\"x\"", "[1, 2]").
void set(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get(const RunConfig& cfg, const std::string& key);
// Full resolved config, defaults included; parse(to_toml(c)) == c.
std::string to_toml(const RunConfig& cfg);

// Cross-field checks (patience < max_epochs, micro_batch <= batch_size, ...).
void validate(const RunConfig& cfg);
// Throws ConfigError "missing required config key '<key>'" for empty strings.
void require(const RunConfig& cfg, const std::vector<std::string>& keys);

}  // namespace transsleep::config
