#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "formt/model.hpp"
#include "formt/preprocess.hpp"
#include "formt/train.hpp"

namespace formt {

struct DataConfig {
  int max_tokens = kDefaultMaxTokens;  // per side, after tokenization
  double valid_fraction = 0.05;
  double test_fraction = 0.05;
  std::uint64_t seed = 1;  // split and number-tag draws
  int min_count = 1;
  OverflowPolicy overflow = OverflowPolicy::SplitDigits;
  bool shared_dictionary = false;  // one dictionary for both sides
};

struct DecodeConfig {
  int beam = 5;
  int max_len = 0;  // 0: min(max_positions, 2 * source length + 50)
};

// Every tunable of a run, addressable as "<section>.<field>".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DecodeConfig decode;

  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  // "key = value" lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  // Every key in keys() order, one "key = value" line each; readable by load_file.
  std::string effective() const;
};

}  // namespace formt
