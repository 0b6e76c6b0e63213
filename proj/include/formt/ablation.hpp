#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "formt/corpus.hpp"
#include "formt/model.hpp"
#include "formt/train.hpp"

namespace formt {

// One configuration named C<state>[ks<kernel>]x<layers>, e.g. C512ks3x11.
struct GridEntry {
  std::string name;
  int state_size = 0;
  int kernel_size = 3;
  int num_layers = 0;

  friend bool operator==(const GridEntry&, const GridEntry&) = default;
};

// Throws ConfigError. Entries chaining several state sizes (C512x4-C1024x8) are
// recognised and rejected: every layer shares one state size.
GridEntry parse_grid_entry(std::string_view text);

struct Grid {
  std::vector<GridEntry> entries;
  std::vector<std::string> warnings;
};

// Entries separated by whitespace or commas; '#' starts a comment. Every entry is
// validated before anything is returned; duplicates are dropped with a warning.
Grid parse_grid(std::string_view text);

struct AblationSettings {
  std::optional<int> scale_state;  // train every entry at this state size instead
  std::size_t pairs = 2000;        // synthetic corpus size, split 90/10 train/valid
  int max_depth = 3;
  int epochs = 5;
  std::size_t batch_tokens = 4000;
  double dropout = 0.2;
  std::uint64_t seed = 1;
  Language target = Language::MathematicaInput;
  int jobs = 1;  // configurations trained concurrently
};

struct AblationRow {
  GridEntry entry;
  ModelConfig trained;           // configuration actually trained
  double valid_em = 0.0;         // best validation EM
  int best_epoch = 0;
  std::int64_t parameters = 0;          // of the trained configuration
  std::int64_t nominal_parameters = 0;  // of the entry at its listed state size
};

std::vector<AblationRow> run_ablation(const Grid& grid, const AblationSettings& settings,
                                      const std::function<void(const std::string&)>& log = {});

// Markdown table with one row per entry.
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace formt
