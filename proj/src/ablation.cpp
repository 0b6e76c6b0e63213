#include "formt/ablation.hpp"

#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "formt/error.hpp"
#include "formt/pipeline.hpp"

namespace formt {

GridEntry parse_grid_entry(std::string_view text) {
  static const std::regex single(R"(C([0-9]+)(?:ks([0-9]+))?x([0-9]+))");
  static const std::regex chained(R"(C[0-9]+(?:ks[0-9]+)?x[0-9]+(?:-C[0-9]+(?:ks[0-9]+)?x[0-9]+)+)");
  const std::string s(text);
  std::smatch m;
  if (std::regex_match(s, m, single)) {
    GridEntry e;
    e.name = s;
    try {
      e.state_size = std::stoi(m[1]);
      e.kernel_size = m[2].matched ? std::stoi(m[2]) : 3;
      e.num_layers = std::stoi(m[3]);
    } catch (const std::exception&) {
      throw ConfigError("grid entry '" + s + "' has an out-of-range number");
    }
    if (e.state_size < 1 || e.num_layers < 1) {
      throw ConfigError("grid entry '" + s + "' needs positive state size and layer count");
    }
    if (e.kernel_size < 1 || e.kernel_size % 2 == 0) {
      throw ConfigError("grid entry '" + s + "' needs an odd kernel size");
    }
    return e;
  }
  if (std::regex_match(s, chained)) {
    throw ConfigError("grid entry '" + s +
                      "' mixes state sizes; residual connections need one state size "
                      "throughout, so mixed stacks are not supported");
  }
  throw ConfigError("malformed grid entry '" + s + "' (expected C<state>[ks<kernel>]x<layers>)");
}

Grid parse_grid(std::string_view text) {
  Grid grid;
  std::set<std::tuple<int, int, int>> seen;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    line = line.substr(0, line.find('#'));
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream words(line);
    for (std::string w; words >> w;) {
      GridEntry e = parse_grid_entry(w);
      if (!seen.insert({e.state_size, e.kernel_size, e.num_layers}).second) {
        grid.warnings.push_back("duplicate grid entry '" + e.name + "' ignored");
        continue;
      }
      grid.entries.push_back(std::move(e));
    }
  }
  if (grid.entries.empty()) throw ConfigError("grid has no entries");
  return grid;
}

std::vector<AblationRow> run_ablation(const Grid& grid, const AblationSettings& settings,
                                      const std::function<void(const std::string&)>& log) {
  if (settings.pairs < 2) throw ConfigError("ablation needs at least two pairs");
  GrammarConfig g = GrammarConfig::standard(settings.seed, settings.pairs, settings.max_depth);
  g.target = settings.target;
  const auto corpus = generate_synthetic(g);
  const auto split =
      split_corpus(corpus, SplitSpec::from_fractions(0.9, 0.1, 0.0, mix_seed(settings.seed, 1)));
  const LanguagePair langs{Language::LatexPresentation, settings.target};
  const auto train_tagged = tag_pairs(split.train, langs, settings.seed);
  const auto valid_tagged = tag_pairs(split.valid, langs, settings.seed);
  const Dictionaries dicts = build_dictionaries(train_tagged);
  const auto train_set = encode_pairs(train_tagged, dicts);
  const auto valid_set = encode_pairs(valid_tagged, dicts);

  std::mutex log_mutex;
  auto run_one = [&](const GridEntry& entry) {
    ModelConfig nominal;
    nominal.state_size = entry.state_size;
    nominal.kernel_size = entry.kernel_size;
    nominal.num_layers = entry.num_layers;
    nominal.dropout = settings.dropout;
    nominal.source_vocab_size = dicts.source.size();
    nominal.target_vocab_size = dicts.target.size();
    nominal.seed = settings.seed;
    ModelConfig trained = nominal;
    if (settings.scale_state) trained.state_size = *settings.scale_state;
    trained.validate();

    TrainConfig tc;
    tc.max_epochs = settings.epochs;
    tc.patience = settings.epochs;
    tc.max_tokens_per_batch = settings.batch_tokens;
    tc.seed = settings.seed;
    TrainOptions options;
    options.log = [&](const std::string& line) {
      if (!log) return;
      const std::lock_guard lock(log_mutex);
      log(entry.name + ": " + line);
    };
    const auto result = train(init_model<float>(trained), train_set, valid_set, dicts.target,
                              settings.target, tc, options);
    AblationRow row;
    row.entry = entry;
    row.trained = trained;
    row.best_epoch = result.best_epoch;
    row.valid_em = result.records.at(static_cast<std::size_t>(result.best_epoch - 1)).valid_em;
    row.parameters = parameter_count(trained);
    row.nominal_parameters = parameter_count(nominal);
    return row;
  };

  std::vector<AblationRow> rows(grid.entries.size());
  const auto workers = static_cast<std::size_t>(std::max(1, settings.jobs));
  if (workers == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = run_one(grid.entries[i]);
    return rows;
  }
  std::vector<std::exception_ptr> errors(rows.size());
  std::size_t next = 0;
  std::mutex next_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, rows.size()); ++w) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t i;
        {
          const std::lock_guard lock(next_mutex);
          if (next == rows.size()) return;
          i = next++;
        }
        try {
          rows[i] = run_one(grid.entries[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "| configuration | trained as | valid EM | best epoch | parameters | nominal parameters |\n";
  out << "|---|---|---|---|---|---|\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : rows) {
    out << "| " << r.entry.name << " | C" << r.trained.state_size << "ks" << r.trained.kernel_size
        << "x" << r.trained.num_layers << " | " << r.valid_em << " | " << r.best_epoch << " | "
        << r.parameters << " | " << r.nominal_parameters << " |\n";
  }
  return out.str();
}

}  // namespace formt
