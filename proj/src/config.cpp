#include "formt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "formt/error.hpp"

namespace formt {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Section, typename T>
Field field(Section RunConfig::*section, T Section::*member) {
  Field f;
  f.set = [=](RunConfig& c, std::string_view key, std::string_view value) {
    c.*section.*member = parse_number<T>(key, value);
  };
  f.get = [=](const RunConfig& c) {
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(c.*section.*member);
    } else {
      return std::to_string(c.*section.*member);
    }
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& table() {
  static const auto fields = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto M = &RunConfig::model;
    auto T = &RunConfig::train;
    auto D = &RunConfig::data;
    auto E = &RunConfig::decode;
    t.emplace_back("model.state_size", field(M, &ModelConfig::state_size));
    t.emplace_back("model.num_layers", field(M, &ModelConfig::num_layers));
    t.emplace_back("model.kernel_size", field(M, &ModelConfig::kernel_size));
    t.emplace_back("model.dropout", field(M, &ModelConfig::dropout));
    t.emplace_back("model.label_smoothing", field(M, &ModelConfig::label_smoothing));
    t.emplace_back("model.max_positions", field(M, &ModelConfig::max_positions));
    t.emplace_back("model.seed", field(M, &ModelConfig::seed));
    t.emplace_back("train.learning_rate", field(T, &TrainConfig::learning_rate));
    t.emplace_back("train.clip_threshold", field(T, &TrainConfig::clip_threshold));
    t.emplace_back("train.max_tokens_per_batch", field(T, &TrainConfig::max_tokens_per_batch));
    t.emplace_back("train.max_epochs", field(T, &TrainConfig::max_epochs));
    t.emplace_back("train.patience", field(T, &TrainConfig::patience));
    t.emplace_back("train.momentum", field(T, &TrainConfig::momentum));
    t.emplace_back("train.seed", field(T, &TrainConfig::seed));
    t.emplace_back("train.chunk_tokens", field(T, &TrainConfig::chunk_tokens));
    t.emplace_back("train.optimizer",
                   Field{[](RunConfig& c, std::string_view, std::string_view v) {
                           c.train.optimizer = parse_optimizer(v);
                         },
                         [](const RunConfig& c) {
                           return std::string(optimizer_name(c.train.optimizer));
                         }});
    t.emplace_back("train.target_em",
                   Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                           if (v == "none") {
                             c.train.target_em.reset();
                           } else {
                             c.train.target_em = parse_number<double>(k, v);
                           }
                         },
                         [](const RunConfig& c) {
                           return c.train.target_em ? format_double(*c.train.target_em)
                                                    : std::string("none");
                         }});
    t.emplace_back("data.max_tokens", field(D, &DataConfig::max_tokens));
    t.emplace_back("data.valid_fraction", field(D, &DataConfig::valid_fraction));
    t.emplace_back("data.test_fraction", field(D, &DataConfig::test_fraction));
    t.emplace_back("data.seed", field(D, &DataConfig::seed));
    t.emplace_back("data.min_count", field(D, &DataConfig::min_count));
    t.emplace_back("data.overflow",
                   Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                           if (v == "error") {
                             c.data.overflow = OverflowPolicy::Error;
                           } else if (v == "split") {
                             c.data.overflow = OverflowPolicy::SplitDigits;
                           } else {
                             throw ConfigError("bad value '" + std::string(v) + "' for " +
                                               std::string(k) + " (error, split)");
                           }
                         },
                         [](const RunConfig& c) {
                           return std::string(c.data.overflow == OverflowPolicy::Error ? "error"
                                                                                       : "split");
                         }});
    t.emplace_back("data.shared_dictionary",
                   Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                           if (v == "true") {
                             c.data.shared_dictionary = true;
                           } else if (v == "false") {
                             c.data.shared_dictionary = false;
                           } else {
                             throw ConfigError("bad value '" + std::string(v) + "' for " +
                                               std::string(k) + " (true, false)");
                           }
                         },
                         [](const RunConfig& c) {
                           return std::string(c.data.shared_dictionary ? "true" : "false");
                         }});
    t.emplace_back("decode.beam", field(E, &DecodeConfig::beam));
    t.emplace_back("decode.max_len", field(E, &DecodeConfig::max_len));
    return t;
  }();
  return fields;
}

const Field& lookup(std::string_view key) {
  for (const auto& [name, f] : table()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  lookup(key).set(*this, key, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return lookup(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const auto names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : table()) out.push_back(name);
    return out;
  }();
  return names;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    try {
      set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

std::string RunConfig::effective() const {
  std::string out;
  for (const auto& key : keys()) out += key + " = " + get(key) + "\n";
  return out;
}

}  // namespace formt
