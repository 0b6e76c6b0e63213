#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "formt/corpus.hpp"

namespace formt {

enum class Direction { ContentToPresentation, PresentationToContent };

// Wire names: "content-to-presentation", "presentation-to-content".
std::string_view direction_name(Direction d);
Direction parse_direction(std::string_view name);

struct ConversionResult {
  bool ok = false;
  std::string text;  // converted formula, or the error message

  static ConversionResult success(std::string text) { return {true, std::move(text)}; }
  static ConversionResult failure(std::string message) { return {false, std::move(message)}; }
};

// A rule-based translator outside this toolkit (a CAS, LaTeXML, a test stub).
// Failures are per formula and never thrown.
class ExternalConverter {
 public:
  virtual ~ExternalConverter() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  virtual bool supports(Direction d) const = 0;
  // False when the converter cannot be reached at all.
  virtual bool available() const { return true; }
  virtual ConversionResult convert(Direction d, std::string_view formula) = 0;
};

// Returns every formula unchanged.
class IdentityConverter final : public ExternalConverter {
 public:
  std::string name() const override { return "identity"; }
  std::string version() const override { return "1"; }
  bool supports(Direction) const override { return true; }
  ConversionResult convert(Direction, std::string_view formula) override;
};

// Rejects every formula.
class RejectingConverter final : public ExternalConverter {
 public:
  std::string name() const override { return "reject"; }
  std::string version() const override { return "1"; }
  bool supports(Direction) const override { return true; }
  ConversionResult convert(Direction, std::string_view) override;
};

// Fixed lookup table, one direction.
class TableConverter final : public ExternalConverter {
 public:
  TableConverter(Direction direction, std::map<std::string, std::string> table)
      : direction_(direction), table_(std::move(table)) {}
  std::string name() const override { return "table"; }
  std::string version() const override { return "1"; }
  bool supports(Direction d) const override { return d == direction_; }
  ConversionResult convert(Direction d, std::string_view formula) override;

 private:
  Direction direction_;
  std::map<std::string, std::string> table_;
};

// Converts by parsing against the synthetic grammar's templates. Formulas with no
// reading, or several, are rejected.
class GrammarConverter final : public ExternalConverter {
 public:
  GrammarConverter(GrammarConfig grammar, Language presentation, Language content)
      : grammar_(std::move(grammar)), presentation_(presentation), content_(content) {}
  std::string name() const override { return "grammar"; }
  std::string version() const override { return "1"; }
  bool supports(Direction) const override { return true; }
  ConversionResult convert(Direction d, std::string_view formula) override;

 private:
  GrammarConfig grammar_;
  Language presentation_;
  Language content_;
};

// Child process speaking the line protocol over stdin/stdout:
//   request  "TRANSLATE\t<direction>\t<formula>\n"
//   response "OK\t<formula>\n" or "ERR\t<message>\n"
// plus a "VERSION\n" probe answered by "OK\t<name>\t<version>\n" at start-up.
// Tabs and newlines inside a formula are sent as spaces.
class SubprocessConverter final : public ExternalConverter {
 public:
  // argv[0] is looked up on PATH. Never throws; check available().
  SubprocessConverter(std::vector<std::string> argv, std::vector<Direction> directions);
  ~SubprocessConverter() override;
  SubprocessConverter(const SubprocessConverter&) = delete;
  SubprocessConverter& operator=(const SubprocessConverter&) = delete;

  std::string name() const override { return name_; }
  std::string version() const override { return version_; }
  bool supports(Direction d) const override;
  bool available() const override { return available_; }
  ConversionResult convert(Direction d, std::string_view formula) override;
  // Why the converter is unavailable, if it is.
  const std::string& status() const { return status_; }

 private:
  bool exchange(const std::string& request, std::string& response);
  void shut_down();

  std::vector<Direction> directions_;
  std::string name_;
  std::string version_;
  std::string status_;
  bool available_ = false;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// Converter named on the command line: "identity", "reject", "grammar", or
// "exec:<program> [args...]".
std::unique_ptr<ExternalConverter> make_converter(std::string_view spec, Language presentation,
                                                  Language content, std::uint64_t grammar_seed = 0);

}  // namespace formt
