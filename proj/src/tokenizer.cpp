#include "formt/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <optional>

#include "formt/error.hpp"

namespace formt {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_bracket(char c) {
  return c == '(' || c == ')' || c == '[' || c == ']' || c == '{' || c == '}';
}

// Length in bytes of the UTF-8 sequence starting at text[pos]; throws on invalid input.
std::size_t utf8_length(std::string_view text, std::size_t pos) {
  const auto lead = static_cast<unsigned char>(text[pos]);
  if (lead < 0x80) return 1;
  std::size_t len;
  std::uint32_t cp;
  if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    throw DecodingError("invalid UTF-8 lead byte at offset " + std::to_string(pos));
  }
  if (pos + len > text.size()) {
    throw DecodingError("truncated UTF-8 sequence at offset " + std::to_string(pos));
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(text[pos + i]);
    if ((b & 0xC0) != 0x80) {
      throw DecodingError("invalid UTF-8 continuation byte at offset " + std::to_string(pos + i));
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  static constexpr std::array<std::uint32_t, 5> kMinForLength = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMinForLength[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    throw DecodingError("invalid UTF-8 code point at offset " + std::to_string(pos));
  }
  return len;
}

// Matches "<number_NN>" at pos; returns its byte length (11) or 0.
std::size_t match_number_tag(std::string_view text, std::size_t pos) {
  constexpr std::size_t kTagLength = 11;
  if (pos + kTagLength > text.size()) return 0;
  return parse_number_tag(text.substr(pos, kTagLength)) != 0 ? kTagLength : 0;
}

std::size_t digit_run(std::string_view text, std::size_t pos) {
  std::size_t end = pos;
  while (end < text.size() && is_digit(text[end])) ++end;
  return end - pos;
}

void push_digits(std::vector<Token>& out, std::string_view run) {
  out.push_back({std::string(run), run.size() == 1 ? TokenKind::Digit : TokenKind::Number});
}

constexpr std::array<std::string_view, 6> kMathematicaOperators = {"&&", "==", "<=",
                                                                    ">=", "!=", "/;"};

bool is_mathematica_operator(std::string_view text) {
  for (auto op : kMathematicaOperators) {
    if (op == text) return true;
  }
  return false;
}

bool digit_like(TokenKind kind) { return kind == TokenKind::Digit || kind == TokenKind::Number; }

bool starts_with_letter(const Token& t) { return !t.text.empty() && is_ascii_letter(t.text[0]); }

}  // namespace

std::vector<std::string> TokenStream::texts() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

std::string TokenStream::joined() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].text;
  }
  return out;
}

std::string number_tag_text(int index) {
  if (index < 1 || index > kNumberTagCount) {
    throw InputError("number tag index out of range: " + std::to_string(index));
  }
  std::string out = "<number_";
  out += static_cast<char>('0' + index / 10);
  out += static_cast<char>('0' + index % 10);
  out += '>';
  return out;
}

int parse_number_tag(std::string_view text) {
  constexpr std::string_view kPrefix = "<number_";
  if (text.size() != kPrefix.size() + 3 || text.substr(0, kPrefix.size()) != kPrefix ||
      text.back() != '>') {
    return 0;
  }
  const char hi = text[kPrefix.size()];
  const char lo = text[kPrefix.size() + 1];
  if (!is_digit(hi) || !is_digit(lo)) return 0;
  const int index = (hi - '0') * 10 + (lo - '0');
  return index >= 1 && index <= kNumberTagCount ? index : 0;
}

bool is_latex_language(Language lang) { return lang != Language::MathematicaInput; }

std::string_view language_name(Language lang) {
  switch (lang) {
    case Language::LatexPresentation:
      return "latex";
    case Language::SemanticLatex:
      return "semantic-latex";
    case Language::MathematicaInput:
      return "mathematica";
  }
  return "latex";
}

Language parse_language(std::string_view name) {
  if (name == "latex") return Language::LatexPresentation;
  if (name == "semantic-latex" || name == "semantic") return Language::SemanticLatex;
  if (name == "mathematica") return Language::MathematicaInput;
  throw ConfigError("unknown language '" + std::string(name) +
                    "' (expected latex, semantic-latex or mathematica)");
}

TokenStream tokenize_latex(std::string_view text, Language lang) {
  TokenStream out;
  out.language = lang;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    if (is_space(c)) {
      ++pos;
    } else if (c == '%') {
      while (pos < text.size() && text[pos] != '\n') ++pos;
    } else if (c == '\\') {
      if (pos + 1 >= text.size()) {
        throw MalformedCommandError("lone trailing backslash at offset " + std::to_string(pos));
      }
      const char next = text[pos + 1];
      std::size_t end;
      if (is_ascii_letter(next)) {
        end = pos + 1;
        while (end < text.size() && is_ascii_letter(text[end])) ++end;
      } else if (is_space(next)) {
        throw MalformedCommandError("backslash followed by whitespace at offset " +
                                    std::to_string(pos));
      } else {
        end = pos + 1 + utf8_length(text, pos + 1);
      }
      out.tokens.push_back({std::string(text.substr(pos, end - pos)), TokenKind::Command});
      pos = end;
    } else if (const std::size_t tag = match_number_tag(text, pos); tag != 0) {
      out.tokens.push_back({std::string(text.substr(pos, tag)), TokenKind::NumberTag});
      pos += tag;
    } else if (is_ascii_letter(c)) {
      out.tokens.push_back({std::string(1, c), TokenKind::Letter});
      ++pos;
    } else if (is_digit(c)) {
      const std::size_t run = digit_run(text, pos);
      push_digits(out.tokens, text.substr(pos, run));
      pos += run;
    } else if (is_bracket(c)) {
      out.tokens.push_back({std::string(1, c), TokenKind::Bracket});
      ++pos;
    } else {
      const std::size_t len = utf8_length(text, pos);
      out.tokens.push_back({std::string(text.substr(pos, len)), TokenKind::SpecialChar});
      pos += len;
    }
  }
  return out;
}

TokenStream tokenize_mathematica(std::string_view text) {
  TokenStream out;
  out.language = Language::MathematicaInput;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    if (is_space(c)) {
      ++pos;
    } else if (c == '\\' && pos + 1 < text.size() && text[pos + 1] == '[') {
      std::size_t end = pos + 2;
      while (end < text.size() && (is_ascii_letter(text[end]) || is_digit(text[end]))) ++end;
      if (end >= text.size() || text[end] != ']' || end == pos + 2) {
        throw MalformedSymbolError("unterminated named symbol at offset " + std::to_string(pos));
      }
      ++end;
      out.tokens.push_back({std::string(text.substr(pos, end - pos)), TokenKind::MacroSymbol});
      pos = end;
    } else if (const std::size_t tag = match_number_tag(text, pos); tag != 0) {
      out.tokens.push_back({std::string(text.substr(pos, tag)), TokenKind::NumberTag});
      pos += tag;
    } else if (is_ascii_letter(c)) {
      std::size_t end = pos;
      while (end < text.size() && is_ascii_letter(text[end])) ++end;
      out.tokens.push_back({std::string(text.substr(pos, end - pos)), TokenKind::Letter});
      pos = end;
    } else if (is_digit(c)) {
      const std::size_t run = digit_run(text, pos);
      push_digits(out.tokens, text.substr(pos, run));
      pos += run;
    } else if (pos + 1 < text.size() && is_mathematica_operator(text.substr(pos, 2))) {
      out.tokens.push_back({std::string(text.substr(pos, 2)), TokenKind::MultiCharOperator});
      pos += 2;
    } else if (is_bracket(c)) {
      out.tokens.push_back({std::string(1, c), TokenKind::Bracket});
      ++pos;
    } else {
      const std::size_t len = utf8_length(text, pos);
      out.tokens.push_back({std::string(text.substr(pos, len)), TokenKind::SpecialChar});
      pos += len;
    }
  }
  return out;
}

TokenStream tokenize(std::string_view text, Language lang) {
  return is_latex_language(lang) ? tokenize_latex(text, lang) : tokenize_mathematica(text);
}

namespace {

bool mathematica_pair_merges(const Token& prev, const Token& next) {
  const std::string joined = prev.text + next.text;
  try {
    const TokenStream pair = tokenize_mathematica(joined);
    return pair.tokens.size() != 2 || pair.tokens[0].text != prev.text ||
           pair.tokens[1].text != next.text;
  } catch (const Error&) {
    return true;
  }
}

bool needs_separator(const Token& prev, const Token& next, Language lang) {
  // "<" directly before letters could spell a <number_NN> tag.
  if (prev.text == "<" && starts_with_letter(next)) return true;
  if (is_latex_language(lang)) {
    return prev.kind == TokenKind::Command || (digit_like(prev.kind) && digit_like(next.kind));
  }
  return mathematica_pair_merges(prev, next);
}

}  // namespace

std::string detokenize(const TokenStream& stream) {
  std::string out;
  const auto& tokens = stream.tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && needs_separator(tokens[i - 1], tokens[i], stream.language)) out += ' ';
    out += tokens[i].text;
  }
  return out;
}

TokenKind classify_token(std::string_view text, Language lang) {
  if (text.empty()) return TokenKind::SpecialChar;
  if (parse_number_tag(text) != 0) return TokenKind::NumberTag;
  bool all_digits = true;
  bool all_letters = true;
  for (char c : text) {
    all_digits = all_digits && is_digit(c);
    all_letters = all_letters && is_ascii_letter(c);
  }
  if (all_digits) return text.size() == 1 ? TokenKind::Digit : TokenKind::Number;
  if (all_letters) return TokenKind::Letter;
  if (text.size() == 1 && is_bracket(text[0])) return TokenKind::Bracket;
  if (is_latex_language(lang)) {
    if (text[0] == '\\' && text.size() > 1) return TokenKind::Command;
    return TokenKind::SpecialChar;
  }
  if (text.size() > 3 && text.substr(0, 2) == "\\[" && text.back() == ']') {
    return TokenKind::MacroSymbol;
  }
  if (is_mathematica_operator(text)) return TokenKind::MultiCharOperator;
  return TokenKind::SpecialChar;
}

TokenStream stream_from_texts(const std::vector<std::string>& texts, Language lang) {
  TokenStream out;
  out.language = lang;
  out.tokens.reserve(texts.size());
  for (const auto& t : texts) out.tokens.push_back({t, classify_token(t, lang)});
  return out;
}

}  // namespace formt
