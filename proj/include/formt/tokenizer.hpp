#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace formt {

enum class TokenKind {
  Command,            // LaTeX control sequence, e.g. \frac or \{
  Letter,             // single letter (LaTeX) or letter string (Mathematica)
  Digit,              // exactly one decimal digit
  Number,             // run of two or more decimal digits
  NumberTag,          // <number_NN> placeholder
  Bracket,            // ( ) [ ] { }
  SpecialChar,        // any other single code point
  MultiCharOperator,  // && == <= >= != /;
  MacroSymbol,        // Mathematica named character, e.g. \[Zeta]
};

enum class Language { LatexPresentation, SemanticLatex, MathematicaInput };

struct Token {
  std::string text;
  TokenKind kind = TokenKind::SpecialChar;

  friend bool operator==(const Token& a, const Token& b) = default;
};

struct TokenStream {
  std::vector<Token> tokens;
  Language language = Language::LatexPresentation;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  // Token texts only, in order.
  std::vector<std::string> texts() const;
  // Token texts joined by a single space (the golden-fixture and CLI format).
  std::string joined() const;
};

inline constexpr int kNumberTagCount = 32;

// "<number_07>" for index 7. Index must be in [1, 32].
std::string number_tag_text(int index);
// Returns the tag index of a "<number_NN>" text, or 0 if the text is not a tag.
int parse_number_tag(std::string_view text);

bool is_latex_language(Language lang);
std::string_view language_name(Language lang);
// Accepts "latex", "semantic-latex", "mathematica". Throws ConfigError otherwise.
Language parse_language(std::string_view name);

TokenStream tokenize_latex(std::string_view text, Language lang = Language::LatexPresentation);
TokenStream tokenize_mathematica(std::string_view text);
// Dispatches on the language.
TokenStream tokenize(std::string_view text, Language lang);

// Inverse of tokenization up to whitespace: tokenize(detokenize(s)) reproduces s.tokens.
std::string detokenize(const TokenStream& stream);

// Builds a stream from already-split token texts, classifying each text.
TokenStream stream_from_texts(const std::vector<std::string>& texts, Language lang);
TokenKind classify_token(std::string_view text, Language lang);

}  // namespace formt
