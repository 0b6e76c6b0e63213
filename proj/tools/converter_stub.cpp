// Stand-in external converter speaking the line protocol on stdin/stdout.
//
//   formt-converter-stub [identity|reject|grammar] [--content mathematica|semantic-latex]
//
// "grammar" converts by parsing against the synthetic grammar, so it understands
// exactly the formulae `formt synth` produces.

#include <iostream>
#include <memory>
#include <string>

#include "formt/converter.hpp"
#include "formt/error.hpp"

using namespace formt;

int main(int argc, char** argv) {
  std::string mode = "grammar";
  Language content = Language::MathematicaInput;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--content" && i + 1 < argc) {
      content = parse_language(argv[++i]);
    } else {
      mode = arg;
    }
  }
  std::unique_ptr<ExternalConverter> converter;
  try {
    converter = make_converter(mode, Language::LatexPresentation, content);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "VERSION") {
      std::cout << "OK\tstub-" << converter->name() << '\t' << converter->version() << std::endl;
      continue;
    }
    const auto first = line.find('\t');
    const auto second = first == std::string::npos ? first : line.find('\t', first + 1);
    if (line.substr(0, first) != "TRANSLATE" || second == std::string::npos) {
      std::cout << "ERR\tmalformed request" << std::endl;
      continue;
    }
    ConversionResult result;
    try {
      const Direction d = parse_direction(line.substr(first + 1, second - first - 1));
      result = converter->convert(d, line.substr(second + 1));
    } catch (const Error& e) {
      result = ConversionResult::failure(e.what());
    }
    std::cout << (result.ok ? "OK\t" : "ERR\t") << result.text << std::endl;
  }
  return 0;
}
