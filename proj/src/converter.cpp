#include "formt/converter.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <sstream>

#include "formt/error.hpp"

namespace formt {

std::string_view direction_name(Direction d) {
  return d == Direction::ContentToPresentation ? "content-to-presentation"
                                               : "presentation-to-content";
}

Direction parse_direction(std::string_view name) {
  if (name == "content-to-presentation") return Direction::ContentToPresentation;
  if (name == "presentation-to-content") return Direction::PresentationToContent;
  throw InputError("unknown direction '" + std::string(name) + "'");
}

ConversionResult IdentityConverter::convert(Direction, std::string_view formula) {
  return ConversionResult::success(std::string(formula));
}

ConversionResult RejectingConverter::convert(Direction, std::string_view) {
  return ConversionResult::failure("rejected");
}

ConversionResult TableConverter::convert(Direction d, std::string_view formula) {
  if (d != direction_) return ConversionResult::failure("unsupported direction");
  const auto it = table_.find(std::string(formula));
  if (it == table_.end()) return ConversionResult::failure("no entry");
  return ConversionResult::success(it->second);
}

ConversionResult GrammarConverter::convert(Direction d, std::string_view formula) {
  const Language from = d == Direction::ContentToPresentation ? content_ : presentation_;
  const Language to = d == Direction::ContentToPresentation ? presentation_ : content_;
  std::vector<std::string> readings;
  try {
    readings = grammar_readings(grammar_, formula, from, to);
  } catch (const Error& e) {
    return ConversionResult::failure(e.what());
  }
  if (readings.empty()) return ConversionResult::failure("no reading");
  if (readings.size() > 1) return ConversionResult::failure("ambiguous");
  return ConversionResult::success(readings.front());
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

SubprocessConverter::SubprocessConverter(std::vector<std::string> argv,
                                         std::vector<Direction> directions)
    : directions_(std::move(directions)) {
  if (argv.empty()) {
    status_ = "empty converter command";
    return;
  }
  name_ = argv.front();
  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
    status_ = std::string("pipe: ") + std::strerror(errno);
    return;
  }
  // A closed pipe should surface as a write error, not kill the harness.
  ::signal(SIGPIPE, SIG_IGN);
  const pid_t pid = ::fork();
  if (pid < 0) {
    status_ = std::string("fork: ") + std::strerror(errno);
    return;
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[0]);
    std::vector<char*> args;
    for (auto& a : argv) args.push_back(a.data());
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    const int code = errno;
    [[maybe_unused]] ssize_t ignored = ::write(err_pipe[1], &code, sizeof code);
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  int exec_errno = 0;
  const ssize_t got = ::read(err_pipe[0], &exec_errno, sizeof exec_errno);
  ::close(err_pipe[0]);
  if (got > 0) {
    status_ = "cannot run '" + name_ + "': " + std::strerror(exec_errno);
    shut_down();
    return;
  }
  std::string response;
  if (!exchange("VERSION\n", response)) {
    status_ = "no response from '" + name_ + "'";
    shut_down();
    return;
  }
  const auto fields = split_tabs(response);
  if (fields.size() < 3 || fields[0] != "OK") {
    status_ = "bad VERSION response from '" + name_ + "'";
    shut_down();
    return;
  }
  name_ = fields[1];
  version_ = fields[2];
  available_ = true;
}

SubprocessConverter::~SubprocessConverter() { shut_down(); }

void SubprocessConverter::shut_down() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
  available_ = false;
}

bool SubprocessConverter::supports(Direction d) const {
  return std::find(directions_.begin(), directions_.end(), d) != directions_.end();
}

bool SubprocessConverter::exchange(const std::string& request, std::string& response) {
  if (to_child_ < 0 || !write_all(to_child_, request)) return false;
  while (true) {
    const std::size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      response = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!response.empty() && response.back() == '\r') response.pop_back();
      return true;
    }
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

ConversionResult SubprocessConverter::convert(Direction d, std::string_view formula) {
  if (!available_) return ConversionResult::failure("converter unavailable: " + status_);
  if (!supports(d)) return ConversionResult::failure("unsupported direction");
  std::string clean(formula);
  std::replace_if(clean.begin(), clean.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  std::string response;
  if (!exchange("TRANSLATE\t" + std::string(direction_name(d)) + "\t" + clean + "\n", response)) {
    status_ = "converter '" + name_ + "' exited";
    shut_down();
    return ConversionResult::failure(status_);
  }
  const std::size_t tab = response.find('\t');
  const std::string head = response.substr(0, tab);
  const std::string body = tab == std::string::npos ? "" : response.substr(tab + 1);
  if (head == "OK") return ConversionResult::success(body);
  if (head == "ERR") return ConversionResult::failure(body);
  return ConversionResult::failure("malformed response: " + response);
}

std::unique_ptr<ExternalConverter> make_converter(std::string_view spec, Language presentation,
                                                  Language content, std::uint64_t grammar_seed) {
  if (spec == "identity") return std::make_unique<IdentityConverter>();
  if (spec == "reject") return std::make_unique<RejectingConverter>();
  if (spec == "grammar") {
    GrammarConfig g = GrammarConfig::standard(grammar_seed, 0);
    g.target = content;
    return std::make_unique<GrammarConverter>(std::move(g), presentation, content);
  }
  if (spec.starts_with("exec:")) {
    std::istringstream words{std::string(spec.substr(5))};
    std::vector<std::string> argv;
    for (std::string w; words >> w;) argv.push_back(w);
    return std::make_unique<SubprocessConverter>(
        std::move(argv),
        std::vector<Direction>{Direction::ContentToPresentation, Direction::PresentationToContent});
  }
  throw InputError("unknown converter '" + std::string(spec) +
                   "' (identity, reject, grammar, exec:<program>)");
}

}  // namespace formt
