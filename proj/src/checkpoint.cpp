#include "formt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "formt/error.hpp"

namespace formt {
namespace {

constexpr char kMagic[8] = {'F', 'O', 'R', 'M', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kByteOrderMarker = 0x01020304;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_bytes(std::string& out, std::string_view bytes) {
  put_u32(out, static_cast<std::uint32_t>(bytes.size()));
  out.append(bytes);
}

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::string_view take(std::size_t n) {
    if (data_.size() - pos_ < n) fail("truncated file");
    const std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::string bytes() { return std::string(take(u32())); }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(origin_ + ": " + what);
  }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, kByteOrderMarker);
  put_bytes(out, model.config.canonical_json());
  std::uint32_t count = 0;
  model.params.for_each([&](const std::string&, const Matrix<float>&) { ++count; });
  put_u32(out, count);
  model.params.for_each([&](const std::string& name, const Matrix<float>& m) {
    put_bytes(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(m.data()[i]));
  });
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model<float> load_checkpoint(const std::filesystem::path& path,
                             const std::optional<ModelConfig>& expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(std::move(data), path.string());
  if (in.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) in.fail("not a checkpoint");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    in.fail("format version " + std::to_string(version) + ", expected " +
            std::to_string(kCheckpointVersion));
  }
  if (in.u32() != kByteOrderMarker) in.fail("bad byte-order marker");
  ModelConfig config;
  try {
    config = ModelConfig::from_json(in.bytes());
    config.validate();
  } catch (const ConfigError& e) {
    in.fail(e.what());
  }
  if (expected && !(*expected == config)) {
    in.fail("config mismatch: stored " + config.canonical_json() + ", expected " +
            expected->canonical_json());
  }
  Model<float> model;
  model.config = config;
  model.params = Parameters<float>::zeros(config);
  std::uint32_t count = 0;
  model.params.for_each([&](const std::string&, const Matrix<float>&) { ++count; });
  if (in.u32() != count) in.fail("tensor count does not match the config");
  model.params.for_each([&](const std::string& name, Matrix<float>& m) {
    if (in.bytes() != name) in.fail("expected tensor " + name);
    const auto rows = in.u32();
    const auto cols = in.u32();
    if (rows != m.rows() || cols != m.cols()) in.fail("shape mismatch for " + name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(in.u32());
  });
  if (!in.at_end()) in.fail("trailing bytes");
  if (!model.params.all_finite()) in.fail("non-finite parameter values");
  return model;
}

}  // namespace formt
