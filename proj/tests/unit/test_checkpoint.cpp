#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "formt/checkpoint.hpp"
#include "formt/error.hpp"

using namespace formt;
namespace fs = std::filesystem;

namespace {

ModelConfig config() {
  ModelConfig c;
  c.state_size = 8;
  c.num_layers = 2;
  c.source_vocab_size = 40;
  c.target_vocab_size = 41;
  c.max_positions = 32;
  c.seed = 3;
  return c;
}

fs::path temp(const char* name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  const auto m = init_model<float>(config());
  const auto path = temp("formt_test_roundtrip.ckpt");
  save_checkpoint(path, m);
  const auto back = load_checkpoint(path, config());
  CHECK(back.config == m.config);
  std::vector<Matrix<float>> a, b;
  m.params.for_each([&](const std::string&, const Matrix<float>& x) { a.push_back(x); });
  back.params.for_each([&](const std::string&, const Matrix<float>& x) { b.push_back(x); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  fs::remove(path);
}

TEST_CASE("checkpoint header") {
  const auto path = temp("formt_test_header.ckpt");
  save_checkpoint(path, init_model<float>(config()));
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "FORMTCKP");
  unsigned char v[4];
  in.read(reinterpret_cast<char*>(v), 4);
  CHECK(v[0] == kCheckpointVersion);
  CHECK((v[1] | v[2] | v[3]) == 0);
  in.close();
  fs::remove(path);
}

TEST_CASE("checkpoint mismatches are rejected") {
  const auto path = temp("formt_test_mismatch.ckpt");
  save_checkpoint(path, init_model<float>(config()));
  auto other = config();
  other.num_layers = 3;
  CHECK_THROWS_AS(load_checkpoint(path, other), CheckpointError);

  // Bump the version field in place.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char bumped[4] = {static_cast<char>(kCheckpointVersion + 1), 0, 0, 0};
    f.write(bumped, 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  // Truncated body.
  save_checkpoint(path, init_model<float>(config()));
  fs::resize_file(path, fs::file_size(path) - 10);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}
