#include <cstdio>
#include <filesystem>

#include "discup/checkpoint.hpp"
#include "doctest.h"

using namespace discup;

namespace {

TransformerConfig tiny_cfg() {
  return {.vocab_size = 16, .d_emb = 16, .n_layers = 1, .n_heads = 2,
          .max_ctx = 32};
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("discup_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("causal LM roundtrip is bit-exact") {
  TempDir dir;
  CausalLM<float> model(tiny_cfg(), 5);
  save_checkpoint(model, dir.file("clm.ckpt"), {{"seed", "5"}});
  auto back = load_causal_lm(dir.file("clm.ckpt"));

  CHECK(back.param_hash() == model.param_hash());
  // identical logits on a probe batch
  std::vector<int> probe = {0, 3, 7, 11, 2};
  auto a = model.forward(probe);
  auto b = back.forward(probe);
  CHECK(a.value() == b.value());
}

TEST_CASE("discriminator and prompt roundtrips") {
  TempDir dir;
  Discriminator<float> disc(tiny_cfg(), 7);
  save_checkpoint(disc, dir.file("disc.ckpt"));
  auto disc2 = load_discriminator(dir.file("disc.ckpt"));
  CHECK(disc2.param_hash() == disc.param_hash());
  CHECK(disc2.score({0, 4, 9}, {1}) == disc.score({0, 4, 9}, {1}));

  PromptBlock<float> block(5, 16, 9, {0});
  auto prompt = materialize(block);
  save_checkpoint(prompt, dir.file("prompt.ckpt"));
  auto prompt2 = load_prompt(dir.file("prompt.ckpt"));
  CHECK(prompt2.tag.cls == 0);
  CHECK(prompt2.matrix.shape() == prompt.matrix.shape());
  CHECK(prompt2.matrix.value() == prompt.matrix.value());
}

TEST_CASE("corrupting one payload byte fails the checksum") {
  TempDir dir;
  CausalLM<float> model(tiny_cfg(), 11);
  save_checkpoint(model, dir.file("clm.ckpt"));
  auto bytes = read_file(dir.file("clm.ckpt"));
  bytes[bytes.size() - 40] ^= 0x01;  // inside the payload
  CHECK_THROWS_AS(CheckpointFile::parse(bytes), FormatError);
}

TEST_CASE("bad magic, bad version and truncation are format errors") {
  TempDir dir;
  CausalLM<float> model(tiny_cfg(), 13);
  save_checkpoint(model, dir.file("clm.ckpt"));
  auto bytes = read_file(dir.file("clm.ckpt"));

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(CheckpointFile::parse(magic), FormatError);

  auto version = bytes;
  version[4] = 9;  // unknown future version must be rejected
  CHECK_THROWS_AS(CheckpointFile::parse(version), FormatError);

  auto truncated = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(CheckpointFile::parse(truncated), FormatError);
}

TEST_CASE("kind mismatch is a typed error") {
  TempDir dir;
  Discriminator<float> disc(tiny_cfg(), 17);
  save_checkpoint(disc, dir.file("model.ckpt"));
  CHECK_THROWS_AS(load_causal_lm(dir.file("model.ckpt")), KindMismatchError);
  CHECK_THROWS_AS(load_prompt(dir.file("model.ckpt")), KindMismatchError);
}

TEST_CASE("writes are atomic: no partial file left behind") {
  TempDir dir;
  CausalLM<float> model(tiny_cfg(), 19);
  save_checkpoint(model, dir.file("clm.ckpt"));
  // the temp staging file must be gone after a successful save
  CHECK_FALSE(file_exists(dir.file("clm.ckpt.tmp")));
  CHECK(file_exists(dir.file("clm.ckpt")));
}
