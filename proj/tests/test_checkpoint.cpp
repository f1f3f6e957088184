#include <cstdio>
#include <string>
#include <vector>

#include "dmmia/checkpoint.hpp"
#include "dmmia/errors.hpp"
#include "dmmia/rng.hpp"
#include "dmmia/tensor.hpp"
#include <doctest.h>

using namespace dmmia;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.metadata["kind"] = "test";
  ck.metadata["alpha"] = "0.25";
  Rng rng(7);
  Arr a(6);
  for (Index i = 0; i < 6; ++i) a[i] = rng.normal();
  Arr b(4);
  for (Index i = 0; i < 4; ++i) b[i] = rng.uniform();
  Arr c(24);
  for (Index i = 0; i < 24; ++i) c[i] = rng.normal(3.0, 0.5);
  ck.add("vec", Tensor::from_array({6}, a));
  ck.add("mat", Tensor::from_array({2, 2}, b));
  ck.add("cube", Tensor::from_array({2, 3, 4}, c));
  return ck;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
  Checkpoint ck = sample_checkpoint();
  std::vector<std::uint8_t> bytes = ck.encode();
  Checkpoint back = Checkpoint::decode(bytes);

  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.blocks.size() == ck.blocks.size());
  for (std::size_t i = 0; i < ck.blocks.size(); ++i) {
    CHECK(back.blocks[i].first == ck.blocks[i].first);
    REQUIRE(back.blocks[i].second.shape() == ck.blocks[i].second.shape());
    const Arr& want = ck.blocks[i].second.value();
    const Arr& got = back.blocks[i].second.value();
    for (Index j = 0; j < want.size(); ++j) CHECK(got[j] == want[j]);
  }
  // Re-encode of the decoded container reproduces the byte stream exactly.
  CHECK(back.encode() == bytes);
}

TEST_CASE("checkpoint rejects a bad magic and names the found bytes") {
  std::vector<std::uint8_t> bytes = sample_checkpoint().encode();
  bytes[0] = 'X';
  try {
    Checkpoint::decode(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("magic") != std::string::npos);
    CHECK(msg.find("XMIA1") != std::string::npos);
  }
}

TEST_CASE("checkpoint truncation errors name the offset") {
  std::vector<std::uint8_t> bytes = sample_checkpoint().encode();
  for (std::size_t cut : {std::size_t{3}, std::size_t{7}, std::size_t{20},
                          bytes.size() - 1}) {
    std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + cut);
    try {
      Checkpoint::decode(trunc);
      FAIL("expected ParseError at cut ", cut);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint rejects trailing bytes") {
  std::vector<std::uint8_t> bytes = sample_checkpoint().encode();
  bytes.push_back(0);
  try {
    Checkpoint::decode(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("trailing") != std::string::npos);
  }
}

TEST_CASE("checkpoint block access checks shapes and duplicates") {
  Checkpoint ck = sample_checkpoint();
  CHECK(ck.has("mat"));
  CHECK_FALSE(ck.has("absent"));
  CHECK_THROWS_AS(ck.get("absent"), ParseError);
  CHECK_THROWS_AS(ck.add("mat", Tensor::zeros({1})), ContractError);

  Tensor ok = ck.get_checked("mat", {2, 2});
  CHECK(ok.shape() == Shape{2, 2});
  try {
    ck.get_checked("mat", {4, 4});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("mat") != std::string::npos);
  }

  CHECK(ck.meta("kind") == "test");
  CHECK(ck.meta_or("missing", "fallback") == "fallback");
  CHECK_THROWS_AS(ck.meta("missing"), ParseError);
}

TEST_CASE("checkpoint file save/load round trip") {
  const std::string path = "ck_roundtrip_test.dmia";
  Checkpoint ck = sample_checkpoint();
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  CHECK(back.encode() == ck.encode());
  std::remove(path.c_str());
  CHECK_THROWS_AS(Checkpoint::load(path), IoError);
}
