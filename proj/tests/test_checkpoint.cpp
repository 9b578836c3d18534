#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "growbrain/checkpoint.hpp"
#include "growbrain/surgery.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace growbrain;
namespace gt = growbrain::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const char* env = std::getenv("GROWBRAIN_TEST_TMP");
  fs::path dir = env ? fs::path(env) : fs::temp_directory_path() / "growbrain_tests";
  dir /= "checkpoint";
  fs::create_directories(dir);
  return dir;
}

LoadError::Kind load_error_kind(std::string_view bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "parse succeeded";
  return LoadError::Kind::Io;
}

NetworkGraph trained_looking_net(Rng& rng) {
  auto net = gt::grown_mlp(rng, GrowthKind::WidenTwice);
  net.group("fc1").frozen = true;
  net.group("fc2").lr_multiplier = 0.25;
  net.group("new").decay_enabled = false;
  // Values that a decimal round trip would not preserve.
  net.node("fc1").dense_params().weights(0, 0) = 0.1 + 0.2;
  net.node("fc1").dense_params().weights(0, 1) = -0.0;
  net.node("fc1").dense_params().weights(1, 0) = 5e-324;
  net.node("norm2").norm_params().gamma[0] = 10.000000000000002;
  return net;
}

}  // namespace

TEST(Checkpoint, HeaderStartsWithVersion) {
  Rng rng(1);
  const auto bytes = serialize_checkpoint(gt::small_mlp(rng));
  EXPECT_EQ(bytes.rfind("GROWBRAIN-CKPT-1\n", 0), 0u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Rng rng(2);
  for (auto kind : gt::kAllKinds) {
    auto net = gt::grown_mlp(rng, kind);
    const auto bytes = serialize_checkpoint(net);
    const auto back = parse_checkpoint(bytes);
    EXPECT_TRUE(back == net) << to_string(kind);
    EXPECT_EQ(serialize_checkpoint(back), bytes) << to_string(kind);
  }
}

TEST(Checkpoint, RoundTripKeepsGroupsProvenanceAndOddValues) {
  Rng rng(3);
  const auto net = trained_looking_net(rng);
  const auto back = parse_checkpoint(serialize_checkpoint(net));
  EXPECT_TRUE(back == net);
  EXPECT_EQ(back.groups(), net.groups());
  EXPECT_EQ(back.provenance(), net.provenance());
  EXPECT_FALSE(back.provenance().empty());
  EXPECT_TRUE(std::signbit(back.node("fc1").dense_params().weights(0, 1)));
  EXPECT_EQ(back.node("fc1").dense_params().weights(1, 0), 5e-324);
  EXPECT_EQ(back.node("norm2").norm_params().gamma[0], 10.000000000000002);
  EXPECT_EQ(back.node("norm2").norm_params().epsilon, net.node("norm2").norm_params().epsilon);
}

TEST(Checkpoint, SaveLoadSaveIdenticalBytes) {
  Rng rng(4);
  const auto net = trained_looking_net(rng);
  const auto dir = scratch_dir();
  save_checkpoint(net, dir / "a.ckpt");
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  std::ifstream a(dir / "a.ckpt", std::ios::binary);
  std::ifstream b(dir / "b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, GrownTopologyRestoredExactly) {
  Rng rng(5);
  const auto net = gt::grown_mlp(rng, GrowthKind::DeepenAndWiden);
  const auto back = parse_checkpoint(serialize_checkpoint(net));
  ASSERT_EQ(back.nodes().size(), net.nodes().size());
  for (std::size_t i = 0; i < net.nodes().size(); ++i) {
    EXPECT_EQ(back.nodes()[i].name, net.nodes()[i].name);
    EXPECT_EQ(back.nodes()[i].kind, net.nodes()[i].kind);
    EXPECT_EQ(back.nodes()[i].inputs, net.nodes()[i].inputs);
    EXPECT_EQ(back.nodes()[i].group, net.nodes()[i].group);
  }
  EXPECT_EQ(back.feature_output(), net.feature_output());
  EXPECT_EQ(back.output(), net.output());
  const Matrix x = gt::uniform_matrix(rng, 3, 6);
  EXPECT_TRUE(forward(back, x).cache.at("loss") == forward(net, x).cache.at("loss"));
}

TEST(Checkpoint, EveryTruncationIsMalformed) {
  Rng rng(6);
  const auto bytes = serialize_checkpoint(gt::grown_mlp(rng, GrowthKind::Widen));
  for (std::size_t n = 0; n < bytes.size(); ++n)
    ASSERT_EQ(load_error_kind(std::string_view(bytes).substr(0, n)), LoadError::Kind::Malformed)
        << "prefix of " << n << " bytes";
}

TEST(Checkpoint, TrailingBytesAreMalformed) {
  Rng rng(7);
  const auto bytes = serialize_checkpoint(gt::small_mlp(rng)) + "x";
  EXPECT_EQ(load_error_kind(bytes), LoadError::Kind::Malformed);
}

TEST(Checkpoint, VersionMismatch) {
  Rng rng(8);
  auto bytes = serialize_checkpoint(gt::small_mlp(rng));
  bytes[15] = '2';
  EXPECT_EQ(load_error_kind(bytes), LoadError::Kind::VersionMismatch);
  EXPECT_EQ(load_error_kind("PNG\n"), LoadError::Kind::Malformed);
}

TEST(Checkpoint, ShapeInconsistency) {
  Rng rng(9);
  const auto bytes = serialize_checkpoint(gt::small_mlp(rng));
  {
    // fc2 declared 7x8 instead of 7x9: the data size no longer matches.
    auto edited = bytes;
    const auto at = edited.find("tensor weights 7 9");
    ASSERT_NE(at, std::string::npos);
    edited.replace(at, 18, "tensor weights 7 8");
    EXPECT_EQ(load_error_kind(edited), LoadError::Kind::ShapeInconsistency);
  }
  {
    // Swapped dimensions keep the byte count but break the wiring.
    auto edited = bytes;
    const auto at = edited.find("tensor weights 8 7");
    ASSERT_NE(at, std::string::npos);
    edited.replace(at, 18, "tensor weights 7 8");
    EXPECT_EQ(load_error_kind(edited), LoadError::Kind::ShapeInconsistency);
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint(scratch_dir() / "does_not_exist.ckpt");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadError::Kind::Io);
  }
}

TEST(Checkpoint, ReplacedClassifierIsGone) {
  Rng rng(10);
  auto net = gt::small_mlp(rng);
  const Matrix old = net.node("classifier").dense_params().weights;
  replace_classifier(net, 5, rng);
  const auto back = parse_checkpoint(serialize_checkpoint(net));
  const Matrix& w = back.node("classifier").dense_params().weights;
  EXPECT_EQ(w.rows(), 5u);
  EXPECT_FALSE(w == old);
  EXPECT_EQ(back.node("classifier").group, "new");
}
