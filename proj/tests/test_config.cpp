#include <gtest/gtest.h>

#include "fscil/config.hpp"

using namespace fscil;

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto c = parse_config_text("{}");
  EXPECT_EQ(c.protocol.base_classes, 20u);
  EXPECT_EQ(c.protocol.sessions, 4u);
  EXPECT_DOUBLE_EQ(c.optimizer.momentum, 0.009);
  EXPECT_DOUBLE_EQ(c.optimizer.weight_decay, 0.0005);
  EXPECT_TRUE(c.losses.in_paper_range());
  EXPECT_EQ(c.model.variant, ProjectorVariant::dual);
  EXPECT_TRUE(c.model.freeze_base);
}

TEST(Config, ReadsEverySection) {
  const auto c = parse_config_text(R"({
    "protocol": {"base_classes": 10, "sessions": 2, "ways": 3, "shots": 2},
    "model": {"proj_dim": 32, "directions": 2, "variant": "single", "freeze_base": false,
              "inc_init": "copy", "precision": "float64"},
    "optimizer": {"inc_lr": 0.05, "momentum": 0.9, "inc_iters": 7, "prototypes_per_batch": 4},
    "losses": {"lambda1": 50, "lambda2": 0.01, "lambda3": 0.3},
    "data": {"sigma_sep": 2.0, "sigma": 0.5},
    "seed": 99
  })");
  EXPECT_EQ(c.protocol.total_classes(), 16u);
  EXPECT_EQ(c.model.dims.proj_dim, 32u);
  EXPECT_EQ(c.model.dims.scan_paths, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(c.model.variant, ProjectorVariant::single);
  EXPECT_FALSE(c.model.freeze_base);
  EXPECT_EQ(c.model.inc_init, IncrementalInit::copy);
  EXPECT_EQ(c.model.precision, Precision::float64);
  EXPECT_DOUBLE_EQ(c.optimizer.momentum, 0.9);
  EXPECT_EQ(c.optimizer.inc_iters, 7u);
  EXPECT_EQ(c.optimizer.prototypes_per_batch, 4);
  EXPECT_DOUBLE_EQ(c.losses.lambda3, 0.3);
  EXPECT_DOUBLE_EQ(c.data.sigma, 0.5);
  EXPECT_EQ(c.seed, 99u);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(parse_config_text(R"({"sead": 1})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"model": {"proj": 16}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"losses": {"lambda4": 1}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"data": {"files": [{"train": "x"}]}})"), ConfigError);
}

TEST(Config, BadValuesAreRejected) {
  EXPECT_THROW(parse_config_text("not json"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"seed": -1})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"protocol": {"ways": 1.5}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"model": {"variant": "triple"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"model": {"directions": 5}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"model": {"proj_dim": 8}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"optimizer": {"momentum": 1.0}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"optimizer": {"inc_lr": -0.1}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"losses": {"lambda1": -1}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"data": {"sigma": 0}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"data": {"source": "files"}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"model": {"freeze_base": "yes"}})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, HashIsCanonical) {
  const auto a = parse_config_text(R"({"seed": 3, "losses": {"lambda1": 100}})");
  const auto b = parse_config_text(R"({"losses": {"lambda1": 100.0}, "seed": 3})");
  const auto c = parse_config_text(R"({"seed": 4})");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 64u);
  EXPECT_EQ(a.hash(), sha256_hex(a.to_json().dump()));
}

TEST(Config, SerializationRoundTrips) {
  const auto a = parse_config_text(R"({"model": {"variant": "single", "directions": 3}, "optimizer": {"momentum": 0.9}})");
  const auto b = parse_config(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Sha256 h;
  h.update("a").update("bc");
  EXPECT_EQ(h.hex(), sha256_hex("abc"));
}
