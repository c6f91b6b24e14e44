#include <filesystem>
#include <set>
#include <fstream>

#include <gtest/gtest.h>

#include "avsr/checkpoint.hpp"
#include "avsr/error.hpp"
#include "avsr/train.hpp"
#include "oracles.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / "avsr_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

AvsrModel tiny_model(bool gated) {
  const auto corpus_cfg = testing::tiny_corpus_config();
  AvsrModel m(model_config_for(testing::tiny_model_dims(), corpus_cfg), 21);
  if (gated) {
    m.add_gated_layers(22);
    set_gates(m, 0.3);
    m.params().set_trainable([](const std::string& n) { return n.find(".gated_xattn.") != std::string::npos; });
  }
  return m;
}

TEST(Checkpoint, BitExactRoundTrip) {
  for (const bool gated : {false, true}) {
    const auto model = tiny_model(gated);
    const auto path = scratch(gated ? "gated.ckpt" : "plain.ckpt");
    const Rng rng(5, 17);
    save_checkpoint(path, model, rng, 42, {{"note", "x"}});
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.step, 42u);
    EXPECT_EQ(ck.rng.seed(), 5u);
    EXPECT_EQ(ck.rng.counter(), 17u);
    EXPECT_EQ(ck.metadata.at("note"), "x");
    EXPECT_FALSE(ck.optimizer.has_value());
    EXPECT_EQ(ck.model.config(), model.config());
    ASSERT_EQ(ck.model.params().size(), model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      const auto& a = model.params().all()[i];
      const auto& b = ck.model.params().all()[i];
      EXPECT_EQ(a.name(), b.name());
      EXPECT_EQ(a.trainable(), b.trainable());
      EXPECT_TRUE(std::equal(a.tensor().values().begin(), a.tensor().values().end(), b.tensor().values().begin()));
    }
    std::set<std::string> all;
    for (const auto& p : model.params().all()) all.insert(p.name());
    EXPECT_EQ(parameter_digest(ck.model, all), parameter_digest(model, all));
  }
}

TEST(Checkpoint, OptimizerStateRoundTrip) {
  auto model = tiny_model(true);
  AdamW opt({1e-3, 0.9, 0.99, 1e-8, 0.01});
  model.params().zero_grad();
  for (auto& p : model.params().all()) {
    if (!p.trainable()) continue;
    for (auto& g : p.tensor().mutable_grad()) g = 0.01;
  }
  opt.step(model.params());
  const auto path = scratch("opt.ckpt");
  save_checkpoint(path, model, Rng(1), 1, nlohmann::json::object(), &opt);
  const auto ck = load_checkpoint(path);
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->steps_taken(), 1);
  EXPECT_EQ(ck.optimizer->config().beta2, 0.99);
  ASSERT_EQ(ck.optimizer->moments().size(), opt.moments().size());
  for (const auto& [name, mom] : opt.moments()) {
    EXPECT_EQ(ck.optimizer->moments().at(name).m, mom.m);
    EXPECT_EQ(ck.optimizer->moments().at(name).v, mom.v);
  }
}

void corrupt(const fs::path& path, std::streamoff offset, char byte) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(offset);
  f.put(byte);
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const auto model = tiny_model(false);
  const auto good = scratch("good.ckpt");
  save_checkpoint(good, model, Rng(1), 0);

  const auto magic = scratch("magic.ckpt");
  fs::copy_file(good, magic, fs::copy_options::overwrite_existing);
  corrupt(magic, 0, 'X');
  EXPECT_THROW(load_checkpoint(magic), IoError);

  const auto version = scratch("version.ckpt");
  fs::copy_file(good, version, fs::copy_options::overwrite_existing);
  corrupt(version, 8, 9);
  try {
    load_checkpoint(version);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  const auto trailing = scratch("trailing.ckpt");
  fs::copy_file(good, trailing, fs::copy_options::overwrite_existing);
  {
    std::ofstream f(trailing, std::ios::app | std::ios::binary);
    f.put('\0');
  }
  EXPECT_THROW(load_checkpoint(trailing), IoError);

  const auto truncated = scratch("truncated.ckpt");
  fs::copy_file(good, truncated, fs::copy_options::overwrite_existing);
  fs::resize_file(truncated, fs::file_size(good) - 8);
  EXPECT_THROW(load_checkpoint(truncated), IoError);

  EXPECT_THROW(load_checkpoint(scratch("missing.ckpt")), IoError);
}

TEST(Checkpoint, ManifestDescribesParameters) {
  const auto model = tiny_model(true);
  const auto path = scratch("manifest.ckpt");
  save_checkpoint(path, model, Rng(1), 3);
  const auto m = read_checkpoint_manifest(path);
  EXPECT_EQ(m.at("format_version"), kCheckpointFormatVersion);
  EXPECT_EQ(m.at("parameters").size(), model.params().size());
  EXPECT_TRUE(m.at("gated").get<bool>());
  EXPECT_EQ(model_config_from_json(m.at("model_config"), "model_config"), model.config());
}

}  // namespace
}  // namespace avsr
