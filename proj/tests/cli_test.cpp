// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <doctest.h>

#include "diffseg/cli/commands.hpp"
#include "diffseg/cli/config.hpp"
#include "diffseg/cli/imaging.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/data/preprocess.hpp"
#include "diffseg/diffusion/schedule.hpp"
#include "diffseg/unet/unet.hpp"
#include "helpers.hpp"

using namespace diffseg;
using namespace diffseg::cli;
using diffseg::testing::TempDir;
using diffseg::testing::tiny_unet;

namespace {

int run(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

TensorArchive tiny_checkpoint(bool with_norm) {
  unet::UNet net = unet::build_noise_unet(tiny_unet(), 3);
  diffseg::testing::perturb(net.params(), 4, 0.02);
  Metadata meta;
  net.config().to_metadata(meta);
  diffusion::make_schedule(10, 1e-4, 0.02, diffusion::ScheduleKind::linear).to_metadata(meta);
  meta["data.height"] = "8";
  meta["data.width"] = "8";
  if (with_norm) data::IntensityStats{-100.0, 300.0, -1000.0, 1000.0}.to_metadata(meta);
  return to_archive(net.params(), meta);
}

const char* kTinyPhantom =
    "[phantom]\n"
    "seed = 3\n"
    "unlabeled_cases = 1\n"
    "labeled_cases = 1\n"
    "test_cases = 1\n"
    "depth = 3\n"
    "size = 32\n"
    "organs = 2\n";

}  // namespace

TEST_CASE("config canonical text is a fixed point") {
  const ExperimentConfig defaults;
  const std::string text = defaults.canonical_text();
  const ExperimentConfig again = ExperimentConfig::parse(text);
  CHECK(again.canonical_text() == text);
  CHECK(again.hash() == defaults.hash());

  ExperimentConfig c = ExperimentConfig::parse(
      "# comment\n[pretrain]\niterations = 250\nlr_start = 0.00020\n; another\n[unet]\nchannel_mult = 1, 2,2\n");
  CHECK(c.integer("pretrain.iterations") == 250);
  CHECK(c.real("pretrain.lr_start") == 2e-4);
  CHECK(c.raw("pretrain.lr_start") == "2e-04");
  CHECK(c.int_list("unet.channel_mult") == std::vector<int>{1, 2, 2});
  CHECK_FALSE(c.is_default("pretrain.iterations"));
  CHECK(c.is_default("pretrain.batch_size"));
  CHECK(ExperimentConfig::parse(c.canonical_text()).canonical_text() == c.canonical_text());
  CHECK(c.hash() != defaults.hash());
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(ExperimentConfig::parse("[pretrain]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[optimizer]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("iterations = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[pretrain]\niterations = many\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[unet]\ndtype = f16\n"), ConfigError);
  try {
    ExperimentConfig::parse("[pretrain]\nlearning_rate = 1\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("config overrides") {
  ExperimentConfig c;
  c.apply_override("finetune.strategy=linear");
  c.apply_override("diffusion.steps=50");
  CHECK(c.raw("finetune.strategy") == "linear");
  CHECK(c.pretrain().diffusion_steps == 50);
  CHECK(c.finetune().strategy == unet::Strategy::linear);
  CHECK_THROWS_AS(c.apply_override("finetune.strategy"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("finetune.strategy=everything"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("nope.key=1"), ConfigError);
}

TEST_CASE("shortest real formatting round trips") {
  for (double v : {0.1, 2e-4, 1.0 / 3.0, 1e-300, 12345.0}) {
    CHECK(std::stod(format_shortest(v)) == v);
  }
  CHECK(format_shortest(0.5) == "0.5");
}

TEST_CASE("window and level mapping") {
  const Window w{350.0, 40.0};
  CHECK(w.tag() == "w350_l40");
  CHECK(window_level(-135.0, w) == 0);
  CHECK(window_level(215.0, w) == 255);
  CHECK(window_level(40.0, w) == 128);
  CHECK(window_level(-1000.0, w) == 0);
  CHECK(window_level(3000.0, w) == 255);

  const auto ws = parse_windows("1400:-500,350:40");
  REQUIRE(ws.size() == 2);
  CHECK(ws[0].width == 1400.0);
  CHECK(ws[0].level == -500.0);
  CHECK(ws[0].tag() == "w1400_l-500");
  CHECK_THROWS_AS(parse_windows("350"), ConfigError);
  CHECK_THROWS_AS(parse_windows("0:40"), ConfigError);
}

TEST_CASE("pgm and contact sheet") {
  Gray8 g{2, 3, {0, 10, 20, 30, 40, 255}};
  const Gray8 back = decode_pgm(encode_pgm(g));
  CHECK(back.height == 2);
  CHECK(back.width == 3);
  CHECK(back.pixels == g.pixels);
  CHECK(encode_pgm(g).starts_with("P5\n3 2\n255\n"));
  CHECK_THROWS(decode_pgm("P6\n1 1\n255\nx"));

  const Gray8 sheet = contact_sheet({g, g, g}, 2, 1);
  CHECK(sheet.width == 7);
  CHECK(sheet.height == 5);
  CHECK(sheet.pixels[0] == 0);
  CHECK(sheet.pixels[4 + 1] == 10);
  CHECK(sheet.pixels[3 * 7 + 2] == 20);
  CHECK(sheet.pixels[3] == 0);
}

TEST_CASE("parse_steps") {
  CHECK(parse_steps("0:1000:100").size() == 11);
  CHECK(parse_steps("0:1000:100").back() == 1000);
  CHECK(parse_steps("5:5:1") == std::vector<int>{5});
  CHECK_THROWS_AS(parse_steps("0:10"), ConfigError);
  CHECK_THROWS_AS(parse_steps("10:0:1"), ConfigError);
  CHECK_THROWS_AS(parse_steps("0:10:0"), ConfigError);
}

TEST_CASE("run manifest JSON round trip") {
  RunManifest m;
  m.command = {"pretrain", "--config", "a.cfg"};
  m.config_hash = std::string(64, 'a');
  m.inputs = {{"data/x.nvg", std::string(64, 'b'), false}};
  m.outputs = {{"runlog.tsv", std::string(64, 'c'), true}};
  m.seeds = {{"pretrain.seed", 7}};
  m.started = "2026-01-01T00:00:00Z";
  m.finished = "2026-01-01T00:01:00Z";
  m.versions = {{"diffseg", kVersion}};
  const RunManifest back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.outputs.at(0).varies);
  CHECK(back.seeds.at("pretrain.seed") == 7);
}

TEST_CASE("sample_grid is seeded and needs intensity statistics") {
  TempDir a, b;
  const TensorArchive ck = tiny_checkpoint(true);
  RngStream r1(5, 4), r2(5, 4);
  const Tensor x = sample_grid(ck, 3, r1, {Window{350, 40}}, 2, a.path());
  const Tensor y = sample_grid(ck, 3, r2, {Window{350, 40}}, 2, b.path());
  CHECK(x.shape() == Shape{3, 1, 8, 8});
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    REQUIRE(x.at(i) == y.at(i));
    CHECK(std::abs(x.at(i)) <= 1.0);
  }
  CHECK(read_file(a / "contact_w350_l40.pgm") == read_file(b / "contact_w350_l40.pgm"));
  CHECK(std::filesystem::exists(a / "sample_002_w350_l40.pgm"));

  TempDir c;
  RngStream r3(5, 4);
  CHECK_THROWS_AS(sample_grid(tiny_checkpoint(false), 3, r3, {Window{}}, 2, c.path()), DataError);
}

TEST_CASE("dispatch exit codes") {
  std::string err;
  CHECK(run({}) == exit_config);
  CHECK(run({"frobnicate"}, &err) == exit_config);
  CHECK(err.find("frobnicate") != std::string::npos);
  CHECK(run({"--help"}) == exit_ok);
  TempDir dir;
  write_file_atomic(dir / "bad.cfg", "[pretrain]\nwarmup = 10\n");
  CHECK(run({"synth-data", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()}, &err) ==
        exit_config);
  CHECK(err.find("warmup") != std::string::npos);
  CHECK(run({"sweep-step", "--config", (dir / "bad.cfg").string()}) == exit_config);
  write_file_atomic(dir / "ok.cfg", "[data]\nvolumes = " + (dir / "missing").string() + "\n");
  CHECK(run({"preprocess", "--config", (dir / "ok.cfg").string(), "--out", (dir / "p").string()}) ==
        exit_data);
}

TEST_CASE("synth-data reruns are byte identical") {
  TempDir dir;
  write_file_atomic(dir / "tiny.cfg", kTinyPhantom);
  const std::string cfg = (dir / "tiny.cfg").string();
  REQUIRE(run({"synth-data", "--config", cfg, "--out", (dir / "a").string()}) == exit_ok);
  REQUIRE(run({"synth-data", "--config", cfg, "--out", (dir / "b").string()}) == exit_ok);
  CHECK(read_file(dir / "a" / "volumes.tsv") == read_file(dir / "b" / "volumes.tsv"));
  CHECK(read_file(dir / "a" / "config.cfg") == read_file(dir / "b" / "config.cfg"));
  const auto ma = RunManifest::from_json(read_file(dir / "a" / kManifestName));
  const auto mb = RunManifest::from_json(read_file(dir / "b" / kManifestName));
  REQUIRE(ma.outputs.size() == mb.outputs.size());
  for (std::size_t i = 0; i < ma.outputs.size(); ++i) {
    CHECK(ma.outputs[i].path == mb.outputs[i].path);
    if (!ma.outputs[i].varies) CHECK(ma.outputs[i].sha256 == mb.outputs[i].sha256);
  }
  CHECK(ma.config_hash == mb.config_hash);

  REQUIRE(run({"synth-data", "--config", cfg, "--seed", "4", "--out", (dir / "c").string()}) == exit_ok);
  CHECK(read_file(dir / "a" / "volumes.tsv") != read_file(dir / "c" / "volumes.tsv"));
}
