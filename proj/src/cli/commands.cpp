// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffseg/cli/config.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/core/sha256.hpp"
#include "diffseg/data/dataset.hpp"
#include "diffseg/data/phantom.hpp"
#include "diffseg/data/preprocess.hpp"
#include "diffseg/diffusion/process.hpp"
#include "diffseg/metrics/features.hpp"
#include "diffseg/metrics/generative.hpp"
#include "diffseg/metrics/segmentation.hpp"
#include "diffseg/training/finetune.hpp"
#include "diffseg/training/pretrain.hpp"
#include "diffseg/unet/segmentation_model.hpp"
#include "diffseg/unet/unet.hpp"

namespace diffseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVolumeIndex = "volumes.tsv";
constexpr const char* kNormFile = "norm.txt";
const std::vector<std::string> kRoles{"unlabeled", "labeled", "test"};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Run {
  std::string command;
  std::vector<std::string> args;
  ExperimentConfig config;
  fs::path out_dir;
  RunManifest manifest;
  std::ostream& out;
  std::ostream& err;

  void input(const fs::path& path) {
    manifest.inputs.push_back({path.string(), sha256_file(path), false});
  }

  void finish() {
    manifest.finished = utc_now();
    manifest.outputs = scan_outputs(out_dir);
    write_file_atomic(out_dir / kManifestName, manifest.to_json());
  }
};

std::string require_path(const ExperimentConfig& cfg, const std::string& key) {
  const auto& v = cfg.raw(key);
  if (v.empty()) {
    throw ConfigError(key + " must name a path");
  }
  return v;
}

std::uint64_t case_seed(std::uint64_t seed, std::size_t role, std::int64_t index) {
  return RngStream(seed, 0x7068616e).split(role).split(static_cast<std::uint64_t>(index)).next_u64();
}

void cmd_synth_data(Run& run) {
  const data::PhantomSpec base = run.config.phantom();
  const std::int64_t counts[] = {run.config.integer("phantom.unlabeled_cases"),
                                 run.config.integer("phantom.labeled_cases"),
                                 run.config.integer("phantom.test_cases")};
  std::string index;
  std::int64_t written = 0;
  for (std::size_t r = 0; r < kRoles.size(); ++r) {
    if (counts[r] < 0) {
      throw ConfigError("phantom." + kRoles[r] + "_cases must be non-negative");
    }
    for (std::int64_t i = 0; i < counts[r]; ++i) {
      data::PhantomSpec spec = base;
      spec.seed = case_seed(base.seed, r, i);
      data::Volume vol = data::gen_phantom(spec);
      if (kRoles[r] == "unlabeled") {
        vol.labels.clear();
      }
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04lld", kRoles[r].c_str(), static_cast<long long>(i));
      const std::string rel = std::string("volumes/") + name + ".nvg";
      const std::string bytes = data::encode_volume(vol);
      write_file_atomic(run.out_dir / rel, bytes);
      index += rel + "\t" + kRoles[r] + "\t" + name + "\t" + sha256_hex(bytes) + "\n";
      ++written;
    }
  }
  write_file_atomic(run.out_dir / kVolumeIndex, index);
  run.manifest.seeds["phantom"] = base.seed;
  run.out << "wrote " << written << " volumes to " << run.out_dir.string() << "\n";
}

struct IndexedVolume {
  std::string role;
  std::string case_id;
  data::Volume volume;
};

std::vector<IndexedVolume> read_volume_index(Run& run, const fs::path& dir) {
  const fs::path index_path = dir / kVolumeIndex;
  run.input(index_path);
  std::istringstream in(read_file(index_path));
  std::vector<IndexedVolume> vols;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string rel, role, case_id, digest;
    if (!std::getline(row, rel, '\t') || !std::getline(row, role, '\t') ||
        !std::getline(row, case_id, '\t') || !std::getline(row, digest)) {
      throw DataError("malformed row in " + index_path.string() + ": " + line);
    }
    if (std::find(kRoles.begin(), kRoles.end(), role) == kRoles.end()) {
      throw DataError("unknown role '" + role + "' in " + index_path.string());
    }
    const std::string bytes = read_file(dir / rel);
    if (sha256_hex(bytes) != digest) {
      throw DataError("checksum mismatch for " + (dir / rel).string());
    }
    vols.push_back({role, case_id, data::decode_volume(bytes)});
  }
  if (vols.empty()) {
    throw DataError(index_path.string() + " lists no volumes");
  }
  return vols;
}

void cmd_preprocess(Run& run) {
  const fs::path src = require_path(run.config, "data.volumes");
  auto vols = read_volume_index(run, src);

  std::array<double, 3> target{};
  const auto& ts = run.config.raw("data.target_spacing");
  if (ts == "median") {
    std::vector<data::Volume> all;
    for (const auto& v : vols) all.push_back(v.volume);
    target = data::median_spacing(all);
  } else {
    ExperimentConfig probe;
    probe.set("phantom.spacing", ts);
    const auto sp = probe.real_list("phantom.spacing");
    if (sp.size() != 3) {
      throw ConfigError("data.target_spacing must be 'median' or three values z,y,x");
    }
    target = {sp[0], sp[1], sp[2]};
  }
  for (auto& v : vols) {
    v.volume = data::resample_volume(v.volume, target);
  }

  std::vector<data::Volume> reference;
  for (const auto& v : vols) {
    if (v.role == "unlabeled") reference.push_back(v.volume);
  }
  if (reference.empty()) {
    for (const auto& v : vols) {
      if (v.role == "labeled") reference.push_back(v.volume);
    }
  }
  if (reference.empty()) {
    throw DataError("no unlabeled or labeled volumes to derive intensity statistics from");
  }
  const data::IntensityStats stats = data::corpus_intensity_stats(reference);
  reference.clear();

  const auto size = run.config.integer("data.slice_size");
  std::map<std::string, data::SliceDataset> sets;
  for (const auto& v : vols) {
    if (v.role != "unlabeled" && !v.volume.has_labels()) {
      throw DataError("volume " + v.case_id + " has role " + v.role + " but no labels");
    }
    sets[v.role].append(
        data::slice_and_resize(data::normalize_intensity(v.volume, stats), v.case_id, size));
  }
  for (const auto& [role, ds] : sets) {
    data::save_slice_dataset(ds, run.out_dir / role);
    run.out << role << ": " << ds.size() << " slices\n";
  }

  Metadata norm;
  stats.to_metadata(norm);
  norm["preprocess.target_spacing"] = format_shortest(target[0]) + "," +
                                      format_shortest(target[1]) + "," + format_shortest(target[2]);
  norm["preprocess.slice_size"] = std::to_string(size);
  write_file_atomic(run.out_dir / kNormFile, training::canonical_text(norm));
}

Metadata read_norm(Run& run, const fs::path& dataset_dir) {
  const fs::path p = dataset_dir / kNormFile;
  run.input(p);
  Metadata m;
  std::istringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

data::SliceDataset load_split(Run& run, const fs::path& dataset_dir, const std::string& role) {
  const fs::path dir = dataset_dir / role;
  run.input(dir / "manifest.tsv");
  return data::load_slice_dataset(dir);
}

bool has_split(const fs::path& dataset_dir, const std::string& role) {
  return fs::exists(dataset_dir / role / "manifest.tsv");
}

void cmd_pretrain(Run& run) {
  const training::PretrainConfig cfg = run.config.pretrain();
  const fs::path dataset_dir = require_path(run.config, "data.dataset");
  const auto stats = data::IntensityStats::from_metadata(read_norm(run, dataset_dir));
  const std::string role = has_split(dataset_dir, "unlabeled") ? "unlabeled" : "labeled";
  const data::SliceDataset ds = load_split(run, dataset_dir, role);
  const auto every = std::max<std::int64_t>(1, run.config.integer("pretrain.log_every"));
  run.manifest.seeds["pretrain"] = cfg.seed;
  const auto result = training::pretrain(cfg, ds, stats, run.out_dir,
                                         [&](const training::LogRecord& r) {
                                           if ((r.iter + 1) % every == 0) {
                                             run.err << "pretrain " << r.iter + 1 << "/"
                                                     << cfg.iterations << " loss " << r.loss
                                                     << "\n";
                                           }
                                         });
  run.out << "ema checkpoint: " << result.ema_checkpoint.string() << "\n";
}

struct FinetuneOutcome {
  training::FinetuneResult result;
  std::optional<metrics::SegScore> test;
};

FinetuneOutcome run_finetune(Run& run, const ExperimentConfig& config, const fs::path& out_dir) {
  const training::FinetuneConfig cfg = config.finetune();
  const fs::path dataset_dir = require_path(config, "data.dataset");

  std::optional<TensorArchive> checkpoint;
  if (cfg.strategy != unet::Strategy::scratch) {
    const fs::path ck = require_path(config, "finetune.checkpoint");
    run.input(ck);
    checkpoint = load_archive(ck);
  }

  const data::SliceDataset labeled = load_split(run, dataset_dir, "labeled");
  const double val_fraction = config.real("finetune.val_fraction");
  const double ratio = config.real("finetune.label_ratio");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("finetune.val_fraction must lie in (0, 1)");
  }
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("finetune.label_ratio must lie in (0, 1]");
  }
  RngStream split_rng(cfg.seed, 10);
  auto [pool, val] = data::split_dataset(labeled, val_fraction, split_rng);
  data::SliceDataset train =
      ratio < 1.0 ? data::subset_labeled(pool, ratio, split_rng,
                                         config.boolean("finetune.require_coverage"), cfg.classes)
                  : std::move(pool);

  const auto every = std::max<std::int64_t>(1, config.integer("finetune.log_every"));
  const auto total = cfg.effective_iterations();
  FinetuneOutcome outcome;
  outcome.result = training::finetune(
      cfg, checkpoint ? &*checkpoint : nullptr, train, val, out_dir,
      [&](const training::LogRecord& r) {
        if ((r.iter + 1) % every == 0) {
          run.err << "finetune " << unet::to_string(cfg.strategy) << " t=" << cfg.t_init << " "
                  << r.iter + 1 << "/" << total << " loss " << r.loss << "\n";
        }
      });
  write_file_atomic(out_dir / "train_slices.tsv", [&] {
    std::string s;
    for (const auto& sl : train.slices) s += sl.case_id + "\t" + std::to_string(sl.index) + "\n";
    return s;
  }());

  if (has_split(dataset_dir, "test")) {
    const fs::path chosen = config.raw("finetune.select") == "best"
                                ? outcome.result.best_checkpoint
                                : outcome.result.final_checkpoint;
    unet::SegmentationModel model = unet::load_segmentation_model(load_archive(chosen));
    const data::SliceDataset test = load_split(run, dataset_dir, "test");
    outcome.test = training::evaluate_segmentation(model, test);
    write_file_atomic(out_dir / "test_metrics.tsv", metrics::score_rows(*outcome.test));
  }
  return outcome;
}

void cmd_finetune(Run& run) {
  run.manifest.seeds["finetune"] = run.config.unsigned_integer("finetune.seed");
  const auto outcome = run_finetune(run, run.config, run.out_dir);
  run.out << "strategy " << run.config.raw("finetune.strategy") << " train "
          << outcome.result.plan.trainable.size() << " tensors; best val DSC "
          << metrics::format_score(outcome.result.best_val_dsc) << " at iteration "
          << outcome.result.best_iter << "\n";
  if (outcome.test) {
    run.out << "test mean DSC " << metrics::format_score(outcome.test->mean_dsc) << " JA "
            << metrics::format_score(outcome.test->mean_jaccard) << "\n";
  }
}

void cmd_sweep_step(Run& run, const std::string& steps_text) {
  if (steps_text.empty()) {
    throw ConfigError("sweep-step needs --steps A:B:STRIDE");
  }
  const std::vector<int> steps = parse_steps(steps_text);
  const std::vector<std::string> strategies{"decoder", "linear"};
  run.manifest.seeds["finetune"] = run.config.unsigned_integer("finetune.seed");

  std::map<std::string, std::vector<double>> scores;
  std::string metric = "val";
  for (const auto& strategy : strategies) {
    for (int t : steps) {
      ExperimentConfig cfg = run.config;
      cfg.set("finetune.strategy", strategy);
      cfg.set("finetune.t_init", std::to_string(t));
      char dir[32];
      std::snprintf(dir, sizeof dir, "t%04d", t);
      const auto outcome = run_finetune(run, cfg, run.out_dir / strategy / dir);
      double s = outcome.result.best_val_dsc;
      if (outcome.test) {
        s = outcome.test->mean_dsc;
        metric = "test";
      }
      scores[strategy].push_back(s);
      run.out << strategy << " t_init=" << t << " mean DSC " << metrics::format_score(s) << "\n";
    }
  }

  std::string table = "# metric\t" + metric + "_mean_dsc\n";
  for (const auto& strategy : strategies) {
    const auto& v = scores[strategy];
    const auto best = std::max_element(v.begin(), v.end()) - v.begin();
    table += "# best_" + strategy + "\t" + std::to_string(steps[best]) + "\n";
  }
  table += "t_init";
  for (const auto& s : strategies) table += "\t" + s;
  table += "\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    table += std::to_string(steps[i]);
    for (const auto& s : strategies) {
      char cell[32];
      std::snprintf(cell, sizeof cell, "\t%.4f", scores[s][i]);
      table += cell;
    }
    table += "\n";
  }
  write_file_atomic(run.out_dir / "summary.tsv", table);
  run.out << table;
}

void cmd_sample(Run& run) {
  const fs::path ck = require_path(run.config, "sample.checkpoint");
  run.input(ck);
  const auto seed = run.config.unsigned_integer("sample.seed");
  run.manifest.seeds["sample"] = seed;
  const auto count = run.config.integer("sample.count");
  if (count <= 0) {
    throw ConfigError("sample.count must be positive");
  }
  RngStream rng(seed, 4);
  const Tensor x = sample_grid(load_archive(ck), static_cast<int>(count), rng,
                               parse_windows(run.config.raw("sample.windows")),
                               static_cast<int>(run.config.integer("sample.columns")), run.out_dir);
  data::SliceDataset ds;
  ds.height = x.shape()[2];
  ds.width = x.shape()[3];
  const Tensor xf = x.dtype() == DType::f32 ? x : x.to(DType::f32);
  const auto values = xf.data<float>();
  const auto plane = static_cast<std::size_t>(ds.height * ds.width);
  for (std::int64_t i = 0; i < count; ++i) {
    data::Slice s;
    s.image.assign(values.begin() + i * plane, values.begin() + (i + 1) * plane);
    s.case_id = "sample";
    s.index = i;
    ds.slices.push_back(std::move(s));
  }
  data::save_slice_dataset(ds, run.out_dir / "samples");
  run.out << "wrote " << count << " samples to " << run.out_dir.string() << "\n";
}

void cmd_evaluate_seg(Run& run) {
  const fs::path ck = require_path(run.config, "evaluate.checkpoint");
  const fs::path dataset_dir = require_path(run.config, "data.dataset");
  run.input(ck);
  unet::SegmentationModel model = unet::load_segmentation_model(load_archive(ck));
  const data::SliceDataset ds = load_split(run, dataset_dir, run.config.raw("evaluate.split"));
  metrics::SegScore score;
  if (run.config.boolean("evaluate.per_case")) {
    std::map<std::string, std::vector<std::size_t>> cases;
    for (std::size_t i = 0; i < ds.size(); ++i) cases[ds.slices[i].case_id].push_back(i);
    std::vector<std::vector<std::uint8_t>> pred, truth;
    for (const auto& [id, which] : cases) {
      data::SliceDataset one{ds.height, ds.width, {}};
      for (auto i : which) one.slices.push_back(ds.slices[i]);
      std::vector<std::size_t> all(one.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      model.set_training(false);
      NoGradGuard no_grad;
      const Tensor logits = model.forward(one.images(all));
      pred.push_back(training::predict_labels(logits));
      std::vector<std::uint8_t> t;
      for (const auto& s : one.slices) t.insert(t.end(), s.labels.begin(), s.labels.end());
      truth.push_back(std::move(t));
    }
    score = metrics::seg_scores_per_case(pred, truth, model.head_config().classes);
  } else {
    score = training::evaluate_segmentation(model, ds);
  }
  const std::string rows = metrics::score_rows(score);
  write_file_atomic(run.out_dir / "metrics.tsv", rows);
  run.out << rows;
}

metrics::FeatureSet features_for(Run& run, const fs::path& source, std::uint64_t extractor_seed) {
  if (fs::is_regular_file(source)) {
    run.input(source);
    const auto fsx = metrics::FeatureSet::from_archive(load_archive(source));
    if (fsx.extractor_id != metrics::RandomCnnExtractor::kId) {
      throw DataError(source.string() + " holds features from unknown extractor '" +
                      fsx.extractor_id + "'");
    }
    return fsx;
  }
  if (!fs::exists(source / "manifest.tsv")) {
    throw DataError(source.string() + " is neither a feature archive nor a slice directory");
  }
  run.input(source / "manifest.tsv");
  const std::string key = sha256_hex(data::manifest_checksum(source) + "|" +
                                     metrics::RandomCnnExtractor::kId + "|" +
                                     std::to_string(extractor_seed));
  std::optional<fs::path> cache;
  if (const char* env = std::getenv("DIFFSEG_CACHE_DIR"); env && *env) {
    cache = fs::path(env) / (key + ".nta");
  } else if (!run.out_dir.empty()) {
    cache = run.out_dir / "feature_cache" / (key + ".nta");
  }
  if (cache && fs::exists(*cache)) {
    return metrics::FeatureSet::from_archive(load_archive(*cache));
  }
  const data::SliceDataset ds = data::load_slice_dataset(source);
  std::vector<metrics::GrayImage> images;
  images.reserve(ds.size());
  for (const auto& s : ds.slices) images.push_back({ds.height, ds.width, s.image});
  const auto features =
      metrics::extract_features(images, metrics::RandomCnnExtractor(extractor_seed));
  if (cache) {
    save_archive(features.to_archive(), *cache);
  }
  return features;
}

void cmd_evaluate_gen(Run& run, const std::string& real, const std::string& gen) {
  if (real.empty() || gen.empty()) {
    throw ConfigError("evaluate-gen needs --real and --gen");
  }
  const auto seed = run.config.unsigned_integer("evaluate.extractor_seed");
  run.manifest.seeds["extractor"] = seed;
  const auto a = features_for(run, real, seed);
  const auto b = features_for(run, gen, seed);
  if (a.seed != b.seed) {
    throw DataError("feature sets come from extractors with different seeds");
  }
  const auto score =
      metrics::generative_scores(a, b, static_cast<int>(run.config.integer("evaluate.k")));
  const std::string rows = score.rows();
  if (!run.out_dir.empty()) {
    write_file_atomic(run.out_dir / "metrics.tsv", rows);
  }
  run.out << rows;
}

std::string seed_key(const std::string& command) {
  if (command == "synth-data") return "phantom.seed";
  if (command == "pretrain") return "pretrain.seed";
  if (command == "sample") return "sample.seed";
  if (command == "finetune" || command == "sweep-step") return "finetune.seed";
  if (command == "evaluate-gen") return "evaluate.extractor_seed";
  return {};
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"preprocess", "synth-data",   "pretrain",
                                          "sample",     "finetune",     "sweep-step",
                                          "evaluate-seg", "evaluate-gen"};
  return c;
}

std::string usage() {
  std::string s = "usage: diffseg <command> --config PATH [--set KEY=VALUE]... [--seed N] --out DIR\n"
                  "commands:";
  for (const auto& c : commands()) s += " " + c;
  return s + "\n";
}

}  // namespace

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  auto files = [](const std::vector<FileRecord>& v) {
    json a = json::array();
    for (const auto& f : v) {
      json e{{"path", f.path}, {"sha256", f.sha256}};
      if (f.varies) e["varies"] = true;
      a.push_back(e);
    }
    return a;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  j["seeds"] = seeds;
  j["started"] = started;
  j["finished"] = finished;
  j["versions"] = versions;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const json j = json::parse(text);
    m.command = j.at("command").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    auto files = [](const json& a) {
      std::vector<FileRecord> v;
      for (const auto& e : a) {
        v.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                     e.value("varies", false)});
      }
      return v;
    };
    m.inputs = files(j.at("inputs"));
    m.outputs = files(j.at("outputs"));
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.versions = j.at("versions").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

std::vector<FileRecord> scan_outputs(const fs::path& dir) {
  std::vector<FileRecord> files;
  if (!fs::exists(dir)) {
    return files;
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    const bool varies = entry.path().filename() == "runlog.tsv";
    files.push_back({rel, sha256_file(entry.path()), varies});
  }
  std::sort(files.begin(), files.end(),
            [](const FileRecord& a, const FileRecord& b) { return a.path < b.path; });
  return files;
}

std::vector<int> parse_steps(const std::string& text) {
  int a = 0, b = 0, s = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> a >> c1 >> b >> c2 >> s) || c1 != ':' || c2 != ':' || !(in >> std::ws).eof()) {
    throw ConfigError("bad --steps '" + text + "' (expected A:B:STRIDE)");
  }
  if (a < 0 || b < a || s <= 0) {
    throw ConfigError("bad --steps '" + text + "' (need 0 <= A <= B and STRIDE > 0)");
  }
  std::vector<int> steps;
  for (int t = a; t <= b; t += s) steps.push_back(t);
  return steps;
}

Tensor sample_grid(const TensorArchive& checkpoint, int count, RngStream& rng,
                   const std::vector<Window>& windows, int columns, const fs::path& out_dir) {
  data::IntensityStats stats;
  try {
    stats = data::IntensityStats::from_metadata(checkpoint.meta);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint cannot be mapped back to intensities: ") + e.what());
  }
  if (count <= 0) {
    throw ConfigError("sample count must be positive");
  }
  const auto h = std::stoll(checkpoint.meta_at("data.height"));
  const auto w = std::stoll(checkpoint.meta_at("data.width"));
  unet::UNetConfig cfg = unet::UNetConfig::from_metadata(checkpoint.meta);
  const auto sched = diffusion::NoiseSchedule::from_metadata(checkpoint.meta);
  unet::UNet net = unet::build_noise_unet(cfg, 0);
  unet::load_parameters(net.params(), checkpoint);

  NoGradGuard no_grad;
  const diffusion::NoiseModel model = [&net](const Tensor& x, const std::vector<int>& t) {
    return net.forward(x, t);
  };
  Tensor x = diffusion::sample_loop(model, {count, 1, h, w}, sched, rng, cfg.dtype);
  x = diffusion::clamp_unit(x);

  const Tensor xd = x.dtype() == DType::f64 ? x : x.to(DType::f64);
  const auto values = xd.data<double>();
  const auto plane = static_cast<std::size_t>(h * w);
  fs::create_directories(out_dir);
  for (const auto& win : windows) {
    std::vector<Gray8> tiles;
    for (int i = 0; i < count; ++i) {
      std::vector<double> hu(plane);
      for (std::size_t p = 0; p < plane; ++p) {
        hu[p] = data::denormalize_value(values[i * plane + p], stats);
      }
      tiles.push_back(apply_window(hu, h, w, win));
      char name[64];
      std::snprintf(name, sizeof name, "sample_%03d_%s.pgm", i, win.tag().c_str());
      write_file_atomic(out_dir / name, encode_pgm(tiles.back()));
    }
    write_file_atomic(out_dir / ("contact_" + win.tag() + ".pgm"),
                      encode_pgm(contact_sheet(tiles, columns)));
  }
  return x;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return exit_config;
  }
  const std::string& command = args.front();
  if (command == "--help" || command == "-h" || command == "help") {
    out << usage();
    return exit_ok;
  }
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    err << "error: unknown command '" << command << "'\n" << usage();
    return exit_config;
  }

  CLI::App app{"diffseg " + command, "diffseg " + command};
  std::string config_path, out_dir, steps, real, gen;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "experiment config (INI)");
  app.add_option("--set", overrides, "override KEY=VALUE")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  auto* seed_opt = app.add_option("--seed", seed, "seed for this stage");
  app.add_option("--out", out_dir, "output directory");
  if (command == "sweep-step") {
    app.add_option("--steps", steps, "A:B:STRIDE")->required();
  }
  if (command == "evaluate-gen") {
    app.add_option("--real", real, "feature archive or slice directory")->required();
    app.add_option("--gen", gen, "feature archive or slice directory")->required();
  }

  try {
    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_config;
  }

  try {
    ExperimentConfig config;
    if (!config_path.empty()) {
      config = ExperimentConfig::load(config_path);
    } else if (command != "evaluate-gen") {
      throw ConfigError("--config is required");
    }
    for (const auto& o : overrides) {
      config.apply_override(o);
    }
    if (*seed_opt) {
      const std::string key = seed_key(command);
      if (key.empty()) {
        throw ConfigError("--seed has no effect on " + command);
      }
      config.set(key, std::to_string(seed));
    }
    if (out_dir.empty() && command != "evaluate-gen") {
      throw ConfigError("--out is required");
    }

    Run run{command, args, config, fs::path(out_dir), {}, out, err};
    run.manifest.command = args;
    run.manifest.command.insert(run.manifest.command.begin(), "diffseg");
    run.manifest.config_hash = config.hash();
    run.manifest.started = utc_now();
    run.manifest.versions = {{"diffseg", kVersion}, {"archive", "NTA1"}, {"volume", "NVG1"}};
    if (!run.out_dir.empty()) {
      fs::create_directories(run.out_dir);
      write_file_atomic(run.out_dir / "config.cfg", config.canonical_text());
    }

    if (command == "synth-data") cmd_synth_data(run);
    else if (command == "preprocess") cmd_preprocess(run);
    else if (command == "pretrain") cmd_pretrain(run);
    else if (command == "sample") cmd_sample(run);
    else if (command == "finetune") cmd_finetune(run);
    else if (command == "sweep-step") cmd_sweep_step(run, steps);
    else if (command == "evaluate-seg") cmd_evaluate_seg(run);
    else if (command == "evaluate-gen") cmd_evaluate_gen(run, real, gen);

    if (!run.out_dir.empty()) {
      run.finish();
    }
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return exit_numeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
}

}  // namespace diffseg::cli
