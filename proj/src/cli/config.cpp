// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/core/sha256.hpp"

namespace diffseg::cli {

namespace {

using VK = ValueKind;

std::vector<KeySpec> build_schema() {
  std::vector<KeySpec> s{
      {"phantom.seed", VK::unsigned_integer, "0", {}},
      {"phantom.unlabeled_cases", VK::integer, "50", {}},
      {"phantom.labeled_cases", VK::integer, "10", {}},
      {"phantom.test_cases", VK::integer, "5", {}},
      {"phantom.depth", VK::integer, "40", {}},
      {"phantom.size", VK::integer, "64", {}},
      {"phantom.organs", VK::integer, "6", {}},
      {"phantom.noise_sigma", VK::real, "20", {}},
      {"phantom.jitter", VK::real, "0.06", {}},
      {"phantom.halo", VK::real, "0.25", {}},
      {"phantom.margin", VK::real, "0.15", {}},
      {"phantom.spacing", VK::real_list, "2.5,1.5,1.5", {}},
      {"phantom.max_attempts", VK::integer, "200", {}},

      {"data.volumes", VK::text, "", {}},
      {"data.dataset", VK::text, "", {}},
      {"data.slice_size", VK::integer, "64", {}},
      {"data.target_spacing", VK::text, "median", {}},

      {"unet.base_width", VK::integer, "128", {}},
      {"unet.channel_mult", VK::int_list, "1,1,2,2", {}},
      {"unet.res_blocks", VK::integer, "2", {}},
      {"unet.attention_levels", VK::int_list, "3", {}},
      {"unet.norm_groups", VK::integer, "32", {}},
      {"unet.time_embed_mult", VK::integer, "4", {}},
      {"unet.dtype", VK::choice, "f32", {"f32", "f64"}},

      {"diffusion.steps", VK::integer, "1000", {}},
      {"diffusion.beta_start", VK::real, "0.0001", {}},
      {"diffusion.beta_end", VK::real, "0.02", {}},
      {"diffusion.schedule", VK::choice, "linear", {"linear", "cosine"}},

      {"pretrain.iterations", VK::integer, "300000", {}},
      {"pretrain.batch_size", VK::integer, "8", {}},
      {"pretrain.lr_start", VK::real, "0.0002", {}},
      {"pretrain.lr_end", VK::real, "2e-05", {}},
      {"pretrain.ema_momentum", VK::real, "0.9999", {}},
      {"pretrain.checkpoint_every", VK::integer, "0", {}},
      {"pretrain.hflip", VK::boolean, "true", {}},
      {"pretrain.seed", VK::unsigned_integer, "0", {}},
      {"pretrain.log_every", VK::integer, "100", {}},

      {"finetune.checkpoint", VK::text, "", {}},
      {"finetune.strategy", VK::choice, "decoder", {"linear", "decoder", "scratch"}},
      {"finetune.t_init", VK::integer, "0", {}},
      {"finetune.decoder_includes_middle", VK::boolean, "false", {}},
      {"finetune.iterations", VK::integer, "10000", {}},
      {"finetune.one_batch", VK::boolean, "false", {}},
      {"finetune.batch_size", VK::integer, "4", {}},
      {"finetune.base_lr", VK::real, "0.0001", {}},
      {"finetune.head_lr_scale", VK::real, "10", {}},
      {"finetune.head_weight_decay", VK::real, "0.001", {}},
      {"finetune.body_weight_decay", VK::real, "0.0001", {}},
      {"finetune.ce_weight", VK::real, "0.5", {}},
      {"finetune.dice_eps", VK::real, "1e-05", {}},
      {"finetune.macro_dice", VK::boolean, "false", {}},
      {"finetune.head_hidden", VK::integer, "128", {}},
      {"finetune.classes", VK::integer, "14", {}},
      {"finetune.eval_every", VK::integer, "500", {}},
      {"finetune.seed", VK::unsigned_integer, "0", {}},
      {"finetune.label_ratio", VK::real, "1", {}},
      {"finetune.require_coverage", VK::boolean, "true", {}},
      {"finetune.val_fraction", VK::real, "0.1", {}},
      {"finetune.select", VK::choice, "final", {"final", "best"}},
      {"finetune.log_every", VK::integer, "100", {}},

      {"sample.checkpoint", VK::text, "", {}},
      {"sample.count", VK::integer, "4", {}},
      {"sample.seed", VK::unsigned_integer, "0", {}},
      {"sample.windows", VK::text, "1400:-500,350:40", {}},
      {"sample.columns", VK::integer, "4", {}},

      {"evaluate.checkpoint", VK::text, "", {}},
      {"evaluate.split", VK::choice, "test", {"test", "labeled"}},
      {"evaluate.per_case", VK::boolean, "false", {}},
      {"evaluate.extractor_seed", VK::unsigned_integer, "0", {}},
      {"evaluate.k", VK::integer, "3", {}},
  };
  std::sort(s.begin(), s.end(), [](const KeySpec& a, const KeySpec& b) { return a.key < b.key; });
  return s;
}

const KeySpec& spec_for(const std::string& key) {
  const auto& schema = config_schema();
  auto it = std::lower_bound(schema.begin(), schema.end(), key,
                             [](const KeySpec& s, const std::string& k) { return s.key < k; });
  if (it == schema.end() || it->key != key) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  return *it;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    parts.push_back(trim(item));
  }
  return parts;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') {
    ++first;
  }
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError("bad value '" + text + "' for " + key);
  }
  return v;
}

std::string normalize(const KeySpec& spec, const std::string& input) {
  const std::string v = trim(input);
  switch (spec.kind) {
    case VK::integer:
      return std::to_string(parse_number<std::int64_t>(spec.key, v));
    case VK::unsigned_integer:
      return std::to_string(parse_number<std::uint64_t>(spec.key, v));
    case VK::real: {
      const double d = parse_number<double>(spec.key, v);
      if (!std::isfinite(d)) {
        throw ConfigError("non-finite value '" + v + "' for " + spec.key);
      }
      return format_shortest(d);
    }
    case VK::boolean: {
      std::string l = v;
      std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
      if (l == "true" || l == "1" || l == "yes" || l == "on") return "true";
      if (l == "false" || l == "0" || l == "no" || l == "off") return "false";
      throw ConfigError("bad boolean '" + v + "' for " + spec.key);
    }
    case VK::int_list:
    case VK::real_list: {
      std::string out;
      if (v.empty()) {
        return out;
      }
      for (const auto& item : split_list(v)) {
        if (!out.empty()) out += ",";
        out += spec.kind == VK::int_list
                   ? std::to_string(parse_number<std::int64_t>(spec.key, item))
                   : format_shortest(parse_number<double>(spec.key, item));
      }
      return out;
    }
    case VK::choice:
      if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
        std::string allowed;
        for (const auto& c : spec.choices) allowed += (allowed.empty() ? "" : "|") + c;
        throw ConfigError("bad value '" + v + "' for " + spec.key + " (expected " + allowed + ")");
      }
      return v;
    case VK::text:
      return v;
  }
  return v;
}

// Boost's INI reader only knows ';' comments.
std::string strip_hash_comments(std::string_view text) {
  std::string out;
  std::stringstream ss{std::string(text)};
  std::string line;
  while (std::getline(ss, line)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] == '#') {
      out += "\n";
    } else {
      out += line + "\n";
    }
  }
  return out;
}

}  // namespace

std::string format_shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) {
    throw ConfigError("cannot format number");
  }
  return std::string(buf, ptr);
}

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = build_schema();
  return schema;
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& s : config_schema()) {
    values_[s.key] = s.fallback.empty() ? s.fallback : normalize(s, s.fallback);
  }
}

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::stringstream in(strip_hash_comments(text));
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(origin + ": key '" + section + "' outside any section");
    }
    const auto& schema = config_schema();
    if (std::none_of(schema.begin(), schema.end(),
                     [&](const KeySpec& s) { return s.key.starts_with(section + "."); })) {
      throw ConfigError(origin + ": unknown config section '" + section + "'");
    }
    for (const auto& [name, value] : body) {
      cfg.set(section + "." + name, value.get_value<std::string>());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse(text, path.string());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& spec = spec_for(key);
  values_[key] = normalize(spec, value);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
  }
  set(trim(std::string_view(assignment).substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& ExperimentConfig::raw(const std::string& key) const {
  spec_for(key);
  return values_.at(key);
}

bool ExperimentConfig::is_default(const std::string& key) const {
  const auto& s = spec_for(key);
  return raw(key) == (s.fallback.empty() ? s.fallback : normalize(s, s.fallback));
}

std::int64_t ExperimentConfig::integer(const std::string& key) const {
  return parse_number<std::int64_t>(key, raw(key));
}

std::uint64_t ExperimentConfig::unsigned_integer(const std::string& key) const {
  return parse_number<std::uint64_t>(key, raw(key));
}

double ExperimentConfig::real(const std::string& key) const {
  return parse_number<double>(key, raw(key));
}

bool ExperimentConfig::boolean(const std::string& key) const { return raw(key) == "true"; }

std::vector<int> ExperimentConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  const auto& r = raw(key);
  if (r.empty()) {
    return out;
  }
  for (const auto& item : split_list(r)) {
    out.push_back(parse_number<int>(key, item));
  }
  return out;
}

std::vector<double> ExperimentConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  const auto& r = raw(key);
  if (r.empty()) {
    return out;
  }
  for (const auto& item : split_list(r)) {
    out.push_back(parse_number<double>(key, item));
  }
  return out;
}

std::string ExperimentConfig::canonical_text() const {
  std::string out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical_text()); }

unet::UNetConfig ExperimentConfig::model() const {
  unet::UNetConfig m;
  m.base_width = static_cast<int>(integer("unet.base_width"));
  m.channel_mult = int_list("unet.channel_mult");
  m.res_blocks = static_cast<int>(integer("unet.res_blocks"));
  m.attention_levels = int_list("unet.attention_levels");
  m.norm_groups = static_cast<int>(integer("unet.norm_groups"));
  m.time_embed_mult = static_cast<int>(integer("unet.time_embed_mult"));
  m.dtype = raw("unet.dtype") == "f64" ? DType::f64 : DType::f32;
  return m;
}

training::PretrainConfig ExperimentConfig::pretrain() const {
  training::PretrainConfig c;
  c.model = model();
  c.diffusion_steps = static_cast<int>(integer("diffusion.steps"));
  c.beta_start = real("diffusion.beta_start");
  c.beta_end = real("diffusion.beta_end");
  c.schedule = diffusion::schedule_kind_from_string(raw("diffusion.schedule"));
  c.iterations = integer("pretrain.iterations");
  c.batch_size = static_cast<int>(integer("pretrain.batch_size"));
  c.lr_start = real("pretrain.lr_start");
  c.lr_end = real("pretrain.lr_end");
  c.ema_momentum = real("pretrain.ema_momentum");
  c.checkpoint_every = integer("pretrain.checkpoint_every");
  c.hflip = boolean("pretrain.hflip");
  c.seed = unsigned_integer("pretrain.seed");
  c.validate();
  return c;
}

training::FinetuneConfig ExperimentConfig::finetune() const {
  training::FinetuneConfig c;
  c.strategy = unet::strategy_from_string(raw("finetune.strategy"));
  c.t_init = static_cast<int>(integer("finetune.t_init"));
  c.decoder_includes_middle = boolean("finetune.decoder_includes_middle");
  c.iterations = integer("finetune.iterations");
  c.one_batch = boolean("finetune.one_batch");
  c.batch_size = static_cast<int>(integer("finetune.batch_size"));
  c.base_lr = real("finetune.base_lr");
  c.head_lr_scale = real("finetune.head_lr_scale");
  c.head_weight_decay = real("finetune.head_weight_decay");
  c.body_weight_decay = real("finetune.body_weight_decay");
  c.loss.weight = real("finetune.ce_weight");
  c.loss.eps = real("finetune.dice_eps");
  c.loss.macro_dice = boolean("finetune.macro_dice");
  c.head_hidden = static_cast<int>(integer("finetune.head_hidden"));
  c.classes = static_cast<int>(integer("finetune.classes"));
  c.eval_every = integer("finetune.eval_every");
  c.seed = unsigned_integer("finetune.seed");
  c.scratch_model = model();
  c.validate();
  return c;
}

data::PhantomSpec ExperimentConfig::phantom() const {
  data::PhantomSpec p;
  p.seed = unsigned_integer("phantom.seed");
  p.depth = integer("phantom.depth");
  p.size = integer("phantom.size");
  p.organs = static_cast<int>(integer("phantom.organs"));
  p.noise_sigma = real("phantom.noise_sigma");
  p.jitter = real("phantom.jitter");
  p.halo = real("phantom.halo");
  p.margin = real("phantom.margin");
  const auto sp = real_list("phantom.spacing");
  if (sp.size() != 3) {
    throw ConfigError("phantom.spacing needs three values (z,y,x)");
  }
  p.spacing = {sp[0], sp[1], sp[2]};
  p.max_attempts = static_cast<int>(integer("phantom.max_attempts"));
  p.validate();
  return p;
}

}  // namespace diffseg::cli
