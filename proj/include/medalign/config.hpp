#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "medalign/encoders.hpp"
#include "medalign/errors.hpp"
#include "medalign/matching_loss.hpp"
#include "medalign/report_labeler.hpp"

namespace medalign {

struct AugmentationSpec {
  bool enabled = true;
  int resize_to = 256;
  int crop_to = 224;
  bool random_crop = true;
  double hflip_prob = 0.5;
  double brightness_min = 0.8, brightness_max = 1.2;
  double contrast_min = 0.8, contrast_max = 1.2;
  double degrees_min = -10.0, degrees_max = 10.0;
  double max_translate = 0.0625;  // fraction of the side length
  double scale_min = 0.8, scale_max = 1.1;

  /// Every range collapsed: augment() reduces to resize + center crop.
  static AugmentationSpec identity(int resize_to, int crop_to) {
    AugmentationSpec a;
    a.resize_to = resize_to;
    a.crop_to = crop_to;
    a.random_crop = false;
    a.hflip_prob = 0;
    a.brightness_min = a.brightness_max = 1;
    a.contrast_min = a.contrast_max = 1;
    a.degrees_min = a.degrees_max = 0;
    a.max_translate = 0;
    a.scale_min = a.scale_max = 1;
    return a;
  }

  void validate() const {
    if (crop_to <= 0 || resize_to <= 0) throw ConfigError("augment sizes must be positive");
    if (crop_to > resize_to) throw ConfigError("augment.crop_to exceeds augment.resize_to");
    if (hflip_prob < 0 || hflip_prob > 1) throw ConfigError("augment.hflip_prob outside [0,1]");
    auto ordered = [](double lo, double hi, const char* what) {
      if (lo > hi) throw ConfigError(std::string("augment range ") + what + " is not ordered");
    };
    ordered(brightness_min, brightness_max, "brightness");
    ordered(contrast_min, contrast_max, "contrast");
    ordered(degrees_min, degrees_max, "degrees");
    ordered(scale_min, scale_max, "scale");
    if (brightness_min < 0 || contrast_min < 0 || scale_min <= 0) throw ConfigError("augment factors must be positive");
    if (max_translate < 0 || max_translate >= 0.5) throw ConfigError("augment.max_translate outside [0,0.5)");
  }
};

enum class LossKind { Semantic, InfoNCE };
enum class SamplerKind { Decoupled, Paired };

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 100;
  double weight_decay = 1e-4;
  int epochs = 10;
  double warmup_ratio = 0.1;
  std::uint64_t seed = 0;
  int image_size = 224;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double tau_init = kInitialTemperature;
  double max_tau = kMaxTemperature;
  LossKind loss = LossKind::Semantic;
  SamplerKind sampler = SamplerKind::Decoupled;
  UncertaintyPolicy uncertain = UncertaintyPolicy::Affirm;
  int checkpoint_every = 1;  // epochs; 0 disables intermediate checkpoints
  bool mixed_precision = false;
  ModelConfig model{};
  AugmentationSpec augment{};

  /// Small-model settings that train the toy encoders on a CPU in seconds.
  static TrainConfig desk_scale() {
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.batch_size = 50;
    c.epochs = 200;
    c.image_size = 32;
    c.augment.resize_to = 36;
    c.augment.crop_to = 32;
    return c;
  }

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.image_size = image_size;
    return m;
  }

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (warmup_ratio < 0 || warmup_ratio > 1) throw ConfigError("warmup_ratio outside [0,1]");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas outside [0,1)");
    if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
    if (!(tau_init > 0) || !(max_tau >= tau_init)) throw ConfigError("temperature bounds invalid");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (mixed_precision) throw ConfigError("mixed_precision is reserved; only full precision is implemented");
    augment.validate();
    if (augment.crop_to != image_size) throw ConfigError("augment.crop_to must equal image_size");
    model_config().validate();
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const auto fields = [] {
    std::vector<std::pair<std::string, Field>> f;
    auto real = [&](std::string key, auto member) {
      f.push_back({key, {[member](const TrainConfig& c) { return fmt_double(member(const_cast<TrainConfig&>(c))); },
                         [member, key](TrainConfig& c, const std::string& s) {
                           member(c) = parse_number<double>(key, s);
                         }}});
    };
    auto integer = [&](std::string key, auto member) {
      f.push_back({key, {[member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
                         [member, key](TrainConfig& c, const std::string& s) {
                           member(c) = parse_number<std::remove_reference_t<decltype(member(c))>>(key, s);
                         }}});
    };
    auto boolean = [&](std::string key, auto member) {
      f.push_back({key, {[member](const TrainConfig& c) {
                           return std::string(member(const_cast<TrainConfig&>(c)) ? "true" : "false");
                         },
                         [member, key](TrainConfig& c, const std::string& s) { member(c) = parse_bool(key, s); }}});
    };
    real("learning_rate", [](TrainConfig& c) -> double& { return c.learning_rate; });
    integer("batch_size", [](TrainConfig& c) -> int& { return c.batch_size; });
    real("weight_decay", [](TrainConfig& c) -> double& { return c.weight_decay; });
    integer("epochs", [](TrainConfig& c) -> int& { return c.epochs; });
    real("warmup_ratio", [](TrainConfig& c) -> double& { return c.warmup_ratio; });
    integer("seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; });
    integer("image_size", [](TrainConfig& c) -> int& { return c.image_size; });
    real("beta1", [](TrainConfig& c) -> double& { return c.beta1; });
    real("beta2", [](TrainConfig& c) -> double& { return c.beta2; });
    real("adam_epsilon", [](TrainConfig& c) -> double& { return c.adam_epsilon; });
    real("tau_init", [](TrainConfig& c) -> double& { return c.tau_init; });
    real("max_tau", [](TrainConfig& c) -> double& { return c.max_tau; });
    f.push_back({"loss",
                 {[](const TrainConfig& c) { return std::string(c.loss == LossKind::Semantic ? "semantic" : "infonce"); },
                  [](TrainConfig& c, const std::string& s) {
                    if (s == "semantic") c.loss = LossKind::Semantic;
                    else if (s == "infonce") c.loss = LossKind::InfoNCE;
                    else throw ConfigError("config key 'loss': expected semantic|infonce, got '" + s + "'");
                  }}});
    f.push_back({"sampler",
                 {[](const TrainConfig& c) {
                    return std::string(c.sampler == SamplerKind::Decoupled ? "decoupled" : "paired");
                  },
                  [](TrainConfig& c, const std::string& s) {
                    if (s == "decoupled") c.sampler = SamplerKind::Decoupled;
                    else if (s == "paired") c.sampler = SamplerKind::Paired;
                    else throw ConfigError("config key 'sampler': expected decoupled|paired, got '" + s + "'");
                  }}});
    f.push_back({"uncertain",
                 {[](const TrainConfig& c) {
                    return std::string(c.uncertain == UncertaintyPolicy::Affirm ? "affirm" : "ignore");
                  },
                  [](TrainConfig& c, const std::string& s) { c.uncertain = parse_uncertainty_policy(s); }}});
    integer("checkpoint_every", [](TrainConfig& c) -> int& { return c.checkpoint_every; });
    boolean("mixed_precision", [](TrainConfig& c) -> bool& { return c.mixed_precision; });
    integer("model.channels", [](TrainConfig& c) -> int& { return c.model.channels; });
    integer("model.filters", [](TrainConfig& c) -> int& { return c.model.filters; });
    integer("model.kernel", [](TrainConfig& c) -> int& { return c.model.kernel; });
    integer("model.stride", [](TrainConfig& c) -> int& { return c.model.stride; });
    integer("model.grid", [](TrainConfig& c) -> int& { return c.model.grid; });
    integer("model.vision_dim", [](TrainConfig& c) -> int& { return c.model.vision_dim; });
    integer("model.text_embed_dim", [](TrainConfig& c) -> int& { return c.model.text_embed_dim; });
    integer("model.text_dim", [](TrainConfig& c) -> int& { return c.model.text_dim; });
    integer("model.proj_dim", [](TrainConfig& c) -> int& { return c.model.proj_dim; });
    boolean("augment.enabled", [](TrainConfig& c) -> bool& { return c.augment.enabled; });
    integer("augment.resize_to", [](TrainConfig& c) -> int& { return c.augment.resize_to; });
    integer("augment.crop_to", [](TrainConfig& c) -> int& { return c.augment.crop_to; });
    boolean("augment.random_crop", [](TrainConfig& c) -> bool& { return c.augment.random_crop; });
    real("augment.hflip_prob", [](TrainConfig& c) -> double& { return c.augment.hflip_prob; });
    real("augment.brightness_min", [](TrainConfig& c) -> double& { return c.augment.brightness_min; });
    real("augment.brightness_max", [](TrainConfig& c) -> double& { return c.augment.brightness_max; });
    real("augment.contrast_min", [](TrainConfig& c) -> double& { return c.augment.contrast_min; });
    real("augment.contrast_max", [](TrainConfig& c) -> double& { return c.augment.contrast_max; });
    real("augment.degrees_min", [](TrainConfig& c) -> double& { return c.augment.degrees_min; });
    real("augment.degrees_max", [](TrainConfig& c) -> double& { return c.augment.degrees_max; });
    real("augment.max_translate", [](TrainConfig& c) -> double& { return c.augment.max_translate; });
    real("augment.scale_min", [](TrainConfig& c) -> double& { return c.augment.scale_min; });
    real("augment.scale_max", [](TrainConfig& c) -> double& { return c.augment.scale_max; });
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Parses `key = value` lines ('#' starts a comment) on top of `base`.
/// Unknown keys and duplicate keys are errors. The result is validated.
inline TrainConfig parse_train_config(std::istream& in, TrainConfig base = {}) {
  std::map<std::string, const detail::Field*> index;
  for (const auto& [k, f] : detail::config_fields()) index[k] = &f;
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = text::trim(t.substr(0, eq));
    const std::string value = text::trim(t.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    it->second->set(base, value);
  }
  base.validate();
  return base;
}

inline TrainConfig parse_train_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  return parse_train_config(in, std::move(base));
}

inline TrainConfig load_train_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config", path);
  return parse_train_config(in, std::move(base));
}

/// Every field as `key = value`, in a fixed order; parses back to an equal config.
inline std::string to_kv(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, f] : detail::config_fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : detail::config_fields()) keys.push_back(k);
  return keys;
}

}  // namespace medalign
