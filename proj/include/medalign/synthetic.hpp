#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "medalign/config.hpp"
#include "medalign/semantic_pairing.hpp"
#include "medalign/templates.hpp"

namespace medalign {

/// Planted-semantics corpus: each record draws a label, renders one visual
/// motif per active finding, and writes a sentence consistent with the label.
/// Record k of the image pool and record k of the text pool share a study.
struct SyntheticCorpusSpec {
  std::size_t n_images = 500;
  std::size_t n_sentences = 500;
  int image_size = 32;
  std::vector<FindingType> classes{FindingType::Atelectasis, FindingType::Cardiomegaly, FindingType::Edema,
                                   FindingType::Consolidation, FindingType::PleuralEffusion};
  std::vector<double> class_weights{};  // empty = uniform over `classes`
  double no_finding_rate = 0.0;         // records labeled No Finding (blank image)
  double multi_label_rate = 0.0;        // records carrying a second class
  double negated_rate = 0.5;            // No Finding texts phrased as a denial rather than a normal statement
  double uncertain_rate = 0.0;          // single-class texts phrased with hedging
  double mixed_rate = 0.0;              // single-class texts that also deny another class
  double noise = 0.05;                  // background gaussian noise
  UncertaintyPolicy uncertain = UncertaintyPolicy::Affirm;

  void validate() const {
    if (classes.empty()) throw ConfigError("synthetic spec needs at least one class");
    if (image_size < 8) throw ConfigError("synthetic image_size must be at least 8");
    if (!class_weights.empty()) {
      if (class_weights.size() != classes.size())
        throw ConfigError("synthetic class_weights must match classes in length");
      double total = 0;
      for (double w : class_weights) {
        if (w < 0) throw ConfigError("synthetic class weights must be non-negative");
        total += w;
      }
      if (!(total > 0)) throw ConfigError("synthetic class weights sum to zero");
    }
    for (double r : {no_finding_rate, multi_label_rate, negated_rate, uncertain_rate, mixed_rate})
      if (r < 0 || r > 1) throw ConfigError("synthetic rates must lie in [0,1]");
    if (multi_label_rate > 0 && classes.size() < 2) throw ConfigError("multi_label_rate needs two or more classes");
    if (mixed_rate > 0 && classes.size() < 2) throw ConfigError("mixed_rate needs two or more classes");
    if (noise < 0) throw ConfigError("synthetic noise must be non-negative");
    for (auto f : classes)
      if (f == FindingType::NoFinding) throw ConfigError("use no_finding_rate instead of listing No Finding");
  }
};

struct SyntheticCorpus {
  ImagePool images;
  TextPool texts;
  std::vector<FindingLabel> image_truth;
  std::vector<FindingLabel> text_truth;
};

namespace synth {

/// Adds the motif of finding `f` centered at (cy, cx) with radius r.
inline void draw_motif(Image& img, FindingType f, double cy, double cx, double r, float intensity) {
  const double t = std::max(1.0, 0.3 * r);
  auto put = [&](int y, int x, double v) {
    float& p = img.at(y, x);
    p = std::max(p, static_cast<float>(v) * intensity);
  };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double d = std::hypot(dy, dx);
      const bool in_box = std::abs(dy) <= r && std::abs(dx) <= r;
      bool on = false;
      switch (f) {
        case FindingType::NoFinding: break;
        case FindingType::EnlargedCardiomediastinum: on = std::abs(dx) <= 0.25 * r && std::abs(dy) <= 1.4 * r; break;
        case FindingType::Cardiomegaly: on = d <= r; break;
        case FindingType::LungOpacity: put(y, x, std::exp(-d * d / (2 * 0.36 * r * r))); break;
        case FindingType::LungLesion:
          for (int k = 0; k < 3; ++k) {
            const double a = 2.0943951023931953 * k;
            on = on || std::hypot(dy - 0.8 * r * std::sin(a), dx - 0.8 * r * std::cos(a)) <= 0.3 * r;
          }
          break;
        case FindingType::Edema: on = in_box && static_cast<int>(std::floor((dy + r) / (0.4 * r))) % 2 == 0; break;
        case FindingType::Consolidation: on = std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r; break;
        case FindingType::Pneumonia:
          on = in_box && (static_cast<int>(std::floor((dy + r) / (0.5 * r))) +
                          static_cast<int>(std::floor((dx + r) / (0.5 * r)))) % 2 == 0;
          break;
        case FindingType::Atelectasis: on = std::abs(dy) <= t / 2 + 0.5 && std::abs(dx) <= 1.3 * r; break;
        case FindingType::Pneumothorax: on = std::abs(d - r) <= t / 2 + 0.5; break;
        case FindingType::PleuralEffusion: on = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2; break;
        case FindingType::PleuralOther: on = in_box && (std::abs(dy - dx) <= t || std::abs(dy + dx) <= t); break;
        case FindingType::Fracture:
          on = (std::abs(dy - r) <= t / 2 + 0.5 && dx >= -r && dx <= r) || (std::abs(dx + r) <= t / 2 + 0.5 && dy >= -r && dy <= r);
          break;
        case FindingType::SupportDevices:
          on = (std::abs(dy) <= t / 2 + 0.5 && std::abs(dx) <= r) || (std::abs(dx) <= t / 2 + 0.5 && std::abs(dy) <= r);
          break;
      }
      if (on) put(y, x, 1.0);
    }
}

inline Image render(const FindingLabel& label, int size, double noise, Rng& rng) {
  Image img(size, size, 1);
  std::normal_distribution<double> g(0.0, noise);
  for (float& p : img.pixels) p = static_cast<float>(std::clamp(0.1 + (noise > 0 ? g(rng) : 0.0), 0.0, 1.0));
  std::vector<FindingType> active;
  for (auto f : label.findings())
    if (f != FindingType::NoFinding) active.push_back(f);
  const double k = static_cast<double>(active.size());
  for (std::size_t i = 0; i < active.size(); ++i) {
    const double jitter = size / 10.0;
    const double cy = size / 2.0 + uniform(rng, -jitter, jitter);
    const double cx = size * (i + 1.0) / (k + 1.0) + uniform(rng, -jitter, jitter) / k;
    const double r = size * uniform(rng, 0.18, 0.26) / std::sqrt(k);
    draw_motif(img, active[i], cy, cx, r, static_cast<float>(uniform(rng, 0.6, 1.0)));
  }
  return img;
}

struct Plan {
  FindingLabel label;
  FindingType primary = FindingType::NoFinding;
  FindingType secondary = FindingType::NoFinding;
};

inline FindingType draw_class(const SyntheticCorpusSpec& spec, Rng& rng) {
  if (spec.class_weights.empty())
    return spec.classes[std::uniform_int_distribution<std::size_t>(0, spec.classes.size() - 1)(rng)];
  std::discrete_distribution<std::size_t> d(spec.class_weights.begin(), spec.class_weights.end());
  return spec.classes[d(rng)];
}

inline FindingType draw_other(const SyntheticCorpusSpec& spec, FindingType not_this, Rng& rng) {
  FindingType f;
  do f = draw_class(spec, rng);
  while (f == not_this);
  return f;
}

inline Plan plan_record(const SyntheticCorpusSpec& spec, Rng& rng) {
  Plan p;
  if (uniform(rng, 0, 1) < spec.no_finding_rate) {
    p.label = FindingLabel::of({FindingType::NoFinding});
    return p;
  }
  p.primary = draw_class(spec, rng);
  p.label.set(p.primary);
  if (uniform(rng, 0, 1) < spec.multi_label_rate) {
    // Uniform over the remaining classes keeps rare weights from stalling the draw.
    std::vector<FindingType> rest;
    for (auto f : spec.classes)
      if (f != p.primary) rest.push_back(f);
    p.secondary = rest[std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng)];
    p.label.set(p.secondary);
  }
  return p;
}

/// Sentence whose labeler output equals the plan's label.
inline std::string write_sentence(const SyntheticCorpusSpec& spec, const Plan& p, Rng& rng) {
  if (p.label.test(FindingType::NoFinding)) {
    if (uniform(rng, 0, 1) < spec.negated_rate)
      return templates::negated_sentence(spec.classes[std::uniform_int_distribution<std::size_t>(
                                             0, spec.classes.size() - 1)(rng)],
                                         rng);
    return templates::affirmed_sentence(FindingType::NoFinding, rng);
  }
  if (p.secondary != FindingType::NoFinding) return templates::affirmed_pair_sentence(p.primary, p.secondary, rng);
  const double u = uniform(rng, 0, 1);
  if (u < spec.uncertain_rate && spec.uncertain == UncertaintyPolicy::Affirm)
    return templates::uncertain_sentence(p.primary, rng);
  if (u < spec.uncertain_rate + spec.mixed_rate)
    return templates::mixed_sentence(p.primary, draw_other(spec, p.primary, rng), rng);
  return templates::affirmed_sentence(p.primary, rng);
}

}  // namespace synth

/// Deterministic in (spec, seed). Each record uses its own random stream, so
/// record k does not depend on how many records precede it.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticCorpus out;
  const std::size_t n = std::max(spec.n_images, spec.n_sentences);
  for (std::size_t k = 0; k < n; ++k) {
    auto plan_rng = derive_rng(seed, Stream::Synthetic, 3 * k);
    const auto plan = synth::plan_record(spec, plan_rng);
    const std::string study = "s" + std::to_string(k);
    if (k < spec.n_images) {
      auto rng = derive_rng(seed, Stream::Synthetic, 3 * k + 1);
      out.images.records.push_back(
          {"img" + std::to_string(k), study, synth::render(plan.label, spec.image_size, spec.noise, rng), plan.label});
      out.image_truth.push_back(plan.label);
    }
    if (k < spec.n_sentences) {
      auto rng = derive_rng(seed, Stream::Synthetic, 3 * k + 2);
      out.texts.records.push_back({"txt" + std::to_string(k), study, synth::write_sentence(spec, plan, rng), plan.label});
      out.text_truth.push_back(plan.label);
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = text::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// `key = value` file. Keys: n_images, n_sentences, image_size, classes
/// (comma-separated finding names), class_weights, no_finding_rate,
/// multi_label_rate, negated_rate, uncertain_rate, mixed_rate, noise.
inline SyntheticCorpusSpec parse_synthetic_spec(std::istream& in) {
  SyntheticCorpusSpec spec;
  std::string line;
  int lineno = 0;
  auto real = [](const std::string& k, const std::string& v) { return detail::parse_number<double>(k, v); };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("spec line " + std::to_string(lineno) + ": expected key = value");
    const std::string k = text::trim(t.substr(0, eq)), v = text::trim(t.substr(eq + 1));
    if (k == "n_images") spec.n_images = detail::parse_number<std::size_t>(k, v);
    else if (k == "n_sentences") spec.n_sentences = detail::parse_number<std::size_t>(k, v);
    else if (k == "image_size") spec.image_size = detail::parse_number<int>(k, v);
    else if (k == "no_finding_rate") spec.no_finding_rate = real(k, v);
    else if (k == "multi_label_rate") spec.multi_label_rate = real(k, v);
    else if (k == "negated_rate") spec.negated_rate = real(k, v);
    else if (k == "uncertain_rate") spec.uncertain_rate = real(k, v);
    else if (k == "mixed_rate") spec.mixed_rate = real(k, v);
    else if (k == "noise") spec.noise = real(k, v);
    else if (k == "classes") {
      spec.classes.clear();
      for (const auto& name : detail::split_list(v)) {
        auto f = finding_from_name(name);
        if (!f) throw ConfigError("spec line " + std::to_string(lineno) + ": unknown finding '" + name + "'");
        spec.classes.push_back(*f);
      }
    } else if (k == "class_weights") {
      spec.class_weights.clear();
      for (const auto& w : detail::split_list(v)) spec.class_weights.push_back(real(k, w));
    } else {
      throw ConfigError("spec line " + std::to_string(lineno) + ": unknown key '" + k + "'");
    }
  }
  spec.validate();
  return spec;
}

inline SyntheticCorpusSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec", path);
  return parse_synthetic_spec(in);
}

}  // namespace medalign
