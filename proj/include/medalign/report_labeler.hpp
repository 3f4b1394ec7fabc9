#pragma once

// Rule-based finding extraction from radiology report text.
//
// A curated trigger lexicon maps phrases to the fourteen finding types.
// Each trigger occurrence becomes an EntityMention whose polarity is decided
// by NegEx-style cue search: a negation (or uncertainty) cue within `window`
// tokens before the trigger, or a post-cue phrase within `window` tokens
// after it, with scope-breaking words ("but", "however", ";") ending the
// search. Negation wins over uncertainty.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/errors.hpp"
#include "medalign/finding.hpp"

namespace medalign {

enum class Polarity { Affirmed, Negated, Uncertain };

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::Affirmed: return "affirmed";
    case Polarity::Negated: return "negated";
    case Polarity::Uncertain: return "uncertain";
  }
  return "affirmed";
}

enum class UncertaintyPolicy { Affirm, Ignore };

inline UncertaintyPolicy parse_uncertainty_policy(std::string_view s) {
  if (s == "affirm") return UncertaintyPolicy::Affirm;
  if (s == "ignore") return UncertaintyPolicy::Ignore;
  throw ConfigError("uncertainty policy must be 'affirm' or 'ignore', got '" + std::string(s) + "'");
}

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct EntityMention {
  FindingType finding = FindingType::NoFinding;
  CharSpan span;
  Polarity polarity = Polarity::Affirmed;
  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

namespace text {

struct Token {
  std::string text;  // lowercase
  CharSpan span;
};

// Alphanumeric runs, lowercased. ';' and ':' are kept as standalone tokens so
// they can act as scope breaks.
inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isalnum(c)) {
      std::size_t j = i;
      std::string word;
      while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[j]))));
        ++j;
      }
      out.push_back({std::move(word), {i, j}});
      i = j;
    } else {
      if (c == ';' || c == ':') out.push_back({std::string(1, static_cast<char>(c)), {i, i + 1}});
      ++i;
    }
  }
  return out;
}

inline std::vector<std::string> words_of(std::string_view phrase) {
  std::vector<std::string> out;
  for (auto& t : tokenize(phrase)) out.push_back(std::move(t.text));
  return out;
}

inline std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  for (const auto& w : words_of(phrase)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char ch : s) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace text

struct Lexicon {
  std::array<std::vector<std::string>, kNumFindings> triggers;
  std::vector<std::string> negation_pre;
  std::vector<std::string> negation_post;
  std::vector<std::string> uncertainty_pre;
  std::vector<std::string> uncertainty_post;
  std::vector<std::string> scope_breaks;
  // Lowercased dataset class name -> findings.
  std::map<std::string, std::vector<FindingType>> aliases;
  std::size_t window = 6;

  void validate() const {
    std::map<std::string, FindingType> seen;
    for (std::size_t i = 0; i < kNumFindings; ++i) {
      if (triggers[i].empty())
        throw ConfigError("lexicon has no trigger phrases for " + std::string(kFindingNames[i]));
      for (const auto& phrase : triggers[i]) {
        const auto norm = text::normalize_phrase(phrase);
        if (norm.empty()) throw ConfigError("lexicon trigger phrase is empty after normalization");
        auto [it, inserted] = seen.emplace(norm, finding_at(i));
        if (!inserted && it->second != finding_at(i))
          throw ConfigError("trigger phrase '" + norm + "' is assigned to both " +
                            std::string(name_of(it->second)) + " and " + std::string(kFindingNames[i]));
      }
    }
    for (auto name : kFindingNames) {
      if (!aliases.contains(text::normalize_phrase(name)))
        throw ConfigError("lexicon alias map is missing canonical class '" + std::string(name) + "'");
    }
    if (window == 0) throw ConfigError("lexicon window must be positive");
  }
};

/// Curated default lexicon. At least five trigger phrases per finding type.
inline Lexicon default_lexicon() {
  using F = FindingType;
  Lexicon lx;
  auto put = [&](F f, std::vector<std::string> phrases) { lx.triggers[index_of(f)] = std::move(phrases); };
  put(F::NoFinding, {"no finding", "no findings", "lungs are clear", "lungs are grossly clear", "clear lungs",
                     "no acute cardiopulmonary process", "no acute cardiopulmonary abnormality",
                     "no acute intrathoracic process", "normal chest radiograph", "no active disease"});
  put(F::EnlargedCardiomediastinum,
      {"enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening", "widening of the mediastinum",
       "cardiomediastinal silhouette is widened", "enlarged cardiomediastinal silhouette",
       "widened cardiomediastinal silhouette", "mediastinal enlargement"});
  put(F::Cardiomegaly, {"cardiomegaly", "heart is enlarged", "enlarged heart", "cardiac enlargement",
                        "cardiac silhouette is enlarged", "enlargement of the cardiac silhouette",
                        "enlarged cardiac silhouette", "heart size is enlarged"});
  put(F::LungOpacity, {"opacity", "opacities", "opacification", "airspace disease", "haziness", "ground glass",
                       "infiltrate", "infiltrates"});
  put(F::LungLesion, {"nodule", "nodules", "mass", "masses", "lesion", "lesions", "pulmonary nodule",
                      "cavitary lesion"});
  put(F::Edema, {"edema", "pulmonary edema", "interstitial edema", "vascular congestion",
                 "pulmonary vascular congestion", "fluid overload", "kerley b lines"});
  put(F::Consolidation, {"consolidation", "consolidations", "airspace consolidation", "consolidative opacity",
                         "consolidative process", "lobar consolidation"});
  put(F::Pneumonia, {"pneumonia", "pneumonias", "bronchopneumonia", "infectious process", "infection",
                     "aspiration"});
  put(F::Atelectasis, {"atelectasis", "atelectatic", "atelectatic changes", "collapse", "volume loss",
                       "subsegmental atelectasis"});
  put(F::Pneumothorax, {"pneumothorax", "pneumothoraces", "pneumothoraxes", "hydropneumothorax", "pleural air"});
  put(F::PleuralEffusion, {"pleural effusion", "pleural effusions", "effusion", "effusions", "pleural fluid",
                           "blunting", "hydrothorax"});
  put(F::PleuralOther, {"pleural thickening", "pleural plaque", "pleural plaques", "pleural scarring",
                        "fibrothorax", "pleural calcification", "pleural reaction"});
  put(F::Fracture, {"fracture", "fractures", "fractured", "rib fracture", "compression deformity",
                    "fracture deformity"});
  put(F::SupportDevices, {"endotracheal tube", "nasogastric tube", "enteric tube", "chest tube",
                          "central venous catheter", "catheter", "picc", "picc line", "pacemaker", "defibrillator",
                          "leads", "lines and tubes", "tube", "tubes", "sternotomy wires"});

  lx.negation_pre = {"no", "not", "without", "negative for", "free of", "no evidence of", "absence of",
                     "resolution of", "resolved", "clear of", "removal of"};
  lx.negation_post = {"not seen", "not identified", "not visualized", "not present", "not demonstrated",
                      "has resolved", "have resolved", "is absent", "are absent", "no longer", "been removed"};
  lx.uncertainty_pre = {"may", "might", "could", "possible", "possibly", "probable", "probably", "likely",
                        "suggest", "suggests", "suggestive of", "concerning for", "suspicious for", "versus", "vs",
                        "questionable", "cannot exclude", "can not exclude", "presumed", "question of",
                        "rule out"};
  lx.uncertainty_post = {"cannot be excluded", "can not be excluded", "not excluded", "is possible",
                         "is suspected", "versus", "vs", "may be present"};
  lx.scope_breaks = {"but", "however", "although", "though", "except", "which", "aside", "apart", ";"};

  for (std::size_t i = 0; i < kNumFindings; ++i)
    lx.aliases[text::normalize_phrase(kFindingNames[i])] = {finding_at(i)};
  auto alias = [&](const std::string& name, std::vector<F> fs) { lx.aliases[text::normalize_phrase(name)] = fs; };
  alias("normal", {F::NoFinding});
  alias("no findings", {F::NoFinding});
  alias("healthy", {F::NoFinding});
  alias("effusion", {F::PleuralEffusion});
  alias("pleural", {F::PleuralEffusion});
  alias("opacity", {F::LungOpacity});
  alias("lesion", {F::LungLesion});
  alias("nodule", {F::LungLesion});
  alias("mass", {F::LungLesion});
  alias("enlarged heart", {F::Cardiomegaly});
  alias("support device", {F::SupportDevices});
  return lx;
}

inline nlohmann::json lexicon_to_json(const Lexicon& lx) {
  nlohmann::json j;
  j["window"] = lx.window;
  for (std::size_t i = 0; i < kNumFindings; ++i) j["findings"][std::string(kFindingNames[i])] = lx.triggers[i];
  j["negation"] = {{"pre", lx.negation_pre}, {"post", lx.negation_post}};
  j["uncertainty"] = {{"pre", lx.uncertainty_pre}, {"post", lx.uncertainty_post}};
  j["scope_breaks"] = lx.scope_breaks;
  nlohmann::json aliases = nlohmann::json::object();
  for (const auto& [name, fs] : lx.aliases) {
    std::vector<std::string> names;
    for (auto f : fs) names.emplace_back(name_of(f));
    aliases[name] = names;
  }
  j["aliases"] = aliases;
  return j;
}

inline Lexicon lexicon_from_json(const nlohmann::json& j) {
  Lexicon lx;
  try {
    lx.window = j.value("window", std::size_t{6});
    for (const auto& [name, phrases] : j.at("findings").items()) {
      auto f = finding_from_name(name);
      if (!f) throw ConfigError("lexicon names unknown finding type '" + name + "'");
      lx.triggers[index_of(*f)] = phrases.get<std::vector<std::string>>();
    }
    lx.negation_pre = j.at("negation").at("pre").get<std::vector<std::string>>();
    lx.negation_post = j.at("negation").value("post", std::vector<std::string>{});
    lx.uncertainty_pre = j.at("uncertainty").at("pre").get<std::vector<std::string>>();
    lx.uncertainty_post = j.at("uncertainty").value("post", std::vector<std::string>{});
    lx.scope_breaks = j.value("scope_breaks", std::vector<std::string>{});
    for (const auto& [name, targets] : j.at("aliases").items()) {
      std::vector<FindingType> fs;
      for (const auto& t : targets) {
        auto f = finding_from_name(t.get<std::string>());
        if (!f) throw ConfigError("alias '" + name + "' targets unknown finding '" + t.get<std::string>() + "'");
        fs.push_back(*f);
      }
      lx.aliases[text::normalize_phrase(name)] = std::move(fs);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed lexicon: ") + e.what());
  }
  lx.validate();
  return lx;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("lexicon is not valid JSON (" + path + "): " + e.what());
  }
  return lexicon_from_json(j);
}

/// Splits report text into sentences on '.', '!' or '?' followed by
/// whitespace (or end of text) and on blank lines. Periods ending a guarded
/// abbreviation do not split. Sentences with fewer than three
/// whitespace-delimited words are dropped.
inline std::vector<std::string> split_report(std::string_view report) {
  static const std::set<std::string> kAbbreviations = {"dr.", "e.g.", "i.e.", "vs.", "approx.", "mr.",
                                                       "mrs.", "ms.", "st.", "cf.", "fig."};
  std::vector<std::string> out;
  auto flush = [&](std::size_t b, std::size_t e) {
    auto s = text::trim(report.substr(b, e - b));
    if (text::word_count(s) >= 3) out.push_back(std::move(s));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < report.size(); ++i) {
    const char c = report[i];
    const bool at_boundary =
        i + 1 == report.size() || std::isspace(static_cast<unsigned char>(report[i + 1])) != 0;
    if ((c == '.' || c == '!' || c == '?') && at_boundary) {
      if (c == '.') {
        std::size_t w = i;
        while (w > start && !std::isspace(static_cast<unsigned char>(report[w - 1]))) --w;
        std::string word(report.substr(w, i + 1 - w));
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        if (kAbbreviations.contains(word)) continue;
      }
      flush(start, i + 1);
      start = i + 1;
    } else if (c == '\n' && i + 1 < report.size() && report[i + 1] == '\n') {
      flush(start, i);
      start = i + 1;
    }
  }
  if (start < report.size()) flush(start, report.size());
  return out;
}

/// Matches the lexicon against single sentences. Holds the lexicon in
/// tokenized form; immutable after construction and safe to share.
class ReportLabeler {
public:
  explicit ReportLabeler(Lexicon lexicon = default_lexicon()) : lexicon_(std::move(lexicon)) {
    lexicon_.validate();
    for (std::size_t i = 0; i < kNumFindings; ++i)
      for (const auto& p : lexicon_.triggers[i]) triggers_.push_back({text::words_of(p), finding_at(i)});
    compile(lexicon_.negation_pre, negation_pre_);
    compile(lexicon_.negation_post, negation_post_);
    compile(lexicon_.uncertainty_pre, uncertainty_pre_);
    compile(lexicon_.uncertainty_post, uncertainty_post_);
    for (const auto& b : lexicon_.scope_breaks) {
      auto w = text::words_of(b);
      scope_breaks_.insert(w.empty() ? b : w.front());
    }
  }

  const Lexicon& lexicon() const noexcept { return lexicon_; }

  std::vector<EntityMention> tag_sentence(std::string_view sentence) const {
    const auto tokens = text::tokenize(sentence);

    struct Hit {
      std::size_t start, len;
      FindingType finding;
    };
    std::vector<Hit> hits;
    for (const auto& trig : triggers_)
      for (std::size_t p : occurrences(tokens, trig.words, 0, tokens.size()))
        hits.push_back({p, trig.words.size(), trig.finding});
    // Longest match wins; ties resolved left to right.
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
      return a.len != b.len ? a.len > b.len : a.start < b.start;
    });
    std::vector<bool> used(tokens.size(), false);
    std::vector<Hit> accepted;
    for (const auto& h : hits) {
      bool free = true;
      for (std::size_t k = h.start; k < h.start + h.len; ++k) free = free && !used[k];
      if (!free) continue;
      for (std::size_t k = h.start; k < h.start + h.len; ++k) used[k] = true;
      accepted.push_back(h);
    }
    std::sort(accepted.begin(), accepted.end(), [](const Hit& a, const Hit& b) { return a.start < b.start; });

    std::vector<EntityMention> out;
    out.reserve(accepted.size());
    for (const auto& h : accepted) {
      const std::size_t end = h.start + h.len;
      Polarity pol = Polarity::Affirmed;
      if (cue_before(tokens, h.start, negation_pre_) || cue_after(tokens, end, negation_post_))
        pol = Polarity::Negated;
      else if (cue_before(tokens, h.start, uncertainty_pre_) || cue_after(tokens, end, uncertainty_post_))
        pol = Polarity::Uncertain;
      out.push_back({h.finding, {tokens[h.start].span.begin, tokens[end - 1].span.end}, pol});
    }
    return out;
  }

  FindingLabel class_to_label(std::string_view class_name) const {
    FindingLabel label;
    std::size_t b = 0;
    while (b <= class_name.size()) {
      auto e = class_name.find('|', b);
      if (e == std::string_view::npos) e = class_name.size();
      const auto part = text::trim(class_name.substr(b, e - b));
      auto it = lexicon_.aliases.find(text::normalize_phrase(part));
      if (part.empty() || it == lexicon_.aliases.end()) throw UnmappedClassError(part.empty() ? std::string(class_name) : part);
      for (auto f : it->second) label.set(f);
      b = e + 1;
    }
    return label;
  }

private:
  struct Phrase {
    std::vector<std::string> words;
    FindingType finding;
  };

  static void compile(const std::vector<std::string>& phrases, std::vector<std::vector<std::string>>& out) {
    for (const auto& p : phrases) {
      auto w = text::words_of(p);
      if (!w.empty()) out.push_back(std::move(w));
    }
  }

  static std::vector<std::size_t> occurrences(const std::vector<text::Token>& tokens,
                                              const std::vector<std::string>& words, std::size_t lo,
                                              std::size_t hi) {
    std::vector<std::size_t> out;
    if (words.empty() || hi < lo + words.size()) return out;
    for (std::size_t p = lo; p + words.size() <= hi; ++p) {
      bool ok = true;
      for (std::size_t k = 0; k < words.size() && ok; ++k) ok = tokens[p + k].text == words[k];
      if (ok) out.push_back(p);
    }
    return out;
  }

  bool break_between(const std::vector<text::Token>& tokens, std::size_t lo, std::size_t hi) const {
    for (std::size_t k = lo; k < hi; ++k)
      if (scope_breaks_.contains(tokens[k].text)) return true;
    return false;
  }

  // A cue lying entirely inside the `window` tokens before `start`, with no
  // scope break between the cue and the trigger.
  bool cue_before(const std::vector<text::Token>& tokens, std::size_t start,
                  const std::vector<std::vector<std::string>>& cues) const {
    const std::size_t lo = start > lexicon_.window ? start - lexicon_.window : 0;
    for (const auto& cue : cues)
      for (std::size_t p : occurrences(tokens, cue, lo, start))
        if (!break_between(tokens, p + cue.size(), start)) return true;
    return false;
  }

  bool cue_after(const std::vector<text::Token>& tokens, std::size_t end,
                 const std::vector<std::vector<std::string>>& cues) const {
    const std::size_t hi = std::min(tokens.size(), end + lexicon_.window);
    for (const auto& cue : cues)
      for (std::size_t p : occurrences(tokens, cue, end, std::min(tokens.size(), hi + cue.size() - 1)))
        if (!break_between(tokens, end, p)) return true;
    return false;
  }

  Lexicon lexicon_;
  std::vector<Phrase> triggers_;
  std::vector<std::vector<std::string>> negation_pre_, negation_post_, uncertainty_pre_, uncertainty_post_;
  std::set<std::string> scope_breaks_;
};

/// Multi-hot label of a single sentence's mentions. Returns an all-zero
/// (unlabeled) label when there is no usable evidence.
inline FindingLabel sentence_to_label(const std::vector<EntityMention>& mentions,
                                      UncertaintyPolicy policy = UncertaintyPolicy::Affirm) {
  FindingLabel label;
  bool any_negated = false;
  for (const auto& m : mentions) {
    switch (m.polarity) {
      case Polarity::Affirmed: label.set(m.finding); break;
      case Polarity::Uncertain:
        if (policy == UncertaintyPolicy::Affirm) label.set(m.finding);
        break;
      case Polarity::Negated: any_negated = true; break;
    }
  }
  if (label.unlabeled() && any_negated) label.set(FindingType::NoFinding);
  return label;
}

inline std::vector<EntityMention> tag_sentence(std::string_view sentence, const ReportLabeler& labeler) {
  return labeler.tag_sentence(sentence);
}

inline FindingLabel class_to_label(std::string_view class_name, const ReportLabeler& labeler) {
  return labeler.class_to_label(class_name);
}

inline FindingLabel label_sentence(std::string_view sentence, const ReportLabeler& labeler,
                                   UncertaintyPolicy policy = UncertaintyPolicy::Affirm) {
  return sentence_to_label(labeler.tag_sentence(sentence), policy);
}

// Report-level label: union of sentence labels, with real findings
// overriding No Finding.
inline FindingLabel label_report(std::string_view report, const ReportLabeler& labeler,
                                 UncertaintyPolicy policy = UncertaintyPolicy::Affirm) {
  FindingLabel out;
  for (const auto& s : split_report(report))
    for (auto f : label_sentence(s, labeler, policy).findings()) out.set(f);
  return out;
}

}  // namespace medalign
