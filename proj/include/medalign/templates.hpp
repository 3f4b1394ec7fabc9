#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "medalign/finding.hpp"
#include "medalign/rng.hpp"

namespace medalign::templates {

// Noun phrases naming each finding, in FindingType order. Every phrase is a
// trigger of the default lexicon for its own finding and of no other.
inline const std::array<std::vector<std::string>, kNumFindings>& finding_phrases() {
  static const std::array<std::vector<std::string>, kNumFindings> p = {{
      {"the lungs are clear", "no acute cardiopulmonary process", "no acute cardiopulmonary abnormality",
       "normal chest radiograph", "no active disease"},
      {"widened mediastinum", "mediastinal widening", "enlarged cardiomediastinum", "mediastinal enlargement"},
      {"cardiomegaly", "cardiac enlargement", "enlarged cardiac silhouette", "enlarged heart"},
      {"opacity", "opacification", "airspace disease", "infiltrate"},
      {"pulmonary nodule", "nodule", "mass", "cavitary lesion"},
      {"pulmonary edema", "interstitial edema", "vascular congestion", "edema"},
      {"consolidation", "airspace consolidation", "lobar consolidation", "consolidative opacity"},
      {"pneumonia", "bronchopneumonia", "infectious process", "infection"},
      {"atelectasis", "subsegmental atelectasis", "atelectatic changes", "volume loss"},
      {"pneumothorax", "hydropneumothorax", "small apical pneumothorax"},
      {"pleural effusion", "effusion", "pleural fluid", "hydrothorax"},
      {"pleural thickening", "pleural plaque", "pleural scarring", "pleural calcification"},
      {"rib fracture", "fracture", "compression deformity", "fracture deformity"},
      {"endotracheal tube", "nasogastric tube", "chest tube", "central venous catheter", "pacemaker", "picc line"},
  }};
  return p;
}

inline const std::vector<std::string>& severities() {
  static const std::vector<std::string> s{"", "mild", "moderate", "severe", "small", "large", "minimal", "extensive"};
  return s;
}

inline const std::vector<std::string>& locations() {
  static const std::vector<std::string> s{"",
                                          "in the left lung",
                                          "in the right lung",
                                          "at the left base",
                                          "at the right base",
                                          "bilaterally",
                                          "in the upper zones"};
  return s;
}

namespace detail {

inline const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline std::string join(std::initializer_list<std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

}  // namespace detail

inline std::string phrase(FindingType f, Rng& rng) { return detail::pick(finding_phrases()[index_of(f)], rng); }

/// "<severity> <finding> <location>" with empty slots skipped.
inline std::string described(FindingType f, Rng& rng) {
  const std::string sev = detail::pick(severities(), rng);
  const std::string p = phrase(f, rng);
  const std::string loc = detail::pick(locations(), rng);
  return detail::join({sev, p, loc});
}

/// A sentence asserting `f`.
inline std::string affirmed_sentence(FindingType f, Rng& rng) {
  if (f == FindingType::NoFinding) return phrase(f, rng);
  static const std::vector<std::string> lead{"there is", "the radiograph shows", "findings are consistent with",
                                             "the study demonstrates", "imaging reveals"};
  return detail::pick(lead, rng) + " " + described(f, rng);
}

/// A sentence asserting two findings.
inline std::string affirmed_pair_sentence(FindingType a, FindingType b, Rng& rng) {
  return "there is " + described(a, rng) + " and " + phrase(b, rng);
}

/// A sentence denying `f` (labels as No Finding).
inline std::string negated_sentence(FindingType f, Rng& rng) {
  const std::string p = phrase(f, rng);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: return "no " + p + " is seen";
    case 1: return "there is no evidence of " + p;
    case 2: return "the study is negative for " + p;
    default: return "no definite " + p + " is identified";
  }
}

/// A hedged sentence about `f`.
inline std::string uncertain_sentence(FindingType f, Rng& rng) {
  const std::string d = described(f, rng);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: return "findings may represent " + d;
    case 1: return "appearance is suspicious for " + d;
    case 2: return "possible " + d;
    default: return "the appearance could reflect " + d;
  }
}

/// Affirms `a` and denies `b` in one sentence.
inline std::string mixed_sentence(FindingType a, FindingType b, Rng& rng) {
  return "there is " + described(a, rng) + " without " + phrase(b, rng);
}

}  // namespace medalign::templates
