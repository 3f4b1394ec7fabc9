#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/checksum.hpp"
#include "medalign/report_labeler.hpp"
#include "medalign/semantic_pairing.hpp"

// On-disk dataset layout (a directory):
//   images.json   {"height","width","channels","records":[{"id","study_id","class"?}]}
//   images.f32    float32 pixels, record-major, each record H*W*C interleaved
//   texts.jsonl   {"id","study_id","text","class"?} per line
//   reports.jsonl {"id","study_id","text"} per line (one report each)
//   labels.csv    id,class_name  (optional override of image classes)

namespace medalign {

namespace fs = std::filesystem;

struct RawImage {
  std::string id;
  std::string study_id;
  std::string class_name;  // empty when absent
  Image pixels;
};

struct RawText {
  std::string id;
  std::string study_id;
  std::string text;
  std::string class_name;
};

struct IngestOptions {
  std::size_t max_malformed = 10;
  UncertaintyPolicy uncertain = UncertaintyPolicy::Affirm;
};

struct IngestResult {
  ImagePool images;
  TextPool texts;
  std::size_t dropped_unlabeled_images = 0;
  std::size_t dropped_unlabeled_texts = 0;
  std::size_t malformed = 0;
  std::vector<std::string> warnings;
};

namespace detail {

class MalformedCounter {
public:
  MalformedCounter(IngestResult& r, std::size_t limit) : r_(r), limit_(limit) {}
  void skip(const std::string& where, const std::string& why) {
    ++r_.malformed;
    r_.warnings.push_back("skipped malformed row " + where + ": " + why);
    if (r_.malformed > limit_)
      throw FormatError("too many malformed rows (" + std::to_string(r_.malformed) + " > " + std::to_string(limit_) +
                        "); last: " + where + ": " + why);
  }

private:
  IngestResult& r_;
  std::size_t limit_;
};

inline std::string json_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw FormatError(std::string("field '") + key + "' must be a string");
}

}  // namespace detail

inline void write_images(const fs::path& dir, const std::vector<RawImage>& images) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + ec.message(), dir.string());
  nlohmann::json meta{{"height", 0}, {"width", 0}, {"channels", 0}, {"records", nlohmann::json::array()}};
  if (!images.empty()) {
    meta["height"] = images[0].pixels.height;
    meta["width"] = images[0].pixels.width;
    meta["channels"] = images[0].pixels.channels;
  }
  std::ofstream bin(dir / "images.f32", std::ios::binary);
  if (!bin) throw IoError("cannot write", (dir / "images.f32").string());
  for (const auto& r : images) {
    if (r.pixels.height != images[0].pixels.height || r.pixels.width != images[0].pixels.width ||
        r.pixels.channels != images[0].pixels.channels)
      throw ShapeError("all images of a dataset must share one shape");
    nlohmann::json rec{{"id", r.id}, {"study_id", r.study_id}};
    if (!r.class_name.empty()) rec["class"] = r.class_name;
    meta["records"].push_back(std::move(rec));
    bin.write(reinterpret_cast<const char*>(r.pixels.pixels.data()),
              static_cast<std::streamsize>(r.pixels.pixels.size() * sizeof(float)));
  }
  if (!bin) throw IoError("write failed", (dir / "images.f32").string());
  std::ofstream js(dir / "images.json");
  js << meta.dump(1) << "\n";
  if (!js) throw IoError("write failed", (dir / "images.json").string());
}

/// Reads images.json + images.f32. Records whose metadata is malformed are
/// skipped (counted in `result`); a pixel file of the wrong size is fatal.
inline std::vector<RawImage> read_images(const fs::path& dir, IngestResult& result, std::size_t max_malformed) {
  const fs::path meta_path = dir / "images.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open", meta_path.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("images.json is not valid JSON: " + std::string(e.what()));
  }
  std::vector<RawImage> out;
  const auto& records = meta.value("records", nlohmann::json::array());
  if (records.empty()) {
    result.warnings.push_back("no image records in " + meta_path.string());
    return out;
  }
  const int h = meta.at("height"), w = meta.at("width"), c = meta.at("channels");
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  std::ifstream bin(dir / "images.f32", std::ios::binary | std::ios::ate);
  if (!bin) throw IoError("cannot open", (dir / "images.f32").string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != records.size() * per * sizeof(float))
    throw FormatError("images.f32 holds " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(records.size() * per * sizeof(float)));
  bin.seekg(0);
  detail::MalformedCounter bad(result, max_malformed);
  for (std::size_t k = 0; k < records.size(); ++k) {
    RawImage r;
    r.pixels = Image(h, w, c);
    bin.read(reinterpret_cast<char*>(r.pixels.pixels.data()), static_cast<std::streamsize>(per * sizeof(float)));
    try {
      r.id = detail::json_string(records[k], "id");
      r.study_id = detail::json_string(records[k], "study_id");
      r.class_name = detail::json_string(records[k], "class");
      if (r.id.empty()) throw FormatError("missing id");
    } catch (const Error& e) {
      bad.skip("images.json#" + std::to_string(k), e.what());
      continue;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_texts(const fs::path& path, const std::vector<RawText>& texts) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write", path.string());
  for (const auto& t : texts) {
    nlohmann::json j{{"id", t.id}, {"study_id", t.study_id}, {"text", t.text}};
    if (!t.class_name.empty()) j["class"] = t.class_name;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed", path.string());
}

/// JSONL rows with id, optional study_id, text and optional class.
inline std::vector<RawText> read_texts(const fs::path& path, IngestResult& result, std::size_t max_malformed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open", path.string());
  detail::MalformedCounter bad(result, max_malformed);
  std::vector<RawText> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RawText t;
      t.id = detail::json_string(j, "id");
      t.study_id = detail::json_string(j, "study_id");
      t.text = detail::json_string(j, "text");
      t.class_name = detail::json_string(j, "class");
      if (t.id.empty()) t.id = path.filename().string() + ":" + std::to_string(lineno);
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      bad.skip(path.filename().string() + ":" + std::to_string(lineno), e.what());
    } catch (const Error& e) {
      bad.skip(path.filename().string() + ":" + std::to_string(lineno), e.what());
    }
  }
  if (out.empty() && result.malformed == 0) result.warnings.push_back("no rows in " + path.string());
  return out;
}

/// `id,class_name` rows; a header row starting with "id," is skipped.
/// Class names may contain commas only if the remainder of the line is used.
inline std::vector<std::pair<std::string, std::string>> read_label_csv(const fs::path& path, IngestResult& result,
                                                                       std::size_t max_malformed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open", path.string());
  detail::MalformedCounter bad(result, max_malformed);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (lineno == 1 && line.rfind("id,", 0) == 0) continue;
    if (comma == std::string::npos) {
      bad.skip(path.filename().string() + ":" + std::to_string(lineno), "expected id,class_name");
      continue;
    }
    out.emplace_back(text::trim(line.substr(0, comma)), text::trim(line.substr(comma + 1)));
  }
  if (out.empty()) result.warnings.push_back("no rows in " + path.string());
  return out;
}

// ---------------------------------------------------------------- adapters

namespace detail {

inline void add_image(IngestResult& r, RawImage&& raw, const FindingLabel& label) {
  if (label.unlabeled()) {
    ++r.dropped_unlabeled_images;
    return;
  }
  r.images.records.push_back({std::move(raw.id), std::move(raw.study_id), std::move(raw.pixels), label});
}

inline void add_sentence(IngestResult& r, std::string id, std::string study, std::string sentence,
                         const FindingLabel& label) {
  if (label.unlabeled() || text::word_count(sentence) < 3) {
    ++r.dropped_unlabeled_texts;
    return;
  }
  r.texts.records.push_back({std::move(id), std::move(study), std::move(sentence), label});
}

inline FindingLabel class_label_or_skip(const ReportLabeler& labeler, const std::string& class_name,
                                        MalformedCounter& bad, const std::string& where) {
  if (class_name.empty()) return {};
  try {
    return labeler.class_to_label(class_name);
  } catch (const UnmappedClassError& e) {
    bad.skip(where, e.what());
    return {};
  }
}

inline void ingest_reports(IngestResult& r, const std::vector<RawText>& reports, const ReportLabeler& labeler,
                           UncertaintyPolicy policy, std::map<std::string, FindingLabel>* study_labels) {
  for (const auto& rep : reports) {
    const auto sentences = split_report(rep.text);
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      const FindingLabel l = label_sentence(sentences[s], labeler, policy);
      if (study_labels && !rep.study_id.empty()) {
        auto& agg = (*study_labels)[rep.study_id];
        for (auto f : l.findings()) agg.set(f);
      }
      add_sentence(r, rep.id + "#" + std::to_string(s), rep.study_id, sentences[s], l);
    }
  }
}

}  // namespace detail

inline const std::vector<std::string>& adapter_names() {
  static const std::vector<std::string> names{"paired-report", "image-label", "text-only", "synthetic"};
  return names;
}

/// Loads a dataset into labeled pools. Unlabeled records are dropped and
/// counted; malformed rows are skipped with a warning until
/// `opt.max_malformed` is exceeded.
inline IngestResult ingest_dataset(const std::string& adapter, const fs::path& path,
                                   const ReportLabeler& labeler = ReportLabeler(), const IngestOptions& opt = {}) {
  if (!fs::exists(path)) throw IoError("dataset path does not exist", path.string());
  IngestResult r;
  detail::MalformedCounter bad(r, opt.max_malformed);

  if (adapter == "image-label") {
    auto images = read_images(path, r, opt.max_malformed);
    std::map<std::string, std::string> override_class;
    if (fs::exists(path / "labels.csv"))
      for (auto& [id, cls] : read_label_csv(path / "labels.csv", r, opt.max_malformed)) override_class[id] = cls;
    for (auto& img : images) {
      if (auto it = override_class.find(img.id); it != override_class.end()) img.class_name = it->second;
      const auto l = detail::class_label_or_skip(labeler, img.class_name, bad, "image " + img.id);
      detail::add_image(r, std::move(img), l);
    }
  } else if (adapter == "synthetic") {
    for (auto& img : read_images(path, r, opt.max_malformed)) {
      const auto l = detail::class_label_or_skip(labeler, img.class_name, bad, "image " + img.id);
      detail::add_image(r, std::move(img), l);
    }
    for (auto& t : read_texts(path / "texts.jsonl", r, opt.max_malformed))
      detail::add_sentence(r, t.id, t.study_id, t.text, label_sentence(t.text, labeler, opt.uncertain));
  } else if (adapter == "paired-report") {
    // Sentences go to the text pool individually; each image takes the
    // union of the labels of its study's report sentences.
    const auto reports = read_texts(path / "reports.jsonl", r, opt.max_malformed);
    std::map<std::string, FindingLabel> study_labels;
    detail::ingest_reports(r, reports, labeler, opt.uncertain, &study_labels);
    for (auto& img : read_images(path, r, opt.max_malformed)) {
      auto it = study_labels.find(img.study_id);
      detail::add_image(r, std::move(img), it == study_labels.end() ? FindingLabel{} : it->second);
    }
  } else if (adapter == "text-only") {
    const fs::path file = fs::is_directory(path) ? path / "reports.jsonl" : path;
    detail::ingest_reports(r, read_texts(file, r, opt.max_malformed), labeler, opt.uncertain, nullptr);
  } else {
    throw ConfigError("unknown adapter '" + adapter + "' (expected paired-report, image-label, text-only or synthetic)");
  }
  if (r.dropped_unlabeled_images || r.dropped_unlabeled_texts)
    r.warnings.push_back("dropped unlabeled records: " + std::to_string(r.dropped_unlabeled_images) + " images, " +
                         std::to_string(r.dropped_unlabeled_texts) + " texts");
  if (r.images.size() == 0 && r.texts.size() == 0) r.warnings.push_back("dataset produced empty pools");
  return r;
}

// ---------------------------------------------------------------- matrices

struct LabeledId {
  std::string id;
  FindingLabel label;
};

/// Rows of `{"id": ..., "label": [14 x 0/1]}`, as written by extract-labels.
inline std::vector<LabeledId> read_label_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open", path.string());
  std::vector<LabeledId> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto bits = j.at("label").get<std::vector<int>>();
      out.push_back({detail::json_string(j, "id"), FindingLabel::from_bits(bits)});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Pool-level similarity matrix as row-major float32 plus a JSON sidecar
/// (`out.json`) with dimensions, ids and the crc32 of the matrix bytes.
inline void write_similarity_matrix(const fs::path& out, const std::vector<LabeledId>& images,
                                    const std::vector<LabeledId>& texts) {
  std::vector<float> buf;
  buf.reserve(images.size() * texts.size());
  for (const auto& i : images)
    for (const auto& t : texts) buf.push_back(static_cast<float>(semantic_similarity(i.label, t.label)));
  {
    std::ofstream bin(out, std::ios::binary);
    if (!bin) throw IoError("cannot write", out.string());
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) throw IoError("write failed", out.string());
  }
  nlohmann::json side{{"rows", images.size()},
                      {"cols", texts.size()},
                      {"dtype", "float32"},
                      {"layout", "row-major"},
                      {"crc32", hex32(crc32_of_values(std::span<const float>(buf)))},
                      {"image_ids", nlohmann::json::array()},
                      {"text_ids", nlohmann::json::array()}};
  for (const auto& i : images) side["image_ids"].push_back(i.id);
  for (const auto& t : texts) side["text_ids"].push_back(t.id);
  const fs::path side_path(out.string() + ".json");
  std::ofstream js(side_path);
  if (!js) throw IoError("cannot write", side_path.string());
  js << side.dump(1) << "\n";
}

}  // namespace medalign
