#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/checkpoint.hpp"
#include "medalign/model.hpp"
#include "medalign/optimizer.hpp"
#include "medalign/templates.hpp"

namespace medalign {

inline constexpr std::size_t kDefaultPromptsPerClass = 10;
inline constexpr std::size_t kDefaultRuns = 5;

// ---------------------------------------------------------------- prompts

struct PromptSet {
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> prompts;  // prompts[c] for classes[c]

  std::size_t size() const noexcept { return classes.size(); }

  void validate() const {
    if (classes.empty()) throw ConfigError("prompt set has no classes");
    if (prompts.size() != classes.size()) throw ConfigError("prompt set classes and prompt lists differ in length");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (prompts[c].empty()) throw ConfigError("class '" + classes[c] + "' has no prompts");
      for (const auto& p : prompts[c])
        if (text::trim(p).empty()) throw ConfigError("class '" + classes[c] + "' has an empty prompt");
    }
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (classes[c] == name) return c;
    throw ConfigError("class '" + name + "' is not covered by the prompt set");
  }
};

/// Slot-filled prompts (severity x phrase x location), `per_class` distinct
/// variants per class where the template space allows.
inline PromptSet generate_prompts(std::span<const FindingType> classes, std::size_t per_class, std::uint64_t seed) {
  PromptSet ps;
  auto rng = derive_rng(seed, Stream::Prompts);
  for (auto f : classes) {
    ps.classes.emplace_back(name_of(f));
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (std::size_t attempt = 0; out.size() < per_class && attempt < 50 * per_class; ++attempt) {
      auto p = f == FindingType::NoFinding ? templates::phrase(f, rng) : templates::described(f, rng);
      if (seen.insert(p).second) out.push_back(std::move(p));
    }
    ps.prompts.push_back(std::move(out));
  }
  ps.validate();
  return ps;
}

/// JSON: {"classes": [{"name": ..., "prompts": [...]}, ...]}
inline PromptSet prompts_from_json(const nlohmann::json& j) {
  PromptSet ps;
  try {
    for (const auto& c : j.at("classes")) {
      ps.classes.push_back(c.at("name").get<std::string>());
      ps.prompts.push_back(c.at("prompts").get<std::vector<std::string>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed prompt file: ") + e.what());
  }
  ps.validate();
  return ps;
}

inline nlohmann::json prompts_to_json(const PromptSet& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t c = 0; c < ps.size(); ++c) arr.push_back({{"name", ps.classes[c]}, {"prompts", ps.prompts[c]}});
  return {{"classes", arr}};
}

inline PromptSet load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("prompt file is not valid JSON (" + path + "): " + e.what());
  }
  return prompts_from_json(j);
}

// ---------------------------------------------------------------- reports

struct EvalReport {
  std::string task;
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_accuracy;
  double accuracy = 0;
  std::size_t total = 0;
  std::uint64_t seed = 0;
  std::uint64_t prompt_seed = 0;
  bool ensemble = false;
  std::string checkpoint_id;

  std::string to_kv(const std::string& prefix = "") const {
    std::ostringstream o;
    o.precision(17);
    o << prefix << "task = " << task << "\n";
    o << prefix << "checkpoint_id = " << checkpoint_id << "\n";
    o << prefix << "seed = " << seed << "\n";
    if (task == "zeroshot") {
      o << prefix << "prompt_seed = " << prompt_seed << "\n";
      o << prefix << "ensemble = " << (ensemble ? "true" : "false") << "\n";
    }
    o << prefix << "total = " << total << "\n";
    o << prefix << "accuracy = " << accuracy << "\n";
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::size_t n = 0;
      for (auto v : confusion[c]) n += v;
      o << prefix << "class." << c << ".name = " << classes[c] << "\n";
      o << prefix << "class." << c << ".count = " << n << "\n";
      o << prefix << "class." << c << ".accuracy = " << per_class_accuracy[c] << "\n";
      o << prefix << "confusion." << c << " =";
      for (auto v : confusion[c]) o << " " << v;
      o << "\n";
    }
    return o.str();
  }
};

/// Confusion-matrix report. Classes with no samples get per-class accuracy 0.
inline EvalReport make_report(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                              std::vector<std::string> classes) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
  EvalReport r;
  const std::size_t k = classes.size();
  r.classes = std::move(classes);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) throw RangeError("class index out of range in report");
    ++r.confusion[truth[i]][predicted[i]];
  }
  std::size_t hits = 0;
  r.per_class_accuracy.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t n = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    hits += r.confusion[c][c];
    if (n > 0) r.per_class_accuracy[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(n);
  }
  r.total = truth.size();
  r.accuracy = r.total ? static_cast<double>(hits) / static_cast<double>(r.total) : 0.0;
  return r;
}

// ---------------------------------------------------------------- zero-shot

/// Index of the highest-cosine class per row. Ties go to the lower class index.
inline std::vector<std::size_t> argmax_cosine(const Matrix& embeddings, const Matrix& class_embeddings) {
  Matrix cls = class_embeddings;
  for (Eigen::Index c = 0; c < cls.rows(); ++c) cls.row(c) /= cls.row(c).norm() + kNormEpsilon;
  const Matrix scores = embeddings * cls.transpose();
  std::vector<std::size_t> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

/// One representation per class: a single sampled prompt, or the
/// renormalized mean of all prompt embeddings.
inline Matrix class_embeddings(const DualEncoder& model, const PromptSet& prompts, bool ensemble, Rng& rng) {
  prompts.validate();
  Matrix out(static_cast<Eigen::Index>(prompts.size()), model.config().proj_dim);
  for (std::size_t c = 0; c < prompts.size(); ++c) {
    const auto& list = prompts.prompts[c];
    Vector v;
    if (ensemble) {
      v = Vector::Zero(model.config().proj_dim);
      for (const auto& p : list) v += model.embed_text(p);
      v = normalize(v / static_cast<double>(list.size()));
    } else {
      v = model.embed_text(list[std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng)]);
    }
    out.row(static_cast<Eigen::Index>(c)) = v;
  }
  return out;
}

/// Deterministic evaluation view of a set of images.
inline std::vector<Image> prepare_images(std::span<const Image> images, int resize_to, int crop_to) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(eval_transform(img, resize_to, crop_to));
  return out;
}

/// `images` are already in model input form; `truth[i]` indexes prompts.classes.
inline EvalReport zero_shot_classify(const DualEncoder& model, std::span<const Image> images,
                                     std::span<const std::size_t> truth, const PromptSet& prompts, bool ensemble,
                                     std::uint64_t prompt_seed) {
  prompts.validate();
  for (auto t : truth)
    if (t >= prompts.size()) throw ConfigError("a labeled class has no prompts");
  auto rng = derive_rng(prompt_seed, Stream::Prompts, 1);
  const Matrix cls = class_embeddings(model, prompts, ensemble, rng);
  const auto pred = argmax_cosine(model.embed_images(images), cls);
  EvalReport r = make_report(truth, pred, prompts.classes);
  r.task = "zeroshot";
  r.ensemble = ensemble;
  r.prompt_seed = prompt_seed;
  r.checkpoint_id = checkpoint_id(model);
  return r;
}

struct ZeroShotSummary {
  std::vector<EvalReport> runs;
  double mean = 0;
  double stddev = 0;  // sample standard deviation across runs

  std::string to_kv() const {
    std::ostringstream o;
    o.precision(17);
    o << "runs = " << runs.size() << "\n";
    o << "accuracy.mean = " << mean << "\n";
    o << "accuracy.std = " << stddev << "\n";
    for (std::size_t r = 0; r < runs.size(); ++r) o << runs[r].to_kv("run." + std::to_string(r) + ".");
    return o.str();
  }
};

inline ZeroShotSummary summarize(std::vector<EvalReport> runs) {
  ZeroShotSummary s;
  s.runs = std::move(runs);
  if (s.runs.empty()) return s;
  for (const auto& r : s.runs) s.mean += r.accuracy;
  s.mean /= static_cast<double>(s.runs.size());
  if (s.runs.size() > 1) {
    double ss = 0;
    for (const auto& r : s.runs) ss += (r.accuracy - s.mean) * (r.accuracy - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.runs.size() - 1));
  }
  return s;
}

/// Repeats zero-shot classification with prompt seeds seed, seed+1, ...;
/// `prompts_for(seed)` supplies the prompt set of each run.
inline ZeroShotSummary zero_shot_runs(const DualEncoder& model, std::span<const Image> images,
                                      std::span<const std::size_t> truth,
                                      const std::function<PromptSet(std::uint64_t)>& prompts_for, bool ensemble,
                                      std::size_t runs = kDefaultRuns, std::uint64_t seed = 0) {
  std::vector<EvalReport> out;
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t s = seed + r;
    out.push_back(zero_shot_classify(model, images, truth, prompts_for(s), ensemble, s));
    out.back().seed = seed;
  }
  return summarize(std::move(out));
}

// ---------------------------------------------------------------- linear probe

struct ProbeOptions {
  int epochs = 200;
  double learning_rate = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

/// Linear classifier on frozen unit image embeddings.
struct LinearHead {
  Parameter weight, bias;

  LinearHead(int in_dim, int classes, Rng& rng)
      : weight("probe.weight", classes, in_dim), bias("probe.bias", classes, 1, /*apply_decay=*/false) {
    init_normal(weight, 0.01, rng);
  }

  std::size_t parameter_count() const noexcept {
    return static_cast<std::size_t>(weight.value.size() + bias.value.size());
  }

  Matrix logits(const Matrix& features) const {
    return (features * weight.value.transpose()).rowwise() + bias.value.col(0).transpose();
  }

  /// Full-batch softmax cross-entropy; fills gradients and returns the loss.
  double loss_and_backward(const Matrix& features, std::span<const std::size_t> labels) {
    const Matrix p = row_softmax(logits(features));
    const auto n = static_cast<double>(features.rows());
    Matrix d = p;
    double loss = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
      loss -= std::log(std::max(p(i, y), kLogClampFloor));
      d(i, y) -= 1.0;
    }
    d /= n;
    weight.grad = d.transpose() * features;
    bias.grad = d.colwise().sum().transpose();
    return loss / n;
  }
};

/// Trains only a linear head on the frozen image tower and reports test
/// accuracy. Throws FrozenParameterDrift if the image tower changed.
inline EvalReport linear_probe(const DualEncoder& model, std::span<const Image> train_images,
                               std::span<const std::size_t> train_labels, std::span<const Image> test_images,
                               std::span<const std::size_t> test_labels, std::vector<std::string> classes,
                               const ProbeOptions& opt = {}) {
  if (train_images.size() != train_labels.size() || test_images.size() != test_labels.size())
    throw ShapeError("probe images and labels differ in count");
  if (train_images.empty()) throw InsufficientDataError("probe training split is empty");
  for (auto l : train_labels)
    if (l >= classes.size()) throw RangeError("probe label out of range");
  const std::uint32_t before = vision_hash(model);

  const Matrix train_x = model.embed_images(train_images);
  const Matrix test_x = model.embed_images(test_images);
  auto rng = derive_rng(opt.seed, Stream::Probe);
  LinearHead head(model.config().proj_dim, static_cast<int>(classes.size()), rng);
  AdamW adam(0.9, 0.999, 1e-8, opt.weight_decay);
  for (int e = 0; e < opt.epochs; ++e) {
    head.loss_and_backward(train_x, train_labels);
    adam.step({&head.weight, &head.bias}, opt.learning_rate);
  }

  if (vision_hash(model) != before)
    throw FrozenParameterDrift("image encoder parameters changed during linear probing");

  const Matrix scores = head.logits(test_x);
  std::vector<std::size_t> pred(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    pred[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  EvalReport r = make_report(test_labels, pred, std::move(classes));
  r.task = "finetune";
  r.seed = opt.seed;
  r.checkpoint_id = checkpoint_id(model);
  return r;
}

// ---------------------------------------------------------------- retrieval

inline const std::vector<std::size_t>& default_k_list() {
  static const std::vector<std::size_t> ks{1, 2, 5, 10};
  return ks;
}

struct RankedHit {
  std::size_t candidate;
  double score;
};

struct RetrievalResult {
  std::vector<std::vector<RankedHit>> ranked;  // per query, best first, truncated to `retained`
  std::vector<std::size_t> query_class;
  std::vector<std::size_t> candidate_class;
  std::vector<std::size_t> ks;
  std::vector<double> precision;  // precision[k] for ks[k], averaged over queries

  std::string to_kv() const {
    std::ostringstream o;
    o.precision(17);
    o << "queries = " << ranked.size() << "\n";
    o << "candidates = " << candidate_class.size() << "\n";
    for (std::size_t k = 0; k < ks.size(); ++k) o << "precision_at_" << ks[k] << " = " << precision[k] << "\n";
    return o.str();
  }
};

/// Ranks candidates by cosine (rows are unit vectors) with ties broken by
/// candidate index, and averages Precision@K over queries.
inline RetrievalResult retrieve_embeddings(const Matrix& queries, const Matrix& candidates,
                                           std::span<const std::size_t> query_class,
                                           std::span<const std::size_t> candidate_class,
                                           std::span<const std::size_t> ks, std::size_t retain = 10) {
  if (static_cast<std::size_t>(queries.rows()) != query_class.size() ||
      static_cast<std::size_t>(candidates.rows()) != candidate_class.size())
    throw ShapeError("retrieval embeddings and class labels differ in count");
  if (ks.empty()) throw RangeError("K list is empty");
  const std::size_t n = candidate_class.size();
  std::size_t max_k = 0;
  for (auto k : ks) {
    if (k == 0 || k > n)
      throw RangeError("K=" + std::to_string(k) + " is outside [1, " + std::to_string(n) + "] candidates");
    max_k = std::max(max_k, k);
  }
  const std::size_t keep = std::min(n, std::max(retain, max_k));

  RetrievalResult r;
  r.query_class.assign(query_class.begin(), query_class.end());
  r.candidate_class.assign(candidate_class.begin(), candidate_class.end());
  r.ks.assign(ks.begin(), ks.end());
  r.precision.assign(ks.size(), 0.0);
  const Matrix scores = queries * candidates.transpose();
  std::vector<std::size_t> order(n);
  for (Eigen::Index q = 0; q < scores.rows(); ++q) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores(q, static_cast<Eigen::Index>(a)) > scores(q, static_cast<Eigen::Index>(b));
    });
    for (std::size_t k = 0; k < ks.size(); ++k) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < ks[k]; ++i) hits += candidate_class[order[i]] == query_class[static_cast<std::size_t>(q)];
      r.precision[k] += static_cast<double>(hits) / static_cast<double>(ks[k]);
    }
    std::vector<RankedHit> hits;
    hits.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) hits.push_back({order[i], scores(q, static_cast<Eigen::Index>(order[i]))});
    r.ranked.push_back(std::move(hits));
  }
  if (!r.ranked.empty())
    for (auto& p : r.precision) p /= static_cast<double>(r.ranked.size());
  return r;
}

inline RetrievalResult retrieve(const DualEncoder& model, std::span<const Image> query_images,
                                std::span<const std::size_t> query_class, std::span<const std::string> candidate_texts,
                                std::span<const std::size_t> candidate_class,
                                std::span<const std::size_t> ks = default_k_list(), std::size_t retain = 10) {
  return retrieve_embeddings(model.embed_images(query_images), model.embed_texts(candidate_texts), query_class,
                             candidate_class, ks, retain);
}

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  std::string to_table() const {
    std::ostringstream o;
    o << "bin_lo\tbin_hi\tcount\n";
    for (std::size_t b = 0; b < counts.size(); ++b) o << edges[b] << "\t" << edges[b + 1] << "\t" << counts[b] << "\n";
    return o.str();
  }
};

/// Cosine scores of same-class hits among the top `top` retrieved texts of
/// every query of class `query_class`, binned uniformly over [lo, hi].
inline Histogram similarity_histogram(std::size_t query_class, const RetrievalResult& result, std::size_t bins,
                                      double lo = -1.0, double hi = 1.0, std::size_t top = 10) {
  if (bins == 0 || !(hi > lo)) throw RangeError("histogram needs bins > 0 and hi > lo");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / bins);
  for (std::size_t q = 0; q < result.ranked.size(); ++q) {
    if (result.query_class[q] != query_class) continue;
    const auto& hits = result.ranked[q];
    for (std::size_t i = 0; i < std::min(top, hits.size()); ++i) {
      if (result.candidate_class[hits[i].candidate] != query_class) continue;
      const double x = std::clamp(hits[i].score, lo, hi);
      auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
      ++h.counts[std::min(b, bins - 1)];
    }
  }
  return h;
}

// ---------------------------------------------------------------- export

/// Writes `rows x cols` float32 values row-major to `out_path` and a JSON
/// sidecar `out_path.json` with ids, labels, dimension and checkpoint id.
inline void export_embeddings(const Matrix& embeddings, std::span<const std::string> ids,
                              std::span<const std::string> labels, const std::string& checkpoint,
                              const std::string& modality, const fs::path& out_path) {
  if (static_cast<std::size_t>(embeddings.rows()) != ids.size() || ids.size() != labels.size())
    throw ShapeError("export: embeddings, ids and labels differ in count");
  std::vector<float> buf;
  buf.reserve(static_cast<std::size_t>(embeddings.size()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
    for (Eigen::Index j = 0; j < embeddings.cols(); ++j) buf.push_back(static_cast<float>(embeddings(i, j)));
  {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot open embedding file for writing", out_path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("embedding write failed", out_path.string());
  }
  const nlohmann::json side{{"rows", embeddings.rows()},
                            {"dim", embeddings.cols()},
                            {"dtype", "float32"},
                            {"layout", "row-major"},
                            {"modality", modality},
                            {"checkpoint_id", checkpoint},
                            {"ids", std::vector<std::string>(ids.begin(), ids.end())},
                            {"labels", std::vector<std::string>(labels.begin(), labels.end())}};
  const fs::path side_path = fs::path(out_path.string() + ".json");
  std::ofstream out(side_path);
  if (!out) throw IoError("cannot open sidecar for writing", side_path.string());
  out << side.dump(2) << "\n";
  if (!out) throw IoError("sidecar write failed", side_path.string());
}

}  // namespace medalign
