#pragma once

// Decoupled image/text pairing through label semantics.
//
// Images and sentences are sampled independently; every (image, text)
// combination in a batch is supervised by the cosine similarity of their
// multi-hot finding labels, turned into soft targets by a softmax over texts
// (image -> text) and over images (text -> image).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "medalign/errors.hpp"
#include "medalign/finding.hpp"
#include "medalign/image.hpp"
#include "medalign/numeric.hpp"
#include "medalign/report_labeler.hpp"
#include "medalign/rng.hpp"

namespace medalign {

struct ImageRecord {
  std::string id;
  std::string study_id;
  Image pixels;
  FindingLabel label;
};

struct SentenceRecord {
  std::string id;
  std::string study_id;
  std::string text;
  FindingLabel label;
};

inline void validate_record(const ImageRecord& r) {
  if (r.label.unlabeled()) throw DegenerateLabelError("image record '" + r.id + "' has no finding label");
}

inline void validate_record(const SentenceRecord& r) {
  if (r.label.unlabeled()) throw DegenerateLabelError("sentence record '" + r.id + "' has no finding label");
  if (text::word_count(r.text) < 3)
    throw DegenerateLabelError("sentence record '" + r.id + "' has fewer than 3 words");
}

struct ImagePool {
  std::vector<ImageRecord> records;
  std::size_t size() const noexcept { return records.size(); }
};

struct TextPool {
  std::vector<SentenceRecord> records;
  std::size_t size() const noexcept { return records.size(); }
};

/// Cosine similarity of two generic non-negative vectors.
template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0 || nb == 0) throw DegenerateLabelError("cosine similarity of a zero vector is undefined");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Knowledge-driven similarity of an image label and a text label, in [0, 1].
inline double semantic_similarity(const FindingLabel& image_label, const FindingLabel& text_label) {
  if (image_label.unlabeled() || text_label.unlabeled())
    throw DegenerateLabelError("semantic similarity requires labels with at least one set bit");
  const auto overlap = static_cast<double>(image_label.overlap(text_label));
  return overlap / (std::sqrt(static_cast<double>(image_label.count())) *
                    std::sqrt(static_cast<double>(text_label.count())));
}

/// Raw similarities and soft targets for one batch; rows index images, columns
/// index texts. `y_v2t` is row-stochastic, `y_t2v` column-stochastic.
struct SimilarityBundle {
  Matrix s;
  Matrix y_v2t;
  Matrix y_t2v;

  Eigen::Index size() const noexcept { return s.rows(); }

  /// Exact one-hot diagonal targets, the paired-data InfoNCE supervision.
  static SimilarityBundle hard_diagonal(Eigen::Index n) {
    Matrix eye = Matrix::Identity(n, n);
    return {eye, eye, eye};
  }

  /// Modalities swapped: texts become rows.
  SimilarityBundle transposed() const { return {s.transpose(), y_t2v.transpose(), y_v2t.transpose()}; }
};

inline Matrix similarity_matrix(std::span<const FindingLabel> image_labels, std::span<const FindingLabel> text_labels) {
  Matrix s(static_cast<Eigen::Index>(image_labels.size()), static_cast<Eigen::Index>(text_labels.size()));
  for (std::size_t i = 0; i < image_labels.size(); ++i)
    for (std::size_t j = 0; j < text_labels.size(); ++j)
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          semantic_similarity(image_labels[i], text_labels[j]);
  return s;
}

/// Soft targets from a raw similarity matrix. No temperature is applied.
inline SimilarityBundle soft_targets_from_similarity(Matrix s) {
  SimilarityBundle b;
  b.y_v2t = row_softmax(s);
  b.y_t2v = col_softmax(s);
  b.s = std::move(s);
  return b;
}

inline SimilarityBundle build_soft_targets(std::span<const FindingLabel> image_labels,
                                           std::span<const FindingLabel> text_labels) {
  if (image_labels.size() != text_labels.size())
    throw ShapeError("batch must hold as many images as texts");
  if (image_labels.size() < 2) throw InsufficientDataError("batch size must be at least 2");
  return soft_targets_from_similarity(similarity_matrix(image_labels, text_labels));
}

/// Indices of one batch into the image and text pools.
struct Batch {
  std::vector<std::size_t> images;
  std::vector<std::size_t> texts;
  std::size_t size() const noexcept { return images.size(); }
  friend bool operator==(const Batch&, const Batch&) = default;
};

inline SimilarityBundle build_soft_targets(const Batch& batch, const ImagePool& images, const TextPool& texts) {
  std::vector<FindingLabel> li, lt;
  for (auto i : batch.images) li.push_back(images.records.at(i).label);
  for (auto j : batch.texts) lt.push_back(texts.records.at(j).label);
  return build_soft_targets(li, lt);
}

/// `count` distinct indices from [0, pool), uniformly, via partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t count, Rng& rng) {
  if (count > pool)
    throw InsufficientDataError("cannot draw " + std::to_string(count) + " items from a pool of " +
                                std::to_string(pool));
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

/// Draws images and texts independently, each without replacement within
/// the batch. Pure function of its arguments.
inline Batch decoupled_sample(std::size_t image_pool_size, std::size_t text_pool_size, std::size_t batch_size,
                              std::uint64_t seed) {
  if (image_pool_size < batch_size || text_pool_size < batch_size)
    throw InsufficientDataError("pool smaller than batch size " + std::to_string(batch_size) + " (images " +
                                std::to_string(image_pool_size) + ", texts " + std::to_string(text_pool_size) +
                                ")");
  auto rng = derive_rng(seed, Stream::Sampler);
  Batch b;
  b.images = sample_without_replacement(image_pool_size, batch_size, rng);
  b.texts = sample_without_replacement(text_pool_size, batch_size, rng);
  return b;
}

inline Batch decoupled_sample(const ImagePool& images, const TextPool& texts, std::size_t batch_size,
                              std::uint64_t seed) {
  return decoupled_sample(images.size(), texts.size(), batch_size, seed);
}

/// Same index for image and text: the conventional paired batch. Requires
/// pools aligned index-for-index.
inline Batch paired_sample(std::size_t pool_size, std::size_t batch_size, std::uint64_t seed) {
  auto rng = derive_rng(seed, Stream::Sampler);
  Batch b;
  b.images = sample_without_replacement(pool_size, batch_size, rng);
  b.texts = b.images;
  return b;
}

/// Per-finding stratified draw: each slot picks a label group uniformly,
/// then an unused member of that group uniformly.
inline std::vector<std::size_t> stratified_indices(std::span<const FindingLabel> labels, std::size_t count, Rng& rng) {
  if (count > labels.size()) throw InsufficientDataError("stratified draw larger than pool");
  std::map<unsigned long, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i].to_ulong()].push_back(i);
  std::vector<std::vector<std::size_t>> members;
  for (auto& [key, v] : groups) members.push_back(std::move(v));
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    std::vector<std::size_t> live;
    for (std::size_t g = 0; g < members.size(); ++g)
      if (!members[g].empty()) live.push_back(g);
    auto& group = members[live[std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng)]];
    const auto k = std::uniform_int_distribution<std::size_t>(0, group.size() - 1)(rng);
    out.push_back(group[k]);
    group.erase(group.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

inline Batch stratified_sample(const ImagePool& images, const TextPool& texts, std::size_t batch_size,
                               std::uint64_t seed) {
  if (images.size() < batch_size || texts.size() < batch_size)
    throw InsufficientDataError("pool smaller than batch size " + std::to_string(batch_size));
  auto rng = derive_rng(seed, Stream::Sampler);
  std::vector<FindingLabel> li, lt;
  for (const auto& r : images.records) li.push_back(r.label);
  for (const auto& r : texts.records) lt.push_back(r.label);
  Batch b;
  b.images = stratified_indices(li, batch_size, rng);
  b.texts = stratified_indices(lt, batch_size, rng);
  return b;
}

/// Stateful sampler for sequential use by a single consumer.
class DecoupledSampler {
public:
  DecoupledSampler(std::size_t image_pool_size, std::size_t text_pool_size, std::uint64_t seed)
      : images_(image_pool_size), texts_(text_pool_size), rng_(derive_rng(seed, Stream::Sampler)) {}

  Batch next(std::size_t batch_size) {
    if (images_ < batch_size || texts_ < batch_size) throw InsufficientDataError("pool smaller than batch size");
    Batch b;
    b.images = sample_without_replacement(images_, batch_size, rng_);
    b.texts = sample_without_replacement(texts_, batch_size, rng_);
    return b;
  }

private:
  std::size_t images_, texts_;
  Rng rng_;
};

/// Number of image-text supervision pairs available from n paired samples,
/// m labeled images and h labeled sentences once pairs are decoupled.
constexpr std::uint64_t count_supervision_pairs(std::uint64_t n, std::uint64_t m, std::uint64_t h) noexcept {
  return (n + m) * (n + h);
}

}  // namespace medalign
