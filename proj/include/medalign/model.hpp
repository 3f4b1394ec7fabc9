#pragma once

#include <span>
#include <string>
#include <vector>

#include "medalign/encoders.hpp"
#include "medalign/matching_loss.hpp"

namespace medalign {

/// Vision and text encoders, their projection heads, and the learnable
/// temperature.
class DualEncoder {
public:
  DualEncoder() = default;
  DualEncoder(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed, double tau_init = kInitialTemperature)
      : cfg_(cfg), log_tau_("temperature.log_tau", 1, 1, /*apply_decay=*/false) {
    cfg.validate();
    auto rng = derive_rng(seed, Stream::Init);
    vision_ = VisionEncoder(cfg, rng);
    text_ = TextEncoder(cfg, std::move(vocab), rng);
    vision_head_ = ProjectionHead("vision.head", cfg.vision_dim, cfg.proj_dim, rng);
    text_head_ = ProjectionHead("text.head", cfg.text_dim, cfg.proj_dim, rng);
    log_tau_.value(0, 0) = Temperature(tau_init).log_tau();
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const Vocabulary& vocabulary() const noexcept { return text_.vocabulary(); }
  Temperature temperature() const { return Temperature::from_log(log_tau_.value(0, 0)); }
  void clamp_temperature(double max_tau = kMaxTemperature) {
    auto t = temperature();
    t.clamp_upper(max_tau);
    log_tau_.value(0, 0) = t.log_tau();
  }

  const VisionEncoder& vision() const noexcept { return vision_; }
  const TextEncoder& text() const noexcept { return text_; }
  const ProjectionHead& vision_head() const noexcept { return vision_head_; }
  const ProjectionHead& text_head() const noexcept { return text_head_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto* p : vision_.parameters()) out.push_back(p);
    for (auto* p : vision_head_.parameters()) out.push_back(p);
    for (auto* p : text_.parameters()) out.push_back(p);
    for (auto* p : text_head_.parameters()) out.push_back(p);
    out.push_back(&log_tau_);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<DualEncoder*>(this)->parameters()) out.push_back(p);
    return out;
  }

  /// Parameters of the frozen image tower used by linear probing.
  std::vector<const Parameter*> vision_parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : vision_.parameters()) out.push_back(p);
    for (auto* p : vision_head_.parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  Vector embed_image(const Image& img) const { return normalize(vision_head_.forward(vision_.encode(img))); }
  Vector embed_text(std::string_view s) const { return normalize(text_head_.forward(text_.encode(s))); }

  /// Unit embeddings, one row per input.
  Matrix embed_images(std::span<const Image> images) const {
    Matrix out(static_cast<Eigen::Index>(images.size()), cfg_.proj_dim);
    for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_image(images[i]);
    return out;
  }
  Matrix embed_texts(std::span<const std::string> texts) const {
    Matrix out(static_cast<Eigen::Index>(texts.size()), cfg_.proj_dim);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_text(texts[i]);
    return out;
  }

  /// Forward + backward of the matching loss for one batch. Gradients are
  /// accumulated into the parameters' `grad` (call zero_grad() first).
  LossReport loss_and_backward(std::span<const Image> images, std::span<const std::string> texts,
                               const SimilarityBundle& targets) {
    const auto n = static_cast<Eigen::Index>(images.size());
    if (static_cast<Eigen::Index>(texts.size()) != n || targets.size() != n)
      throw ShapeError("loss_and_backward: batch sizes disagree");

    std::vector<VisionEncoder::Cache> vc(images.size());
    std::vector<TextEncoder::Cache> tc(texts.size());
    Matrix vp(n, cfg_.proj_dim), tp(n, cfg_.proj_dim), vu(n, cfg_.proj_dim), tu(n, cfg_.proj_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      vision_.forward(images[static_cast<std::size_t>(i)], vc[static_cast<std::size_t>(i)]);
      const Vector p = vision_head_.forward(vc[static_cast<std::size_t>(i)].out);
      vp.row(i) = p;
      vu.row(i) = normalize(p);
      text_.forward(texts[static_cast<std::size_t>(i)], tc[static_cast<std::size_t>(i)]);
      const Vector q = text_head_.forward(tc[static_cast<std::size_t>(i)].out);
      tp.row(i) = q;
      tu.row(i) = normalize(q);
    }

    LossGradient g;
    const LossReport report = semantic_matching_loss(vu, tu, targets, temperature(), g);

    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Vector dvp = normalize_backward(vp.row(i).transpose(), g.d_v_tilde.row(i).transpose());
      vision_.backward(vc[k], vision_head_.backward(vc[k].out, dvp));
      const Vector dtp = normalize_backward(tp.row(i).transpose(), g.d_t_tilde.row(i).transpose());
      text_.backward(tc[k], text_head_.backward(tc[k].out, dtp));
    }
    log_tau_.grad(0, 0) += g.d_log_tau;
    return report;
  }

  /// Loss only (no gradient side effects).
  LossReport loss(std::span<const Image> images, std::span<const std::string> texts,
                  const SimilarityBundle& targets) const {
    return semantic_matching_loss(embed_images(images), embed_texts(texts), targets, temperature());
  }

private:
  ModelConfig cfg_;
  VisionEncoder vision_;
  TextEncoder text_;
  ProjectionHead vision_head_, text_head_;
  Parameter log_tau_;
};

}  // namespace medalign
