#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/augment.hpp"
#include "medalign/checkpoint.hpp"
#include "medalign/config.hpp"
#include "medalign/model.hpp"
#include "medalign/optimizer.hpp"
#include "medalign/semantic_pairing.hpp"

namespace medalign {

struct StepMetrics {
  std::uint64_t step = 0;
  double loss_v2t = 0, loss_t2v = 0, loss_total = 0, tau = 0, lr = 0;
  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

/// One metrics-stream record; doubles are written in shortest round-trip form.
inline std::string to_json_line(const StepMetrics& m) {
  nlohmann::json j{{"step", m.step},
                   {"loss_v2t", m.loss_v2t},
                   {"loss_t2v", m.loss_t2v},
                   {"loss_total", m.loss_total},
                   {"tau", m.tau},
                   {"lr", m.lr}};
  return j.dump();
}

inline std::uint64_t steps_per_epoch(std::size_t image_pool, std::size_t text_pool, int batch_size) {
  const std::size_t n = std::max(image_pool, text_pool);
  return (n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

/// Single-owner training loop. Every random draw at step k comes from
/// streams derived from (seed, k), so the loop can stop after any step,
/// save, and resume to exactly the same trajectory.
class Trainer {
public:
  Trainer(const TrainConfig& cfg, const ImagePool& images, const TextPool& texts)
      : cfg_(cfg), images_(&images), texts_(&texts) {
    cfg_.validate();
    check_pools();
    std::vector<std::string> corpus;
    corpus.reserve(texts.size());
    for (const auto& r : texts.records) corpus.push_back(r.text);
    model_ = DualEncoder(cfg_.model_config(), Vocabulary::build(corpus), cfg_.seed, cfg_.tau_init);
    optimizer_ = AdamW(cfg_.beta1, cfg_.beta2, cfg_.adam_epsilon, cfg_.weight_decay);
    init_schedule();
  }

  /// Resumes from a checkpoint written by this trainer.
  Trainer(Checkpoint ck, const ImagePool& images, const TextPool& texts)
      : cfg_(ck.config), images_(&images), texts_(&texts), model_(std::move(ck.model)), step_(ck.step) {
    cfg_.validate();
    check_pools();
    optimizer_ = ck.optimizer ? *ck.optimizer : AdamW(cfg_.beta1, cfg_.beta2, cfg_.adam_epsilon, cfg_.weight_decay);
    init_schedule();
  }

  void set_metrics_stream(std::ostream* out) { metrics_ = out; }
  void set_output_dir(fs::path dir) { out_dir_ = std::move(dir); }

  const TrainConfig& config() const noexcept { return cfg_; }
  const DualEncoder& model() const noexcept { return model_; }
  DualEncoder& model() noexcept { return model_; }
  const AdamW& optimizer() const noexcept { return optimizer_; }
  std::uint64_t current_step() const noexcept { return step_; }
  std::uint64_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::uint64_t total_steps() const noexcept { return steps_per_epoch_ * static_cast<std::uint64_t>(cfg_.epochs); }
  const WarmupSchedule& schedule() const noexcept { return schedule_; }
  bool done() const noexcept { return step_ >= total_steps(); }
  const std::vector<StepMetrics>& history() const noexcept { return history_; }

  Batch batch_at(std::uint64_t k) const {
    auto rng = derive_rng(cfg_.seed, Stream::Sampler, k);
    const auto n = static_cast<std::size_t>(cfg_.batch_size);
    Batch b;
    b.images = sample_without_replacement(images_->size(), n, rng);
    b.texts = cfg_.sampler == SamplerKind::Paired ? b.images : sample_without_replacement(texts_->size(), n, rng);
    return b;
  }

  StepMetrics step() {
    const std::uint64_t k = step_;
    const Batch batch = batch_at(k);
    auto aug_rng = derive_rng(cfg_.seed, Stream::Augment, k);
    std::vector<Image> imgs;
    std::vector<std::string> txts;
    imgs.reserve(batch.size());
    txts.reserve(batch.size());
    for (auto i : batch.images) imgs.push_back(augment(images_->records[i].pixels, cfg_.augment, aug_rng));
    for (auto j : batch.texts) txts.push_back(texts_->records[j].text);
    const SimilarityBundle targets = cfg_.loss == LossKind::Semantic
                                         ? build_soft_targets(batch, *images_, *texts_)
                                         : SimilarityBundle::hard_diagonal(static_cast<Eigen::Index>(batch.size()));

    StepMetrics m;
    m.step = k;
    m.tau = model_.temperature().tau();
    m.lr = schedule_(k);
    model_.zero_grad();
    try {
      const LossReport r = model_.loss_and_backward(imgs, txts, targets);
      m.loss_v2t = r.l_v2t;
      m.loss_t2v = r.l_t2v;
      m.loss_total = r.total;
      if (!std::isfinite(r.total)) throw NumericalError("non-finite loss");
    } catch (const NumericalError& e) {
      abort_step(k, batch, txts, e.what());
    } catch (const ContractViolation& e) {
      // Non-finite weights or pixels surface as non-unit embeddings.
      if (finite(imgs)) throw;
      abort_step(k, batch, txts, e.what());
    }
    optimizer_.step(model_.parameters(), m.lr);
    model_.clamp_temperature(cfg_.max_tau);
    ++step_;

    history_.push_back(m);
    if (metrics_) *metrics_ << to_json_line(m) << "\n";
    if (!out_dir_.empty() && cfg_.checkpoint_every > 0 && step_ % steps_per_epoch_ == 0) {
      const auto epoch = static_cast<int>(step_ / steps_per_epoch_);
      if (epoch % cfg_.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch-%03d", epoch);
        save(out_dir_ / name);
      }
    }
    return m;
  }

  /// Runs to the end of the configured schedule and writes the final
  /// checkpoint to the output directory (if set).
  void run() {
    while (!done()) step();
    if (!out_dir_.empty()) save(out_dir_);
  }

  void save(const fs::path& dir) const {
    save_checkpoint(dir, model_, cfg_, step_, static_cast<int>(step_ / steps_per_epoch_), &optimizer_);
  }

private:
  void check_pools() const {
    if (images_->size() == 0 || texts_->size() == 0) throw InsufficientDataError("training pools must be non-empty");
    const auto n = static_cast<std::size_t>(cfg_.batch_size);
    if (images_->size() < n || texts_->size() < n)
      throw InsufficientDataError("pools (" + std::to_string(images_->size()) + " images, " +
                                  std::to_string(texts_->size()) + " texts) smaller than batch size " +
                                  std::to_string(n));
    if (cfg_.sampler == SamplerKind::Paired && images_->size() != texts_->size())
      throw ConfigError("paired sampling needs image and text pools of equal size");
    for (const auto& r : images_->records)
      if (r.pixels.channels != cfg_.model.channels)
        throw ShapeError("image '" + r.id + "' has " + std::to_string(r.pixels.channels) + " channels, model expects " +
                         std::to_string(cfg_.model.channels));
  }

  void init_schedule() {
    steps_per_epoch_ = medalign::steps_per_epoch(images_->size(), texts_->size(), cfg_.batch_size);
    schedule_.base_lr = cfg_.learning_rate;
    schedule_.warmup_steps =
        static_cast<std::uint64_t>(std::floor(cfg_.warmup_ratio * static_cast<double>(total_steps())));
  }

  bool finite(const std::vector<Image>& imgs) const {
    for (const auto* p : model_.parameters())
      if (!p->value.allFinite()) return false;
    for (const auto& img : imgs)
      for (float v : img.pixels)
        if (!std::isfinite(v)) return false;
    return true;
  }

  [[noreturn]] void abort_step(std::uint64_t k, const Batch& batch, const std::vector<std::string>& txts,
                               const std::string& why) const {
    const std::string where = dump_batch(k, batch, txts);
    throw NumericalError("step " + std::to_string(k) + ": " + why + "; batch dumped to " + where);
  }

  std::string dump_batch(std::uint64_t k, const Batch& batch, const std::vector<std::string>& txts) const {
    nlohmann::json j{{"step", k}, {"tau", model_.temperature().tau()}, {"images", nlohmann::json::array()},
                     {"texts", nlohmann::json::array()}};
    for (auto i : batch.images)
      j["images"].push_back({{"index", i}, {"id", images_->records[i].id},
                             {"label", images_->records[i].label.to_string()}});
    for (std::size_t t = 0; t < batch.texts.size(); ++t)
      j["texts"].push_back({{"index", batch.texts[t]}, {"id", texts_->records[batch.texts[t]].id}, {"text", txts[t]},
                            {"label", texts_->records[batch.texts[t]].label.to_string()}});
    const fs::path dir = out_dir_.empty() ? fs::temp_directory_path() : out_dir_;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path path = dir / ("nan-step-" + std::to_string(k) + ".json");
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    return path.string();
  }

  TrainConfig cfg_;
  const ImagePool* images_;
  const TextPool* texts_;
  DualEncoder model_;
  AdamW optimizer_;
  WarmupSchedule schedule_;
  std::uint64_t step_ = 0;
  std::uint64_t steps_per_epoch_ = 1;
  std::ostream* metrics_ = nullptr;
  fs::path out_dir_;
  std::vector<StepMetrics> history_;
};

/// Convenience wrapper: trains from scratch and returns the final model.
inline DualEncoder train(const TrainConfig& cfg, const ImagePool& images, const TextPool& texts,
                         std::ostream* metrics = nullptr, const fs::path& out_dir = {}) {
  Trainer t(cfg, images, texts);
  t.set_metrics_stream(metrics);
  t.set_output_dir(out_dir);
  t.run();
  return std::move(t.model());
}

}  // namespace medalign
