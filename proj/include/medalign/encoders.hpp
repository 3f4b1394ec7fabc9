#pragma once

// Toy reference encoders and projection heads.
//
// Vision: one strided convolution (tanh), average pooling onto a G x G grid,
// a dense layer to D (tanh). Text: token embeddings mean-pooled, a dense
// layer to M (tanh). Both feed distinct linear projection heads to the
// shared P-dimensional space. Every layer has a hand-written backward pass;
// all activations are smooth so finite differences agree with them.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medalign/checksum.hpp"
#include "medalign/errors.hpp"
#include "medalign/image.hpp"
#include "medalign/numeric.hpp"
#include "medalign/report_labeler.hpp"
#include "medalign/rng.hpp"

namespace medalign {

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr int kFullScaleProjectionDim = 512;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols, bool apply_decay = true)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)), decay(apply_decay) {}

  Eigen::Index size() const noexcept { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

inline void init_normal(Parameter& p, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = dist(rng);
}

struct ModelConfig {
  int image_size = 32;
  int channels = 1;
  int filters = 8;
  int kernel = 5;
  int stride = 2;
  int grid = 4;
  int vision_dim = 64;      // D
  int text_embed_dim = 32;
  int text_dim = 64;        // M
  int proj_dim = 32;        // P

  int padding() const noexcept { return kernel / 2; }
  int conv_out() const noexcept { return (image_size + 2 * padding() - kernel) / stride + 1; }

  /// Full-scale projection width used with real backbones.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.proj_dim = kFullScaleProjectionDim;
    return c;
  }

  void validate() const {
    if (image_size <= 0 || channels <= 0 || filters <= 0 || kernel <= 0 || stride <= 0 || grid <= 0 ||
        vision_dim <= 0 || text_embed_dim <= 0 || text_dim <= 0 || proj_dim <= 0)
      throw ConfigError("model dimensions must be positive");
    if (conv_out() <= 0 || conv_out() % grid != 0)
      throw ConfigError("convolution output size " + std::to_string(conv_out()) + " is not divisible by grid " +
                        std::to_string(grid));
  }
};

// ---------------------------------------------------------------- vision

class VisionEncoder {
public:
  struct Cache {
    Matrix cols;   // (C*K*K) x (O*O)
    Matrix act;    // F x (O*O), post-tanh
    Vector feat;   // F*G*G
    Vector out;    // D
  };

  VisionEncoder() = default;
  VisionEncoder(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        conv_w_("vision.conv.weight", cfg.filters, cfg.channels * cfg.kernel * cfg.kernel),
        conv_b_("vision.conv.bias", cfg.filters, 1),
        fc_w_("vision.fc.weight", cfg.vision_dim, cfg.filters * cfg.grid * cfg.grid),
        fc_b_("vision.fc.bias", cfg.vision_dim, 1) {
    cfg.validate();
    init_normal(conv_w_, 1.0 / std::sqrt(static_cast<double>(conv_w_.value.cols())), rng);
    init_normal(fc_w_, 1.0 / std::sqrt(static_cast<double>(fc_w_.value.cols())), rng);
    build_pool();
  }

  int output_dim() const noexcept { return cfg_.vision_dim; }
  const ModelConfig& config() const noexcept { return cfg_; }

  Vector encode(const Image& img) const {
    Cache c;
    forward(img, c);
    return c.out;
  }

  /// B x D, row i = encode(images[i]).
  Matrix encode_batch(std::span<const Image> images) const {
    Matrix out(static_cast<Eigen::Index>(images.size()), cfg_.vision_dim);
    for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode(images[i]).transpose();
    return out;
  }

  void forward(const Image& img, Cache& c) const {
    check_shape(img);
    im2col(img, c.cols);
    c.act = conv_w_.value * c.cols;
    c.act.colwise() += conv_b_.value.col(0);
    c.act = c.act.array().tanh();
    const Matrix pooled = c.act * pool_;  // F x G*G
    c.feat.resize(pooled.size());
    for (Eigen::Index f = 0; f < pooled.rows(); ++f)
      for (Eigen::Index g = 0; g < pooled.cols(); ++g) c.feat(f * pooled.cols() + g) = pooled(f, g);
    c.out = ((fc_w_.value * c.feat) + fc_b_.value.col(0)).array().tanh();
  }

  void backward(const Cache& c, const Vector& d_out) {
    const Vector dz = d_out.array() * (1.0 - c.out.array().square());
    fc_w_.grad.noalias() += dz * c.feat.transpose();
    fc_b_.grad.col(0) += dz;
    const Vector dfeat = fc_w_.value.transpose() * dz;
    const Eigen::Index cells = pool_.cols();
    Matrix dpooled(cfg_.filters, cells);
    for (Eigen::Index f = 0; f < dpooled.rows(); ++f)
      for (Eigen::Index g = 0; g < cells; ++g) dpooled(f, g) = dfeat(f * cells + g);
    const Matrix da = ((dpooled * pool_.transpose()).array() * (1.0 - c.act.array().square())).matrix();
    conv_w_.grad.noalias() += da * c.cols.transpose();
    conv_b_.grad.col(0) += da.rowwise().sum();
  }

  std::vector<Parameter*> parameters() { return {&conv_w_, &conv_b_, &fc_w_, &fc_b_}; }
  std::vector<const Parameter*> parameters() const { return {&conv_w_, &conv_b_, &fc_w_, &fc_b_}; }

private:
  void check_shape(const Image& img) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size || img.channels != cfg_.channels)
      throw ShapeError("vision encoder expects " + std::to_string(cfg_.image_size) + "x" +
                       std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels) + " input, got " +
                       std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                       std::to_string(img.channels));
  }

  void im2col(const Image& img, Matrix& cols) const {
    const int k = cfg_.kernel, o = cfg_.conv_out(), pad = cfg_.padding(), s = cfg_.stride;
    cols.setZero(static_cast<Eigen::Index>(cfg_.channels) * k * k, static_cast<Eigen::Index>(o) * o);
    for (int oy = 0; oy < o; ++oy)
      for (int ox = 0; ox < o; ++ox)
        for (int c = 0; c < cfg_.channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s - pad + ky, ix = ox * s - pad + kx;
              if (iy < 0 || ix < 0 || iy >= img.height || ix >= img.width) continue;
              cols((c * k + ky) * k + kx, oy * o + ox) = img.at(iy, ix, c);
            }
  }

  void build_pool() {
    const int o = cfg_.conv_out(), g = cfg_.grid, cell = o / g;
    pool_.setZero(static_cast<Eigen::Index>(o) * o, static_cast<Eigen::Index>(g) * g);
    const double w = 1.0 / (cell * cell);
    for (int y = 0; y < o; ++y)
      for (int x = 0; x < o; ++x) pool_(y * o + x, (y / cell) * g + (x / cell)) = w;
  }

  ModelConfig cfg_;
  Parameter conv_w_, conv_b_, fc_w_, fc_b_;
  Matrix pool_;
};

// ---------------------------------------------------------------- text

/// Token vocabulary; id 0 is the reserved unknown token.
class Vocabulary {
public:
  static constexpr std::string_view kUnknown = "<unk>";

  Vocabulary() : tokens_{std::string(kUnknown)} { index_[tokens_[0]] = 0; }

  explicit Vocabulary(std::vector<std::string> tokens) : Vocabulary() {
    for (auto& t : tokens) add(std::move(t));
  }

  /// Sorted distinct tokens of the given texts.
  template <typename Range>
  static Vocabulary build(const Range& texts) {
    std::vector<std::string> all;
    for (const auto& t : texts)
      for (auto& w : tokens_of(t)) all.push_back(std::move(w));
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return Vocabulary(std::move(all));
  }

  static std::vector<std::string> tokens_of(std::string_view s) {
    std::vector<std::string> out;
    for (auto& t : text::tokenize(s))
      if (t.text != ";" && t.text != ":") out.push_back(std::move(t.text));
    return out;
  }

  void add(std::string token) {
    if (index_.contains(token)) return;
    index_[token] = static_cast<int>(tokens_.size());
    tokens_.push_back(std::move(token));
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
  }

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids;
    for (const auto& t : tokens_of(s)) ids.push_back(id(t));
    if (ids.empty()) ids.push_back(0);
    return ids;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::uint32_t hash() const {
    std::uint32_t h = 0;
    for (const auto& t : tokens_) h = crc32_of(t + "\n", h);
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

class TextEncoder {
public:
  struct Cache {
    std::vector<int> ids;
    Vector pooled;  // E
    Vector out;     // M
  };

  TextEncoder() = default;
  TextEncoder(const ModelConfig& cfg, Vocabulary vocab, Rng& rng)
      : cfg_(cfg),
        vocab_(std::move(vocab)),
        embed_("text.embedding", static_cast<Eigen::Index>(vocab_.size()), cfg.text_embed_dim),
        fc_w_("text.fc.weight", cfg.text_dim, cfg.text_embed_dim),
        fc_b_("text.fc.bias", cfg.text_dim, 1) {
    init_normal(embed_, 1.0, rng);
    init_normal(fc_w_, 1.0 / std::sqrt(static_cast<double>(cfg.text_embed_dim)), rng);
  }

  int output_dim() const noexcept { return cfg_.text_dim; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }

  Vector encode(std::string_view sentence) const {
    Cache c;
    forward(sentence, c);
    return c.out;
  }

  Matrix encode_batch(std::span<const std::string> sentences) const {
    Matrix out(static_cast<Eigen::Index>(sentences.size()), cfg_.text_dim);
    for (std::size_t i = 0; i < sentences.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = encode(sentences[i]).transpose();
    return out;
  }

  void forward(std::string_view sentence, Cache& c) const {
    if (text::trim(sentence).empty()) throw EmptyInputError("text encoder input is empty");
    c.ids = vocab_.encode(sentence);
    c.pooled = Vector::Zero(cfg_.text_embed_dim);
    for (int id : c.ids) c.pooled += embed_.value.row(id).transpose();
    c.pooled /= static_cast<double>(c.ids.size());
    c.out = ((fc_w_.value * c.pooled) + fc_b_.value.col(0)).array().tanh();
  }

  void backward(const Cache& c, const Vector& d_out) {
    const Vector dz = d_out.array() * (1.0 - c.out.array().square());
    fc_w_.grad.noalias() += dz * c.pooled.transpose();
    fc_b_.grad.col(0) += dz;
    const Vector dpooled = fc_w_.value.transpose() * dz / static_cast<double>(c.ids.size());
    for (int id : c.ids) embed_.grad.row(id) += dpooled.transpose();
  }

  std::vector<Parameter*> parameters() { return {&embed_, &fc_w_, &fc_b_}; }
  std::vector<const Parameter*> parameters() const { return {&embed_, &fc_w_, &fc_b_}; }

private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  Parameter embed_, fc_w_, fc_b_;
};

// ---------------------------------------------------------------- heads

class ProjectionHead {
public:
  ProjectionHead() = default;
  ProjectionHead(std::string name, int in_dim, int out_dim, Rng& rng)
      : w_(name + ".weight", out_dim, in_dim), b_(name + ".bias", out_dim, 1) {
    init_normal(w_, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
  }

  Eigen::Index input_dim() const noexcept { return w_.value.cols(); }
  Eigen::Index output_dim() const noexcept { return w_.value.rows(); }

  Vector forward(const Vector& x) const {
    if (x.size() != input_dim())
      throw ShapeError("projection head expects input of size " + std::to_string(input_dim()) + ", got " +
                       std::to_string(x.size()));
    return w_.value * x + b_.value.col(0);
  }

  // Returns d/dx.
  Vector backward(const Vector& x, const Vector& d_out) {
    w_.grad.noalias() += d_out * x.transpose();
    b_.grad.col(0) += d_out;
    return w_.value.transpose() * d_out;
  }

  std::vector<Parameter*> parameters() { return {&w_, &b_}; }
  std::vector<const Parameter*> parameters() const { return {&w_, &b_}; }

private:
  Parameter w_, b_;
};

/// p / (||p|| + 1e-12). A zero vector maps to zero, never NaN.
inline Vector normalize(const Vector& p) { return p / (p.norm() + kNormEpsilon); }

// Vector-Jacobian product of normalize().
inline Vector normalize_backward(const Vector& p, const Vector& d_unit) {
  const double n = p.norm();
  const double d = n + kNormEpsilon;
  Vector out = d_unit / d;
  if (n > 0) out -= p * (p.dot(d_unit) / (n * d * d));
  return out;
}

struct Projected {
  Vector p;
  Vector unit;
};

inline Projected project_and_normalize(const Vector& raw, const ProjectionHead& head) {
  Projected r;
  r.p = head.forward(raw);
  r.unit = normalize(r.p);
  return r;
}

}  // namespace medalign
