#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/checksum.hpp"
#include "medalign/config.hpp"
#include "medalign/model.hpp"
#include "medalign/optimizer.hpp"

namespace medalign {

namespace fs = std::filesystem;

/// Identifier of a parameter state: crc32 over every parameter value in order.
inline std::string checkpoint_id(const DualEncoder& model) {
  std::uint32_t h = 0;
  for (const auto* p : model.parameters())
    h = crc32_of_values(std::span<const double>(p->value.data(), static_cast<std::size_t>(p->value.size())), h);
  return hex32(h);
}

/// crc32 over the image tower only; used to prove a frozen encoder stayed frozen.
inline std::uint32_t vision_hash(const DualEncoder& model) {
  std::uint32_t h = 0;
  for (const auto* p : model.vision_parameters())
    h = crc32_of_values(std::span<const double>(p->value.data(), static_cast<std::size_t>(p->value.size())), h);
  return h;
}

namespace detail {

inline void write_matrix(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write", path.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw IoError("write failed", path.string());
}

inline Matrix read_matrix(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read", path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != static_cast<std::size_t>(rows * cols) * sizeof(double))
    throw FormatError("parameter blob " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(rows * cols * static_cast<Eigen::Index>(sizeof(double))));
  in.seekg(0);
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed", path.string());
  return m;
}

inline std::uint32_t crc_of(const Matrix& m) {
  return crc32_of_values(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels},   {"filters", c.filters},
          {"kernel", c.kernel},         {"stride", c.stride},       {"grid", c.grid},
          {"vision_dim", c.vision_dim}, {"text_embed_dim", c.text_embed_dim},
          {"text_dim", c.text_dim},     {"proj_dim", c.proj_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size");
  c.channels = j.at("channels");
  c.filters = j.at("filters");
  c.kernel = j.at("kernel");
  c.stride = j.at("stride");
  c.grid = j.at("grid");
  c.vision_dim = j.at("vision_dim");
  c.text_embed_dim = j.at("text_embed_dim");
  c.text_dim = j.at("text_dim");
  c.proj_dim = j.at("proj_dim");
  return c;
}

}  // namespace detail

struct Checkpoint {
  DualEncoder model;
  TrainConfig config;
  std::uint64_t step = 0;
  int epoch = 0;
  std::optional<AdamW> optimizer;
  std::string id;
};

/// Writes `dir/manifest.json`, `vocab.txt`, `config.txt`, `params/*.bin`
/// (float64, column-major) and, when given, `optim/*.{m,v}.bin`.
inline void save_checkpoint(const fs::path& dir, const DualEncoder& model, const TrainConfig& config,
                            std::uint64_t step, int epoch, const AdamW* optimizer = nullptr) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + ec.message(), dir.string());
  if (optimizer) fs::create_directories(dir / "optim", ec);

  nlohmann::json params = nlohmann::json::array();
  const auto ps = model.parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto* p = ps[k];
    detail::write_matrix(dir / "params" / (p->name + ".bin"), p->value);
    nlohmann::json e{{"name", p->name},
                     {"rows", p->value.rows()},
                     {"cols", p->value.cols()},
                     {"crc32", hex32(detail::crc_of(p->value))}};
    if (optimizer && !optimizer->moments().empty()) {
      const auto& [m, v] = optimizer->moments().at(k);
      detail::write_matrix(dir / "optim" / (p->name + ".m.bin"), m);
      detail::write_matrix(dir / "optim" / (p->name + ".v.bin"), v);
    }
    params.push_back(std::move(e));
  }

  {
    std::ofstream vocab(dir / "vocab.txt");
    if (!vocab) throw IoError("cannot write", (dir / "vocab.txt").string());
    for (std::size_t i = 1; i < model.vocabulary().size(); ++i) vocab << model.vocabulary().tokens()[i] << "\n";
    std::ofstream cfg(dir / "config.txt");
    cfg << to_kv(config);
    if (!vocab || !cfg) throw IoError("write failed", dir.string());
  }

  nlohmann::json manifest{
      {"format", "medalign-checkpoint"},
      {"version", 1},
      {"id", checkpoint_id(model)},
      {"step", step},
      {"epoch", epoch},
      {"tau", model.temperature().tau()},
      {"log_tau", model.temperature().log_tau()},
      {"vocab_size", model.vocabulary().size()},
      {"vocab_hash", hex32(model.vocabulary().hash())},
      {"model", detail::model_config_json(model.config())},
      {"eval_transform", {{"resize_to", config.augment.resize_to}, {"crop_to", config.augment.crop_to}}},
      {"parameters", params},
      {"optimizer", optimizer && !optimizer->moments().empty()
                        ? nlohmann::json{{"steps", optimizer->steps()}}
                        : nlohmann::json(nullptr)},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write", (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed", (dir / "manifest.json").string());
}

/// Restores a checkpoint, verifying every blob's size and crc32 and the
/// vocabulary hash.
inline Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open checkpoint manifest", (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "medalign-checkpoint") throw FormatError("not a checkpoint: " + dir.string());

  Checkpoint ck;
  ck.config = load_train_config((dir / "config.txt").string());
  std::vector<std::string> tokens;
  {
    std::ifstream v(dir / "vocab.txt");
    if (!v) throw IoError("cannot open vocabulary", (dir / "vocab.txt").string());
    std::string line;
    while (std::getline(v, line))
      if (!line.empty()) tokens.push_back(line);
  }
  Vocabulary vocab(tokens);
  if (hex32(vocab.hash()) != manifest.at("vocab_hash").get<std::string>())
    throw FormatError("vocabulary hash mismatch in " + dir.string());

  const ModelConfig mc = detail::model_config_from_json(manifest.at("model"));
  ck.model = DualEncoder(mc, std::move(vocab), 0);
  auto params = ck.model.parameters();
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size()) throw FormatError("checkpoint parameter count mismatch");
  const bool has_optim = !manifest.at("optimizer").is_null();
  std::vector<AdamW::Moments> moments;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& e = entries[k];
    auto* p = params[k];
    if (e.at("name").get<std::string>() != p->name)
      throw FormatError("checkpoint parameter order mismatch at " + p->name);
    const Eigen::Index rows = e.at("rows"), cols = e.at("cols");
    if (rows != p->value.rows() || cols != p->value.cols())
      throw FormatError("shape mismatch for parameter " + p->name);
    p->value = detail::read_matrix(dir / "params" / (p->name + ".bin"), rows, cols);
    if (hex32(detail::crc_of(p->value)) != e.at("crc32").get<std::string>())
      throw FormatError("checksum mismatch for parameter " + p->name);
    if (has_optim)
      moments.push_back({detail::read_matrix(dir / "optim" / (p->name + ".m.bin"), rows, cols),
                         detail::read_matrix(dir / "optim" / (p->name + ".v.bin"), rows, cols)});
  }
  ck.step = manifest.at("step");
  ck.epoch = manifest.at("epoch");
  ck.id = checkpoint_id(ck.model);
  if (ck.id != manifest.at("id").get<std::string>()) throw FormatError("checkpoint id mismatch in " + dir.string());
  if (has_optim) {
    const auto& c = ck.config;
    AdamW opt(c.beta1, c.beta2, c.adam_epsilon, c.weight_decay);
    opt.restore(manifest.at("optimizer").at("steps"), std::move(moments));
    ck.optimizer = std::move(opt);
  }
  return ck;
}

}  // namespace medalign
