#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "medalign/augment.hpp"
#include "medalign/dataset_io.hpp"
#include "medalign/synthetic.hpp"
#include "medalign/train.hpp"

using namespace medalign;
using F = FindingType;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("medalign-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to run a few hundred steps inside a unit test.
TrainConfig small_config() {
  TrainConfig c = TrainConfig::desk_scale();
  c.image_size = 16;
  c.augment.resize_to = 18;
  c.augment.crop_to = 16;
  c.batch_size = 20;
  c.epochs = 2;
  c.seed = 4;
  return c;
}

SyntheticCorpus small_corpus(std::size_t n = 60, std::uint64_t seed = 11) {
  SyntheticCorpusSpec spec;
  spec.n_images = spec.n_sentences = n;
  spec.image_size = 16;
  return generate_synthetic_corpus(spec, seed);
}

const ReportLabeler& labeler() {
  static const ReportLabeler l;
  return l;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(TrainConfigText, RoundTripsEveryKey) {
  TrainConfig c = TrainConfig::desk_scale();
  c.seed = 17;
  c.loss = LossKind::InfoNCE;
  c.sampler = SamplerKind::Paired;
  c.augment.hflip_prob = 0.25;
  c.warmup_ratio = 0.125;
  const TrainConfig back = parse_train_config(to_kv(c));
  EXPECT_EQ(to_kv(back), to_kv(c));
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.loss, LossKind::InfoNCE);
  EXPECT_DOUBLE_EQ(back.augment.hflip_prob, 0.25);
}

TEST(TrainConfigText, DefaultsUseFullScaleHyperparameters) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-5);
  EXPECT_EQ(c.batch_size, 100);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.epochs, 10);
  EXPECT_DOUBLE_EQ(c.warmup_ratio, 0.1);
  EXPECT_EQ(c.augment.resize_to, 256);
  EXPECT_EQ(c.augment.crop_to, 224);
  EXPECT_DOUBLE_EQ(c.augment.hflip_prob, 0.5);
  EXPECT_DOUBLE_EQ(c.tau_init, 0.07);
}

TEST(TrainConfigText, CommentsOverridesAndErrors) {
  const auto c = parse_train_config("# desk run\nepochs = 3\n\nlearning_rate = 0.5  # high\n", TrainConfig::desk_scale());
  EXPECT_EQ(c.epochs, 3);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.5);
  EXPECT_EQ(c.batch_size, 50);
  EXPECT_THROW(parse_train_config("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_train_config("epochs = 3\nepochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_train_config("epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_train_config("mixed_precision = true\n"), ConfigError);
  EXPECT_THROW(parse_train_config("image_size = 20\n"), ConfigError);  // crop no longer matches
}

// ---------------------------------------------------------------- augment

TEST(Augment, DisabledIsResizeThenCenterCrop) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(12, 12, 1);
  for (auto& p : img.pixels) p = u(g);
  auto spec = AugmentationSpec::identity(12, 8);
  auto rng = derive_rng(1, Stream::Augment, 0);
  const Image out = augment(img, spec, rng);
  ASSERT_EQ(out.height, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_FLOAT_EQ(out.at(y, x, 0), img.at(y + 2, x + 2, 0));
}

TEST(Augment, DeterministicShapeAndRange) {
  Image img(20, 20, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 7) / 6.0f;
  AugmentationSpec spec;
  spec.resize_to = 18;
  spec.crop_to = 16;
  for (std::uint64_t k = 0; k < 50; ++k) {
    auto a = derive_rng(3, Stream::Augment, k), b = derive_rng(3, Stream::Augment, k);
    const Image x = augment(img, spec, a), y = augment(img, spec, b);
    EXPECT_EQ(x.pixels, y.pixels);
    EXPECT_EQ(x.height, 16);
    EXPECT_EQ(x.width, 16);
    for (float p : x.pixels) {
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(Augment, FlipRateMatchesProbability) {
  // A left/right ramp with every other transform pinned to identity: the
  // flip is visible as a reversed ramp.
  Image img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(y, x, 0) = static_cast<float>(x) / 3.0f;
  AugmentationSpec spec = AugmentationSpec::identity(4, 4);
  spec.enabled = true;
  spec.random_crop = false;
  spec.hflip_prob = 0.5;
  auto rng = derive_rng(5, Stream::Augment, 0);
  int flips = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) flips += augment(img, spec, rng).at(0, 0, 0) > 0.5f;
  EXPECT_NEAR(flips / static_cast<double>(n), 0.5, 0.02);
}

// ---------------------------------------------------------------- synthetic corpus

TEST(SyntheticCorpus, LabelerAgreesWithPlantedLabels) {
  SyntheticCorpusSpec spec;
  spec.n_images = 0;
  spec.n_sentences = 2000;
  spec.no_finding_rate = 0.1;
  spec.multi_label_rate = 0.2;
  spec.uncertain_rate = 0.1;
  spec.mixed_rate = 0.1;
  const auto c = generate_synthetic_corpus(spec, 3);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < c.texts.size(); ++i)
    agree += label_sentence(c.texts.records[i].text, labeler(), spec.uncertain) == c.text_truth[i];
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(c.texts.size()), 0.99);
}

TEST(SyntheticCorpus, PlantedSimilarityStructure) {
  SyntheticCorpusSpec spec;
  spec.n_images = spec.n_sentences = 300;
  spec.multi_label_rate = 0.3;
  const auto c = generate_synthetic_corpus(spec, 8);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; ++j) {
      const auto& a = c.image_truth[i];
      const auto& b = c.text_truth[j];
      const double s = semantic_similarity(a, b);
      if (a == b) {
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
      std::size_t shared = 0;
      for (auto f : a.findings()) shared += b.test(f);
      if (shared == 0) {
        EXPECT_EQ(s, 0.0);
      }
      EXPECT_NEAR(s, shared / std::sqrt(static_cast<double>(a.count() * b.count())), 1e-12);
    }
}

TEST(SyntheticCorpus, DeterministicAndPrefixStable) {
  SyntheticCorpusSpec spec;
  spec.n_images = spec.n_sentences = 30;
  const auto a = generate_synthetic_corpus(spec, 5), b = generate_synthetic_corpus(spec, 5);
  spec.n_images = spec.n_sentences = 10;
  const auto p = generate_synthetic_corpus(spec, 5);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(a.images.records[i].pixels.pixels, b.images.records[i].pixels.pixels);
    EXPECT_EQ(a.texts.records[i].text, b.texts.records[i].text);
  }
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.texts.records[i].text, p.texts.records[i].text);
}

TEST(SyntheticCorpus, SpecParsingAndValidation) {
  std::istringstream in("n_images = 7\nclasses = Edema, Fracture\nclass_weights = 3, 1\n");
  const auto spec = parse_synthetic_spec(in);
  EXPECT_EQ(spec.n_images, 7u);
  ASSERT_EQ(spec.classes.size(), 2u);
  EXPECT_EQ(spec.classes[1], F::Fracture);
  SyntheticCorpusSpec bad;
  bad.class_weights = {1, 2};
  EXPECT_THROW(bad.validate(), ConfigError);
}

// ---------------------------------------------------------------- optimizer and schedule

TEST(WarmupScheduleType, LinearThenConstant) {
  const WarmupSchedule s{0.2, 10};
  EXPECT_DOUBLE_EQ(s(0), 0.0);
  for (std::uint64_t k = 0; k < 10; ++k) EXPECT_NEAR(s(k), 0.02 * static_cast<double>(k), 1e-15);
  EXPECT_DOUBLE_EQ(s(10), 0.2);
  EXPECT_DOUBLE_EQ(s(1000), 0.2);
  EXPECT_DOUBLE_EQ((WarmupSchedule{0.3, 0})(0), 0.3);
}

TEST(AdamWType, FirstStepMovesByLearningRateAndSkipsDecayFlag) {
  Parameter w("w", 1, 2), t("t", 1, 1, false);
  w.value << 1.0, -1.0;
  w.grad << 0.5, -3.0;
  t.value << 2.0;
  t.grad << 1.0;
  AdamW opt(0.9, 0.999, 1e-12, 0.1);
  opt.step({&w, &t}, 0.01);
  // Bias-corrected first step is lr * sign(g); decay shrinks only w.
  EXPECT_NEAR(w.value(0, 0), 1.0 * (1 - 0.001) - 0.01, 1e-9);
  EXPECT_NEAR(w.value(0, 1), -1.0 * (1 - 0.001) + 0.01, 1e-9);
  EXPECT_NEAR(t.value(0, 0), 2.0 - 0.01, 1e-9);
  EXPECT_EQ(opt.steps(), 1u);
}

// ---------------------------------------------------------------- trainer

TEST(Trainer, StepsPerEpochAndWarmupFromConfig) {
  const auto c = small_corpus();
  Trainer t(small_config(), c.images, c.texts);
  EXPECT_EQ(t.steps_per_epoch(), 3u);
  EXPECT_EQ(t.total_steps(), 6u);
  EXPECT_EQ(t.schedule().warmup_steps, 0u);  // floor(0.1 * 6)
  EXPECT_EQ(steps_per_epoch(61, 10, 20), 4u);
}

TEST(Trainer, LossFallsOverShortRun) {
  const auto c = small_corpus(200);
  TrainConfig cfg = small_config();
  cfg.epochs = 6;
  Trainer t(cfg, c.images, c.texts);
  t.run();
  const auto& h = t.history();
  ASSERT_EQ(h.size(), 60u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += h[i].loss_total;
    last += h[h.size() - 1 - i].loss_total;
  }
  EXPECT_LT(last, first);
  for (const auto& m : h) {
    EXPECT_TRUE(std::isfinite(m.loss_total));
    EXPECT_NEAR(m.loss_total, (m.loss_v2t + m.loss_t2v) / 2, 1e-12);
    EXPECT_GT(m.tau, 0);
    EXPECT_LE(m.tau, cfg.max_tau);
  }
}

TEST(Trainer, IdenticalSeedsGiveIdenticalMetricStreams) {
  const auto c = small_corpus();
  std::ostringstream a, b;
  train(small_config(), c.images, c.texts, &a);
  train(small_config(), c.images, c.texts, &b);
  EXPECT_FALSE(a.str().empty());
  EXPECT_EQ(a.str(), b.str());
  TrainConfig other = small_config();
  other.seed = 5;
  std::ostringstream d;
  train(other, c.images, c.texts, &d);
  EXPECT_NE(a.str(), d.str());
}

TEST(Trainer, MetricsLinesCarryRequiredKeys) {
  const auto c = small_corpus();
  std::ostringstream out;
  train(small_config(), c.images, c.texts, &out);
  std::istringstream in(out.str());
  std::string line;
  std::uint64_t expect = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::uint64_t>(), expect++);
    for (const char* k : {"loss_v2t", "loss_t2v", "loss_total", "tau", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(expect, 6u);
}

TEST(Trainer, CheckpointRoundTripAndExactResume) {
  const auto c = small_corpus();
  const fs::path dir = scratch("resume");
  TrainConfig cfg = small_config();
  cfg.epochs = 3;

  Trainer full(cfg, c.images, c.texts);
  full.run();

  Trainer first(cfg, c.images, c.texts);
  for (int i = 0; i < 4; ++i) first.step();
  first.save(dir / "mid");
  const auto ck = load_checkpoint(dir / "mid");
  EXPECT_EQ(ck.step, 4u);
  EXPECT_EQ(ck.id, checkpoint_id(first.model()));
  EXPECT_EQ(to_kv(ck.config), to_kv(cfg));
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->steps(), 4u);

  Trainer resumed(ck, c.images, c.texts);
  resumed.run();
  EXPECT_EQ(checkpoint_id(resumed.model()), checkpoint_id(full.model()));
  ASSERT_EQ(resumed.history().size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(resumed.history()[i], full.history()[4 + i]);
}

TEST(Trainer, WritesEpochCheckpointsAndFinalManifest) {
  const auto c = small_corpus();
  const fs::path dir = scratch("epochs");
  Trainer t(small_config(), c.images, c.texts);
  t.set_output_dir(dir);
  t.run();
  EXPECT_TRUE(fs::exists(dir / "epoch-001" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "epoch-002" / "manifest.json"));
  const auto ck = load_checkpoint(dir);
  EXPECT_EQ(ck.step, 6u);
  EXPECT_EQ(ck.epoch, 2);
  EXPECT_EQ(ck.id, checkpoint_id(t.model()));
}

TEST(Trainer, CorruptCheckpointRejected) {
  const auto c = small_corpus();
  const fs::path dir = scratch("corrupt");
  Trainer t(small_config(), c.images, c.texts);
  t.step();
  t.save(dir);
  {
    std::fstream f(dir / "params" / "text.head.weight.bin", std::ios::in | std::ios::out | std::ios::binary);
    ASSERT_TRUE(f);
    f.seekp(8);
    const double junk = 123.0;
    f.write(reinterpret_cast<const char*>(&junk), sizeof junk);
  }
  EXPECT_THROW(load_checkpoint(dir), FormatError);
  fs::resize_file(dir / "params" / "text.head.weight.bin", 8);
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST(Trainer, NonFiniteStepAbortsWithBatchDump) {
  const auto c = small_corpus();
  const fs::path dir = scratch("nan");
  Trainer t(small_config(), c.images, c.texts);
  t.set_output_dir(dir);
  t.model().parameters().front()->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.step(), NumericalError);
  ASSERT_TRUE(fs::exists(dir / "nan-step-0.json"));
  std::ifstream in(dir / "nan-step-0.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("images").size(), 20u);
  EXPECT_EQ(j.at("texts").size(), 20u);
}

TEST(Trainer, PoolPreconditions) {
  const auto c = small_corpus(10);
  EXPECT_THROW(Trainer(small_config(), c.images, c.texts), InsufficientDataError);
  const auto big = small_corpus(60);
  TextPool fewer = big.texts;
  fewer.records.resize(40);
  TrainConfig paired = small_config();
  paired.sampler = SamplerKind::Paired;
  EXPECT_THROW(Trainer(paired, big.images, fewer), ConfigError);
  EXPECT_NO_THROW(Trainer(small_config(), big.images, fewer));
  ImagePool empty;
  EXPECT_THROW(Trainer(small_config(), empty, big.texts), InsufficientDataError);
}

TEST(Trainer, PairedSamplerAlignsIndicesAndHardLossTrains) {
  const auto c = small_corpus();
  TrainConfig cfg = small_config();
  cfg.sampler = SamplerKind::Paired;
  cfg.loss = LossKind::InfoNCE;
  Trainer t(cfg, c.images, c.texts);
  const Batch b = t.batch_at(3);
  EXPECT_EQ(b.images, b.texts);
  t.run();
  for (const auto& m : t.history()) EXPECT_TRUE(std::isfinite(m.loss_total));
}

// ---------------------------------------------------------------- ingest

TEST(Ingest, ImageLabelAdapterMapsClassesAndOverrides) {
  const fs::path dir = scratch("image-label");
  std::vector<RawImage> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back({"i" + std::to_string(i), "", "", Image(4, 4, 1)});
  imgs[0].class_name = "Normal";
  imgs[1].class_name = "Edema";
  imgs[2].class_name = "Edema";
  write_images(dir, imgs);
  std::ofstream(dir / "labels.csv") << "id,class\ni2,Pleural Effusion\n";
  const auto r = ingest_dataset("image-label", dir, labeler());
  ASSERT_EQ(r.images.size(), 3u);
  EXPECT_EQ(r.images.records[0].label, FindingLabel::of({F::NoFinding}));
  EXPECT_EQ(r.images.records[1].label, FindingLabel::of({F::Edema}));
  EXPECT_EQ(r.images.records[2].label, FindingLabel::of({F::PleuralEffusion}));
  EXPECT_EQ(r.dropped_unlabeled_images, 1u);
  EXPECT_EQ(r.texts.size(), 0u);
}

TEST(Ingest, PairedReportFeedsBothPools) {
  const fs::path dir = scratch("paired");
  write_images(dir, {{"a", "s1", "", Image(4, 4, 1)}, {"b", "s2", "", Image(4, 4, 1)}});
  write_texts(dir / "reports.jsonl",
              {{"r1", "s1", "Mild pulmonary edema. Small left pleural effusion.", ""},
               {"r2", "s2", "No acute cardiopulmonary process.", ""}});
  const auto r = ingest_dataset("paired-report", dir, labeler());
  ASSERT_EQ(r.images.size(), 2u);
  ASSERT_EQ(r.texts.size(), 3u);
  EXPECT_EQ(r.images.records[0].label, FindingLabel::of({F::Edema, F::PleuralEffusion}));
  EXPECT_EQ(r.images.records[1].label, FindingLabel::of({F::NoFinding}));
  EXPECT_EQ(r.texts.records[0].study_id, "s1");
}

TEST(Ingest, EmptyAndMalformedInputs) {
  const fs::path dir = scratch("malformed");
  std::ofstream(dir / "reports.jsonl").close();
  const auto empty = ingest_dataset("text-only", dir, labeler());
  EXPECT_EQ(empty.texts.size(), 0u);
  EXPECT_FALSE(empty.warnings.empty());

  {
    std::ofstream out(dir / "reports.jsonl");
    out << "{\"id\":\"ok\",\"text\":\"Mild pulmonary edema is present.\"}\n";
    for (int i = 0; i < 3; ++i) out << "{not json\n";
  }
  IngestOptions lenient;
  const auto r = ingest_dataset("text-only", dir, labeler(), lenient);
  EXPECT_EQ(r.malformed, 3u);
  EXPECT_EQ(r.texts.size(), 1u);
  IngestOptions strict;
  strict.max_malformed = 2;
  EXPECT_THROW(ingest_dataset("text-only", dir, labeler(), strict), FormatError);
  EXPECT_THROW(ingest_dataset("no-such-adapter", dir, labeler()), ConfigError);
  EXPECT_THROW(ingest_dataset("text-only", dir / "missing", labeler()), IoError);
}

TEST(Ingest, ImageBlobRoundTrip) {
  const fs::path dir = scratch("blob");
  const auto c = small_corpus(5);
  std::vector<RawImage> imgs;
  for (const auto& r : c.images.records) imgs.push_back({r.id, r.study_id, "Edema", r.pixels});
  write_images(dir, imgs);
  IngestResult res;
  const auto back = read_images(dir, res, 0);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back[i].pixels.pixels, imgs[i].pixels.pixels);
  fs::resize_file(dir / "images.f32", 10);
  EXPECT_THROW(read_images(dir, res, 0), FormatError);
}
