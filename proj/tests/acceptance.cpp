// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medalign/evaluation.hpp"
#include "medalign/synthetic.hpp"
#include "medalign/train.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace medalign;
using F = FindingType;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix to_matrix(const oracle::Mat& m) {
  Matrix out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j];
  return out;
}

FindingLabel random_label(std::mt19937_64& rng, double p = 0.25) {
  std::bernoulli_distribution bit(p);
  FindingLabel l;
  for (std::size_t i = 1; i < kNumFindings; ++i)
    if (bit(rng)) l.set(finding_at(i));
  if (l.unlabeled()) l.set(F::NoFinding);
  return l;
}

const std::vector<F> kClasses{F::Atelectasis, F::Cardiomegaly, F::Edema, F::Consolidation, F::PleuralEffusion};

PromptSet prompts_for(std::uint64_t seed) { return generate_prompts(kClasses, kDefaultPromptsPerClass, seed); }

// Held-out single-label images in evaluation form, with class indices.
struct HeldOut {
  std::vector<Image> images;
  std::vector<std::size_t> truth;
};

HeldOut held_out(const TrainConfig& cfg, std::size_t n, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.n_images = n;
  spec.n_sentences = 0;
  spec.image_size = cfg.image_size;
  const auto corpus = generate_synthetic_corpus(spec, seed);
  HeldOut h;
  std::vector<Image> raw;
  for (const auto& r : corpus.images.records) {
    raw.push_back(r.pixels);
    const auto f = r.label.findings().front();
    h.truth.push_back(static_cast<std::size_t>(std::find(kClasses.begin(), kClasses.end(), f) - kClasses.begin()));
  }
  h.images = prepare_images(raw, cfg.augment.resize_to, cfg.augment.crop_to);
  return h;
}

// Texts are relabeled by the report labeler so training sees exactly what
// the ingest path would produce.
void relabel_texts(TextPool& texts) {
  static const ReportLabeler labeler;
  for (auto& r : texts.records) r.label = label_sentence(r.text, labeler);
}

// ---------------------------------------------------------------- criteria

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(101);
  const std::vector<std::string> texts{"mild pulmonary edema", "small left pleural effusion",
                                       "no acute cardiopulmonary process", "right lower lobe consolidation"};
  const TrainConfig cfg = TrainConfig::desk_scale();
  DualEncoder model(cfg.model_config(), Vocabulary::build(texts), 7, 0.5);
  std::vector<Image> imgs;
  std::uniform_real_distribution<float> u(0, 1);
  for (int i = 0; i < 4; ++i) {
    Image img(cfg.image_size, cfg.image_size, 1);
    for (auto& p : img.pixels) p = u(g);
    imgs.push_back(std::move(img));
  }
  Matrix s(4, 4);
  std::uniform_real_distribution<double> us(0, 1);
  for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = us(g);
  const auto r = gradcheck::check(model, imgs, texts, soft_targets_from_similarity(s));
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && secs < 30.0 && r.zero_grad_parameters == 0,
          fmt("max rel error %.2e at %s over %zu entries incl. log tau; %.1f s", r.max_rel_error,
              r.worst_parameter.c_str(), r.entries_checked, secs)};
}

Outcome infonce_reduction() {
  std::mt19937_64 g(102);
  double worst = 0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t n = 2 + static_cast<std::size_t>(b % 31), d = 3 + static_cast<std::size_t>(b % 7);
    const auto v = oracle::random_unit_rows(n, d, g), t = oracle::random_unit_rows(n, d, g);
    const double tau = std::uniform_real_distribution<double>(0.02, 2.0)(g);
    const double got = semantic_matching_loss(to_matrix(v), to_matrix(t),
                                              SimilarityBundle::hard_diagonal(static_cast<Eigen::Index>(n)),
                                              Temperature(tau))
                           .total;
    worst = std::max(worst, std::abs(got - oracle::symmetric_infonce(v, t, tau)));
  }
  return {worst <= 1e-9, fmt("max |semantic - InfoNCE oracle| = %.2e over 100 batches", worst)};
}

Outcome soft_target_stochasticity() {
  std::mt19937_64 g(103);
  double worst = 0, min_entry = 1;
  for (int b = 0; b < 1000; ++b) {
    const std::size_t n = 2 + static_cast<std::size_t>(b % 63);
    std::vector<FindingLabel> li(n), lt(n);
    for (auto& l : li) l = random_label(g);
    for (auto& l : lt) l = random_label(g);
    const auto bundle = build_soft_targets(li, lt);
    worst = std::max({worst, (bundle.y_v2t.rowwise().sum().array() - 1).abs().maxCoeff(),
                      (bundle.y_t2v.colwise().sum().array() - 1).abs().maxCoeff()});
    min_entry = std::min({min_entry, bundle.y_v2t.minCoeff(), bundle.y_t2v.minCoeff()});
  }
  return {worst <= 1e-12 && min_entry > 0,
          fmt("max |sum - 1| = %.2e, min entry = %.3e over 1000 batches", worst, min_entry)};
}

Outcome combinatorial_expansion() {
  const auto pairs = count_supervision_pairs(2, 3, 3);
  DecoupledSampler sampler(5, 5, 104);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  int batches = 0;
  while (seen.size() < 25 && batches < 10000) {
    const auto b = sampler.next(2);
    for (auto i : b.images)
      for (auto j : b.texts) seen.insert({i, j});
    ++batches;
  }
  return {pairs == 25 && seen.size() == 25,
          fmt("count_supervision_pairs(2,3,3) = %llu; %zu/25 image-text pairs covered after %d batches",
              static_cast<unsigned long long>(pairs), seen.size(), batches)};
}

Outcome cross_entropy_oracle() {
  std::mt19937_64 g(105);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 17), m = 2 + static_cast<std::size_t>(t % 11);
    oracle::Mat y = oracle::zeros(n, m), p = oracle::zeros(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      double sy = 0, sp = 0;
      for (std::size_t j = 0; j < m; ++j) {
        sy += (y[i][j] = u(g));
        sp += (p[i][j] = u(g));
      }
      for (std::size_t j = 0; j < m; ++j) {
        y[i][j] /= sy;
        p[i][j] /= sp;
      }
    }
    const double got = cross_entropy(to_matrix(y), to_matrix(p), Direction::V2T);
    worst = std::max(worst, std::abs(got - oracle::cross_entropy(y, p)));
  }
  return {worst <= 1e-9, fmt("max |library - double loop| = %.2e over 100 pairs", worst)};
}

Outcome false_negative_equalization() {
  std::mt19937_64 g(106);
  std::size_t checked = 0, unequal = 0;
  for (int b = 0; b < 1000; ++b) {
    const std::size_t n = 4 + static_cast<std::size_t>(b % 20);
    // A small label alphabet so exact duplicates are common.
    std::vector<FindingLabel> pool{FindingLabel::of({F::Edema}), FindingLabel::of({F::Edema, F::PleuralEffusion}),
                                   FindingLabel::of({F::NoFinding}), FindingLabel::of({F::Cardiomegaly})};
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<FindingLabel> li(n), lt(n);
    for (auto& l : li) l = pool[pick(g)];
    for (auto& l : lt) l = pool[pick(g)];
    const auto bundle = build_soft_targets(li, lt);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = j + 1; k < n; ++k)
          if (lt[j] == li[i] && lt[k] == li[i]) {
            ++checked;
            const auto ii = static_cast<Eigen::Index>(i);
            unequal += bundle.y_v2t(ii, static_cast<Eigen::Index>(j)) != bundle.y_v2t(ii, static_cast<Eigen::Index>(k));
          }
  }
  return {checked > 0 && unequal == 0, fmt("%zu false-negative pairs checked, %zu unequal", checked, unequal)};
}

Outcome labeler_fixture() {
  std::ifstream in(std::string(MEDALIGN_TEST_DATA) + "/labeler_fixture.jsonl");
  if (!in) return {false, "fixture file missing"};
  const ReportLabeler labeler;
  std::string line, first_miss;
  int total = 0, exact = 0, negated = 0, uncertain = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    FindingLabel expected;
    for (const auto& n : j.at("expected")) expected.set(*finding_from_name(n.get<std::string>()));
    const auto sentence = j.at("sentence").get<std::string>();
    ++total;
    if (label_sentence(sentence, labeler) == expected) {
      ++exact;
    } else if (first_miss.empty()) {
      first_miss = "; first miss: " + sentence;
    }
    negated += j.at("kind") == "negated";
    uncertain += j.at("kind") == "uncertain";
  }
  return {total == 50 && exact == total && negated >= 10 && uncertain >= 5,
          fmt("%d/%d exact (%d negated, %d uncertain)%s", exact, total, negated, uncertain, first_miss.c_str())};
}

Outcome synthetic_end_to_end() {
  const auto t0 = Clock::now();
  const TrainConfig cfg = TrainConfig::desk_scale();
  SyntheticCorpusSpec spec;  // 5 single-finding classes, 500 images + 500 sentences
  auto corpus = generate_synthetic_corpus(spec, 2024);
  relabel_texts(corpus.texts);
  const DualEncoder model = train(cfg, corpus.images, corpus.texts);
  const double train_secs = seconds_since(t0);
  const auto test = held_out(cfg, 500, 7);
  const auto single = zero_shot_runs(model, test.images, test.truth, prompts_for, false);
  const auto ensemble = zero_shot_runs(model, test.images, test.truth, prompts_for, true);
  const double secs = seconds_since(t0);
  return {single.mean >= 0.90 && secs < 300.0,
          fmt("zero-shot accuracy %.4f (std %.4f, %zu prompt seeds; ensemble %.4f) on 500 held-out images; "
              "train %.1f s, total %.1f s",
              single.mean, single.stddev, single.runs.size(), ensemble.mean, train_secs, secs)};
}

Outcome soft_vs_hard_under_duplicates() {
  // Skewed class frequencies put ~30% of off-diagonal batch pairs in the
  // same class (sum of squared weights = 0.2994).
  SyntheticCorpusSpec spec;
  spec.class_weights = {0.47, 0.21, 0.12, 0.10, 0.10};
  TrainConfig base = TrainConfig::desk_scale();
  base.sampler = SamplerKind::Paired;
  const auto test = held_out(base, 500, 77);

  std::ostringstream detail;
  bool pass = true;
  double dup_fraction = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto corpus = generate_synthetic_corpus(spec, 300 + seed);
    relabel_texts(corpus.texts);
    double acc[2];
    for (int k = 0; k < 2; ++k) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.loss = k == 0 ? LossKind::Semantic : LossKind::InfoNCE;
      Trainer trainer(cfg, corpus.images, corpus.texts);
      if (k == 0) {
        std::size_t dup = 0, off = 0;
        for (std::uint64_t s = 0; s < trainer.total_steps(); ++s) {
          const auto b = trainer.batch_at(s);
          for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j)
              if (i != j) {
                ++off;
                dup += corpus.images.records[b.images[i]].label == corpus.texts.records[b.texts[j]].label;
              }
        }
        dup_fraction = static_cast<double>(dup) / static_cast<double>(off);
        pass = pass && std::abs(dup_fraction - 0.30) <= 0.03;
      }
      trainer.run();
      acc[k] = zero_shot_runs(trainer.model(), test.images, test.truth, prompts_for, false).mean;
    }
    pass = pass && acc[0] >= acc[1];
    detail << fmt("seed %llu: soft %.4f vs hard %.4f (duplicates %.3f); ", static_cast<unsigned long long>(seed),
                  acc[0], acc[1], dup_fraction);
  }
  std::string d = detail.str();
  d.resize(d.size() - 2);
  return {pass, d};
}

Outcome retrieval_oracle() {
  std::mt19937_64 g(110);
  const auto q = oracle::random_unit_rows(20, 8, g), c = oracle::random_unit_rows(50, 8, g);
  std::vector<std::size_t> qc(20), cc(50);
  std::vector<int> qi(20), ci(50);
  std::uniform_int_distribution<int> cls(0, 4);
  for (std::size_t i = 0; i < 20; ++i) qc[i] = static_cast<std::size_t>(qi[i] = cls(g));
  for (std::size_t i = 0; i < 50; ++i) cc[i] = static_cast<std::size_t>(ci[i] = cls(g));
  const std::vector<std::size_t> ks{1, 2, 5, 10, 50};
  const auto r = retrieve_embeddings(to_matrix(q), to_matrix(c), qc, cc, ks);
  oracle::Mat scores = oracle::zeros(20, 50);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 50; ++j)
      for (std::size_t k = 0; k < 8; ++k) scores[i][j] += q[i][k] * c[j][k];
  bool exact = true;
  for (std::size_t k = 0; k < ks.size(); ++k) exact = exact && r.precision[k] == oracle::precision_at_k(scores, qi, ci, ks[k]);

  // Random embeddings against a balanced 5-class candidate set.
  const std::size_t nq = 1000, nc = 500;
  std::vector<std::size_t> rq(nq), rc(nc);
  for (std::size_t i = 0; i < nq; ++i) rq[i] = i % 5;
  for (std::size_t i = 0; i < nc; ++i) rc[i] = i % 5;
  const auto rand = retrieve_embeddings(to_matrix(oracle::random_unit_rows(nq, 32, g)),
                                        to_matrix(oracle::random_unit_rows(nc, 32, g)), rq, rc, default_k_list());
  bool baseline = true;
  std::string p;
  for (std::size_t k = 0; k < rand.ks.size(); ++k) {
    baseline = baseline && std::abs(rand.precision[k] - 0.2) <= 0.03;
    p += fmt(" P@%zu=%.4f", rand.ks[k], rand.precision[k]);
  }
  return {exact && baseline,
          fmt("20x50 oracle %s; random baseline over %zu queries:%s", exact ? "exact" : "MISMATCH", nq, p.c_str())};
}

Outcome determinism() {
  const TrainConfig cfg = TrainConfig::desk_scale();
  SyntheticCorpusSpec spec;
  std::string streams[2];
  for (auto& s : streams) {
    auto corpus = generate_synthetic_corpus(spec, 2024);
    relabel_texts(corpus.texts);
    std::ostringstream out;
    train(cfg, corpus.images, corpus.texts, &out);
    s = out.str();
  }
  const auto lines = static_cast<std::size_t>(std::count(streams[0].begin(), streams[0].end(), '\n'));
  return {!streams[0].empty() && streams[0] == streams[1],
          fmt("%zu metric lines, %zu bytes, streams %s", lines, streams[0].size(),
              streams[0] == streams[1] ? "bitwise identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"InfoNCE reduction", infonce_reduction},
      {"soft-target stochasticity", soft_target_stochasticity},
      {"combinatorial expansion", combinatorial_expansion},
      {"cross-entropy oracle", cross_entropy_oracle},
      {"false-negative equalization", false_negative_equalization},
      {"labeler fixture", labeler_fixture},
      {"synthetic end-to-end", synthetic_end_to_end},
      {"soft vs hard targets under duplicates", soft_vs_hard_under_duplicates},
      {"retrieval oracle", retrieval_oracle},
      {"determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k + 1 << ". " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
