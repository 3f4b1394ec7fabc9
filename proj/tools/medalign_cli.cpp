#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "medalign/dataset_io.hpp"
#include "medalign/evaluation.hpp"
#include "medalign/synthetic.hpp"
#include "medalign/train.hpp"

using namespace medalign;

namespace {

void emit(const std::string& text, const std::string& path) {
  std::cout << text;
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report", path);
  out << text;
}

void print_warnings(const IngestResult& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

ReportLabeler make_labeler(const std::string& lexicon_path) {
  return lexicon_path.empty() ? ReportLabeler() : ReportLabeler(load_lexicon(lexicon_path));
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> ks;
  for (const auto& item : detail::split_list(s)) ks.push_back(detail::parse_number<std::size_t>("--k", item));
  if (ks.empty()) throw ConfigError("--k needs at least one value");
  return ks;
}

// Images of an evaluation directory with a single-class label each.
struct EvalImages {
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  std::vector<Image> images;
};

EvalImages read_eval_images(const std::string& dir, const Checkpoint& ck) {
  IngestResult scratch;
  EvalImages out;
  const auto& aug = ck.config.augment;
  for (auto& r : read_images(dir, scratch, 0)) {
    if (r.class_name.empty()) throw FormatError("image '" + r.id + "' in " + dir + " has no class");
    out.ids.push_back(r.id);
    out.class_names.push_back(r.class_name);
    out.images.push_back(eval_transform(r.pixels, aug.resize_to, aug.crop_to));
  }
  print_warnings(scratch);
  return out;
}

std::vector<std::size_t> class_indices(const std::vector<std::string>& names, const PromptSet& prompts) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(prompts.index_of(n));
  return idx;
}

std::vector<std::size_t> class_indices(const std::vector<std::string>& names, std::vector<std::string>& classes) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    auto it = std::find(classes.begin(), classes.end(), n);
    if (it == classes.end()) {
      classes.push_back(n);
      it = classes.end() - 1;
    }
    idx.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  return idx;
}

std::vector<FindingType> findings_of(const std::vector<std::string>& names) {
  std::vector<FindingType> out;
  const ReportLabeler labeler;
  for (const auto& n : names) {
    const auto l = labeler.class_to_label(n);
    if (l.count() != 1) throw ConfigError("class '" + n + "' does not name a single finding");
    out.push_back(l.findings().front());
  }
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_extract_labels(const std::string& input, const std::string& lexicon, const std::string& output,
                       const std::string& uncertain) {
  const auto labeler = make_labeler(lexicon);
  const auto policy = parse_uncertainty_policy(uncertain);
  std::ofstream out(output);
  if (!out) throw IoError("cannot write", output);
  IngestResult scratch;
  std::size_t rows = 0;
  if (fs::path(input).extension() == ".csv") {
    for (const auto& [id, cls] : read_label_csv(input, scratch, 0)) {
      const auto label = labeler.class_to_label(cls);
      out << nlohmann::json{{"id", id}, {"class_name", cls}, {"label", label.to_array()}}.dump() << "\n";
      ++rows;
    }
  } else {
    for (const auto& rep : read_texts(input, scratch, 0)) {
      const auto sentences = split_report(rep.text);
      for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto mentions = labeler.tag_sentence(sentences[s]);
        nlohmann::json trace = nlohmann::json::array();
        for (const auto& m : mentions)
          trace.push_back({{"finding", name_of(m.finding)},
                           {"begin", m.span.begin},
                           {"end", m.span.end},
                           {"polarity", to_string(m.polarity)}});
        out << nlohmann::json{{"id", rep.id + "#" + std::to_string(s)},
                              {"report_id", rep.id},
                              {"sentence", sentences[s]},
                              {"label", sentence_to_label(mentions, policy).to_array()},
                              {"mentions", trace}}
                   .dump()
            << "\n";
        ++rows;
      }
    }
  }
  print_warnings(scratch);
  std::cerr << "wrote " << rows << " rows to " << output << "\n";
  return 0;
}

int cmd_build_matrix(const std::string& images, const std::string& texts, const std::string& out) {
  const auto li = read_label_rows(images);
  const auto lt = read_label_rows(texts);
  write_similarity_matrix(out, li, lt);
  std::cerr << "wrote " << li.size() << " x " << lt.size() << " matrix to " << out << "\n";
  return 0;
}

int cmd_gen_synthetic(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
  const auto spec = spec_path.empty() ? SyntheticCorpusSpec{} : load_synthetic_spec(spec_path);
  const auto corpus = generate_synthetic_corpus(spec, seed);
  std::vector<RawImage> images;
  for (const auto& r : corpus.images.records) images.push_back({r.id, r.study_id, r.label.to_string(), r.pixels});
  std::vector<RawText> texts;
  for (const auto& r : corpus.texts.records) texts.push_back({r.id, r.study_id, r.text, r.label.to_string()});
  write_images(out, images);
  write_texts(fs::path(out) / "texts.jsonl", texts);
  std::cerr << "wrote " << images.size() << " images and " << texts.size() << " sentences to " << out << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& preset, const std::string& images_dir,
                 const std::string& images_adapter, const std::string& texts_dir, const std::string& texts_adapter,
                 const std::string& out, const std::string& metrics_path, const std::string& resume,
                 const std::string& lexicon) {
  TrainConfig base = preset == "desk" ? TrainConfig::desk_scale() : TrainConfig{};
  if (preset != "desk" && preset != "full") throw ConfigError("--preset must be desk or full");
  const TrainConfig cfg = config_path.empty() ? (base.validate(), base) : load_train_config(config_path, base);

  const auto labeler = make_labeler(lexicon);
  IngestOptions opt;
  opt.uncertain = cfg.uncertain;
  auto img = ingest_dataset(images_adapter, images_dir, labeler, opt);
  print_warnings(img);
  const bool shared = texts_dir == images_dir && texts_adapter == images_adapter;
  const IngestResult txt = shared ? img : ingest_dataset(texts_adapter, texts_dir, labeler, opt);
  if (!shared) print_warnings(txt);
  std::cerr << "pools: " << img.images.size() << " images, " << txt.texts.size() << " sentences\n";

  fs::create_directories(out);
  const std::string mpath = metrics_path.empty() ? (fs::path(out) / "metrics.jsonl").string() : metrics_path;
  std::ofstream metrics(mpath, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot write metrics", mpath);
  metrics.precision(17);

  std::unique_ptr<Trainer> trainer;
  if (resume.empty()) {
    trainer = std::make_unique<Trainer>(cfg, img.images, txt.texts);
  } else {
    trainer = std::make_unique<Trainer>(load_checkpoint(resume), img.images, txt.texts);
  }
  trainer->set_metrics_stream(&metrics);
  trainer->set_output_dir(out);
  std::cerr << "training " << trainer->total_steps() << " steps (" << trainer->steps_per_epoch()
            << " per epoch), starting at step " << trainer->current_step() << "\n";
  trainer->run();
  std::cout << "checkpoint = " << out << "\n"
            << "checkpoint_id = " << checkpoint_id(trainer->model()) << "\n"
            << "steps = " << trainer->current_step() << "\n"
            << "tau = " << trainer->model().temperature().tau() << "\n";
  return 0;
}

int cmd_zeroshot(const std::string& ckpt, const std::string& data, const std::string& prompts_path,
                 const std::string& classes_arg, bool ensemble, std::size_t runs, std::uint64_t seed,
                 std::size_t per_class, const std::string& report) {
  const auto ck = load_checkpoint(ckpt);
  const auto ev = read_eval_images(data, ck);
  std::function<PromptSet(std::uint64_t)> prompts_for;
  PromptSet fixed;
  if (!prompts_path.empty()) {
    fixed = load_prompts(prompts_path);
    prompts_for = [&](std::uint64_t) { return fixed; };
  } else {
    std::vector<std::string> names = detail::split_list(classes_arg);
    if (names.empty()) {
      for (const auto& n : ev.class_names)
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
      std::sort(names.begin(), names.end());
    }
    const auto findings = findings_of(names);
    fixed = generate_prompts(findings, per_class, seed);
    prompts_for = [findings, per_class](std::uint64_t s) { return generate_prompts(findings, per_class, s); };
  }
  const auto truth = class_indices(ev.class_names, fixed);
  auto summary = zero_shot_runs(ck.model, ev.images, truth, prompts_for, ensemble, runs, seed);
  emit(summary.to_kv(), report);
  return 0;
}

int cmd_retrieve(const std::string& ckpt, const std::string& queries, const std::string& candidates,
                 const std::string& k_arg, std::size_t bins, const std::string& report) {
  const auto ck = load_checkpoint(ckpt);
  const auto ev = read_eval_images(queries, ck);
  IngestResult scratch;
  const auto texts = read_texts(candidates, scratch, 0);
  print_warnings(scratch);
  std::vector<std::string> classes;
  const auto qc = class_indices(ev.class_names, classes);
  std::vector<std::string> cand_text, cand_class;
  for (const auto& t : texts) {
    if (t.class_name.empty()) throw FormatError("candidate '" + t.id + "' has no class");
    cand_text.push_back(t.text);
    cand_class.push_back(t.class_name);
  }
  const auto cc = class_indices(cand_class, classes);
  const auto ks = parse_k_list(k_arg);
  const auto result = retrieve(ck.model, ev.images, qc, cand_text, cc, ks);
  std::string out = "checkpoint_id = " + ck.id + "\n" + result.to_kv();
  if (bins > 0) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const auto h = similarity_histogram(c, result, bins);
      for (std::size_t b = 0; b < bins; ++b) {
        char line[160];
        std::snprintf(line, sizeof line, "histogram.%zu.%zu = %.4f %.4f %zu\n", c, b, h.edges[b], h.edges[b + 1],
                      h.counts[b]);
        out += line;
      }
      out += "histogram." + std::to_string(c) + ".class = " + classes[c] + "\n";
    }
  }
  emit(out, report);
  return 0;
}

int cmd_finetune(const std::string& ckpt, const std::string& train_dir, const std::string& test_dir, int epochs,
                 double lr, std::uint64_t seed, const std::string& report) {
  const auto ck = load_checkpoint(ckpt);
  const auto tr = read_eval_images(train_dir, ck);
  const auto te = read_eval_images(test_dir, ck);
  std::vector<std::string> classes;
  const auto ytr = class_indices(tr.class_names, classes);
  const auto yte = class_indices(te.class_names, classes);
  ProbeOptions opt;
  opt.epochs = epochs;
  opt.learning_rate = lr;
  opt.seed = seed;
  const auto r = linear_probe(ck.model, tr.images, ytr, te.images, yte, classes, opt);
  emit(r.to_kv(), report);
  return 0;
}

int cmd_export(const std::string& ckpt, const std::string& data, const std::string& out, const std::string& modality) {
  const auto ck = load_checkpoint(ckpt);
  std::vector<std::string> ids, labels;
  Matrix emb;
  if (modality == "image") {
    IngestResult scratch;
    std::vector<Image> imgs;
    for (auto& r : read_images(data, scratch, 0)) {
      ids.push_back(r.id);
      labels.push_back(r.class_name);
      imgs.push_back(eval_transform(r.pixels, ck.config.augment.resize_to, ck.config.augment.crop_to));
    }
    print_warnings(scratch);
    emb = ck.model.embed_images(imgs);
  } else if (modality == "text") {
    IngestResult scratch;
    const fs::path file = fs::is_directory(data) ? fs::path(data) / "texts.jsonl" : fs::path(data);
    std::vector<std::string> texts;
    for (auto& t : read_texts(file, scratch, 0)) {
      ids.push_back(t.id);
      labels.push_back(t.class_name);
      texts.push_back(t.text);
    }
    print_warnings(scratch);
    emb = ck.model.embed_texts(texts);
  } else {
    throw ConfigError("--modality must be image or text");
  }
  export_embeddings(emb, ids, labels, ck.id, modality, out);
  std::cerr << "wrote " << emb.rows() << " x " << emb.cols() << " embeddings to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medalign: semantic image-text contrastive pretraining at desk scale"};
  app.require_subcommand(1);

  std::string input, output, lexicon, uncertain = "affirm";
  auto* extract = app.add_subcommand("extract-labels", "Label report sentences or class names with findings");
  extract->add_option("--input", input, "reports.jsonl (id, text) or labels.csv (id, class_name)")->required();
  extract->add_option("--lexicon", lexicon, "lexicon JSON (default: built-in)");
  extract->add_option("--output", output, "output JSONL")->required();
  extract->add_option("--uncertain", uncertain, "affirm|ignore");

  std::string m_images, m_texts, m_out;
  auto* matrix = app.add_subcommand("build-matrix", "Pool-level semantic similarity matrix");
  matrix->add_option("--images", m_images, "image labels JSONL")->required();
  matrix->add_option("--texts", m_texts, "text labels JSONL")->required();
  matrix->add_option("--out", m_out, "output matrix (float32)")->required();

  std::string g_spec, g_out;
  std::uint64_t g_seed = 0;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a planted-semantics corpus");
  gen->add_option("--spec", g_spec, "key = value corpus spec");
  gen->add_option("--seed", g_seed);
  gen->add_option("--out", g_out)->required();

  std::string p_config, p_preset = "full", p_images, p_texts, p_img_adapter = "synthetic", p_txt_adapter = "synthetic",
                        p_out, p_metrics, p_resume, p_lexicon;
  auto* pre = app.add_subcommand("pretrain", "Train the dual encoder");
  pre->add_option("--config", p_config, "key = value training config");
  pre->add_option("--preset", p_preset, "base settings before --config: full|desk");
  pre->add_option("--images", p_images)->required();
  pre->add_option("--texts", p_texts)->required();
  pre->add_option("--images-adapter", p_img_adapter, "paired-report|image-label|text-only|synthetic");
  pre->add_option("--texts-adapter", p_txt_adapter, "paired-report|image-label|text-only|synthetic");
  pre->add_option("--out", p_out, "checkpoint directory")->required();
  pre->add_option("--metrics", p_metrics, "metrics JSONL (default <out>/metrics.jsonl)");
  pre->add_option("--resume", p_resume, "checkpoint directory to continue from");
  pre->add_option("--lexicon", p_lexicon);

  std::string z_ckpt, z_data, z_prompts, z_classes, z_report;
  bool z_ensemble = false;
  std::size_t z_runs = kDefaultRuns, z_per_class = kDefaultPromptsPerClass;
  std::uint64_t z_seed = 0;
  auto* zs = app.add_subcommand("zeroshot", "Zero-shot prompt classification");
  zs->add_option("--ckpt", z_ckpt)->required();
  zs->add_option("--data", z_data)->required();
  zs->add_option("--prompts", z_prompts, "prompt JSON (default: generated per run)");
  zs->add_option("--classes", z_classes, "comma-separated classes for generated prompts");
  zs->add_flag("--ensemble", z_ensemble);
  zs->add_option("--runs", z_runs);
  zs->add_option("--seed", z_seed);
  zs->add_option("--prompts-per-class", z_per_class);
  zs->add_option("--report", z_report);

  std::string r_ckpt, r_queries, r_candidates, r_k = "1,2,5,10", r_report;
  std::size_t r_bins = 0;
  auto* rt = app.add_subcommand("retrieve", "Image-to-text retrieval with Precision@K");
  rt->add_option("--ckpt", r_ckpt)->required();
  rt->add_option("--queries", r_queries)->required();
  rt->add_option("--candidates", r_candidates, "texts JSONL with class")->required();
  rt->add_option("--k", r_k);
  rt->add_option("--histogram-bins", r_bins, "per-class similarity histogram of top-10 same-class hits");
  rt->add_option("--report", r_report);

  std::string f_ckpt, f_train, f_test, f_report;
  int f_epochs = ProbeOptions{}.epochs;
  double f_lr = ProbeOptions{}.learning_rate;
  std::uint64_t f_seed = 0;
  auto* ft = app.add_subcommand("finetune", "Linear probe on the frozen image encoder");
  ft->add_option("--ckpt", f_ckpt)->required();
  ft->add_option("--train", f_train)->required();
  ft->add_option("--test", f_test)->required();
  ft->add_option("--epochs", f_epochs);
  ft->add_option("--lr", f_lr);
  ft->add_option("--seed", f_seed);
  ft->add_option("--report", f_report);

  std::string e_ckpt, e_data, e_out, e_modality = "image";
  auto* ex = app.add_subcommand("export-embeddings", "Write unit embeddings as float32 plus a JSON sidecar");
  ex->add_option("--ckpt", e_ckpt)->required();
  ex->add_option("--data", e_data)->required();
  ex->add_option("--out", e_out)->required();
  ex->add_option("--modality", e_modality, "image|text");

  std::string d_out;
  auto* dl = app.add_subcommand("dump-lexicon", "Write the built-in lexicon as JSON");
  dl->add_option("--out", d_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) return cmd_extract_labels(input, lexicon, output, uncertain);
    if (*matrix) return cmd_build_matrix(m_images, m_texts, m_out);
    if (*gen) return cmd_gen_synthetic(g_spec, g_seed, g_out);
    if (*pre)
      return cmd_pretrain(p_config, p_preset, p_images, p_img_adapter, p_texts, p_txt_adapter, p_out, p_metrics,
                          p_resume, p_lexicon);
    if (*zs) return cmd_zeroshot(z_ckpt, z_data, z_prompts, z_classes, z_ensemble, z_runs, z_seed, z_per_class, z_report);
    if (*rt) return cmd_retrieve(r_ckpt, r_queries, r_candidates, r_k, r_bins, r_report);
    if (*ft) return cmd_finetune(f_ckpt, f_train, f_test, f_epochs, f_lr, f_seed, f_report);
    if (*ex) return cmd_export(e_ckpt, e_data, e_out, e_modality);
    if (*dl) {
      std::ofstream out(d_out);
      if (!out) throw IoError("cannot write", d_out);
      out << lexicon_to_json(default_lexicon()).dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
