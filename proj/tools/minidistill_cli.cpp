// minidistill command-line tool. Exit codes: 0 success, 1 usage error,
// 2 data error, 3 internal error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "minidistill/minidistill.hpp"

using namespace minidistill;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct ModelFlags {
  std::size_t layers;
  std::size_t dim;
  std::size_t heads;
  std::size_t ffn = 0;  // 0 = 4 * dim
  std::size_t max_seq = 128;

  ModelConfig to_config(std::size_t vocab_size) const {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = dim;
    c.num_heads = heads;
    c.ffn_dim = ffn == 0 ? 4 * dim : ffn;
    c.max_seq_len = max_seq;
    c.vocab_size = vocab_size;
    return c;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--layers", f.layers, "Encoder layers")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--dim", f.dim, "Hidden dimension")->capture_default_str();
  cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--ffn", f.ffn, "Feed-forward width (0 = 4 x dim)")->capture_default_str();
  cmd->add_option("--max-seq", f.max_seq, "Maximum tokens per sentence")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_training_flags(CLI::App* cmd, DistillConfig& c) {
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--batch", c.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--lr", c.peak_lr, "Peak learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--warmup", c.warmup_fraction, "Fraction of steps spent in linear warmup")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--seed", c.seed, "Seed for initialisation and shuffling")->capture_default_str();
}

// Prints every option of the chosen subcommand, explicit or defaulted, as one
// JSON line so a run can be reproduced from its log.
void print_effective_config(const CLI::App* cmd) {
  nlohmann::json j;
  j["command"] = cmd->get_name();
  for (const auto* opt : cmd->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames()[0].starts_with("help")) continue;
    const auto& res = opt->results();
    if (res.empty()) {
      j[opt->get_lnames()[0]] = opt->get_default_str();
    } else if (res.size() == 1) {
      j[opt->get_lnames()[0]] = res[0];
    } else {
      j[opt->get_lnames()[0]] = res;
    }
  }
  std::cout << "config " << j.dump() << '\n';
}

std::vector<std::string> non_blank_lines(const std::string& path) {
  std::vector<std::string> out;
  for (auto& line : detail::read_lines(path))
    if (!detail::trim(line).empty()) out.push_back(std::move(line));
  if (out.empty()) throw InvalidInput("'" + path + "' holds no non-blank lines");
  return out;
}

void write_history(const TrainingHistory& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << nlohmann::json{{"epoch_mean_loss", h.epoch_mean_loss}, {"steps", h.steps}}.dump(2) << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

void print_history(const TrainingHistory& h) {
  for (std::size_t e = 0; e < h.epoch_mean_loss.size(); ++e)
    std::printf("epoch %zu mean_loss %.6f\n", e + 1, h.epoch_mean_loss[e]);
}

// ---- build-vocab ----

struct BuildVocabArgs {
  std::vector<std::string> corpora;
  std::size_t size = 30000;
  double alpha = 0.7;
  std::size_t min_freq = 2;
  std::size_t sample = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void run_build_vocab(const BuildVocabArgs& a) {
  std::vector<LanguageCorpus> corpora;
  std::set<std::string> seen;
  for (const auto& entry : a.corpora) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size())
      throw CLI::ValidationError("--corpus", "expected lang=path, got '" + entry + "'");
    const auto lang = entry.substr(0, eq);
    if (!seen.insert(lang).second) throw CLI::ValidationError("--corpus", "language '" + lang + "' given twice");
    corpora.push_back(load_corpus(lang, entry.substr(eq + 1)));
  }
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& c : corpora) {
    counts[c.lang_id] = c.documents.size();
    total += c.documents.size();
  }
  if (total == 0) throw InvalidInput("all corpora are empty");
  const auto weights = smoothed_language_weights(counts, a.alpha);
  for (const auto& [lang, w] : weights)
    std::printf("weight %s %.4f (%zu documents)\n", lang.c_str(), w, counts.at(lang));

  const std::size_t draws = a.sample == 0 ? total : a.sample;
  std::vector<std::string> docs;
  docs.reserve(draws);
  for (auto& d : sample_corpus(corpora, {a.alpha, a.seed}, draws)) docs.push_back(std::move(d.document));
  const auto vocab = train_wordpiece(docs, a.size, a.min_freq);
  save_vocabulary(vocab, a.out);
  std::printf("wrote %zu tokens to %s\n", vocab.size(), a.out.c_str());
}

// ---- train-teacher ----

struct TrainTeacherArgs {
  std::string mode = "semantic";
  std::string data, vocab, out, history;
  ModelFlags model{2, 64, 4};
  DistillConfig cfg;
};

void run_train_teacher(const TrainTeacherArgs& a) {
  auto vocab = load_vocabulary(a.vocab);
  const auto config = a.model.to_config(vocab.size());
  SentenceEncoder enc{init_model(config, a.cfg.seed), std::move(vocab), {}};
  TrainingHistory h;
  if (a.mode == "semantic") {
    const auto data = load_scored_pairs(a.data);
    if (data.empty()) throw InvalidInput("'" + a.data + "' holds no scored pairs");
    h = train_teacher_semantic(enc, data, a.cfg);
  } else {
    const auto data = load_triplets(a.data);
    if (data.empty()) throw InvalidInput("'" + a.data + "' holds no triplets");
    h = train_teacher_relevance(enc, data, a.cfg);
  }
  print_history(h);
  save_model({ModelKind::kTeacher, std::move(enc.model), std::nullopt, std::move(enc.vocab), enc.tokenizer}, a.out);
  const auto history = a.history.empty() ? a.out + ".history.json" : a.history;
  write_history(h, history);
  std::printf("wrote %s and %s\n", a.out.c_str(), history.c_str());
}

// ---- fit-pca ----

struct FitPcaArgs {
  std::string model, sentences, out;
  std::size_t dim = 128;
};

void run_fit_pca(const FitPcaArgs& a) {
  auto bundle = load_model(a.model);
  const auto sentences = non_blank_lines(a.sentences);
  const auto x = teacher_embedding_matrix(bundle.encoder(), sentences);
  bundle.projection = fit_pca(x, a.dim);
  const auto& ev = bundle.projection->explained_variance;
  double kept = 0.0;
  for (double v : ev) kept += v;
  std::printf("fitted %zu components on %zu sentences; retained variance %.6g\n", a.dim, sentences.size(), kept);
  const auto out = a.out.empty() ? a.model : a.out;
  save_model(bundle, out);
  std::printf("wrote %s\n", out.c_str());
}

// ---- distill ----

struct DistillArgs {
  std::string teacher, pairs, vocab, out, history;
  ModelFlags model{1, 0, 2};
  DistillConfig cfg;
};

void run_distill(const DistillArgs& a) {
  const auto teacher_bundle = load_model(a.teacher);
  const auto teacher = teacher_bundle.encoder();
  const auto pairs = load_tsv_pairs(a.pairs);
  if (pairs.empty()) throw InvalidInput("'" + a.pairs + "' holds no sentence pairs");
  std::vector<std::string> sources;
  for (const auto& p : pairs) sources.push_back(p.source_text);
  const auto cache = cache_teacher_embeddings(teacher, teacher_bundle.projection, sources);
  std::printf("cached %zu teacher embeddings of dimension %zu\n", cache.size(), cache.dim());

  auto vocab = a.vocab.empty() ? *teacher_bundle.vocab : load_vocabulary(a.vocab);
  ModelFlags flags = a.model;
  if (flags.dim == 0) flags.dim = cache.dim();
  SentenceEncoder student{init_model(flags.to_config(vocab.size()), a.cfg.seed), std::move(vocab), {}};
  const auto h = distill_student(student, cache, pairs, a.cfg);
  print_history(h);
  save_model({ModelKind::kStudent, std::move(student.model), std::nullopt, std::move(student.vocab), student.tokenizer},
             a.out);
  const auto history = a.history.empty() ? a.out + ".history.json" : a.history;
  write_history(h, history);
  std::printf("wrote %s and %s\n", a.out.c_str(), history.c_str());
}

// ---- evaluation ----

struct EvalStsArgs {
  std::string model, pairs, report;
};

void run_eval_sts(const EvalStsArgs& a) {
  const auto enc = load_model(a.model).encoder();
  const std::vector<EvalReport> reports = {evaluate_sts(enc, load_scored_pairs(a.pairs), a.model)};
  std::cout << format_reports(reports);
  if (!a.report.empty()) write_reports(reports, a.report);
}

struct EvalRetrievalArgs {
  std::string model, queries, corpus, qrels, report;
  std::size_t k = 10;
};

void run_eval_retrieval(const EvalRetrievalArgs& a) {
  const auto enc = load_model(a.model).encoder();
  const auto reports =
      evaluate_retrieval(enc, load_id_text(a.queries), load_id_text(a.corpus), load_qrels(a.qrels), a.k, a.model);
  std::cout << format_reports(reports);
  if (!a.report.empty()) write_reports(reports, a.report);
}

// ---- bench ----

struct BenchArgs {
  std::string model, inputs, meter = "null", zone = PlatformCounterMeter::kDefaultZone, report;
  std::size_t runs = 1000;
  std::size_t warmup = 10;
};

void run_bench(const BenchArgs& a) {
  const auto enc = load_model(a.model).encoder();
  std::vector<std::vector<TokenId>> inputs;
  for (const auto& line : non_blank_lines(a.inputs)) inputs.push_back(enc.token_ids(line));
  std::unique_ptr<EnergyMeter> meter;
  if (a.meter == "platform") {
    meter = std::make_unique<PlatformCounterMeter>(a.zone);
  } else {
    meter = std::make_unique<NullMeter>();
  }
  BenchOptions opts;
  opts.warmup_runs = a.warmup;
  auto r = measure(enc.model, inputs, a.runs, *meter, opts);
  r.model_id = a.model;
  r.input_descriptor = a.inputs;
  if (r.meter_warnings > 0) std::fprintf(stderr, "warning: energy meter failed; energy columns unavailable\n");
  std::cout << format_bench_table({r});
  if (!a.report.empty()) {
    std::ofstream out(a.report, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + a.report + "'");
    out << bench_report_to_json(r).dump(2) << '\n';
  }
}

// ---- rank ----

struct RankArgs {
  std::string model, query, docs;
};

void run_rank(const RankArgs& a) {
  const auto enc = load_model(a.model).encoder();
  const auto docs = non_blank_lines(a.docs);
  for (const auto& s : rank_documents_scored(enc, a.query, docs)) std::printf("%zu\t%.6f\n", s.index, s.score);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train, distill, evaluate and benchmark small multilingual sentence encoders."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  BuildVocabArgs bv;
  auto* build_vocab = app.add_subcommand("build-vocab", "Train a wordpiece vocabulary from per-language corpora");
  build_vocab->add_option("--corpus", bv.corpora, "Corpus as lang=path, one document per line (repeatable)")
      ->required();
  build_vocab->add_option("--size", bv.size, "Target vocabulary size")->capture_default_str()->check(CLI::PositiveNumber);
  build_vocab->add_option("--alpha", bv.alpha, "Language smoothing exponent, 0 < alpha <= 1")
      ->capture_default_str()
      ->check(CLI::Validator(
          [](const std::string& s) {
            const double v = std::stod(s);
            return v > 0.0 && v <= 1.0 ? std::string() : "alpha must satisfy 0 < alpha <= 1";
          },
          "(0, 1]"));
  build_vocab->add_option("--min-freq", bv.min_freq, "Minimum pair count for a merge")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  build_vocab->add_option("--sample", bv.sample, "Documents to draw by smoothed sampling (0 = corpus total)")
      ->capture_default_str();
  build_vocab->add_option("--seed", bv.seed, "Sampling seed")->capture_default_str();
  build_vocab->add_option("--out", bv.out, "Output vocabulary file")->required();

  TrainTeacherArgs tt;
  auto* train_teacher = app.add_subcommand("train-teacher", "Train a teacher encoder from scratch");
  train_teacher->add_option("--mode", tt.mode, "semantic (scored pairs) or relevance (triplets)")
      ->capture_default_str()
      ->check(CLI::IsMember({"semantic", "relevance"}));
  train_teacher->add_option("--data", tt.data, "Training file: a<TAB>b<TAB>score[0-5] or q<TAB>pos<TAB>neg")
      ->required();
  train_teacher->add_option("--vocab", tt.vocab, "Vocabulary file")->required();
  add_model_flags(train_teacher, tt.model);
  add_training_flags(train_teacher, tt.cfg);
  train_teacher->add_option("--margin", tt.cfg.triplet_margin, "Triplet margin (relevance mode)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_teacher->add_option("--out", tt.out, "Output model container")->required();
  train_teacher->add_option("--history", tt.history, "Loss history file (default <out>.history.json)");

  FitPcaArgs fp;
  auto* fit = app.add_subcommand("fit-pca", "Attach a PCA projection head to a teacher");
  fit->add_option("--model", fp.model, "Teacher container")->required();
  fit->add_option("--sentences", fp.sentences, "Sentences to fit on, one per line")->required();
  fit->add_option("--dim", fp.dim, "Projection dimension")->capture_default_str()->check(CLI::PositiveNumber);
  fit->add_option("--out", fp.out, "Output container (default: overwrite --model)");

  DistillArgs ds;
  auto* distill = app.add_subcommand("distill", "Distill a student from a teacher over parallel sentence pairs");
  distill->add_option("--teacher", ds.teacher, "Teacher container")->required();
  distill->add_option("--pairs", ds.pairs, "Parallel pairs: source<TAB>target[<TAB>lang]")->required();
  distill->add_option("--vocab", ds.vocab, "Student vocabulary file (default: the teacher's)");
  add_model_flags(distill, ds.model);
  distill->get_option("--dim")->description("Hidden dimension (0 = teacher output dimension)");
  add_training_flags(distill, ds.cfg);
  distill->add_option("--out", ds.out, "Output student container")->required();
  distill->add_option("--history", ds.history, "Loss history file (default <out>.history.json)");

  EvalStsArgs es;
  auto* eval_sts = app.add_subcommand("eval-sts", "Spearman rho x 100 on scored sentence pairs");
  eval_sts->add_option("--model", es.model, "Model container")->required();
  eval_sts->add_option("--pairs", es.pairs, "Pairs: a<TAB>b<TAB>score[0-5]")->required();
  eval_sts->add_option("--report", es.report, "Optional JSON report file");

  EvalRetrievalArgs er;
  auto* eval_ret = app.add_subcommand("eval-retrieval", "MRR@k, NDCG@k and MAP@100 over a document collection");
  eval_ret->add_option("--model", er.model, "Model container")->required();
  eval_ret->add_option("--queries", er.queries, "Queries: id<TAB>text")->required();
  eval_ret->add_option("--corpus", er.corpus, "Documents: id<TAB>text")->required();
  eval_ret->add_option("--qrels", er.qrels, "Relevance: query_id<TAB>doc_id")->required();
  eval_ret->add_option("--k", er.k, "Cutoff for MRR and NDCG")->capture_default_str()->check(CLI::PositiveNumber);
  eval_ret->add_option("--report", er.report, "Optional JSON report file");

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Latency and energy per forward pass");
  bench->add_option("--model", bn.model, "Model container")->required();
  bench->add_option("--inputs", bn.inputs, "Input sentences, one per line, cycled through")->required();
  bench->add_option("--runs", bn.runs, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bn.warmup, "Untimed runs before measuring")->capture_default_str();
  bench->add_option("--meter", bn.meter, "Energy meter")
      ->capture_default_str()
      ->check(CLI::IsMember({"null", "platform"}));
  bench->add_option("--zone", bn.zone, "Energy counter directory for the platform meter")->capture_default_str();
  bench->add_option("--report", bn.report, "Optional JSON report file");

  RankArgs rk;
  auto* rank = app.add_subcommand("rank", "Order documents by cosine similarity to a query");
  rank->add_option("--model", rk.model, "Model container")->required();
  rank->add_option("--query", rk.query, "Query text")->required();
  rank->add_option("--docs", rk.docs, "Documents, one per line")->required();

  const std::vector<std::pair<CLI::App*, std::function<void()>>> handlers = {
      {build_vocab, [&] { run_build_vocab(bv); }},   {train_teacher, [&] { run_train_teacher(tt); }},
      {fit, [&] { run_fit_pca(fp); }},               {distill, [&] { run_distill(ds); }},
      {eval_sts, [&] { run_eval_sts(es); }},         {eval_ret, [&] { run_eval_retrieval(er); }},
      {bench, [&] { run_bench(bn); }},               {rank, [&] { run_rank(rk); }},
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto chosen = app.get_subcommands();
    std::cerr << '\n' << (chosen.empty() ? app.help() : chosen.front()->help());
    return kExitUsage;
  }

  try {
    for (const auto& [cmd, run] : handlers) {
      if (!cmd->parsed()) continue;
      print_effective_config(cmd);
      run();
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto* cmd : app.get_subcommands()) std::cerr << '\n' << cmd->help();
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IntegrityError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const VersionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const InvalidInput& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return 0;
}
