#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pivotkit/corpus.hpp"
#include "pivotkit/encoder.hpp"
#include "pivotkit/error.hpp"
#include "pivotkit/injection.hpp"
#include "pivotkit/kg.hpp"
#include "pivotkit/pivot_bank.hpp"
#include "pivotkit/stopwords.hpp"
#include "pivotkit/synthetic.hpp"
#include "pivotkit/trainer.hpp"

namespace pivotkit::cli {

namespace fs = std::filesystem;

/// Everything a command can read. One flat namespace so that a single config
/// file (key = value, dashed keys) drives every command.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = ".";

  std::vector<std::string> source, target, test, input;
  std::string stopwords;  // empty: bundled English list
  std::size_t min_count = 10;
  std::string pool, kg, pivots, run;

  std::string provider = "builtin";
  std::string attention, checkpoint;
  double kg_threshold = 0.3;
  bool normalize_rows = false;
  std::size_t mlm_steps = 200;
  std::size_t mlm_batch = 16;
  double mlm_lr = 3e-3;

  std::size_t dev_size = 400;
  std::string model = "best";
  std::size_t top = 20;

  std::string optimizer = "adam";
  std::string pivot_refresh = "epoch";
  TrainConfig train;
};

inline void add_options(CLI::App& app, RunConfig& c) {
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--out-dir", c.out_dir, "Output directory");

  app.add_option("--source", c.source, "Source-domain corpus files")->check(CLI::ExistingFile);
  app.add_option("--target", c.target, "Target-domain corpus files")->check(CLI::ExistingFile);
  app.add_option("--test", c.test, "Labeled evaluation corpus files")->check(CLI::ExistingFile);
  app.add_option("--input", c.input, "Corpus files to inject")->check(CLI::ExistingFile);
  app.add_option("--stopwords", c.stopwords, "Stopword list (default: bundled English list)")
      ->check(CLI::ExistingFile);
  app.add_option("--min-count", c.min_count, "Pool frequency threshold per domain");
  app.add_option("--pool", c.pool, "Candidate pool file")->check(CLI::ExistingFile);
  app.add_option("--kg", c.kg, "Knowledge graph file")->check(CLI::ExistingFile);
  app.add_option("--pivots", c.pivots, "Pivot list file")->check(CLI::ExistingFile);
  app.add_option("--run", c.run, "Run directory written by train")->check(CLI::ExistingDirectory);

  app.add_option("--provider", c.provider, "Attention provider")
      ->check(CLI::IsMember({"builtin", "file"}));
  app.add_option("--attention", c.attention, "Attention file (provider=file)")
      ->check(CLI::ExistingFile);
  app.add_option("--checkpoint", c.checkpoint, "Encoder checkpoint for the builtin provider")
      ->check(CLI::ExistingFile);
  app.add_option("--kg-threshold", c.kg_threshold, "Minimum fact confidence");
  app.add_flag("--normalize-rows", c.normalize_rows, "Row-normalize attention before extraction");
  app.add_option("--mlm-steps", c.mlm_steps, "Masked-word warmup steps for the builtin provider");
  app.add_option("--mlm-batch", c.mlm_batch, "Warmup batch size");
  app.add_option("--mlm-lr", c.mlm_lr, "Warmup step size");

  app.add_option("--dev-size", c.dev_size, "Labeled source documents held out for dev");
  app.add_option("--model", c.model, "Which model of a run to use")
      ->check(CLI::IsMember({"best", "final"}));
  app.add_option("--top", c.top, "Pivots to print");

  auto& t = c.train;
  app.add_option("--batch-size", t.batch_size);
  app.add_option("--lr", t.lr);
  app.add_option("--optimizer", c.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  app.add_option("--warmup", t.warmup);
  app.add_option("--epochs", t.epochs);
  app.add_option("--k", t.k, "Number of pivots");
  app.add_option("--pseudo-threshold", t.pseudo_threshold);
  app.add_option("--pseudo-labeling", t.pseudo_labeling);
  app.add_option("--bank-lr", t.bank_lr, "1 - alpha of the memory bank update");
  app.add_option("--classifier-update-period", t.classifier_update_period);
  app.add_option("--pivot-refresh", c.pivot_refresh)->check(CLI::IsMember({"epoch", "steps", "off"}));
  app.add_option("--refresh-every", t.refresh_every);
  app.add_option("--scl", t.scl);
  app.add_option("--scl-lambda", t.scl_lambda);
  app.add_option("--scl-warmup", t.scl_warmup);
  app.add_option("--max-facts", t.max_facts);
  app.add_option("--max-seq-len", t.max_seq_len);
  app.add_option("--embed-dim", t.encoder.embed_dim);
  app.add_option("--layers", t.encoder.layers);
  app.add_option("--heads", t.encoder.heads);
  app.add_option("--ffn-dim", t.encoder.ffn_dim);
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

inline WordSet stopwords(const RunConfig& c) {
  return c.stopwords.empty() ? english_stopwords() : load_word_list(c.stopwords);
}

inline DomainCorpus corpus(const std::vector<std::string>& paths, const char* flag,
                           std::string domain) {
  require(!paths.empty(), std::string(flag) + " is required");
  return load_corpus(std::vector<fs::path>(paths.begin(), paths.end()), std::move(domain));
}

inline fs::path out_path(const RunConfig& c, const char* name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

inline CandidatePool pool(const RunConfig& c, const DomainCorpus& source,
                          const DomainCorpus& target) {
  if (!c.pool.empty()) return load_pool(c.pool);
  return build_candidate_pool(source, target, c.min_count, stopwords(c));
}

inline EncoderConfig encoder_config(const RunConfig& c, const Vocabulary& vocab) {
  EncoderConfig ec = c.train.encoder;
  ec.vocab_size = vocab.size();
  ec.max_soft_pos = std::max(ec.max_soft_pos, c.train.max_seq_len + 3);
  return ec;
}

/// Encoder used by the builtin provider: a checkpoint, or seeded weights
/// warmed up with masked-word prediction on the target text.
inline ModelParams attention_model(const RunConfig& c, const Vocabulary& vocab,
                                   const DomainCorpus& target) {
  if (!c.checkpoint.empty()) {
    auto p = load_checkpoint(c.checkpoint);
    require(p.config().vocab_size == vocab.size(),
            "checkpoint vocabulary size " + std::to_string(p.config().vocab_size) +
                " does not match corpus vocabulary size " + std::to_string(vocab.size()));
    return p;
  }
  auto p = ModelParams::init_uniform(encoder_config(c, vocab), c.seed);
  pretrain_mlm(p, target.unlabeled(), vocab, c.mlm_steps, c.mlm_batch, c.mlm_lr, c.seed,
               c.train.max_seq_len);
  return p;
}

inline AttentionProvider builtin_provider(std::shared_ptr<const ModelParams> params,
                                          std::shared_ptr<const Vocabulary> vocab) {
  return [params, vocab](const SentenceRef& ref) {
    return attention_dump(*params, *vocab, ref.words);
  };
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

/// Effective configuration in the --config format. Unset paths and empty
/// lists are left out so the file loads back unchanged.
inline std::string config_snapshot(const CLI::App& app) {
  std::istringstream in(app.config_to_str(true, false));
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.ends_with("=\"\"") || line.ends_with("=\"{}\"")) continue;
    out += line + '\n';
  }
  return out;
}

/// Pivots for inject: an explicit list, or the initial top-K from the pool
/// and the labeled source documents.
inline PivotSet initial_pivots(const RunConfig& c) {
  if (!c.pivots.empty()) return load_pivot_list(c.pivots);
  require(!c.pool.empty() && !c.source.empty(), "inject needs --pivots or both --pool and --source");
  const auto source = corpus(c.source, "--source", "source");
  const auto p = load_pool(c.pool);
  const double alpha = 1.0 - c.train.bank_lr;
  const auto s = MemoryBank::from_labeled("source", alpha, p, source.labeled());
  const auto t = MemoryBank::from_labeled("target", alpha, p, source.labeled());
  return select_pivots(p, s, t, c.train.k);
}

struct RunArtifacts {
  Vocabulary vocab;
  KnowledgeGraph kg;
  ModelParams params;
  PivotSet pivots;
  TrainConfig train;
};

inline RunArtifacts load_run(const RunConfig& c) {
  require(!c.run.empty(), "--run is required");
  const fs::path dir = c.run;
  const bool best = c.model == "best" && fs::exists(dir / "model.ckpt");
  auto vocab = Vocabulary::load(dir / "vocab.txt");
  auto kg = load_kg(dir / "kg.tsv");
  auto params = load_checkpoint(dir / (best ? "model.ckpt" : "final.ckpt"));
  auto pivots = load_pivot_list(dir / (best ? "pivots.txt" : "final_pivots.txt"));
  std::ifstream in(dir / "run.json");
  require(static_cast<bool>(in), "cannot open " + (dir / "run.json").string());
  const auto meta = nlohmann::json::parse(in);
  TrainConfig t;
  t.max_facts = meta.at("max_facts").get<std::size_t>();
  t.max_seq_len = meta.at("max_seq_len").get<std::size_t>();
  return {std::move(vocab), std::move(kg), std::move(params), std::move(pivots), t};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline void cmd_generate_synthetic(const RunConfig& c, std::ostream& out) {
  SyntheticSpec spec;
  spec.seed = c.seed;
  const auto syn = generate_synthetic(spec);
  write_corpus_file(detail::out_path(c, "source.jsonl"), syn.source.documents());
  write_corpus_file(detail::out_path(c, "target.jsonl"), syn.target.documents());
  write_corpus_file(detail::out_path(c, "target_test.jsonl"), syn.target_test);
  nlohmann::json planted{{"shared", syn.shared()}, {"domain_specific", syn.domain_specific()}};
  detail::write_text(detail::out_path(c, "planted.json"), planted.dump(1) + "\n");
  out << "wrote synthetic corpora to " << c.out_dir << '\n';
}

inline void cmd_build_pool(const RunConfig& c, std::ostream& out) {
  const auto source = detail::corpus(c.source, "--source", "source");
  const auto target = detail::corpus(c.target, "--target", "target");
  const auto p = build_candidate_pool(source, target, c.min_count, detail::stopwords(c));
  save_pool(detail::out_path(c, "pool.txt"), p);
  out << "pool: " << p.size() << " words\n";
}

inline void cmd_dump_attention(const RunConfig& c, std::ostream& out) {
  const auto source = detail::corpus(c.source, "--source", "source");
  const auto target = detail::corpus(c.target, "--target", "target");
  const auto vocab = Vocabulary::build({&source, &target});
  const auto params = detail::attention_model(c, vocab, target);
  AttentionFileWriter writer(detail::out_path(c, "attention.jsonl"));
  std::size_t n = 0;
  for (const auto& doc : target.unlabeled())
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      if (doc.sentences[i].empty()) continue;
      writer.write(SentenceRef{doc.id, i, doc.sentences[i]}.id(),
                   attention_dump(params, vocab, doc.sentences[i]));
      ++n;
    }
  out << "attention: " << n << " sentences\n";
}

inline void cmd_extract_kg(const RunConfig& c, std::ostream& out) {
  const auto target = detail::corpus(c.target, "--target", "target");
  CandidatePool p;
  if (!c.pool.empty()) {
    p = load_pool(c.pool);
  } else {
    const auto source = detail::corpus(c.source, "--source (or --pool)", "source");
    p = detail::pool(c, source, target);
  }
  KgOptions opts{c.kg_threshold, detail::stopwords(c), c.normalize_rows};
  AttentionProvider provider;
  if (c.provider == "file") {
    detail::require(!c.attention.empty(), "provider=file requires --attention");
    provider = [fp = std::make_shared<AttentionFileProvider>(c.attention)](const SentenceRef& r) {
      return (*fp)(r);
    };
  } else {
    // Same vocabulary as train when the source corpus is given.
    std::optional<DomainCorpus> source;
    if (!c.source.empty()) source = detail::corpus(c.source, "--source", "source");
    auto vocab = std::make_shared<Vocabulary>(
        source ? Vocabulary::build({&*source, &target}) : Vocabulary::build({&target}));
    auto params = std::make_shared<ModelParams>(detail::attention_model(c, *vocab, target));
    provider = detail::builtin_provider(params, vocab);
  }
  const auto kg = build_kg(target, p, provider, opts);
  save_kg(detail::out_path(c, "kg.tsv"), kg);
  out << "kg: " << kg.size() << " facts\n";
}

inline void cmd_inject(const RunConfig& c, std::ostream& out) {
  detail::require(!c.kg.empty(), "--kg is required");
  const auto kg = load_kg(c.kg);
  const auto pivots = detail::initial_pivots(c);
  const auto docs = detail::corpus(c.input, "--input", "input");
  std::ofstream dump(detail::out_path(c, "injection.jsonl"));
  if (!dump) throw Error("cannot write injection dump");
  dump << injection_header().dump() << '\n';
  std::size_t n = 0;
  for (const auto& doc : docs.documents())
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      const std::string id = SentenceRef{doc.id, i, doc.sentences[i]}.id();
      const auto tree = inject(doc.sentences[i], kg, pivots, c.train.max_facts);
      dump << injection_record(id, flatten(tree, {c.train.max_seq_len, id})).dump() << '\n';
      ++n;
    }
  out << "injected: " << n << " sentences\n";
}

inline void cmd_train(const RunConfig& c, const std::string& config_text, std::ostream& out) {
  detail::require(!c.kg.empty(), "--kg is required");
  const auto source = detail::corpus(c.source, "--source", "source");
  const auto target = detail::corpus(c.target, "--target", "target");
  const auto vocab = Vocabulary::build({&source, &target});
  const auto p = detail::pool(c, source, target);
  const auto kg = load_kg(c.kg);

  auto split = split_dev(source, c.dev_size, c.seed);
  TrainData data{std::move(split.train), std::move(split.dev), source.unlabeled(),
                 target.unlabeled()};
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.optimizer = parse_optimizer(c.optimizer);
  tc.pivot_refresh = parse_pivot_refresh(c.pivot_refresh);
  Trainer trainer(tc, vocab, p, kg, std::move(data));
  trainer.run();

  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  const auto& st = trainer.state();
  detail::write_text(dir / "config.ini", config_text);
  vocab.save(dir / "vocab.txt");
  save_kg(dir / "kg.tsv", kg);
  save_pool(dir / "pool.txt", p);
  save_pivot_list(dir / "initial_pivots.txt", st.initial_pivots);
  save_pivot_list(dir / "final_pivots.txt", st.pivots);
  save_banks(dir / "final_banks.tsv", st.bank_source, st.bank_target);
  save_checkpoint(dir / "final.ckpt", st.params);
  const auto& best = st.best;
  if (best) {
    save_pivot_list(dir / "pivots.txt", best->pivots);
    save_banks(dir / "banks.tsv", best->bank_source, best->bank_target);
    save_checkpoint(dir / "model.ckpt", best->params);
  }
  write_metrics(dir / "metrics.jsonl", st.metrics);
  nlohmann::json meta{{"steps", st.step},
                      {"epochs", tc.epochs},
                      {"max_facts", tc.max_facts},
                      {"max_seq_len", tc.max_seq_len},
                      {"vocab_size", vocab.size()},
                      {"pool_size", p.size()},
                      {"kg_facts", kg.size()},
                      {"pivot_jaccard_initial_final", jaccard(st.initial_pivots, st.pivots)}};
  if (best) {
    meta["best_epoch"] = best->epoch;
    meta["best_dev_accuracy"] = best->dev_accuracy;
  }
  detail::write_text(dir / "run.json", meta.dump(1) + "\n");
  out << "trained " << st.step << " steps";
  if (best) out << ", best dev accuracy " << format_double(best->dev_accuracy, 6);
  out << '\n';
}

inline void cmd_eval(const RunConfig& c, std::ostream& out) {
  const auto run = detail::load_run(c);
  const auto test = detail::corpus(c.test, "--test", "test");
  const auto docs = test.documents();
  for (const auto& d : docs) detail::require(d.label.has_value(), "test document " + d.id + " has no label");
  const double acc = evaluate(run.params, docs, run.vocab, run.kg, run.pivots,
                              {run.train.max_facts, run.train.max_seq_len});
  const std::string line = "accuracy " + format_double(acc, 6) + " (" +
                           std::to_string(static_cast<std::size_t>(std::lround(acc * docs.size()))) +
                           "/" + std::to_string(docs.size()) + ")";
  detail::write_text(detail::out_path(c, "accuracy.txt"), line + "\n");
  out << line << '\n';
}

inline void cmd_inspect_pivots(const RunConfig& c, std::ostream& out) {
  detail::require(!c.run.empty(), "--run is required");
  const fs::path dir = c.run;
  const bool best = c.model == "best" && fs::exists(dir / "pivots.txt");
  const auto pivots = load_pivot_list(dir / (best ? "pivots.txt" : "final_pivots.txt"));
  const auto initial = load_pivot_list(dir / "initial_pivots.txt");
  const auto [s, t] = load_banks(dir / (best ? "banks.tsv" : "final_banks.tsv"), 1.0);

  // Ranked by the snapshot's banks, which moved on after the last selection.
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& w : pivots.words()) ranked.emplace_back(-behavior_score(w, s, t), w);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t n = std::min(c.top, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = ranked[i].second;
    out << w << '\t' << format_double(behavior_score(w, s, t), 6) << '\t'
        << format_double(s.score(w), 6) << '\t' << format_double(t.score(w), 6) << '\n';
  }

  std::ostringstream diff;
  diff << "initial " << initial.size() << " learnt " << pivots.size() << " jaccard "
       << format_double(jaccard(initial, pivots), 6) << '\n';
  WordSet added, removed;
  for (const auto& w : pivots.words())
    if (!initial.contains(w)) added.insert(w);
  for (const auto& w : initial.words())
    if (!pivots.contains(w)) removed.insert(w);
  for (const auto& w : added) diff << "+ " << w << '\n';
  for (const auto& w : removed) diff << "- " << w << '\n';
  detail::write_text(detail::out_path(c, "pivot_diff.txt"), diff.str());
}

/// Parses argv and runs one subcommand. Failures print one line to `err`
/// and return nonzero.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Pivot-based cross-domain sentiment pipeline", "pivotkit"};
  app.set_config("--config", "", "Flat key = value config file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  RunConfig c;
  add_options(app, c);
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"generate-synthetic", "Write a planted two-domain corpus"},
      {"build-pool", "Build the candidate pivot pool"},
      {"dump-attention", "Write builtin-encoder attention for the target sentences"},
      {"extract-kg", "Extract the target-domain knowledge graph"},
      {"inject", "Dump injected and flattened sentences"},
      {"train", "Train and write a run directory"},
      {"eval", "Report accuracy of a run on a labeled corpus"},
      {"inspect-pivots", "Print learnt pivots and the initial-vs-learnt diff"},
  };
  for (const auto& cmd : commands) app.add_subcommand(cmd.name, cmd.help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "pivotkit: error: " << e.what() << '\n';
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    c.train.validate();
    if (name == "generate-synthetic") cmd_generate_synthetic(c, out);
    else if (name == "build-pool") cmd_build_pool(c, out);
    else if (name == "dump-attention") cmd_dump_attention(c, out);
    else if (name == "extract-kg") cmd_extract_kg(c, out);
    else if (name == "inject") cmd_inject(c, out);
    else if (name == "train") cmd_train(c, detail::config_snapshot(app), out);
    else if (name == "eval") cmd_eval(c, out);
    else cmd_inspect_pivots(c, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    err << "pivotkit " << name << ": error: " << msg << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pivotkit::cli
