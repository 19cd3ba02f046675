#include "mathlm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "mathlm/errors.hpp"
#include "mathlm/kernels.hpp"
#include "mathlm/model_io.hpp"
#include "mathlm/rerank.hpp"
#include "mathlm/synth.hpp"
#include "mathlm/train.hpp"

namespace mathlm {

namespace {

namespace fs = std::filesystem;

struct Options {
  // shared
  std::uint64_t seed = 0;
  std::string out;
  // prepare / eval
  std::string corpus;
  // train
  std::string model = "tmlm";
  std::string data;
  std::string log;
  std::string precision = "f32";
  std::size_t layers = 2;
  std::size_t order = 3;
  double k = 0.01;
  double lr = 1e-5;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;
  std::size_t epochs = 10;
  std::size_t eval_interval = 0;
  std::size_t sort_window = 0;
  double weight_decay = 0.01;
  double clip = 0.0;
  std::optional<double> dropout;
  std::size_t heads = 0, head_dim = 0, d_embed = 0, d_model = 0, d_ffn = 0, context = 0,
              d_hidden = 0;
  // eval / rerank
  std::string checkpoint;
  std::string vocab;
  std::string candidates;
  std::string dev;
  double alpha = 0.0;
  bool sweep = false;
  // gensynth
  std::string preset = "default";
  std::size_t count = 1000;
};

TmlmConfig tmlm_from(const Options& o, std::size_t vocab_size) {
  auto c = TmlmConfig::reference(o.layers, vocab_size);
  if (o.heads) c.n_heads = o.heads;
  if (o.head_dim) c.head_dim = o.head_dim;
  if (o.d_embed) c.d_embed = o.d_embed;
  if (o.d_model) c.d_model = o.d_model;
  if (o.d_ffn) c.d_ffn = o.d_ffn;
  if (o.context) c.context_len = o.context;
  if (o.dropout) c.dropout = *o.dropout;
  return c;
}

GruConfig gru_from(const Options& o, std::size_t vocab_size) {
  auto c = GruConfig::reference(o.layers, vocab_size);
  if (o.d_embed) c.d_embed = o.d_embed;
  if (o.d_hidden) c.d_hidden = o.d_hidden;
  if (o.dropout) c.dropout = *o.dropout;
  return c;
}

std::string fmt_sig4(double v) {
  std::ostringstream s;
  s << std::showpoint << std::setprecision(4) << v;
  return s.str();
}

int cmd_prepare(const Options& o, std::ostream& out, std::ostream& err) {
  const auto lines = read_lines(o.corpus);
  const auto vocab = Vocab::crohme();
  std::vector<std::string> kept, rejected;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = std::to_string(i + 1) + "\t";
    if (lines[i].find_first_not_of(" \t") == std::string::npos) {
      rejected.push_back(where + "empty line");
      continue;
    }
    try {
      auto norm = normalize(lines[i]);
      tokenize(norm, vocab);
      kept.push_back(std::move(norm));
    } catch (const Error& e) {
      rejected.push_back(where + e.what());
    }
  }
  const auto idx = split_indices(kept.size(), o.seed);
  auto pick = [&](const std::vector<std::size_t>& ids) {
    std::vector<std::string> v;
    v.reserve(ids.size());
    for (auto i : ids) v.push_back(kept[i]);
    return v;
  };
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_vocab(dir / "vocab.txt", vocab);
  write_lines(dir / "train.txt", pick(idx.train));
  write_lines(dir / "valid.txt", pick(idx.validation));
  write_lines(dir / "test.txt", pick(idx.test));
  write_lines(dir / "rejected.txt", rejected);
  err << "prepared " << kept.size() << " of " << lines.size() << " lines: train "
      << idx.train.size() << ", valid " << idx.validation.size() << ", test " << idx.test.size()
      << ", rejected " << rejected.size() << '\n';
  (void)out;
  return kExitOk;
}

CorpusSplit load_split(const fs::path& dir, const Vocab& vocab) {
  CorpusSplit s;
  s.train = read_corpus(dir / "train.txt", vocab);
  s.validation = read_corpus(dir / "valid.txt", vocab);
  s.test = read_corpus(dir / "test.txt", vocab);
  return s;
}

template <typename T>
Checkpoint train_neural(const Options& o, const Vocab& vocab, const CorpusSplit& split,
                        std::ostream& log, std::ostream& err) {
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch_size;
  tc.max_steps = o.max_steps;
  tc.epochs = o.epochs;
  tc.eval_interval = o.eval_interval;
  tc.sort_window = o.sort_window;
  tc.weight_decay = o.weight_decay;
  if (o.clip > 0.0) tc.clip_norm = o.clip;
  tc.seed = o.seed;

  auto run = [&](auto& model) {
    err << "training " << model.kind() << " with " << model.parameter_count()
        << " parameters on " << split.train.size() << " sequences\n";
    const auto h = train(model, split, tc, &log);
    if (!h.records.empty()) err << "final validation perplexity " << h.records.back().val_ppl << '\n';
    return to_checkpoint(model);
  };
  if (o.model == "tmlm") {
    TransformerLm<T> model(tmlm_from(o, vocab.size()), vocab, o.seed);
    return run(model);
  }
  GruLm<T> model(gru_from(o, vocab.size()), vocab, o.seed);
  return run(model);
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.model != "tmlm" && o.model != "gru" && o.model != "ngram") {
    err << "unknown model kind '" << o.model << "'\n";
    return kExitCompat;
  }
  const fs::path dir(o.data);
  const auto vocab = read_vocab(dir / "vocab.txt");
  const auto split = load_split(dir, vocab);

  const fs::path log_path = o.log.empty() ? fs::path(o.out + ".log") : fs::path(o.log);
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot write " + log_path.string());

  Checkpoint ckpt;
  if (o.model == "ngram") {
    const auto model = train_ngram(split.train, vocab, o.order, o.k);
    const double train_ppl = perplexity(model, split.train);
    const double val_ppl = split.validation.empty() ? std::nan("") : perplexity(model, split.validation);
    log << 0 << '\t' << std::log(train_ppl) << '\t' << val_ppl << '\n';
    err << "trained " << o.order << "-gram; validation perplexity " << val_ppl << '\n';
    ckpt = to_checkpoint(model);
  } else if (o.precision == "f64") {
    ckpt = train_neural<double>(o, vocab, split, log, err);
  } else if (o.precision == "f32") {
    ckpt = train_neural<float>(o, vocab, split, log, err);
  } else {
    err << "precision must be f32 or f64\n";
    return kExitCompat;
  }
  if (!log) throw IoError("write failed for " + log_path.string());
  save_checkpoint(o.out, ckpt);
  (void)out;
  return kExitOk;
}

std::unique_ptr<LanguageModel> load_model(const Options& o, std::ostream& err, int& status) {
  auto model = model_from_checkpoint(load_checkpoint(o.checkpoint));
  if (!o.vocab.empty() && !(read_vocab(o.vocab) == model->vocab())) {
    err << "vocabulary " << o.vocab << " does not match the checkpoint\n";
    status = kExitCompat;
    return nullptr;
  }
  status = kExitOk;
  return model;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  int status = kExitOk;
  const auto model = load_model(o, err, status);
  if (!model) return status;
  const auto corpus = read_corpus(o.corpus, model->vocab());
  out << fmt_sig4(perplexity(*model, corpus)) << '\n';
  return kExitOk;
}

int cmd_rerank(const Options& o, std::ostream& out, std::ostream& err) {
  int status = kExitOk;
  const auto model = load_model(o, err, status);
  if (!model) return status;
  auto sets = read_candidates(o.candidates);

  // JSONL goes to --out when given, otherwise to stdout with metrics on stderr.
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::binary);
    if (!file) throw IoError("cannot write " + o.out);
  }
  std::ostream& jsonl = o.out.empty() ? out : file;
  std::ostream& report = o.out.empty() ? err : out;

  double alpha = o.alpha;
  if (o.sweep) {
    auto dev = o.dev.empty() ? sets : read_candidates(o.dev);
    const auto grid = alpha_grid();
    const auto sw = sweep_alpha(dev, *model, grid);
    report << "alpha\texpression_rate\n";
    for (std::size_t i = 0; i < sw.alphas.size(); ++i) {
      report << std::fixed << std::setprecision(1) << sw.alphas[i] << '\t' << std::setprecision(2)
             << sw.rates[i] << '\n';
    }
    report << "chosen_alpha\t" << std::setprecision(1) << sw.best_alpha << '\n';
    alpha = sw.best_alpha;
  }

  score_candidates(sets, *model);
  std::vector<std::string> base, reranked;
  std::vector<std::optional<std::string>> truths;
  bool all_truths = !sets.empty();
  for (auto& set : sets) {
    const auto r = rerank_scored(set, alpha);
    for (std::size_t i = 0; i < r.combined.size(); ++i) set.candidates[i].combined = r.combined[i];
    jsonl << candidate_set_to_json(set, r.winner) << '\n';
    base.push_back(set.candidates.front().latex);
    reranked.push_back(set.candidates[r.winner].latex);
    truths.push_back(set.truth);
    all_truths = all_truths && set.truth.has_value();
  }
  if (file.is_open() && !file) throw IoError("write failed for " + o.out);

  report << std::fixed << std::setprecision(2);
  report << "sets\t" << sets.size() << '\n';
  report << "alpha\t" << alpha << '\n';
  if (all_truths) {
    const auto cs = change_stats(base, reranked, truths);
    report << "baseline_expression_rate\t" << expression_rate(base, truths) << '\n';
    report << "expression_rate\t" << expression_rate(reranked, truths) << '\n';
    report << "corrected\t" << cs.corrected << '\n';
    report << "miscorrected\t" << cs.miscorrected << '\n';
    report << "unchanged\t" << cs.unchanged << '\n';
    report << "changed_other\t" << cs.changed_other << '\n';
  }
  return kExitOk;
}

int cmd_count_params(const Options& o, std::ostream& out, std::ostream& err) {
  const std::size_t V = Vocab::crohme().size();
  if (o.model == "tmlm") {
    out << count_params(tmlm_from(o, V)) << '\n';
  } else if (o.model == "gru") {
    out << count_params(gru_from(o, V)) << '\n';
  } else {
    err << "count-params supports tmlm and gru\n";
    return kExitCompat;
  }
  return kExitOk;
}

int cmd_gensynth(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.count == 0) {
    err << "--count must be at least 1\n";
    return kExitCompat;
  }
  const auto lines = generate_corpus(SynthOptions::preset(o.preset), o.count, o.seed);
  if (o.out.empty()) {
    for (const auto& l : lines) out << l << '\n';
  } else {
    write_lines(o.out, lines);
  }
  return kExitOk;
}

void add_model_dims(CLI::App* app, Options& o) {
  app->add_option("--layers", o.layers, "Layer count");
  app->add_option("--heads", o.heads, "Attention heads");
  app->add_option("--head-dim", o.head_dim, "Per-head width");
  app->add_option("--d-embed", o.d_embed, "Embedding width");
  app->add_option("--d-model", o.d_model, "Transformer hidden width");
  app->add_option("--d-ffn", o.d_ffn, "Feed-forward width");
  app->add_option("--context", o.context, "Maximum sequence length");
  app->add_option("--d-hidden", o.d_hidden, "GRU state width");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();
  Options o;
  CLI::App app{"Math-expression language models: n-gram, GRU and transformer"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "Normalize, filter and split a LaTeX corpus");
  prepare->add_option("--corpus", o.corpus, "One expression per line")->required();
  prepare->add_option("--out", o.out, "Output directory")->required();
  prepare->add_option("--seed", o.seed, "Split seed");

  auto* trainc = app.add_subcommand("train", "Train a model on prepared splits");
  trainc->add_option("--model", o.model, "tmlm, gru or ngram");
  trainc->add_option("--data", o.data, "Directory written by prepare")->required();
  trainc->add_option("--out", o.out, "Checkpoint path")->required();
  trainc->add_option("--log", o.log, "Training log (default <out>.log)");
  trainc->add_option("--seed", o.seed, "Initialization, shuffle and dropout seed");
  trainc->add_option("--order", o.order, "N-gram order");
  trainc->add_option("--k", o.k, "N-gram additive smoothing");
  trainc->add_option("--lr", o.lr, "AdamW learning rate");
  trainc->add_option("--batch-size", o.batch_size, "Sequences per step");
  trainc->add_option("--max-steps", o.max_steps, "Update count (0: use --epochs)");
  trainc->add_option("--epochs", o.epochs, "Passes over the training split");
  trainc->add_option("--eval-interval", o.eval_interval, "Steps between log lines (0: per epoch)");
  trainc->add_option("--sort-window", o.sort_window, "Length-sort windows of this many batches");
  trainc->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay");
  trainc->add_option("--clip", o.clip, "Global gradient-norm bound (0: off)");
  trainc->add_option("--dropout", o.dropout, "Dropout rate");
  trainc->add_option("--precision", o.precision, "f32 or f64");
  add_model_dims(trainc, o);

  auto* evalc = app.add_subcommand("eval", "Perplexity of a checkpoint on a corpus");
  evalc->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  evalc->add_option("--corpus", o.corpus, "Normalized expressions, one per line")->required();
  evalc->add_option("--vocab", o.vocab, "Require this vocabulary");

  auto* rerankc = app.add_subcommand("rerank", "Re-rank recognizer candidates");
  rerankc->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  rerankc->add_option("--candidates", o.candidates, "Candidate JSON Lines")->required();
  rerankc->add_option("--alpha", o.alpha, "LM weight")->check(CLI::NonNegativeNumber);
  rerankc->add_flag("--sweep", o.sweep, "Pick alpha on the dev file over 0.0..2.0");
  rerankc->add_option("--dev", o.dev, "Dev candidates for --sweep (default: --candidates)");
  rerankc->add_option("--out", o.out, "Annotated JSON Lines (default: stdout)");
  rerankc->add_option("--vocab", o.vocab, "Require this vocabulary");

  auto* countc = app.add_subcommand("count-params", "Trainable parameter count of a preset");
  countc->add_option("--model", o.model, "tmlm or gru");
  add_model_dims(countc, o);

  auto* synth = app.add_subcommand("gensynth", "Sample a synthetic expression corpus");
  synth->add_option("--preset", o.preset, "default, short or long");
  synth->add_option("--count", o.count, "Number of expressions");
  synth->add_option("--seed", o.seed, "Sampling seed");
  synth->add_option("--out", o.out, "Output file (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitCompat;
  }

  try {
    if (*prepare) return cmd_prepare(o, out, err);
    if (*trainc) return cmd_train(o, out, err);
    if (*evalc) return cmd_eval(o, out, err);
    if (*rerankc) return cmd_rerank(o, out, err);
    if (*countc) return cmd_count_params(o, out, err);
    if (*synth) return cmd_gensynth(o, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const UnknownToken& e) {
    err << "error: " << e.what() << '\n';
    return kExitCompat;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const InvalidLatex& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const TooFewSequences& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const EmptyCorpus& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitCompat;
  }
  return kExitCompat;
}

}  // namespace mathlm
