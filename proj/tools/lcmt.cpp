// Command-line surface for the constrained-translation lab: synthesize data,
// extract constraints, train, decode, evaluate, sweep memory placement.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcmt/lcmt.hpp"

namespace fs = std::filesystem;
using lcmt::Json;

namespace {

struct OutDir {
  fs::path dir;
  std::vector<std::string> artifacts;

  explicit OutDir(const std::string& path) : dir(path) { fs::create_directories(dir); }

  fs::path path_of(const std::string& name) const { return dir / name; }

  void note(const std::string& name) { artifacts.push_back(name); }

  // Resolved-config sidecar: one [subcommand] section, every option with its
  // final value (command line > config file > default), in definition order.
  void write_sidecar(CLI::App& cmd) {
    auto quote_if_needed = [](const std::string& v) {
      const bool bare = !v.empty() && v.find_first_not_of(
                                          "0123456789.+-eE") == std::string::npos;
      if (bare || v == "true" || v == "false") return v;
      return "\"" + v + "\"";
    };
    std::ofstream out(dir / "config.resolved.toml", std::ios::binary);
    out << "[" << cmd.get_name() << "]\n";
    for (const CLI::Option* opt : cmd.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string key = opt->get_lnames().front();
      if (key == "help" || key == "config") continue;
      const bool is_flag = opt->get_expected_max() == 0;
      if (is_flag) {
        out << key << "=" << (opt->count() > 0 ? "true" : "false") << "\n";
        continue;
      }
      std::vector<std::string> values =
          opt->count() > 0 ? opt->results() : std::vector<std::string>{opt->get_default_str()};
      if (values.size() == 1) {
        out << key << "=" << quote_if_needed(values.front()) << "\n";
      } else {
        out << key << "=[";
        for (size_t i = 0; i < values.size(); ++i) {
          if (i) out << ", ";
          out << "\"" << values[i] << "\"";
        }
        out << "]\n";
      }
    }
    // not listed in the manifest: it records run metadata (including --out),
    // so it is the one file allowed to differ between reruns into
    // different directories
  }

  void write_manifest(const std::string& command) {
    Json man;
    man["command"] = command;
    Json arts = Json::array();
    for (const auto& name : artifacts) {
      std::ifstream in(dir / name, std::ios::binary);
      std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
      arts.push_back({{"name", name},
                      {"bytes", bytes.size()},
                      {"crc32", lcmt::crc32(bytes.data(), bytes.size())}});
    }
    man["artifacts"] = arts;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << man.dump(2) << '\n';
  }
};

void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("LCMT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

lcmt::Vocab vocab_for_side(const lcmt::Corpus& corpus, bool source) {
  std::vector<const std::vector<std::string>*> sents;
  for (const auto& rec : corpus) sents.push_back(source ? &rec.src : &rec.tgt);
  return lcmt::Vocab::build(sents);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  lcmt::HomographSpec spec;
};

int run_synth(const SynthArgs& a, CLI::App& app) {
  auto splits = lcmt::generate_homograph_corpus(a.spec);
  OutDir out(a.out);
  lcmt::write_corpus(splits.train, out.path_of("train.jsonl").string());
  out.note("train.jsonl");
  lcmt::write_corpus(splits.dev, out.path_of("dev.jsonl").string());
  out.note("dev.jsonl");
  lcmt::write_corpus(splits.test, out.path_of("test.jsonl").string());
  out.note("test.jsonl");
  out.write_sidecar(app);
  out.write_manifest("synth");
  std::cout << "synth: wrote " << splits.train.size() << "/" << splits.dev.size() << "/"
            << splits.test.size() << " train/dev/test sentences to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string in, out;
  int max_phrase_len = 4;
  int min_phrase_len = 1;
};

int run_extract(const ExtractArgs& a, CLI::App& app) {
  lcmt::Corpus corpus = lcmt::read_corpus(a.in);
  long with_alignment = 0;
  for (auto& rec : corpus) {
    if (rec.alignment) ++with_alignment;
    auto extracted = lcmt::extract_constraints(rec, a.max_phrase_len, a.min_phrase_len);
    rec.constraints.clear();
    for (const auto& e : extracted) {
      lcmt::RecordConstraint rc;
      rc.src_span = e.src_span;
      rc.tgt_span = e.tgt_span;
      rc.src_tokens = e.src_tokens;
      rc.tgt_tokens = e.tgt_tokens;
      rec.constraints.push_back(std::move(rc));
    }
  }
  if (with_alignment == 0)
    std::cerr << "warning: no record carries an alignment; extracted constraints are empty\n";

  OutDir out(a.out);
  lcmt::write_corpus(corpus, out.path_of("extracted.jsonl").string());
  out.note("extracted.jsonl");

  auto stats = lcmt::corpus_stats(corpus);
  Json sj;
  sj["n_sentences"] = stats.n_sentences;
  sj["n_phrases"] = stats.n_phrases;
  sj["n_words_in_phrases"] = stats.n_words_in_phrases;
  sj["n_subwords_in_phrases"] = stats.n_subwords_in_phrases;
  sj["avg_constraints_per_sentence"] = stats.avg_constraints_per_sentence;
  write_json_file(out.path_of("stats.json"), sj);
  out.note("stats.json");
  out.write_sidecar(app);
  out.write_manifest("extract");

  std::cout << lcmt::format_table(
      {{"sentences", "phrases", "words", "sub_words", "avg/sentence"},
       {std::to_string(stats.n_sentences), std::to_string(stats.n_phrases),
        std::to_string(stats.n_words_in_phrases), std::to_string(stats.n_subwords_in_phrases),
        lcmt::format_fixed(stats.avg_constraints_per_sentence, 2)}});
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out;
  std::string mode = "lcnmt";
  uint64_t seed = 1;
  long steps = 2000;
  long batch = 16;
  int d_model = 64;
  int blocks = 2;
  int heads = 4;
  int ffn = 128;
  int max_len = 64;
  int memory_block = 2;
  int memory_heads = 1;
  double lambda_att = 1.0;
  lcmt::TrainHyper hyper;
  bool f64 = false;
  bool memory_flags_given = false;
};

template <typename Real>
int run_train_typed(const TrainArgs& a, CLI::App& app) {
  lcmt::Corpus corpus = lcmt::read_corpus(a.data);
  if (corpus.empty()) throw lcmt::ConfigError("train: corpus is empty: " + a.data);
  lcmt::Vocab src_vocab = vocab_for_side(corpus, true);
  lcmt::Vocab tgt_vocab = vocab_for_side(corpus, false);

  lcmt::ModelConfig cfg;
  cfg.vocab_size_src = src_vocab.size();
  cfg.vocab_size_tgt = tgt_vocab.size();
  cfg.d_model = a.d_model;
  cfg.n_blocks = a.blocks;
  cfg.n_heads = a.heads;
  cfg.ffn_width = a.ffn;
  cfg.max_len = a.max_len;
  cfg.memory_heads = a.memory_heads;
  cfg.lambda_att = a.lambda_att;
  if (a.mode == "lcnmt")
    cfg.memory_block_index = a.memory_block;
  else
    cfg.memory_block_index.reset();
  cfg.validate();

  const bool with_constraints = a.mode == "lcnmt";
  std::vector<lcmt::EncodedExample> examples;
  examples.reserve(corpus.size());
  for (const auto& rec : corpus)
    examples.push_back(lcmt::encode_example(rec, src_vocab, tgt_vocab, with_constraints));

  lcmt::ModelParams<Real> params(cfg, a.seed);
  auto log = lcmt::run_training(params, examples, a.steps, a.batch, a.hyper, a.seed);

  OutDir out(a.out);
  lcmt::CheckpointMeta meta;
  meta.src_vocab = src_vocab.tokens();
  meta.tgt_vocab = tgt_vocab.tokens();
  meta.step = static_cast<uint64_t>(a.steps);
  meta.seed = a.seed;
  lcmt::save_checkpoint(params, meta, out.path_of("model.ckpt").string());
  out.note("model.ckpt");
  {
    std::ofstream lossf(out.path_of("loss_log.jsonl"), std::ios::binary);
    for (const auto& row : log) {
      Json j;
      j["step"] = row.step;
      j["main"] = row.main_loss;
      j["att"] = row.att_loss;
      j["total"] = row.total_loss;
      j["lr"] = row.lr;
      lossf << j.dump() << '\n';
    }
  }
  out.note("loss_log.jsonl");
  out.write_sidecar(app);
  out.write_manifest("train");
  if (!log.empty())
    std::cout << "train: " << a.steps << " steps, final main loss "
              << lcmt::format_fixed(log.back().main_loss, 4) << ", att loss "
              << lcmt::format_fixed(log.back().att_loss, 4) << "\n";
  return 0;
}

int run_train(const TrainArgs& a, CLI::App& app) {
  if (a.mode == "base" && a.memory_flags_given)
    std::cerr << "warning: --mode base ignores --memory-block/--lambda-att/--memory-heads\n";
  return a.f64 ? run_train_typed<double>(a, app) : run_train_typed<float>(a, app);
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

struct DecodeArgs {
  std::string ckpt, data, out;
  lcmt::DecodeOptions opt;
  int threads_flag = 0;
};

template <typename Real>
int run_decode_typed(const DecodeArgs& a, CLI::App& app) {
  auto [params, meta] = lcmt::load_checkpoint<Real>(a.ckpt);
  lcmt::Vocab src_vocab = lcmt::Vocab::from_tokens(meta.src_vocab);
  lcmt::Vocab tgt_vocab = lcmt::Vocab::from_tokens(meta.tgt_vocab);
  lcmt::Corpus corpus = lcmt::read_corpus(a.data);

  lcmt::DecodeOptions opt = a.opt;
  opt.threads = resolve_threads(a.threads_flag);
  auto results = lcmt::decode_corpus(params, src_vocab, tgt_vocab, corpus, opt);

  OutDir out(a.out);
  lcmt::write_results(results, out.path_of("results.jsonl").string());
  out.note("results.jsonl");
  out.write_sidecar(app);
  out.write_manifest("decode");

  long satisfied = 0, given = 0, forwards = 0;
  for (const auto& r : results) {
    satisfied += r.constraints_satisfied;
    given += static_cast<long>(r.constraints_given.size());
    forwards += r.forward_calls;
  }
  std::cout << "decode: " << results.size() << " sentences, mode " << opt.mode << ", "
            << satisfied << "/" << given << " constraints satisfied, " << forwards
            << " forward calls\n";
  return 0;
}

int run_decode(const DecodeArgs& a, CLI::App& app) {
  const std::string dtype = lcmt::peek_checkpoint_dtype(a.ckpt);
  return dtype == "f64" ? run_decode_typed<double>(a, app) : run_decode_typed<float>(a, app);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> hyp_files;
  std::string ref_file, constraints_file, out;
};

std::string sidecar_ratio_label(const fs::path& hyp_path) {
  std::ifstream in(hyp_path.parent_path() / "config.resolved.toml");
  if (!in) return "-";
  std::string line;
  bool in_decode = false;
  while (std::getline(in, line)) {
    if (line.find('[') == 0) in_decode = line.find("[decode]") == 0;
    if (in_decode && line.rfind("ratio=", 0) == 0) {
      std::string v = line.substr(6);
      v.erase(std::remove(v.begin(), v.end(), '"'), v.end());
      try {
        return lcmt::format_fixed(std::stod(v), 2);
      } catch (const std::exception&) {
        return v;
      }
    }
  }
  return "-";
}

int run_eval(const EvalArgs& a, CLI::App& app) {
  lcmt::Corpus refs = lcmt::read_corpus(a.ref_file);
  std::map<long, const lcmt::CorpusRecord*> ref_by_id;
  for (const auto& rec : refs) ref_by_id[rec.id] = &rec;

  std::optional<lcmt::Corpus> constraint_corpus;
  std::map<long, const lcmt::CorpusRecord*> con_by_id;
  if (!a.constraints_file.empty()) {
    constraint_corpus = lcmt::read_corpus(a.constraints_file);
    for (const auto& rec : *constraint_corpus) con_by_id[rec.id] = &rec;
  }

  struct Row {
    std::string file, method, ratio;
    lcmt::BleuReport bleu;
    double csr = 0;
    long n = 0;
  };
  std::vector<Row> rows;
  for (const auto& hyp_file : a.hyp_files) {
    auto results = lcmt::read_results(hyp_file);
    if (results.empty()) throw lcmt::EvalError("eval: empty results file: " + hyp_file);
    std::vector<std::vector<std::string>> hyps, refs_matched;
    std::vector<std::vector<std::vector<std::string>>> constraints;
    for (const auto& r : results) {
      auto it = ref_by_id.find(r.id);
      if (it == ref_by_id.end())
        throw lcmt::EvalError("eval: no reference with id " + std::to_string(r.id));
      hyps.push_back(r.tokens);
      refs_matched.push_back(it->second->tgt);
      if (constraint_corpus) {
        std::vector<std::vector<std::string>> per_sentence;
        auto cit = con_by_id.find(r.id);
        if (cit != con_by_id.end())
          for (const auto& c : cit->second->constraints) per_sentence.push_back(c.tgt_tokens);
        constraints.push_back(std::move(per_sentence));
      } else {
        constraints.push_back(r.constraints_given);
      }
    }
    Row row;
    row.file = hyp_file;
    row.method = results.front().mode;
    row.ratio = sidecar_ratio_label(hyp_file);
    row.bleu = lcmt::bleu_corpus(hyps, refs_matched);
    row.csr = lcmt::constraint_satisfaction_rate(hyps, constraints);
    row.n = static_cast<long>(results.size());
    rows.push_back(std::move(row));
  }

  OutDir out(a.out);
  Json report = Json::array();
  for (const auto& r : rows) {
    Json j;
    j["file"] = r.file;
    j["method"] = r.method;
    j["ratio"] = r.ratio;
    j["bleu"] = r.bleu.bleu;
    j["precisions"] = {r.bleu.precisions[0], r.bleu.precisions[1], r.bleu.precisions[2],
                       r.bleu.precisions[3]};
    j["brevity_penalty"] = r.bleu.brevity_penalty;
    j["hyp_len"] = r.bleu.hyp_len;
    j["ref_len"] = r.bleu.ref_len;
    j["csr"] = r.csr;
    j["csr_basis"] = constraint_corpus ? "constraints-file" : "results-given";
    j["n_sentences"] = r.n;
    report.push_back(j);
  }
  write_json_file(out.path_of("report.json"), report);
  out.note("report.json");

  // rows = ratio, columns = method; one block for BLEU, one for CSR
  std::vector<std::string> methods, ratios;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(ratios.begin(), ratios.end(), r.ratio) == ratios.end())
      ratios.push_back(r.ratio);
  }
  std::sort(methods.begin(), methods.end());
  std::sort(ratios.begin(), ratios.end());
  auto table_for = [&](auto getter) {
    std::vector<std::vector<std::string>> table;
    std::vector<std::string> header{"ratio"};
    header.insert(header.end(), methods.begin(), methods.end());
    table.push_back(header);
    for (const auto& ratio : ratios) {
      std::vector<std::string> line{ratio};
      for (const auto& method : methods) {
        std::string cell = "-";
        for (const auto& r : rows)
          if (r.ratio == ratio && r.method == method) cell = getter(r);
        line.push_back(cell);
      }
      table.push_back(line);
    }
    return lcmt::format_table(table);
  };
  std::string text = "BLEU\n";
  text += table_for([](const Row& r) { return lcmt::format_fixed(r.bleu.bleu, 2); });
  text += "\nCSR\n";
  text += table_for([](const Row& r) { return lcmt::format_fixed(r.csr, 4); });
  {
    std::ofstream tf(out.path_of("table.txt"), std::ios::binary);
    tf << text;
  }
  out.note("table.txt");
  out.write_sidecar(app);
  out.write_manifest("eval");
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// sweep-blocks
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string data, test, out;
  int blocks = 6;
  uint64_t seed = 1;
  long steps = 400;
  long batch = 8;
  int d_model = 64;
  int heads = 4;
  int ffn = 128;
  int max_len = 64;
  double lambda_att = 1.0;
  double ratio = 0.5;
  int beam = 12;
  int decode_max_len = 0;  // 0: model max_len
  bool no_memory = false;
  double noise_bound = 5.0;
  lcmt::TrainHyper hyper;
};

int run_sweep(const SweepArgs& a, CLI::App& app) {
  lcmt::Corpus train_corpus = lcmt::read_corpus(a.data);
  lcmt::Corpus test_corpus = lcmt::read_corpus(a.test);
  if (train_corpus.empty()) throw lcmt::ConfigError("sweep: empty train corpus");
  lcmt::Vocab src_vocab = vocab_for_side(train_corpus, true);
  lcmt::Vocab tgt_vocab = vocab_for_side(train_corpus, false);

  struct Row {
    int block;
    double main_final, main_smoothed, bleu, csr;
  };
  std::vector<Row> rows;
  for (int block = 1; block <= a.blocks; ++block) {
    lcmt::ModelConfig cfg;
    cfg.vocab_size_src = src_vocab.size();
    cfg.vocab_size_tgt = tgt_vocab.size();
    cfg.d_model = a.d_model;
    cfg.n_blocks = a.blocks;
    cfg.n_heads = a.heads;
    cfg.ffn_width = a.ffn;
    cfg.max_len = a.max_len;
    cfg.lambda_att = a.lambda_att;
    if (a.no_memory)
      cfg.memory_block_index.reset();
    else
      cfg.memory_block_index = block;
    cfg.validate();

    std::vector<lcmt::EncodedExample> examples;
    for (const auto& rec : train_corpus)
      examples.push_back(lcmt::encode_example(rec, src_vocab, tgt_vocab, !a.no_memory));

    lcmt::ModelParams<float> params(cfg, a.seed);
    auto log = lcmt::run_training(params, examples, a.steps, a.batch, a.hyper, a.seed);

    lcmt::DecodeOptions opt;
    opt.mode = a.no_memory ? "base" : "lcnmt";
    opt.beam = a.beam;
    opt.ratio = a.ratio;
    opt.seed = a.seed;
    opt.max_len = a.decode_max_len;
    opt.threads = resolve_threads(0);
    auto results = lcmt::decode_corpus(params, src_vocab, tgt_vocab, test_corpus, opt);

    std::vector<std::vector<std::string>> hyps, refs;
    std::vector<std::vector<std::vector<std::string>>> constraints;
    for (size_t i = 0; i < results.size(); ++i) {
      hyps.push_back(results[i].tokens);
      refs.push_back(test_corpus[i].tgt);
      constraints.push_back(results[i].constraints_given);
    }
    Row row;
    row.block = block;
    row.main_final = log.back().main_loss;
    const size_t tail = std::min<size_t>(20, log.size());
    double acc = 0;
    for (size_t i = log.size() - tail; i < log.size(); ++i) acc += log[i].main_loss;
    row.main_smoothed = acc / static_cast<double>(tail);
    row.bleu = lcmt::bleu_corpus(hyps, refs).bleu;
    row.csr = lcmt::constraint_satisfaction_rate(hyps, constraints);
    rows.push_back(row);
    std::cout << "sweep: block " << block << " main_loss " << lcmt::format_fixed(row.main_smoothed, 4)
              << " bleu " << lcmt::format_fixed(row.bleu, 2) << " csr "
              << lcmt::format_fixed(row.csr, 4) << "\n";
  }

  OutDir out(a.out);
  Json report;
  report["seed_noise_bound"] = a.noise_bound;
  report["memory"] = !a.no_memory;
  Json jrows = Json::array();
  for (const auto& r : rows)
    jrows.push_back({{"block", r.block},
                     {"main_loss_final", r.main_final},
                     {"main_loss_smoothed", r.main_smoothed},
                     {"bleu", r.bleu},
                     {"csr", r.csr}});
  report["rows"] = jrows;
  write_json_file(out.path_of("report.json"), report);
  out.note("report.json");

  std::vector<std::vector<std::string>> table{{"block", "main_loss", "bleu", "csr"}};
  for (const auto& r : rows)
    table.push_back({std::to_string(r.block), lcmt::format_fixed(r.main_smoothed, 4),
                     lcmt::format_fixed(r.bleu, 2), lcmt::format_fixed(r.csr, 4)});
  std::string text = lcmt::format_table(table);
  text += "declared seed noise bound (BLEU): " + lcmt::format_fixed(a.noise_bound, 2) + "\n";
  {
    std::ofstream tf(out.path_of("table.txt"), std::ios::binary);
    tf << text;
  }
  out.note("table.txt");
  out.write_sidecar(app);
  out.write_manifest("sweep-blocks");
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lcmt: a desk-scale lexically-constrained translation lab"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (key/value with [subcommand] sections)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic homograph corpus");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "rng seed")->capture_default_str();
  synth_cmd->add_option("--sentences", synth.spec.n_train, "train sentences")->capture_default_str();
  synth_cmd->add_option("--dev", synth.spec.n_dev, "dev sentences")->capture_default_str();
  synth_cmd->add_option("--test", synth.spec.n_test, "test sentences")->capture_default_str();
  synth_cmd->add_option("--src-vocab", synth.spec.src_vocab_size, "source vocab size")
      ->capture_default_str();
  synth_cmd->add_option("--tgt-vocab", synth.spec.tgt_vocab_size, "target vocab size")
      ->capture_default_str();
  synth_cmd->add_option("--homographs", synth.spec.homograph_count, "homograph token count")
      ->capture_default_str();
  synth_cmd->add_option("--len-min", synth.spec.len_min, "min sentence length")
      ->capture_default_str();
  synth_cmd->add_option("--len-max", synth.spec.len_max, "max sentence length")
      ->capture_default_str();
  synth_cmd->add_option("--bigram-span-prob", synth.spec.bigram_span_prob,
                        "probability of adding a bigram parse span")
      ->capture_default_str();

  ExtractArgs extract;
  auto* extract_cmd = app.add_subcommand("extract", "extract constraints from a corpus");
  extract_cmd->add_option("--in", extract.in, "input corpus JSONL")->required();
  extract_cmd->add_option("--out", extract.out, "output directory")->required();
  extract_cmd->add_option("--max-phrase-len", extract.max_phrase_len, "max phrase length")
      ->capture_default_str();
  extract_cmd->add_option("--min-phrase-len", extract.min_phrase_len, "min source phrase length")
      ->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", train.data, "training corpus JSONL")->required();
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--mode", train.mode, "base | lcnmt")
      ->check(CLI::IsMember({"base", "lcnmt"}))
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "rng seed")->capture_default_str();
  train_cmd->add_option("--steps", train.steps, "training steps")->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "batch size")->capture_default_str();
  train_cmd->add_option("--d-model", train.d_model, "model width")->capture_default_str();
  train_cmd->add_option("--blocks", train.blocks, "encoder/decoder blocks")->capture_default_str();
  train_cmd->add_option("--heads", train.heads, "attention heads")->capture_default_str();
  train_cmd->add_option("--ffn", train.ffn, "feed-forward width")->capture_default_str();
  train_cmd->add_option("--max-len", train.max_len, "max sequence length")->capture_default_str();
  auto* mem_block_opt =
      train_cmd->add_option("--memory-block", train.memory_block, "encoder block with the memory")
          ->capture_default_str();
  auto* lambda_opt = train_cmd->add_option("--lambda-att", train.lambda_att,
                                           "attention loss weight")
                         ->capture_default_str();
  auto* mem_heads_opt =
      train_cmd->add_option("--memory-heads", train.memory_heads, "memory attention heads")
          ->capture_default_str();
  train_cmd->add_option("--lr", train.hyper.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--warmup", train.hyper.warmup_steps, "warmup steps")
      ->capture_default_str();
  train_cmd->add_option("--clip", train.hyper.clip_norm, "gradient norm clip")
      ->capture_default_str();
  train_cmd->add_option("--p-drop", train.hyper.p_drop, "per-sentence constraint dropout")
      ->capture_default_str();
  train_cmd->add_flag("--f64", train.f64, "train in 64-bit floats");

  DecodeArgs decode;
  auto* decode_cmd = app.add_subcommand("decode", "decode a corpus with a trained model");
  decode_cmd->add_option("--ckpt", decode.ckpt, "checkpoint file")->required();
  decode_cmd->add_option("--data", decode.data, "corpus JSONL to decode")->required();
  decode_cmd->add_option("--out", decode.out, "output directory")->required();
  decode_cmd->add_option("--mode", decode.opt.mode, "base | dba | lcnmt")
      ->check(CLI::IsMember({"base", "dba", "lcnmt"}))
      ->capture_default_str();
  decode_cmd->add_option("--beam", decode.opt.beam, "beam size")->capture_default_str();
  decode_cmd->add_option("--ratio", decode.opt.ratio, "constraint sampling ratio")
      ->capture_default_str();
  decode_cmd->add_option("--seed", decode.opt.seed, "constraint sampling seed")
      ->capture_default_str();
  decode_cmd->add_option("--alpha", decode.opt.alpha, "length penalty exponent")
      ->capture_default_str();
  decode_cmd->add_option("--max-len", decode.opt.max_len, "decode length cap (0: model max_len)")
      ->capture_default_str();
  decode_cmd->add_option("--threads", decode.threads_flag,
                         "worker threads (0: LCMT_THREADS or logical cores)")
      ->capture_default_str();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score decode results");
  eval_cmd->add_option("--hyp", eval.hyp_files, "results JSONL (repeatable)")
      ->required()
      ->expected(-1);
  eval_cmd->add_option("--ref", eval.ref_file, "reference corpus JSONL")->required();
  eval_cmd->add_option("--constraints", eval.constraints_file,
                       "corpus whose constraints define the CSR basis (default: the "
                       "constraints given at decode time)");
  eval_cmd->add_option("--out", eval.out, "output directory")->required();

  SweepArgs sweep;
  auto* sweep_cmd =
      app.add_subcommand("sweep-blocks", "train one model per memory block placement");
  sweep_cmd->add_option("--data", sweep.data, "training corpus JSONL")->required();
  sweep_cmd->add_option("--test", sweep.test, "test corpus JSONL")->required();
  sweep_cmd->add_option("--out", sweep.out, "output directory")->required();
  sweep_cmd->add_option("--blocks", sweep.blocks, "block count (sweeps 1..N)")
      ->capture_default_str();
  sweep_cmd->add_option("--seed", sweep.seed, "rng seed (shared across rows)")
      ->capture_default_str();
  sweep_cmd->add_option("--steps", sweep.steps, "training steps per row")->capture_default_str();
  sweep_cmd->add_option("--batch", sweep.batch, "batch size")->capture_default_str();
  sweep_cmd->add_option("--d-model", sweep.d_model, "model width")->capture_default_str();
  sweep_cmd->add_option("--heads", sweep.heads, "attention heads")->capture_default_str();
  sweep_cmd->add_option("--ffn", sweep.ffn, "feed-forward width")->capture_default_str();
  sweep_cmd->add_option("--max-len", sweep.max_len, "max sequence length")->capture_default_str();
  sweep_cmd->add_option("--lambda-att", sweep.lambda_att, "attention loss weight")
      ->capture_default_str();
  sweep_cmd->add_option("--ratio", sweep.ratio, "decode constraint ratio")->capture_default_str();
  sweep_cmd->add_option("--beam", sweep.beam, "beam size")->capture_default_str();
  sweep_cmd->add_option("--decode-max-len", sweep.decode_max_len,
                        "decode length cap (0: model max_len)")
      ->capture_default_str();
  sweep_cmd->add_flag("--no-memory", sweep.no_memory, "train plain transformers in every row");
  sweep_cmd->add_option("--noise-bound", sweep.noise_bound,
                        "declared seed-noise bound on BLEU, recorded in the report")
      ->capture_default_str();
  sweep_cmd->add_option("--lr", sweep.hyper.lr, "learning rate")->capture_default_str();
  sweep_cmd->add_option("--p-drop", sweep.hyper.p_drop, "per-sentence constraint dropout")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, *synth_cmd);
    if (extract_cmd->parsed()) return run_extract(extract, *extract_cmd);
    if (train_cmd->parsed()) {
      train.memory_flags_given =
          mem_block_opt->count() > 0 || lambda_opt->count() > 0 || mem_heads_opt->count() > 0;
      return run_train(train, *train_cmd);
    }
    if (decode_cmd->parsed()) return run_decode(decode, *decode_cmd);
    if (eval_cmd->parsed()) return run_eval(eval, *eval_cmd);
    if (sweep_cmd->parsed()) return run_sweep(sweep, *sweep_cmd);
  } catch (const lcmt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lcmt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
