// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

// pabdm: corpus generation, training, decoding and ablation front end.
//
//   pabdm gen-corpus      --task T --count N --seed S --out DIR
//   pabdm train           --task T --objective CSL|CE|Random --steps N --out DIR
//   pabdm decode          (--checkpoint F | --oracle perfect|dip|decay) --strategy K --out DIR
//   pabdm ablate          (--checkpoint F | --oracle ...) --out DIR
//   pabdm sweep-threshold (--checkpoint F | --oracle ...) --taus 0.65,0.8,0.95 --out DIR
//   pabdm simulate        --oracle dip --out DIR
//
// Every command accepts --config FILE (key = value lines, keys are the long
// flag names); flags given on the command line win over the file.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pabdm/batch_ppc.hpp"
#include "pabdm/csl_training.hpp"
#include "pabdm/kernels.hpp"
#include "pabdm/run_config.hpp"
#include "pabdm/scripted_oracle.hpp"
#include "pabdm/trace_io.hpp"

namespace fs = std::filesystem;
using namespace pabdm;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Turns a key = value file into --key=value arguments.
std::vector<std::string> config_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "command" || value.empty()) continue;
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

std::vector<double> parse_taus(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("bad threshold in --taus: " + item);
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Timestamps live only here so every other output is byte-reproducible.
void write_meta(const fs::path& dir, const RunConfig& cfg, double seconds) {
  nlohmann::ordered_json j;
  j["command"] = cfg.command;
  j["finished_at_unix"] = static_cast<long long>(std::time(nullptr));
  j["wall_seconds"] = seconds;
  j["threads"] = kernels::max_threads();
  write_text(dir / "meta.json", j.dump(2) + "\n");
}

// Model under evaluation plus the corpus it is scored on.
struct Subject {
  std::unique_ptr<LanguageModel> model;
  std::vector<Example> corpus;
};

Subject load_subject(const RunConfig& cfg, const GrammarTask& task) {
  std::vector<Example> corpus = generate_corpus(task, cfg.count, cfg.eval_seed);
  Subject s;
  if (!cfg.checkpoint.empty()) {
    if (!cfg.oracle.empty()) throw UsageError("give either --checkpoint or --oracle, not both");
    if (!fs::exists(cfg.checkpoint)) throw DataError("checkpoint not found: " + cfg.checkpoint);
    try {
      s.model = std::make_unique<TinyTransformer>(TinyTransformer::load(cfg.checkpoint));
    } catch (const std::exception& e) {
      throw DataError(std::string("bad checkpoint: ") + e.what());
    }
    s.corpus = std::move(corpus);
    return s;
  }
  if (cfg.oracle.empty()) throw UsageError("a --checkpoint or an --oracle is required");

  std::vector<TokenSeq> targets;
  for (const auto& ex : corpus) targets.push_back(ex.target);
  ScenarioProfile profile;
  double rate = cfg.hard_rate;
  if (cfg.oracle == "perfect") rate = 0.0;
  if (cfg.oracle == "decay") profile.decay = 0.98;
  auto samples = make_dip_scenarios(vocab::kSize, targets, rate, cfg.seed);
  for (std::size_t i = 0; i < samples.size(); ++i) s.corpus.push_back({samples[i].prompt, targets[i]});
  s.model = std::make_unique<ScriptedOracle>(make_scenario_oracle(vocab::kSize, std::move(samples), profile));
  return s;
}

std::vector<std::string> report_cells(const EvalReport& r) {
  return {format_double(r.similarity), format_double(r.validity), format_double(r.acc),
          format_double(r.exact_match), std::to_string(r.forward_calls),
          std::to_string(r.processed_positions), std::to_string(r.committed),
          format_double(r.tokens_per_forward)};
}

const std::vector<std::string> kReportHeader = {
    "similarity", "validity", "acc", "exact_match", "forward_calls",
    "processed_positions", "committed", "tokens_per_forward"};

nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["similarity"] = r.similarity;
  j["validity"] = r.validity;
  j["acc"] = r.acc;
  j["exact_match"] = r.exact_match;
  j["tokens_per_forward"] = r.tokens_per_forward;
  j["forward_calls"] = r.forward_calls;
  j["processed_positions"] = r.processed_positions;
  j["committed"] = r.committed;
  return j;
}

// --- commands ----------------------------------------------------------------

void cmd_gen_corpus(const RunConfig& cfg, const fs::path& out) {
  const GrammarTask task = cfg.make_task();
  std::ofstream os(out / "corpus.jsonl", std::ios::binary);
  write_corpus_jsonl(os, generate_corpus(task, cfg.count, cfg.seed));
}

void cmd_train(const RunConfig& cfg, const fs::path& out) {
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write training log");
  const TrainResult res = train(cfg.make_train_config(), [&](const StepLog& s) {
    log << to_json_line(s) << '\n';
  });
  res.model.save(out / "model.ckpt");
}

void cmd_decode(const RunConfig& cfg, const fs::path& out) {
  const GrammarTask task = cfg.make_task();
  const StrategyConfig strategy = cfg.make_strategy(task);
  const Subject subj = load_subject(cfg, task);

  std::ofstream traces(out / "traces.jsonl", std::ios::binary);
  EvalReport report;
  if (cfg.decode_batch > 1) {
    if (strategy.kind != StrategyKind::PPC) throw UsageError("--decode-batch > 1 requires --strategy PPC");
    std::vector<std::size_t> lens(subj.corpus.size(), 0);
    const auto buckets = bucket_by_length(lens, strategy.block_size, cfg.decode_batch);
    std::vector<DecodeTrace> all(subj.corpus.size());
    for (const auto& bucket : buckets) {
      std::vector<CacheState> caches;
      for (std::size_t i : bucket) caches.push_back(subj.model->encode_prompt(subj.corpus[i].prompt));
      BatchResult br = batch_decode(*subj.model, std::move(caches), strategy);
      write_batch_jsonl(traces, br);
      for (std::size_t k = 0; k < bucket.size(); ++k) all[bucket[k]] = std::move(br.traces[k]);
    }
    // Score the batched traces exactly like the sequential path.
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].error) throw DecodeError("sample " + std::to_string(i) + ": " + *all[i].error);
      const TokenSeq o = strip_eos(all[i].final_sequence);
      report.similarity += 1.0 - edit_distance(o, subj.corpus[i].target);
      report.validity += task.valid(o) ? 1.0 : 0.0;
      report.exact_match += o == subj.corpus[i].target ? 1.0 : 0.0;
      report.tokens_per_forward += all[i].tokens_per_forward();
      report.forward_calls += all[i].forward_calls;
      report.processed_positions += all[i].processed_positions;
      report.committed += all[i].total_committed;
    }
    const auto n = static_cast<double>(all.size());
    report.count = all.size();
    report.similarity /= n;
    report.validity /= n;
    report.exact_match /= n;
    report.tokens_per_forward /= n;
    report.acc = (report.similarity + report.validity) / 2.0;
  } else {
    const EvalResult res = evaluate(*subj.model, task, strategy, subj.corpus);
    for (std::size_t i = 0; i < res.traces.size(); ++i) write_trace_jsonl(traces, res.traces[i], i);
    report = res.report;

    CsvTable outputs({"sample", "target", "output", "valid"});
    for (std::size_t i = 0; i < res.outputs.size(); ++i) {
      outputs.add_row({std::to_string(i), vocab::render(subj.corpus[i].target),
                       vocab::render(res.outputs[i]), task.valid(res.outputs[i]) ? "1" : "0"});
    }
    outputs.save(out / "outputs.csv");
  }
  auto j = report_json(report);
  j["strategy"] = to_string(strategy.kind);
  j["tau"] = strategy.tau;
  j["block_size"] = strategy.block_size;
  write_text(out / "report.json", j.dump(2) + "\n");
}

void cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  const GrammarTask task = cfg.make_task();
  const Subject subj = load_subject(cfg, task);
  struct Variant {
    const char* name;
    StrategyKind kind;
  };
  const Variant variants[] = {{"BlockLevel", StrategyKind::BlockLevel},
                              {"+PrefixCache", StrategyKind::PPCNoReset},
                              {"+Reset", StrategyKind::PPCNoPrefixCache},
                              {"Full", StrategyKind::PPC}};
  std::vector<std::string> header = {"variant", "strategy"};
  header.insert(header.end(), kReportHeader.begin(), kReportHeader.end());
  header.push_back("same_outputs_as_full");
  CsvTable table(header);

  std::vector<EvalResult> results;
  for (const auto& v : variants) {
    StrategyConfig s = cfg.make_strategy(task);
    s.kind = v.kind;
    results.push_back(evaluate(*subj.model, task, s, subj.corpus));
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::vector<std::string> row = {variants[i].name, to_string(variants[i].kind)};
    const auto cells = report_cells(results[i].report);
    row.insert(row.end(), cells.begin(), cells.end());
    row.push_back(results[i].outputs == results.back().outputs ? "1" : "0");
    table.add_row(std::move(row));
  }
  table.save(out / "ablation.csv");
}

void cmd_sweep(const RunConfig& cfg, const fs::path& out) {
  if (cfg.taus.empty()) throw UsageError("sweep-threshold needs a non-empty --taus list");
  const GrammarTask task = cfg.make_task();
  const Subject subj = load_subject(cfg, task);
  std::vector<std::string> header = {"strategy", "tau", "fixed_k"};
  header.insert(header.end(), kReportHeader.begin(), kReportHeader.end());
  CsvTable table(header);
  auto add = [&](const StrategyConfig& s) {
    const EvalResult res = evaluate(*subj.model, task, s, subj.corpus);
    std::vector<std::string> row = {to_string(s.kind), format_double(s.tau),
                                    s.kind == StrategyKind::FixedK ? std::to_string(s.fixed_k) : ""};
    const auto cells = report_cells(res.report);
    row.insert(row.end(), cells.begin(), cells.end());
    table.add_row(std::move(row));
  };
  for (double tau : cfg.taus) {
    StrategyConfig s = cfg.make_strategy(task);
    s.kind = StrategyKind::PPC;
    s.tau = tau;
    add(s);
  }
  StrategyConfig fixed = cfg.make_strategy(task);
  fixed.kind = StrategyKind::FixedK;
  fixed.fixed_k = std::min(cfg.fixed_k, fixed.block_size);
  add(fixed);
  table.save(out / "sweep.csv");
}

void cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  if (cfg.oracle.empty()) throw UsageError("simulate needs --oracle perfect|dip|decay");
  if (!cfg.checkpoint.empty()) throw UsageError("simulate runs scripted oracles only");
  const GrammarTask task = cfg.make_task();
  const Subject subj = load_subject(cfg, task);
  std::vector<std::string> header = {"strategy"};
  header.insert(header.end(), kReportHeader.begin(), kReportHeader.end());
  CsvTable table(header);
  std::ofstream traces(out / "traces.jsonl", std::ios::binary);
  for (StrategyKind k : {StrategyKind::PPC, StrategyKind::BlockLevel, StrategyKind::FixedK,
                         StrategyKind::PPCNoReset, StrategyKind::PPCNoPrefixCache}) {
    StrategyConfig s = cfg.make_strategy(task);
    s.kind = k;
    s.fixed_k = std::min(cfg.fixed_k, s.block_size);
    const EvalResult res = evaluate(*subj.model, task, s, subj.corpus);
    std::vector<std::string> row = {to_string(k)};
    const auto cells = report_cells(res.report);
    row.insert(row.end(), cells.begin(), cells.end());
    table.add_row(std::move(row));
    if (k == StrategyKind::PPC) {
      for (std::size_t i = 0; i < res.traces.size(); ++i) write_trace_jsonl(traces, res.traces[i], i);
    }
  }
  table.save(out / "simulate.csv");
}

void add_common(CLI::App* sub, RunConfig& cfg, std::string& taus) {
  sub->add_option("--task", cfg.task, "BalancedBrackets, MiniExpr or MiniTable");
  sub->add_option("--bracket-prompt", cfg.bracket_prompt, "pair-count or depth-trace");
  sub->add_option("--objective", cfg.objective, "CSL, CE or Random");
  sub->add_option("--corruption", cfg.corruption, "suffix or block-noise");
  sub->add_option("--tau-train", cfg.tau_train);
  sub->add_option("--tau-infer", cfg.tau_infer);
  sub->add_option("--strategy", cfg.strategy, "PPC, BlockLevel, FixedK, PPCNoReset, PPCNoPrefixCache");
  sub->add_option("--block-size", cfg.block_size, "maximum candidate range D");
  sub->add_option("--fixed-k", cfg.fixed_k);
  sub->add_option("--steps", cfg.steps);
  sub->add_option("--batch-size", cfg.batch_size, "training batch size");
  sub->add_option("--lr", cfg.lr);
  sub->add_option("--keep-ratio", cfg.keep_ratio, "Random objective keep probability");
  sub->add_option("--seed", cfg.seed);
  sub->add_option("--eval-seed", cfg.eval_seed, "seed of the evaluation corpus");
  sub->add_option("--count", cfg.count, "corpus size");
  sub->add_option("--decode-batch", cfg.decode_batch, "PPC batch size for decode");
  sub->add_option("--checkpoint", cfg.checkpoint);
  sub->add_option("--oracle", cfg.oracle, "perfect, dip or decay scripted oracle");
  sub->add_option("--hard-rate", cfg.hard_rate, "fraction of hard positions in dip scenarios");
  sub->add_option("--taus", taus, "comma separated thresholds");
  sub->add_option("--out", cfg.out, "output directory");
  sub->add_option("--config", "key = value file; flags win over it");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("PABDM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) kernels::set_max_threads(n);
  }

  // Splice config-file values in front of the real flags so the flags win.
  std::vector<std::string> args(argv, argv + argc);
  try {
    for (std::size_t i = 1; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
      }
      if (path.empty()) continue;
      const auto extra = config_args(path);
      if (args.size() >= 2) args.insert(args.begin() + 2, extra.begin(), extra.end());
      break;
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }

  RunConfig cfg;
  std::string taus;
  CLI::App app{"Prefix-committing block diffusion decoding toolkit"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  const char* names[] = {"gen-corpus", "train", "decode", "ablate", "sweep-threshold", "simulate"};
  for (const char* name : names) add_common(app.add_subcommand(name), cfg, taus);

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.taus = parse_taus(taus);
    cfg.validate();
    const fs::path out(cfg.out);
    fs::create_directories(out);
    write_text(out / "run_config.ini", cfg.to_ini());

    if (cfg.command == "gen-corpus") cmd_gen_corpus(cfg, out);
    else if (cfg.command == "train") cmd_train(cfg, out);
    else if (cfg.command == "decode") cmd_decode(cfg, out);
    else if (cfg.command == "ablate") cmd_ablate(cfg, out);
    else if (cfg.command == "sweep-threshold") cmd_sweep(cfg, out);
    else cmd_simulate(cfg, out);

    write_meta(out, cfg, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const BucketingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  } catch (const DomainError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
