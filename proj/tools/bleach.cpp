/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bleach/genbench.hpp"
#include "bleach/io.hpp"
#include "bleach/log.hpp"
#include "bleach/runtime.hpp"

namespace {

using namespace bleach;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct RunArgs {
  std::string rules_path;
  std::string input = "-";
  std::string output = "-";
  std::string control;
  std::string dead_letter;
  std::string metrics_dir;
  std::string debug_dump_dir;
  std::uint64_t window_size = 0;
  std::uint64_t slide = 0;
  std::string strategy = "cumulative";
  std::string protocol = "dr";
  std::string transport = "inprocess";
  std::size_t repair_workers = 2;
  double sample_rate = 0.01;
};

runtime::PipelineConfig pipeline_config(const RunArgs& a) {
  runtime::PipelineConfig cfg;
  cfg.rules = io::load_rules_file(a.rules_path);
  cfg.n_repair_workers = a.repair_workers;
  cfg.protocol = runtime::protocol_from_string(a.protocol);
  cfg.window.size = a.window_size;
  cfg.window.slide = a.slide == 0 ? a.window_size : a.slide;
  if (a.strategy == "basic")
    cfg.window.strategy = windowing::Strategy::Basic;
  else if (a.strategy == "cumulative")
    cfg.window.strategy = windowing::Strategy::Cumulative;
  else
    throw ConfigError("unknown window strategy: " + a.strategy);
  if (a.transport == "inprocess")
    cfg.transport = runtime::Transport::InProcess;
  else if (a.transport == "threads")
    cfg.transport = runtime::Transport::Threads;
  else
    throw ConfigError("unknown transport: " + a.transport);
  cfg.latency_sample_rate = a.sample_rate;
  cfg.validate();
  return cfg;
}

std::vector<dynamics::RuleUpdate> load_schedule(const std::string& path) {
  std::vector<dynamics::RuleUpdate> schedule;
  if (path.empty()) return schedule;
  auto src = io::open_source(path);
  while (auto line = src->next_line()) {
    if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
    schedule.push_back(io::parse_update_line(*line));
  }
  std::stable_sort(schedule.begin(), schedule.end(),
                   [](const auto& a, const auto& b) {
                     return a.effective_offset < b.effective_offset;
                   });
  return schedule;
}

int cmd_run(const RunArgs& a) {
  runtime::PipelineConfig cfg = pipeline_config(a);
  auto input = io::open_source(a.input);
  auto output = io::open_sink(a.output);
  std::unique_ptr<io::LineSink> dead;
  runtime::RunOptions opts;
  opts.schedule = load_schedule(a.control);
  if (!a.dead_letter.empty()) {
    dead = io::open_sink(a.dead_letter);
    opts.dead_letters = dead.get();
  }
  opts.debug_dump_dir = a.debug_dump_dir;

  runtime::Metrics metrics = runtime::run(cfg, *input, *output, opts);
  if (!a.metrics_dir.empty()) metrics.write_csv_dir(a.metrics_dir);
  log::info("tuples_out=" + std::to_string(metrics.counters.tuples_out) +
            " repairs=" + std::to_string(metrics.counters.repairs) +
            " dead_letters=" + std::to_string(metrics.counters.dead_letters));
  return 0;
}

struct GenArgs {
  std::uint64_t n = 200000;
  std::uint64_t seed = 1;
  double p_rhs_dirty = 0.10;
  double p_lhs_null = 0.10;
  std::uint64_t spike_from = 0;
  std::uint64_t spike_to = 0;
  double spike_rate = 0.5;
  std::string out = "stream.jsonl";
  std::string truth = "truth.jsonl";
  std::string rules_out;
  gen::GenConfig cards;  // cardinality overrides
};

gen::GenConfig gen_config(const GenArgs& a) {
  gen::GenConfig cfg = a.cards;
  cfg.n_tuples = a.n;
  cfg.seed = a.seed;
  cfg.p_rhs_dirty = a.p_rhs_dirty;
  cfg.p_lhs_null = a.p_lhs_null;
  if (a.spike_to > a.spike_from)
    cfg.spike = gen::SpikeConfig{a.spike_from, a.spike_to, a.spike_rate};
  cfg.validate();
  return cfg;
}

int cmd_gen(const GenArgs& a) {
  gen::GenConfig cfg = gen_config(a);
  auto g = gen::generate(cfg);
  {
    auto out = io::open_sink(a.out);
    for (const auto& t : g.tuples) out->write_line(io::tuple_to_line(t));
    out->flush();
  }
  {
    auto truth = io::open_sink(a.truth);
    gen::write_truth(g.truth, *truth);
  }
  if (!a.rules_out.empty()) io::save_rules_file(a.rules_out, gen::analog_ruleset());
  log::info("generated " + std::to_string(g.tuples.size()) + " tuples");
  return 0;
}

int cmd_eval(const std::string& output_path, const std::string& truth_path,
             const std::string& rules_path, const std::string& csv_path) {
  auto rules = rules_path.empty() ? gen::analog_ruleset() : io::load_rules_file(rules_path);
  gen::GroundTruth truth;
  {
    auto src = io::open_source(truth_path);
    truth = gen::read_truth(*src);
  }
  std::vector<Tuple> tuples;
  SchemaPtr schema;
  {
    auto src = io::open_source(output_path);
    while (auto line = src->next_line()) {
      if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
      io::RawTuple raw = io::parse_tuple_line(*line);
      if (!schema) {
        std::vector<AttributeId> attrs;
        for (const auto& [k, v] : raw.values) attrs.push_back(k);
        schema = std::make_shared<Schema>(attrs);
      }
      Tuple t;
      t.id = raw.id;
      t.schema = schema;
      t.values.assign(schema->size(), Value::null());
      for (auto& [k, v] : raw.values) t.values[schema->index_of(k)] = std::move(v);
      tuples.push_back(std::move(t));
    }
  }
  auto reports = gen::dirty_ratio(tuples, truth, rules);

  std::ostream& os = std::cout;
  os << "rule_id,rhs_attr,tuples,applicable,input_dirty_ratio,output_dirty_ratio_all,output_"
        "dirty_ratio_applicable\n";
  std::unique_ptr<io::CsvWriter> csv;
  if (!csv_path.empty())
    csv = std::make_unique<io::CsvWriter>(
        csv_path, std::vector<std::string>{"rule_id", "rhs_attr", "tuples", "applicable",
                                           "input_dirty_ratio", "output_dirty_ratio_all",
                                           "output_dirty_ratio_applicable"});
  for (const auto& r : reports) {
    std::vector<std::string> row = {std::to_string(r.rule_id),     r.rhs,
                                    std::to_string(r.n),           std::to_string(r.applicable),
                                    std::to_string(r.input_ratio()), std::to_string(r.ratio_all()),
                                    std::to_string(r.ratio_applicable())};
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
    if (csv) csv->row(row);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Benchmark scenarios
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string scenario;
  std::string out_dir = "bench-out";
  std::uint64_t n = 200000;
  std::uint64_t seed = 42;
};

struct ScenarioRun {
  std::vector<Tuple> output;
  runtime::Counters counters;
  double seconds = 0;
};

ScenarioRun run_pipeline(const std::vector<Tuple>& input, const std::vector<Rule>& rules,
                         runtime::Protocol protocol, windowing::Strategy strategy,
                         const std::vector<dynamics::RuleUpdate>& updates = {}) {
  runtime::PipelineConfig cfg;
  cfg.rules = rules;
  cfg.n_repair_workers = 2;
  cfg.protocol = protocol;
  cfg.window.size = 20000;
  cfg.window.slide = 10000;
  cfg.window.strategy = strategy;
  ScenarioRun run;
  run.output.reserve(input.size());
  auto engine = runtime::make_engine(cfg, gen::analog_schema(),
                                     [&](const Tuple& t, const auto&) { run.output.push_back(t); });
  auto t0 = std::chrono::steady_clock::now();
  std::size_t next = 0;
  std::uint64_t admitted = 0;
  for (const auto& t : input) {
    while (next < updates.size() && updates[next].effective_offset <= admitted)
      engine->push_update(updates[next++]);
    engine->push_tuple(t);
    ++admitted;
  }
  while (next < updates.size()) engine->push_update(updates[next++]);
  engine->finish();
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.counters = engine->counters();
  return run;
}

void write_bench_config(const std::string& dir, const std::string& scenario,
                        const gen::GenConfig& gcfg, const nlohmann::json& extra) {
  nlohmann::json j;
  j["scenario"] = scenario;
  j["n_tuples"] = gcfg.n_tuples;
  j["seed"] = gcfg.seed;
  j["p_rhs_dirty"] = gcfg.p_rhs_dirty;
  j["p_lhs_null"] = gcfg.p_lhs_null;
  if (gcfg.spike) {
    j["spike"] = {{"from", gcfg.spike->from}, {"to", gcfg.spike->to}, {"rate", gcfg.spike->rate}};
  }
  j["cardinalities"] = {{"items", gcfg.n_items},       {"geos", gcfg.n_geos},
                        {"promos", gcfg.n_promos},     {"stores", gcfg.n_stores},
                        {"customers", gcfg.n_customers}, {"max_lines_per_ticket",
                                                          gcfg.max_lines_per_ticket}};
  j["window"] = {{"size", 20000}, {"slide", 10000}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream f(dir + "/config.json");
  f << j.dump(2) << "\n";
}

int bench_coordination(const BenchArgs& a) {
  std::filesystem::create_directories(a.out_dir);
  gen::GenConfig gcfg;
  gcfg.n_tuples = a.n;
  gcfg.seed = a.seed;
  auto g = gen::generate(gcfg);
  auto all = gen::analog_ruleset();
  std::vector<Rule> rules(all.begin(), all.begin() + 6);  // r0..r5
  write_bench_config(a.out_dir, "coordination-comparison", gcfg, {{"rules", "r0..r5"}});

  io::CsvWriter csv(a.out_dir + "/summary.csv",
                    {"protocol", "rule_id", "dirty_ratio_applicable", "coordination_rounds",
                     "coordination_messages", "throughput_tuples_per_s"});
  std::cout << "protocol  rounds  messages  tuples/s  per-rule dirty ratio (applicable)\n";
  for (auto protocol :
       {runtime::Protocol::Basic, runtime::Protocol::Dr, runtime::Protocol::Ir}) {
    auto run = run_pipeline(g.tuples, rules, protocol, windowing::Strategy::Cumulative);
    auto reports = gen::dirty_ratio(run.output, g.truth, rules);
    double tput = run.output.size() / run.seconds;
    std::cout << runtime::to_string(protocol) << "  " << run.counters.coordination_rounds << "  "
              << run.counters.coordination_messages << "  " << static_cast<int>(tput) << "  ";
    for (const auto& r : reports) {
      csv.row({runtime::to_string(protocol), std::to_string(r.rule_id),
               std::to_string(r.ratio_applicable()),
               std::to_string(run.counters.coordination_rounds),
               std::to_string(run.counters.coordination_messages), std::to_string(tput)});
      std::cout << "r" << r.rule_id << "=" << r.ratio_applicable() << " ";
    }
    std::cout << "\n";
  }
  return 0;
}

int bench_windowing(const BenchArgs& a) {
  std::filesystem::create_directories(a.out_dir);
  gen::GenConfig gcfg;
  gcfg.n_tuples = a.n;
  gcfg.seed = a.seed;
  // Stress segment: dirt jumps to 50% for one full window width.
  std::uint64_t from = a.n / 5;
  gcfg.spike = gen::SpikeConfig{from, from + 20000, 0.5};
  auto g = gen::generate(gcfg);
  auto all = gen::analog_ruleset();
  std::vector<Rule> rules(all.begin(), all.begin() + 6);
  write_bench_config(a.out_dir, "windowing-comparison", gcfg, {{"rules", "r0..r5"}});

  io::CsvWriter csv(a.out_dir + "/summary.csv",
                    {"strategy", "rule_id", "dirty_ratio_applicable", "dirty_ratio_all"});
  std::cout << "strategy  per-rule dirty ratio (applicable)\n";
  double sums[2] = {0, 0};
  int idx = 0;
  for (auto strategy : {windowing::Strategy::Cumulative, windowing::Strategy::Basic}) {
    auto run = run_pipeline(g.tuples, rules, runtime::Protocol::Dr, strategy);
    auto reports = gen::dirty_ratio(run.output, g.truth, rules);
    const char* name = strategy == windowing::Strategy::Cumulative ? "cumulative" : "basic";
    std::cout << name << "  ";
    for (const auto& r : reports) {
      csv.row({name, std::to_string(r.rule_id), std::to_string(r.ratio_applicable()),
               std::to_string(r.ratio_all())});
      std::cout << "r" << r.rule_id << "=" << r.ratio_applicable() << " ";
      sums[idx] += r.ratio_applicable();
    }
    std::cout << "\n";
    ++idx;
  }
  std::cout << "average dirty ratio: cumulative=" << sums[0] / 6 << " basic=" << sums[1] / 6
            << " (x" << (sums[0] > 0 ? sums[1] / sums[0] : 0) << ")\n";
  return 0;
}

int bench_dynamic_rules(const BenchArgs& a) {
  std::filesystem::create_directories(a.out_dir);
  gen::GenConfig gcfg;
  gcfg.n_tuples = a.n;
  gcfg.seed = a.seed;
  auto g = gen::generate(gcfg);
  auto all = gen::analog_ruleset();
  std::vector<Rule> rules(all.begin(), all.begin() + 6);  // start with r0..r5
  // Delete rule 5 at 30% of the stream, add rules 6 and 7 at 45%.
  std::vector<dynamics::RuleUpdate> updates = {
      dynamics::RuleUpdate::remove(5, a.n * 3 / 10),
      dynamics::RuleUpdate::add(all[6], a.n * 45 / 100),
      dynamics::RuleUpdate::add(all[7], a.n * 45 / 100),
  };
  write_bench_config(a.out_dir, "dynamic-rules", gcfg,
                     {{"delete_rule_5_at", a.n * 3 / 10}, {"add_rules_6_7_at", a.n * 45 / 100}});

  auto run = run_pipeline(g.tuples, rules, runtime::Protocol::Dr,
                          windowing::Strategy::Cumulative, updates);
  auto reports = gen::dirty_ratio(run.output, g.truth, gen::analog_ruleset());
  io::CsvWriter csv(a.out_dir + "/summary.csv",
                    {"rule_id", "dirty_ratio_applicable", "dirty_ratio_all"});
  std::cout << "dynamic-rules: output=" << run.output.size()
            << " splits=" << run.counters.subgraph_splits
            << " rule_adds=" << run.counters.rule_adds
            << " rule_deletes=" << run.counters.rule_deletes << "\n";
  for (const auto& r : reports) {
    csv.row({std::to_string(r.rule_id), std::to_string(r.ratio_applicable()),
             std::to_string(r.ratio_all())});
    std::cout << "r" << r.rule_id << " dirty_ratio=" << r.ratio_applicable() << "\n";
  }
  return 0;
}

int bench_micro_batch(const BenchArgs& a) {
  std::filesystem::create_directories(a.out_dir);
  gen::GenConfig gcfg;
  gcfg.n_tuples = std::min<std::uint64_t>(a.n, 50000);
  gcfg.seed = a.seed;
  auto g = gen::generate(gcfg);
  std::vector<Rule> rules = {gen::analog_ruleset()[0]};  // single rule
  write_bench_config(a.out_dir, "micro-batch-baseline", gcfg, {{"rules", "r0"}});

  // The streaming engine under the same simulated cost model.
  auto stream_run =
      run_pipeline(g.tuples, rules, runtime::Protocol::Dr, windowing::Strategy::Cumulative);
  auto stream_rep = gen::dirty_ratio(stream_run.output, g.truth, rules).front();
  double stream_latency = gen::kSimRecordLatency;

  io::CsvWriter csv(a.out_dir + "/summary.csv",
                    {"system", "window_tuples", "avg_latency_sim", "dirty_ratio_applicable"});
  csv.row({"stream", "0", std::to_string(stream_latency),
           std::to_string(stream_rep.ratio_applicable())});
  std::cout << "stream: latency=" << stream_latency
            << " dirty_ratio=" << stream_rep.ratio_applicable() << "\n";

  for (std::size_t w : {1ul, 250ul, 500ul, 1000ul, 2000ul, 5000ul, 10000ul, 20000ul}) {
    auto res = gen::micro_batch_clean(g.tuples, w, rules);
    auto rep = gen::dirty_ratio(res.output, g.truth, rules).front();
    csv.row({"micro-batch", std::to_string(w), std::to_string(res.avg_latency),
             std::to_string(rep.ratio_applicable())});
    std::cout << "micro-batch w=" << w << ": latency=" << res.avg_latency
              << " dirty_ratio=" << rep.ratio_applicable() << "\n";
  }
  return 0;
}

int cmd_bench(const BenchArgs& a) {
  if (a.scenario == "coordination-comparison") return bench_coordination(a);
  if (a.scenario == "windowing-comparison") return bench_windowing(a);
  if (a.scenario == "dynamic-rules") return bench_dynamic_rules(a);
  if (a.scenario == "micro-batch-baseline") return bench_micro_batch(a);
  throw ConfigError("unknown scenario: " + a.scenario +
                    " (expected coordination-comparison|windowing-comparison|dynamic-rules|"
                    "micro-batch-baseline)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bleach: rule-based stream data cleaning"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "clean a tuple stream");
  run_cmd->add_option("--rules", run_args.rules_path, "rule spec file (JSON)")->required();
  run_cmd->add_option("--input", run_args.input, "input endpoint (-, file, tcp://..., tcp-listen://port)");
  run_cmd->add_option("--output", run_args.output, "output endpoint");
  run_cmd->add_option("--control", run_args.control, "rule-update schedule (JSONL, optional 'at' offsets)");
  run_cmd->add_option("--window-size", run_args.window_size, "window size in tuples (0 = unbounded)");
  run_cmd->add_option("--slide", run_args.slide, "slide step in tuples");
  run_cmd->add_option("--window-strategy", run_args.strategy, "basic|cumulative");
  run_cmd->add_option("--protocol", run_args.protocol, "basic|dr|ir");
  run_cmd->add_option("--repair-workers", run_args.repair_workers, "repair worker count");
  run_cmd->add_option("--transport", run_args.transport, "inprocess|threads");
  run_cmd->add_option("--latency-sample-rate", run_args.sample_rate, "latency sampling rate");
  run_cmd->add_option("--metrics-dir", run_args.metrics_dir, "write throughput/latency/counters CSVs here");
  run_cmd->add_option("--dead-letter", run_args.dead_letter, "dead-letter sink for malformed tuples");
  run_cmd->add_option("--debug-dump-dir", run_args.debug_dump_dir, "dump detect histories and repair graphs as JSON");

  GenArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen", "generate a dirty stream with ground truth");
  gen_cmd->add_option("--n", gen_args.n, "tuple count");
  gen_cmd->add_option("--seed", gen_args.seed, "random seed");
  gen_cmd->add_option("--p-rhs-dirty", gen_args.p_rhs_dirty, "RHS perturbation probability");
  gen_cmd->add_option("--p-lhs-null", gen_args.p_lhs_null, "LHS null probability");
  gen_cmd->add_option("--spike-from", gen_args.spike_from, "spike start offset");
  gen_cmd->add_option("--spike-to", gen_args.spike_to, "spike end offset (exclusive)");
  gen_cmd->add_option("--spike-rate", gen_args.spike_rate, "spike dirt rate");
  gen_cmd->add_option("--out", gen_args.out, "stream output path");
  gen_cmd->add_option("--truth", gen_args.truth, "ground truth output path");
  gen_cmd->add_option("--rules-out", gen_args.rules_out, "write the analog rule set here");
  gen_cmd->add_option("--items", gen_args.cards.n_items, "item key cardinality");
  gen_cmd->add_option("--geos", gen_args.cards.n_geos, "geo key cardinality");
  gen_cmd->add_option("--promos", gen_args.cards.n_promos, "promo key cardinality");
  gen_cmd->add_option("--stores", gen_args.cards.n_stores, "store key cardinality");
  gen_cmd->add_option("--customers", gen_args.cards.n_customers, "customer key cardinality");
  gen_cmd->add_option("--max-lines", gen_args.cards.max_lines_per_ticket, "max basket lines per ticket");

  std::string eval_output, eval_truth, eval_rules, eval_csv;
  auto* eval_cmd = app.add_subcommand("eval", "compute per-rule dirty ratios against ground truth");
  eval_cmd->add_option("--output", eval_output, "cleaned stream (JSONL)")->required();
  eval_cmd->add_option("--truth", eval_truth, "ground truth (JSONL)")->required();
  eval_cmd->add_option("--rules", eval_rules, "rule spec file (defaults to the analog rule set)");
  eval_cmd->add_option("--csv", eval_csv, "also write the report to this CSV");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "run a benchmark scenario");
  bench_cmd->add_option("scenario", bench_args.scenario,
                        "coordination-comparison|windowing-comparison|dynamic-rules|micro-batch-baseline")
      ->required();
  bench_cmd->add_option("--out-dir", bench_args.out_dir, "report directory");
  bench_cmd->add_option("--n", bench_args.n, "tuple count");
  bench_cmd->add_option("--seed", bench_args.seed, "random seed");

  try {
    app.parse(argc, argv);
    if (*run_cmd) return cmd_run(run_args);
    if (*gen_cmd) return cmd_gen(gen_args);
    if (*eval_cmd) return cmd_eval(eval_output, eval_truth, eval_rules, eval_csv);
    if (*bench_cmd) return cmd_bench(bench_args);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
