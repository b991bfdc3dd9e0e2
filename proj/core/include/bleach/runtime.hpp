/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bleach/dynamics.hpp"
#include "bleach/io.hpp"
#include "bleach/model.hpp"
#include "bleach/repair.hpp"
#include "bleach/windowing.hpp"

namespace bleach::runtime {

enum class Protocol { Basic, Dr, Ir };
enum class Transport { InProcess, Threads };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

struct PipelineConfig {
  std::vector<Rule> rules;
  std::size_t n_repair_workers = 2;
  Protocol protocol = Protocol::Dr;
  windowing::WindowConfig window;
  Transport transport = Transport::InProcess;
  double latency_sample_rate = 0.01;  // 1 per 100 tuples
  std::size_t channel_capacity = 1024;

  void validate() const;
};

struct Counters {
  std::uint64_t tuples_in = 0;
  std::uint64_t tuples_out = 0;
  std::uint64_t dead_letters = 0;
  std::uint64_t violation_messages = 0;
  std::uint64_t nonviolation_messages = 0;
  std::uint64_t dirty_bundles = 0;
  std::uint64_t coordination_rounds = 0;
  std::uint64_t coordination_messages = 0;
  std::uint64_t subgraph_merges = 0;
  std::uint64_t subgraph_splits = 0;
  std::uint64_t repairs = 0;
  std::uint64_t rule_adds = 0;
  std::uint64_t rule_deletes = 0;
  std::uint64_t rejected_updates = 0;
  std::uint64_t window_slides = 0;
  std::uint64_t detect_groups = 0;     // at finish
  std::uint64_t repair_subgraphs = 0;  // at finish

  std::vector<std::pair<std::string, std::uint64_t>> rows() const;
};

/// Transport-agnostic pipeline: ingress -> detect workers -> egress ->
/// repair workers (+ coordinator) -> aggregator. Outputs are delivered in
/// tuple-id order through the callback.
class Engine {
 public:
  using OutputFn = std::function<void(const Tuple&, const std::vector<repair::RepairDecision>&)>;

  virtual ~Engine() = default;

  /// Tuples must arrive with strictly increasing ids.
  virtual void push_tuple(Tuple t) = 0;
  /// Applies a rule update at the current stream position. Invalid updates
  /// are rejected and counted, the pipeline keeps running.
  virtual void push_update(const dynamics::RuleUpdate& u) = 0;
  /// Drains in-flight work; counters are final afterwards.
  virtual void finish() = 0;

  virtual const Counters& counters() const = 0;
  virtual std::vector<RuleId> active_rule_ids() const = 0;
  virtual std::string dump_detect_history(RuleId rule) const = 0;
  virtual std::string dump_repair_worker(std::size_t index) const = 0;
};

std::unique_ptr<Engine> make_engine(const PipelineConfig& cfg, SchemaPtr schema,
                                    Engine::OutputFn on_output);

struct LatencySample {
  TupleId tuple_id = 0;
  double millis = 0;
};

struct ThroughputPoint {
  double elapsed_s = 0;
  std::uint64_t tuples = 0;
  double per_s = 0;
};

struct Metrics {
  std::vector<ThroughputPoint> throughput;
  std::vector<LatencySample> latency;
  Counters counters;

  double mean_latency_ms() const;
  void write_csv_dir(const std::string& dir) const;
};

struct RunOptions {
  std::vector<dynamics::RuleUpdate> schedule;  // sorted by effective_offset
  io::LineSink* dead_letters = nullptr;
  std::string debug_dump_dir;  // empty = no dumps
};

/// Drives an engine from JSONL input to JSONL output: schema binding,
/// dead-lettering, scheduled rule updates, metrics collection.
Metrics run(const PipelineConfig& cfg, io::LineSource& input, io::LineSink& output,
            const RunOptions& opts);

}  // namespace bleach::runtime
