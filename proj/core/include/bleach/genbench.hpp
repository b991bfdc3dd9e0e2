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

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bleach/io.hpp"
#include "bleach/model.hpp"

namespace bleach::gen {

/// Dirt-rate spike over a tuple interval (stress segment).
struct SpikeConfig {
  std::uint64_t from = 0;  // 0-based tuple offset, inclusive
  std::uint64_t to = 0;    // exclusive
  double rate = 0.5;
};

struct GenConfig {
  std::uint64_t n_tuples = 200000;
  std::uint64_t seed = 1;
  double p_rhs_dirty = 0.10;
  double p_lhs_null = 0.10;
  std::optional<SpikeConfig> spike;

  // Key cardinalities of the star-schema dictionaries, sized so that keys
  // recur several times per default window (as in the full-scale stream).
  std::size_t n_items = 2500;
  std::size_t n_brands = 400;
  std::size_t n_categories = 40;
  std::size_t n_geos = 2000;
  std::size_t n_states = 25;
  std::size_t n_promos = 250;
  std::size_t n_stores = 100;
  std::size_t n_customers = 1500;
  std::size_t max_lines_per_ticket = 6;

  void validate() const;
};

/// The eight retail rules mirroring the evaluation rule set, with two
/// intersecting pairs: rules 4/5 share store_name, rules 6/7 share email.
std::vector<Rule> analog_ruleset();
SchemaPtr analog_schema();

struct GroundTruth {
  struct Row {
    TupleId id = 0;
    std::map<AttributeId, Value> clean_rhs;
    std::set<AttributeId> dirtied;  // RHS attrs perturbed
    std::set<AttributeId> nulled;   // LHS attrs replaced by NULL
  };
  std::vector<Row> rows;  // ascending tuple id

  const Row* find(TupleId id) const;
};

struct Generated {
  std::vector<Tuple> tuples;
  GroundTruth truth;
};

Generated generate(const GenConfig& cfg);

void write_truth(const GroundTruth& truth, io::LineSink& sink);
GroundTruth read_truth(io::LineSource& source);

struct RuleReport {
  RuleId rule_id = 0;
  AttributeId rhs;
  std::uint64_t n = 0;
  std::uint64_t applicable = 0;  // condition holds and no LHS attr nulled
  std::uint64_t dirty_in = 0;
  std::uint64_t dirty_out_all = 0;
  std::uint64_t dirty_out_applicable = 0;

  double input_ratio() const { return n ? double(dirty_in) / double(n) : 0.0; }
  double ratio_all() const { return n ? double(dirty_out_all) / double(n) : 0.0; }
  double ratio_applicable() const {
    return applicable ? double(dirty_out_applicable) / double(applicable) : 0.0;
  }
};

/// Fraction of output tuples whose RHS value differs from ground truth,
/// per rule; reported over all tuples and over rule-applicable ones.
std::vector<RuleReport> dirty_ratio(const std::vector<Tuple>& output, const GroundTruth& truth,
                                    const std::vector<Rule>& rules);

/// Offline equivalence-class cleaner: connected components over violating
/// cell groups, majority value per class (ties to the earliest-seen value,
/// then lexicographic), all member cells rewritten. Used as the oracle for
/// the streaming engine and as the micro-batch cleaning step.
std::vector<Tuple> batch_oracle(const std::vector<Tuple>& tuples, const std::vector<Rule>& rules);

/// Simulated-time cost model shared by the baseline comparison.
inline constexpr double kSimArrivalInterval = 1.0;  // time units between arrivals
inline constexpr double kSimPerTupleCost = 0.1;     // cleaning cost per tuple

/// Per-tuple latency of record-at-a-time cleaning in the same model.
inline constexpr double kSimRecordLatency = kSimPerTupleCost;

struct MicroBatchResult {
  std::vector<Tuple> output;
  double avg_latency = 0;  // simulated time units
};

/// Buffers the stream into tumbling windows of `window_tuples` records and
/// runs the batch cleaner on each buffer. A tuple's simulated latency is
/// (window close - arrival) plus the batch execution time.
MicroBatchResult micro_batch_clean(const std::vector<Tuple>& input, std::size_t window_tuples,
                                   const std::vector<Rule>& rules);

}  // namespace bleach::gen
