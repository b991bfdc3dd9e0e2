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
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bleach/model.hpp"
#include "bleach/windowing.hpp"

namespace bleach::detect {

/// Cells of one cell group sharing the same RHS value, compressed to the
/// id list. tuple_ids is kept sorted ascending.
struct SuperCell {
  std::vector<TupleId> tuple_ids;
  AttributeId attr;
  Value value;

  friend bool operator==(const SuperCell&, const SuperCell&) = default;
};

/// Key of a cell group: (rule, LHS value vector).
struct CellGroupId {
  RuleId rule_id = 0;
  std::vector<Value> lhs_values;

  friend bool operator==(const CellGroupId&, const CellGroupId&) = default;
  friend std::strong_ordering operator<=>(const CellGroupId&, const CellGroupId&) = default;

  std::size_t hash() const {
    std::size_t h = std::hash<RuleId>{}(rule_id);
    for (const auto& v : lhs_values) h = hash_combine(h, v.hash());
    return h;
  }
};

struct CellGroupIdHash {
  std::size_t operator()(const CellGroupId& id) const { return id.hash(); }
};

/// All RHS cells whose sub-tuples share one LHS value, grouped per value.
struct CellGroup {
  CellGroupId id;
  std::vector<SuperCell> super_cells;  // pairwise-distinct values

  bool empty() const { return super_cells.empty(); }
  std::size_t cell_count() const;
  SuperCell* find_value(const Value& v);

  /// Drops tuple ids below the window bound; removes emptied super cells.
  void trim_below(TupleId lower_bound);
};

enum class ViolationKind { NoViolation, Complete, AppendOnly };

/// Per-(tuple, rule) detection outcome. A complete violation carries the
/// single conflicting super cell from the data history; an append-only one
/// carries just the current cell, since the history cells were already
/// shipped in earlier messages.
struct ViolationMessage {
  ViolationKind kind = ViolationKind::NoViolation;
  RuleId rule_id = 0;
  TupleId tuple_id = 0;
  CellGroupId cg_id;    // Complete / AppendOnly
  Cell current;         // Complete / AppendOnly
  SuperCell old_cells;  // Complete only

  bool is_violation() const { return kind != ViolationKind::NoViolation; }

  static ViolationMessage none(RuleId r, TupleId t) {
    ViolationMessage m;
    m.kind = ViolationKind::NoViolation;
    m.rule_id = r;
    m.tuple_id = t;
    return m;
  }
};

/// All per-rule messages for one input tuple, released in stream order.
struct TupleBundle {
  Tuple tuple;
  std::map<RuleId, ViolationMessage> messages;

  bool clean() const {
    for (const auto& [rid, m] : messages)
      if (m.is_violation()) return false;
    return true;
  }
};

/// One detect worker per rule: owns the rule's data history and runs the
/// lookup/emit algorithm on each incoming sub-tuple.
class DetectWorker {
 public:
  DetectWorker(Rule rule, const windowing::WindowConfig& wcfg);

  ViolationMessage process(const SubTuple& st);

  /// Window slide: evicts dead cell groups and trims aging ones.
  void on_slide(TupleId lower_bound);

  const Rule& rule() const { return rule_; }
  std::size_t group_count() const { return groups_.size(); }
  std::uint64_t stored_cells() const;

  /// Snapshot of the data history for inspection (groups sorted by key).
  std::string debug_dump_json() const;

  /// Test hook: direct lookup of a group.
  const CellGroup* find_group(const CellGroupId& id) const;

 private:
  CellGroup& insert_current(const CellGroupId& id, const Cell& cur);

  Rule rule_;
  std::unordered_map<CellGroupId, CellGroup, CellGroupIdHash> groups_;
  windowing::KListQueue<CellGroupId, CellGroupIdHash> eviction_;
  TupleId lower_bound_ = 0;  // current window lower bound (0 = unbounded)
};

/// Fans an input tuple out into one sub-tuple per active rule.
std::vector<SubTuple> route_ingress(const Tuple& t, const std::vector<Rule>& rules);

/// Gathers per-rule messages and releases one bundle per tuple, strictly in
/// tuple-id order. The expected message count is bound at admission time so
/// rule updates mid-stream cannot starve or overfill a bundle.
class EgressCollector {
 public:
  void admit(Tuple t, std::size_t expected_messages);
  void deliver(TupleId id, const ViolationMessage& msg);

  /// Bundles completed at the head of the stream, in order.
  std::vector<TupleBundle> drain_ready();

  std::size_t pending() const { return pending_.size(); }

 private:
  struct Pending {
    TupleBundle bundle;
    std::size_t expected = 0;
  };
  std::map<TupleId, Pending> pending_;  // keyed in stream order
};

}  // namespace bleach::detect
