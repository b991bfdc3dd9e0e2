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
#include <unordered_map>
#include <vector>

#include "bleach/detect.hpp"
#include "bleach/model.hpp"
#include "bleach/windowing.hpp"

namespace bleach::repair {

using detect::CellGroupId;
using detect::CellGroupIdHash;
using detect::TupleBundle;
using detect::ViolationKind;
using detect::ViolationMessage;

/// Deterministic cell placement across repair workers.
inline std::size_t partition_cell(TupleId tuple_id, std::size_t n_workers) {
  return static_cast<std::size_t>(tuple_id % n_workers);
}

/// Sorted set of the cell group ids merged into one subgraph.
struct SubgraphId {
  std::vector<CellGroupId> cg_ids;  // sorted, unique

  void insert(const CellGroupId& cg);
  void merge(const SubgraphId& other);
  bool contains(const CellGroupId& cg) const;
  bool contains_rule_other_than(RuleId rule) const;

  friend bool operator==(const SubgraphId&, const SubgraphId&) = default;
  friend std::strong_ordering operator<=>(const SubgraphId&, const SubgraphId&) = default;
};

struct CellKey {
  TupleId tuple_id = 0;
  AttributeId attr;

  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    return hash_combine(std::hash<TupleId>{}(k.tuple_id), std::hash<std::string>{}(k.attr));
  }
};

/// Value bucket of one cell group inside a subgraph. live_ids holds every
/// in-window cell seen in messages (all workers see the same ids); count
/// covers only the cells this worker owns, and under cumulative windowing it
/// survives the eviction of the ids that produced it.
struct CumulativeSuperCell {
  Value value;
  std::vector<TupleId> live_ids;  // sorted
  std::uint64_t count = 0;        // owned: live + flushed
  TupleId first_seen = 0;         // smallest tuple id ever merged in

  bool dead() const { return live_ids.empty() && count == 0; }
};

struct GroupState {
  std::map<Value, CumulativeSuperCell> cells;

  bool has_live_cells() const {
    for (const auto& [v, csc] : cells)
      if (!csc.live_ids.empty()) return true;
    return false;
  }
};

/// A cell sitting in several cell groups bridges them inside a subgraph.
/// Records are compressed per (connecting groups, value); a flushed record
/// keeps connecting (and its owned count) after its ids left the window.
struct HingeKey {
  std::vector<CellGroupId> connects;  // sorted, size >= 2
  Value value;

  friend bool operator==(const HingeKey&, const HingeKey&) = default;
  friend std::strong_ordering operator<=>(const HingeKey&, const HingeKey&) = default;
};

struct HingeState {
  std::vector<TupleId> live_ids;  // sorted, all workers' cells
  std::uint64_t owned_count = 0;  // owned: live + flushed
};

struct Subgraph {
  SubgraphId id;
  AttributeId attr;  // all cells of a subgraph share one RHS attribute
  std::map<CellGroupId, GroupState> groups;
  std::map<HingeKey, HingeState> hinges;
  TupleId max_id = 0;
  TupleId trimmed_to = 0;

  std::size_t live_cell_count() const;
};

/// Subgraph-id union request, one per worker per conflicting attribute.
struct MergeProposal {
  std::size_t worker = 0;
  TupleId tuple_id = 0;
  AttributeId attr;
  SubgraphId subgraph_id;
};

struct MergeDecision {
  TupleId tuple_id = 0;
  AttributeId attr;
  SubgraphId subgraph_id;  // union of all proposals
};

/// Stateless arbiter: the decision is the union of the proposed cg-id lists.
MergeDecision coordinate(const std::vector<MergeProposal>& proposals);

struct Candidate {
  Value value;
  std::uint64_t frequency = 0;
  TupleId first_seen = 0;
};

/// Top-k candidate values with local frequencies for one (tuple, attribute).
struct RepairProposal {
  static constexpr std::size_t kTopK = 5;
  TupleId tuple_id = 0;
  AttributeId attr;
  std::vector<Candidate> candidates;  // sorted by frequency desc
};

struct RepairDecision {
  TupleId tuple_id = 0;
  AttributeId attr;
  Value chosen;
  Value original;
};

struct WorkerCounters {
  std::uint64_t violations_applied = 0;
  std::uint64_t subgraph_merges = 0;
  std::uint64_t subgraph_splits = 0;
  std::uint64_t cells_flushed = 0;
};

/// One partition owner of the distributed violation graph. Every worker
/// receives every dirty bundle; it stores cell contents only for the tuple
/// ids that hash to it but tracks seen memberships for all of them, so merge
/// rules work on cells it does not own.
class RepairWorker {
 public:
  RepairWorker(std::size_t index, std::size_t n_workers, const windowing::WindowConfig& wcfg);

  /// True iff a complete violation's old super cell intersects a subgraph
  /// whose id carries a cell group of a different rule. Call before
  /// apply_bundle, on the pre-bundle state.
  bool needs_coordination(const TupleBundle& bundle) const;

  /// The RHS attributes whose messages trigger that condition (empty iff
  /// needs_coordination is false).
  std::vector<AttributeId> coordination_attrs(const TupleBundle& bundle) const;

  /// Applies merge rules for every violation message; returns the RHS
  /// attributes whose subgraphs were touched.
  std::vector<AttributeId> apply_bundle(const TupleBundle& bundle);

  std::vector<MergeProposal> merge_proposals(TupleId tuple_id,
                                             const std::vector<AttributeId>& attrs) const;
  void apply_decision(const MergeDecision& decision);

  RepairProposal propose(TupleId tuple_id, const AttributeId& attr) const;

  void on_slide(TupleId lower_bound);
  void on_rule_deleted(RuleId rule);

  // Introspection.
  std::size_t subgraph_count() const { return subgraphs_.size(); }
  std::vector<SubgraphId> subgraph_ids() const;
  const Subgraph* find_subgraph(const SubgraphId& id) const;
  const WorkerCounters& counters() const { return counters_; }
  std::string debug_dump_json() const;

  /// Test hook: inserts cells through the regular merge machinery, as if
  /// the given group contents had arrived in past messages. Only the cells
  /// listed here become known to this worker.
  void seed_subgraph(const AttributeId& attr,
                     const std::vector<std::pair<CellGroupId, std::vector<std::pair<TupleId, Value>>>>&
                         groups);

 private:
  struct CellInfo {
    std::uint64_t handle = 0;
    Value value;
    std::vector<CellGroupId> connects;  // sorted
  };

  using Handle = std::uint64_t;

  bool owns(TupleId id) const { return partition_cell(id, n_workers_) == index_; }
  Subgraph& sg(Handle h) { return subgraphs_.at(h); }
  const Subgraph& sg(Handle h) const { return subgraphs_.at(h); }

  Handle create_subgraph(const AttributeId& attr);
  void destroy_subgraph(Handle h);
  Handle merge_subgraphs(std::vector<Handle> handles);
  void add_cell(Handle h, const CellGroupId& cg, const Cell& cell);

  /// Window maintenance for one subgraph; may delete or split it.
  void purge(Handle h, TupleId lower_bound);

  /// Removes the given groups, demotes hinge records, splits the remainder
  /// into connected components. Shared by rule deletion and windowing.
  void remove_groups_and_split(Handle h, const std::vector<CellGroupId>& removed);

  /// Splits a subgraph into hinge-connected components if disconnected.
  void split_components(Handle h);

  void rehome_cells(const Subgraph& subgraph, Handle new_handle);

  std::size_t index_;
  std::size_t n_workers_;
  windowing::Strategy strategy_;
  TupleId lower_bound_ = 0;

  Handle next_handle_ = 1;
  std::map<Handle, Subgraph> subgraphs_;
  std::unordered_map<CellGroupId, Handle, CellGroupIdHash> cg_index_;
  std::unordered_map<CellKey, CellInfo, CellKeyHash> cell_index_;
  windowing::KListQueue<Handle> eviction_;
  WorkerCounters counters_;
};

/// Folds per-worker repair proposals into the final value per attribute:
/// highest aggregate frequency, ties to the earliest-seen value, then to
/// the lexicographically smallest.
struct Aggregator {
  static std::pair<Tuple, std::vector<RepairDecision>> decide(
      const Tuple& tuple, const std::vector<RepairProposal>& proposals);
};

}  // namespace bleach::repair
