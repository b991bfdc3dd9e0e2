/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/repair.hpp"

#include <algorithm>
#include <cassert>

#include <json.hpp>

namespace bleach::repair {

namespace {

void sorted_insert(std::vector<TupleId>& ids, TupleId id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) ids.insert(it, id);
}

bool sorted_contains(const std::vector<TupleId>& ids, TupleId id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  return it != ids.end() && *it == id;
}

void sorted_erase(std::vector<TupleId>& ids, TupleId id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it != ids.end() && *it == id) ids.erase(it);
}

nlohmann::json value_json(const Value& v) {
  return v.is_null() ? nlohmann::json(nullptr) : nlohmann::json(v.str());
}

nlohmann::json cg_json(const CellGroupId& cg) {
  nlohmann::json j;
  j["rule_id"] = cg.rule_id;
  nlohmann::json lhs = nlohmann::json::array();
  for (const auto& v : cg.lhs_values) lhs.push_back(value_json(v));
  j["lhs"] = lhs;
  return j;
}

/// Union-find over small index ranges.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    for (std::size_t i = 0; i < n; ++i) parent_[i] = i;
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

void SubgraphId::insert(const CellGroupId& cg) {
  auto it = std::lower_bound(cg_ids.begin(), cg_ids.end(), cg);
  if (it == cg_ids.end() || !(*it == cg)) cg_ids.insert(it, cg);
}

void SubgraphId::merge(const SubgraphId& other) {
  for (const auto& cg : other.cg_ids) insert(cg);
}

bool SubgraphId::contains(const CellGroupId& cg) const {
  auto it = std::lower_bound(cg_ids.begin(), cg_ids.end(), cg);
  return it != cg_ids.end() && *it == cg;
}

bool SubgraphId::contains_rule_other_than(RuleId rule) const {
  return std::any_of(cg_ids.begin(), cg_ids.end(),
                     [rule](const CellGroupId& cg) { return cg.rule_id != rule; });
}

std::size_t Subgraph::live_cell_count() const {
  std::set<TupleId> seen;
  for (const auto& [cg, group] : groups)
    for (const auto& [v, csc] : group.cells)
      for (TupleId id : csc.live_ids) seen.insert(id);
  return seen.size();
}

MergeDecision coordinate(const std::vector<MergeProposal>& proposals) {
  if (proposals.empty()) throw ProtocolError("coordinate() without proposals");
  MergeDecision d;
  d.tuple_id = proposals.front().tuple_id;
  d.attr = proposals.front().attr;
  for (const auto& p : proposals) {
    if (p.tuple_id != d.tuple_id || p.attr != d.attr)
      throw ProtocolError("mixed proposals in one coordination round");
    d.subgraph_id.merge(p.subgraph_id);
  }
  return d;
}

RepairWorker::RepairWorker(std::size_t index, std::size_t n_workers,
                           const windowing::WindowConfig& wcfg)
    : index_(index),
      n_workers_(n_workers == 0 ? 1 : n_workers),
      strategy_(wcfg.strategy),
      eviction_(wcfg.enabled() ? wcfg.k() : 1) {}

RepairWorker::Handle RepairWorker::create_subgraph(const AttributeId& attr) {
  Handle h = next_handle_++;
  Subgraph s;
  s.attr = attr;
  s.trimmed_to = lower_bound_;
  subgraphs_.emplace(h, std::move(s));
  return h;
}

void RepairWorker::destroy_subgraph(Handle h) {
  const Subgraph& s = sg(h);
  for (const auto& cg : s.id.cg_ids) {
    auto it = cg_index_.find(cg);
    if (it != cg_index_.end() && it->second == h) cg_index_.erase(it);
  }
  for (const auto& [cg, group] : s.groups)
    for (const auto& [v, csc] : group.cells)
      for (TupleId id : csc.live_ids) cell_index_.erase(CellKey{id, s.attr});
  eviction_.erase(h);
  subgraphs_.erase(h);
}

void RepairWorker::rehome_cells(const Subgraph& subgraph, Handle new_handle) {
  for (const auto& [cg, group] : subgraph.groups)
    for (const auto& [v, csc] : group.cells)
      for (TupleId id : csc.live_ids) {
        auto it = cell_index_.find(CellKey{id, subgraph.attr});
        if (it != cell_index_.end()) it->second.handle = new_handle;
      }
  for (const auto& cg : subgraph.id.cg_ids) cg_index_[cg] = new_handle;
}

RepairWorker::Handle RepairWorker::merge_subgraphs(std::vector<Handle> handles) {
  std::sort(handles.begin(), handles.end());
  handles.erase(std::unique(handles.begin(), handles.end()), handles.end());
  Handle survivor = handles.front();
  Subgraph& dst = sg(survivor);
  for (std::size_t i = 1; i < handles.size(); ++i) {
    Subgraph victim = std::move(sg(handles[i]));
    assert(victim.attr == dst.attr);
    dst.id.merge(victim.id);
    rehome_cells(victim, survivor);
    for (auto& [cg, group] : victim.groups) {
      auto [it, inserted] = dst.groups.emplace(cg, std::move(group));
      assert(inserted);  // one worker never holds a cell group twice
      (void)it;
    }
    for (auto& [key, hinge] : victim.hinges) {
      auto it = dst.hinges.find(key);
      if (it == dst.hinges.end()) {
        dst.hinges.emplace(key, std::move(hinge));
      } else {
        for (TupleId id : hinge.live_ids) sorted_insert(it->second.live_ids, id);
        it->second.owned_count += hinge.owned_count;
      }
    }
    dst.max_id = std::max(dst.max_id, victim.max_id);
    dst.trimmed_to = std::min(dst.trimmed_to, victim.trimmed_to);
    eviction_.erase(handles[i]);
    subgraphs_.erase(handles[i]);
    ++counters_.subgraph_merges;
  }
  return survivor;
}

void RepairWorker::add_cell(Handle h, const CellGroupId& cg, const Cell& cell) {
  Subgraph& s = sg(h);
  assert(s.attr == cell.attr);
  CellKey key{cell.tuple_id, cell.attr};
  bool owned = owns(cell.tuple_id);

  auto ensure_in_group = [&](GroupState& group) {
    auto [cit, fresh] = group.cells.try_emplace(cell.value);
    CumulativeSuperCell& csc = cit->second;
    if (fresh) {
      csc.value = cell.value;
      csc.first_seen = cell.tuple_id;
    } else {
      csc.first_seen = std::min(csc.first_seen, cell.tuple_id);
    }
    sorted_insert(csc.live_ids, cell.tuple_id);
    if (owned) ++csc.count;
  };

  auto it = cell_index_.find(key);
  if (it == cell_index_.end()) {
    s.id.insert(cg);
    cg_index_[cg] = h;
    ensure_in_group(s.groups[cg]);
    cell_index_.emplace(key, CellInfo{h, cell.value, {cg}});
  } else {
    CellInfo& info = it->second;
    assert(info.handle == h);  // caller merged all containing subgraphs
    if (std::binary_search(info.connects.begin(), info.connects.end(), cg)) return;
    std::vector<CellGroupId> old_connects = info.connects;
    auto pos = std::lower_bound(info.connects.begin(), info.connects.end(), cg);
    info.connects.insert(pos, cg);

    s.id.insert(cg);
    cg_index_[cg] = h;
    ensure_in_group(s.groups[cg]);

    // The cell now bridges several groups: maintain the hinge records.
    if (old_connects.size() >= 2) {
      auto hit = s.hinges.find(HingeKey{old_connects, cell.value});
      assert(hit != s.hinges.end());
      sorted_erase(hit->second.live_ids, cell.tuple_id);
      if (owned) --hit->second.owned_count;
      if (hit->second.live_ids.empty() && hit->second.owned_count == 0) s.hinges.erase(hit);
    }
    HingeState& rec = s.hinges[HingeKey{info.connects, cell.value}];
    sorted_insert(rec.live_ids, cell.tuple_id);
    if (owned) ++rec.owned_count;
  }
  s.max_id = std::max(s.max_id, cell.tuple_id);
}

bool RepairWorker::needs_coordination(const TupleBundle& bundle) const {
  return !coordination_attrs(bundle).empty();
}

std::vector<AttributeId> RepairWorker::coordination_attrs(const TupleBundle& bundle) const {
  std::vector<AttributeId> out;
  for (const auto& [rid, msg] : bundle.messages) {
    if (msg.kind != ViolationKind::Complete) continue;
    for (TupleId id : msg.old_cells.tuple_ids) {
      auto it = cell_index_.find(CellKey{id, msg.old_cells.attr});
      if (it == cell_index_.end()) continue;
      if (sg(it->second.handle).id.contains_rule_other_than(msg.rule_id)) {
        if (std::find(out.begin(), out.end(), msg.old_cells.attr) == out.end())
          out.push_back(msg.old_cells.attr);
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<AttributeId> RepairWorker::apply_bundle(const TupleBundle& bundle) {
  std::vector<AttributeId> touched;
  for (const auto& [rid, msg] : bundle.messages) {
    if (!msg.is_violation()) continue;
    const AttributeId& attr = msg.current.attr;

    auto collect = [&]() {
      std::vector<Handle> handles;
      auto add = [&handles](Handle h) {
        if (std::find(handles.begin(), handles.end(), h) == handles.end()) handles.push_back(h);
      };
      if (auto it = cg_index_.find(msg.cg_id); it != cg_index_.end()) add(it->second);
      if (auto it = cell_index_.find(CellKey{msg.current.tuple_id, attr}); it != cell_index_.end())
        add(it->second.handle);
      if (msg.kind == ViolationKind::Complete)
        for (TupleId id : msg.old_cells.tuple_ids)
          if (auto it = cell_index_.find(CellKey{id, attr}); it != cell_index_.end())
            add(it->second.handle);
      return handles;
    };

    // Bring candidate subgraphs up to the current window before deciding
    // merges; purging may delete or split them, so collect again after.
    for (Handle h : collect()) purge(h, lower_bound_);

    std::vector<Handle> handles = collect();
    Handle h;
    if (handles.empty()) {
      h = create_subgraph(attr);
      sg(h).id.insert(msg.cg_id);
      cg_index_[msg.cg_id] = h;
    } else {
      h = merge_subgraphs(std::move(handles));
    }

    add_cell(h, msg.cg_id, msg.current);
    if (msg.kind == ViolationKind::Complete)
      for (TupleId id : msg.old_cells.tuple_ids)
        add_cell(h, msg.cg_id, Cell{id, attr, msg.old_cells.value});

    eviction_.touch(h);
    ++counters_.violations_applied;
    if (std::find(touched.begin(), touched.end(), attr) == touched.end()) touched.push_back(attr);
  }
  return touched;
}

std::vector<MergeProposal> RepairWorker::merge_proposals(
    TupleId tuple_id, const std::vector<AttributeId>& attrs) const {
  std::vector<MergeProposal> out;
  for (const auto& attr : attrs) {
    auto it = cell_index_.find(CellKey{tuple_id, attr});
    if (it == cell_index_.end()) continue;
    out.push_back(MergeProposal{index_, tuple_id, attr, sg(it->second.handle).id});
  }
  return out;
}

void RepairWorker::apply_decision(const MergeDecision& decision) {
  std::vector<Handle> handles;
  for (const auto& cg : decision.subgraph_id.cg_ids) {
    auto it = cg_index_.find(cg);
    if (it == cg_index_.end()) continue;
    if (std::find(handles.begin(), handles.end(), it->second) == handles.end())
      handles.push_back(it->second);
  }
  if (handles.empty()) return;
  Handle h = merge_subgraphs(std::move(handles));
  // Adopt the decided id even for cell groups this worker has never seen.
  sg(h).id.merge(decision.subgraph_id);
  for (const auto& cg : decision.subgraph_id.cg_ids) cg_index_[cg] = h;
  eviction_.touch(h);
}

RepairProposal RepairWorker::propose(TupleId tuple_id, const AttributeId& attr) const {
  RepairProposal p;
  p.tuple_id = tuple_id;
  p.attr = attr;
  auto it = cell_index_.find(CellKey{tuple_id, attr});
  if (it == cell_index_.end()) return p;
  const Subgraph& s = sg(it->second.handle);

  std::map<Value, Candidate> agg;
  for (const auto& [cg, group] : s.groups)
    for (const auto& [v, csc] : group.cells) {
      auto [ait, fresh] = agg.try_emplace(v, Candidate{v, 0, csc.first_seen});
      ait->second.frequency += csc.count;
      if (!fresh) ait->second.first_seen = std::min(ait->second.first_seen, csc.first_seen);
    }
  // A hinge cell sits in every group it connects; count it once.
  for (const auto& [key, hinge] : s.hinges) {
    auto ait = agg.find(key.value);
    if (ait == agg.end()) continue;
    std::uint64_t dup = (key.connects.size() - 1) * hinge.owned_count;
    ait->second.frequency = dup > ait->second.frequency ? 0 : ait->second.frequency - dup;
  }

  for (auto& [v, cand] : agg) p.candidates.push_back(cand);
  std::sort(p.candidates.begin(), p.candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    if (a.first_seen != b.first_seen) return a.first_seen < b.first_seen;
    return a.value < b.value;
  });
  if (p.candidates.size() > RepairProposal::kTopK) p.candidates.resize(RepairProposal::kTopK);
  return p;
}

void RepairWorker::purge(Handle h, TupleId lower_bound) {
  if (lower_bound == 0) return;
  auto sit = subgraphs_.find(h);
  if (sit == subgraphs_.end()) return;
  Subgraph& s = sit->second;
  if (s.trimmed_to >= lower_bound) return;
  s.trimmed_to = lower_bound;

  bool hinge_removed = false;
  std::vector<CellGroupId> dead_groups;

  for (auto& [cg, group] : s.groups) {
    for (auto cit = group.cells.begin(); cit != group.cells.end();) {
      CumulativeSuperCell& csc = cit->second;
      auto cut = std::lower_bound(csc.live_ids.begin(), csc.live_ids.end(), lower_bound);
      for (auto idp = csc.live_ids.begin(); idp != cut; ++idp) {
        TupleId id = *idp;
        bool owned = owns(id);
        if (strategy_ == windowing::Strategy::Basic && owned) --csc.count;
        if (owned && strategy_ == windowing::Strategy::Cumulative) ++counters_.cells_flushed;
        auto iit = cell_index_.find(CellKey{id, s.attr});
        if (iit != cell_index_.end()) {
          // First group to process this cell updates its hinge record.
          const CellInfo& info = iit->second;
          if (info.connects.size() >= 2) {
            auto hit = s.hinges.find(HingeKey{info.connects, info.value});
            if (hit != s.hinges.end()) {
              sorted_erase(hit->second.live_ids, id);
              if (strategy_ == windowing::Strategy::Basic) {
                if (owned) --hit->second.owned_count;
                if (hit->second.live_ids.empty()) {
                  s.hinges.erase(hit);
                  hinge_removed = true;
                }
              }
            }
          }
          cell_index_.erase(iit);
        }
      }
      csc.live_ids.erase(csc.live_ids.begin(), cut);
      if (csc.dead())
        cit = group.cells.erase(cit);
      else
        ++cit;
    }
    if (!group.has_live_cells()) dead_groups.push_back(cg);
  }

  if (!dead_groups.empty()) {
    remove_groups_and_split(h, dead_groups);
  } else if (hinge_removed) {
    split_components(h);
  }
}

void RepairWorker::remove_groups_and_split(Handle h, const std::vector<CellGroupId>& removed) {
  auto sit = subgraphs_.find(h);
  if (sit == subgraphs_.end()) return;
  Subgraph& s = sit->second;

  auto is_removed = [&removed](const CellGroupId& cg) {
    return std::find(removed.begin(), removed.end(), cg) != removed.end();
  };

  for (const auto& cg : removed) {
    auto git = s.groups.find(cg);
    if (git == s.groups.end()) continue;
    // Detach every live cell of the group; cells that also belong to other
    // groups survive there as plain cells or narrower hinges.
    for (auto& [v, csc] : git->second.cells) {
      for (TupleId id : csc.live_ids) {
        auto iit = cell_index_.find(CellKey{id, s.attr});
        if (iit == cell_index_.end()) continue;
        CellInfo& info = iit->second;
        if (info.connects.size() >= 2) {
          auto hit = s.hinges.find(HingeKey{info.connects, info.value});
          if (hit != s.hinges.end()) {
            sorted_erase(hit->second.live_ids, id);
            if (owns(id)) --hit->second.owned_count;
            if (hit->second.live_ids.empty() && hit->second.owned_count == 0) s.hinges.erase(hit);
          }
        }
        std::erase(info.connects, cg);
        if (info.connects.empty()) {
          cell_index_.erase(iit);
        } else if (info.connects.size() >= 2) {
          HingeState& rec = s.hinges[HingeKey{info.connects, info.value}];
          sorted_insert(rec.live_ids, id);
          if (owns(id)) ++rec.owned_count;
        }
      }
    }
    s.groups.erase(git);
    auto cgit = cg_index_.find(cg);
    if (cgit != cg_index_.end() && cgit->second == h) cg_index_.erase(cgit);
    std::erase(s.id.cg_ids, cg);
  }

  // Rewrite flushed hinge records that referenced removed groups.
  std::map<HingeKey, HingeState> hinges;
  for (auto& [key, state] : s.hinges) {
    std::vector<CellGroupId> connects;
    for (const auto& cg : key.connects)
      if (!is_removed(cg)) connects.push_back(cg);
    if (connects.size() < 2) continue;  // demoted: counts already live in its group
    HingeKey nk{std::move(connects), key.value};
    auto it = hinges.find(nk);
    if (it == hinges.end()) {
      hinges.emplace(std::move(nk), std::move(state));
    } else {
      for (TupleId id : state.live_ids) sorted_insert(it->second.live_ids, id);
      it->second.owned_count += state.owned_count;
    }
  }
  s.hinges = std::move(hinges);

  if (s.groups.empty()) {
    destroy_subgraph(h);
    return;
  }
  split_components(h);
}

void RepairWorker::split_components(Handle h) {
  Subgraph& s = sg(h);
  std::vector<CellGroupId> cgs;
  cgs.reserve(s.groups.size());
  for (const auto& [cg, group] : s.groups) cgs.push_back(cg);
  if (cgs.size() <= 1) {
    s.id.cg_ids = cgs;
    if (!cgs.empty()) cg_index_[cgs.front()] = h;
    return;
  }

  std::map<CellGroupId, std::size_t> pos;
  for (std::size_t i = 0; i < cgs.size(); ++i) pos.emplace(cgs[i], i);
  DisjointSet ds(cgs.size());
  for (const auto& [key, hinge] : s.hinges) {
    std::optional<std::size_t> first;
    for (const auto& cg : key.connects) {
      auto it = pos.find(cg);
      if (it == pos.end()) continue;
      if (!first)
        first = it->second;
      else
        ds.unite(*first, it->second);
    }
  }

  std::map<std::size_t, std::vector<CellGroupId>> components;
  for (std::size_t i = 0; i < cgs.size(); ++i) components[ds.find(i)].push_back(cgs[i]);
  if (components.size() == 1) {
    s.id.cg_ids = cgs;  // already sorted: groups map order
    for (const auto& cg : cgs) cg_index_[cg] = h;
    return;
  }

  // Disconnected: one subgraph per component.
  Subgraph original = std::move(s);
  eviction_.erase(h);
  subgraphs_.erase(h);
  ++counters_.subgraph_splits;

  for (auto& [root, members] : components) {
    Handle nh = create_subgraph(original.attr);
    Subgraph& ns = sg(nh);
    ns.trimmed_to = original.trimmed_to;
    for (const auto& cg : members) {
      ns.id.insert(cg);
      auto git = original.groups.find(cg);
      ns.groups.emplace(cg, std::move(git->second));
      cg_index_[cg] = nh;
      ns.max_id = original.max_id;
    }
    for (const auto& [key, hinge] : original.hinges)
      if (std::binary_search(members.begin(), members.end(), key.connects.front()))
        ns.hinges.emplace(key, hinge);
    rehome_cells(ns, nh);
    eviction_.touch(nh);
  }
}

void RepairWorker::on_slide(TupleId lower_bound) {
  lower_bound_ = lower_bound;
  auto res = eviction_.slide();
  for (Handle h : res.evicted) {
    auto it = subgraphs_.find(h);
    if (it == subgraphs_.end()) continue;
    assert(it->second.max_id < lower_bound);
    destroy_subgraph(h);
  }
  for (Handle h : res.aging) purge(h, lower_bound);
}

void RepairWorker::on_rule_deleted(RuleId rule) {
  std::map<Handle, std::vector<CellGroupId>> by_handle;
  for (const auto& [cg, h] : cg_index_)
    if (cg.rule_id == rule) by_handle[h].push_back(cg);
  for (auto& [h, cgs] : by_handle) {
    std::sort(cgs.begin(), cgs.end());
    remove_groups_and_split(h, cgs);
  }
}

std::vector<SubgraphId> RepairWorker::subgraph_ids() const {
  std::vector<SubgraphId> out;
  for (const auto& [h, s] : subgraphs_) out.push_back(s.id);
  std::sort(out.begin(), out.end());
  return out;
}

const Subgraph* RepairWorker::find_subgraph(const SubgraphId& id) const {
  for (const auto& [h, s] : subgraphs_)
    if (s.id == id) return &s;
  return nullptr;
}

void RepairWorker::seed_subgraph(
    const AttributeId& attr,
    const std::vector<std::pair<CellGroupId, std::vector<std::pair<TupleId, Value>>>>& groups) {
  Handle h = create_subgraph(attr);
  for (const auto& [cg, cells] : groups) {
    sg(h).id.insert(cg);
    cg_index_[cg] = h;
    for (const auto& [id, value] : cells) add_cell(h, cg, Cell{id, attr, value});
  }
  eviction_.touch(h);
}

std::string RepairWorker::debug_dump_json() const {
  nlohmann::json out;
  out["worker"] = index_;
  out["subgraphs"] = nlohmann::json::array();
  for (const auto& [h, s] : subgraphs_) {
    nlohmann::json j;
    nlohmann::json id = nlohmann::json::array();
    for (const auto& cg : s.id.cg_ids) id.push_back(cg_json(cg));
    j["id"] = id;
    j["attr"] = s.attr;
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [cg, group] : s.groups) {
      nlohmann::json g;
      g["cg"] = cg_json(cg);
      nlohmann::json cells = nlohmann::json::array();
      for (const auto& [v, csc] : group.cells) {
        nlohmann::json c;
        c["value"] = value_json(v);
        c["live_ids"] = csc.live_ids;
        c["count"] = csc.count;
        cells.push_back(c);
      }
      g["cells"] = cells;
      groups.push_back(g);
    }
    j["groups"] = groups;
    nlohmann::json hinges = nlohmann::json::array();
    for (const auto& [key, hinge] : s.hinges) {
      nlohmann::json hj;
      nlohmann::json connects = nlohmann::json::array();
      for (const auto& cg : key.connects) connects.push_back(cg_json(cg));
      hj["connects"] = connects;
      hj["value"] = value_json(key.value);
      hj["live_ids"] = hinge.live_ids;
      hj["owned_count"] = hinge.owned_count;
      hinges.push_back(hj);
    }
    j["hinges"] = hinges;
    out["subgraphs"].push_back(j);
  }
  return out.dump();
}

std::pair<Tuple, std::vector<RepairDecision>> Aggregator::decide(
    const Tuple& tuple, const std::vector<RepairProposal>& proposals) {
  std::map<AttributeId, std::map<Value, Candidate>> per_attr;
  for (const auto& p : proposals)
    for (const auto& c : p.candidates) {
      auto [it, fresh] = per_attr[p.attr].try_emplace(c.value, c);
      if (!fresh) {
        it->second.frequency += c.frequency;
        it->second.first_seen = std::min(it->second.first_seen, c.first_seen);
      }
    }

  Tuple out = tuple;
  std::vector<RepairDecision> decisions;
  for (const auto& [attr, cands] : per_attr) {
    if (cands.empty()) continue;
    const Candidate* best = nullptr;
    for (const auto& [v, c] : cands) {
      if (!best || c.frequency > best->frequency ||
          (c.frequency == best->frequency && c.first_seen < best->first_seen) ||
          (c.frequency == best->frequency && c.first_seen == best->first_seen &&
           c.value < best->value))
        best = &c;
    }
    const Value& current = out.at(attr);
    if (!(best->value == current)) {
      decisions.push_back(RepairDecision{tuple.id, attr, best->value, current});
      out.at(attr) = best->value;
    }
  }
  return {std::move(out), std::move(decisions)};
}

}  // namespace bleach::repair
