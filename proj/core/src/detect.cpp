/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/detect.hpp"

#include <algorithm>
#include <cassert>

#include <json.hpp>

namespace bleach::detect {

std::size_t CellGroup::cell_count() const {
  std::size_t n = 0;
  for (const auto& sc : super_cells) n += sc.tuple_ids.size();
  return n;
}

SuperCell* CellGroup::find_value(const Value& v) {
  for (auto& sc : super_cells)
    if (sc.value == v) return &sc;
  return nullptr;
}

void CellGroup::trim_below(TupleId lower_bound) {
  for (auto& sc : super_cells) {
    auto cut = std::lower_bound(sc.tuple_ids.begin(), sc.tuple_ids.end(), lower_bound);
    sc.tuple_ids.erase(sc.tuple_ids.begin(), cut);
  }
  super_cells.erase(std::remove_if(super_cells.begin(), super_cells.end(),
                                   [](const SuperCell& sc) { return sc.tuple_ids.empty(); }),
                    super_cells.end());
}

DetectWorker::DetectWorker(Rule rule, const windowing::WindowConfig& wcfg)
    : rule_(std::move(rule)), eviction_(wcfg.enabled() ? wcfg.k() : 1) {}

CellGroup& DetectWorker::insert_current(const CellGroupId& id, const Cell& cur) {
  CellGroup& cg = groups_[id];
  cg.id = id;
  if (SuperCell* sc = cg.find_value(cur.value)) {
    sc->tuple_ids.push_back(cur.tuple_id);  // stream order keeps ids sorted
  } else {
    cg.super_cells.push_back(SuperCell{{cur.tuple_id}, cur.attr, cur.value});
  }
  eviction_.touch(id);
  return cg;
}

ViolationMessage DetectWorker::process(const SubTuple& st) {
  assert(st.rule_id == rule_.id);
  if (!st.cond_holds || lhs_has_null(st)) return ViolationMessage::none(rule_.id, st.tuple_id);

  CellGroupId key{rule_.id, st.lhs_values};
  const Cell& cur = st.rhs_cell;

  auto it = groups_.find(key);
  if (it != groups_.end() && lower_bound_ > 0) {
    // Lazy trim: the group must reflect the current window before lookup.
    it->second.trim_below(lower_bound_);
    if (it->second.empty()) {
      groups_.erase(it);
      eviction_.erase(key);
      it = groups_.end();
    }
  }

  ViolationMessage msg;
  msg.rule_id = rule_.id;
  msg.tuple_id = st.tuple_id;
  msg.cg_id = key;
  msg.current = cur;

  if (it == groups_.end()) {
    msg.kind = ViolationKind::NoViolation;
  } else if (it->second.super_cells.size() == 1) {
    const SuperCell& old = it->second.super_cells.front();
    if (old.value == cur.value) {
      msg.kind = ViolationKind::NoViolation;
    } else {
      msg.kind = ViolationKind::Complete;
      msg.old_cells = old;
    }
  } else {
    // Two or more super cells: the group is already known downstream, a
    // compact append-only message is enough whatever the current value is.
    msg.kind = ViolationKind::AppendOnly;
  }

  insert_current(key, cur);
  return msg;
}

void DetectWorker::on_slide(TupleId lower_bound) {
  lower_bound_ = lower_bound;
  auto res = eviction_.slide();
  for (const auto& key : res.evicted) {
    assert([&] {
      auto it = groups_.find(key);
      if (it == groups_.end()) return true;
      for (const auto& sc : it->second.super_cells)
        for (TupleId id : sc.tuple_ids)
          if (id >= lower_bound) return false;
      return true;
    }());
    groups_.erase(key);
  }
  for (const auto& key : res.aging) {
    auto it = groups_.find(key);
    if (it == groups_.end()) continue;
    it->second.trim_below(lower_bound);
    if (it->second.empty()) {
      groups_.erase(it);
      eviction_.erase(key);
    }
  }
}

std::uint64_t DetectWorker::stored_cells() const {
  std::uint64_t n = 0;
  for (const auto& [key, cg] : groups_) n += cg.cell_count();
  return n;
}

const CellGroup* DetectWorker::find_group(const CellGroupId& id) const {
  auto it = groups_.find(id);
  return it == groups_.end() ? nullptr : &it->second;
}

std::string DetectWorker::debug_dump_json() const {
  nlohmann::json out;
  out["rule_id"] = rule_.id;
  out["group_count"] = groups_.size();
  std::map<CellGroupId, const CellGroup*> ordered;
  for (const auto& [key, cg] : groups_) ordered.emplace(key, &cg);
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [key, cg] : ordered) {
    nlohmann::json g;
    nlohmann::json lhs = nlohmann::json::array();
    for (const auto& v : key.lhs_values) {
      if (v.is_null())
        lhs.push_back(nullptr);
      else
        lhs.push_back(v.str());
    }
    g["lhs"] = lhs;
    nlohmann::json scs = nlohmann::json::array();
    for (const auto& sc : cg->super_cells) {
      nlohmann::json j;
      j["value"] = sc.value.is_null() ? nlohmann::json(nullptr) : nlohmann::json(sc.value.str());
      j["tuple_ids"] = sc.tuple_ids;
      scs.push_back(j);
    }
    g["super_cells"] = scs;
    groups.push_back(g);
  }
  out["groups"] = groups;
  return out.dump();
}

std::vector<SubTuple> route_ingress(const Tuple& t, const std::vector<Rule>& rules) {
  std::vector<SubTuple> out;
  out.reserve(rules.size());
  for (const auto& r : rules) out.push_back(project(t, r));
  return out;
}

void EgressCollector::admit(Tuple t, std::size_t expected_messages) {
  TupleId id = t.id;
  Pending p;
  p.bundle.tuple = std::move(t);
  p.expected = expected_messages;
  auto [it, inserted] = pending_.emplace(id, std::move(p));
  if (!inserted) throw ProtocolError("tuple admitted twice: " + std::to_string(id));
}

void EgressCollector::deliver(TupleId id, const ViolationMessage& msg) {
  auto it = pending_.find(id);
  if (it == pending_.end()) throw ProtocolError("message for unknown tuple: " + std::to_string(id));
  auto [mit, inserted] = it->second.bundle.messages.emplace(msg.rule_id, msg);
  if (!inserted)
    throw ProtocolError("duplicate message for tuple " + std::to_string(id) + ", rule " +
                        std::to_string(msg.rule_id));
  if (it->second.bundle.messages.size() > it->second.expected)
    throw ProtocolError("more messages than active rules for tuple " + std::to_string(id));
}

std::vector<TupleBundle> EgressCollector::drain_ready() {
  std::vector<TupleBundle> out;
  while (!pending_.empty()) {
    auto it = pending_.begin();
    if (it->second.bundle.messages.size() != it->second.expected) break;
    out.push_back(std::move(it->second.bundle));
    pending_.erase(it);
  }
  return out;
}

}  // namespace bleach::detect
