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
#include <memory>
#include <vector>

#include "bleach/detect.hpp"
#include "bleach/model.hpp"
#include "bleach/windowing.hpp"

namespace bleach::dynamics {

/// Runtime rule-set change. Updates flow through the pipeline as in-band
/// barriers, so every worker applies them at the same stream position.
struct RuleUpdate {
  enum class Kind { Add, Delete };
  Kind kind = Kind::Add;
  Rule rule;           // Add
  RuleId rule_id = 0;  // Delete
  std::uint64_t effective_offset = 0;  // tuples admitted before the update applies

  static RuleUpdate add(Rule r, std::uint64_t offset = 0) {
    RuleUpdate u;
    u.kind = Kind::Add;
    u.rule = std::move(r);
    u.effective_offset = offset;
    return u;
  }
  static RuleUpdate remove(RuleId id, std::uint64_t offset = 0) {
    RuleUpdate u;
    u.kind = Kind::Delete;
    u.rule_id = id;
    u.effective_offset = offset;
    return u;
  }
};

/// Owns the active rule set and the per-rule detect workers. Adding a rule
/// instantiates a fresh worker with empty history; deleting one discards the
/// worker together with its history. Subgraph shrink/split on deletion is
/// the repair workers' side and is driven by the pipeline.
class RuleController {
 public:
  explicit RuleController(const windowing::WindowConfig& wcfg) : wcfg_(wcfg) {}

  void apply_add(const Rule& rule, const Schema& schema);
  void apply_delete(RuleId id);

  /// Active rules in rule-id order.
  const std::vector<Rule>& active_rules() const { return rules_; }
  detect::DetectWorker& worker(RuleId id);
  const std::map<RuleId, std::unique_ptr<detect::DetectWorker>>& workers() const {
    return workers_;
  }
  bool has_rule(RuleId id) const { return workers_.count(id) != 0; }

 private:
  windowing::WindowConfig wcfg_;
  std::vector<Rule> rules_;  // sorted by id
  std::map<RuleId, std::unique_ptr<detect::DetectWorker>> workers_;
};

}  // namespace bleach::dynamics
