/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/dynamics.hpp"

#include <algorithm>

namespace bleach::dynamics {

void RuleController::apply_add(const Rule& rule, const Schema& schema) {
  rule.validate();
  if (workers_.count(rule.id))
    throw ConfigError("rule id already active: " + std::to_string(rule.id));
  for (const auto& attr : rule.referenced_attributes())
    if (!schema.contains(attr)) throw SchemaError("rule references unknown attribute: " + attr);
  workers_.emplace(rule.id, std::make_unique<detect::DetectWorker>(rule, wcfg_));
  rules_.push_back(rule);
  std::sort(rules_.begin(), rules_.end(), [](const Rule& a, const Rule& b) { return a.id < b.id; });
}

void RuleController::apply_delete(RuleId id) {
  auto it = workers_.find(id);
  if (it == workers_.end()) throw ConfigError("deleting unknown rule id: " + std::to_string(id));
  workers_.erase(it);  // the rule's data history goes with the worker
  rules_.erase(std::remove_if(rules_.begin(), rules_.end(),
                              [id](const Rule& r) { return r.id == id; }),
               rules_.end());
}

detect::DetectWorker& RuleController::worker(RuleId id) {
  auto it = workers_.find(id);
  if (it == workers_.end()) throw ProtocolError("no worker for rule " + std::to_string(id));
  return *it->second;
}

}  // namespace bleach::dynamics
