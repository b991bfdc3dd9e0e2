/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/model.hpp"

#include <algorithm>

namespace bleach {

void Rule::validate() const {
  if (lhs.empty()) throw ConfigError("rule " + std::to_string(id) + ": LHS must be non-empty");
  if (std::find(lhs.begin(), lhs.end(), rhs) != lhs.end())
    throw ConfigError("rule " + std::to_string(id) + ": RHS attribute also appears in LHS");
  for (const auto& a : lhs)
    if (a.empty()) throw ConfigError("rule " + std::to_string(id) + ": empty LHS attribute name");
  if (rhs.empty()) throw ConfigError("rule " + std::to_string(id) + ": empty RHS attribute name");
}

std::vector<AttributeId> Rule::referenced_attributes() const {
  std::vector<AttributeId> out = lhs;
  out.push_back(rhs);
  for (const auto& p : condition.conjuncts) out.push_back(p.attr);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool eval_condition(const Condition& cond, const Tuple& t) {
  for (const auto& p : cond.conjuncts) {
    const Value& v = t.at(p.attr);  // throws SchemaError on unknown attribute
    switch (p.op) {
      case Predicate::Op::NotNull:
        if (v.is_null()) return false;
        break;
      case Predicate::Op::Equals:
        // Null never satisfies a constant comparison.
        if (v.is_null() || !(v == p.constant)) return false;
        break;
      case Predicate::Op::NotEquals:
        if (v.is_null() || v == p.constant) return false;
        break;
    }
  }
  return true;
}

SubTuple project(const Tuple& t, const Rule& r) {
  SubTuple st;
  st.tuple_id = t.id;
  st.rule_id = r.id;
  st.lhs_values.reserve(r.lhs.size());
  for (const auto& a : r.lhs) st.lhs_values.push_back(t.at(a));
  st.rhs_cell = Cell{t.id, r.rhs, t.at(r.rhs)};
  st.cond_holds = eval_condition(r.condition, t);
  return st;
}

bool lhs_has_null(const SubTuple& st) {
  return std::any_of(st.lhs_values.begin(), st.lhs_values.end(),
                     [](const Value& v) { return v.is_null(); });
}

}  // namespace bleach
