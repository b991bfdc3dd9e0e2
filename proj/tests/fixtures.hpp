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

#include <string>
#include <vector>

#include "bleach/model.hpp"
#include "bleach/runtime.hpp"

namespace fixtures {

using namespace bleach;

inline Value V(const char* s) { return Value::text(s); }
inline Value VN() { return Value::null(); }

inline Tuple mk_tuple(const SchemaPtr& schema, TupleId id, std::vector<Value> values) {
  Tuple t;
  t.id = id;
  t.schema = schema;
  t.values = std::move(values);
  return t;
}

// --- Running example: five on-line shopping transactions ------------------
//
//  id | item  | category | clientid | city     | zipcode
//  1  | book  | edu      | c1       | Missoula | 59801
//  2  | bike  | sports   | c2       | Libby    | 59923
//  3  | glove | sports   | c3       | Helena   | 59801
//  4  | bike  | toys     | c4       | Libby    | 59923
//  5  | book  | edu      | c1       | Libby    | 10001
//
// Rules: item -> category; clientid -> city; zipcode -> city (zip != null).
// Exactly three violations: (t1,t3) on zipcode/city, (t2,t4) on item/category
// and (t1,t5) on clientid/city.

inline SchemaPtr shop_schema() {
  static SchemaPtr schema = std::make_shared<Schema>(
      std::vector<AttributeId>{"item", "category", "clientid", "city", "zipcode"});
  return schema;
}

inline Rule shop_r1() {
  Rule r;
  r.id = 1;
  r.lhs = {"item"};
  r.rhs = "category";
  return r;
}

inline Rule shop_r2() {
  Rule r;
  r.id = 2;
  r.lhs = {"clientid"};
  r.rhs = "city";
  return r;
}

inline Rule shop_r3() {
  Rule r;
  r.id = 3;
  r.lhs = {"zipcode"};
  r.rhs = "city";
  r.condition.conjuncts.push_back(Predicate{"zipcode", Predicate::Op::NotNull, {}});
  return r;
}

inline std::vector<Rule> shop_rules() { return {shop_r1(), shop_r2(), shop_r3()}; }

inline std::vector<Tuple> shop_tuples() {
  auto s = shop_schema();
  return {
      mk_tuple(s, 1, {V("book"), V("edu"), V("c1"), V("Missoula"), V("59801")}),
      mk_tuple(s, 2, {V("bike"), V("sports"), V("c2"), V("Libby"), V("59923")}),
      mk_tuple(s, 3, {V("glove"), V("sports"), V("c3"), V("Helena"), V("59801")}),
      mk_tuple(s, 4, {V("bike"), V("toys"), V("c4"), V("Libby"), V("59923")}),
      mk_tuple(s, 5, {V("book"), V("edu"), V("c1"), V("Libby"), V("10001")}),
  };
}

// --- Two-attribute sliding-window example ----------------------------------
// Stream t1..t5 over (A, B) with B = b,b,b,c,c under one FD A -> B.

inline SchemaPtr ab_schema() {
  static SchemaPtr schema = std::make_shared<Schema>(std::vector<AttributeId>{"A", "B"});
  return schema;
}

inline Rule ab_rule(RuleId id = 10) {
  Rule r;
  r.id = id;
  r.lhs = {"A"};
  r.rhs = "B";
  return r;
}

inline std::vector<Tuple> ab_window_tuples() {
  auto s = ab_schema();
  return {
      mk_tuple(s, 1, {V("a1"), V("b")}), mk_tuple(s, 2, {V("a1"), V("b")}),
      mk_tuple(s, 3, {V("a1"), V("b")}), mk_tuple(s, 4, {V("a1"), V("c")}),
      mk_tuple(s, 5, {V("a1"), V("c")}),
  };
}

// --- Engine driver ----------------------------------------------------------

struct RunOutput {
  std::vector<Tuple> tuples;
  std::vector<std::vector<repair::RepairDecision>> decisions;  // parallel to tuples
  runtime::Counters counters;
};

inline RunOutput run_engine(const runtime::PipelineConfig& cfg, const SchemaPtr& schema,
                            const std::vector<Tuple>& input,
                            const std::vector<dynamics::RuleUpdate>& updates = {}) {
  RunOutput out;
  auto engine = runtime::make_engine(cfg, schema, [&](const Tuple& t, const auto& ds) {
    out.tuples.push_back(t);
    out.decisions.push_back(ds);
  });
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
  out.counters = engine->counters();
  return out;
}

}  // namespace fixtures
