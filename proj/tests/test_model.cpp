/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include <doctest.h>

#include <random>

#include "bleach/io.hpp"
#include "bleach/model.hpp"
#include "fixtures.hpp"

using namespace bleach;
using fixtures::V;
using fixtures::VN;

TEST_CASE("eval_condition on the zipcode rule") {
  auto tuples = fixtures::shop_tuples();
  Condition cond;
  cond.conjuncts.push_back(Predicate{"zipcode", Predicate::Op::NotNull, {}});

  CHECK(eval_condition(cond, tuples[0]));  // zipcode="59801"

  Tuple null_zip = fixtures::mk_tuple(fixtures::shop_schema(), 9,
                                      {V("x"), V("y"), V("c"), V("z"), VN()});
  CHECK_FALSE(eval_condition(cond, null_zip));

  Condition empty;
  CHECK(eval_condition(empty, tuples[0]));
  CHECK(eval_condition(empty, null_zip));
}

TEST_CASE("eval_condition constant comparisons exclude NULL") {
  auto schema = fixtures::ab_schema();
  Tuple t = fixtures::mk_tuple(schema, 1, {V("x"), VN()});
  Condition eq;
  eq.conjuncts.push_back(Predicate{"B", Predicate::Op::Equals, V("x")});
  Condition neq;
  neq.conjuncts.push_back(Predicate{"B", Predicate::Op::NotEquals, V("y")});
  CHECK_FALSE(eval_condition(eq, t));
  CHECK_FALSE(eval_condition(neq, t));

  Tuple u = fixtures::mk_tuple(schema, 2, {V("x"), V("y")});
  CHECK_FALSE(eval_condition(neq, u));
  neq.conjuncts[0].constant = V("z");
  CHECK(eval_condition(neq, u));
}

TEST_CASE("eval_condition rejects unknown attributes") {
  Condition cond;
  cond.conjuncts.push_back(Predicate{"no_such_attr", Predicate::Op::NotNull, {}});
  CHECK_THROWS_AS(eval_condition(cond, fixtures::shop_tuples()[0]), SchemaError);
}

TEST_CASE("project builds per-rule sub-tuples") {
  auto tuples = fixtures::shop_tuples();

  SubTuple st = project(tuples[1], fixtures::shop_r1());  // t2, item -> category
  CHECK(st.tuple_id == 2);
  CHECK(st.lhs_values == std::vector<Value>{V("bike")});
  CHECK(st.rhs_cell == Cell{2, "category", V("sports")});
  CHECK(st.cond_holds);

  SubTuple st3 = project(tuples[0], fixtures::shop_r3());  // t1, zipcode -> city
  CHECK(st3.lhs_values == std::vector<Value>{V("59801")});
  CHECK(st3.rhs_cell == Cell{1, "city", V("Missoula")});
  CHECK(st3.cond_holds);

  Tuple all_null = fixtures::mk_tuple(fixtures::ab_schema(), 7, {VN(), VN()});
  SubTuple stn = project(all_null, fixtures::ab_rule());
  CHECK(stn.lhs_values == std::vector<Value>{VN()});
  CHECK(stn.rhs_cell.value.is_null());
  CHECK(stn.cond_holds);  // FD: no condition
}

TEST_CASE("lhs_has_null") {
  SubTuple st;
  st.lhs_values = {V("bike")};
  CHECK_FALSE(lhs_has_null(st));
  st.lhs_values = {VN()};
  CHECK(lhs_has_null(st));
  st.lhs_values = {V("MT"), VN()};  // two-attribute LHS
  CHECK(lhs_has_null(st));
}

TEST_CASE("project is pure and covers the rule set") {
  auto tuples = fixtures::shop_tuples();
  auto rules = fixtures::shop_rules();
  for (const auto& t : tuples) {
    std::size_t count = 0;
    for (const auto& r : rules) {
      SubTuple a = project(t, r);
      SubTuple b = project(t, r);
      CHECK(a.tuple_id == b.tuple_id);
      CHECK(a.lhs_values == b.lhs_values);
      CHECK(a.rhs_cell == b.rhs_cell);
      CHECK(a.cond_holds == b.cond_holds);
      CHECK(a.tuple_id == t.id);
      ++count;
    }
    CHECK(count == rules.size());
  }
}

TEST_CASE("value equality is an equivalence on non-null values") {
  std::mt19937_64 rng(42);
  std::vector<Value> pool;
  for (int i = 0; i < 40; ++i) pool.push_back(V(std::to_string(rng() % 8).c_str()));
  for (const auto& a : pool) CHECK(a == a);
  for (const auto& a : pool)
    for (const auto& b : pool) CHECK((a == b) == (b == a));
  for (const auto& a : pool)
    for (const auto& b : pool)
      for (const auto& c : pool)
        if (a == b && b == c) CHECK(a == c);
}

TEST_CASE("rule validation") {
  Rule r;
  r.id = 1;
  r.rhs = "a";
  CHECK_THROWS_AS(r.validate(), ConfigError);  // empty LHS
  r.lhs = {"a"};
  CHECK_THROWS_AS(r.validate(), ConfigError);  // rhs in lhs
  r.lhs = {"b"};
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("rule JSON round trip") {
  std::string text =
      R"({"id":4,"lhs":["ss_store_sk"],"rhs":"s_store_name","cond":[{"attr":"ss_store_sk","op":"neq_null"}]})";
  Rule r = io::parse_rule_json(text);
  CHECK(r.id == 4);
  CHECK(r.lhs == std::vector<AttributeId>{"ss_store_sk"});
  CHECK(r.rhs == "s_store_name");
  REQUIRE(r.condition.conjuncts.size() == 1);
  CHECK(r.condition.conjuncts[0].op == Predicate::Op::NotNull);

  Rule back = io::parse_rule_json(io::rule_to_json(r));
  CHECK(back.id == r.id);
  CHECK(back.lhs == r.lhs);
  CHECK(back.rhs == r.rhs);
  CHECK(back.condition == r.condition);
}

TEST_CASE("tuple JSONL round trip keeps nulls and text") {
  auto schema = fixtures::shop_schema();
  Tuple t = fixtures::mk_tuple(schema, 12, {V("book"), VN(), V("c1"), V("Missoula"), V("59801")});
  io::RawTuple raw = io::parse_tuple_line(io::tuple_to_line(t));
  CHECK(raw.id == 12);
  std::map<AttributeId, Value> m(raw.values.begin(), raw.values.end());
  CHECK(m.at("item") == V("book"));
  CHECK(m.at("category").is_null());
  CHECK(m.at("zipcode") == V("59801"));
}
