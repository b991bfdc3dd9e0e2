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

#include "bleach/repair.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bleach;
using namespace bleach::repair;
using fixtures::V;
using fixtures::VN;

namespace {

windowing::WindowConfig unbounded() { return windowing::WindowConfig{}; }

windowing::WindowConfig window42(windowing::Strategy s) {
  windowing::WindowConfig w;
  w.size = 4;
  w.slide = 2;
  w.strategy = s;
  return w;
}

// Three single-attribute rules over one shared RHS attribute "A", keyed by
// different LHS attributes; the cell groups of the worked examples.
const AttributeId kAttr = "A";
CellGroupId cg1() { return CellGroupId{21, {V("k1")}}; }
CellGroupId cg2() { return CellGroupId{22, {V("k2")}}; }
CellGroupId cg3() { return CellGroupId{23, {V("k3")}}; }

SubgraphId sgid(std::vector<CellGroupId> cgs) {
  SubgraphId id;
  for (auto& cg : cgs) id.insert(cg);
  return id;
}

detect::TupleBundle bundle_of(TupleId id, std::vector<detect::ViolationMessage> msgs) {
  detect::TupleBundle b;
  b.tuple = fixtures::mk_tuple(fixtures::ab_schema(), id, {V("x"), V("y")});
  for (auto& m : msgs) b.messages.emplace(m.rule_id, std::move(m));
  return b;
}

detect::ViolationMessage complete(const CellGroupId& cg, Cell cur,
                                  std::vector<TupleId> old_ids, Value old_value) {
  detect::ViolationMessage m;
  m.kind = detect::ViolationKind::Complete;
  m.rule_id = cg.rule_id;
  m.tuple_id = cur.tuple_id;
  m.cg_id = cg;
  m.old_cells = detect::SuperCell{std::move(old_ids), cur.attr, std::move(old_value)};
  m.current = std::move(cur);
  return m;
}

detect::ViolationMessage append_only(const CellGroupId& cg, Cell cur) {
  detect::ViolationMessage m;
  m.kind = detect::ViolationKind::AppendOnly;
  m.rule_id = cg.rule_id;
  m.tuple_id = cur.tuple_id;
  m.cg_id = cg;
  m.current = std::move(cur);
  return m;
}

/// The initial state of the coordination examples: sg_{cg1} = {c1,c2,c3},
/// sg_{cg2} = {c4,c5}, partitioned by tuple id parity. Worker 1 stores
/// c1,c3,c5; worker 0 stores c2,c4. Each worker knows only its own cells.
std::pair<RepairWorker, RepairWorker> initial_state(const windowing::WindowConfig& w) {
  std::pair<RepairWorker, RepairWorker> workers{RepairWorker(0, 2, w), RepairWorker(1, 2, w)};
  workers.second.seed_subgraph(kAttr, {{cg1(), {{1, V("u")}, {3, V("w")}}}});
  workers.second.seed_subgraph(kAttr, {{cg2(), {{5, V("y")}}}});
  workers.first.seed_subgraph(kAttr, {{cg1(), {{2, V("v")}}}});
  workers.first.seed_subgraph(kAttr, {{cg2(), {{4, V("x")}}}});
  return workers;
}

}  // namespace

TEST_CASE("partition_cell is deterministic and id-driven") {
  CHECK(partition_cell(1, 1) == 0);
  CHECK(partition_cell(12345, 1) == 0);
  for (TupleId id : {1ull, 3ull, 5ull}) CHECK(partition_cell(id, 2) == 1);
  for (TupleId id : {2ull, 4ull, 6ull}) CHECK(partition_cell(id, 2) == 0);
  for (TupleId id = 0; id < 50; ++id) CHECK(partition_cell(id, 3) == partition_cell(id, 3));
}

TEST_CASE("coordination example: divergence and convergence across two workers") {
  auto [rw2, rw1] = initial_state(unbounded());  // rw1 stores odd ids

  auto b = bundle_of(6, {complete(cg3(), Cell{6, kAttr, V("z")}, {1}, V("u"))});

  // The old cell c1 sits in a subgraph of a different rule on its owner.
  CHECK(rw1.needs_coordination(b));
  CHECK(rw1.coordination_attrs(b) == std::vector<AttributeId>{kAttr});
  CHECK_FALSE(rw2.needs_coordination(b));

  auto touched1 = rw1.apply_bundle(b);
  auto touched2 = rw2.apply_bundle(b);
  CHECK(touched1 == std::vector<AttributeId>{kAttr});
  CHECK(touched2 == std::vector<AttributeId>{kAttr});

  // Independent processing: rw1 merged, rw2 created a fresh subgraph.
  CHECK(rw1.subgraph_ids() == std::vector<SubgraphId>{sgid({cg1(), cg3()}), sgid({cg2()})});
  CHECK(rw2.subgraph_ids() ==
        std::vector<SubgraphId>{sgid({cg1()}), sgid({cg2()}), sgid({cg3()})});

  // One coordination round repairs the inconsistency.
  std::vector<MergeProposal> proposals;
  for (auto* w : {&rw1, &rw2}) {
    auto ps = w->merge_proposals(6, {kAttr});
    proposals.insert(proposals.end(), ps.begin(), ps.end());
  }
  REQUIRE(proposals.size() == 2);
  MergeDecision d = coordinate(proposals);
  CHECK(d.subgraph_id == sgid({cg1(), cg3()}));
  rw1.apply_decision(d);
  rw2.apply_decision(d);

  CHECK(rw1.subgraph_ids() == std::vector<SubgraphId>{sgid({cg1(), cg3()}), sgid({cg2()})});
  CHECK(rw2.subgraph_ids() == std::vector<SubgraphId>{sgid({cg1(), cg3()}), sgid({cg2()})});

  // The merged subgraph on rw2 holds its stored cells of both groups.
  const Subgraph* s = rw2.find_subgraph(sgid({cg1(), cg3()}));
  REQUIRE(s != nullptr);
  CHECK(s->groups.count(cg1()) == 1);
  CHECK(s->groups.count(cg3()) == 1);
}

TEST_CASE("merge without coordination: a current cell shared by two messages") {
  auto [rw2, rw1] = initial_state(unbounded());

  auto b = bundle_of(6, {append_only(cg1(), Cell{6, kAttr, V("z")}),
                         append_only(cg2(), Cell{6, kAttr, V("z")})});

  CHECK_FALSE(rw1.needs_coordination(b));
  CHECK_FALSE(rw2.needs_coordination(b));

  (void)rw1.apply_bundle(b);
  (void)rw2.apply_bundle(b);

  CHECK(rw1.subgraph_ids() == std::vector<SubgraphId>{sgid({cg1(), cg2()})});
  CHECK(rw2.subgraph_ids() == std::vector<SubgraphId>{sgid({cg1(), cg2()})});

  // c6 bridges the two groups; it is stored (counted) only on worker 0.
  const Subgraph* s1 = rw1.find_subgraph(sgid({cg1(), cg2()}));
  const Subgraph* s2 = rw2.find_subgraph(sgid({cg1(), cg2()}));
  REQUIRE(s1);
  REQUIRE(s2);
  HingeKey hk{{cg1(), cg2()}, V("z")};
  REQUIRE(s1->hinges.count(hk) == 1);
  REQUIRE(s2->hinges.count(hk) == 1);
  CHECK(s1->hinges.at(hk).live_ids == std::vector<TupleId>{6});
  CHECK(s1->hinges.at(hk).owned_count == 0);
  CHECK(s2->hinges.at(hk).owned_count == 1);
}

TEST_CASE("needs_coordination is false when every cell violates one rule only") {
  RepairWorker w(0, 1, unbounded());
  auto b1 = bundle_of(4, {complete(cg1(), Cell{4, kAttr, V("c")}, {1, 2, 3}, V("b"))});
  CHECK_FALSE(w.needs_coordination(b1));
  (void)w.apply_bundle(b1);
  auto b2 = bundle_of(5, {complete(cg1(), Cell{5, kAttr, V("d")}, {1}, V("b"))});
  CHECK_FALSE(w.needs_coordination(b2));  // same rule: no cross-rule overlap
}

TEST_CASE("repair frequencies on the sliding-window example") {
  auto run_strategy = [](windowing::Strategy strategy) {
    RepairWorker w(0, 1, window42(strategy));
    CellGroupId cg{10, {V("a1")}};
    // t4 arrives: window [1,4]
    auto b4 = bundle_of(4, {complete(cg, Cell{4, "B", V("c")}, {1, 2, 3}, V("b"))});
    (void)w.apply_bundle(b4);
    RepairProposal p4 = w.propose(4, "B");
    REQUIRE(p4.candidates.size() == 2);
    CHECK(p4.candidates[0].value == V("b"));
    CHECK(p4.candidates[0].frequency == 3);
    CHECK(p4.candidates[1].value == V("c"));
    CHECK(p4.candidates[1].frequency == 1);

    // t5 arrives: window slides to [3,6]
    w.on_slide(3);
    auto b5 = bundle_of(5, {append_only(cg, Cell{5, "B", V("c")})});
    (void)w.apply_bundle(b5);
    return w.propose(5, "B");
  };

  SUBCASE("basic windowing keeps only in-window cells") {
    RepairProposal p = run_strategy(windowing::Strategy::Basic);
    REQUIRE(p.candidates.size() == 2);
    CHECK(p.candidates[0].value == V("c"));
    CHECK(p.candidates[0].frequency == 2);
    CHECK(p.candidates[1].value == V("b"));
    CHECK(p.candidates[1].frequency == 1);
  }

  SUBCASE("cumulative windowing keeps evicted counts") {
    RepairProposal p = run_strategy(windowing::Strategy::Cumulative);
    REQUIRE(p.candidates.size() == 2);
    CHECK(p.candidates[0].value == V("b"));
    CHECK(p.candidates[0].frequency == 3);
    CHECK(p.candidates[1].value == V("c"));
    CHECK(p.candidates[1].frequency == 2);
  }

  SUBCASE("cumulative super cells match the worked example state") {
    RepairWorker w(0, 1, window42(windowing::Strategy::Cumulative));
    CellGroupId cg{10, {V("a1")}};
    (void)w.apply_bundle(bundle_of(4, {complete(cg, Cell{4, "B", V("c")}, {1, 2, 3}, V("b"))}));
    w.on_slide(3);
    (void)w.apply_bundle(bundle_of(5, {append_only(cg, Cell{5, "B", V("c")})}));
    const Subgraph* s = w.find_subgraph(sgid({cg}));
    REQUIRE(s);
    const auto& cells = s->groups.at(cg).cells;
    REQUIRE(cells.count(V("b")) == 1);
    REQUIRE(cells.count(V("c")) == 1);
    CHECK(cells.at(V("b")).live_ids == std::vector<TupleId>{3});
    CHECK(cells.at(V("b")).count == 3);
    CHECK(cells.at(V("c")).live_ids == std::vector<TupleId>{4, 5});
    CHECK(cells.at(V("c")).count == 2);
  }
}

TEST_CASE("aggregator sums worker frequencies") {
  Tuple t = fixtures::mk_tuple(fixtures::ab_schema(), 4, {V("a1"), V("c")});

  SUBCASE("cross-worker sum picks the global majority") {
    RepairProposal p1{4, "B", {{V("b"), 3, 1}}};
    RepairProposal p2{4, "B", {{V("c"), 1, 4}, {V("b"), 0, 1}}};
    auto [out, decisions] = Aggregator::decide(t, {p1, p2});
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].chosen == V("b"));
    CHECK(decisions[0].original == V("c"));
    CHECK(out.at("B") == V("b"));
  }

  SUBCASE("a current value that already wins stays put") {
    RepairProposal p{4, "B", {{V("c"), 2, 4}, {V("b"), 1, 1}}};
    auto [out, decisions] = Aggregator::decide(t, {p});
    CHECK(decisions.empty());
    CHECK(out.at("B") == V("c"));
  }

  SUBCASE("frequency ties go to the earliest-seen value") {
    RepairProposal p{4, "B", {{V("b"), 2, 1}, {V("c"), 2, 2}}};
    auto [out, decisions] = Aggregator::decide(t, {p});
    REQUIRE(decisions.size() == 1);
    CHECK(out.at("B") == V("b"));
  }

  SUBCASE("equal first-seen falls back to the smaller value") {
    RepairProposal p{4, "B", {{V("z"), 2, 3}, {V("y"), 2, 3}}};
    auto [out, decisions] = Aggregator::decide(t, {p});
    CHECK(out.at("B") == V("y"));
  }
}

TEST_CASE("proposals are truncated to the top five candidates") {
  RepairWorker w(0, 1, unbounded());
  CellGroupId cg{10, {V("a1")}};
  (void)w.apply_bundle(bundle_of(2, {complete(cg, Cell{2, "B", V("v2")}, {1}, V("v1"))}));
  for (TupleId id = 3; id <= 9; ++id) {
    std::string v = "v" + std::to_string(id);
    (void)w.apply_bundle(bundle_of(id, {append_only(cg, Cell{id, "B", V(v.c_str())})}));
  }
  RepairProposal p = w.propose(9, "B");
  CHECK(p.candidates.size() == RepairProposal::kTopK);
}

TEST_CASE("merge closure matches the brute-force component oracle") {
  // Two rules with a shared RHS attribute, unbounded window. After every
  // bundle both workers must agree with components computed from scratch
  // over all violation messages.
  auto schema = std::make_shared<Schema>(std::vector<AttributeId>{"A", "B", "C"});
  Rule ra;
  ra.id = 31;
  ra.lhs = {"A"};
  ra.rhs = "C";
  Rule rb;
  rb.id = 32;
  rb.lhs = {"B"};
  rb.rhs = "C";

  for (std::uint64_t seed : {11ull, 23ull, 47ull}) {
    std::mt19937_64 rng(seed);
    detect::DetectWorker da(ra, unbounded());
    detect::DetectWorker db(rb, unbounded());
    RepairWorker w0(0, 2, unbounded());
    RepairWorker w1(1, 2, unbounded());
    std::vector<detect::ViolationMessage> all_messages;

    for (TupleId id = 1; id <= 120; ++id) {
      std::string a = "a" + std::to_string(rng() % 6);
      std::string b = "b" + std::to_string(rng() % 6);
      std::string c = "c" + std::to_string(rng() % 3);
      Tuple t = fixtures::mk_tuple(schema, id, {V(a.c_str()), V(b.c_str()), V(c.c_str())});
      detect::TupleBundle bundle;
      bundle.tuple = t;
      auto ma = da.process(project(t, ra));
      auto mb = db.process(project(t, rb));
      bundle.messages.emplace(ra.id, ma);
      bundle.messages.emplace(rb.id, mb);
      all_messages.push_back(ma);
      all_messages.push_back(mb);
      if (bundle.clean()) continue;
      (void)w0.apply_bundle(bundle);
      (void)w1.apply_bundle(bundle);
    }

    auto expected = oracles::message_components(all_messages);
    for (RepairWorker* w : {&w0, &w1}) {
      auto ids = w->subgraph_ids();
      std::set<std::vector<detect::CellGroupId>> got;
      for (const auto& id : ids) got.insert(id.cg_ids);
      CHECK(got == expected);
    }
  }
}

TEST_CASE("a subgraph with no in-window cells is evicted under both strategies") {
  for (auto strategy : {windowing::Strategy::Basic, windowing::Strategy::Cumulative}) {
    RepairWorker w(0, 1, window42(strategy));
    CellGroupId cg{10, {V("a1")}};
    (void)w.apply_bundle(bundle_of(2, {complete(cg, Cell{2, "B", V("y")}, {1}, V("x"))}));
    CHECK(w.subgraph_count() == 1);
    w.on_slide(10);
    w.on_slide(20);
    CHECK(w.subgraph_count() == 0);
  }
}
