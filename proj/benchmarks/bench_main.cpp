/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include <benchmark/benchmark.h>

#include <random>

#include "bleach/detect.hpp"
#include "bleach/genbench.hpp"
#include "bleach/repair.hpp"
#include "bleach/runtime.hpp"
#include "bleach/windowing.hpp"

using namespace bleach;

namespace {

SchemaPtr two_attr_schema() {
  static SchemaPtr s = std::make_shared<Schema>(std::vector<AttributeId>{"A", "B"});
  return s;
}

Rule fd_rule() {
  Rule r;
  r.id = 1;
  r.lhs = {"A"};
  r.rhs = "B";
  return r;
}

std::vector<SubTuple> synthetic_subtuples(std::size_t n, std::size_t keys, std::size_t vals,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Rule rule = fd_rule();
  auto schema = two_attr_schema();
  std::vector<SubTuple> subs;
  subs.reserve(n);
  for (TupleId id = 1; id <= n; ++id) {
    Tuple t;
    t.id = id;
    t.schema = schema;
    t.values = {Value::text("k" + std::to_string(rng() % keys)),
                Value::text("v" + std::to_string(rng() % vals))};
    subs.push_back(project(t, rule));
  }
  return subs;
}

void BM_DetectProcess(benchmark::State& state) {
  auto subs = synthetic_subtuples(1 << 14, state.range(0), 4, 99);
  for (auto _ : state) {
    detect::DetectWorker w(fd_rule(), {});
    for (const auto& st : subs) benchmark::DoNotOptimize(w.process(st));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * subs.size());
}
BENCHMARK(BM_DetectProcess)->Arg(64)->Arg(1024)->Arg(8192);

void BM_DetectWindowed(benchmark::State& state) {
  auto subs = synthetic_subtuples(1 << 14, 1024, 4, 99);
  windowing::WindowConfig wcfg;
  wcfg.size = 4096;
  wcfg.slide = 2048;
  for (auto _ : state) {
    detect::DetectWorker w(fd_rule(), wcfg);
    windowing::WindowClock clock(wcfg);
    for (const auto& st : subs) {
      if (auto s = clock.on_arrival(st.tuple_id)) w.on_slide(s->lower_bound);
      benchmark::DoNotOptimize(w.process(st));
    }
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * subs.size());
}
BENCHMARK(BM_DetectWindowed);

void BM_RepairApplyPropose(benchmark::State& state) {
  // Pre-compute a violation-heavy bundle stream through a detect worker.
  auto subs = synthetic_subtuples(1 << 13, state.range(0), 3, 7);
  detect::DetectWorker dw(fd_rule(), {});
  std::vector<detect::TupleBundle> bundles;
  auto schema = two_attr_schema();
  for (const auto& st : subs) {
    auto m = dw.process(st);
    if (!m.is_violation()) continue;
    detect::TupleBundle b;
    b.tuple.id = st.tuple_id;
    b.tuple.schema = schema;
    b.tuple.values = {st.lhs_values[0], st.rhs_cell.value};
    b.messages.emplace(m.rule_id, m);
    bundles.push_back(std::move(b));
  }
  for (auto _ : state) {
    repair::RepairWorker w(0, 1, {});
    for (const auto& b : bundles) {
      auto touched = w.apply_bundle(b);
      for (const auto& attr : touched)
        benchmark::DoNotOptimize(w.propose(b.tuple.id, attr));
    }
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * bundles.size());
}
BENCHMARK(BM_RepairApplyPropose)->Arg(64)->Arg(1024);

void BM_KListTouchSlide(benchmark::State& state) {
  std::mt19937_64 rng(3);
  for (auto _ : state) {
    windowing::KListQueue<std::uint64_t> q(4);
    for (int round = 0; round < 64; ++round) {
      for (int i = 0; i < 256; ++i) q.touch(rng() % 2048);
      benchmark::DoNotOptimize(q.slide());
    }
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 64 * 256);
}
BENCHMARK(BM_KListTouchSlide);

void BM_PipelineEndToEnd(benchmark::State& state) {
  gen::GenConfig gcfg;
  gcfg.n_tuples = 20000;
  gcfg.seed = 11;
  auto g = gen::generate(gcfg);
  auto rules = gen::analog_ruleset();
  for (auto _ : state) {
    runtime::PipelineConfig cfg;
    cfg.rules = rules;
    cfg.n_repair_workers = 2;
    cfg.window.size = 10000;
    cfg.window.slide = 5000;
    std::size_t out = 0;
    auto engine = runtime::make_engine(cfg, gen::analog_schema(),
                                       [&](const Tuple&, const auto&) { ++out; });
    for (const auto& t : g.tuples) engine->push_tuple(t);
    engine->finish();
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * g.tuples.size());
}
BENCHMARK(BM_PipelineEndToEnd)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
