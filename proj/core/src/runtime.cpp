/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/runtime.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <variant>

#include <json.hpp>

#include "bleach/channel.hpp"
#include "bleach/log.hpp"

namespace bleach::runtime {

using detect::TupleBundle;
using repair::MergeDecision;
using repair::MergeProposal;
using repair::RepairProposal;

Protocol protocol_from_string(const std::string& s) {
  if (s == "basic") return Protocol::Basic;
  if (s == "dr") return Protocol::Dr;
  if (s == "ir") return Protocol::Ir;
  throw ConfigError("unknown protocol: " + s + " (expected basic|dr|ir)");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::Basic: return "basic";
    case Protocol::Dr: return "dr";
    case Protocol::Ir: return "ir";
  }
  return "?";
}

void PipelineConfig::validate() const {
  if (n_repair_workers == 0) throw ConfigError("need at least one repair worker");
  if (latency_sample_rate <= 0.0 || latency_sample_rate > 1.0)
    throw ConfigError("latency sample rate must be in (0,1]");
  window.validate();
  std::set<RuleId> ids;
  for (const auto& r : rules) {
    r.validate();
    if (!ids.insert(r.id).second) throw ConfigError("duplicate rule id " + std::to_string(r.id));
  }
}

std::vector<std::pair<std::string, std::uint64_t>> Counters::rows() const {
  return {
      {"tuples_in", tuples_in},
      {"tuples_out", tuples_out},
      {"dead_letters", dead_letters},
      {"violation_messages", violation_messages},
      {"nonviolation_messages", nonviolation_messages},
      {"dirty_bundles", dirty_bundles},
      {"coordination_rounds", coordination_rounds},
      {"coordination_messages", coordination_messages},
      {"subgraph_merges", subgraph_merges},
      {"subgraph_splits", subgraph_splits},
      {"repairs", repairs},
      {"rule_adds", rule_adds},
      {"rule_deletes", rule_deletes},
      {"rejected_updates", rejected_updates},
      {"window_slides", window_slides},
      {"detect_groups", detect_groups},
      {"repair_subgraphs", repair_subgraphs},
  };
}

namespace {

/// Repair-path work shared by both transports: coordination rounds for one
/// bundle, proposal collection, aggregation.
struct RepairOrchestration {
  static void run_round(std::vector<repair::RepairWorker>& workers, TupleId tuple_id,
                        const AttributeId& attr, Counters& counters) {
    std::vector<MergeProposal> proposals;
    for (auto& w : workers) {
      auto ps = w.merge_proposals(tuple_id, {attr});
      proposals.insert(proposals.end(), ps.begin(), ps.end());
    }
    if (proposals.empty()) return;
    MergeDecision decision = repair::coordinate(proposals);
    for (auto& w : workers) w.apply_decision(decision);
    ++counters.coordination_rounds;
    counters.coordination_messages += proposals.size() + workers.size();
  }
};

// ---------------------------------------------------------------------------
// In-process engine: a single-threaded event loop with a fixed interleaving.
// ---------------------------------------------------------------------------

class InProcessEngine final : public Engine {
 public:
  InProcessEngine(const PipelineConfig& cfg, SchemaPtr schema, OutputFn out)
      : cfg_(cfg), schema_(std::move(schema)), out_(std::move(out)), controller_(cfg.window),
        clock_(cfg.window) {
    for (const auto& r : cfg_.rules) controller_.apply_add(r, *schema_);
    for (std::size_t i = 0; i < cfg_.n_repair_workers; ++i)
      repair_.emplace_back(i, cfg_.n_repair_workers, cfg_.window);
  }

  void push_tuple(Tuple t) override {
    if (seen_any_ && t.id <= last_id_)
      throw ProtocolError("tuple ids must be strictly increasing");
    seen_any_ = true;
    last_id_ = t.id;

    if (auto slide = clock_.on_arrival(t.id)) {
      for (auto& [rid, worker] : controller_.workers()) worker->on_slide(slide->lower_bound);
      for (auto& w : repair_) w.on_slide(slide->lower_bound);
      ++counters_.window_slides;
    }

    const auto& rules = controller_.active_rules();
    egress_.admit(t, rules.size());
    for (const auto& st : detect::route_ingress(t, rules)) {
      detect::ViolationMessage msg = controller_.worker(st.rule_id).process(st);
      if (msg.is_violation())
        ++counters_.violation_messages;
      else
        ++counters_.nonviolation_messages;
      egress_.deliver(t.id, msg);
    }
    ++counters_.tuples_in;
    for (auto& bundle : egress_.drain_ready()) process_bundle(bundle);
  }

  void push_update(const dynamics::RuleUpdate& u) override {
    try {
      if (u.kind == dynamics::RuleUpdate::Kind::Add) {
        controller_.apply_add(u.rule, *schema_);
        ++counters_.rule_adds;
      } else {
        controller_.apply_delete(u.rule_id);
        for (auto& w : repair_) w.on_rule_deleted(u.rule_id);
        ++counters_.rule_deletes;
      }
    } catch (const Error& e) {
      log::warn(std::string("rule update rejected: ") + e.what());
      ++counters_.rejected_updates;
    }
  }

  void finish() override {
    if (egress_.pending() != 0) throw ProtocolError("unanswered tuples at end of stream");
    for (const auto& [rid, worker] : controller_.workers())
      counters_.detect_groups += worker->group_count();
    for (const auto& w : repair_) {
      counters_.repair_subgraphs += w.subgraph_count();
      counters_.subgraph_merges += w.counters().subgraph_merges;
      counters_.subgraph_splits += w.counters().subgraph_splits;
    }
  }

  const Counters& counters() const override { return counters_; }

  std::vector<RuleId> active_rule_ids() const override {
    std::vector<RuleId> out;
    for (const auto& [rid, worker] : controller_.workers()) out.push_back(rid);
    return out;
  }

  std::string dump_detect_history(RuleId rule) const override {
    for (const auto& [rid, worker] : controller_.workers())
      if (rid == rule) return worker->debug_dump_json();
    throw ConfigError("no active rule " + std::to_string(rule));
  }

  std::string dump_repair_worker(std::size_t index) const override {
    return repair_.at(index).debug_dump_json();
  }

 private:
  void process_bundle(const TupleBundle& bundle) {
    if (bundle.clean()) {
      out_(bundle.tuple, {});
      ++counters_.tuples_out;
      return;
    }
    ++counters_.dirty_bundles;

    std::vector<AttributeId> coord_attrs = repair_.front().coordination_attrs(bundle);
    std::vector<AttributeId> touched;
    for (auto& w : repair_) {
      auto t = w.apply_bundle(bundle);
      if (touched.empty()) touched = std::move(t);
    }
    std::sort(touched.begin(), touched.end());

    const auto& round_attrs = cfg_.protocol == Protocol::Basic ? touched : coord_attrs;
    TupleId id = bundle.tuple.id;

    if (cfg_.protocol == Protocol::Ir) {
      emit(bundle, touched);
      for (const auto& attr : round_attrs)
        RepairOrchestration::run_round(repair_, id, attr, counters_);  // lazily applied
    } else {
      for (const auto& attr : round_attrs)
        RepairOrchestration::run_round(repair_, id, attr, counters_);
      emit(bundle, touched);
    }
  }

  void emit(const TupleBundle& bundle, const std::vector<AttributeId>& touched) {
    std::vector<RepairProposal> proposals;
    for (auto& w : repair_)
      for (const auto& attr : touched) proposals.push_back(w.propose(bundle.tuple.id, attr));
    auto [out_tuple, decisions] = repair::Aggregator::decide(bundle.tuple, proposals);
    counters_.repairs += decisions.size();
    out_(out_tuple, decisions);
    ++counters_.tuples_out;
  }

  PipelineConfig cfg_;
  SchemaPtr schema_;
  OutputFn out_;
  dynamics::RuleController controller_;
  detect::EgressCollector egress_;
  std::vector<repair::RepairWorker> repair_;
  windowing::WindowClock clock_;
  Counters counters_;
  TupleId last_id_ = 0;
  bool seen_any_ = false;
};

// ---------------------------------------------------------------------------
// Threaded engine: one thread per detect worker, repair worker and for the
// egress/aggregation stages, joined by bounded FIFO channels. Per-channel
// FIFO order is the only ordering guarantee; the aggregator re-sequences
// output by tuple id.
// ---------------------------------------------------------------------------

struct DetectEvent {
  enum class Kind { Sub, Slide, Stop };
  Kind kind = Kind::Sub;
  SubTuple sub;
  TupleId lower_bound = 0;
};

struct EgressAdmit {
  enum class Kind { Tuple, Slide, RuleDeleted, Eos };
  Kind kind = Kind::Tuple;
  Tuple tuple;
  std::size_t expected = 0;
  TupleId lower_bound = 0;
  RuleId rule_id = 0;
};

struct DetectResult {
  detect::ViolationMessage msg;
};

struct RepairEvent {
  enum class Kind { Bundle, Slide, RuleDeleted, Eos };
  Kind kind = Kind::Bundle;
  std::shared_ptr<const TupleBundle> bundle;
  TupleId lower_bound = 0;
  RuleId rule_id = 0;
};

/// Repair-worker inbox: bounded data lane plus an unbounded decision lane
/// that is drained first, so a worker completing a round can hand decisions
/// to its peers (and itself) without risking channel deadlock.
class RepairInbox {
 public:
  explicit RepairInbox(std::size_t capacity) : capacity_(capacity) {}

  void push_event(RepairEvent ev) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_push_.wait(lock, [&] { return data_.size() < capacity_; });
    data_.push_back(std::move(ev));
    cv_pop_.notify_one();
  }

  void push_decision(MergeDecision d) {
    std::lock_guard<std::mutex> lock(mu_);
    decisions_.push_back(std::move(d));
    cv_pop_.notify_one();
  }

  /// Decisions first, then data events.
  std::variant<MergeDecision, RepairEvent> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_pop_.wait(lock, [&] { return !decisions_.empty() || !data_.empty(); });
    if (!decisions_.empty()) {
      MergeDecision d = std::move(decisions_.front());
      decisions_.pop_front();
      return d;
    }
    RepairEvent ev = std::move(data_.front());
    data_.pop_front();
    cv_push_.notify_one();
    return ev;
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_push_;
  std::condition_variable cv_pop_;
  std::deque<RepairEvent> data_;
  std::deque<MergeDecision> decisions_;
};

struct AggEvent {
  enum class Kind { Clean, Dirty, Proposals, EgressEos, WorkerEos };
  Kind kind = Kind::Clean;
  Tuple tuple;                              // Clean / Dirty
  std::vector<AttributeId> attrs;           // Dirty
  TupleId tuple_id = 0;                     // Proposals
  std::vector<RepairProposal> proposals;    // Proposals
};

/// Collects merge proposals per (tuple, attr); the caller that completes a
/// round receives the decision and broadcasts it.
class SharedCoordinator {
 public:
  explicit SharedCoordinator(std::size_t n_workers) : n_workers_(n_workers) {}

  std::optional<MergeDecision> propose(const MergeProposal& p) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_pair(p.tuple_id, p.attr);
    auto& round = rounds_[key];
    round.push_back(p);
    if (round.size() < n_workers_) return std::nullopt;
    MergeDecision d = repair::coordinate(round);
    rounds_.erase(key);
    return d;
  }

 private:
  std::size_t n_workers_;
  std::mutex mu_;
  std::map<std::pair<TupleId, AttributeId>, std::vector<MergeProposal>> rounds_;
};

class ThreadedEngine final : public Engine {
 public:
  ThreadedEngine(const PipelineConfig& cfg, SchemaPtr schema, OutputFn out)
      : cfg_(cfg), schema_(std::move(schema)), out_(std::move(out)), controller_(cfg.window),
        clock_(cfg.window), coordinator_(cfg.n_repair_workers),
        egress_admissions_(cfg.channel_capacity), detect_results_(cfg.channel_capacity * 4),
        agg_events_(cfg.channel_capacity * 4) {
    for (const auto& r : cfg_.rules) {
      controller_.apply_add(r, *schema_);
      spawn_detect_worker(r);
    }
    for (std::size_t i = 0; i < cfg_.n_repair_workers; ++i) {
      repair_.push_back(std::make_unique<repair::RepairWorker>(i, cfg_.n_repair_workers,
                                                               cfg_.window));
      inboxes_.push_back(std::make_unique<RepairInbox>(cfg_.channel_capacity));
    }
    egress_thread_ = std::thread([this] { egress_loop(); });
    for (std::size_t i = 0; i < cfg_.n_repair_workers; ++i)
      repair_threads_.emplace_back([this, i] { repair_loop(i); });
    agg_thread_ = std::thread([this] { aggregator_loop(); });
  }

  ~ThreadedEngine() override {
    if (!finished_) {
      try {
        finish();
      } catch (...) {
      }
    }
  }

  void push_tuple(Tuple t) override {
    if (seen_any_ && t.id <= last_id_)
      throw ProtocolError("tuple ids must be strictly increasing");
    seen_any_ = true;
    last_id_ = t.id;

    if (auto slide = clock_.on_arrival(t.id)) {
      for (auto& [rid, ch] : detect_channels_)
        ch->push(DetectEvent{DetectEvent::Kind::Slide, {}, slide->lower_bound});
      EgressAdmit marker;
      marker.kind = EgressAdmit::Kind::Slide;
      marker.lower_bound = slide->lower_bound;
      egress_admissions_.push(std::move(marker));
      {
        std::lock_guard<std::mutex> lock(counters_mu_);
        ++counters_.window_slides;
      }
    }

    const auto& rules = controller_.active_rules();
    EgressAdmit admit;
    admit.kind = EgressAdmit::Kind::Tuple;
    admit.tuple = t;
    admit.expected = rules.size();
    egress_admissions_.push(std::move(admit));
    for (auto& st : detect::route_ingress(t, rules))
      detect_channels_.at(st.rule_id)->push(DetectEvent{DetectEvent::Kind::Sub, std::move(st), 0});
    {
      std::lock_guard<std::mutex> lock(counters_mu_);
      ++counters_.tuples_in;
    }
  }

  void push_update(const dynamics::RuleUpdate& u) override {
    try {
      if (u.kind == dynamics::RuleUpdate::Kind::Add) {
        controller_.apply_add(u.rule, *schema_);
        spawn_detect_worker(u.rule);
        std::lock_guard<std::mutex> lock(counters_mu_);
        ++counters_.rule_adds;
      } else {
        if (!controller_.has_rule(u.rule_id))
          throw ConfigError("deleting unknown rule id: " + std::to_string(u.rule_id));
        auto ch = detect_channels_.at(u.rule_id);
        ch->push(DetectEvent{DetectEvent::Kind::Stop, {}, 0});
        detect_channels_.erase(u.rule_id);
        // The worker object dies with apply_delete: wait for its thread.
        auto tit = detect_threads_.find(u.rule_id);
        if (tit != detect_threads_.end()) {
          tit->second.join();
          detect_threads_.erase(tit);
        }
        controller_.apply_delete(u.rule_id);
        EgressAdmit marker;
        marker.kind = EgressAdmit::Kind::RuleDeleted;
        marker.rule_id = u.rule_id;
        egress_admissions_.push(std::move(marker));
        std::lock_guard<std::mutex> lock(counters_mu_);
        ++counters_.rule_deletes;
      }
    } catch (const Error& e) {
      log::warn(std::string("rule update rejected: ") + e.what());
      std::lock_guard<std::mutex> lock(counters_mu_);
      ++counters_.rejected_updates;
    }
  }

  void finish() override {
    if (finished_) return;
    finished_ = true;
    for (auto& [rid, ch] : detect_channels_)
      ch->push(DetectEvent{DetectEvent::Kind::Stop, {}, 0});
    EgressAdmit eos;
    eos.kind = EgressAdmit::Kind::Eos;
    egress_admissions_.push(std::move(eos));
    for (auto& [rid, th] : detect_threads_)
      if (th.joinable()) th.join();
    if (egress_thread_.joinable()) egress_thread_.join();
    for (auto& th : repair_threads_)
      if (th.joinable()) th.join();
    if (agg_thread_.joinable()) agg_thread_.join();
    if (failure_) std::rethrow_exception(failure_);

    for (const auto& [rid, worker] : controller_.workers())
      counters_.detect_groups += worker->group_count();
    for (const auto& w : repair_) {
      counters_.repair_subgraphs += w->subgraph_count();
      counters_.subgraph_merges += w->counters().subgraph_merges;
      counters_.subgraph_splits += w->counters().subgraph_splits;
    }
  }

  const Counters& counters() const override { return counters_; }

  std::vector<RuleId> active_rule_ids() const override {
    std::vector<RuleId> out;
    for (const auto& [rid, worker] : controller_.workers()) out.push_back(rid);
    return out;
  }

  std::string dump_detect_history(RuleId rule) const override {
    for (const auto& [rid, worker] : controller_.workers())
      if (rid == rule) return worker->debug_dump_json();
    throw ConfigError("no active rule " + std::to_string(rule));
  }

  std::string dump_repair_worker(std::size_t index) const override {
    return repair_.at(index)->debug_dump_json();
  }

 private:
  void spawn_detect_worker(const Rule& rule) {
    auto ch = std::make_shared<Channel<DetectEvent>>(cfg_.channel_capacity);
    detect_channels_[rule.id] = ch;
    // Resolve the worker here: the thread must not touch the controller's
    // map, which mutates under rule updates.
    detect::DetectWorker* worker = &controller_.worker(rule.id);
    detect_threads_.emplace(rule.id,
                            std::thread([this, worker, ch] { detect_loop(*worker, ch); }));
  }

  void detect_loop(detect::DetectWorker& worker, std::shared_ptr<Channel<DetectEvent>> ch) {
    try {
      for (;;) {
        auto ev = ch->pop();
        if (!ev || ev->kind == DetectEvent::Kind::Stop) break;
        if (ev->kind == DetectEvent::Kind::Slide) {
          worker.on_slide(ev->lower_bound);
          continue;
        }
        DetectResult r{worker.process(ev->sub)};
        detect_results_.push(std::move(r));
      }
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void egress_loop() {
    try {
      // Admissions are processed head-of-line: detect workers run ahead, so
      // results for later tuples are parked until their admission arrives.
      detect::EgressCollector collector;
      std::map<TupleId, std::vector<detect::ViolationMessage>> early;
      auto feed_result = [&](detect::ViolationMessage msg) {
        {
          std::lock_guard<std::mutex> lock(counters_mu_);
          if (msg.is_violation())
            ++counters_.violation_messages;
          else
            ++counters_.nonviolation_messages;
        }
        collector.deliver(msg.tuple_id, msg);
      };
      for (;;) {
        auto admit = egress_admissions_.pop();
        if (!admit || admit->kind == EgressAdmit::Kind::Eos) break;
        if (admit->kind == EgressAdmit::Kind::Slide) {
          RepairEvent ev;
          ev.kind = RepairEvent::Kind::Slide;
          ev.lower_bound = admit->lower_bound;
          for (auto& inbox : inboxes_) inbox->push_event(ev);
          continue;
        }
        if (admit->kind == EgressAdmit::Kind::RuleDeleted) {
          RepairEvent ev;
          ev.kind = RepairEvent::Kind::RuleDeleted;
          ev.rule_id = admit->rule_id;
          for (auto& inbox : inboxes_) inbox->push_event(ev);
          continue;
        }

        TupleId id = admit->tuple.id;
        collector.admit(std::move(admit->tuple), admit->expected);
        if (auto it = early.find(id); it != early.end()) {
          for (auto& m : it->second) feed_result(std::move(m));
          early.erase(it);
        }
        std::vector<TupleBundle> ready = collector.drain_ready();
        while (ready.empty() && collector.pending() > 0) {
          auto res = detect_results_.pop();
          if (!res) throw ProtocolError("detect results closed mid-tuple");
          if (res->msg.tuple_id > id)
            early[res->msg.tuple_id].push_back(std::move(res->msg));
          else
            feed_result(std::move(res->msg));
          ready = collector.drain_ready();
        }
        for (auto& bundle : ready) route_bundle(std::move(bundle));
      }
      assert(early.empty());
      RepairEvent eos;
      eos.kind = RepairEvent::Kind::Eos;
      for (auto& inbox : inboxes_) inbox->push_event(eos);
      AggEvent aeos;
      aeos.kind = AggEvent::Kind::EgressEos;
      agg_events_.push(std::move(aeos));
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void route_bundle(TupleBundle bundle) {
    if (bundle.clean()) {
      AggEvent ev;
      ev.kind = AggEvent::Kind::Clean;
      ev.tuple = bundle.tuple;
      agg_events_.push(std::move(ev));
      return;
    }
    {
      std::lock_guard<std::mutex> lock(counters_mu_);
      ++counters_.dirty_bundles;
    }
    std::vector<AttributeId> attrs;
    for (const auto& [rid, m] : bundle.messages)
      if (m.is_violation() &&
          std::find(attrs.begin(), attrs.end(), m.current.attr) == attrs.end())
        attrs.push_back(m.current.attr);
    std::sort(attrs.begin(), attrs.end());

    AggEvent ev;
    ev.kind = AggEvent::Kind::Dirty;
    ev.tuple = bundle.tuple;
    ev.attrs = attrs;
    agg_events_.push(std::move(ev));

    auto shared = std::make_shared<const TupleBundle>(std::move(bundle));
    RepairEvent rev;
    rev.kind = RepairEvent::Kind::Bundle;
    rev.bundle = shared;
    for (auto& inbox : inboxes_) inbox->push_event(rev);
  }

  void repair_loop(std::size_t index) {
    try {
      repair::RepairWorker& worker = *repair_[index];
      struct PendingTuple {
        std::vector<RepairProposal> proposals;
        std::set<AttributeId> awaiting;
      };
      std::map<TupleId, PendingTuple> pending;
      bool eos = false;
      while (!eos || !pending.empty()) {
        auto item = inboxes_[index]->pop();
        if (std::holds_alternative<MergeDecision>(item)) {
          const MergeDecision& d = std::get<MergeDecision>(item);
          worker.apply_decision(d);
          auto it = pending.find(d.tuple_id);
          if (it != pending.end()) {
            it->second.awaiting.erase(d.attr);
            if (it->second.awaiting.empty()) {
              send_proposals(d.tuple_id, std::move(it->second.proposals));
              pending.erase(it);
            }
          }
          continue;
        }
        RepairEvent ev = std::move(std::get<RepairEvent>(item));
        switch (ev.kind) {
          case RepairEvent::Kind::Slide:
            worker.on_slide(ev.lower_bound);
            break;
          case RepairEvent::Kind::RuleDeleted:
            worker.on_rule_deleted(ev.rule_id);
            break;
          case RepairEvent::Kind::Eos:
            eos = true;
            break;
          case RepairEvent::Kind::Bundle: {
            const TupleBundle& bundle = *ev.bundle;
            TupleId id = bundle.tuple.id;
            std::vector<AttributeId> coord_attrs = worker.coordination_attrs(bundle);
            std::vector<AttributeId> touched = worker.apply_bundle(bundle);
            std::sort(touched.begin(), touched.end());
            const auto& round_attrs =
                cfg_.protocol == Protocol::Basic ? touched : coord_attrs;

            std::vector<RepairProposal> proposals;
            for (const auto& attr : touched) proposals.push_back(worker.propose(id, attr));

            bool defer = cfg_.protocol != Protocol::Ir && !round_attrs.empty();
            if (defer) {
              PendingTuple p;
              p.proposals = std::move(proposals);
              p.awaiting = std::set<AttributeId>(round_attrs.begin(), round_attrs.end());
              pending.emplace(id, std::move(p));
            } else {
              send_proposals(id, std::move(proposals));
            }
            for (const auto& attr : round_attrs) {
              auto ps = worker.merge_proposals(id, {attr});
              for (auto& p : ps) {
                if (index == 0) {
                  std::lock_guard<std::mutex> lock(counters_mu_);
                  ++counters_.coordination_rounds;  // one worker counts the round
                  counters_.coordination_messages += cfg_.n_repair_workers * 2;
                }
                if (auto decision = coordinator_.propose(p))
                  for (auto& inbox : inboxes_) inbox->push_decision(*decision);
              }
            }
            break;
          }
        }
      }
      AggEvent ev;
      ev.kind = AggEvent::Kind::WorkerEos;
      agg_events_.push(std::move(ev));
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void send_proposals(TupleId id, std::vector<RepairProposal> proposals) {
    AggEvent ev;
    ev.kind = AggEvent::Kind::Proposals;
    ev.tuple_id = id;
    ev.proposals = std::move(proposals);
    agg_events_.push(std::move(ev));
  }

  void aggregator_loop() {
    try {
      struct Slot {
        Tuple tuple;
        bool dirty = false;
        std::size_t workers_reported = 0;
        std::vector<RepairProposal> proposals;
        bool admitted = false;
      };
      std::map<TupleId, Slot> slots;
      std::deque<TupleId> order;
      bool egress_eos = false;
      std::size_t worker_eos = 0;

      auto flush_ready = [&] {
        while (!order.empty()) {
          auto it = slots.find(order.front());
          assert(it != slots.end());
          Slot& slot = it->second;
          if (slot.dirty && slot.workers_reported < cfg_.n_repair_workers) break;
          auto [out_tuple, decisions] = repair::Aggregator::decide(slot.tuple, slot.proposals);
          {
            std::lock_guard<std::mutex> lock(counters_mu_);
            counters_.repairs += decisions.size();
            ++counters_.tuples_out;
          }
          out_(out_tuple, decisions);
          slots.erase(it);
          order.pop_front();
        }
      };

      while (!egress_eos || worker_eos < cfg_.n_repair_workers || !slots.empty()) {
        auto ev = agg_events_.pop();
        if (!ev) break;
        switch (ev->kind) {
          case AggEvent::Kind::Clean: {
            Slot slot;
            slot.tuple = std::move(ev->tuple);
            slot.dirty = false;
            slot.admitted = true;
            TupleId id = slot.tuple.id;
            slots.emplace(id, std::move(slot));
            order.push_back(id);
            break;
          }
          case AggEvent::Kind::Dirty: {
            TupleId id = ev->tuple.id;
            Slot& slot = slots[id];
            slot.tuple = std::move(ev->tuple);
            slot.dirty = true;
            slot.admitted = true;
            order.push_back(id);
            break;
          }
          case AggEvent::Kind::Proposals: {
            Slot& slot = slots[ev->tuple_id];
            slot.dirty = true;
            ++slot.workers_reported;
            for (auto& p : ev->proposals) slot.proposals.push_back(std::move(p));
            break;
          }
          case AggEvent::Kind::EgressEos:
            egress_eos = true;
            break;
          case AggEvent::Kind::WorkerEos:
            ++worker_eos;
            break;
        }
        flush_ready();
      }
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void fail(std::exception_ptr e) {
    std::lock_guard<std::mutex> lock(counters_mu_);
    if (!failure_) failure_ = e;
  }

  PipelineConfig cfg_;
  SchemaPtr schema_;
  OutputFn out_;
  dynamics::RuleController controller_;
  windowing::WindowClock clock_;
  SharedCoordinator coordinator_;
  Counters counters_;
  mutable std::mutex counters_mu_;
  TupleId last_id_ = 0;
  bool seen_any_ = false;
  bool finished_ = false;
  std::exception_ptr failure_;

  std::map<RuleId, std::shared_ptr<Channel<DetectEvent>>> detect_channels_;
  std::map<RuleId, std::thread> detect_threads_;
  Channel<EgressAdmit> egress_admissions_;
  Channel<DetectResult> detect_results_;
  std::vector<std::unique_ptr<repair::RepairWorker>> repair_;
  std::vector<std::unique_ptr<RepairInbox>> inboxes_;
  std::vector<std::thread> repair_threads_;
  Channel<AggEvent> agg_events_;
  std::thread egress_thread_;
  std::thread agg_thread_;
};

}  // namespace

std::unique_ptr<Engine> make_engine(const PipelineConfig& cfg, SchemaPtr schema,
                                    Engine::OutputFn on_output) {
  cfg.validate();
  if (cfg.transport == Transport::Threads)
    return std::make_unique<ThreadedEngine>(cfg, std::move(schema), std::move(on_output));
  return std::make_unique<InProcessEngine>(cfg, std::move(schema), std::move(on_output));
}

double Metrics::mean_latency_ms() const {
  if (latency.empty()) return 0.0;
  double sum = 0;
  for (const auto& s : latency) sum += s.millis;
  return sum / static_cast<double>(latency.size());
}

void Metrics::write_csv_dir(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  {
    io::CsvWriter w(dir + "/throughput.csv", {"elapsed_s", "tuples", "tuples_per_s"});
    for (const auto& p : throughput)
      w.row({std::to_string(p.elapsed_s), std::to_string(p.tuples), std::to_string(p.per_s)});
  }
  {
    io::CsvWriter w(dir + "/latency.csv", {"tuple_id", "latency_ms"});
    for (const auto& s : latency) w.row({std::to_string(s.tuple_id), std::to_string(s.millis)});
  }
  {
    io::CsvWriter w(dir + "/counters.csv", {"counter", "value"});
    for (const auto& [name, value] : counters.rows()) w.row({name, std::to_string(value)});
  }
}

Metrics run(const PipelineConfig& cfg, io::LineSource& input, io::LineSink& output,
            const RunOptions& opts) {
  cfg.validate();
  Metrics metrics;

  // Attributes every rule (incl. scheduled additions) needs in the schema.
  std::vector<AttributeId> rule_attrs;
  auto add_attrs = [&rule_attrs](const Rule& r) {
    for (const auto& a : r.referenced_attributes())
      if (std::find(rule_attrs.begin(), rule_attrs.end(), a) == rule_attrs.end())
        rule_attrs.push_back(a);
  };
  for (const auto& r : cfg.rules) add_attrs(r);
  for (const auto& u : opts.schedule)
    if (u.kind == dynamics::RuleUpdate::Kind::Add) add_attrs(u.rule);

  std::unique_ptr<Engine> engine;
  SchemaPtr schema;

  using Clock = std::chrono::steady_clock;
  Clock::time_point start{};
  std::mutex out_mu;
  std::unordered_map<TupleId, Clock::time_point> stamps;
  std::uint64_t out_count = 0;
  std::uint64_t last_interval_count = 0;
  Clock::time_point interval_start{};
  constexpr std::uint64_t kThroughputInterval = 10000;

  Engine::OutputFn emit = [&](const Tuple& t, const std::vector<repair::RepairDecision>&) {
    std::lock_guard<std::mutex> lock(out_mu);
    output.write_line(io::tuple_to_line(t));
    ++out_count;
    auto now = Clock::now();
    if (auto it = stamps.find(t.id); it != stamps.end()) {
      metrics.latency.push_back(
          {t.id, std::chrono::duration<double, std::milli>(now - it->second).count()});
      stamps.erase(it);
    }
    if (out_count % kThroughputInterval == 0) {
      double span = std::chrono::duration<double>(now - interval_start).count();
      metrics.throughput.push_back(
          {std::chrono::duration<double>(now - start).count(), out_count - last_interval_count,
           span > 0 ? (out_count - last_interval_count) / span : 0.0});
      interval_start = now;
      last_interval_count = out_count;
    }
  };

  const std::uint64_t sample_every =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(1.0 / cfg.latency_sample_rate + 0.5));

  std::uint64_t admitted = 0;
  std::uint64_t line_no = 0;
  std::size_t next_update = 0;
  std::uint64_t dead = 0;
  TupleId last_id = 0;

  auto dead_letter = [&](const std::string& reason, const std::string& raw) {
    ++dead;
    if (opts.dead_letters) {
      nlohmann::json j;
      j["line"] = line_no;
      j["reason"] = reason;
      j["raw"] = raw;
      opts.dead_letters->write_line(j.dump());
    }
  };

  while (auto line = input.next_line()) {
    ++line_no;
    if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
    io::RawTuple raw;
    try {
      raw = io::parse_tuple_line(*line);
    } catch (const Error& e) {
      dead_letter(e.what(), *line);
      continue;
    }
    if (engine && raw.id <= last_id) {
      dead_letter("non-monotonic tuple id", *line);
      continue;
    }

    if (!engine) {
      // First record fixes the schema: its attributes plus whatever the
      // rules reference.
      std::vector<AttributeId> attrs;
      for (const auto& [a, v] : raw.values) attrs.push_back(a);
      for (const auto& a : rule_attrs)
        if (std::find(attrs.begin(), attrs.end(), a) == attrs.end()) attrs.push_back(a);
      schema = std::make_shared<Schema>(attrs);
      engine = make_engine(cfg, schema, emit);
      start = Clock::now();
      interval_start = start;
    }

    Tuple t;
    t.id = raw.id;
    t.schema = schema;
    t.values.assign(schema->size(), Value::null());
    bool ok = true;
    for (auto& [a, v] : raw.values) {
      if (!schema->contains(a)) {
        dead_letter("unknown attribute: " + a, *line);
        ok = false;
        break;
      }
      t.values[schema->index_of(a)] = std::move(v);
    }
    if (!ok) continue;

    while (next_update < opts.schedule.size() &&
           opts.schedule[next_update].effective_offset <= admitted)
      engine->push_update(opts.schedule[next_update++]);

    if (admitted % sample_every == 0) {
      std::lock_guard<std::mutex> lock(out_mu);
      stamps.emplace(t.id, Clock::now());
    }
    last_id = t.id;
    engine->push_tuple(std::move(t));
    ++admitted;
  }

  if (engine) {
    while (next_update < opts.schedule.size()) engine->push_update(opts.schedule[next_update++]);
    engine->finish();
    metrics.counters = engine->counters();
    auto now = Clock::now();
    if (out_count > last_interval_count) {
      double span = std::chrono::duration<double>(now - interval_start).count();
      metrics.throughput.push_back(
          {std::chrono::duration<double>(now - start).count(), out_count - last_interval_count,
           span > 0 ? (out_count - last_interval_count) / span : 0.0});
    }
    if (!opts.debug_dump_dir.empty()) {
      std::filesystem::create_directories(opts.debug_dump_dir);
      for (RuleId rid : engine->active_rule_ids()) {
        std::ofstream f(opts.debug_dump_dir + "/detect_history_rule_" + std::to_string(rid) +
                        ".json");
        f << engine->dump_detect_history(rid) << "\n";
      }
      for (std::size_t i = 0; i < cfg.n_repair_workers; ++i) {
        std::ofstream f(opts.debug_dump_dir + "/repair_worker_" + std::to_string(i) + ".json");
        f << engine->dump_repair_worker(i) << "\n";
      }
    }
  }
  metrics.counters.dead_letters = dead;
  output.flush();
  return metrics;
}

}  // namespace bleach::runtime
