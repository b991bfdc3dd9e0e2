/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/genbench.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include <json.hpp>

namespace bleach::gen {

using nlohmann::json;

void GenConfig::validate() const {
  if (p_rhs_dirty < 0 || p_rhs_dirty > 1 || p_lhs_null < 0 || p_lhs_null > 1)
    throw ConfigError("dirt probabilities must lie in [0,1]");
  if (spike && (spike->rate < 0 || spike->rate > 1))
    throw ConfigError("spike rate must lie in [0,1]");
  for (std::size_t card : {n_items, n_brands, n_categories, n_geos, n_states, n_promos, n_stores,
                           n_customers, max_lines_per_ticket})
    if (card == 0) throw ConfigError("cardinalities must be positive");
  // Perturbation draws a different value from the same dictionary.
  for (std::size_t card : {n_brands, n_categories, n_geos, n_promos, n_stores, n_customers})
    if (card < 2) throw ConfigError("value dictionaries need at least two entries");
}

SchemaPtr analog_schema() {
  static SchemaPtr schema = std::make_shared<Schema>(std::vector<AttributeId>{
      "item_sk", "brand", "category", "state", "city", "zip", "promo_sk", "promo_name",
      "store_sk", "store_name", "ticket_num", "customer_sk", "email"});
  return schema;
}

namespace {

Rule make_rule(RuleId id, std::vector<AttributeId> lhs, AttributeId rhs) {
  Rule r;
  r.id = id;
  r.lhs = std::move(lhs);
  r.rhs = std::move(rhs);
  for (const auto& a : r.lhs)
    r.condition.conjuncts.push_back(Predicate{a, Predicate::Op::NotNull, {}});
  return r;
}

// Deterministic, platform-independent draws.
struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  std::uint64_t below(std::uint64_t n) { return eng() % n; }
  double unit() { return double(eng() >> 11) * 0x1.0p-53; }
};

std::string pad(std::size_t v) {
  std::string s = std::to_string(v);
  return std::string(s.size() >= 5 ? 0 : 5 - s.size(), '0') + s;
}

struct Dictionaries {
  const GenConfig& cfg;

  std::string brand(std::size_t i) const { return "brand_" + pad(i % cfg.n_brands); }
  std::string category(std::size_t i) const { return "cat_" + pad(i % cfg.n_categories); }
  std::string state(std::size_t g) const { return "ST" + pad(g % cfg.n_states); }
  std::string city(std::size_t g) const { return "city_" + pad(g); }
  std::string zip(std::size_t g) const { return "zip_" + pad(g); }
  std::string promo_name(std::size_t p) const { return "promo_" + pad(p); }
  std::string store_name(std::size_t s) const { return "store_" + pad(s); }
  std::string email(std::size_t c) const { return "user" + pad(c) + "@example.com"; }
};

}  // namespace

std::vector<Rule> analog_ruleset() {
  return {
      make_rule(0, {"item_sk"}, "brand"),
      make_rule(1, {"item_sk"}, "category"),
      make_rule(2, {"state", "city"}, "zip"),
      make_rule(3, {"promo_sk"}, "promo_name"),
      make_rule(4, {"store_sk"}, "store_name"),
      make_rule(5, {"ticket_num"}, "store_name"),
      make_rule(6, {"ticket_num"}, "email"),
      make_rule(7, {"customer_sk"}, "email"),
  };
}

Generated generate(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dictionaries dict{cfg};
  SchemaPtr schema = analog_schema();

  Generated out;
  out.tuples.reserve(cfg.n_tuples);
  out.truth.rows.reserve(cfg.n_tuples);

  // RHS dictionaries for dirt injection: (cardinality, value-of-index).
  struct RhsDict {
    AttributeId attr;
    std::size_t card;
    std::string (Dictionaries::*value)(std::size_t) const;
  };
  const std::vector<RhsDict> rhs_dicts = {
      {"brand", cfg.n_brands, &Dictionaries::brand},
      {"category", cfg.n_categories, &Dictionaries::category},
      {"zip", cfg.n_geos, &Dictionaries::zip},
      {"promo_name", cfg.n_promos, &Dictionaries::promo_name},
      {"store_name", cfg.n_stores, &Dictionaries::store_name},
      {"email", cfg.n_customers, &Dictionaries::email},
  };
  const std::vector<AttributeId> lhs_attrs = {"item_sk",  "state",      "city",      "promo_sk",
                                              "store_sk", "ticket_num", "customer_sk"};

  std::size_t ticket = 0;
  std::size_t lines_left = 0;
  std::size_t ticket_store = 0;
  std::size_t ticket_customer = 0;

  for (std::uint64_t i = 0; i < cfg.n_tuples; ++i) {
    if (lines_left == 0) {
      ++ticket;
      lines_left = 1 + rng.below(cfg.max_lines_per_ticket);
      ticket_store = rng.below(cfg.n_stores);
      ticket_customer = rng.below(cfg.n_customers);
    }
    --lines_left;

    std::size_t item = rng.below(cfg.n_items);
    std::size_t geo = rng.below(cfg.n_geos);
    std::size_t promo = rng.below(cfg.n_promos);

    // Index of the clean value within each RHS dictionary.
    std::map<AttributeId, std::size_t> rhs_index = {
        {"brand", item % cfg.n_brands},
        {"category", item % cfg.n_categories},
        {"zip", geo},
        {"promo_name", promo},
        {"store_name", ticket_store},
        {"email", ticket_customer},
    };

    Tuple t;
    t.id = i + 1;
    t.schema = schema;
    t.values.assign(schema->size(), Value::null());
    auto set = [&](const AttributeId& a, std::string v) {
      t.values[schema->index_of(a)] = Value::text(std::move(v));
    };
    set("item_sk", std::to_string(item));
    set("brand", dict.brand(item));
    set("category", dict.category(item));
    set("state", dict.state(geo));
    set("city", dict.city(geo));
    set("zip", dict.zip(geo));
    set("promo_sk", std::to_string(promo));
    set("promo_name", dict.promo_name(promo));
    set("store_sk", std::to_string(ticket_store));
    set("store_name", dict.store_name(ticket_store));
    set("ticket_num", "T" + std::to_string(ticket));
    set("customer_sk", std::to_string(ticket_customer));
    set("email", dict.email(ticket_customer));

    GroundTruth::Row row;
    row.id = t.id;
    for (const auto& d : rhs_dicts)
      row.clean_rhs.emplace(d.attr, Value::text((dict.*(d.value))(rhs_index.at(d.attr))));

    double p = cfg.p_rhs_dirty;
    if (cfg.spike && i >= cfg.spike->from && i < cfg.spike->to) p = cfg.spike->rate;

    for (const auto& d : rhs_dicts) {
      if (rng.unit() >= p) continue;
      std::size_t clean_idx = rhs_index.at(d.attr);
      std::size_t other = (clean_idx + 1 + rng.below(d.card - 1)) % d.card;
      set(d.attr, (dict.*(d.value))(other));
      row.dirtied.insert(d.attr);
    }
    for (const auto& a : lhs_attrs) {
      if (rng.unit() >= cfg.p_lhs_null) continue;
      t.values[schema->index_of(a)] = Value::null();
      row.nulled.insert(a);
    }

    out.tuples.push_back(std::move(t));
    out.truth.rows.push_back(std::move(row));
  }
  return out;
}

const GroundTruth::Row* GroundTruth::find(TupleId id) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), id,
                             [](const Row& r, TupleId v) { return r.id < v; });
  if (it == rows.end() || it->id != id) return nullptr;
  return &*it;
}

void write_truth(const GroundTruth& truth, io::LineSink& sink) {
  for (const auto& row : truth.rows) {
    json j;
    j["id"] = row.id;
    json clean = json::object();
    for (const auto& [a, v] : row.clean_rhs) clean[a] = v.is_null() ? json(nullptr) : json(v.str());
    j["clean"] = clean;
    j["dirty"] = row.dirtied;
    j["null"] = row.nulled;
    sink.write_line(j.dump());
  }
  sink.flush();
}

GroundTruth read_truth(io::LineSource& source) {
  GroundTruth truth;
  while (auto line = source.next_line()) {
    if (line->empty()) continue;
    json j = json::parse(*line);
    GroundTruth::Row row;
    row.id = j.at("id").get<TupleId>();
    for (const auto& [a, v] : j.at("clean").items())
      row.clean_rhs.emplace(a, v.is_null() ? Value::null() : Value::text(v.get<std::string>()));
    for (const auto& a : j.at("dirty")) row.dirtied.insert(a.get<std::string>());
    for (const auto& a : j.at("null")) row.nulled.insert(a.get<std::string>());
    truth.rows.push_back(std::move(row));
  }
  return truth;
}

std::vector<RuleReport> dirty_ratio(const std::vector<Tuple>& output, const GroundTruth& truth,
                                    const std::vector<Rule>& rules) {
  std::vector<RuleReport> reports;
  for (const auto& rule : rules) {
    RuleReport rep;
    rep.rule_id = rule.id;
    rep.rhs = rule.rhs;
    for (const auto& t : output) {
      const GroundTruth::Row* row = truth.find(t.id);
      if (!row) throw Error("output tuple " + std::to_string(t.id) + " missing from ground truth");
      auto cit = row->clean_rhs.find(rule.rhs);
      if (cit == row->clean_rhs.end()) continue;
      ++rep.n;
      bool applicable = true;
      for (const auto& a : rule.lhs)
        if (row->nulled.count(a)) applicable = false;
      if (applicable) ++rep.applicable;
      if (row->dirtied.count(rule.rhs)) ++rep.dirty_in;
      if (!(t.at(rule.rhs) == cit->second)) {
        ++rep.dirty_out_all;
        if (applicable) ++rep.dirty_out_applicable;
      }
    }
    reports.push_back(rep);
  }
  return reports;
}

std::vector<Tuple> batch_oracle(const std::vector<Tuple>& tuples, const std::vector<Rule>& rules) {
  // Node per checkable RHS cell, keyed (tuple id, attr).
  std::map<std::pair<TupleId, AttributeId>, std::size_t> node_of;
  std::vector<std::pair<std::size_t, Value>> cells;  // tuple index, value
  std::vector<std::size_t> parent;

  auto node = [&](TupleId id, const AttributeId& attr, std::size_t tuple_idx, const Value& v) {
    auto [it, fresh] = node_of.try_emplace({id, attr}, cells.size());
    if (fresh) {
      cells.emplace_back(tuple_idx, v);
      parent.push_back(parent.size());
    }
    return it->second;
  };
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](std::size_t a, std::size_t b) { parent[find(a)] = find(b); };

  // Group checkable cells per rule and LHS key; cells of any group holding
  // two or more distinct values form one equivalence class.
  for (const auto& rule : rules) {
    std::map<std::vector<Value>, std::vector<std::size_t>> groups;  // lhs -> tuple indexes
    for (std::size_t i = 0; i < tuples.size(); ++i) {
      const Tuple& t = tuples[i];
      if (!eval_condition(rule.condition, t)) continue;
      std::vector<Value> key;
      bool null_lhs = false;
      for (const auto& a : rule.lhs) {
        const Value& v = t.at(a);
        if (v.is_null()) null_lhs = true;
        key.push_back(v);
      }
      if (null_lhs) continue;
      groups[key].push_back(i);
    }
    for (const auto& [key, members] : groups) {
      bool violating = false;
      for (std::size_t j = 1; j < members.size(); ++j)
        if (!(tuples[members[j]].at(rule.rhs) == tuples[members[0]].at(rule.rhs))) {
          violating = true;
          break;
        }
      if (!violating) continue;
      std::size_t first = 0;
      bool have_first = false;
      for (std::size_t i : members) {
        std::size_t nd = node(tuples[i].id, rule.rhs, i, tuples[i].at(rule.rhs));
        if (!have_first) {
          first = nd;
          have_first = true;
        } else {
          unite(first, nd);
        }
      }
    }
  }

  // Majority value per class; ties to the value seen earliest, then lex.
  struct ClassStats {
    std::map<Value, std::pair<std::uint64_t, TupleId>> freq;  // value -> (count, first id)
  };
  std::map<std::size_t, ClassStats> classes;
  for (const auto& [key, nd] : node_of) {
    auto& stats = classes[find(nd)];
    const Value& v = cells[nd].second;
    auto [it, fresh] = stats.freq.try_emplace(v, std::make_pair(0, key.first));
    ++it->second.first;
    it->second.second = std::min(it->second.second, key.first);
  }
  std::map<std::size_t, Value> chosen;
  for (const auto& [root, stats] : classes) {
    const Value* best = nullptr;
    std::uint64_t best_n = 0;
    TupleId best_first = 0;
    for (const auto& [v, cf] : stats.freq) {
      if (!best || cf.first > best_n || (cf.first == best_n && cf.second < best_first) ||
          (cf.first == best_n && cf.second == best_first && v < *best)) {
        best = &v;
        best_n = cf.first;
        best_first = cf.second;
      }
    }
    chosen.emplace(root, *best);
  }

  std::vector<Tuple> out = tuples;
  for (const auto& [key, nd] : node_of) {
    const Value& v = chosen.at(find(nd));
    out[cells[nd].first].at(key.second) = v;
  }
  return out;
}

MicroBatchResult micro_batch_clean(const std::vector<Tuple>& input, std::size_t window_tuples,
                                   const std::vector<Rule>& rules) {
  if (window_tuples == 0) throw ConfigError("micro-batch window must be positive");
  MicroBatchResult res;
  res.output.reserve(input.size());
  double total_latency = 0;
  for (std::size_t start = 0; start < input.size(); start += window_tuples) {
    std::size_t end = std::min(start + window_tuples, input.size());
    std::vector<Tuple> batch(input.begin() + start, input.begin() + end);
    std::vector<Tuple> cleaned = batch_oracle(batch, rules);
    double close_time = double(end - 1) * kSimArrivalInterval;
    double exec_time = double(end - start) * kSimPerTupleCost;
    for (std::size_t i = start; i < end; ++i) {
      double arrival = double(i) * kSimArrivalInterval;
      total_latency += (close_time - arrival) + exec_time;
    }
    for (auto& t : cleaned) res.output.push_back(std::move(t));
  }
  if (!input.empty()) res.avg_latency = total_latency / double(input.size());
  return res;
}

}  // namespace bleach::gen
