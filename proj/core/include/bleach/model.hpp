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

#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bleach {

using TupleId = std::uint64_t;
using RuleId = std::uint32_t;
using AttributeId = std::string;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Referenced attribute is not part of the stream schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Internal wiring violated a channel contract (e.g. duplicate message).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An attribute value: either NULL or canonical text. Numeric input is
/// carried as its textual form; equality is exact byte equality.
class Value {
 public:
  Value() : null_(true) {}
  static Value null() { return Value(); }
  static Value text(std::string s) {
    Value v;
    v.null_ = false;
    v.text_ = std::move(s);
    return v;
  }

  bool is_null() const { return null_; }
  const std::string& str() const { return text_; }

  friend bool operator==(const Value& a, const Value& b) {
    return a.null_ == b.null_ && (a.null_ || a.text_ == b.text_);
  }
  // Null sorts before any text.
  friend std::strong_ordering operator<=>(const Value& a, const Value& b) {
    if (a.null_ != b.null_) return a.null_ ? std::strong_ordering::less : std::strong_ordering::greater;
    if (a.null_) return std::strong_ordering::equal;
    return a.text_ <=> b.text_;
  }

  std::size_t hash() const {
    return null_ ? 0x9e3779b97f4a7c15ull : std::hash<std::string>{}(text_);
  }

 private:
  bool null_;
  std::string text_;
};

inline std::size_t hash_combine(std::size_t seed, std::size_t h) {
  return seed ^ (h + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
}

/// Fixed attribute set of the stream, shared by all tuples of a run.
class Schema {
 public:
  explicit Schema(std::vector<AttributeId> attrs) : attrs_(std::move(attrs)) {
    for (std::size_t i = 0; i < attrs_.size(); ++i) index_.emplace(attrs_[i], i);
  }

  std::size_t size() const { return attrs_.size(); }
  const std::vector<AttributeId>& attributes() const { return attrs_; }
  bool contains(const AttributeId& a) const { return index_.count(a) != 0; }

  std::size_t index_of(const AttributeId& a) const {
    auto it = index_.find(a);
    if (it == index_.end()) throw SchemaError("unknown attribute: " + a);
    return it->second;
  }

 private:
  std::vector<AttributeId> attrs_;
  std::unordered_map<AttributeId, std::size_t> index_;
};

using SchemaPtr = std::shared_ptr<const Schema>;

/// A stream record. Every schema attribute is present (possibly Null).
struct Tuple {
  TupleId id = 0;
  SchemaPtr schema;
  std::vector<Value> values;

  const Value& at(const AttributeId& a) const { return values[schema->index_of(a)]; }
  Value& at(const AttributeId& a) { return values[schema->index_of(a)]; }
};

/// (tuple id, attribute, value) triple; the atomic unit of cleaning.
/// Cells stored in detect/repair state are never rewritten.
struct Cell {
  TupleId tuple_id = 0;
  AttributeId attr;
  Value value;

  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Predicate {
  enum class Op { NotNull, Equals, NotEquals };
  AttributeId attr;
  Op op = Op::NotNull;
  Value constant;  // Equals / NotEquals only

  friend bool operator==(const Predicate&, const Predicate&) = default;
};

/// Conjunction of predicates over the conditional attributes. An empty
/// conjunct list is always true, which turns a CFD into a plain FD.
struct Condition {
  std::vector<Predicate> conjuncts;

  bool always_true() const { return conjuncts.empty(); }
  friend bool operator==(const Condition&, const Condition&) = default;
};

struct Rule {
  RuleId id = 0;
  std::vector<AttributeId> lhs;
  AttributeId rhs;
  Condition condition;

  /// Throws ConfigError if the shape invariants do not hold.
  void validate() const;

  /// All attributes the rule needs present in the schema.
  std::vector<AttributeId> referenced_attributes() const;
};

/// Per-rule projection of a tuple, routed to that rule's detect worker.
struct SubTuple {
  TupleId tuple_id = 0;
  RuleId rule_id = 0;
  std::vector<Value> lhs_values;  // in rule LHS order
  Cell rhs_cell;
  bool cond_holds = false;
};

bool eval_condition(const Condition& cond, const Tuple& t);
SubTuple project(const Tuple& t, const Rule& r);
bool lhs_has_null(const SubTuple& st);

}  // namespace bleach

template <>
struct std::hash<bleach::Value> {
  std::size_t operator()(const bleach::Value& v) const { return v.hash(); }
};
