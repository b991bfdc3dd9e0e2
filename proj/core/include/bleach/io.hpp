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

#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bleach/dynamics.hpp"
#include "bleach/model.hpp"

namespace bleach::io {

/// A tuple record as it appears on the wire, before schema binding.
struct RawTuple {
  TupleId id = 0;
  std::vector<std::pair<AttributeId, Value>> values;
};

RawTuple parse_tuple_line(const std::string& line);
std::string tuple_to_line(const Tuple& t);

Rule parse_rule_json(const std::string& json_text);
std::string rule_to_json(const Rule& r);

/// Accepts either a JSON array of rule objects or one object per line.
std::vector<Rule> load_rules_file(const std::string& path);
void save_rules_file(const std::string& path, const std::vector<Rule>& rules);

/// Control commands: {"op":"add","rule":{...}} / {"op":"delete","rule_id":5},
/// optionally with "at": <tuples admitted before the update applies>.
dynamics::RuleUpdate parse_update_line(const std::string& line);

/// Line-oriented input endpoint: "-" / "stdin", a file path, or a socket
/// ("tcp://host:port" to connect, "tcp-listen://port" to accept one peer).
class LineSource {
 public:
  virtual ~LineSource() = default;
  virtual std::optional<std::string> next_line() = 0;
};

class LineSink {
 public:
  virtual ~LineSink() = default;
  virtual void write_line(const std::string& line) = 0;
  virtual void flush() {}
};

std::unique_ptr<LineSource> open_source(const std::string& endpoint);
std::unique_ptr<LineSink> open_sink(const std::string& endpoint);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

}  // namespace bleach::io
