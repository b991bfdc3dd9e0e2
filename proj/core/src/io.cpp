/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
*/
#include "bleach/io.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bleach::io {

using nlohmann::json;

namespace {

Value value_from_json(const json& j) {
  if (j.is_null()) return Value::null();
  if (j.is_string()) return Value::text(j.get<std::string>());
  // Numbers and booleans travel as their canonical textual form.
  return Value::text(j.dump());
}

json value_to_json(const Value& v) { return v.is_null() ? json(nullptr) : json(v.str()); }

Rule rule_from_json(const json& j) {
  Rule r;
  r.id = j.at("id").get<RuleId>();
  for (const auto& a : j.at("lhs")) r.lhs.push_back(a.get<std::string>());
  r.rhs = j.at("rhs").get<std::string>();
  if (j.contains("cond")) {
    for (const auto& c : j.at("cond")) {
      Predicate p;
      p.attr = c.at("attr").get<std::string>();
      std::string op = c.at("op").get<std::string>();
      if (op == "neq_null") {
        p.op = Predicate::Op::NotNull;
      } else if (op == "eq") {
        p.op = Predicate::Op::Equals;
        p.constant = value_from_json(c.at("value"));
      } else if (op == "neq") {
        p.op = Predicate::Op::NotEquals;
        p.constant = value_from_json(c.at("value"));
      } else {
        throw ConfigError("unknown condition op: " + op);
      }
      r.condition.conjuncts.push_back(std::move(p));
    }
  }
  r.validate();
  return r;
}

json rule_to_json_obj(const Rule& r) {
  json j;
  j["id"] = r.id;
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  json cond = json::array();
  for (const auto& p : r.condition.conjuncts) {
    json c;
    c["attr"] = p.attr;
    switch (p.op) {
      case Predicate::Op::NotNull:
        c["op"] = "neq_null";
        break;
      case Predicate::Op::Equals:
        c["op"] = "eq";
        c["value"] = value_to_json(p.constant);
        break;
      case Predicate::Op::NotEquals:
        c["op"] = "neq";
        c["value"] = value_to_json(p.constant);
        break;
    }
    cond.push_back(c);
  }
  j["cond"] = cond;
  return j;
}

}  // namespace

RawTuple parse_tuple_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(std::string("invalid JSON: ") + e.what());
  }
  RawTuple t;
  if (!j.contains("id") || !j.at("id").is_number_unsigned())
    throw Error("tuple record lacks an unsigned \"id\"");
  t.id = j.at("id").get<TupleId>();
  if (!j.contains("values") || !j.at("values").is_object())
    throw Error("tuple record lacks a \"values\" object");
  for (const auto& [k, v] : j.at("values").items()) t.values.emplace_back(k, value_from_json(v));
  return t;
}

std::string tuple_to_line(const Tuple& t) {
  json values = json::object();
  const auto& attrs = t.schema->attributes();
  for (std::size_t i = 0; i < attrs.size(); ++i) values[attrs[i]] = value_to_json(t.values[i]);
  json j;
  j["id"] = t.id;
  j["values"] = values;
  return j.dump();
}

Rule parse_rule_json(const std::string& json_text) { return rule_from_json(json::parse(json_text)); }

std::string rule_to_json(const Rule& r) { return rule_to_json_obj(r).dump(); }

std::vector<Rule> load_rules_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rules file: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<Rule> rules;
  auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return rules;
  if (content[first] == '[') {
    for (const auto& j : json::parse(content)) rules.push_back(rule_from_json(j));
  } else {
    std::istringstream ss(content);
    std::string line;
    while (std::getline(ss, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      rules.push_back(rule_from_json(json::parse(line)));
    }
  }
  std::set<RuleId> ids;
  for (const auto& r : rules)
    if (!ids.insert(r.id).second)
      throw ConfigError("duplicate rule id in rules file: " + std::to_string(r.id));
  return rules;
}

void save_rules_file(const std::string& path, const std::vector<Rule>& rules) {
  json arr = json::array();
  for (const auto& r : rules) arr.push_back(rule_to_json_obj(r));
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write rules file: " + path);
  out << arr.dump(2) << "\n";
}

dynamics::RuleUpdate parse_update_line(const std::string& line) {
  json j = json::parse(line);
  std::string op = j.at("op").get<std::string>();
  std::uint64_t at = j.value("at", std::uint64_t{0});
  if (op == "add") return dynamics::RuleUpdate::add(rule_from_json(j.at("rule")), at);
  if (op == "delete") return dynamics::RuleUpdate::remove(j.at("rule_id").get<RuleId>(), at);
  throw ConfigError("unknown control op: " + op);
}

namespace {

class StreamSource : public LineSource {
 public:
  explicit StreamSource(std::istream& s) : stream_(s) {}
  std::optional<std::string> next_line() override {
    std::string line;
    if (!std::getline(stream_, line)) return std::nullopt;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

 private:
  std::istream& stream_;
};

class FileSource : public LineSource {
 public:
  explicit FileSource(const std::string& path) : file_(path) {
    if (!file_) throw ConfigError("cannot open input file: " + path);
  }
  std::optional<std::string> next_line() override {
    std::string line;
    if (!std::getline(file_, line)) return std::nullopt;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

 private:
  std::ifstream file_;
};

class StreamSink : public LineSink {
 public:
  explicit StreamSink(std::ostream& s) : stream_(s) {}
  void write_line(const std::string& line) override { stream_ << line << '\n'; }
  void flush() override { stream_.flush(); }

 private:
  std::ostream& stream_;
};

class FileSink : public LineSink {
 public:
  explicit FileSink(const std::string& path) : file_(path) {
    if (!file_) throw ConfigError("cannot open output file: " + path);
  }
  void write_line(const std::string& line) override { file_ << line << '\n'; }
  void flush() override { file_.flush(); }

 private:
  std::ofstream file_;
};

/// One-connection blocking TCP endpoint, line framed.
class TcpEndpoint {
 public:
  ~TcpEndpoint() {
    if (fd_ >= 0) ::close(fd_);
  }

  void connect_to(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
      throw Error("cannot resolve " + host + ":" + port);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
      ::freeaddrinfo(res);
      throw Error("cannot connect to " + host + ":" + port);
    }
    ::freeaddrinfo(res);
  }

  void listen_on(uint16_t port) {
    int server = ::socket(AF_INET, SOCK_STREAM, 0);
    if (server < 0) throw Error("cannot create socket");
    int one = 1;
    ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(server, 1) != 0) {
      ::close(server);
      throw Error("cannot listen on port " + std::to_string(port));
    }
    fd_ = ::accept(server, nullptr, nullptr);
    ::close(server);
    if (fd_ < 0) throw Error("accept failed on port " + std::to_string(port));
  }

  std::optional<std::string> read_line() {
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      char chunk[4096];
      ssize_t n = ::read(fd_, chunk, sizeof(chunk));
      if (n <= 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line;
        line.swap(buffer_);
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::write(fd_, data.data() + off, data.size() - off);
      if (n <= 0) throw Error("socket write failed");
      off += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_ = -1;
  std::string buffer_;
};

std::unique_ptr<TcpEndpoint> open_tcp(const std::string& endpoint) {
  auto ep = std::make_unique<TcpEndpoint>();
  if (endpoint.rfind("tcp-listen://", 0) == 0) {
    ep->listen_on(static_cast<uint16_t>(std::stoi(endpoint.substr(13))));
  } else {
    std::string rest = endpoint.substr(6);  // after tcp://
    auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw ConfigError("endpoint needs host:port: " + endpoint);
    ep->connect_to(rest.substr(0, colon), rest.substr(colon + 1));
  }
  return ep;
}

class TcpSource : public LineSource {
 public:
  explicit TcpSource(std::unique_ptr<TcpEndpoint> ep) : ep_(std::move(ep)) {}
  std::optional<std::string> next_line() override { return ep_->read_line(); }

 private:
  std::unique_ptr<TcpEndpoint> ep_;
};

class TcpSink : public LineSink {
 public:
  explicit TcpSink(std::unique_ptr<TcpEndpoint> ep) : ep_(std::move(ep)) {}
  void write_line(const std::string& line) override { ep_->write_all(line + "\n"); }

 private:
  std::unique_ptr<TcpEndpoint> ep_;
};

bool is_tcp(const std::string& e) {
  return e.rfind("tcp://", 0) == 0 || e.rfind("tcp-listen://", 0) == 0;
}

}  // namespace

std::unique_ptr<LineSource> open_source(const std::string& endpoint) {
  if (endpoint == "-" || endpoint == "stdin") return std::make_unique<StreamSource>(std::cin);
  if (is_tcp(endpoint)) return std::make_unique<TcpSource>(open_tcp(endpoint));
  return std::make_unique<FileSource>(endpoint);
}

std::unique_ptr<LineSink> open_sink(const std::string& endpoint) {
  if (endpoint == "-" || endpoint == "stdout") return std::make_unique<StreamSink>(std::cout);
  if (is_tcp(endpoint)) return std::make_unique<TcpSink>(open_tcp(endpoint));
  return std::make_unique<FileSink>(endpoint);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path) {
  if (!out_) throw ConfigError("cannot open CSV file: " + path);
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

}  // namespace bleach::io
