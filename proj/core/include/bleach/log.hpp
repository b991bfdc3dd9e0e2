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

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace bleach::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

/// Log level from BLEACH_LOG (debug|info|warn|error); default warn.
inline Level threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("BLEACH_LOG");
    if (!env) return Level::Warn;
    std::string s(env);
    if (s == "debug") return Level::Debug;
    if (s == "info") return Level::Info;
    if (s == "error") return Level::Error;
    return Level::Warn;
  }();
  return lvl;
}

inline void write(Level lvl, const std::string& msg) {
  if (lvl < threshold()) return;
  static std::mutex mu;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[bleach " << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

inline void debug(const std::string& msg) { write(Level::Debug, msg); }
inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void warn(const std::string& msg) { write(Level::Warn, msg); }
inline void error(const std::string& msg) { write(Level::Error, msg); }

}  // namespace bleach::log
