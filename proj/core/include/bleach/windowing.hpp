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

#include <cstdint>
#include <deque>
#include <optional>
#include <unordered_map>
#include <vector>

#include "bleach/model.hpp"

namespace bleach::windowing {

enum class Strategy { Basic, Cumulative };

/// Tuple-count sliding window. size == 0 disables windowing entirely.
struct WindowConfig {
  std::uint64_t size = 0;   // W, in tuples; 0 = unbounded
  std::uint64_t slide = 0;  // S, in tuples
  Strategy strategy = Strategy::Cumulative;

  bool enabled() const { return size != 0; }
  std::uint64_t k() const { return enabled() ? size / slide : 0; }

  void validate() const {
    if (!enabled()) return;
    if (slide == 0) throw ConfigError("window slide must be >= 1");
    if (slide > size) throw ConfigError("window slide must not exceed window size");
    if (size % slide != 0) throw ConfigError("window size must be an integer multiple of the slide");
  }
};

/// FIFO queue of k buckets holding state-entry keys. A touched entry moves
/// to the newest bucket; when the window slides the oldest bucket is dropped
/// and its still-resident entries are reported for eviction. Promotion is
/// lazy: stale references left in old buckets are skipped at drop time, so a
/// slide costs O(|dropped bucket|) rather than a scan of all entries.
template <typename Key, typename Hash = std::hash<Key>>
class KListQueue {
 public:
  explicit KListQueue(std::uint64_t k) : k_(k == 0 ? 1 : k) {
    buckets_.emplace_back();
    epochs_.push_back(0);
  }

  void touch(const Key& key) {
    auto [it, inserted] = epoch_of_.try_emplace(key, current_epoch_);
    if (!inserted) {
      if (it->second == current_epoch_) return;  // already in the newest bucket
      it->second = current_epoch_;
    }
    buckets_.back().push_back(key);
  }

  void erase(const Key& key) { epoch_of_.erase(key); }
  bool contains(const Key& key) const { return epoch_of_.count(key) != 0; }
  std::size_t size() const { return epoch_of_.size(); }

  struct SlideResult {
    std::vector<Key> evicted;      // unreferenced for k slide periods
    std::vector<Key> aging;        // entries now in the oldest bucket: trim them
  };

  /// Advances the queue by one slide period.
  SlideResult slide() {
    SlideResult res;
    if (buckets_.size() == k_) {
      for (const auto& key : buckets_.front()) {
        auto it = epoch_of_.find(key);
        if (it != epoch_of_.end() && it->second == epochs_.front()) {
          epoch_of_.erase(it);
          res.evicted.push_back(key);
        }
      }
      buckets_.pop_front();
      epochs_.pop_front();
    }
    buckets_.emplace_back();
    epochs_.push_back(++current_epoch_);
    if (!buckets_.empty() && buckets_.size() == k_) {
      // Entries whose newest touch was in the now-oldest bucket.
      for (const auto& key : buckets_.front()) {
        auto it = epoch_of_.find(key);
        if (it != epoch_of_.end() && it->second == epochs_.front()) res.aging.push_back(key);
      }
    }
    return res;
  }

 private:
  std::uint64_t k_;
  std::deque<std::vector<Key>> buckets_;
  std::deque<std::uint64_t> epochs_;  // epoch id per bucket
  std::uint64_t current_epoch_ = 0;
  std::unordered_map<Key, std::uint64_t, Hash> epoch_of_;
};

/// Tracks arrival counts and turns them into slide events. A slide fires
/// when the first tuple of a new slide block arrives and the window is full;
/// the lower bound is the id of the first tuple still inside the window.
class WindowClock {
 public:
  explicit WindowClock(WindowConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  struct Slide {
    TupleId lower_bound;  // smallest tuple id inside the new window
  };

  /// Call before processing each arriving tuple, in stream order.
  std::optional<Slide> on_arrival(TupleId id) {
    if (!cfg_.enabled()) return std::nullopt;
    std::optional<Slide> out;
    if (count_ % cfg_.slide == 0) {
      block_starts_.push_back(id);
      if (block_starts_.size() == cfg_.k() + 1) {
        block_starts_.pop_front();
        out = Slide{block_starts_.front()};
      }
    }
    ++count_;
    return out;
  }

  std::uint64_t arrivals() const { return count_; }

 private:
  WindowConfig cfg_;
  std::uint64_t count_ = 0;
  std::deque<TupleId> block_starts_;
};

}  // namespace bleach::windowing
