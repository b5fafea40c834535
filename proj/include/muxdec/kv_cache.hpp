#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "muxdec/errors.hpp"

namespace muxdec {

/// Identifies one append span (a frame run, a query, a response, a probe).
/// Ids are monotone per cache and never reused, so decision logs and masks
/// stay unambiguous after eviction.
struct SegmentId {
  std::uint64_t value = 0;
  friend auto operator<=>(const SegmentId&, const SegmentId&) = default;
};

enum class SegmentKind { video, query, response, noise_probe };

inline const char* to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::video: return "video";
    case SegmentKind::query: return "query";
    case SegmentKind::response: return "response";
    case SegmentKind::noise_probe: return "noise_probe";
  }
  return "?";
}

/// Per-position key/value vectors, one d_model-wide vector per layer.
/// Heads are contiguous slices of the layer vector.
struct PositionKV {
  std::vector<std::vector<double>> k;  // [layer][d_model]
  std::vector<std::vector<double>> v;  // [layer][d_model]

  friend bool operator==(const PositionKV&, const PositionKV&) = default;
};

struct CacheEntry {
  std::uint64_t position = 0;
  SegmentId segment;
  SegmentKind kind = SegmentKind::video;
  PositionKV kv;

  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

class KVCache;

/// Full by-value capture of a cache. Restore replaces the cache content
/// entirely with the captured state.
struct CacheSnapshot {
  std::uint64_t cache_uid = 0;
  std::vector<CacheEntry> entries;
  std::uint64_t next_position = 0;
  std::uint64_t next_segment = 0;
  std::map<std::uint64_t, SegmentKind> segment_kinds;
};

/// Ordered, segment-tagged key/value store. Positions are strictly increasing
/// in list order and never reused; eviction is whole-segment and preserves the
/// relative order of survivors.
class KVCache {
 public:
  KVCache(std::size_t n_layers, std::size_t width)
      : n_layers_(n_layers), width_(width), uid_(next_uid()) {}

  KVCache(const KVCache& other)
      : entries_(other.entries_),
        next_position_(other.next_position_),
        next_segment_(other.next_segment_),
        segment_kinds_(other.segment_kinds_),
        n_layers_(other.n_layers_),
        width_(other.width_),
        uid_(next_uid()) {}

  KVCache& operator=(const KVCache& other) {
    if (this != &other) {
      entries_ = other.entries_;
      next_position_ = other.next_position_;
      next_segment_ = other.next_segment_;
      segment_kinds_ = other.segment_kinds_;
      n_layers_ = other.n_layers_;
      width_ = other.width_;
      // uid_ stays: snapshots taken from this cache remain restorable.
    }
    return *this;
  }

  KVCache(KVCache&&) = default;
  KVCache& operator=(KVCache&&) = default;

  std::size_t n_layers() const { return n_layers_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t next_position() const { return next_position_; }
  const std::vector<CacheEntry>& entries() const { return entries_; }

  SegmentId fresh_segment() { return SegmentId{next_segment_++}; }

  /// Append n new positions for one segment. Returns the assigned positions,
  /// next_position .. next_position + n - 1.
  std::vector<std::uint64_t> append(SegmentId segment, SegmentKind kind,
                                    std::span<const PositionKV> kv) {
    for (const PositionKV& p : kv) check_widths(p);
    auto it = segment_kinds_.find(segment.value);
    if (it != segment_kinds_.end()) {
      if (it->second != kind)
        throw ContractError("append: segment " + std::to_string(segment.value) +
                            " already tagged " + to_string(it->second) +
                            ", refusing kind " + to_string(kind));
    } else {
      segment_kinds_.emplace(segment.value, kind);
    }
    if (segment.value >= next_segment_) next_segment_ = segment.value + 1;
    std::vector<std::uint64_t> positions;
    positions.reserve(kv.size());
    for (const PositionKV& p : kv) {
      entries_.push_back(CacheEntry{next_position_, segment, kind, p});
      positions.push_back(next_position_);
      ++next_position_;
    }
    return positions;
  }

  /// Remove every entry of the segment. Idempotent; returns the number of
  /// entries removed. next_position is not rewound.
  std::size_t evict_segment(SegmentId segment) {
    const std::size_t before = entries_.size();
    std::erase_if(entries_, [&](const CacheEntry& e) { return e.segment == segment; });
    return before - entries_.size();
  }

  CacheSnapshot snapshot() const {
    return CacheSnapshot{uid_, entries_, next_position_, next_segment_, segment_kinds_};
  }

  void restore(const CacheSnapshot& snap) {
    if (snap.cache_uid != uid_)
      throw ContractError("restore: snapshot belongs to a different cache");
    entries_ = snap.entries;
    next_position_ = snap.next_position;
    next_segment_ = snap.next_segment;
    segment_kinds_ = snap.segment_kinds;
  }

  std::vector<std::uint64_t> visible_positions() const {
    return positions_if([](const CacheEntry&) { return true; });
  }

  std::vector<std::uint64_t> visible_positions(SegmentKind kind) const {
    return positions_if([&](const CacheEntry& e) { return e.kind == kind; });
  }

  std::vector<std::uint64_t> visible_positions(SegmentId segment) const {
    return positions_if([&](const CacheEntry& e) { return e.segment == segment; });
  }

  template <typename Pred>
  std::vector<std::uint64_t> positions_if(Pred&& pred) const {
    std::vector<std::uint64_t> out;
    for (const CacheEntry& e : entries_)
      if (pred(e)) out.push_back(e.position);
    return out;
  }

  bool contains(std::uint64_t position) const { return find(position) != nullptr; }

  /// Entry lookup by position; positions ascend in list order, so this is a
  /// binary search. Returns nullptr for unknown (possibly evicted) positions.
  const CacheEntry* find(std::uint64_t position) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), position,
                               [](const CacheEntry& e, std::uint64_t p) { return e.position < p; });
    if (it == entries_.end() || it->position != position) return nullptr;
    return &*it;
  }

  friend bool operator==(const KVCache& a, const KVCache& b) {
    return a.entries_ == b.entries_ && a.next_position_ == b.next_position_;
  }

 private:
  void check_widths(const PositionKV& p) const {
    if (p.k.size() != n_layers_ || p.v.size() != n_layers_)
      throw ContractError("append: expected " + std::to_string(n_layers_) + " layers");
    for (std::size_t l = 0; l < n_layers_; ++l)
      if (p.k[l].size() != width_ || p.v[l].size() != width_)
        throw ContractError("append: expected key/value width " + std::to_string(width_));
  }

  static std::uint64_t next_uid() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::vector<CacheEntry> entries_;
  std::uint64_t next_position_ = 0;
  std::uint64_t next_segment_ = 0;
  std::map<std::uint64_t, SegmentKind> segment_kinds_;
  std::size_t n_layers_;
  std::size_t width_;
  std::uint64_t uid_;
};

}  // namespace muxdec
