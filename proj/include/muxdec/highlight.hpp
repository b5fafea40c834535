#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "muxdec/errors.hpp"
#include "muxdec/kv_cache.hpp"
#include "muxdec/mask.hpp"
#include "muxdec/model.hpp"

namespace muxdec {

enum class QueryRepr {
  last_three,  // mean over heads and the last min(3, len) query-token rows
  mean_all,    // mean over heads and all query-token rows
};

struct HighlightParams {
  double alpha = 2.0;       // Gaussian factor on the candidate threshold
  std::uint64_t gamma = 4;  // consistency threshold: fire when top count > gamma
  std::uint64_t warmup_steps = 2;
  QueryRepr repr = QueryRepr::last_three;

  void validate() const {
    if (gamma < 1) throw ConfigError("HighlightParams: gamma must be >= 1");
  }
};

struct HighlightAlert {
  std::uint64_t frame_position = 0;
  std::uint64_t frames_total = 0;  // lifetime frame count at fire time
};

/// Per-frame hit counting with a max-heap over (count, position). Counts only
/// grow between resets, so the heap uses lazy deletion: stale pairs are
/// popped at peek time.
struct HighlightState {
  std::map<std::uint64_t, std::uint64_t> counts;  // frame position -> hits
  std::uint64_t frames_seen = 0;                  // since last reset (warm-up gate)
  std::uint64_t frames_total = 0;                 // lifetime, never reset
  std::vector<HighlightAlert> fired;

  struct HeapLess {
    // Max count first; ties break toward the lower frame position.
    bool operator()(const std::pair<std::uint64_t, std::uint64_t>& a,
                    const std::pair<std::uint64_t, std::uint64_t>& b) const {
      if (a.first != b.first) return a.first < b.first;
      return a.second > b.second;
    }
  };
  std::priority_queue<std::pair<std::uint64_t, std::uint64_t>,
                      std::vector<std::pair<std::uint64_t, std::uint64_t>>, HeapLess>
      heap;

  void bump(std::uint64_t position) {
    const std::uint64_t c = ++counts[position];
    heap.emplace(c, position);
  }

  /// Heap top (count, position) after discarding stale entries.
  std::optional<std::pair<std::uint64_t, std::uint64_t>> peek() {
    while (!heap.empty()) {
      auto [count, pos] = heap.top();
      auto it = counts.find(pos);
      if (it != counts.end() && it->second == count) return std::make_pair(count, pos);
      heap.pop();
    }
    return std::nullopt;
  }

  void reset() {
    counts.clear();
    heap = {};
    frames_seen = 0;
  }
};

/// Attention scores of the standing query over the currently visible frames,
/// with their population mean and standard deviation.
struct FrameScores {
  std::vector<std::uint64_t> positions;
  std::vector<double> scores;
  double mu = 0.0;
  double sigma = 0.0;
};

inline FrameScores make_frame_scores(std::vector<std::uint64_t> positions,
                                     std::vector<double> scores) {
  if (positions.size() != scores.size())
    throw ContractError("make_frame_scores: positions/scores length mismatch");
  FrameScores fs;
  fs.positions = std::move(positions);
  fs.scores = std::move(scores);
  if (!fs.scores.empty()) {
    const bool all_equal =
        std::all_of(fs.scores.begin(), fs.scores.end(),
                    [&](double s) { return s == fs.scores.front(); });
    if (all_equal) {
      // Exact degenerate case, so delta = mu and the strict threshold can
      // never admit a candidate regardless of alpha.
      fs.mu = fs.scores.front();
      fs.sigma = 0.0;
      return fs;
    }
    double mu = 0.0;
    for (double s : fs.scores) mu += s;
    mu /= static_cast<double>(fs.scores.size());
    double var = 0.0;
    for (double s : fs.scores) var += (s - mu) * (s - mu);
    var /= static_cast<double>(fs.scores.size());
    fs.mu = mu;
    fs.sigma = std::sqrt(var);
  }
  return fs;
}

/// Collapse the query tokens' final-layer attention into one row over the
/// given frame positions: mean over heads and over the selected token rows
/// (last three by default). The result is a sub-slice of an attention
/// distribution, not renormalized.
inline std::vector<double> query_representation(std::span<const AttnRow> query_rows,
                                                std::span<const std::uint64_t> frame_positions,
                                                QueryRepr repr = QueryRepr::last_three) {
  if (query_rows.empty()) throw ContractError("query_representation: no query rows");
  if (frame_positions.empty())
    throw ContractError("query_representation: no frame positions visible");
  const std::size_t n_rows =
      repr == QueryRepr::mean_all ? query_rows.size()
                                  : std::min<std::size_t>(3, query_rows.size());
  const std::size_t first = query_rows.size() - n_rows;
  std::vector<double> acc(frame_positions.size(), 0.0);
  std::size_t terms = 0;
  for (std::size_t r = first; r < query_rows.size(); ++r) {
    const AttnRow& row = query_rows[r];
    // Index of each frame position inside this row's visible list.
    std::vector<std::size_t> idx(frame_positions.size());
    for (std::size_t f = 0; f < frame_positions.size(); ++f) {
      auto it = std::lower_bound(row.visible.begin(), row.visible.end(), frame_positions[f]);
      if (it == row.visible.end() || *it != frame_positions[f])
        throw ContractError("query_representation: frame position " +
                            std::to_string(frame_positions[f]) + " not visible to query row");
      idx[f] = static_cast<std::size_t>(it - row.visible.begin());
    }
    for (const auto& head : row.head_weights) {
      for (std::size_t f = 0; f < frame_positions.size(); ++f) acc[f] += head[idx[f]];
      ++terms;
    }
  }
  for (double& v : acc) v /= static_cast<double>(terms);
  return acc;
}

/// Frame positions whose score strictly exceeds mu + alpha * sigma.
inline std::vector<std::uint64_t> gaussian_candidates(const FrameScores& scores, double alpha) {
  const double delta = scores.mu + alpha * scores.sigma;
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < scores.scores.size(); ++i)
    if (scores.scores[i] > delta) out.push_back(scores.positions[i]);
  return out;
}

/// Count this frame's candidates and fire when the heap top strictly exceeds
/// gamma. Firing resets counts, heap, and the warm-up gate.
inline std::optional<HighlightAlert> ingest_frame_scores(HighlightState& state,
                                                         std::span<const std::uint64_t> candidates,
                                                         const HighlightParams& params) {
  ++state.frames_seen;
  ++state.frames_total;
  for (std::uint64_t c : candidates) state.bump(c);
  if (auto top = state.peek(); top && top->first > params.gamma) {
    HighlightAlert alert{top->second, state.frames_total};
    state.fired.push_back(alert);
    state.reset();
    return alert;
  }
  return std::nullopt;
}

/// Full per-frame pass of the trigger: during warm-up only advance the
/// counter; otherwise probe the standing query against the cached frames via
/// a scratch segment (evicted before return, so the cache is unchanged),
/// threshold the scores, and count hits.
inline std::optional<HighlightAlert> process_frame(const Model& model, KVCache& cache,
                                                   std::span<const int> query_tokens,
                                                   HighlightState& state,
                                                   const HighlightParams& params) {
  params.validate();
  if (state.frames_seen < params.warmup_steps) {
    ++state.frames_seen;
    ++state.frames_total;
    return std::nullopt;
  }
  const std::vector<std::uint64_t> frame_positions = cache.visible_positions(SegmentKind::video);
  if (frame_positions.empty()) {
    ++state.frames_seen;
    ++state.frames_total;
    return std::nullopt;
  }

  const SegmentId scratch = cache.fresh_segment();
  std::vector<ForwardInput> inputs;
  MaskSpec mask;
  const std::uint64_t base = cache.next_position();
  for (std::size_t t = 0; t < query_tokens.size(); ++t) {
    inputs.push_back(ForwardInput{InputUnit::token(static_cast<std::size_t>(query_tokens[t])),
                                  scratch, SegmentKind::noise_probe});
    std::vector<std::uint64_t> row = frame_positions;
    for (std::size_t j = 0; j <= t; ++j) row.push_back(base + j);
    mask.rows.push_back(std::move(row));
  }
  StepOutput out = forward(model, cache, inputs, mask);
  cache.evict_segment(scratch);

  std::vector<double> scores = query_representation(out.attention, frame_positions, params.repr);
  FrameScores fs = make_frame_scores(frame_positions, std::move(scores));
  std::vector<std::uint64_t> cands = gaussian_candidates(fs, params.alpha);
  return ingest_frame_scores(state, cands, params);
}

}  // namespace muxdec
