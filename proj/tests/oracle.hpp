// Test-only oracles: independent re-implementations of the behaviors the
// engine is checked against. None of them use MaskSpec visibility rules, the
// shared session cache, eviction, or the heap; each stream here decodes on its
// own private cache with everything visible, and hit counting is a plain map
// with a full scan.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "muxdec/interrupt.hpp"
#include "muxdec/kv_cache.hpp"
#include "muxdec/model.hpp"
#include "muxdec/session.hpp"
#include "muxdec/sim.hpp"
#include "muxdec/trace.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Highlight recount: plain map counting, full-scan max, same fire/reset rule.
// ---------------------------------------------------------------------------

struct Recount {
  std::map<std::uint64_t, std::uint64_t> counts;

  std::optional<std::uint64_t> ingest(std::span<const std::uint64_t> candidates,
                                      std::uint64_t gamma) {
    for (std::uint64_t c : candidates) ++counts[c];
    std::optional<std::pair<std::uint64_t, std::uint64_t>> best;  // (count, pos)
    for (const auto& [pos, count] : counts) {
      if (!best || count > best->first || (count == best->first && pos < best->second))
        best = {count, pos};
    }
    if (best && best->first > gamma) {
      const std::uint64_t pos = best->second;
      counts.clear();
      return pos;
    }
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Interruption inequality, written out directly.
// ---------------------------------------------------------------------------

inline bool detect_oracle(std::span<const double> probs, double beta, std::size_t token) {
  double s = 0.0;
  for (double p : probs)
    if (p > 0.0) s -= p * std::log(p);
  return probs[token] > beta * std::exp(-s);
}

// ---------------------------------------------------------------------------
// Mask rule oracle: recompute every visible set of a step report from the
// stated rules and compare with the mask the engine actually used.
// ---------------------------------------------------------------------------

inline void require_mask_matches_rules(const muxdec::Session& session,
                                       const muxdec::StepReport& rep) {
  if (rep.plan.empty()) return;
  // The first planned input only sees past positions plus itself, so its row
  // maximum is the base position of this step's appends.
  const std::uint64_t base = *std::max_element(rep.mask.rows[0].begin(), rep.mask.rows[0].end());
  auto past_positions = [&](muxdec::SegmentId seg) {
    std::vector<std::uint64_t> out;
    for (const muxdec::CacheEntry& e : session.cache().entries())
      if (e.segment == seg && e.position < base) out.push_back(e.position);
    return out;
  };
  const std::vector<std::uint64_t> video = past_positions(session.video_segment());

  for (std::size_t i = 0; i < rep.plan.size(); ++i) {
    const muxdec::PlannedInput& p = rep.plan[i];
    std::set<std::uint64_t> expected(video.begin(), video.end());
    if (p.owner == muxdec::PlannedInput::Owner::stream) {
      const muxdec::DecodeStream& s = session.streams().at(p.owner_stream);
      for (std::uint64_t hid : s.visible_history) {
        const muxdec::DecodeStream& h = session.streams().at(hid);
        for (std::uint64_t pos : past_positions(h.query_segment)) expected.insert(pos);
        for (std::uint64_t pos : past_positions(h.response_segment)) expected.insert(pos);
      }
      for (std::uint64_t pos : past_positions(s.query_segment)) expected.insert(pos);
      for (std::uint64_t pos : past_positions(s.response_segment)) expected.insert(pos);
      for (std::size_t j = 0; j < i; ++j)
        if (rep.plan[j].owner == muxdec::PlannedInput::Owner::stream &&
            rep.plan[j].owner_stream == p.owner_stream)
          expected.insert(base + j);
    }
    expected.insert(base + i);
    const std::vector<std::uint64_t> want(expected.begin(), expected.end());
    if (want != rep.mask.rows[i])
      throw std::runtime_error("mask row " + std::to_string(i) + " at step " +
                               std::to_string(rep.step) + " violates the visibility rules");
  }
}

// ---------------------------------------------------------------------------
// Sequential-decode schedule oracle. Replays a trace with the same scheduling
// semantics as the engine (probe on the step after submission, one active
// stream, stop detection at legitimate arrivals, LIFO resumption, greedy
// decoding with an eos/cap finish) but decodes every stream on its own
// isolated cache containing only what that stream is allowed to see, with
// full visibility inside it. Shares only the substrate forward and the
// detection formulas with the engine; no block masks, shared cache, or
// eviction are involved.
// ---------------------------------------------------------------------------

struct OracleStreamResult {
  muxdec::StreamState state = muxdec::StreamState::probing;
  std::vector<int> emitted;
  std::vector<std::vector<double>> emission_logits;
};

struct ScheduleOracleResult {
  std::map<std::string, OracleStreamResult> by_instance;
};

class ScheduleOracle {
 public:
  ScheduleOracle(const muxdec::Model& model, muxdec::SessionParams params)
      : model_(model),
        params_(std::move(params)),
        video_cache_(model.config.n_layers, model.config.d_model),
        video_segment_(video_cache_.fresh_segment()) {}

  ScheduleOracleResult replay(const std::vector<muxdec::TraceEvent>& events) {
    const std::int64_t last_step = events.empty() ? -1 : events.back().step;
    std::size_t ei = 0;
    for (std::int64_t step = 0; step <= last_step; ++step) {
      while (ei < events.size() && events[ei].step == step) {
        const muxdec::TraceEvent& e = events[ei];
        if (e.type == muxdec::TraceEvent::Type::frame) {
          dispatch_frame(e.frame_seed
                             ? muxdec::frame_features_from_seed(model_.config, *e.frame_seed)
                             : e.features);
        } else if (e.type == muxdec::TraceEvent::Type::query) {
          OStream s;
          s.id = streams_.size();
          s.instance = e.instance;
          s.query = e.tokens;
          streams_.push_back(std::move(s));
        }
        ++ei;
      }
      run_step();
    }
    while (live()) run_step();

    ScheduleOracleResult result;
    for (const OStream& s : streams_) {
      OracleStreamResult r;
      r.state = s.state;
      r.emitted = s.emitted;
      r.emission_logits = s.emission_logits;
      result.by_instance[s.instance] = std::move(r);
    }
    return result;
  }

 private:
  struct ChronoItem {
    muxdec::PositionKV kv;
    bool is_frame = false;
    std::size_t source_stream = 0;
  };

  struct OStream {
    std::size_t id = 0;
    std::string instance;
    std::vector<int> query;
    muxdec::StreamState state = muxdec::StreamState::probing;
    std::vector<int> emitted;
    std::vector<std::vector<double>> emission_logits;
    std::optional<muxdec::KVCache> cache;
    muxdec::SegmentId seg_video, seg_hist, seg_query, seg_resp;
    std::optional<int> unfed;
    std::optional<std::vector<double>> pending;
    bool probed = false;
  };

  bool live() const {
    return std::any_of(streams_.begin(), streams_.end(), [](const OStream& s) {
      return s.state == muxdec::StreamState::probing || s.state == muxdec::StreamState::active ||
             s.state == muxdec::StreamState::suspended;
    });
  }

  // Full visibility: every cache position plus the earlier inputs of this call.
  static muxdec::MaskSpec full_mask(const muxdec::KVCache& cache, std::size_t n_new) {
    muxdec::MaskSpec mask;
    const std::uint64_t base = cache.next_position();
    std::vector<std::uint64_t> row = cache.visible_positions();
    for (std::size_t i = 0; i < n_new; ++i) {
      row.push_back(base + i);
      mask.rows.push_back(row);
    }
    return mask;
  }

  muxdec::StepOutput fwd(muxdec::KVCache& cache, muxdec::SegmentId seg,
                         std::span<const muxdec::InputUnit> units, muxdec::SegmentKind kind) {
    std::vector<muxdec::ForwardInput> inputs;
    for (const muxdec::InputUnit& u : units) inputs.push_back({u, seg, kind});
    return muxdec::forward(model_, cache, inputs, full_mask(cache, inputs.size()));
  }

  void dispatch_frame(const std::vector<double>& features) {
    muxdec::InputUnit unit = muxdec::InputUnit::frame(features);
    fwd(video_cache_, video_segment_, std::span(&unit, 1), muxdec::SegmentKind::video);
    const muxdec::PositionKV& kv = video_cache_.entries().back().kv;
    chrono_.push_back(ChronoItem{kv, true, 0});
    for (OStream& s : streams_)
      if (s.cache && (s.state == muxdec::StreamState::active ||
                      s.state == muxdec::StreamState::suspended))
        s.cache->append(s.seg_video, muxdec::SegmentKind::video, std::span(&kv, 1));
  }

  const std::vector<double>& current_logits(const OStream& s) const {
    if (step_logits_.contains(s.id)) return step_logits_.at(s.id);
    return *s.pending;
  }

  void finish(OStream& s, bool pop_lifo) {
    s.state = muxdec::StreamState::finished;
    s.pending.reset();
    s.unfed.reset();
    finished_.push_back(s.id);
    active_.reset();
    if (pop_lifo && !lifo_.empty()) {
      const std::size_t next = lifo_.back();
      lifo_.pop_back();
      streams_[next].state = muxdec::StreamState::active;
      active_ = next;
    }
  }

  void run_step() {
    step_logits_.clear();
    const std::vector<std::size_t> finished_snapshot = finished_;

    // Feed the active stream's unfed token on its own cache.
    if (active_) {
      OStream& a = streams_[*active_];
      if (!a.pending && a.unfed) {
        muxdec::InputUnit unit = muxdec::InputUnit::token(static_cast<std::size_t>(*a.unfed));
        muxdec::StepOutput out =
            fwd(*a.cache, a.seg_resp, std::span(&unit, 1), muxdec::SegmentKind::response);
        chrono_.push_back(ChronoItem{a.cache->entries().back().kv, false, a.id});
        step_logits_[a.id] = out.logits[0];
        a.unfed.reset();
      }
    }

    // Probe every unprobed stream, oldest first, on a fresh private cache of
    // frames plus streams finished before this step.
    for (OStream& s : streams_) {
      if (s.state != muxdec::StreamState::probing || s.probed) continue;
      s.probed = true;
      s.cache.emplace(model_.config.n_layers, model_.config.d_model);
      s.seg_video = s.cache->fresh_segment();
      s.seg_hist = s.cache->fresh_segment();
      s.seg_query = s.cache->fresh_segment();
      s.seg_resp = s.cache->fresh_segment();
      for (const ChronoItem& item : chrono_) {
        const bool visible =
            item.is_frame || std::find(finished_snapshot.begin(), finished_snapshot.end(),
                                       item.source_stream) != finished_snapshot.end();
        if (visible)
          s.cache->append(item.is_frame ? s.seg_video : s.seg_hist,
                          item.is_frame ? muxdec::SegmentKind::video : muxdec::SegmentKind::query,
                          std::span(&item.kv, 1));
      }
      std::vector<muxdec::InputUnit> units;
      for (int tok : s.query)
        units.push_back(muxdec::InputUnit::token(static_cast<std::size_t>(tok)));
      muxdec::StepOutput out = fwd(*s.cache, s.seg_query, units, muxdec::SegmentKind::query);
      const std::vector<double>& probe_logits = out.logits.back();
      if (!muxdec::start_detect(muxdec::softmax(probe_logits), params_.interrupt)) {
        s.state = muxdec::StreamState::rejected;
        s.cache.reset();
        continue;
      }
      if (active_) {
        OStream& cur = streams_[*active_];
        if (muxdec::stop_detect(muxdec::softmax(current_logits(cur)), params_.interrupt)) {
          finish(cur, /*pop_lifo=*/false);
        } else {
          std::vector<double> keep = current_logits(cur);
          cur.pending = std::move(keep);
          cur.state = muxdec::StreamState::suspended;
          lifo_.push_back(cur.id);
          active_.reset();
        }
      }
      // The accepted query's tokens become durable context for later streams.
      const auto& entries = s.cache->entries();
      for (std::size_t k = entries.size() - s.query.size(); k < entries.size(); ++k)
        chrono_.push_back(ChronoItem{entries[k].kv, false, s.id});
      s.state = muxdec::StreamState::active;
      active_ = s.id;
      step_logits_[s.id] = probe_logits;
    }

    // The post-resolution active stream emits one token.
    if (active_) {
      OStream& cur = streams_[*active_];
      if (step_logits_.contains(cur.id) || cur.pending) {
        std::vector<double> logits = current_logits(cur);
        if (cur.emitted.size() >= params_.max_response_tokens) {
          finish(cur, /*pop_lifo=*/true);
        } else {
          const int tok = static_cast<int>(muxdec::greedy_next(logits));
          if (static_cast<std::size_t>(tok) == model_.config.eos_id) {
            finish(cur, /*pop_lifo=*/true);
          } else {
            cur.emitted.push_back(tok);
            cur.unfed = tok;
            cur.pending.reset();
            cur.emission_logits.push_back(std::move(logits));
          }
        }
      }
    }
  }

  const muxdec::Model& model_;
  muxdec::SessionParams params_;
  muxdec::KVCache video_cache_;
  muxdec::SegmentId video_segment_;
  std::vector<OStream> streams_;
  std::vector<ChronoItem> chrono_;
  std::vector<std::size_t> finished_;
  std::vector<std::size_t> lifo_;
  std::optional<std::size_t> active_;
  std::map<std::size_t, std::vector<double>> step_logits_;
};

// Engine-side view of the same outcome, keyed by instance.
inline ScheduleOracleResult engine_outcomes(const muxdec::RunResult& res) {
  ScheduleOracleResult out;
  std::map<std::uint64_t, OracleStreamResult> by_stream;
  for (const muxdec::StepReport& rep : res.reports) {
    for (const muxdec::Emission& em : rep.emissions) {
      by_stream[em.stream_id].emitted.push_back(em.token);
      by_stream[em.stream_id].emission_logits.push_back(em.logits);
    }
    for (const muxdec::StateChange& t : rep.transitions)
      by_stream[t.stream_id].state = t.to;
  }
  for (const auto& [stream_id, instance] : res.instance_by_stream)
    out.by_instance[instance] = by_stream[stream_id];
  return out;
}

}  // namespace oracle
