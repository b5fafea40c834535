#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "muxdec/errors.hpp"
#include "muxdec/highlight.hpp"
#include "muxdec/interrupt.hpp"
#include "muxdec/kv_cache.hpp"
#include "muxdec/mask.hpp"
#include "muxdec/model.hpp"

namespace muxdec {

enum class StreamState { probing, active, suspended, finished, rejected };

inline const char* to_string(StreamState s) {
  switch (s) {
    case StreamState::probing: return "probing";
    case StreamState::active: return "active";
    case StreamState::suspended: return "suspended";
    case StreamState::finished: return "finished";
    case StreamState::rejected: return "rejected";
  }
  return "?";
}

/// One query/response stream multiplexed over the shared cache.
struct DecodeStream {
  std::uint64_t stream_id = 0;
  SegmentId query_segment;
  SegmentId response_segment;
  std::vector<int> query_tokens;
  std::vector<int> emitted_tokens;
  StreamState state = StreamState::probing;
  std::uint64_t arrival_step = 0;

  // Streams finished strictly before this stream's first probe; fixed for the
  // stream's lifetime and the only history its tokens may attend to.
  std::vector<std::uint64_t> visible_history;
  bool history_snapshotted = false;

  // Decode bookkeeping. An active stream always holds exactly one of these:
  // a token emitted but not yet fed to the cache, or the next-token logits
  // carried across a suspension.
  std::optional<int> unfed_token;
  std::optional<std::vector<double>> pending_logits;
};

struct StandingQuery {
  std::uint64_t id = 0;
  std::vector<int> tokens;
  HighlightState state;
};

struct SessionParams {
  HighlightParams highlight;
  InterruptParams interrupt;
  std::size_t max_response_tokens = 32;
};

struct Alert {
  std::uint64_t standing_query = 0;
  std::uint64_t frame_position = 0;
  std::uint64_t step = 0;
};

/// Descriptor of one planned forward input, carrying which stream (if any)
/// owns it so visibility rules can be applied and audited.
struct PlannedInput {
  enum class Owner { video, stream };
  ForwardInput input;
  Owner owner = Owner::video;
  std::uint64_t owner_stream = 0;  // meaningful when owner == stream
};

struct Emission {
  std::uint64_t stream_id = 0;
  int token = 0;
  std::vector<double> logits;
};

/// Last-token logits a probing stream was resolved on.
struct ProbeResult {
  std::uint64_t stream_id = 0;
  std::vector<double> logits;
};

struct StateChange {
  std::uint64_t stream_id = 0;
  StreamState from = StreamState::probing;
  StreamState to = StreamState::probing;
};

struct StepReport {
  std::uint64_t step = 0;
  std::vector<Emission> emissions;
  std::vector<ProbeResult> probes;
  std::vector<StateChange> transitions;
  std::vector<SegmentId> evictions;
  // The forward plan and mask actually used, for auditing visibility rules.
  std::vector<PlannedInput> plan;
  MaskSpec mask;
};

/// A streaming session: one growing video prefix, any number of standing
/// queries scored per frame, and multiplexed query/response streams decoded
/// one token per step with at most one stream active at a time. All
/// operations on a session are externally serialized; distinct sessions are
/// independent.
class Session {
 public:
  Session(std::shared_ptr<const Model> model, SessionParams params)
      : model_(std::move(model)),
        params_(std::move(params)),
        cache_(model_->config.n_layers, model_->config.d_model),
        video_segment_(cache_.fresh_segment()) {
    params_.highlight.validate();
    params_.interrupt.validate();
  }

  const Model& model() const { return *model_; }
  const SessionParams& params() const { return params_; }
  const KVCache& cache() const { return cache_; }
  KVCache& cache() { return cache_; }
  SegmentId video_segment() const { return video_segment_; }
  std::uint64_t step_counter() const { return step_counter_; }
  const std::vector<DecodeStream>& streams() const { return streams_; }
  const std::vector<StandingQuery>& standing_queries() const { return standing_queries_; }
  const std::vector<std::pair<std::vector<int>, std::vector<int>>>& history() const {
    return history_;
  }
  std::optional<std::uint64_t> active_stream_id() const { return active_id_; }

  bool has_live_streams() const {
    return std::any_of(streams_.begin(), streams_.end(), [](const DecodeStream& s) {
      return s.state == StreamState::probing || s.state == StreamState::active ||
             s.state == StreamState::suspended;
    });
  }

  /// Append one frame to the video prefix and score every standing query
  /// against the enlarged frame set. Returns any fired alerts.
  std::vector<Alert> ingest_frame(std::span<const double> features) {
    if (features.size() != model_->config.d_model)
      throw ContractError("ingest_frame: feature width " + std::to_string(features.size()) +
                          " != d_model " + std::to_string(model_->config.d_model));
    std::vector<PlannedInput> plan;
    plan.push_back(PlannedInput{
        ForwardInput{InputUnit::frame(std::vector<double>(features.begin(), features.end())),
                     video_segment_, SegmentKind::video},
        PlannedInput::Owner::video, 0});
    MaskSpec mask = build_mask(plan);
    std::vector<ForwardInput> inputs;
    inputs.push_back(plan[0].input);
    forward(*model_, cache_, inputs, mask);

    std::vector<Alert> alerts;
    for (StandingQuery& sq : standing_queries_) {
      auto fired = process_frame(*model_, cache_, sq.tokens, sq.state, params_.highlight);
      if (fired) alerts.push_back(Alert{sq.id, fired->frame_position, step_counter_});
    }
    return alerts;
  }

  /// Queue a query stream. Its tokens enter the cache in the next step's
  /// combined forward, where the stream is resolved as legitimate or noise.
  std::uint64_t submit_query(std::vector<int> tokens) {
    validate_tokens(tokens, "submit_query");
    DecodeStream s;
    s.stream_id = static_cast<std::uint64_t>(streams_.size());
    s.query_segment = cache_.fresh_segment();
    s.response_segment = cache_.fresh_segment();
    s.query_tokens = std::move(tokens);
    s.state = StreamState::probing;
    s.arrival_step = step_counter_;
    streams_.push_back(std::move(s));
    return streams_.back().stream_id;
  }

  /// Register a standing alert condition scored against every future frame.
  std::uint64_t register_standing_query(std::vector<int> tokens) {
    validate_tokens(tokens, "register_standing_query");
    StandingQuery sq;
    sq.id = static_cast<std::uint64_t>(standing_queries_.size());
    sq.tokens = std::move(tokens);
    standing_queries_.push_back(std::move(sq));
    return standing_queries_.back().id;
  }

  /// Visibility rules for one planned batch:
  ///   - a frame sees the video prefix (and itself);
  ///   - a stream token sees the video prefix, the history fixed at the
  ///     stream's first probe, and its own stream causally;
  ///   - no token ever sees another live stream's tokens.
  MaskSpec build_mask(std::span<const PlannedInput> plan) const {
    const std::uint64_t base = cache_.next_position();
    const std::vector<std::uint64_t> video = cache_.visible_positions(SegmentKind::video);
    MaskSpec mask;
    mask.rows.reserve(plan.size());
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const PlannedInput& p = plan[i];
      std::vector<std::uint64_t> row = video;
      if (p.owner == PlannedInput::Owner::stream) {
        const DecodeStream& s = streams_.at(p.owner_stream);
        for (std::uint64_t hid : s.visible_history) {
          const DecodeStream& h = streams_.at(hid);
          append_positions(row, h.query_segment);
          append_positions(row, h.response_segment);
        }
        append_positions(row, s.query_segment);
        append_positions(row, s.response_segment);
        for (std::size_t j = 0; j < i; ++j)
          if (plan[j].owner == PlannedInput::Owner::stream &&
              plan[j].owner_stream == p.owner_stream)
            row.push_back(base + j);
      }
      row.push_back(base + i);  // self
      std::sort(row.begin(), row.end());
      mask.rows.push_back(std::move(row));
    }
    return mask;
  }

  /// One multiplexed step: a single forward covers the active stream's
  /// next-token position and the last-token logits of every probing stream;
  /// probes are then resolved (noise evicted, legitimate queries take over
  /// the active slot, interrupting via stop detection), and the resulting
  /// active stream emits one greedy token.
  StepReport step() {
    StepReport rep;
    rep.step = step_counter_;

    DecodeStream* act = active_stream();
    std::vector<PlannedInput> plan;
    bool act_fed = false;
    if (act && !act->pending_logits && act->unfed_token) {
      plan.push_back(PlannedInput{
          ForwardInput{InputUnit::token(static_cast<std::size_t>(*act->unfed_token)),
                       act->response_segment, SegmentKind::response},
          PlannedInput::Owner::stream, act->stream_id});
      act_fed = true;
    }

    std::vector<std::uint64_t> probing;
    for (DecodeStream& s : streams_)
      if (s.state == StreamState::probing) probing.push_back(s.stream_id);
    for (std::uint64_t id : probing) {
      DecodeStream& s = streams_[id];
      if (!s.history_snapshotted) {
        s.visible_history = finished_ids_;
        s.history_snapshotted = true;
      }
      for (int tok : s.query_tokens)
        plan.push_back(PlannedInput{
            ForwardInput{InputUnit::token(static_cast<std::size_t>(tok)), s.query_segment,
                         SegmentKind::query},
            PlannedInput::Owner::stream, s.stream_id});
    }

    MaskSpec mask = build_mask(plan);
    StepOutput out;
    if (!plan.empty()) {
      std::vector<ForwardInput> inputs;
      inputs.reserve(plan.size());
      for (const PlannedInput& p : plan) inputs.push_back(p.input);
      out = forward(*model_, cache_, inputs, mask);
    }
    rep.plan = plan;
    rep.mask = mask;

    // Current next-token distribution of each stream touched this step.
    std::unordered_map<std::uint64_t, std::vector<double>> step_logits;
    std::size_t cursor = 0;
    if (act_fed) {
      act->unfed_token.reset();
      step_logits[act->stream_id] = out.logits[cursor];
      ++cursor;
    }
    for (std::uint64_t id : probing) {
      DecodeStream& s = streams_[id];
      cursor += s.query_tokens.size();
      step_logits[id] = out.logits[cursor - 1];
    }

    // Resolve probes in arrival order.
    for (std::uint64_t id : probing) {
      DecodeStream& s = streams_[id];
      rep.probes.push_back(ProbeResult{id, step_logits[id]});
      std::vector<double> probs = softmax(step_logits[id]);
      if (!start_detect(probs, params_.interrupt)) {
        transition(rep, s, StreamState::rejected);
        cache_.evict_segment(s.query_segment);
        rep.evictions.push_back(s.query_segment);
        step_logits.erase(id);
        continue;
      }
      if (DecodeStream* cur = active_stream()) {
        const std::vector<double>& cur_logits = current_logits(*cur, step_logits);
        if (stop_detect(softmax(cur_logits), params_.interrupt)) {
          finish_stream(rep, *cur, /*resume_lifo=*/false);
        } else {
          std::vector<double> keep = cur_logits;  // cur_logits may alias cur->pending_logits
          cur->pending_logits = std::move(keep);
          transition(rep, *cur, StreamState::suspended);
          suspended_stack_.push_back(cur->stream_id);
        }
      }
      transition(rep, s, StreamState::active);
      active_id_ = s.stream_id;
    }

    // Emission: the post-resolution active stream appends one greedy token.
    if (DecodeStream* cur = active_stream()) {
      const bool has_current = step_logits.contains(cur->stream_id) || cur->pending_logits;
      if (has_current) {
        std::vector<double> logits = current_logits(*cur, step_logits);
        if (cur->emitted_tokens.size() >= params_.max_response_tokens) {
          finish_stream(rep, *cur, /*resume_lifo=*/true);
        } else {
          const int tok = static_cast<int>(greedy_next(logits));
          if (static_cast<std::size_t>(tok) == model_->config.eos_id) {
            finish_stream(rep, *cur, /*resume_lifo=*/true);
          } else {
            cur->emitted_tokens.push_back(tok);
            cur->unfed_token = tok;
            cur->pending_logits.reset();
            rep.emissions.push_back(Emission{cur->stream_id, tok, std::move(logits)});
          }
        }
      }
      // A stream resumed at the very end of this step emits from its pending
      // logits on the next step.
    }

    ++step_counter_;
    return rep;
  }

 private:
  DecodeStream* active_stream() {
    if (!active_id_) return nullptr;
    return &streams_[*active_id_];
  }

  void append_positions(std::vector<std::uint64_t>& row, SegmentId segment) const {
    for (const CacheEntry& e : cache_.entries())
      if (e.segment == segment) row.push_back(e.position);
  }

  void validate_tokens(const std::vector<int>& tokens, const char* what) const {
    if (tokens.empty()) throw InputError(std::string(what) + ": empty token list");
    for (int t : tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= model_->config.vocab_size)
        throw InputError(std::string(what) + ": token " + std::to_string(t) +
                         " out of vocabulary");
  }

  static const std::vector<double>& current_logits(
      const DecodeStream& s,
      const std::unordered_map<std::uint64_t, std::vector<double>>& step_logits) {
    auto it = step_logits.find(s.stream_id);
    if (it != step_logits.end()) return it->second;
    return *s.pending_logits;
  }

  void transition(StepReport& rep, DecodeStream& s, StreamState to) {
    rep.transitions.push_back(StateChange{s.stream_id, s.state, to});
    if (s.state == StreamState::active && to != StreamState::active && active_id_ == s.stream_id)
      active_id_.reset();
    s.state = to;
    if (to == StreamState::active) active_id_ = s.stream_id;
  }

  void finish_stream(StepReport& rep, DecodeStream& s, bool resume_lifo) {
    transition(rep, s, StreamState::finished);
    s.pending_logits.reset();
    s.unfed_token.reset();
    history_.emplace_back(s.query_tokens, s.emitted_tokens);
    finished_ids_.push_back(s.stream_id);
    if (resume_lifo && !suspended_stack_.empty()) {
      const std::uint64_t next = suspended_stack_.back();
      suspended_stack_.pop_back();
      transition(rep, streams_[next], StreamState::active);
    }
  }

  std::shared_ptr<const Model> model_;
  SessionParams params_;
  KVCache cache_;
  SegmentId video_segment_;
  std::vector<DecodeStream> streams_;
  std::vector<StandingQuery> standing_queries_;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> history_;
  std::vector<std::uint64_t> finished_ids_;
  std::vector<std::uint64_t> suspended_stack_;
  std::optional<std::uint64_t> active_id_;
  std::uint64_t step_counter_ = 0;
};

inline Session open_session(std::shared_ptr<const Model> model, SessionParams params) {
  return Session(std::move(model), std::move(params));
}

}  // namespace muxdec
