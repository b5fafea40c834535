#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "muxdec/errors.hpp"
#include "muxdec/interrupt.hpp"
#include "muxdec/metrics.hpp"
#include "muxdec/model.hpp"
#include "muxdec/rng.hpp"
#include "muxdec/session.hpp"
#include "muxdec/trace.hpp"

namespace muxdec {

struct RunConfig {
  ModelConfig model;
  double alpha = 2.0;
  double beta = 0.2;
  std::uint64_t gamma = 4;
  std::uint64_t warmup = 2;
  std::size_t max_response_tokens = 32;
  QueryRepr repr = QueryRepr::last_three;

  SessionParams session_params() const {
    SessionParams p;
    p.highlight.alpha = alpha;
    p.highlight.gamma = gamma;
    p.highlight.warmup_steps = warmup;
    p.highlight.repr = repr;
    p.interrupt.beta = beta;
    p.interrupt.bos_id = model.bos_id;
    p.interrupt.eos_id = model.eos_id;
    p.max_response_tokens = max_response_tokens;
    return p;
  }
};

struct RunResult {
  std::vector<DecisionLogEntry> log;
  std::map<std::string, double> metrics;
  std::vector<StepReport> reports;
  std::map<std::uint64_t, std::string> instance_by_stream;
  std::uint64_t frames = 0;
  std::uint64_t queries = 0;
  std::uint64_t alerts = 0;
  std::uint64_t steps = 0;
};

namespace detail {

inline nlohmann::ordered_json log_entry_to_json(const DecisionLogEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["kind"] = to_string(e.kind);
  if (e.standing_query) j["standing_query"] = *e.standing_query;
  if (e.frame_position) j["frame_position"] = *e.frame_position;
  if (e.instance) j["instance"] = *e.instance;
  if (e.stream) j["stream"] = *e.stream;
  if (e.kind == DecisionKind::respond) j["tokens"] = e.tokens;
  return j;
}

}  // namespace detail

inline std::string serialize_decision_log(const RunResult& r) {
  std::ostringstream out;
  for (const DecisionLogEntry& e : r.log) out << detail::log_entry_to_json(e).dump() << '\n';
  nlohmann::ordered_json summary;
  summary["kind"] = "summary";
  summary["steps"] = r.steps;
  summary["frames"] = r.frames;
  summary["queries"] = r.queries;
  summary["alerts"] = r.alerts;
  out << summary.dump() << '\n';
  return out.str();
}

inline std::string serialize_metrics(const RunResult& r) {
  nlohmann::json j(r.metrics);  // std::map keys -> stable alphabetical order
  return j.dump(2) + "\n";
}

/// Drive one session over a validated trace: dispatch all events of each step,
/// run one scheduler step per trace step, then keep stepping until every
/// stream is terminal. Fully deterministic in (events, config).
inline RunResult run(const std::vector<TraceEvent>& events, const RunConfig& cfg) {
  validate_trace(events);
  cfg.model.validate();
  auto model = std::make_shared<const Model>(build_model(cfg.model));
  Session session(model, cfg.session_params());
  RunResult res;

  std::map<std::uint64_t, std::uint64_t> standing_trace_by_session;
  std::map<std::uint64_t, std::uint64_t> standing_session_by_trace;
  std::map<std::string, QueryLabel> label_by_instance;
  std::map<std::uint64_t, GoldWindow> gold_by_standing;  // keyed by trace id

  auto log_step_report = [&](const StepReport& rep) {
    for (const StateChange& t : rep.transitions) {
      if (t.to == StreamState::rejected) {
        DecisionLogEntry e;
        e.step = static_cast<std::int64_t>(rep.step);
        e.kind = DecisionKind::reject;
        e.stream = t.stream_id;
        e.instance = res.instance_by_stream.at(t.stream_id);
        res.log.push_back(std::move(e));
      } else if (t.to == StreamState::finished) {
        const DecodeStream& s = session.streams()[t.stream_id];
        DecisionLogEntry e;
        e.step = static_cast<std::int64_t>(rep.step);
        e.kind = s.emitted_tokens.empty() ? DecisionKind::silent : DecisionKind::respond;
        e.stream = t.stream_id;
        e.instance = res.instance_by_stream.at(t.stream_id);
        e.tokens = s.emitted_tokens;
        res.log.push_back(std::move(e));
      }
    }
    res.reports.push_back(rep);
  };

  const std::int64_t last_step = events.empty() ? -1 : events.back().step;
  std::size_t ei = 0;
  for (std::int64_t step = 0; step <= last_step; ++step) {
    while (ei < events.size() && events[ei].step == step) {
      const TraceEvent& e = events[ei];
      switch (e.type) {
        case TraceEvent::Type::frame: {
          std::vector<double> features =
              e.frame_seed ? frame_features_from_seed(cfg.model, *e.frame_seed) : e.features;
          std::vector<Alert> alerts = session.ingest_frame(features);
          ++res.frames;
          for (const Alert& a : alerts) {
            ++res.alerts;
            DecisionLogEntry le;
            le.step = static_cast<std::int64_t>(a.step);
            le.kind = DecisionKind::alert;
            le.standing_query = standing_trace_by_session.at(a.standing_query);
            le.frame_position = a.frame_position;
            res.log.push_back(std::move(le));
          }
          break;
        }
        case TraceEvent::Type::query: {
          const std::uint64_t id = session.submit_query(e.tokens);
          res.instance_by_stream[id] = e.instance;
          label_by_instance[e.instance] = e.label;
          ++res.queries;
          break;
        }
        case TraceEvent::Type::standing_query: {
          const std::uint64_t sid = session.register_standing_query(e.tokens);
          standing_trace_by_session[sid] = e.standing_query_id;
          standing_session_by_trace[e.standing_query_id] = sid;
          break;
        }
        case TraceEvent::Type::gold_alert:
          gold_by_standing[e.standing_query_id] = e.window;
          break;
      }
      ++ei;
    }
    log_step_report(session.step());
  }
  std::uint64_t guard = 0;
  while (session.has_live_streams()) {
    log_step_report(session.step());
    if (++guard > 1000000)
      throw std::runtime_error("run: drain did not terminate");
  }
  res.steps = session.step_counter();

  // Proactive-alerting metrics, macro-averaged over gold instances.
  std::vector<PaInstance> pa_instances;
  double precision_sum = 0.0, iou_sum = 0.0;
  for (const auto& [trace_id, gold] : gold_by_standing) {
    PaInstance inst;
    inst.gold = gold;
    for (const DecisionLogEntry& e : res.log)
      if (e.kind == DecisionKind::alert && e.standing_query && *e.standing_query == trace_id)
        inst.alert_steps.push_back(e.step);
    precision_sum += alert_precision(inst.alert_steps, gold);
    iou_sum += alert_iou(inst.alert_steps, gold);
    pa_instances.push_back(std::move(inst));
  }
  const double n_pa = static_cast<double>(pa_instances.size());
  res.metrics["pa_accuracy"] = pa_accuracy(pa_instances);
  res.metrics["alert_precision"] = pa_instances.empty() ? 0.0 : precision_sum / n_pa;
  res.metrics["alert_iou"] = pa_instances.empty() ? 0.0 : iou_sum / n_pa;
  res.metrics["pa_instances"] = n_pa;

  // Turn-taking metrics from terminal outcomes.
  std::vector<PtOutcome> outcomes;
  for (const auto& [instance, label] : label_by_instance) {
    PtOutcome o;
    o.is_noise = label == QueryLabel::noise;
    bool matched = false;
    for (const DecisionLogEntry& e : res.log) {
      if (!e.instance || *e.instance != instance) continue;
      if (e.kind == DecisionKind::reject) {
        o.rejected = true;
        matched = true;
      } else if (e.kind == DecisionKind::respond) {
        o.responded = true;
        matched = true;
      } else if (e.kind == DecisionKind::silent) {
        matched = true;
      }
    }
    if (!matched)
      throw ContractError("run: query instance '" + instance + "' has no terminal outcome");
    outcomes.push_back(o);
  }
  const PtResult pt = pt_accuracy(outcomes);
  res.metrics["pt_accuracy"] = pt.pt_accuracy;
  res.metrics["legit_responded_rate"] = pt.legit_responded_rate;
  res.metrics["noise_instances"] = static_cast<double>(pt.noise_instances);
  res.metrics["legit_instances"] = static_cast<double>(pt.legit_instances);

  res.metrics["num_steps"] = static_cast<double>(res.steps);
  res.metrics["num_frames"] = static_cast<double>(res.frames);
  res.metrics["num_queries"] = static_cast<double>(res.queries);
  res.metrics["num_alerts"] = static_cast<double>(res.alerts);
  return res;
}

enum class GenKind { pa, pt, multiplex };

inline GenKind gen_kind_from_string(const std::string& s) {
  if (s == "pa") return GenKind::pa;
  if (s == "pt") return GenKind::pt;
  if (s == "multiplex") return GenKind::multiplex;
  throw InputError("unknown trace kind '" + s + "' (expected pa, pt, or multiplex)");
}

namespace detail {

inline std::vector<int> random_tokens(CounterRng& rng, std::size_t len, std::size_t vocab) {
  // Keep clear of the reserved ids 0 (pad), 1 (bos), 2 (eos).
  std::vector<int> t(len);
  for (std::size_t i = 0; i < len; ++i)
    t[i] = static_cast<int>(3 + rng.next_below(vocab - 3));
  return t;
}

/// Mirror of run()'s per-step dispatch used while a trace is being grown, so
/// engineered candidates are verified against the exact state the final trace
/// will produce.
class GenDriver {
 public:
  GenDriver(const RunConfig& cfg)
      : cfg_(cfg),
        model_(std::make_shared<const Model>(build_model(cfg.model))),
        session_(model_, cfg.session_params()) {}

  void frame(std::vector<TraceEvent>& events, std::int64_t step, std::uint64_t seed) {
    TraceEvent e;
    e.step = step;
    e.type = TraceEvent::Type::frame;
    e.frame_seed = seed;
    events.push_back(e);
    session_.ingest_frame(frame_features_from_seed(cfg_.model, seed));
  }

  void query(std::vector<TraceEvent>& events, std::int64_t step, const std::string& instance,
             QueryLabel label, std::vector<int> tokens) {
    TraceEvent e;
    e.step = step;
    e.type = TraceEvent::Type::query;
    e.instance = instance;
    e.label = label;
    e.tokens = tokens;
    events.push_back(e);
    session_.submit_query(std::move(tokens));
  }

  void step() { session_.step(); }

  /// Signed detection margin p(bos) - tau the engine would compute for this
  /// candidate right now: positive accepts, negative rejects.
  double probe_margin(const std::vector<int>& tokens) const {
    Session trial = session_;
    const std::uint64_t id = trial.submit_query(tokens);
    StepReport rep = trial.step();
    for (const ProbeResult& p : rep.probes) {
      if (p.stream_id != id) continue;
      std::vector<double> probs = softmax(p.logits);
      return probs[trial.params().interrupt.bos_id] -
             interrupt_threshold(probs, trial.params().interrupt.beta);
    }
    throw std::logic_error("probe_margin: trial step resolved no probe");
  }

  /// Search for a candidate with the wanted probe outcome in the current
  /// state: sweep every single-token candidate, then explore random prefixes
  /// ahead of the most promising last token. Empty result means the context
  /// cannot produce the outcome (the caller may retry at a later step).
  std::vector<int> find_candidate(CounterRng& rng, bool want_reject, std::size_t vocab) {
    const double sign = want_reject ? 1.0 : -1.0;  // minimize signed*margin
    std::vector<int> best;
    double best_margin = 1e300;
    for (std::size_t tok = 3; tok < vocab; ++tok) {
      std::vector<int> cand{static_cast<int>(tok)};
      const double m = sign * probe_margin(cand);
      if (m < 0.0) return cand;
      if (m < best_margin) {
        best_margin = m;
        best = cand;
      }
    }
    for (int attempt = 0; attempt < 240; ++attempt) {
      std::vector<int> cand = random_tokens(rng, 1 + rng.next_below(4), vocab);
      cand.push_back(best.back());  // keep the most promising last token
      if (sign * probe_margin(cand) < 0.0) return cand;
    }
    return {};
  }

  double best_single_token_margin(bool want_reject, std::size_t vocab) const {
    const double sign = want_reject ? 1.0 : -1.0;
    double best = 1e300;
    for (std::size_t tok = 3; tok < vocab; ++tok)
      best = std::min(best, sign * probe_margin({static_cast<int>(tok)}));
    return best;
  }

  /// When a step's context cannot produce the wanted outcome, choose the next
  /// frame to steer the context toward separability: among k candidate frame
  /// seeds, take the one whose successor state has the most favorable probe
  /// margin.
  std::uint64_t pick_steering_frame(CounterRng& rng, bool want_reject, std::size_t vocab,
                                    int k = 8) {
    double best_margin = 1e300;
    std::uint64_t best_seed = 0;
    for (int i = 0; i < k; ++i) {
      const std::uint64_t seed = rng.next_bits();
      Session saved = session_;
      session_.ingest_frame(frame_features_from_seed(cfg_.model, seed));
      session_.step();
      const double m = best_single_token_margin(want_reject, vocab);
      session_ = std::move(saved);
      if (m < best_margin) {
        best_margin = m;
        best_seed = seed;
      }
    }
    return best_seed;
  }

 private:
  RunConfig cfg_;
  std::shared_ptr<const Model> model_;
  Session session_;
};

inline std::vector<TraceEvent> gen_pa(const RunConfig& cfg, std::uint64_t seed, std::size_t size) {
  const std::size_t n_frames = std::max<std::size_t>(size, 12);
  CounterRng rng = CounterRng(seed).derive(0x7061ull);  // "pa"
  const std::vector<int> standing = random_tokens(rng, 3, cfg.model.vocab_size);
  // Frames 1..3 land at cache positions 0..2 (the warm-up suppresses probes
  // until frame 3), so the engineered frame at step 3 always has position 2.
  const std::size_t salient_step = 3;
  const std::uint64_t salient_position = 2;

  auto build = [&](const std::vector<std::uint64_t>& background, std::uint64_t salient_seed) {
    std::vector<TraceEvent> events;
    TraceEvent sq;
    sq.step = 0;
    sq.type = TraceEvent::Type::standing_query;
    sq.standing_query_id = 0;
    sq.tokens = standing;
    events.push_back(sq);
    for (std::size_t i = 0; i < n_frames; ++i) {
      TraceEvent f;
      f.step = static_cast<std::int64_t>(i + 1);
      f.type = TraceEvent::Type::frame;
      f.frame_seed = (i + 1 == salient_step) ? salient_seed : background[i];
      events.push_back(f);
    }
    return events;
  };
  auto alert_steps_of = [&](const std::vector<TraceEvent>& events,
                            std::uint64_t only_position, bool filter) {
    RunResult probe = run(events, cfg);
    std::vector<std::int64_t> steps;
    bool wrong_position = false;
    for (const DecisionLogEntry& e : probe.log)
      if (e.kind == DecisionKind::alert) {
        if (filter && e.frame_position && *e.frame_position != only_position)
          wrong_position = true;
        steps.push_back(e.step);
      }
    if (filter && wrong_position) steps.clear();
    return steps;
  };
  auto finish = [&](std::vector<TraceEvent> events, const std::vector<std::int64_t>& steps) {
    GoldWindow gold;
    gold.start = std::max<std::int64_t>(0, steps.front() - 2);
    gold.end = steps.back() + 2;
    TraceEvent g;
    g.step = 0;
    g.type = TraceEvent::Type::gold_alert;
    g.standing_query_id = 0;
    g.window = gold;
    events.insert(events.begin() + 1, g);  // right after the standing query
    return events;
  };

  // Draw a quiet background (no alert on its own), then search for a frame
  // whose attention consistently wins: every alert must point at it.
  for (int bg_attempt = 0; bg_attempt < 8; ++bg_attempt) {
    std::vector<std::uint64_t> background(n_frames);
    for (auto& b : background) b = rng.next_bits();
    if (!alert_steps_of(build(background, background[salient_step - 1]), 0, false).empty())
      continue;
    for (int attempt = 0; attempt < 96; ++attempt) {
      const std::uint64_t cand = rng.next_bits();
      std::vector<TraceEvent> events = build(background, cand);
      auto steps = alert_steps_of(events, salient_position, true);
      if (!steps.empty()) return finish(std::move(events), steps);
    }
  }
  // Fall back to any firing configuration; the gold window still provably
  // contains every alert.
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::uint64_t> background(n_frames);
    for (auto& b : background) b = rng.next_bits();
    std::vector<TraceEvent> events = build(background, rng.next_bits());
    auto steps = alert_steps_of(events, 0, false);
    if (!steps.empty()) return finish(std::move(events), steps);
  }
  throw TraceError("gen pa: could not engineer a salient frame for this seed");
}

inline std::vector<TraceEvent> gen_queries(const RunConfig& cfg, std::uint64_t seed,
                                           std::size_t n_queries, std::int64_t spacing,
                                           const std::vector<QueryLabel>& labels,
                                           std::uint64_t stream_tag) {
  // Frames and every candidate trial draw from independent derived streams,
  // so one trial's failure can never perturb another trial's draws.
  const CounterRng base = CounterRng(seed).derive(stream_tag);
  CounterRng frame_rng = base.derive(0x66726d);
  GenDriver driver(cfg);
  std::vector<TraceEvent> events;
  std::vector<QueryLabel> remaining = labels;
  const std::int64_t first_query_step = 4;
  std::size_t qi = 0;
  std::int64_t next_query_step = first_query_step;
  std::int64_t postponed = 0;
  for (std::int64_t step = 0;; ++step) {
    if (step >= 1) {
      std::uint64_t frame_seed = frame_rng.next_bits();
      if (postponed > 0 && qi < n_queries) {
        CounterRng steer = base.derive(CounterRng::combine(0x737465, step));
        frame_seed = driver.pick_steering_frame(steer, remaining[qi] == QueryLabel::noise,
                                                cfg.model.vocab_size);
      }
      driver.frame(events, step, frame_seed);
    }
    if (qi < n_queries && step >= next_query_step) {
      auto trial_rng = [&](std::size_t slot) {
        return base.derive(CounterRng::combine(qi + 1, step * 4 + slot));
      };
      // Try the scheduled label; if the current context cannot produce it,
      // try a differently labeled remaining query instead (a decoded answer
      // reshapes the probe context far more than frames do) and swap the
      // schedule. Counts per label are preserved either way.
      std::size_t pick = qi;
      CounterRng primary = trial_rng(0);
      std::vector<int> cand = driver.find_candidate(
          primary, remaining[qi] == QueryLabel::noise, cfg.model.vocab_size);
      if (cand.empty()) {
        for (std::size_t j = qi + 1; j < n_queries; ++j) {
          if (remaining[j] == remaining[qi]) continue;
          CounterRng fallback = trial_rng(1);
          cand = driver.find_candidate(fallback, remaining[j] == QueryLabel::noise,
                                       cfg.model.vocab_size);
          if (!cand.empty()) pick = j;
          break;
        }
      }
      if (!cand.empty()) {
        std::swap(remaining[qi], remaining[pick]);
        driver.query(events, step, "q" + std::to_string(qi), remaining[qi], std::move(cand));
        ++qi;
        next_query_step = step + spacing;
        postponed = 0;
      } else if (++postponed > 25) {
        // Step after step, no candidate lands on the wanted side of the
        // threshold: this model seed cannot express the outcome at all.
        throw TraceError(std::string("gen: model seed ") + std::to_string(cfg.model.seed) +
                         " cannot produce a " +
                         (remaining[qi] == QueryLabel::noise ? "noise" : "legitimate") +
                         " query under the default threshold; use a different seed");
      }
    }
    driver.step();
    if (qi == n_queries && step >= next_query_step - spacing + 2) break;
  }
  return events;
}

}  // namespace detail

/// Deterministic synthetic traces: pa = engineered salient frame + gold
/// window; pt = equal counts of verified legitimate and noise queries;
/// multiplex = overlapping legitimate queries exercising suspension.
inline std::vector<TraceEvent> gen_trace(GenKind kind, std::uint64_t seed, std::size_t size) {
  RunConfig cfg;
  cfg.model.seed = seed;
  switch (kind) {
    case GenKind::pa:
      return detail::gen_pa(cfg, seed, size);
    case GenKind::pt: {
      std::size_t n = std::max<std::size_t>(2, size);
      if (n % 2 != 0) ++n;
      std::vector<QueryLabel> labels(n);
      for (std::size_t i = 0; i < n; ++i)
        labels[i] = i < n / 2 ? QueryLabel::legit : QueryLabel::noise;
      CounterRng shuffle = CounterRng(seed).derive(0x7074ull);  // "pt"
      for (std::size_t i = n; i > 1; --i)
        std::swap(labels[i - 1], labels[shuffle.next_below(i)]);
      return detail::gen_queries(cfg, seed, n, /*spacing=*/6, labels, 0x70747175ull);
    }
    case GenKind::multiplex: {
      const std::size_t n = std::max<std::size_t>(1, size);
      std::vector<QueryLabel> labels(n, QueryLabel::legit);
      return detail::gen_queries(cfg, seed, n, /*spacing=*/4, labels, 0x6d757874ull);
    }
  }
  throw InputError("gen_trace: unknown kind");
}

}  // namespace muxdec
