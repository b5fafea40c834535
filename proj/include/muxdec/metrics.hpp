#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muxdec/errors.hpp"

namespace muxdec {

/// Inclusive step window [start, end]; |window| = end - start + 1.
struct GoldWindow {
  std::int64_t start = 0;
  std::int64_t end = 0;

  void validate() const {
    if (start > end) throw ContractError("GoldWindow: start > end");
  }
  std::int64_t length() const { return end - start + 1; }
  bool contains(std::int64_t step) const { return step >= start && step <= end; }
};

enum class DecisionKind { alert, respond, silent, reject };

inline const char* to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::alert: return "alert";
    case DecisionKind::respond: return "respond";
    case DecisionKind::silent: return "silent";
    case DecisionKind::reject: return "reject";
  }
  return "?";
}

struct DecisionLogEntry {
  std::int64_t step = 0;
  DecisionKind kind = DecisionKind::alert;
  std::optional<std::uint64_t> standing_query;
  std::optional<std::uint64_t> stream;
  std::optional<std::string> instance;
  std::optional<std::uint64_t> frame_position;
  std::vector<int> tokens;
};

/// One proactive-alerting instance: every alert step of a standing query plus
/// its gold window.
struct PaInstance {
  std::vector<std::int64_t> alert_steps;
  GoldWindow gold;
};

/// Fraction of instances whose FIRST alert lands inside the gold window.
/// Instances with no alert are misses.
inline double pa_accuracy(std::span<const PaInstance> instances) {
  if (instances.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PaInstance& inst : instances) {
    inst.gold.validate();
    if (!inst.alert_steps.empty() && inst.gold.contains(inst.alert_steps.front())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

/// Fraction of all alerts that land inside the gold window; 0 when no alert
/// was emitted at all.
inline double alert_precision(std::span<const std::int64_t> alert_steps, GoldWindow gold) {
  gold.validate();
  if (alert_steps.empty()) return 0.0;
  std::size_t inside = 0;
  for (std::int64_t s : alert_steps)
    if (gold.contains(s)) ++inside;
  return static_cast<double>(inside) / static_cast<double>(alert_steps.size());
}

/// Intersection-over-union of two inclusive step windows.
inline double span_iou(GoldWindow a, GoldWindow b) {
  a.validate();
  b.validate();
  const std::int64_t inter_lo = std::max(a.start, b.start);
  const std::int64_t inter_hi = std::min(a.end, b.end);
  const std::int64_t inter = inter_hi >= inter_lo ? inter_hi - inter_lo + 1 : 0;
  const std::int64_t uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU of the single merged predicted span [min alert, max alert] against the
/// gold window; 0 when no alert was emitted.
inline double alert_iou(std::span<const std::int64_t> alert_steps, GoldWindow gold) {
  gold.validate();
  if (alert_steps.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(alert_steps.begin(), alert_steps.end());
  return span_iou(GoldWindow{*lo, *hi}, gold);
}

/// Terminal outcome of one submitted query instance.
struct PtOutcome {
  bool is_noise = false;
  bool rejected = false;
  bool responded = false;  // finished with a non-empty answer
};

struct PtResult {
  double pt_accuracy = 0.0;           // over noise instances: no response generated
  double legit_responded_rate = 0.0;  // over legit instances: a response was generated
  std::size_t noise_instances = 0;
  std::size_t legit_instances = 0;
};

inline PtResult pt_accuracy(std::span<const PtOutcome> outcomes) {
  PtResult r;
  std::size_t noise_ok = 0, legit_ok = 0;
  for (const PtOutcome& o : outcomes) {
    if (o.is_noise) {
      ++r.noise_instances;
      if (o.rejected && !o.responded) ++noise_ok;
    } else {
      ++r.legit_instances;
      if (o.responded) ++legit_ok;
    }
  }
  r.pt_accuracy = r.noise_instances == 0
                      ? 0.0
                      : static_cast<double>(noise_ok) / static_cast<double>(r.noise_instances);
  r.legit_responded_rate =
      r.legit_instances == 0 ? 0.0
                             : static_cast<double>(legit_ok) / static_cast<double>(r.legit_instances);
  return r;
}

}  // namespace muxdec
