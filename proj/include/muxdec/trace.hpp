#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "muxdec/errors.hpp"
#include "muxdec/metrics.hpp"

namespace muxdec {

enum class QueryLabel { legit, noise };

/// One timestamped simulator event. Frames carry either inline features or a
/// seed expanded through the model's generator at load time.
struct TraceEvent {
  enum class Type { frame, query, standing_query, gold_alert };

  std::int64_t step = 0;
  Type type = Type::frame;

  // frame
  std::optional<std::uint64_t> frame_seed;
  std::vector<double> features;

  // query
  std::string instance;
  QueryLabel label = QueryLabel::legit;
  std::vector<int> tokens;  // also used by standing_query

  // standing_query / gold_alert
  std::uint64_t standing_query_id = 0;
  GoldWindow window;
};

inline const char* to_string(TraceEvent::Type t) {
  switch (t) {
    case TraceEvent::Type::frame: return "frame";
    case TraceEvent::Type::query: return "query";
    case TraceEvent::Type::standing_query: return "standing_query";
    case TraceEvent::Type::gold_alert: return "gold_alert";
  }
  return "?";
}

namespace detail {

inline nlohmann::ordered_json event_to_json(const TraceEvent& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["type"] = to_string(e.type);
  switch (e.type) {
    case TraceEvent::Type::frame:
      if (e.frame_seed)
        j["seed"] = *e.frame_seed;
      else
        j["features"] = e.features;
      break;
    case TraceEvent::Type::query:
      j["instance"] = e.instance;
      j["label"] = e.label == QueryLabel::noise ? "noise" : "legit";
      j["tokens"] = e.tokens;
      break;
    case TraceEvent::Type::standing_query:
      j["id"] = e.standing_query_id;
      j["tokens"] = e.tokens;
      break;
    case TraceEvent::Type::gold_alert:
      j["standing_query"] = e.standing_query_id;
      j["window"] = {e.window.start, e.window.end};
      break;
  }
  return j;
}

inline TraceEvent event_from_json(const nlohmann::json& j, std::size_t line_no) {
  auto fail = [&](const std::string& msg) -> TraceEvent {
    throw TraceError("trace line " + std::to_string(line_no) + ": " + msg);
  };
  TraceEvent e;
  if (!j.contains("step") || !j["step"].is_number_integer()) return fail("missing integer 'step'");
  e.step = j["step"].get<std::int64_t>();
  if (e.step < 0) return fail("negative step");
  const std::string type = j.value("type", "");
  if (type == "frame") {
    e.type = TraceEvent::Type::frame;
    const bool has_seed = j.contains("seed");
    const bool has_features = j.contains("features");
    if (has_seed == has_features) return fail("frame needs exactly one of 'seed' or 'features'");
    if (has_seed)
      e.frame_seed = j["seed"].get<std::uint64_t>();
    else
      e.features = j["features"].get<std::vector<double>>();
  } else if (type == "query") {
    e.type = TraceEvent::Type::query;
    if (!j.contains("instance")) return fail("query missing 'instance'");
    e.instance = j["instance"].get<std::string>();
    const std::string label = j.value("label", "");
    if (label == "legit")
      e.label = QueryLabel::legit;
    else if (label == "noise")
      e.label = QueryLabel::noise;
    else
      return fail("query label must be 'legit' or 'noise'");
    if (!j.contains("tokens")) return fail("query missing 'tokens'");
    e.tokens = j["tokens"].get<std::vector<int>>();
    if (e.tokens.empty()) return fail("query has empty token list");
  } else if (type == "standing_query") {
    e.type = TraceEvent::Type::standing_query;
    if (!j.contains("id")) return fail("standing_query missing 'id'");
    e.standing_query_id = j["id"].get<std::uint64_t>();
    if (!j.contains("tokens")) return fail("standing_query missing 'tokens'");
    e.tokens = j["tokens"].get<std::vector<int>>();
    if (e.tokens.empty()) return fail("standing_query has empty token list");
  } else if (type == "gold_alert") {
    e.type = TraceEvent::Type::gold_alert;
    if (!j.contains("standing_query")) return fail("gold_alert missing 'standing_query'");
    e.standing_query_id = j["standing_query"].get<std::uint64_t>();
    if (!j.contains("window") || !j["window"].is_array() || j["window"].size() != 2)
      return fail("gold_alert needs 'window': [start, end]");
    e.window.start = j["window"][0].get<std::int64_t>();
    e.window.end = j["window"][1].get<std::int64_t>();
    if (e.window.start > e.window.end) return fail("gold_alert window start > end");
  } else {
    return fail("unknown event type '" + type + "'");
  }
  return e;
}

}  // namespace detail

/// Structural validation shared by the loader and the generator: step order,
/// unique instance ids, gold references.
inline void validate_trace(const std::vector<TraceEvent>& events) {
  std::int64_t prev_step = -1;
  std::size_t prev_index = 0;
  std::set<std::string> instances;
  std::set<std::uint64_t> standing;
  std::set<std::uint64_t> gold_seen;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const TraceEvent& e = events[i];
    if (e.step < prev_step)
      throw TraceError("trace events out of order: event " + std::to_string(i + 1) + " at step " +
                       std::to_string(e.step) + " after event " + std::to_string(prev_index + 1) +
                       " at step " + std::to_string(prev_step));
    prev_step = e.step;
    prev_index = i;
    if (e.type == TraceEvent::Type::query) {
      if (!instances.insert(e.instance).second)
        throw TraceError("duplicate query instance id '" + e.instance + "'");
    } else if (e.type == TraceEvent::Type::standing_query) {
      if (!standing.insert(e.standing_query_id).second)
        throw TraceError("duplicate standing_query id " + std::to_string(e.standing_query_id));
    } else if (e.type == TraceEvent::Type::gold_alert) {
      if (!gold_seen.insert(e.standing_query_id).second)
        throw TraceError("multiple gold_alert windows for standing_query " +
                         std::to_string(e.standing_query_id));
    }
  }
  for (std::uint64_t id : gold_seen)
    if (!standing.contains(id))
      throw TraceError("gold_alert references unknown standing_query " + std::to_string(id));
}

inline std::vector<TraceEvent> parse_trace(std::istream& in) {
  std::vector<TraceEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw TraceError("trace line " + std::to_string(line_no) + ": not valid JSON");
    events.push_back(detail::event_from_json(j, line_no));
  }
  validate_trace(events);
  return events;
}

inline std::vector<TraceEvent> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace file: " + path);
  return parse_trace(in);
}

inline std::string serialize_trace(const std::vector<TraceEvent>& events) {
  std::ostringstream out;
  for (const TraceEvent& e : events) out << detail::event_to_json(e).dump() << '\n';
  return out.str();
}

inline void save_trace(const std::vector<TraceEvent>& events, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TraceError("cannot write trace file: " + path);
  out << serialize_trace(events);
}

}  // namespace muxdec
