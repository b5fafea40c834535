#pragma once

#include <cmath>
#include <span>
#include <string>

#include "muxdec/errors.hpp"
#include "muxdec/math.hpp"

namespace muxdec {

struct InterruptParams {
  double beta = 0.2;  // scaling factor on the reciprocal-of-perplexity threshold
  std::size_t bos_id = 1;
  std::size_t eos_id = 2;

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("InterruptParams: beta must be positive");
  }
};

/// tau = beta * exp(-entropy(probs)): beta times the reciprocal of the
/// distribution's perplexity. Higher perplexity lowers the bar.
inline double interrupt_threshold(std::span<const double> probs, double beta) {
  return beta * std::exp(-entropy(probs));
}

inline void check_token(std::span<const double> probs, std::size_t id, const char* what) {
  if (id >= probs.size())
    throw ContractError(std::string(what) + ": token id " + std::to_string(id) +
                        " outside distribution of size " + std::to_string(probs.size()));
}

/// A new query is legitimate iff the bos probability strictly exceeds the
/// threshold; otherwise it is noise and stays silent.
inline bool start_detect(std::span<const double> probs, const InterruptParams& params) {
  params.validate();
  const double tau = interrupt_threshold(probs, params.beta);
  check_token(probs, params.bos_id, "start_detect");
  return probs[params.bos_id] > tau;
}

/// An ongoing generation should halt iff the eos probability strictly exceeds
/// the same threshold.
inline bool stop_detect(std::span<const double> probs, const InterruptParams& params) {
  params.validate();
  const double tau = interrupt_threshold(probs, params.beta);
  check_token(probs, params.eos_id, "stop_detect");
  return probs[params.eos_id] > tau;
}

}  // namespace muxdec
