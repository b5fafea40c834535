#pragma once

#include <cstdint>
#include <vector>

namespace muxdec {

/// Visibility specification for one forward call. rows[i] lists, in ascending
/// order, every cache position the i-th new input may attend to. Rows may
/// include the new inputs' own prospective positions (next_position + j for
/// j <= i), which is how causal visibility inside a batch is expressed.
struct MaskSpec {
  std::vector<std::vector<std::uint64_t>> rows;

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

}  // namespace muxdec
