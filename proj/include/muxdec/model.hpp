#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "muxdec/errors.hpp"
#include "muxdec/kv_cache.hpp"
#include "muxdec/mask.hpp"
#include "muxdec/math.hpp"
#include "muxdec/rng.hpp"

namespace muxdec {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t vocab_size = 64;
  std::uint64_t seed = 0;
  std::size_t bos_id = 1;
  std::size_t eos_id = 2;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t ff_dim() const { return 2 * d_model; }

  // Fixed gain on the output head. The random substrate's raw logits are
  // nearly flat; this widens next-token probabilities into a useful dynamic
  // range so special-token probabilities can land on either side of the
  // interruption threshold.
  static constexpr double logit_gain = 2.0;

  void validate() const {
    if (d_model == 0) throw ConfigError("ModelConfig: d_model must be positive");
    if (n_layers == 0) throw ConfigError("ModelConfig: n_layers must be positive");
    if (n_heads == 0) throw ConfigError("ModelConfig: n_heads must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("ModelConfig: n_heads (" + std::to_string(n_heads) +
                        ") must divide d_model (" + std::to_string(d_model) + ")");
    if (vocab_size < 4) throw ConfigError("ModelConfig: vocab_size must be at least 4");
    if (bos_id >= vocab_size) throw ConfigError("ModelConfig: bos_id out of vocabulary");
    if (eos_id >= vocab_size) throw ConfigError("ModelConfig: eos_id out of vocabulary");
    if (bos_id == eos_id) throw ConfigError("ModelConfig: bos_id must differ from eos_id");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Mat wq, wk, wv, wo;  // d_model x d_model
  Mat ff_in;           // ff_dim x d_model
  Mat ff_out;          // d_model x ff_dim

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Deterministic decoder-only transformer substrate. Immutable after
/// construction; no positional encoding of any kind, so logits depend only on
/// the set and order-free content of visible cache entries.
struct Model {
  ModelConfig config;
  Mat embedding;  // vocab x d_model
  Mat output;     // vocab x d_model
  std::vector<LayerWeights> layers;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Weights are drawn uniformly from [-1/sqrt(d_model), +1/sqrt(d_model)] by a
/// counter-based generator: draw i of the flat sequence is a pure function of
/// (seed, i). Tensor order: embedding, output, then per layer wq, wk, wv, wo,
/// ff_in, ff_out, each row-major.
inline Model build_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  const double r = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  CounterRng rng(CounterRng::combine(config.seed, 0x6d6f64656cull));  // "model"
  std::uint64_t cursor = 0;
  auto fill = [&](Mat& mat, std::size_t rows, std::size_t cols) {
    mat = Mat(rows, cols);
    for (double& w : mat.a) w = rng.uniform(cursor++, -r, r);
  };
  fill(m.embedding, config.vocab_size, config.d_model);
  fill(m.output, config.vocab_size, config.d_model);
  m.layers.resize(config.n_layers);
  for (LayerWeights& layer : m.layers) {
    fill(layer.wq, config.d_model, config.d_model);
    fill(layer.wk, config.d_model, config.d_model);
    fill(layer.wv, config.d_model, config.d_model);
    fill(layer.wo, config.d_model, config.d_model);
    fill(layer.ff_in, config.ff_dim(), config.d_model);
    fill(layer.ff_out, config.d_model, config.ff_dim());
  }
  return m;
}

/// Deterministic frame features derived from the model's generator scheme,
/// same range as token embeddings.
inline std::vector<double> frame_features_from_seed(const ModelConfig& config,
                                                    std::uint64_t frame_seed) {
  const double r = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  CounterRng rng(
      CounterRng::combine(CounterRng::combine(config.seed, 0x6672616d65ull), frame_seed));
  std::vector<double> f(config.d_model);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(i, -r, r);
  return f;
}

/// One streamed input: either a token id or a raw frame feature vector that
/// enters the residual stream directly.
struct InputUnit {
  enum class Kind { token, frame };
  Kind kind = Kind::token;
  std::size_t token_id = 0;
  std::vector<double> features;

  static InputUnit token(std::size_t id) {
    InputUnit u;
    u.kind = Kind::token;
    u.token_id = id;
    return u;
  }
  static InputUnit frame(std::vector<double> f) {
    InputUnit u;
    u.kind = Kind::frame;
    u.features = std::move(f);
    return u;
  }
};

/// An input plus the segment tag its key/value vectors are filed under.
struct ForwardInput {
  InputUnit unit;
  SegmentId segment;
  SegmentKind kind = SegmentKind::video;
};

/// Final-layer attention of one new position: head_weights[h][j] is the
/// weight on visible[j]; each head row sums to 1 over the visible set.
struct AttnRow {
  std::vector<std::uint64_t> visible;
  std::vector<std::vector<double>> head_weights;
};

struct StepOutput {
  std::vector<std::uint64_t> positions;            // cache positions assigned to the inputs
  std::vector<std::vector<double>> logits;         // [input][vocab]
  std::vector<AttnRow> attention;                  // final layer, [input]
};

namespace detail {

inline void validate_mask(const KVCache& cache, std::size_t n_inputs, const MaskSpec& mask) {
  if (mask.rows.size() != n_inputs)
    throw ContractError("forward: mask has " + std::to_string(mask.rows.size()) +
                        " rows for " + std::to_string(n_inputs) + " inputs");
  const std::uint64_t base = cache.next_position();
  for (std::size_t i = 0; i < n_inputs; ++i) {
    const auto& row = mask.rows[i];
    if (row.empty())
      throw ContractError("forward: input " + std::to_string(i) + " has no visible positions");
    std::uint64_t prev = 0;
    bool first = true;
    for (std::uint64_t pos : row) {
      if (!first && pos <= prev)
        throw ContractError("forward: mask row " + std::to_string(i) + " not strictly ascending");
      prev = pos;
      first = false;
      if (pos >= base) {
        if (pos > base + i)
          throw ContractError("forward: input " + std::to_string(i) +
                              " granted a future position " + std::to_string(pos));
      } else if (!cache.contains(pos)) {
        throw ContractError("forward: mask references unknown position " + std::to_string(pos));
      }
    }
  }
}

}  // namespace detail

/// Run the substrate over a batch of new inputs against an externally managed
/// cache. Appends each input's per-layer K/V under its segment tag and returns
/// per-input logits plus final-layer attention rows. Pure apart from the
/// appends: identical (model, cache content, inputs, mask) give identical
/// output, and each row's arithmetic touches only its visible entries in
/// ascending-position order, so reordering or evicting invisible entries
/// cannot perturb it.
inline StepOutput forward(const Model& model, KVCache& cache,
                          std::span<const ForwardInput> inputs, const MaskSpec& mask) {
  const ModelConfig& cfg = model.config;
  const std::size_t n = inputs.size();
  detail::validate_mask(cache, n, mask);

  // Initial residual stream per input.
  std::vector<std::vector<double>> hidden(n);
  for (std::size_t i = 0; i < n; ++i) {
    const InputUnit& u = inputs[i].unit;
    if (u.kind == InputUnit::Kind::token) {
      if (u.token_id >= cfg.vocab_size)
        throw InputError("forward: token id " + std::to_string(u.token_id) + " out of vocabulary");
      auto row = model.embedding.row(u.token_id);
      hidden[i].assign(row.begin(), row.end());
    } else {
      if (u.features.size() != cfg.d_model)
        throw InputError("forward: frame feature width " + std::to_string(u.features.size()) +
                         " != d_model " + std::to_string(cfg.d_model));
      if (!all_finite(u.features)) throw InputError("forward: non-finite frame features");
      hidden[i] = u.features;
    }
  }

  const std::uint64_t base = cache.next_position();
  const std::size_t d_k = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));

  std::vector<PositionKV> new_kv(n);
  for (PositionKV& p : new_kv) {
    p.k.resize(cfg.n_layers);
    p.v.resize(cfg.n_layers);
  }

  StepOutput out;
  out.logits.resize(n);
  out.attention.resize(n);

  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const LayerWeights& w = model.layers[layer];
    const bool final_layer = layer + 1 == cfg.n_layers;

    // Phase 1: all projections from the current residual stream, so that
    // earlier inputs' keys exist before any attention row is computed.
    std::vector<std::vector<double>> q(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> xn = rms_norm(hidden[i]);
      q[i] = matvec(w.wq, xn);
      new_kv[i].k[layer] = matvec(w.wk, xn);
      new_kv[i].v[layer] = matvec(w.wv, xn);
    }

    // Phase 2: attention per input over its visible set.
    std::vector<std::vector<double>> attn_out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = mask.rows[i];
      const std::size_t m = row.size();
      std::vector<const std::vector<double>*> keys(m), vals(m);
      for (std::size_t j = 0; j < m; ++j) {
        if (row[j] >= base) {
          const std::size_t local = static_cast<std::size_t>(row[j] - base);
          keys[j] = &new_kv[local].k[layer];
          vals[j] = &new_kv[local].v[layer];
        } else {
          const CacheEntry* e = cache.find(row[j]);
          keys[j] = &e->kv.k[layer];
          vals[j] = &e->kv.v[layer];
        }
      }
      std::vector<double> ctx(cfg.d_model, 0.0);
      AttnRow* rec = nullptr;
      if (final_layer) {
        rec = &out.attention[i];
        rec->visible = row;
        rec->head_weights.resize(cfg.n_heads);
      }
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t off = h * d_k;
        std::vector<double> scores(m);
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          const double* kj = keys[j]->data() + off;
          const double* qi = q[i].data() + off;
          for (std::size_t c = 0; c < d_k; ++c) s += qi[c] * kj[c];
          scores[j] = s * scale;
        }
        std::vector<double> weights = softmax(scores);
        for (std::size_t j = 0; j < m; ++j) {
          const double* vj = vals[j]->data() + off;
          for (std::size_t c = 0; c < d_k; ++c) ctx[off + c] += weights[j] * vj[c];
        }
        if (rec) rec->head_weights[h] = std::move(weights);
      }
      attn_out[i] = matvec(w.wo, ctx);
    }

    // Phase 3: residuals and feed-forward.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < cfg.d_model; ++c) hidden[i][c] += attn_out[i][c];
      std::vector<double> xn = rms_norm(hidden[i]);
      std::vector<double> f = matvec(w.ff_in, xn);
      for (double& v : f) v = v > 0.0 ? v : 0.0;
      std::vector<double> f2 = matvec(w.ff_out, f);
      for (std::size_t c = 0; c < cfg.d_model; ++c) hidden[i][c] += f2[c];
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    out.logits[i] = matvec(model.output, rms_norm(hidden[i]));
    for (double& v : out.logits[i]) v *= ModelConfig::logit_gain;
  }

  // Append after all computation so a thrown error leaves the cache untouched.
  out.positions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pos = cache.append(inputs[i].segment, inputs[i].kind, std::span(&new_kv[i], 1));
    out.positions.push_back(pos[0]);
  }
  return out;
}

}  // namespace muxdec
