#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kelp/optim.hpp"
#include "kelp/tensor.hpp"

namespace kelp {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 64;
  std::size_t ffn_hidden = 0;  // 0 means 4 * hidden
  std::size_t max_seq = 64;
  std::size_t vocab_size = 0;
  std::size_t n_segments = 2;
  std::size_t n_text_types = 3;
  double dropout = 0.0;
  double init_stddev = 0.02;
  double ln_eps = 1e-12;

  std::size_t ffn() const { return ffn_hidden ? ffn_hidden : 4 * hidden; }
  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;

  static EncoderConfig toy(std::size_t vocab_size);
  // Production-sized preset: 12 layers, 12 heads, width 768, 256 positions.
  static EncoderConfig full(std::size_t vocab_size = 30522,
                            std::size_t n_text_types = 12);
};

// Per-layer, per-head attention weight matrices captured during encode();
// purely an introspection aid for tests and tooling.
struct AttentionTrace {
  std::vector<std::vector<std::vector<double>>> weights;  // [layer][head] n*n
};

// Pre-norm transformer over summed token/segment/position/text-type
// embeddings, with a GeLU+LayerNorm transform and an input-tied projection
// for token prediction. All parameters live in the caller's registry under
// the "enc." prefix, so optimizers and checkpoints see one flat namespace.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParamRegistry& params, Rng& init_rng);
  // Rebinds to parameters that already exist in the registry.
  Encoder(const EncoderConfig& cfg, ParamRegistry& params);

  // Exact four-way row sum, no scaling or normalisation. text_type is
  // 1-based. Sequence length is capped by max_seq.
  Tensor embed(const std::vector<int>& token_ids,
               const std::vector<int>& segment_ids, int text_type) const;
  // Convenience: all-zero segment ids.
  Tensor embed(const std::vector<int>& token_ids, int text_type) const;

  // attn_mask[i] == 0 marks padding: such keys get exactly zero attention
  // weight everywhere. Deterministic (no dropout).
  Tensor encode(const Tensor& x, const std::vector<std::uint8_t>& attn_mask,
                AttentionTrace* trace = nullptr) const;
  // Training-mode variant; applies dropout after each sublayer when
  // cfg.dropout > 0, drawing from the supplied stream.
  Tensor encode_train(const Tensor& x,
                      const std::vector<std::uint8_t>& attn_mask,
                      Rng& dropout_rng) const;

  // Transform + tied vocabulary projection, rows in -> vocab logits out.
  Tensor mlm_logits(const Tensor& reps) const;
  // Tied projection alone (token table transposed plus output bias).
  Tensor vocab_project(const Tensor& reps) const;

  Tensor position_row(std::size_t pos) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  Tensor run(const Tensor& x, const std::vector<std::uint8_t>& attn_mask,
             AttentionTrace* trace, Rng* dropout_rng) const;

  EncoderConfig cfg_;
  ParamRegistry* params_;
};

}  // namespace kelp
