#include "kelp/encoder.hpp"

#include <cmath>

namespace kelp {

namespace {

std::string layer_key(std::size_t i, const char* suffix) {
  return "enc.layer" + std::to_string(i) + "." + suffix;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be set");
  if (layers == 0 || heads == 0 || hidden == 0 || max_seq == 0) {
    throw ConfigError("encoder: layers, heads, hidden, max_seq must be > 0");
  }
  if (hidden % heads != 0) {
    throw ConfigError("encoder: hidden " + std::to_string(hidden) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (n_segments == 0 || n_text_types == 0) {
    throw ConfigError("encoder: n_segments and n_text_types must be > 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("encoder: dropout must lie in [0,1)");
  }
}

EncoderConfig EncoderConfig::toy(std::size_t vocab_size) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 64;
  c.max_seq = 64;
  c.vocab_size = vocab_size;
  return c;
}

EncoderConfig EncoderConfig::full(std::size_t vocab_size,
                                  std::size_t n_text_types) {
  EncoderConfig c;
  c.layers = 12;
  c.heads = 12;
  c.hidden = 768;
  c.max_seq = 256;
  c.vocab_size = vocab_size;
  c.n_text_types = n_text_types;
  c.dropout = 0.1;
  return c;
}

Encoder::Encoder(const EncoderConfig& cfg, ParamRegistry& params, Rng& init_rng)
    : cfg_(cfg), params_(&params) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden, f = cfg_.ffn(), v = cfg_.vocab_size;
  const double sd = cfg_.init_stddev;
  params.create("enc.embed.token", {v, h}, init_rng, sd);
  params.create("enc.embed.segment", {cfg_.n_segments, h}, init_rng, sd);
  params.create("enc.embed.position", {cfg_.max_seq, h}, init_rng, sd);
  params.create("enc.embed.text_type", {cfg_.n_text_types, h}, init_rng, sd);
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      params.create(layer_key(i, w), {h, h}, init_rng, sd);
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      params.create_zeros(layer_key(i, b), {h});
    }
    params.create_full(layer_key(i, "ln1.gain"), {h}, 1.0);
    params.create_zeros(layer_key(i, "ln1.bias"), {h});
    params.create_full(layer_key(i, "ln2.gain"), {h}, 1.0);
    params.create_zeros(layer_key(i, "ln2.bias"), {h});
    params.create(layer_key(i, "ffn.w1"), {h, f}, init_rng, sd);
    params.create_zeros(layer_key(i, "ffn.b1"), {f});
    params.create(layer_key(i, "ffn.w2"), {f, h}, init_rng, sd);
    params.create_zeros(layer_key(i, "ffn.b2"), {h});
  }
  params.create_full("enc.final_ln.gain", {h}, 1.0);
  params.create_zeros("enc.final_ln.bias", {h});
  params.create("enc.mlm.w", {h, h}, init_rng, sd);
  params.create_zeros("enc.mlm.b", {h});
  params.create_full("enc.mlm.ln.gain", {h}, 1.0);
  params.create_zeros("enc.mlm.ln.bias", {h});
  params.create_zeros("enc.mlm.out_bias", {v});
}

Encoder::Encoder(const EncoderConfig& cfg, ParamRegistry& params)
    : cfg_(cfg), params_(&params) {
  cfg_.validate();
  params.get("enc.embed.token");  // fail fast if the registry is foreign
}

Tensor Encoder::embed(const std::vector<int>& token_ids,
                      const std::vector<int>& segment_ids,
                      int text_type) const {
  const std::size_t n = token_ids.size();
  if (n == 0) throw DimensionError("embed: empty token sequence");
  if (n > cfg_.max_seq) {
    throw DimensionError("embed: sequence of " + std::to_string(n) +
                         " tokens exceeds max_seq " +
                         std::to_string(cfg_.max_seq));
  }
  if (segment_ids.size() != n) {
    throw DimensionError("embed: " + std::to_string(segment_ids.size()) +
                         " segment ids for " + std::to_string(n) + " tokens");
  }
  if (text_type < 1 ||
      static_cast<std::size_t>(text_type) > cfg_.n_text_types) {
    throw LookupError("embed: text_type " + std::to_string(text_type) +
                      " outside [1," + std::to_string(cfg_.n_text_types) + "]");
  }
  std::vector<int> positions(n), types(n, text_type - 1);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Tensor tok = lookup_rows(params_->get("enc.embed.token"), token_ids);
  Tensor seg = lookup_rows(params_->get("enc.embed.segment"), segment_ids);
  Tensor pos = lookup_rows(params_->get("enc.embed.position"), positions);
  Tensor typ = lookup_rows(params_->get("enc.embed.text_type"), types);
  return add(add(tok, seg), add(pos, typ));
}

Tensor Encoder::embed(const std::vector<int>& token_ids, int text_type) const {
  return embed(token_ids, std::vector<int>(token_ids.size(), 0), text_type);
}

Tensor Encoder::encode(const Tensor& x,
                       const std::vector<std::uint8_t>& attn_mask,
                       AttentionTrace* trace) const {
  return run(x, attn_mask, trace, nullptr);
}

Tensor Encoder::encode_train(const Tensor& x,
                             const std::vector<std::uint8_t>& attn_mask,
                             Rng& dropout_rng) const {
  return run(x, attn_mask, nullptr, &dropout_rng);
}

Tensor Encoder::run(const Tensor& x, const std::vector<std::uint8_t>& attn_mask,
                    AttentionTrace* trace, Rng* dropout_rng) const {
  if (x.rank() != 2 || x.dim(1) != cfg_.hidden) {
    throw DimensionError("encode: input " + shape_str(x.shape()) +
                         " does not match hidden size " +
                         std::to_string(cfg_.hidden));
  }
  const std::size_t n = x.dim(0);
  if (attn_mask.size() != n) {
    throw DimensionError("encode: mask of size " +
                         std::to_string(attn_mask.size()) + " for " +
                         std::to_string(n) + " rows");
  }
  const std::size_t dh = cfg_.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = dropout_rng != nullptr && cfg_.dropout > 0.0;
  if (trace) trace->weights.assign(cfg_.layers, {});

  Tensor h = x;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    Tensor pre = layer_norm(h, params_->get(layer_key(l, "ln1.gain")),
                            params_->get(layer_key(l, "ln1.bias")), cfg_.ln_eps);
    Tensor q = add_rows(matmul(pre, params_->get(layer_key(l, "attn.wq"))),
                        params_->get(layer_key(l, "attn.bq")));
    Tensor k = add_rows(matmul(pre, params_->get(layer_key(l, "attn.wk"))),
                        params_->get(layer_key(l, "attn.bk")));
    Tensor v = add_rows(matmul(pre, params_->get(layer_key(l, "attn.wv"))),
                        params_->get(layer_key(l, "attn.bv")));
    std::vector<Tensor> head_ctx;
    for (std::size_t a = 0; a < cfg_.heads; ++a) {
      Tensor qa = slice_cols(q, a * dh, (a + 1) * dh);
      Tensor ka = slice_cols(k, a * dh, (a + 1) * dh);
      Tensor va = slice_cols(v, a * dh, (a + 1) * dh);
      Tensor scores = scale(matmul_nt(qa, ka), inv_sqrt_dh);
      Tensor attn = softmax_rows_masked(scores, attn_mask);
      if (trace) trace->weights[l].push_back(attn.values());
      head_ctx.push_back(matmul(attn, va));
    }
    Tensor ctx = concat_cols(head_ctx);
    Tensor attn_out = add_rows(matmul(ctx, params_->get(layer_key(l, "attn.wo"))),
                               params_->get(layer_key(l, "attn.bo")));
    if (drop) attn_out = dropout(attn_out, cfg_.dropout, *dropout_rng);
    h = add(h, attn_out);

    Tensor pre2 = layer_norm(h, params_->get(layer_key(l, "ln2.gain")),
                             params_->get(layer_key(l, "ln2.bias")), cfg_.ln_eps);
    Tensor mid = gelu(add_rows(matmul(pre2, params_->get(layer_key(l, "ffn.w1"))),
                               params_->get(layer_key(l, "ffn.b1"))));
    Tensor ffn_out = add_rows(matmul(mid, params_->get(layer_key(l, "ffn.w2"))),
                              params_->get(layer_key(l, "ffn.b2")));
    if (drop) ffn_out = dropout(ffn_out, cfg_.dropout, *dropout_rng);
    h = add(h, ffn_out);
  }
  return layer_norm(h, params_->get("enc.final_ln.gain"),
                    params_->get("enc.final_ln.bias"), cfg_.ln_eps);
}

Tensor Encoder::mlm_logits(const Tensor& reps) const {
  Tensor t = gelu(add_rows(matmul(reps, params_->get("enc.mlm.w")),
                           params_->get("enc.mlm.b")));
  t = layer_norm(t, params_->get("enc.mlm.ln.gain"),
                 params_->get("enc.mlm.ln.bias"), cfg_.ln_eps);
  return vocab_project(t);
}

Tensor Encoder::vocab_project(const Tensor& reps) const {
  return add_rows(matmul_nt(reps, params_->get("enc.embed.token")),
                  params_->get("enc.mlm.out_bias"));
}

Tensor Encoder::position_row(std::size_t pos) const {
  if (pos >= cfg_.max_seq) {
    throw LookupError("position " + std::to_string(pos) + " outside max_seq " +
                      std::to_string(cfg_.max_seq));
  }
  return as_vec(lookup_rows(params_->get("enc.embed.position"),
                            {static_cast<int>(pos)}));
}

}  // namespace kelp
