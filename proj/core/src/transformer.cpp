#include "spar/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "spar/errors.hpp"

namespace spar {

using ad::Tape;
using ad::Var;

void StackConfig::validate() const {
  require(d > 0 && heads > 0 && layers > 0 && d_ff > 0, "stack config extents must be positive");
  require(d % heads == 0, "model dim " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                              " heads");
  require(d_ff >= d, "feedforward dim " + std::to_string(d_ff) + " is smaller than model dim " +
                         std::to_string(d));
}

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = normal(rng, 0.0, stddev);
  return t;
}

}  // namespace

StackParams make_stack(ParameterStore& store, const std::string& prefix, const StackConfig& config, Rng& rng,
                       double init_std) {
  config.validate();
  StackParams out;
  out.config = config;
  const std::size_t d = config.d, f = config.d_ff;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l) + ".";
    BlockParams b;
    b.wq = &store.create(p + "attn.wq", random_matrix(d, d, init_std, rng));
    b.wk = &store.create(p + "attn.wk", random_matrix(d, d, init_std, rng));
    b.wv = &store.create(p + "attn.wv", random_matrix(d, d, init_std, rng));
    b.wo = &store.create(p + "attn.wo", random_matrix(d, d, init_std, rng));
    b.w1 = &store.create(p + "ffn.w1", random_matrix(d, f, init_std, rng));
    b.b1 = &store.create(p + "ffn.b1", Tensor({f}));
    b.w2 = &store.create(p + "ffn.w2", random_matrix(f, d, init_std, rng));
    b.b2 = &store.create(p + "ffn.b2", Tensor({d}));
    b.ln1_gain = &store.create(p + "ln1.gain", Tensor({d}, 1.0));
    b.ln1_bias = &store.create(p + "ln1.bias", Tensor({d}));
    b.ln2_gain = &store.create(p + "ln2.gain", Tensor({d}, 1.0));
    b.ln2_bias = &store.create(p + "ln2.bias", Tensor({d}));
    out.blocks.push_back(b);
  }
  out.final_gain = &store.create(prefix + ".final_ln.gain", Tensor({d}, 1.0));
  out.final_bias = &store.create(prefix + ".final_ln.bias", Tensor({d}));
  return out;
}

Var multi_head_attention(Tape& tape, const BlockParams& block, std::size_t heads, Var tokens,
                         ad::KeyValidity valid, AttentionTrace* trace) {
  const std::size_t t = tokens.rows();
  const std::size_t d = tokens.cols();
  require(t >= 1, "attention needs at least one token");
  require(heads > 0 && d % heads == 0, "attention heads must divide the model dim");
  if (!valid.empty()) {
    if (valid.size() != t) {
      throw DimensionError("attention validity has " + std::to_string(valid.size()) + " flags for " +
                           std::to_string(t) + " tokens");
    }
    require(std::any_of(valid.begin(), valid.end(), [](auto f) { return f != 0; }),
            "attention: every key is invalid");
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = ad::matmul(tokens, tape.parameter(*block.wq));
  Var k = ad::matmul(tokens, tape.parameter(*block.wk));
  Var v = ad::matmul(tokens, tape.parameter(*block.wv));

  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var logits = ad::scale(ad::matmul_nt(qh, kh), scale);
    Var weights = ad::softmax_rows(logits, valid);
    if (trace) trace->weights.push_back(weights.value());
    outs.push_back(ad::matmul(weights, vh));
  }
  Var merged = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::matmul(merged, tape.parameter(*block.wo));
}

Var encoder_block(Tape& tape, const BlockParams& block, std::size_t heads, Var tokens, ad::KeyValidity valid) {
  Var h = ad::layer_norm(tokens, tape.parameter(*block.ln1_gain), tape.parameter(*block.ln1_bias));
  Var x = ad::add(tokens, multi_head_attention(tape, block, heads, h, valid));
  Var f = ad::layer_norm(x, tape.parameter(*block.ln2_gain), tape.parameter(*block.ln2_bias));
  f = ad::gelu(ad::add_bias(ad::matmul(f, tape.parameter(*block.w1)), tape.parameter(*block.b1)));
  f = ad::add_bias(ad::matmul(f, tape.parameter(*block.w2)), tape.parameter(*block.b2));
  return ad::add(x, f);
}

Var encoder_stack(Tape& tape, const StackParams& stack, Var tokens, ad::KeyValidity valid) {
  require(!stack.blocks.empty(), "encoder stack has no layers");
  if (tokens.cols() != stack.config.d) {
    throw DimensionError("encoder stack expects width " + std::to_string(stack.config.d) + ", got " +
                         shape_string(tokens.shape()));
  }
  Var x = tokens;
  for (const BlockParams& b : stack.blocks) x = encoder_block(tape, b, stack.config.heads, x, valid);
  return ad::layer_norm(x, tape.parameter(*stack.final_gain), tape.parameter(*stack.final_bias));
}

Var mean_pool(Var tokens, ad::KeyValidity valid) {
  const std::size_t t = tokens.rows();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t; ++i) {
    if (valid.empty() || valid[i]) rows.push_back(i);
  }
  if (!valid.empty() && valid.size() != t) throw DimensionError("mean_pool: validity length mismatch");
  require(!rows.empty(), "mean_pool: no valid tokens");
  return ad::mean_rows(tokens, rows);
}

}  // namespace spar
