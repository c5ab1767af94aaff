#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spar/autodiff.hpp"
#include "spar/parameter.hpp"
#include "spar/rng.hpp"

namespace spar {

struct StackConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 1;
  std::size_t d_ff = 128;

  // Throws ContractError unless every extent is positive, heads divides d
  // and d_ff >= d.
  void validate() const;
};

struct BlockParams {
  Parameter* wq = nullptr;
  Parameter* wk = nullptr;
  Parameter* wv = nullptr;
  Parameter* wo = nullptr;
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_bias = nullptr;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_bias = nullptr;
};

struct StackParams {
  StackConfig config;
  std::vector<BlockParams> blocks;
  Parameter* final_gain = nullptr;
  Parameter* final_bias = nullptr;
};

// Registers "<prefix>.layer<i>.*" and "<prefix>.final_ln.*". Matrices are
// drawn from N(0, init_std^2), biases start at zero and gains at one.
StackParams make_stack(ParameterStore& store, const std::string& prefix, const StackConfig& config,
                       Rng& rng, double init_std = 0.02);

// Attention weights of one call, one [t x t] matrix per head.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

/// Scaled dot-product self-attention over t tokens of width d. Invalid keys
/// get a -inf logit, so their weight is exactly zero in every row.
ad::Var multi_head_attention(ad::Tape& tape, const BlockParams& block, std::size_t heads, ad::Var tokens,
                             ad::KeyValidity valid = {}, AttentionTrace* trace = nullptr);

// Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.)).
ad::Var encoder_block(ad::Tape& tape, const BlockParams& block, std::size_t heads, ad::Var tokens,
                      ad::KeyValidity valid = {});

// All blocks in order followed by the final layer norm.
ad::Var encoder_stack(ad::Tape& tape, const StackParams& stack, ad::Var tokens, ad::KeyValidity valid = {});

// Mean over tokens flagged valid -> [1 x d].
ad::Var mean_pool(ad::Var tokens, ad::KeyValidity valid = {});

}  // namespace spar
