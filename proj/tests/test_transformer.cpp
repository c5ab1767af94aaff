#include <doctest.h>

#include <cmath>

#include "spar/errors.hpp"
#include "spar/transformer.hpp"
#include "test_util.hpp"

using namespace spar;
using spar::test::random_tensor;

namespace {

struct Fixture {
  ParameterStore store;
  StackParams stack;
  Fixture(std::size_t d, std::size_t heads, std::size_t layers, std::size_t d_ff, double init_std = 0.3,
          std::uint64_t seed = 1) {
    Rng rng(seed);
    stack = make_stack(store, "s", StackConfig{d, heads, layers, d_ff}, rng, init_std);
    // Non-trivial layer-norm parameters so the checks exercise them.
    for (Parameter* p : store.all()) {
      if (p->name.find("gain") != std::string::npos || p->name.find("bias") != std::string::npos) {
        for (double& v : p->value.data()) v += normal(rng, 0.0, 0.2);
      }
    }
  }
};

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto src = x.row(perm[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

TEST_SUITE("transformer") {
  TEST_CASE("stack config validation") {
    CHECK_NOTHROW((StackConfig{8, 2, 1, 16}.validate()));
    CHECK_THROWS_AS((StackConfig{8, 3, 1, 16}.validate()), ContractError);
    CHECK_THROWS_AS((StackConfig{8, 2, 1, 4}.validate()), ContractError);
    CHECK_THROWS_AS((StackConfig{8, 2, 0, 16}.validate()), ContractError);
  }

  TEST_CASE("single token attends to itself with weight one") {
    Fixture fx(8, 2, 1, 16);
    Rng rng(2);
    ad::Tape tape;
    AttentionTrace trace;
    multi_head_attention(tape, fx.stack.blocks[0], 2, tape.constant(random_tensor({1, 8}, rng)), {}, &trace);
    REQUIRE(trace.weights.size() == 2);
    for (const auto& w : trace.weights) CHECK(w == Tensor::matrix(1, 1, {1.0}));
  }

  TEST_CASE("invalid keys receive zero weight in every row") {
    Fixture fx(8, 2, 1, 16);
    Rng rng(3);
    ad::Tape tape;
    AttentionTrace trace;
    const std::vector<std::uint8_t> valid{1, 0, 1, 1, 0};
    multi_head_attention(tape, fx.stack.blocks[0], 2, tape.constant(random_tensor({5, 8}, rng)), valid, &trace);
    for (const auto& w : trace.weights)
      for (std::size_t q = 0; q < 5; ++q) {
        CHECK(w.at(q, 1) == 0.0);
        CHECK(w.at(q, 4) == 0.0);
      }
    const std::vector<std::uint8_t> none(5, 0);
    CHECK_THROWS_AS(
        multi_head_attention(tape, fx.stack.blocks[0], 2, tape.constant(random_tensor({5, 8}, rng)), none),
        ContractError);
  }

  TEST_CASE("encoder block preserves shape") {
    Fixture fx(8, 2, 1, 16);
    Rng rng(4);
    for (std::size_t t : {1u, 5u, 17u}) {
      ad::Tape tape;
      auto y = encoder_block(tape, fx.stack.blocks[0], 2, tape.constant(random_tensor({t, 8}, rng)));
      CHECK(y.shape() == Shape{t, 8});
    }
  }

  TEST_CASE("zero output projection and second ffn matrix give the identity") {
    Fixture fx(8, 2, 1, 16);
    fx.stack.blocks[0].wo->value.fill(0.0);
    fx.stack.blocks[0].w2->value.fill(0.0);
    fx.stack.blocks[0].b2->value.fill(0.0);
    Rng rng(5);
    const Tensor x = random_tensor({6, 8}, rng);
    ad::Tape tape;
    CHECK(encoder_block(tape, fx.stack.blocks[0], 2, tape.constant(x)).value() == x);
  }

  TEST_CASE("one-layer stack is one block plus the final norm") {
    Fixture fx(8, 2, 1, 16);
    Rng rng(6);
    const Tensor x = random_tensor({5, 8}, rng);
    ad::Tape tape;
    auto a = encoder_stack(tape, fx.stack, tape.constant(x));
    auto b = ad::layer_norm(encoder_block(tape, fx.stack.blocks[0], 2, tape.constant(x)),
                            tape.parameter(*fx.stack.final_gain), tape.parameter(*fx.stack.final_bias));
    CHECK(a.value() == b.value());
  }

  TEST_CASE("stack output is deterministic") {
    Fixture fx(8, 2, 2, 16);
    Rng rng(7);
    const Tensor x = random_tensor({5, 8}, rng);
    ad::Tape t1, t2;
    CHECK(encoder_stack(t1, fx.stack, t1.constant(x)).value() == encoder_stack(t2, fx.stack, t2.constant(x)).value());
  }

  TEST_CASE("mean pool over valid tokens") {
    ad::Tape tape;
    auto single = mean_pool(tape.constant(Tensor::matrix(1, 3, {1, 2, 3})));
    CHECK(single.value() == Tensor::matrix(1, 3, {1, 2, 3}));
    auto same = mean_pool(tape.constant(Tensor::matrix(3, 2, {4, -1, 4, -1, 4, -1})));
    CHECK(same.value() == Tensor::matrix(1, 2, {4, -1}));
    const std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS_AS(mean_pool(tape.constant(Tensor({2, 2})), none), ContractError);
  }
}

TEST_SUITE("derived/transformer") {
  TEST_CASE("attention is permutation equivariant on four tokens") {
    Fixture fx(8, 2, 1, 16);
    Rng rng(10);
    const Tensor x = random_tensor({4, 8}, rng);
    const std::vector<std::uint8_t> valid{1, 1, 0, 1};
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<std::uint8_t> pvalid(4);
    for (std::size_t i = 0; i < 4; ++i) pvalid[i] = valid[perm[i]];
    ad::Tape tape;
    const Tensor y = multi_head_attention(tape, fx.stack.blocks[0], 2, tape.constant(x), valid).value();
    const Tensor yp =
        multi_head_attention(tape, fx.stack.blocks[0], 2, tape.constant(permute_rows(x, perm)), pvalid).value();
    CHECK(max_abs_diff(yp, permute_rows(y, perm)) < 1e-12);
  }

  TEST_CASE("gradient check through one block") {
    Fixture fx(8, 2, 1, 16, 0.1);
    Rng rng(11);
    Parameter& x = fx.store.create("x", random_tensor({5, 8}, rng));
    const BlockParams& block = fx.stack.blocks[0];
    auto objective = [&](ad::Tape& t) {
      return spar::test::weighted_sum(t, encoder_block(t, block, 2, t.parameter(x)), 12);
    };
    GradCheckOptions opt;
    opt.min_coordinates = 100000;
    const auto params = fx.store.all();
    const auto r = grad_check(objective, params, opt);
    CHECK(r.ok);
    CHECK(r.max_relative_error < 1e-6);
  }

  TEST_CASE("mean pool of two valid tokens out of three") {
    ad::Tape tape;
    const std::vector<std::uint8_t> valid{1, 0, 1};
    auto y = mean_pool(tape.constant(Tensor::matrix(3, 2, {1, 10, 100, 100, 4, -2})), valid).value();
    CHECK(y == Tensor::matrix(1, 2, {2.5, 4.0}));
  }
}

TEST_SUITE("invariant/transformer") {
  TEST_CASE("stack is permutation equivariant") {
    Fixture fx(8, 2, 2, 16);
    Rng rng(13);
    const Tensor x = random_tensor({7, 8}, rng);
    const std::vector<std::size_t> perm{6, 2, 0, 5, 1, 4, 3};
    ad::Tape tape;
    const Tensor y = encoder_stack(tape, fx.stack, tape.constant(x)).value();
    const Tensor yp = encoder_stack(tape, fx.stack, tape.constant(permute_rows(x, perm))).value();
    CHECK(max_abs_diff(yp, permute_rows(y, perm)) < 1e-10);
  }

  TEST_CASE("attention rows over valid keys sum to one") {
    Fixture fx(16, 4, 1, 32);
    Rng rng(14);
    std::vector<std::uint8_t> valid(9, 1);
    valid[0] = valid[5] = 0;
    ad::Tape tape;
    AttentionTrace trace;
    multi_head_attention(tape, fx.stack.blocks[0], 4, tape.constant(random_tensor({9, 16}, rng)), valid, &trace);
    for (const auto& w : trace.weights)
      for (std::size_t q = 0; q < 9; ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < 9; ++k) s += w.at(q, k);
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
  }

  TEST_CASE("gradient check through a two-layer two-head stack") {
    Fixture fx(8, 2, 2, 16, 0.1);
    Rng rng(15);
    Parameter& x = fx.store.create("x", random_tensor({5, 8}, rng));
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1};
    auto objective = [&](ad::Tape& t) {
      return spar::test::weighted_sum(t, encoder_stack(t, fx.stack, t.parameter(x), valid), 16);
    };
    GradCheckOptions opt;
    opt.min_coordinates = 100000;
    const auto params = fx.store.all();
    const auto r = grad_check(objective, params, opt);
    CHECK(r.ok);
    CHECK(r.max_relative_error < 1e-5);
  }
}
