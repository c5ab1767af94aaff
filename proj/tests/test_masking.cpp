#include <doctest.h>

#include <cmath>
#include <string>

#include "spar/errors.hpp"
#include "spar/embedding.hpp"
#include "spar/masking.hpp"
#include "test_util.hpp"

using namespace spar;
using spar::test::random_tensor;

namespace {

TokenGrid grid_with_missing(std::size_t nodes, std::size_t tokens, std::size_t missing, Rng& rng) {
  TokenGrid g(nodes, tokens, 3);
  g.values = random_tensor({nodes * tokens, 3}, rng);
  std::size_t marked = 0;
  while (marked < missing) {
    const std::size_t s = uniform_index(rng, g.slots());
    if (g.missing[s]) continue;
    g.missing[s] = 1;
    for (double& v : g.values.row(s)) v = 0.0;
    ++marked;
  }
  return g;
}

// round((1 - ratio) * present), kept at least one.
std::size_t expected_visible(std::size_t present, double ratio) {
  const double raw = std::floor((1.0 - ratio) * static_cast<double>(present) + 0.5);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

std::size_t visible_in_node(const TokenMask& m, std::size_t node) {
  std::size_t c = 0;
  for (std::size_t j = 0; j < m.tokens; ++j) c += m.visible[node * m.tokens + j];
  return c;
}

void check_partition(const TokenMask& m) {
  for (std::size_t s = 0; s < m.slots(); ++s) {
    const int memberships = (m.visible[s] ? 1 : 0) + (m.is_hidden(s) ? 1 : 0) + (m.missing[s] ? 1 : 0);
    REQUIRE(memberships == 1);
  }
}

}  // namespace

TEST_SUITE("masking") {
  TEST_CASE("same seed gives the same mask") {
    Rng data(1);
    const TokenGrid g = grid_with_missing(3, 8, 2, data);
    Rng a(42), b(42);
    CHECK(random_mask(g, 0.75, a) == random_mask(g, 0.75, b));
    Rng c(43), d(43);
    CHECK(node_balanced_mask(g, 0.75, 1, c) == node_balanced_mask(g, 0.75, 1, d));
    Rng e(44), f(44);
    CHECK(node_drop_mask(g, 1, e) == node_drop_mask(g, 1, f));
  }

  TEST_CASE("ratio must lie strictly inside (0, 1)") {
    Rng rng(2);
    const TokenGrid g(2, 4, 3);
    CHECK_THROWS_AS(random_mask(g, 0.0, rng), ContractError);
    CHECK_THROWS_AS(random_mask(g, 1.0, rng), ContractError);
    CHECK_THROWS_AS(node_balanced_mask(g, 1.5, 1, rng), ContractError);
  }

  TEST_CASE("all-missing grid is rejected") {
    Rng rng(3);
    TokenGrid g(2, 2, 3);
    g.missing.assign(4, 1);
    CHECK_THROWS_AS(random_mask(g, 0.5, rng), ContractError);
    CHECK_THROWS_AS(node_balanced_mask(g, 0.5, 0, rng), ContractError);
  }

  TEST_CASE("node-balanced with min 0 follows the random count law") {
    Rng data(4);
    const TokenGrid g = grid_with_missing(4, 6, 5, data);
    Rng rng(5);
    CHECK(node_balanced_mask(g, 0.6, 0, rng).visible_count() == expected_visible(19, 0.6));
  }

  TEST_CASE("infeasible node minimum names the node") {
    Rng rng(6);
    const TokenGrid g(4, 4, 3);
    try {
      node_balanced_mask(g, 0.75, 2, rng);
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("node 2") != std::string::npos);
    }
  }

  TEST_CASE("node drop rejects dropping every node") {
    Rng rng(7);
    const TokenGrid g(3, 4, 3);
    CHECK_THROWS_AS(node_drop_mask(g, 3, rng), ContractError);
    CHECK_THROWS_AS(node_drop_mask(g, 0, rng), ContractError);
  }

  TEST_CASE("dropped node has no visible token") {
    Rng rng(8);
    const TokenGrid g(5, 4, 3);
    const TokenMask m = node_drop_mask(g, 2, rng);
    std::size_t empty_nodes = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t v = visible_in_node(m, i);
      CHECK((v == 0 || v == 4));
      empty_nodes += v == 0 ? 1 : 0;
    }
    CHECK(empty_nodes == 2);
  }

  TEST_CASE("complement is an involution") {
    Rng data(9);
    const TokenGrid g = grid_with_missing(3, 5, 4, data);
    Rng rng(10);
    const TokenMask m = random_mask(g, 0.7, rng);
    CHECK(complement(complement(m)).visible == m.visible);
  }

  TEST_CASE("complement never shows a missing token") {
    Rng data(11);
    const TokenGrid g = grid_with_missing(3, 5, 4, data);
    Rng rng(12);
    const TokenMask mbar = complement(random_mask(g, 0.5, rng));
    for (std::size_t s = 0; s < mbar.slots(); ++s)
      if (mbar.missing[s]) CHECK(mbar.visible[s] == 0);
  }

  TEST_CASE("gather then scatter with zero fill is E masked by M") {
    Rng data(13);
    const TokenGrid g = grid_with_missing(3, 4, 2, data);
    Rng rng(14);
    const TokenMask m = random_mask(g, 0.5, rng);
    const Gathered gathered = gather_visible(g.values, m);
    const Tensor back = scatter(gathered.sequence, gathered.slots, g.slots(), 0.0);
    Tensor expect = g.values;
    for (std::size_t s = 0; s < g.slots(); ++s)
      if (!m.visible[s])
        for (double& v : expect.row(s)) v = 0.0;
    CHECK(back == expect);
  }

  TEST_CASE("shape mismatches in gather and scatter are rejected") {
    Rng rng(15);
    const TokenGrid g(2, 3, 3);
    const TokenMask m = random_mask(g, 0.5, rng);
    CHECK_THROWS_AS(gather_visible(Tensor({5, 3}), m), DimensionError);
    const std::vector<std::size_t> slots{0, 1};
    CHECK_THROWS_AS(scatter(Tensor({3, 2}), slots, 6, 0.0), DimensionError);
    const std::vector<std::size_t> far{0, 9};
    CHECK_THROWS_AS(scatter(Tensor({2, 2}), far, 6, 0.0), DimensionError);
  }

  TEST_CASE("mask strategy names round trip") {
    for (auto s : {MaskStrategy::Random, MaskStrategy::NodeBalanced, MaskStrategy::NodeDrop})
      CHECK(mask_strategy_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(mask_strategy_from_string("learned"), ContractError);
  }
}

TEST_SUITE("derived/masking") {
  TEST_CASE("2 x 8 grid at ratio 0.75 shows exactly four tokens") {
    Rng rng(20);
    const TokenMask m = random_mask(TokenGrid(2, 8, 3), 0.75, rng);
    CHECK(m.visible_count() == 4);
    CHECK(m.hidden_count() == 12);
  }

  TEST_CASE("four missing of sixteen leaves three visible, none missing") {
    Rng data(21);
    const TokenGrid g = grid_with_missing(2, 8, 4, data);
    Rng rng(22);
    const TokenMask m = random_mask(g, 0.75, rng);
    CHECK(m.visible_count() == 3);
    for (std::size_t s = 0; s < 16; ++s)
      if (g.missing[s]) CHECK(m.visible[s] == 0);
  }

  TEST_CASE("node-balanced min 1 on 4 x 4 at 0.75 gives one per node") {
    Rng rng(23);
    const TokenMask m = node_balanced_mask(TokenGrid(4, 4, 3), 0.75, 1, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(visible_in_node(m, i) == 1);
  }

  TEST_CASE("dropping one of two 8-token nodes leaves eight visible") {
    Rng rng(24);
    const TokenMask m = node_drop_mask(TokenGrid(2, 8, 3), 1, rng);
    CHECK(m.visible_count() == 8);
  }

  TEST_CASE("gathered order matches a nested loop") {
    Rng data(25);
    const TokenGrid g = grid_with_missing(4, 5, 3, data);
    Rng rng(26);
    const TokenMask m = random_mask(g, 0.4, rng);
    const Gathered gathered = gather_visible(g.values, m);
    std::size_t r = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        if (!m.visible[i * 5 + j]) continue;
        REQUIRE(r < gathered.slots.size());
        CHECK(gathered.slots[r] == i * 5 + j);
        for (std::size_t c = 0; c < 3; ++c) CHECK(gathered.sequence.at(r, c) == g.values.at(i * 5 + j, c));
        ++r;
      }
    CHECK(r == gathered.slots.size());
  }

  TEST_CASE("every node keeps its minimum over 1000 trials") {
    Rng rng(27);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t nodes = 2 + uniform_index(rng, 5);
      const std::size_t tokens = 4 + uniform_index(rng, 5);
      const double ratio = uniform(rng, 0.3, 0.75);
      const std::size_t min_visible = 1 + uniform_index(rng, 2);
      const TokenGrid g(nodes, tokens, 3);
      if (min_visible * nodes > expected_visible(nodes * tokens, ratio)) continue;
      const TokenMask m = node_balanced_mask(g, ratio, min_visible, rng);
      for (std::size_t i = 0; i < nodes; ++i) REQUIRE(visible_in_node(m, i) >= min_visible);
    }
  }
}

TEST_SUITE("invariant/masking") {
  TEST_CASE("count law and partition hold for every strategy on 1000 random shapes") {
    Rng rng(30);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t nodes = 2 + uniform_index(rng, 6);
      const std::size_t tokens = 1 + uniform_index(rng, 10);
      const std::size_t missing = uniform_index(rng, nodes * tokens);
      const TokenGrid g = grid_with_missing(nodes, tokens, missing, rng);
      const std::size_t present = g.present_count();
      const double ratio = uniform(rng, 0.05, 0.95);

      const TokenMask r = random_mask(g, ratio, rng);
      check_partition(r);
      REQUIRE(r.visible_count() == expected_visible(present, ratio));

      const TokenMask b = node_balanced_mask(g, ratio, 0, rng);
      check_partition(b);
      REQUIRE(b.visible_count() == expected_visible(present, ratio));

      // Node drop can empty the grid when the survivors are all missing.
      const std::size_t drop = 1 + uniform_index(rng, nodes - 1);
      try {
        const TokenMask d = node_drop_mask(g, drop, rng);
        check_partition(d);
        std::size_t dropped = 0;
        for (std::size_t i = 0; i < nodes; ++i) {
          std::size_t present_in_node = 0;
          for (std::size_t j = 0; j < tokens; ++j) present_in_node += g.is_missing(i, j) ? 0 : 1;
          const std::size_t v = visible_in_node(d, i);
          REQUIRE((v == 0 || v == present_in_node));
          if (v == 0 && present_in_node > 0) ++dropped;
        }
        REQUIRE(dropped <= drop);
      } catch (const ContractError&) {
        // Only possible when some node has no present token at all.
        std::size_t empty_nodes = 0;
        for (std::size_t i = 0; i < nodes; ++i) {
          std::size_t p = 0;
          for (std::size_t j = 0; j < tokens; ++j) p += g.is_missing(i, j) ? 0 : 1;
          empty_nodes += p == 0 ? 1 : 0;
        }
        REQUIRE(empty_nodes > 0);
      }

      const TokenMask c = complement(r);
      check_partition(c);
      REQUIRE(c.visible_count() == present - r.visible_count());
    }
  }

  TEST_CASE("random mask draws each present slot with equal probability") {
    Rng data(31);
    const TokenGrid g = grid_with_missing(3, 6, 3, data);
    Rng rng(32);
    constexpr int kDraws = 6000;
    std::vector<double> hits(g.slots(), 0.0);
    for (int t = 0; t < kDraws; ++t) {
      const TokenMask m = random_mask(g, 0.75, rng);
      for (std::size_t s = 0; s < g.slots(); ++s) hits[s] += m.visible[s];
    }
    const double p = static_cast<double>(expected_visible(15, 0.75)) / 15.0;
    const double sigma = std::sqrt(kDraws * p * (1.0 - p));
    for (std::size_t s = 0; s < g.slots(); ++s) {
      if (g.missing[s]) CHECK(hits[s] == 0.0);
      else CHECK(std::abs(hits[s] - kDraws * p) < 4.0 * sigma);
    }
  }

  TEST_CASE("identical seeds give identical masks across shapes") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng data(seed);
      const TokenGrid g = grid_with_missing(2 + seed % 4, 3 + seed % 5, seed % 3, data);
      Rng a(seed + 100), b(seed + 100);
      REQUIRE(random_mask(g, 0.6, a) == random_mask(g, 0.6, b));
    }
  }
}
