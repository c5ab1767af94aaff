#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "spar/embedding.hpp"
#include "spar/errors.hpp"
#include "spar/gradcheck.hpp"
#include "test_util.hpp"

using namespace spar;
using spar::test::random_tensor;

namespace {

double pair_distance(const Tensor& c, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t j = 0; j < c.cols(); ++j) s += (c.at(a, j) - c.at(b, j)) * (c.at(a, j) - c.at(b, j));
  return std::sqrt(s);
}

// y = x W + b written out coordinate by coordinate.
std::vector<double> matvec(const Linear& l, std::span<const double> x) {
  std::vector<double> y(l.out);
  for (std::size_t o = 0; o < l.out; ++o) {
    double s = l.bias->value[o];
    for (std::size_t i = 0; i < l.in; ++i) s += x[i] * l.weight->value.at(i, o);
    y[o] = s;
  }
  return y;
}

Linear random_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                     std::uint64_t seed) {
  Rng rng(seed);
  Linear l = make_linear(store, name, in, out, rng, 0.5);
  for (double& v : l.bias->value.data()) v = normal(rng);
  return l;
}

}  // namespace

TEST_SUITE("placement_embedding") {
  TEST_CASE("padding check sees values left in missing slots") {
    TokenGrid g(2, 3, 2);
    g.values[0] = 1.5;
    g.drop_node(1);
    CHECK(g.padding_is_zero());
    g.values.at(g.slot(1, 2), 1) = -0.25;
    CHECK_FALSE(g.padding_is_zero());
    CHECK_NOTHROW(g.validate());
  }

  TEST_CASE("single-node layout normalizes to the origin with unit scale") {
    const auto n = normalize_layout(Tensor::matrix(1, 3, {4.0, -7.0, 2.5}));
    CHECK(n.coords == Tensor({1, 3}));
    CHECK(n.scale == 1.0);
  }

  TEST_CASE("coincident nodes fall back to unit scale") {
    const auto n = normalize_layout(Tensor::matrix(3, 2, {1, 1, 1, 1, 1, 1}));
    CHECK(n.scale == 1.0);
    CHECK(n.coords == Tensor({3, 2}));
  }

  TEST_CASE("non-finite layout is rejected") {
    CHECK_THROWS_AS(normalize_layout(Tensor::matrix(2, 2, {0, 0, std::numeric_limits<double>::quiet_NaN(), 1})),
                    ContractError);
  }

  TEST_CASE("normalize is translation invariant") {
    Rng rng(3);
    const Tensor s = random_tensor({5, 2}, rng, 30.0);
    Tensor shifted = s;
    for (std::size_t i = 0; i < 5; ++i) {
      shifted.at(i, 0) += 123.0;
      shifted.at(i, 1) -= 45.5;
    }
    CHECK(max_abs_diff(normalize_layout(s).coords, normalize_layout(shifted).coords) < 1e-12);
  }

  TEST_CASE("world and normalized coordinates round trip") {
    Rng rng(4);
    const auto n = normalize_layout(random_tensor({4, 2}, rng, 20.0));
    const std::vector<double> p{3.0, -11.0};
    const auto back = n.to_world(n.to_normalized(p));
    CHECK(back[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(back[1] == doctest::Approx(-11.0).epsilon(1e-12));
  }

  TEST_CASE("zero angle and zero translation is the identity") {
    Rng rng(5);
    const Tensor c = random_tensor({4, 3}, rng);
    CHECK(apply_rigid_transform(c, RigidTransform{0.0, {0.0, 0.0, 0.0}}) == c);
  }

  TEST_CASE("half turn maps [1,0] to [-1,0]") {
    const Tensor y = apply_rigid_transform(Tensor::matrix(1, 2, {1.0, 0.0}), RigidTransform{std::numbers::pi, {0, 0}});
    CHECK(std::abs(y.at(0, 0) + 1.0) < 1e-12);
    CHECK(std::abs(y.at(0, 1)) < 1e-12);
  }

  TEST_CASE("3-d rotation leaves the vertical axis alone") {
    Rng rng(6);
    const Tensor c = random_tensor({3, 3}, rng);
    const Tensor y = apply_rigid_transform(c, RigidTransform{1.1, {0.0, 0.0, 0.25}});
    for (std::size_t i = 0; i < 3; ++i) CHECK(y.at(i, 2) == c.at(i, 2) + 0.25);
  }

  TEST_CASE("augmentation rejects unsupported dimensions") {
    Rng rng(7);
    CHECK_THROWS_AS(augment_layout(Tensor({3, 1}), rng), ContractError);
  }

  TEST_CASE("signal embedding of a zero token with zero bias is zero") {
    ParameterStore store;
    Rng rng(8);
    const Linear l = make_linear(store, "sig", 4, 6, rng, 0.5);
    TokenGrid grid(2, 3, 4);
    ad::Tape tape;
    CHECK(embed_signals(tape, l, grid).value() == Tensor({6, 6}));
  }

  TEST_CASE("signal embedding is linear without bias") {
    ParameterStore store;
    Rng rng(9);
    const Linear l = make_linear(store, "sig", 4, 6, rng, 0.5);
    TokenGrid grid(1, 2, 4);
    grid.values = random_tensor({2, 4}, rng);
    TokenGrid scaled = grid;
    for (double& v : scaled.values.data()) v *= -2.5;
    ad::Tape tape;
    Tensor expect = embed_signals(tape, l, grid).value();
    for (double& v : expect.data()) v *= -2.5;
    CHECK(max_abs_diff(embed_signals(tape, l, scaled).value(), expect) < 1e-12);
  }

  TEST_CASE("embedders reject mismatched widths") {
    ParameterStore store;
    Rng rng(10);
    const Linear sig = make_linear(store, "sig", 4, 6, rng, 0.5);
    const Linear sp = make_linear(store, "sp", 2, 6, rng, 0.5);
    ad::Tape tape;
    CHECK_THROWS_AS(embed_signals(tape, sig, TokenGrid(1, 2, 5)), ContractError);
    CHECK_THROWS_AS(embed_spatial(tape, sp, Tensor({2, 3}), 4), ContractError);
  }

  TEST_CASE("spatial embedding is broadcast over a node's tokens") {
    ParameterStore store;
    const Linear l = random_linear(store, "sp", 2, 5, 11);
    Rng rng(12);
    ad::Tape tape;
    const Tensor y = embed_spatial(tape, l, random_tensor({3, 2}, rng), 4).value();
    REQUIRE(y.shape() == Shape{12, 5});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 1; j < 4; ++j)
        for (std::size_t c = 0; c < 5; ++c) CHECK(y.at(i * 4 + j, c) == y.at(i * 4, c));
  }

  TEST_CASE("zero position with zero bias embeds to zero") {
    ParameterStore store;
    Rng rng(13);
    const Linear l = make_linear(store, "sp", 2, 5, rng, 0.5);
    ad::Tape tape;
    CHECK(embed_spatial(tape, l, Tensor({2, 2}), 3).value() == Tensor({6, 5}));
  }

  TEST_CASE("equal structural rows give equal structural embeddings") {
    ParameterStore store;
    const Linear l = random_linear(store, "st", 3, 4, 14);
    Rng rng(15);
    StructuralTable table{&store.create("table", random_tensor({4, 3}, rng))};
    for (std::size_t c = 0; c < 3; ++c) table.rows->value.at(2, c) = table.rows->value.at(0, c);
    const std::vector<std::uint64_t> ids{0, 2};
    ad::Tape tape;
    const Tensor y = embed_structural(tape, l, table, ids, 2).value();
    for (std::size_t c = 0; c < 4; ++c) CHECK(y.at(0, c) == y.at(2, c));
  }

  TEST_CASE("unknown identity needs a substitution") {
    ParameterStore store;
    const Linear l = random_linear(store, "st", 3, 4, 16);
    Rng rng(17);
    StructuralTable table{&store.create("table", random_tensor({4, 3}, rng))};
    const std::vector<std::uint64_t> ids{1, 9};
    ad::Tape tape;
    CHECK_THROWS_AS(embed_structural(tape, l, table, ids, 2), ContractError);
    const StructuralSubstitution sub{{9, 3}};
    const Tensor y = embed_structural(tape, l, table, ids, 2, &sub).value();
    const std::vector<std::uint64_t> direct{1, 3};
    CHECK(y == embed_structural(tape, l, table, direct, 2).value());
  }

  TEST_CASE("zero structural vector with zero bias embeds to zero") {
    ParameterStore store;
    Rng rng(18);
    const Linear l = make_linear(store, "st", 3, 4, rng, 0.5);
    StructuralTable table{&store.create("table", Tensor({2, 3}))};
    const std::vector<std::uint64_t> ids{0, 1};
    ad::Tape tape;
    CHECK(embed_structural(tape, l, table, ids, 3).value() == Tensor({6, 4}));
  }

  TEST_CASE("combine of zero addends is zero and keeps the addends") {
    ad::Tape tape;
    auto z = tape.constant(Tensor({4, 3}));
    const EmbeddedGrid e = combine(z, z, z, z);
    CHECK(e.combined.value() == Tensor({4, 3}));
    CHECK(e.signal.value() == Tensor({4, 3}));
  }

  TEST_CASE("combine rejects mismatched shapes") {
    ad::Tape tape;
    auto a = tape.constant(Tensor({4, 3}));
    auto b = tape.constant(Tensor({4, 2}));
    CHECK_THROWS_AS(combine(a, a, b, a), DimensionError);
  }

  TEST_CASE("token index embedding starts at sin 0, cos 0") {
    const Tensor p = token_index_embedding(5, 6);
    for (std::size_t c = 0; c < 6; ++c) CHECK(p.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
    CHECK(p.at(1, 0) == std::sin(1.0));
  }
}

TEST_SUITE("derived/placement_embedding") {
  TEST_CASE("three collinear nodes") {
    const auto n = normalize_layout(Tensor::matrix(3, 2, {0, 0, 2, 0, 4, 0}));
    CHECK(n.mean == std::vector<double>{2.0, 0.0});
    CHECK(std::abs(n.scale - std::sqrt(4.0 / 3.0)) < 1e-15);
    const double r3 = std::sqrt(3.0);
    CHECK(max_abs_diff(n.coords, Tensor::matrix(3, 2, {-r3, 0, 0, 0, r3, 0})) < 1e-15);
  }

  TEST_CASE("augmentation preserves pairwise distances") {
    Rng rng(20);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t dim = trial % 2 == 0 ? 2 : 3;
      const Tensor c = normalize_layout(random_tensor({6, dim}, rng, 10.0)).coords;
      const Tensor a = augment_layout(c, rng);
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j) CHECK(std::abs(pair_distance(a, i, j) - pair_distance(c, i, j)) < 1e-10);
    }
  }

  TEST_CASE("signal embedding matches a matvec oracle") {
    ParameterStore store;
    const Linear l = random_linear(store, "sig", 5, 7, 21);
    Rng rng(22);
    TokenGrid grid(2, 3, 5);
    grid.values = random_tensor({6, 5}, rng);
    ad::Tape tape;
    const Tensor y = embed_signals(tape, l, grid).value();
    for (std::size_t r = 0; r < 6; ++r) {
      const auto expect = matvec(l, grid.values.row(r));
      for (std::size_t o = 0; o < 7; ++o) CHECK(std::abs(y.at(r, o) - expect[o]) < 1e-12);
    }
  }

  TEST_CASE("spatial embedding matches a matvec oracle") {
    ParameterStore store;
    const Linear l = random_linear(store, "sp", 3, 6, 23);
    Rng rng(24);
    const Tensor pos = random_tensor({4, 3}, rng);
    ad::Tape tape;
    const Tensor y = embed_spatial(tape, l, pos, 2).value();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto expect = matvec(l, pos.row(i));
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t o = 0; o < 6; ++o) CHECK(std::abs(y.at(i * 2 + j, o) - expect[o]) < 1e-12);
    }
  }

  TEST_CASE("structural gradient reaches the rows of visible nodes") {
    ParameterStore store;
    const Linear l = random_linear(store, "st", 3, 4, 25);
    Rng rng(26);
    StructuralTable table{&store.create("table", random_tensor({5, 3}, rng))};
    const std::vector<std::uint64_t> ids{3, 1};
    auto objective = [&](ad::Tape& t) {
      return spar::test::weighted_sum(t, ad::gelu(embed_structural(t, l, table, ids, 3)), 27);
    };
    GradCheckOptions opt;
    opt.min_coordinates = 1000;
    const auto params = store.all();
    const auto r = grad_check(objective, params, opt);
    CHECK(r.ok);
    CHECK(r.max_relative_error < 1e-6);
    // Rows 1 and 3 are used; 0, 2 and 4 are not.
    for (Parameter* q : params) q->zero_grad();
    {
      ad::Tape t;
      t.backward(objective(t));
    }
    for (std::size_t row = 0; row < 5; ++row) {
      double norm = 0.0;
      for (std::size_t c = 0; c < 3; ++c) norm += std::abs(table.rows->grad.at(row, c));
      if (row == 1 || row == 3) CHECK(norm > 0.0);
      else CHECK(norm == 0.0);
    }
  }

  TEST_CASE("combine matches a scalar sum") {
    Rng rng(28);
    std::vector<Tensor> parts;
    for (int k = 0; k < 4; ++k) parts.push_back(random_tensor({6, 5}, rng));
    ad::Tape tape;
    const EmbeddedGrid e = combine(tape.constant(parts[0]), tape.constant(parts[1]), tape.constant(parts[2]),
                                   tape.constant(parts[3]));
    for (std::size_t i = 0; i < 30; ++i) {
      const double expect = ((parts[0][i] + parts[1][i]) + parts[2][i]) + parts[3][i];
      CHECK(e.combined.value()[i] == expect);
    }
  }
}

TEST_SUITE("invariant/placement_embedding") {
  TEST_CASE("normalized layouts have zero mean and unit mean square") {
    Rng rng(30);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + uniform_index(rng, 10);
      const std::size_t dim = 2 + uniform_index(rng, 2);
      Tensor s = random_tensor({n, dim}, rng, uniform(rng, 0.1, 100.0));
      for (double& v : s.data()) v += 500.0;
      const Tensor c = normalize_layout(s).coords;
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          m += c.at(i, j);
          sq += c.at(i, j) * c.at(i, j);
        }
        CHECK(std::abs(m / static_cast<double>(n)) < 1e-9);
      }
      CHECK(std::abs(sq / static_cast<double>(n * dim) - 1.0) < 1e-9);
    }
  }

  TEST_CASE("rotation angle is uniform on [0, 2pi)") {
    Rng rng(31);
    constexpr std::size_t kBins = 20;
    constexpr std::size_t kDraws = 10000;
    std::vector<double> counts(kBins, 0.0);
    for (std::size_t i = 0; i < kDraws; ++i) {
      const double a = sample_rigid_transform(2, rng).angle;
      REQUIRE(a >= 0.0);
      REQUIRE(a < 2.0 * std::numbers::pi);
      counts[static_cast<std::size_t>(a / (2.0 * std::numbers::pi) * kBins)] += 1.0;
    }
    const double expected = static_cast<double>(kDraws) / kBins;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 19 degrees of freedom; 43.8 is the 0.999 quantile.
    CHECK(chi2 < 43.8);
  }

  TEST_CASE("translations stay within half a normalized unit") {
    Rng rng(32);
    for (int i = 0; i < 2000; ++i) {
      const auto t = sample_rigid_transform(3, rng);
      for (double v : t.translation) CHECK((v >= -0.5 && v <= 0.5));
    }
  }

  TEST_CASE("structural embedding is constant along the token axis") {
    ParameterStore store;
    const Linear l = random_linear(store, "st", 4, 8, 33);
    Rng rng(34);
    StructuralTable table{&store.create("table", random_tensor({6, 4}, rng))};
    const std::vector<std::uint64_t> ids{5, 0, 2};
    ad::Tape tape;
    const Tensor y = embed_structural(tape, l, table, ids, 7).value();
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 1; j < 7; ++j)
        for (std::size_t c = 0; c < 8; ++c) CHECK(y.at(i * 7 + j, c) == y.at(i * 7, c));
  }

  TEST_CASE("all embedders pass a joint gradient check") {
    ParameterStore store;
    const Linear sig = random_linear(store, "sig", 3, 4, 35);
    const Linear sp = random_linear(store, "sp", 2, 4, 36);
    const Linear st = random_linear(store, "st", 2, 4, 37);
    Rng rng(38);
    StructuralTable table{&store.create("table", random_tensor({3, 2}, rng))};
    TokenGrid grid(2, 3, 3);
    grid.values = random_tensor({6, 3}, rng);
    const Tensor layout = random_tensor({2, 2}, rng);
    const std::vector<std::uint64_t> ids{2, 0};
    const Tensor p = token_index_embedding(3, 4);
    auto objective = [&](ad::Tape& t) {
      const EmbeddedGrid e = combine(embed_signals(t, sig, grid), embed_spatial(t, sp, layout, 3),
                                     embed_structural(t, st, table, ids, 3), ad::tile_rows(t.constant(p), 2));
      return spar::test::weighted_sum(t, ad::gelu(e.combined), 39);
    };
    GradCheckOptions opt;
    opt.min_coordinates = 1000;
    const auto params = store.all();
    const auto r = grad_check(objective, params, opt);
    CHECK(r.ok);
    CHECK(r.max_relative_error < 1e-6);
  }
}
