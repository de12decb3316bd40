#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "tinyalign/adam.hpp"
#include "tinyalign/ops.hpp"
#include "tinyalign/rng.hpp"

#include "support/checkers.hpp"

using namespace tinyalign;
namespace tt = tinyalign::testing;

namespace {

constexpr double kLn2 = 0.6931471805599453;

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  long n = 1;
  for (const long d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("tensor: construction checks shapes and scalar access") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, {1.0, 2.0}), DimensionError);
  Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.size() == 4);
  CHECK_THROWS_AS(t.item(), DimensionError);
  CHECK(Tensor::scalar(7.5).item() == 7.5);
  Tensor undefined;
  CHECK(!undefined.defined());
  CHECK_THROWS_AS(undefined.size(), ValueError);
}

TEST_CASE("tensor: backward reaches every leaf with unit chain") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor y = Tensor::scalar(2, true);
  backward(add(sum(x), y));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});
  CHECK(y.grad() == std::vector<double>{1});
}

TEST_CASE("tensor: backward rejects non-scalars, grad-free roots and consumed graphs") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), DimensionError);

  Tensor frozen = scale(Tensor::from({1}, {2.0}, false), 3.0);
  CHECK_THROWS_AS(backward(frozen), ValueError);

  Tensor loss = mean(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), ValueError);

  // A fresh node on top of a consumed interior node is also rejected.
  Tensor y = mul(x, x);
  backward(sum(y));
  CHECK_THROWS_AS(backward(mean(y)), ValueError);
}

TEST_CASE("tensor: gradients accumulate across graphs until zeroed") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad() == std::vector<double>{2, 4});
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{3, 5});
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0, 0});
}

TEST_CASE("tensor: NoGradGuard suppresses recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK(!y.requires_grad());
    CHECK(y.data() == std::vector<double>{1, 4});
  }
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("ops: matmul values and hand-checked gradients") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from({2, 1}, {1, 1}, true);
  Tensor c = matmul(a, b);
  CHECK(c.data() == std::vector<double>{3, 7});

  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(tt::bitwise_equal(matmul(a, eye), a));

  backward(sum(c));
  CHECK(a.grad() == std::vector<double>{1, 1, 1, 1});
  CHECK(b.grad() == std::vector<double>{4, 6});

  CHECK_THROWS_AS(matmul(a, Tensor::from({3, 1}, {1, 2, 3})), DimensionError);
  CHECK_THROWS_AS(matmul(a, Tensor::from({2}, {1, 2})), DimensionError);
}

TEST_CASE("ops: matmul_nt agrees with matmul against the explicit transpose") {
  Rng rng(11);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {5, 4});
  std::vector<double> bt(4 * 5);
  for (long r = 0; r < 5; ++r)
    for (long c = 0; c < 4; ++c) bt[static_cast<std::size_t>(c * 5 + r)] = b.at(r * 4 + c);
  Tensor ref = matmul(a, Tensor::from({4, 5}, bt));
  Tensor got = matmul_nt(a, b);
  REQUIRE(got.shape() == Shape{3, 5});
  for (long i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.at(i) - ref.at(i)) < 1e-12);
}

TEST_CASE("ops: matmul gradients pass finite differences") {
  Rng rng(12);
  Tensor a = random_tensor(rng, {2, 3});
  Tensor b = random_tensor(rng, {3, 4});
  auto rep = tt::fd_check({{"a", a}, {"b", b}},
                          [&] { return mean(mul(matmul(a, b), matmul(a, b))); }, 13, 6);
  CHECK(rep.max_rel_err < 1e-6);

  auto rep_nt = tt::fd_check({{"a", a}, {"b", b}},
                             [&] { return sum(matmul_nt(matmul(a, b), matmul(a, b))); }, 14, 6);
  CHECK(rep_nt.max_rel_err < 1e-6);
}

TEST_CASE("ops: elementwise arithmetic and scaling") {
  Tensor a = Tensor::from({3}, {1, 2, 3}, true);
  Tensor b = Tensor::from({3}, {10, 20, 30}, true);
  CHECK(add(a, b).data() == std::vector<double>{11, 22, 33});
  CHECK(sub(b, a).data() == std::vector<double>{9, 18, 27});
  CHECK(mul(a, b).data() == std::vector<double>{10, 40, 90});
  CHECK(scale(a, 2.0).data() == std::vector<double>{2, 4, 6});
  CHECK(neg(a).data() == std::vector<double>{-1, -2, -3});
  CHECK(div_scalar(b, 10.0).data() == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(div_scalar(a, 0.0), ValueError);
  CHECK_THROWS_AS(add(a, Tensor::from({2}, {1, 2})), DimensionError);

  backward(sum(mul(a, b)));
  CHECK(a.grad() == std::vector<double>{10, 20, 30});
  CHECK(b.grad() == std::vector<double>{1, 2, 3});
}

TEST_CASE("ops: softmax normalizes along any axis and is shift-stable") {
  Tensor flat = softmax(Tensor::from({2}, {0, 0}), 0);
  CHECK(flat.data() == std::vector<double>{0.5, 0.5});

  Tensor big = softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(big.at(0) == 1.0);
  CHECK(big.at(1) == 0.0);

  Tensor thirds = softmax(Tensor::from({2}, {std::log(1.0), std::log(3.0)}), 0);
  CHECK(std::abs(thirds.at(0) - 0.25) < 1e-12);
  CHECK(std::abs(thirds.at(1) - 0.75) < 1e-12);

  Rng rng(21);
  Tensor x = random_tensor(rng, {2, 3, 4}, false);
  for (int axis : {0, 1, 2, -1}) {
    Tensor s = softmax(x, axis);
    const int ax = axis < 0 ? axis + 3 : axis;
    const long n_axis = x.shape()[static_cast<std::size_t>(ax)];
    long inner = 1, outer = 1;
    for (int i = ax + 1; i < 3; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (long o = 0; o < outer; ++o)
      for (long in = 0; in < inner; ++in) {
        double total = 0.0;
        for (long j = 0; j < n_axis; ++j) total += s.at(o * n_axis * inner + j * inner + in);
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
  }
  CHECK_THROWS_AS(softmax(x, 3), DimensionError);
}

TEST_CASE("ops: softmax gradient passes finite differences on a strided axis") {
  Rng rng(22);
  Tensor x = random_tensor(rng, {2, 3, 4});
  Tensor w = random_tensor(rng, {2, 3, 4}, false);
  auto rep = tt::fd_check({{"x", x}}, [&] { return sum(mul(softmax(x, 1), w)); }, 23, 10);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("ops: causal_softmax zeroes the strict upper triangle exactly") {
  Rng rng(31);
  Tensor scores = random_tensor(rng, {5, 5});
  Tensor p = causal_softmax(scores);
  for (long r = 0; r < 5; ++r) {
    double prefix = 0.0;
    for (long c = 0; c < 5; ++c) {
      if (c > r) CHECK(p.at(r, c) == 0.0);
      prefix += p.at(r, c);
    }
    CHECK(std::abs(prefix - 1.0) < 1e-12);
  }

  // Row r equals a plain softmax over its causal prefix.
  for (long r = 0; r < 5; ++r) {
    std::vector<double> pre(static_cast<std::size_t>(r + 1));
    for (long c = 0; c <= r; ++c) pre[static_cast<std::size_t>(c)] = scores.at(r, c);
    Tensor ref = softmax(Tensor::from({r + 1}, pre), 0);
    for (long c = 0; c <= r; ++c) CHECK(std::abs(p.at(r, c) - ref.at(c)) < 1e-14);
  }

  CHECK_THROWS_AS(causal_softmax(random_tensor(rng, {3, 4})), DimensionError);

  Tensor w = random_tensor(rng, {5, 5}, false);
  auto rep = tt::fd_check({{"scores", scores}},
                          [&] { return sum(mul(causal_softmax(scores), w)); }, 32, 10);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("ops: cross_entropy matches frozen two-row values") {
  // Row oracles: logits [0.2,-0.1,0.4] @ target 2 and [1,0,-1] @ target 0.
  constexpr double kCe0 = 0.8859393176684558;
  constexpr double kCe1 = 0.4076059644443803;
  Tensor logits = Tensor::from({2, 3}, {0.2, -0.1, 0.4, 1.0, 0.0, -1.0}, true);
  const std::vector<int> targets{2, 0};
  const std::vector<double> ones{1.0, 1.0};

  CHECK(std::abs(cross_entropy(logits, targets, ones).item() - (kCe0 + kCe1) / 2) < 1e-12);
  CHECK(std::abs(cross_entropy(logits, targets, ones, CeReduction::Sum).item() -
                 (kCe0 + kCe1)) < 1e-12);

  const std::vector<double> first_only{1.0, 0.0};
  CHECK(std::abs(cross_entropy(logits, targets, first_only).item() - kCe0) < 1e-12);

  // A zero-weight row contributes nothing: its target is irrelevant.
  const std::vector<int> other_target{2, 1};
  CHECK(cross_entropy(logits, targets, first_only).item() ==
        cross_entropy(logits, other_target, first_only).item());
}

TEST_CASE("ops: cross_entropy on uniform logits equals ln(vocab)") {
  Tensor logits = Tensor::zeros({3, 7});
  const std::vector<int> targets{0, 3, 6};
  const std::vector<double> ones{1, 1, 1};
  CHECK(std::abs(cross_entropy(logits, targets, ones).item() - std::log(7.0)) < 1e-12);
}

TEST_CASE("ops: cross_entropy input validation") {
  Tensor logits = Tensor::zeros({2, 3});
  const std::vector<double> ones{1, 1};
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 3}, ones), ValueError);
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, -1}, ones), ValueError);
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 1}, std::vector<double>{0, 0}),
                  ValueError);
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0}, ones), DimensionError);
}

TEST_CASE("ops: cross_entropy gradients pass finite differences in both reductions") {
  Rng rng(41);
  Tensor logits = random_tensor(rng, {4, 6});
  const std::vector<int> targets{1, 5, 0, 3};
  const std::vector<double> weights{1.0, 0.0, 2.0, 1.0};
  for (auto red : {CeReduction::MeanOverMask, CeReduction::Sum}) {
    auto rep = tt::fd_check({{"logits", logits}},
                            [&] { return cross_entropy(logits, targets, weights, red); }, 42, 12);
    CHECK(rep.max_rel_err < 1e-7);
  }
}

TEST_CASE("ops: embedding_rows gathers values and scatter-adds gradients") {
  Tensor table = Tensor::from({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31}, true);
  const std::vector<int> ids{1, 1, 3};
  Tensor rows = embedding_rows(table, ids);
  CHECK(rows.data() == std::vector<double>{10, 11, 10, 11, 30, 31});

  backward(sum(rows));
  CHECK(table.grad() == std::vector<double>{0, 0, 2, 2, 0, 0, 1, 1});

  CHECK_THROWS_AS(embedding_rows(table, std::vector<int>{4}), ValueError);
  CHECK_THROWS_AS(embedding_rows(table, std::vector<int>{-1}), ValueError);

  Rng rng(51);
  Tensor t2 = random_tensor(rng, {5, 3});
  Tensor w = random_tensor(rng, {4, 3}, false);
  auto rep = tt::fd_check({{"table", t2}},
                          [&] {
                            return sum(mul(embedding_rows(t2, std::vector<int>{2, 0, 2, 4}), w));
                          },
                          52, 8);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("ops: rms_norm matches the closed form and differentiates") {
  Rng rng(61);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor gain = random_tensor(rng, {4});
  Tensor y = rms_norm(x, gain);
  for (long r = 0; r < 3; ++r) {
    double ms = 0.0;
    for (long c = 0; c < 4; ++c) ms += x.at(r, c) * x.at(r, c);
    ms /= 4.0;
    const double inv = 1.0 / std::sqrt(ms + kRmsNormEps);
    for (long c = 0; c < 4; ++c)
      CHECK(std::abs(y.at(r, c) - x.at(r, c) * inv * gain.at(c)) < 1e-12);
  }

  Tensor w = random_tensor(rng, {3, 4}, false);
  auto rep = tt::fd_check({{"x", x}, {"gain", gain}},
                          [&] { return sum(mul(rms_norm(x, gain), w)); }, 62, 10);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("ops: silu and softplus frozen values and stability") {
  Tensor x = Tensor::from({4}, {1.0, 0.0, -2.0, 800.0}, true);
  Tensor s = silu(x);
  CHECK(std::abs(s.at(0) - 0.7310585786300049) < 1e-12);
  CHECK(s.at(1) == 0.0);
  CHECK(std::abs(s.at(2) - (-0.23840584404423512)) < 1e-12);
  CHECK(s.at(3) == 800.0);  // sigmoid saturates to exactly 1

  Tensor sp = softplus(Tensor::from({4}, {0.0, -1.0, 800.0, -800.0}));
  CHECK(std::abs(sp.at(0) - kLn2) < 1e-15);
  CHECK(std::abs(sp.at(1) - 0.3132616875182228) < 1e-12);
  CHECK(sp.at(2) == 800.0);
  CHECK(sp.at(3) == 0.0);

  Rng rng(71);
  Tensor z = random_tensor(rng, {6});
  auto rep = tt::fd_check({{"z", z}}, [&] { return sum(mul(silu(z), softplus(z))); }, 72, 6);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("ops: rope is the identity at position zero") {
  Rng rng(81);
  Tensor x = random_tensor(rng, {3, 4});
  const std::vector<long> zeros{0, 0, 0};
  CHECK(tt::bitwise_equal(rope(x, zeros, 10000.0), x));
}

TEST_CASE("ops: rope rotates pairs by position-scaled frequencies") {
  constexpr double kCos1 = 0.5403023058681398;
  constexpr double kSin1 = 0.8414709848078965;
  Tensor unit = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor r1 = rope(unit, std::vector<long>{1}, 10000.0);
  CHECK(std::abs(r1.at(0) - kCos1) < 1e-12);
  CHECK(std::abs(r1.at(1) - kSin1) < 1e-12);

  // Pair i rotates by pos * base^(-2i/d): d=4, pos=2, base=10000 -> angles 2 and 0.02.
  Tensor x = Tensor::from({1, 4}, {1.0, 0.0, 1.0, 0.0});
  Tensor r2 = rope(x, std::vector<long>{2}, 10000.0);
  CHECK(std::abs(r2.at(0) - std::cos(2.0)) < 1e-12);
  CHECK(std::abs(r2.at(1) - std::sin(2.0)) < 1e-12);
  CHECK(std::abs(r2.at(2) - std::cos(0.02)) < 1e-12);
  CHECK(std::abs(r2.at(3) - std::sin(0.02)) < 1e-12);

  CHECK_THROWS_AS(rope(Tensor::zeros({1, 3}), std::vector<long>{0}, 10000.0), ConfigError);
  CHECK_THROWS_AS(rope(x, std::vector<long>{0, 1}, 10000.0), DimensionError);
}

TEST_CASE("ops: rope dot products depend only on relative offsets") {
  Rng rng(82);
  std::vector<double> q(8), k(8);
  for (auto& v : q) v = rng.normal();
  for (auto& v : k) v = rng.normal();
  auto dot_at = [&](long p) {
    std::vector<double> both(q);
    both.insert(both.end(), k.begin(), k.end());
    Tensor x = Tensor::from({2, 8}, both);
    Tensor r = rope(x, std::vector<long>{p, p + 3}, 10000.0);
    double acc = 0.0;
    for (long c = 0; c < 8; ++c) acc += r.at(0, c) * r.at(1, c);
    return acc;
  };
  const double base_dot = dot_at(0);
  for (long p : {1L, 7L, 40L, 200L}) CHECK(std::abs(dot_at(p) - base_dot) < 1e-10);
}

TEST_CASE("ops: rope gradient passes finite differences") {
  Rng rng(83);
  Tensor x = random_tensor(rng, {3, 6});
  Tensor w = random_tensor(rng, {3, 6}, false);
  const std::vector<long> pos{0, 4, 9};
  auto rep = tt::fd_check({{"x", x}},
                          [&] { return sum(mul(rope(x, pos, 10000.0), w)); }, 84, 10);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("ops: slice, concat and row reassemble exactly") {
  Rng rng(91);
  Tensor x = random_tensor(rng, {3, 5});
  std::vector<Tensor> parts{slice_cols(x, 0, 2), slice_cols(x, 2, 5)};
  CHECK(tt::bitwise_equal(concat_cols(parts), x));

  Tensor r = row(x, 1);
  REQUIRE(r.shape() == Shape{1, 5});
  for (long c = 0; c < 5; ++c) CHECK(r.at(0, c) == x.at(1, c));

  CHECK_THROWS_AS(slice_cols(x, 2, 2), DimensionError);
  CHECK_THROWS_AS(slice_cols(x, 0, 6), DimensionError);
  CHECK_THROWS_AS(row(x, 3), DimensionError);

  Tensor w = random_tensor(rng, {3, 5}, false);
  auto rep = tt::fd_check(
      {{"x", x}},
      [&] {
        std::vector<Tensor> ps{slice_cols(x, 0, 3), slice_cols(x, 3, 5)};
        return add(sum(mul(concat_cols(ps), w)), sum(row(x, 2)));
      },
      92, 10);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("ops: reductions and weighted_sum") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  CHECK(sum(x).item() == 6.0);
  CHECK(mean(x).item() == 2.0);

  Tensor a = Tensor::scalar(2.0, true);
  Tensor b = Tensor::scalar(5.0, true);
  std::vector<Tensor> xs{a, b};
  const std::vector<double> ws{3.0, -1.0};
  Tensor wsum = weighted_sum(xs, ws);
  CHECK(wsum.item() == 1.0);
  backward(wsum);
  CHECK(a.grad() == std::vector<double>{3.0});
  CHECK(b.grad() == std::vector<double>{-1.0});

  std::vector<Tensor> bad{Tensor::from({2}, {1, 2})};
  CHECK_THROWS_AS(weighted_sum(bad, std::vector<double>{1.0}), DimensionError);
  CHECK_THROWS_AS(weighted_sum(xs, std::vector<double>{1.0}), DimensionError);
  CHECK_THROWS_AS(weighted_sum(std::vector<Tensor>{}, std::vector<double>{}), ValueError);
}

TEST_CASE("adam: no gradient means no movement") {
  Tensor p = Tensor::from({2}, {1.5, -0.5}, true);
  Adam opt({p}, AdamConfig{});
  opt.step();
  opt.step();
  CHECK(p.data() == std::vector<double>{1.5, -0.5});
  CHECK(opt.step_count() == 2);
}

TEST_CASE("adam: first step matches the closed form") {
  // With unit gradient, bias correction cancels exactly:
  // theta1 = 1 - lr / (sqrt(1) + eps) with lr 0.1, eps 1e-8.
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p}, AdamConfig{.lr = 0.1});
  backward(sum(p));
  opt.step();
  CHECK(std::abs(p.item() - 0.900000001) < 1e-12);
}

TEST_CASE("adam: drives a quadratic to its minimum") {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p}, AdamConfig{.lr = 0.1});
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    backward(mul(p, p));
    opt.step();
  }
  CHECK(std::abs(p.item()) < 0.01);
}

TEST_CASE("adam: clip_grad_norm rescales to the threshold") {
  Tensor a = Tensor::from({2}, {0, 0}, true);
  Tensor b = Tensor::scalar(0, true);
  const std::vector<Tensor> params{a, b};

  backward(add(sum(mul(Tensor::from({2}, {3.0, 0.0}), a)), scale(b, 4.0)));
  // grads: a = [3, 0], b = [4] -> norm 5
  const double pre = clip_grad_norm(params, 1.0);
  CHECK(pre == 5.0);
  CHECK(std::abs(global_grad_norm(params) - 1.0) < 1e-12);
  CHECK(std::abs(a.grad()[0] - 0.6) < 1e-15);
  CHECK(std::abs(b.grad()[0] - 0.8) < 1e-15);

  // Below the threshold nothing changes.
  const double pre2 = clip_grad_norm(params, 10.0);
  CHECK(std::abs(pre2 - 1.0) < 1e-12);
  CHECK(std::abs(b.grad()[0] - 0.8) < 1e-15);
}
