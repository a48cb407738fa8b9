#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "c2f/rng.hpp"
#include "c2f/tensor.hpp"

using namespace c2f;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, bool rg = true) {
  return Tensor::randn(std::move(shape), 1.0, rng, rg);
}

// Central finite differences on every element of every grad-requiring input,
// against the analytic gradient of sum(f(inputs) * fixed_weights).
void gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
               std::vector<Tensor> inputs, double tol = 1e-6,
               double h = 1e-6) {
  Rng wrng(99);
  Tensor out = f(inputs);
  Tensor w = Tensor::randn(out.shape(), 1.0, wrng, false);
  Tensor loss = sum(mul(out, w));
  backward(loss);
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = inputs[t];
    if (!x.requires_grad()) continue;
    REQUIRE(x.has_grad());
    for (size_t i = 0; i < x.numel(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + h;
      const double lp = sum(mul(f(inputs), w)).item();
      x.data()[i] = orig - h;
      const double lm = sum(mul(f(inputs), w)).item();
      x.data()[i] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double ana = x.grad()[i];
      const double denom = std::max({std::abs(num), std::abs(ana), 1.0});
      INFO("input ", t, " element ", i, ": numeric ", num, " analytic ", ana);
      CHECK(std::abs(num - ana) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul matches a triple-loop oracle, all transpose cases") {
  Rng rng(1);
  const int m = 3, k = 4, n = 5;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Tensor a = rand_tensor(ta ? std::vector<int>{k, m}
                                : std::vector<int>{m, k},
                             rng, false);
      Tensor b = rand_tensor(tb ? std::vector<int>{n, k}
                                : std::vector<int>{k, n},
                             rng, false);
      Tensor c = matmul(a, b, ta, tb);
      REQUIRE(c.shape() == std::vector<int>{m, n});
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int p = 0; p < k; ++p) {
            const double av = ta ? a.data()[p * m + i] : a.data()[i * k + p];
            const double bv = tb ? b.data()[j * k + p] : b.data()[p * n + j];
            s += av * bv;
          }
          CHECK(c.data()[i * n + j] == doctest::Approx(s).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("batched matmul with a shared 2-D rhs") {
  Rng rng(2);
  Tensor a = rand_tensor({2, 3, 4}, rng, false);
  Tensor b = rand_tensor({4, 5}, rng, false);
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == std::vector<int>{2, 3, 5});
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (int p = 0; p < 4; ++p) {
          acc += a.data()[(s * 3 + i) * 4 + p] * b.data()[p * 5 + j];
        }
        CHECK(c.data()[(s * 3 + i) * 5 + j] ==
              doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Rng rng(3);
  Tensor a = rand_tensor({2, 3}, rng, false);
  Tensor b = rand_tensor({4, 2}, rng, false);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("linear equals matmul plus broadcast bias") {
  Rng rng(4);
  Tensor x = rand_tensor({2, 3, 4}, rng, false);
  Tensor w = rand_tensor({4, 6}, rng, false);
  Tensor b = rand_tensor({6}, rng, false);
  Tensor y1 = linear(x, w, b);
  Tensor y2 = add(matmul(x, w), b);
  REQUIRE(y1.shape() == y2.shape());
  for (size_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("multi_head_attention matches the unfused op composition") {
  Rng rng(5);
  const int B = 2, N = 3, w = 8, H = 2, dh = w / H;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = rand_tensor({B, N, w}, rng, false);
  Tensor k = rand_tensor({B, N, w}, rng, false);
  Tensor v = rand_tensor({B, N, w}, rng, false);
  const std::vector<double> valid = {1, 1, 0, 1, 1, 1};

  for (const std::vector<double>* mask :
       {static_cast<const std::vector<double>*>(nullptr), &valid}) {
    Tensor fused = multi_head_attention(q, k, v, H, sc, mask);
    auto split = [&](const Tensor& t) {
      return permute(reshape(t, {B, N, H, dh}), {0, 2, 1, 3});
    };
    Tensor scores = scale(matmul(split(q), split(k), false, true), sc);
    if (mask) scores = apply_key_padding(scores, *mask);
    Tensor ctx = reshape(
        permute(matmul(softmax(scores), split(v)), {0, 2, 1, 3}), {B, N, w});
    REQUIRE(fused.shape() == ctx.shape());
    for (size_t i = 0; i < ctx.numel(); ++i) {
      CHECK(fused.data()[i] == doctest::Approx(ctx.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows are positive and sum to one") {
  Rng rng(6);
  Tensor x = rand_tensor({4, 7}, rng, false);
  Tensor y = softmax(x);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) {
      const double p = y.data()[r * 7 + c];
      CHECK(p > 0.0);
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("log_softmax equals log of softmax") {
  Rng rng(7);
  Tensor x = rand_tensor({3, 5}, rng, false);
  Tensor a = log_softmax(x);
  Tensor b = softmax(x);
  for (size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.data()[i] == doctest::Approx(std::log(b.data()[i])).epsilon(1e-10));
  }
}

TEST_CASE("softmax is invariant to a per-row shift") {
  Rng rng(8);
  Tensor x = rand_tensor({2, 6}, rng, false);
  Tensor shifted = Tensor::from_data(x.shape(), x.data());
  for (auto& v : shifted.data()) v += 123.0;
  Tensor a = softmax(x), b = softmax(shifted);
  for (size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("add broadcasts a trailing suffix and rejects other shapes") {
  Rng rng(9);
  Tensor a = rand_tensor({2, 3, 4}, rng, false);
  Tensor b = rand_tensor({4}, rng, false);
  Tensor y = add(a, b);
  for (int i = 0; i < 2 * 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(y.data()[i * 4 + j] ==
            doctest::Approx(a.data()[i * 4 + j] + b.data()[j]));
    }
  }
  Tensor bad = rand_tensor({3}, rng, false);
  CHECK_THROWS_AS(add(a, bad), std::invalid_argument);
}

TEST_CASE("layer_norm output has zero mean and unit variance before affine") {
  Rng rng(10);
  const int w = 16;
  Tensor x = rand_tensor({3, w}, rng, false);
  Tensor gamma = Tensor::full({w}, 1.0);
  Tensor beta = Tensor::zeros({w});
  Tensor y = layer_norm(x, gamma, beta, 1e-6);
  for (int r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < w; ++i) mean += y.data()[r * w + i];
    mean /= w;
    for (int i = 0; i < w; ++i) {
      var += (y.data()[r * w + i] - mean) * (y.data()[r * w + i] - mean);
    }
    var /= w;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("gelu endpoints: gelu(0)=0 and large |x| asymptotes") {
  Tensor x = Tensor::from_data({3}, std::vector<double>{0.0, 10.0, -10.0});
  Tensor y = gelu(x);
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(y.data()[2] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("embedding copies rows and rejects out-of-range ids") {
  Rng rng(11);
  Tensor table = rand_tensor({5, 3}, rng, false);
  Tensor y = embedding(table, {2, 0, 4}, {3});
  for (int i = 0; i < 3; ++i) {
    const int id = std::vector<int>{2, 0, 4}[i];
    for (int j = 0; j < 3; ++j) {
      CHECK(y.data()[i * 3 + j] == table.data()[id * 3 + j]);
    }
  }
  CHECK_THROWS_AS(embedding(table, {5}, {1}), std::invalid_argument);
}

TEST_CASE("mean_axis1 and masked_mean_axis1 agree on an all-ones mask") {
  Rng rng(12);
  Tensor x = rand_tensor({2, 4, 3}, rng, false);
  Tensor m1 = mean_axis1(x);
  Tensor m2 = masked_mean_axis1(x, std::vector<double>(8, 1.0));
  for (size_t i = 0; i < m1.numel(); ++i) {
    CHECK(m1.data()[i] == doctest::Approx(m2.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("masked_mean_axis1 ignores masked rows") {
  Tensor x = Tensor::from_data(
      {1, 3, 2}, std::vector<double>{1, 2, 3, 4, 100, 100});
  Tensor y = masked_mean_axis1(x, {1, 1, 0});
  CHECK(y.data()[0] == doctest::Approx(2.0));
  CHECK(y.data()[1] == doctest::Approx(3.0));
}

TEST_CASE("l2_normalize produces unit rows") {
  Rng rng(13);
  Tensor x = rand_tensor({4, 6}, rng, false);
  Tensor y = l2_normalize(x);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += y.data()[r * 6 + c] * y.data()[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("gather_rows picks the requested token rows") {
  Rng rng(14);
  Tensor x = rand_tensor({2, 4, 3}, rng, false);
  Tensor y = gather_rows(x, {{1, 3}, {0, 2}});
  REQUIRE(y.shape() == std::vector<int>{2, 2, 3});
  const int picks[2][2] = {{1, 3}, {0, 2}};
  for (int b = 0; b < 2; ++b) {
    for (int k = 0; k < 2; ++k) {
      for (int j = 0; j < 3; ++j) {
        CHECK(y.data()[(b * 2 + k) * 3 + j] ==
              x.data()[(b * 4 + picks[b][k]) * 3 + j]);
      }
    }
  }
}

TEST_CASE("apply_key_padding pushes masked key columns to -1e30") {
  Rng rng(15);
  Tensor s = rand_tensor({1, 1, 2, 3}, rng, false);
  Tensor y = apply_key_padding(s, {1, 0, 1});
  for (int q = 0; q < 2; ++q) {
    CHECK(y.data()[q * 3 + 0] == s.data()[q * 3 + 0]);
    CHECK(y.data()[q * 3 + 1] == -1e30);
    CHECK(y.data()[q * 3 + 2] == s.data()[q * 3 + 2]);
  }
}

TEST_CASE("nll_diag averages the negative diagonal") {
  Tensor lp = Tensor::from_data({2, 2}, std::vector<double>{-1, -7, -9, -3});
  CHECK(nll_diag(lp).item() == doctest::Approx(2.0));
}

TEST_CASE("backward releases the tape") {
  Rng rng(16);
  Tensor x = rand_tensor({2, 2}, rng, true);
  Tensor loss = sum(gelu(x));
  backward(loss);
  CHECK(loss.impl()->parents.empty());
  CHECK_FALSE(static_cast<bool>(loss.impl()->backward_fn));
}

TEST_CASE("gradients accumulate across two backward passes") {
  Rng rng(17);
  Tensor x = rand_tensor({3}, rng, true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 3.0)));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(5.0));
}

// ----- finite-difference gradient checks ------------------------------------

TEST_CASE("gradcheck: elementwise and scaling ops") {
  Rng rng(20);
  gradcheck([](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
            {rand_tensor({2, 3}, rng), rand_tensor({3}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
            {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return scale(in[0], -1.7); },
            {rand_tensor({4}, rng)});
  gradcheck(
      [](const std::vector<Tensor>& in) { return scale_by(in[0], in[1]); },
      {rand_tensor({2, 2}, rng), Tensor::scalar(0.7, true)});
  gradcheck([](const std::vector<Tensor>& in) { return c2f::exp(in[0]); },
            {rand_tensor({2, 3}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return gelu(in[0]); },
            {rand_tensor({2, 3}, rng)});
}

TEST_CASE("gradcheck: matmul in every transpose configuration") {
  Rng rng(21);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      gradcheck(
          [ta, tb](const std::vector<Tensor>& in) {
            return matmul(in[0], in[1], ta, tb);
          },
          {rand_tensor(ta ? std::vector<int>{4, 3} : std::vector<int>{3, 4},
                       rng),
           rand_tensor(tb ? std::vector<int>{5, 4} : std::vector<int>{4, 5},
                       rng)});
    }
  }
  // batched with shared rhs
  gradcheck([](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
            {rand_tensor({2, 3, 4}, rng), rand_tensor({4, 2}, rng)});
}

TEST_CASE("gradcheck: linear and multi_head_attention") {
  Rng rng(22);
  gradcheck(
      [](const std::vector<Tensor>& in) {
        return linear(in[0], in[1], in[2]);
      },
      {rand_tensor({2, 3, 4}, rng), rand_tensor({4, 5}, rng),
       rand_tensor({5}, rng)});
  const std::vector<double> valid = {1, 1, 0, 1, 0, 1};
  gradcheck(
      [](const std::vector<Tensor>& in) {
        return multi_head_attention(in[0], in[1], in[2], 2, 0.5);
      },
      {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 3, 4}, rng),
       rand_tensor({2, 3, 4}, rng)},
      1e-5);
  gradcheck(
      [&valid](const std::vector<Tensor>& in) {
        return multi_head_attention(in[0], in[1], in[2], 2, 0.5, &valid);
      },
      {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 3, 4}, rng),
       rand_tensor({2, 3, 4}, rng)},
      1e-5);
}

TEST_CASE("gradcheck: shape, normalization, and pooling ops") {
  Rng rng(23);
  gradcheck(
      [](const std::vector<Tensor>& in) { return reshape(in[0], {3, 2}); },
      {rand_tensor({2, 3}, rng)});
  gradcheck(
      [](const std::vector<Tensor>& in) { return permute(in[0], {2, 0, 1}); },
      {rand_tensor({2, 3, 4}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return softmax(in[0]); },
            {rand_tensor({3, 5}, rng)}, 1e-5);
  gradcheck([](const std::vector<Tensor>& in) { return log_softmax(in[0]); },
            {rand_tensor({3, 5}, rng)}, 1e-5);
  gradcheck(
      [](const std::vector<Tensor>& in) {
        return layer_norm(in[0], in[1], in[2], 1e-6);
      },
      {rand_tensor({3, 4}, rng), rand_tensor({4}, rng),
       rand_tensor({4}, rng)},
      1e-4);
  gradcheck([](const std::vector<Tensor>& in) { return mean_axis1(in[0]); },
            {rand_tensor({2, 3, 4}, rng)});
  const std::vector<double> mask = {1, 0, 1, 1, 1, 0};
  gradcheck(
      [&mask](const std::vector<Tensor>& in) {
        return masked_mean_axis1(in[0], mask);
      },
      {rand_tensor({2, 3, 4}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return l2_normalize(in[0]); },
            {rand_tensor({3, 4}, rng)}, 1e-5);
  gradcheck(
      [](const std::vector<Tensor>& in) {
        return gather_rows(in[0], {{0, 2}, {1, 1}});
      },
      {rand_tensor({2, 3, 4}, rng)});
  gradcheck(
      [](const std::vector<Tensor>& in) {
        return embedding(in[0], {1, 0, 1}, {3});
      },
      {rand_tensor({3, 4}, rng)});
  gradcheck([](const std::vector<Tensor>& in) { return nll_diag(in[0]); },
            {rand_tensor({3, 3}, rng)});
}
