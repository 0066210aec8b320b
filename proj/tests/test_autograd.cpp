#include <doctest.h>

#include "chatzero/autograd.hpp"
#include "chatzero/errors.hpp"
#include "chatzero/random.hpp"
#include "gradcheck.hpp"

using namespace chatzero;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data) x = static_cast<float>(scale * rng.normal());
  return m;
}

// Random linear projection of x to a scalar.
ad::Var project(ad::Tape& t, ad::Var x, std::uint64_t seed) {
  Rng rng(seed);
  ad::Var u = t.constant(random_matrix(1, x.rows(), rng));
  ad::Var w = t.constant(random_matrix(x.cols(), 1, rng));
  return ad::matmul(ad::matmul(u, x), w);
}

constexpr double kTol = 2e-2;
constexpr double kEps = 1e-2;

}  // namespace

TEST_CASE("dense ops pass finite-difference checks") {
  Rng rng(11);
  const auto a = random_matrix(4, 3, rng), b = random_matrix(3, 5, rng), bt = random_matrix(5, 3, rng);
  const auto row = random_matrix(1, 5, rng);

  CHECK(gradcheck::max_relative_error({a, b}, [](ad::Tape& t, const auto& v) { return project(t, ad::matmul(v[0], v[1]), 1); },
                                      kEps) < kTol);
  CHECK(gradcheck::max_relative_error({a, bt},
                                      [](ad::Tape& t, const auto& v) { return project(t, ad::matmul_bt(v[0], v[1]), 2); },
                                      kEps) < kTol);
  CHECK(gradcheck::max_relative_error(
            {a, b, row},
            [](ad::Tape& t, const auto& v) {
              auto y = ad::add_row(ad::matmul(v[0], v[1]), v[2]);
              return project(t, ad::gelu(ad::add(y, ad::scale(y, 0.5f))), 3);
            },
            kEps) < kTol);
}

TEST_CASE("layer norm, gather, concat and mean_rows pass finite-difference checks") {
  Rng rng(12);
  const auto x = random_matrix(5, 6, rng), g = random_matrix(1, 6, rng), bias = random_matrix(1, 6, rng);
  CHECK(gradcheck::max_relative_error(
            {x, g, bias},
            [](ad::Tape& t, const auto& v) { return project(t, ad::layer_norm(v[0], v[1], v[2]), 4); }, kEps) < kTol);
  CHECK(gradcheck::max_relative_error(
            {x},
            [](ad::Tape& t, const auto& v) {
              const std::vector<int> rows{4, 0, 4, 2};
              auto gathered = ad::gather_rows(v[0], rows);
              auto joined = ad::concat_rows({gathered, v[0]});
              return project(t, ad::mean_rows(joined, {{0, 1}, {2, 3, 4, 8}, {5}}), 5);
            },
            kEps) < kTol);
}

TEST_CASE("embedding and nll pass finite-difference checks") {
  Rng rng(13);
  const auto table = random_matrix(7, 4, rng);
  const auto w = random_matrix(4, 7, rng);
  CHECK(gradcheck::max_relative_error(
            {table, w},
            [](ad::Tape& t, const auto& v) {
              const std::vector<int> ids{1, 3, 3, 6};
              const std::vector<int> targets{2, -1, 0, 6};
              return ad::nll_sum(ad::matmul(ad::embedding(v[0], ids), v[1]), targets);
            },
            kEps) < kTol);
}

TEST_CASE("attention passes finite-difference checks") {
  Rng rng(14);
  for (bool causal : {false, true}) {
    kernels::AttentionShape s{2, 3, 3, 4, 2, causal};
    const auto q = random_matrix(6, 4, rng), k = random_matrix(6, 4, rng), v = random_matrix(6, 4, rng);
    CHECK(gradcheck::max_relative_error(
              {q, k, v},
              [s](ad::Tape& t, const auto& x) { return project(t, ad::attention(x[0], x[1], x[2], {3, 2}, s), 6); },
              kEps) < kTol);
  }
}

TEST_CASE("gumbel softmax and cosine sums pass finite-difference checks") {
  Rng rng(15);
  const auto logits = random_matrix(3, 5, rng);
  const auto noise = random_matrix(3, 5, rng);
  CHECK(gradcheck::max_relative_error(
            {logits},
            [&noise](ad::Tape& t, const auto& v) { return project(t, ad::gumbel_softmax(v[0], noise, 0.7f), 7); },
            kEps) < kTol);
  const auto x = random_matrix(4, 6, rng), n = random_matrix(3, 6, rng);
  CHECK(gradcheck::max_relative_error({x}, [](ad::Tape&, const auto& v) { return ad::pairwise_cosine_sum(v[0]); },
                                      kEps) < kTol);
  CHECK(gradcheck::max_relative_error(
            {x, n}, [](ad::Tape&, const auto& v) { return ad::cross_cosine_sum(v[0], v[1]); }, kEps) < kTol);
}

TEST_CASE("hard gumbel is one-hot forward with the soft gradient") {
  ad::Tape tape;
  Matrix logits(2, 3);
  logits.data = {0.1f, 2.0f, -1.0f, 0.5f, 0.4f, 0.3f};
  auto x = tape.variable(logits);
  auto y = ad::gumbel_softmax(x, Matrix(2, 3), 1.0f, true);
  CHECK(y.value().data == std::vector<float>{0, 1, 0, 1, 0, 0});
  tape.backward(project(tape, y, 9));
  double mag = 0;
  for (float g : tape.grad(x.id()).data) mag += std::abs(g);
  CHECK(mag > 0.0);
}

TEST_CASE("autograd rejects bad shapes and zero vectors") {
  ad::Tape tape;
  auto a = tape.variable(Matrix(2, 3, 1.0f));
  auto b = tape.variable(Matrix(2, 2, 1.0f));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
  CHECK_THROWS_AS(ad::pairwise_cosine_sum(tape.variable(Matrix(2, 3))), DegenerateInputError);
  CHECK_THROWS_AS(ad::gumbel_softmax(a, Matrix(2, 3), 0.0f), ConfigError);
}

TEST_CASE("parameters receive accumulated gradients") {
  Parameter p("w", 1, 1);
  p.value.data[0] = 3.0f;
  for (int i = 0; i < 2; ++i) {
    ad::Tape tape;
    auto w = tape.parameter(p);
    tape.backward(ad::sum({ad::scale(w, 2.0f), w}));
  }
  CHECK(p.grad.data[0] == doctest::Approx(6.0));
  ad::Tape inference(false);
  auto w = inference.parameter(p);
  CHECK_FALSE(ad::scale(w, 2.0f).requires_grad());
}
