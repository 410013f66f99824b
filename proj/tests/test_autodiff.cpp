#include <cmath>
#include <functional>
#include <random>

#include "coupledgeom/autodiff.hpp"
#include "coupledgeom/errors.hpp"
#include "doctest.h"

using namespace coupled;
using namespace coupled::ad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Builds loss = sum(f(inputs) * w) on a fresh tape for fixed random weights w.
using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

double evaluate(const Graph& f, const std::vector<Tensor>& inputs, const Tensor& w) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.parameter(x));
  const Var out = f(t, vars);
  return sum(mul(out, t.constant(w))).value().item();
}

// Worst relative error between tape gradients and central differences with
// step 1e-6 (1 + |x|).
double gradient_error(const Graph& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng) {
  Tensor w;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(probe.constant(x));
    w = random_tensor(f(probe, vars).value().shape(), rng, 0.5, 1.5);
  }
  Tape t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.parameter(x));
  t.backward(sum(mul(f(t, vars), t.constant(w))));
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor g = t.grad(vars[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      std::vector<Tensor> up = inputs, down = inputs;
      const double h = 1e-6 * (1.0 + std::abs(inputs[a][i]));
      up[a][i] += h;
      down[a][i] -= h;
      const double fd = (evaluate(f, up, w) - evaluate(f, down, w)) / (2 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("examples") {
  {
    Tape t;
    const Var x = t.parameter(Tensor({3}, {1, 2, 3}));
    t.backward(sum(square(x)));
    CHECK(t.grad(x).data() == std::vector<double>{2, 4, 6});
  }
  {
    Tape t;
    const Var u = t.parameter(Tensor::scalar(1.0));
    t.backward(coupled_exp_p(u, 1.0));
    CHECK(t.grad(u).item() == doctest::Approx(1.0).epsilon(1e-15));
  }
  {
    Tape t;
    const Var x = t.parameter(Tensor::scalar(4.0));
    t.backward(coupled_log_p(x, 0.5));
    CHECK(t.grad(x).item() == doctest::Approx(0.5).epsilon(1e-15));
  }
  {
    // constant subgraph contributes nothing
    Tape t;
    const Var p = t.parameter(Tensor({2}, {0.3, -0.1}));
    const Var c = t.constant(Tensor({2}, {5.0, 7.0}));
    const Var loss = add(sum(exp(c)), scale(sum(mul(p, p)), 0.0));
    t.backward(loss);
    CHECK(t.grad(p).data() == std::vector<double>{0.0, 0.0});
    CHECK(t.grad(c).data() == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("contract errors") {
  Tape t;
  const Var a = t.parameter(Tensor({2}, {1, 2}));
  const Var b = t.parameter(Tensor({3}, {1, 2, 3}));
  CHECK_THROWS_AS(add(a, b), ContractError);
  CHECK_THROWS_AS(mul(a, b), ContractError);
  CHECK_THROWS_AS(matmul(t.parameter(Tensor::zeros({2, 3})), t.parameter(Tensor::zeros({2, 3}))), ContractError);
  CHECK_THROWS_AS(affine(t.parameter(Tensor::zeros({2, 3})), t.parameter(Tensor::zeros({3, 4})),
                         t.parameter(Tensor::zeros({3}))),
                  ContractError);
  CHECK_THROWS_AS(t.backward(a), ContractError);
  CHECK_THROWS_AS(coupled_log_p(t.constant(Tensor::scalar(0.0)), 0.5), DomainError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ContractError);
  Tape other;
  CHECK_THROWS_AS(add(a, other.parameter(Tensor({2}, {0, 0}))), ContractError);

  const Var loss = sum(a);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), ContractError);
  CHECK_THROWS_AS(sum(b), ContractError);
}

TEST_CASE("non-finite diagnostics") {
  Tape t;
  const Var x = t.parameter(Tensor({2}, {1.0, -1.0}));
  const Var y = exp(x);
  CHECK_FALSE(t.first_non_finite().has_value());
  const Var z = log(sub(y, y));
  sqrt(x);
  const auto bad = t.first_non_finite();
  REQUIRE(bad.has_value());
  CHECK(bad->id == z.id);
  CHECK(std::string(op_name(bad->op)) == "log");
}

TEST_CASE("clamp boundaries") {
  Tape t;
  const Var u = t.parameter(Tensor({3}, {-3.0, -2.0, 0.5}));
  const Var v = coupled_exp_p(u, 0.5);
  CHECK(v.value()[0] == 0.0);
  CHECK(v.value()[1] == 0.0);
  t.backward(sum(v));
  const Tensor g = t.grad(u);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == doctest::Approx(std::pow(1.25, 1.0)).epsilon(1e-14));
  CHECK(g.all_finite());

  Tape t2;
  const Var x = t2.parameter(Tensor({3}, {-1.0, 0.0, 2.0}));
  t2.backward(sum(clamp_min(x, 0.5)));
  CHECK(t2.grad(x).data() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("every primitive matches finite differences") {
  std::mt19937_64 rng(42);
  const std::vector<std::size_t> m{3, 4};
  auto pos = [&] { return random_tensor(m, rng, 0.2, 3.0); };
  auto any = [&] { return random_tensor(m, rng, -2.0, 2.0); };
  struct Case {
    const char* name;
    Graph f;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases{
      {"add", [](Tape&, auto& v) { return add(v[0], v[1]); }, {any(), any()}},
      {"sub", [](Tape&, auto& v) { return sub(v[0], v[1]); }, {any(), any()}},
      {"mul", [](Tape&, auto& v) { return mul(v[0], v[1]); }, {any(), any()}},
      {"div", [](Tape&, auto& v) { return div(v[0], v[1]); }, {any(), pos()}},
      {"matmul", [](Tape&, auto& v) { return matmul(v[0], v[1]); },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({4, 2}, rng, -1, 1)}},
      {"affine", [](Tape&, auto& v) { return affine(v[0], v[1], v[2]); },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({4, 2}, rng, -1, 1), random_tensor({2}, rng, -1, 1)}},
      {"leaky_relu", [](Tape&, auto& v) { return leaky_relu(v[0], 0.01); }, {any()}},
      {"sigmoid", [](Tape&, auto& v) { return sigmoid(v[0]); }, {any()}},
      {"square", [](Tape&, auto& v) { return square(v[0]); }, {any()}},
      {"sum", [](Tape&, auto& v) { return sum(v[0]); }, {any()}},
      {"mean", [](Tape&, auto& v) { return mean(v[0]); }, {any()}},
      {"scale", [](Tape&, auto& v) { return scale(v[0], -1.7); }, {any()}},
      {"add_scalar", [](Tape&, auto& v) { return add_scalar(v[0], 0.3); }, {any()}},
      {"sqrt", [](Tape&, auto& v) { return sqrt(v[0]); }, {pos()}},
      {"clamp_min", [](Tape&, auto& v) { return clamp_min(v[0], 0.1); }, {any()}},
      {"exp", [](Tape&, auto& v) { return exp(v[0]); }, {any()}},
      {"log", [](Tape&, auto& v) { return log(v[0]); }, {pos()}},
      {"log1p", [](Tape&, auto& v) { return log1p(v[0]); }, {pos()}},
      {"row_sum", [](Tape&, auto& v) { return row_sum(v[0]); }, {any()}},
  };
  for (double k : {0.0, 0.5, 1.0, 3.0}) {
    cases.push_back({"coupled_log_p", [k](Tape&, auto& v) { return coupled_log_p(v[0], k); }, {pos()}});
    cases.push_back({"coupled_exp_p", [k](Tape&, auto& v) { return coupled_exp_p(v[0], k); },
                     {random_tensor(m, rng, -0.3, 2.0)}});
    cases.push_back({"coupled_log_exp", [k](Tape&, auto& v) { return coupled_log_exp(v[0], k); }, {any()}});
  }
  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(gradient_error(c.f, c.inputs, rng) <= 1e-4);
  }
}

TEST_CASE("two-layer MLP matches finite differences") {
  std::mt19937_64 rng(7);
  const Graph mlp = [](Tape&, const std::vector<Var>& v) {
    const Var h = leaky_relu(affine(v[0], v[1], v[2]), 0.01);
    const Var y = sigmoid(affine(h, v[3], v[4]));
    return mean(square(sub(y, v[5])));
  };
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> in{random_tensor({5, 4}, rng, -1, 1), random_tensor({4, 6}, rng, -1, 1),
                           random_tensor({6}, rng, -0.5, 0.5), random_tensor({6, 3}, rng, -1, 1),
                           random_tensor({3}, rng, -0.5, 0.5), random_tensor({5, 3}, rng, 0, 1)};
    CHECK(gradient_error(mlp, in, rng) <= 1e-4);
  }
}

TEST_CASE("shared subexpressions accumulate") {
  Tape t;
  const Var x = t.parameter(Tensor::scalar(3.0));
  const Var y = mul(x, x);
  t.backward(add(y, mul(y, x)));  // x^2 + x^3
  CHECK(t.grad(x).item() == doctest::Approx(2 * 3.0 + 3 * 9.0));
}
