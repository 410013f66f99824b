#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace coupled::ad {

// Dense row-major tensor of rank 0, 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // rank 2: rows x cols; rank 1: 1 x n; rank 0: 1 x 1
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double item() const;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kAffine,
  kLeakyRelu,
  kSigmoid,
  kSquare,
  kSum,
  kMean,
  kScale,
  kAddScalar,
  kSqrt,
  kClampMin,
  kExp,
  kLog,
  kLog1p,
  kRowSum,
  kCoupledLogP,
  kCoupledExpP,
  kCoupledLogExp,
};

const char* op_name(Op op) noexcept;

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. Gradients are accumulated for parameters only.
  Var parameter(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() loss. Kept for parameters only; other
  // nodes and unreached parameters read as zeros.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar loss. A second call on the same tape throws
  // ContractError; rebuild the graph for a new gradient.
  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

  std::size_t size() const noexcept { return nodes_.size(); }

  struct NonFinite {
    std::size_t id;
    Op op;
  };
  // First node (in forward order) whose value holds a NaN or Inf.
  std::optional<NonFinite> first_non_finite() const;

  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, double p0 = 0.0, double p1 = 0.0);

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    double p0 = 0.0;
    double p1 = 0.0;
    bool trainable = false;
    bool needs_grad = false;
  };

  void check_owner(Var v) const;
  void propagate(const Node& node, const Tensor& g);
  void accumulate(std::size_t id, const Tensor& g);
  void accumulate(std::size_t id, std::vector<double>&& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

// Elementwise; shapes must match exactly.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
// (n x k) (k x m)
Var matmul(Var a, Var b);
// x W + b with x (n x k), W (k x m), b of m entries broadcast over rows.
Var affine(Var x, Var w, Var b);
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var sqrt(Var x);
// max(x, floor); the derivative is 0 where x < floor.
Var clamp_min(Var x, double floor);
Var exp(Var x);
Var log(Var x);
Var log1p(Var x);
// (n x m) -> (n x 1)
Var row_sum(Var x);
// ln_k(x), d/dx = x^(k-1). x > 0 (DomainError otherwise).
Var coupled_log_p(Var x, double kappa);
// exp_k(u), d/du = exp_k(u)^(1-k); 0 on the clamped side 1 + k u <= 0.
Var coupled_exp_p(Var u, double kappa);
// ln_k(e^u) = expm1(k u)/k, d/du = e^(k u).
Var coupled_log_exp(Var u, double kappa);

}  // namespace coupled::ad
