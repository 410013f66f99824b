#include "coupledgeom/autodiff.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/errors.hpp"

namespace coupled::ad {

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw ContractError("Tensor: rank above 2 is not supported");
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size()) {
    throw ContractError("Tensor: shape " + shape_string(shape_) + " needs " + std::to_string(n) + " values, got " +
                        std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(data_.size()) + " values");
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ']';
  return s.str();
}

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatmul: return "matmul";
    case Op::kAffine: return "affine";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSqrt: return "sqrt";
    case Op::kClampMin: return "clamp_min";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kLog1p: return "log1p";
    case Op::kRowSum: return "row_sum";
    case Op::kCoupledLogP: return "coupled_log_p";
    case Op::kCoupledExpP: return "coupled_exp_p";
    case Op::kCoupledLogExp: return "coupled_log_exp";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractError("Var: not attached to a tape");
  return tape->value(*this);
}

Var Tape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.trainable = true;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("Tape: variable belongs to another tape");
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id].value;
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  if (v.id < grads_.size() && grads_[v.id].size() == nodes_[v.id].value.size()) return grads_[v.id];
  return Tensor::zeros(nodes_[v.id].value.shape());
}

Var Tape::record(Op op, std::vector<std::size_t> inputs, Tensor value, double p0, double p1) {
  if (backward_done_) throw ContractError("Tape: cannot record after backward");
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.p0 = p0;
  n.p1 = p1;
  for (std::size_t i : inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::optional<Tape::NonFinite> Tape::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) return NonFinite{i, nodes_[i].op};
  }
  return std::nullopt;
}

void Tape::accumulate(std::size_t id, std::vector<double>&& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor& dst = grads_[id];
  if (dst.size() != g.size()) {
    dst = Tensor(nodes_[id].value.shape(), std::move(g));
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::accumulate(std::size_t id, const Tensor& g) { accumulate(id, std::vector<double>(g.data())); }

void Tape::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw ContractError("Tape::backward: already called on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("Tape::backward: loss must be scalar, got shape " + shape_string(nodes_[loss.id].value.shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  if (!nodes_[loss.id].needs_grad) return;
  grads_[loss.id] = Tensor(nodes_[loss.id].value.shape(), {1.0});
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.op == Op::kLeaf || !node.needs_grad || grads_[id].size() == 0) continue;
    propagate(node, grads_[id]);
    if (!node.trainable) grads_[id] = Tensor();  // interior gradients are not kept
  }
}

void Tape::propagate(const Node& node, const Tensor& g) {
  const auto& in = node.inputs;
  const Tensor& y = node.value;
  const std::size_t n = g.size();
  auto elementwise = [&](std::size_t which, auto&& dfdx) {
    if (!nodes_[in[which]].needs_grad) return;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = g[i] * dfdx(i);
    accumulate(in[which], std::move(out));
  };
  switch (node.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd:
      elementwise(0, [](std::size_t) { return 1.0; });
      elementwise(1, [](std::size_t) { return 1.0; });
      return;
    case Op::kSub:
      elementwise(0, [](std::size_t) { return 1.0; });
      elementwise(1, [](std::size_t) { return -1.0; });
      return;
    case Op::kMul: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      elementwise(0, [&](std::size_t i) { return b[i]; });
      elementwise(1, [&](std::size_t i) { return a[i]; });
      return;
    }
    case Op::kDiv: {
      const Tensor& b = nodes_[in[1]].value;
      elementwise(0, [&](std::size_t i) { return 1.0 / b[i]; });
      elementwise(1, [&](std::size_t i) { return -y[i] / b[i]; });
      return;
    }
    case Op::kMatmul:
    case Op::kAffine: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& w = nodes_[in[1]].value;
      const std::size_t rows = a.rows(), inner = a.cols(), cols = w.cols();
      if (nodes_[in[0]].needs_grad) {
        std::vector<double> da(a.size(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < inner; ++k) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c] * w[k * cols + c];
            da[r * inner + k] = s;
          }
        accumulate(in[0], std::move(da));
      }
      if (nodes_[in[1]].needs_grad) {
        std::vector<double> dw(w.size(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < inner; ++k) {
            const double av = a[r * inner + k];
            if (av == 0.0) continue;
            for (std::size_t c = 0; c < cols; ++c) dw[k * cols + c] += av * g[r * cols + c];
          }
        accumulate(in[1], std::move(dw));
      }
      if (node.op == Op::kAffine && nodes_[in[2]].needs_grad) {
        std::vector<double> db(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
        accumulate(in[2], std::move(db));
      }
      return;
    }
    case Op::kLeakyRelu: {
      const Tensor& x = nodes_[in[0]].value;
      elementwise(0, [&](std::size_t i) { return x[i] > 0.0 ? 1.0 : node.p0; });
      return;
    }
    case Op::kSigmoid:
      elementwise(0, [&](std::size_t i) { return y[i] * (1.0 - y[i]); });
      return;
    case Op::kSquare: {
      const Tensor& x = nodes_[in[0]].value;
      elementwise(0, [&](std::size_t i) { return 2.0 * x[i]; });
      return;
    }
    case Op::kSum:
    case Op::kMean: {
      if (!nodes_[in[0]].needs_grad) return;
      const std::size_t m = nodes_[in[0]].value.size();
      const double v = node.op == Op::kSum ? g[0] : g[0] / static_cast<double>(m);
      accumulate(in[0], std::vector<double>(m, v));
      return;
    }
    case Op::kScale:
      elementwise(0, [&](std::size_t) { return node.p0; });
      return;
    case Op::kAddScalar:
      elementwise(0, [](std::size_t) { return 1.0; });
      return;
    case Op::kSqrt:
      elementwise(0, [&](std::size_t i) { return 0.5 / y[i]; });
      return;
    case Op::kClampMin: {
      const Tensor& x = nodes_[in[0]].value;
      elementwise(0, [&](std::size_t i) { return x[i] >= node.p0 ? 1.0 : 0.0; });
      return;
    }
    case Op::kExp:
      elementwise(0, [&](std::size_t i) { return y[i]; });
      return;
    case Op::kLog: {
      const Tensor& x = nodes_[in[0]].value;
      elementwise(0, [&](std::size_t i) { return 1.0 / x[i]; });
      return;
    }
    case Op::kLog1p: {
      const Tensor& x = nodes_[in[0]].value;
      elementwise(0, [&](std::size_t i) { return 1.0 / (1.0 + x[i]); });
      return;
    }
    case Op::kRowSum: {
      if (!nodes_[in[0]].needs_grad) return;
      const Tensor& x = nodes_[in[0]].value;
      std::vector<double> dx(x.size());
      const std::size_t cols = x.cols();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = g[i / cols];
      accumulate(in[0], std::move(dx));
      return;
    }
    case Op::kCoupledLogP: {
      const Tensor& x = nodes_[in[0]].value;
      const double k = node.p0;
      elementwise(0, [&](std::size_t i) { return std::pow(x[i], k - 1.0); });
      return;
    }
    case Op::kCoupledExpP: {
      const Tensor& u = nodes_[in[0]].value;
      const double k = node.p0;
      elementwise(0, [&](std::size_t i) {
        if (k == 0.0) return y[i];
        if (1.0 + k * u[i] <= 0.0) return 0.0;
        return coupled_exp_power(u[i], k, 1.0 - k);
      });
      return;
    }
    case Op::kCoupledLogExp: {
      const Tensor& u = nodes_[in[0]].value;
      const double k = node.p0;
      elementwise(0, [&](std::size_t i) { return std::exp(k * u[i]); });
      return;
    }
  }
}

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("autodiff: variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("autodiff: operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

template <class F>
Var unary(Var x, Op op, F f, double p0 = 0.0) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape(), std::vector<double>(xv.size()));
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return t.record(op, {x.id}, std::move(out), p0);
}

template <class F>
Var binary(Var a, Var b, Op op, F f, const char* name) {
  Tape& t = tape_of(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, name);
  Tensor out(av.shape(), std::vector<double>(av.size()));
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  return t.record(op, {a.id, b.id}, std::move(out));
}

Tensor matmul_values(const Tensor& a, const Tensor& w, const char* name) {
  if (a.rank() != 2 || w.rank() != 2 || a.cols() != w.rows()) {
    throw ContractError(std::string(name) + ": cannot multiply " + shape_string(a.shape()) + " by " +
                        shape_string(w.shape()));
  }
  const std::size_t rows = a.rows(), inner = a.cols(), cols = w.cols();
  Tensor out = Tensor::zeros({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = a[r * inner + k];
      if (av == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += av * w[k * cols + c];
    }
  return out;
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, Op::kAdd, [](double x, double y) { return x + y; }, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Op::kSub, [](double x, double y) { return x - y; }, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Op::kMul, [](double x, double y) { return x * y; }, "mul"); }
Var div(Var a, Var b) { return binary(a, b, Op::kDiv, [](double x, double y) { return x / y; }, "div"); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(Op::kMatmul, {a.id, b.id}, matmul_values(t.value(a), t.value(b), "matmul"));
}

Var affine(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  Tensor out = matmul_values(t.value(x), t.value(w), "affine");
  const Tensor& bv = t.value(b);
  if (bv.size() != out.cols()) {
    throw ContractError("affine: bias has " + std::to_string(bv.size()) + " entries, expected " +
                        std::to_string(out.cols()));
  }
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return t.record(Op::kAffine, {x.id, w.id, b.id}, std::move(out));
}

Var leaky_relu(Var x, double slope) {
  return unary(x, Op::kLeakyRelu, [slope](double v) { return v > 0.0 ? v : slope * v; }, slope);
}

Var sigmoid(Var x) {
  return unary(x, Op::kSigmoid, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Var square(Var x) { return unary(x, Op::kSquare, [](double v) { return v * v; }); }

Var sum(Var x) {
  Tape& t = tape_of(x);
  const auto& d = t.value(x).data();
  return t.record(Op::kSum, {x.id}, Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0)));
}

Var mean(Var x) {
  Tape& t = tape_of(x);
  const auto& d = t.value(x).data();
  if (d.empty()) throw ContractError("mean: empty tensor");
  return t.record(Op::kMean, {x.id},
                  Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size())));
}

Var scale(Var x, double c) { return unary(x, Op::kScale, [c](double v) { return c * v; }, c); }
Var add_scalar(Var x, double c) { return unary(x, Op::kAddScalar, [c](double v) { return v + c; }, c); }
Var sqrt(Var x) { return unary(x, Op::kSqrt, [](double v) { return std::sqrt(v); }); }

Var clamp_min(Var x, double floor) {
  return unary(x, Op::kClampMin, [floor](double v) { return v < floor ? floor : v; }, floor);
}

Var exp(Var x) { return unary(x, Op::kExp, [](double v) { return std::exp(v); }); }
Var log(Var x) { return unary(x, Op::kLog, [](double v) { return std::log(v); }); }
Var log1p(Var x) { return unary(x, Op::kLog1p, [](double v) { return std::log1p(v); }); }

Var row_sum(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2) throw ContractError("row_sum: expects a matrix, got " + shape_string(xv.shape()));
  Tensor out = Tensor::zeros({xv.rows(), 1});
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[r] += xv(r, c);
  return t.record(Op::kRowSum, {x.id}, std::move(out));
}

Var coupled_log_p(Var x, double kappa) {
  return unary(x, Op::kCoupledLogP, [kappa](double v) { return coupled::coupled_log(v, kappa); }, kappa);
}

Var coupled_exp_p(Var u, double kappa) {
  return unary(u, Op::kCoupledExpP, [kappa](double v) { return coupled::coupled_exp(v, kappa); }, kappa);
}

Var coupled_log_exp(Var u, double kappa) {
  return unary(u, Op::kCoupledLogExp, [kappa](double v) { return coupled::coupled_log_of_exp(v, kappa); }, kappa);
}

}  // namespace coupled::ad
