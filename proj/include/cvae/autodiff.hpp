#pragma once

// Minimal reverse-mode gradient engine over dense-layer computation graphs.
//
// The Graph is an eager tape: each op computes its value when the node is
// appended, so insertion order is a topological order and backward() is a
// single reverse sweep. Matrix products and elementwise kernels go through
// Eigen; every loop runs in a fixed order, so a run is deterministic given
// its inputs and the dropout mask stream.
//
// Every node value is checked for finiteness as it is produced, and every
// gradient as it is consumed; a NaN or Inf raises NonFiniteError naming the
// offending node.

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cvae/coupling.hpp"
#include "cvae/rng.hpp"
#include "cvae/tensor.hpp"

namespace cvae {

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A training step allocates and frees the whole tape; with default glibc
// settings the freed pages go back to the OS every step and the refaults
// dominate the step cost. Keep the arena resident instead.
inline void retain_malloc_arena() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

class Graph {
 public:
  using NodeId = int;

  // -- leaves ---------------------------------------------------------------

  NodeId constant(Tensor v, std::string name = "const") {
    return push(Op::kConstant, -1, -1, std::move(v), std::move(name), false);
  }

  // A differentiable leaf (parameter or input we want gradients for).
  NodeId leaf(Tensor v, std::string name = "leaf") {
    return push(Op::kLeaf, -1, -1, std::move(v), std::move(name), true);
  }

  // -- dense-layer ops --------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows()) {
      throw std::invalid_argument("matmul: incompatible shapes");
    }
    Tensor out({A.rows(), B.cols()});
    emap(out).noalias() = cmap(A) * cmap(B);
    return push(Op::kMatMul, a, b, std::move(out), "matmul");
  }

  // (m,n) + row vector (n), broadcast over rows.
  NodeId add_rowvec(NodeId a, NodeId bias) {
    const Tensor& A = value(a);
    const Tensor& B = value(bias);
    if (B.size() != A.cols()) {
      throw std::invalid_argument("add_rowvec: bias length must equal column count");
    }
    Tensor out = A;
    emap(out).rowwise() += crow(B);
    return push(Op::kAddRowVec, a, bias, std::move(out), "add_rowvec");
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b, "add"); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b, "sub"); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b, "mul"); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b, "div"); }

  NodeId add_scalar(NodeId a, double s) {
    Tensor out = value(a);
    earr(out) += s;
    return push(Op::kAddScalar, a, -1, std::move(out), "add_scalar", true, s);
  }

  NodeId mul_scalar(NodeId a, double s) {
    Tensor out = value(a);
    earr(out) *= s;
    return push(Op::kMulScalar, a, -1, std::move(out), "mul_scalar", true, s);
  }

  // s - x, elementwise.
  NodeId scalar_minus(double s, NodeId a) {
    Tensor out = value(a);
    earr(out) = s - earr(out);
    return push(Op::kScalarMinus, a, -1, std::move(out), "scalar_minus", true, s);
  }

  NodeId relu(NodeId a) {
    Tensor out = value(a);
    earr(out) = earr(out).max(0.0);
    return push(Op::kRelu, a, -1, std::move(out), "relu");
  }

  NodeId sigmoid(NodeId a) {
    Tensor out = value(a);
    earr(out) = earr(out).logistic();
    return push(Op::kSigmoid, a, -1, std::move(out), "sigmoid");
  }

  NodeId exp(NodeId a) {
    Tensor out = value(a);
    earr(out) = earr(out).exp();
    return push(Op::kExp, a, -1, std::move(out), "exp");
  }

  NodeId log(NodeId a) {
    Tensor out = value(a);
    earr(out) = earr(out).log();
    return push(Op::kLog, a, -1, std::move(out), "log");
  }

  // Clamp to [lo, hi]; gradient passes through where the input lies inside
  // the interval (inclusive) and is zero outside.
  NodeId clamp(NodeId a, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    Tensor out = value(a);
    earr(out) = earr(out).min(hi).max(lo);
    return push(Op::kClamp, a, -1, std::move(out), "clamp", true, lo, hi);
  }

  // Inverted dropout: in training, zero each entry with probability `rate`
  // and scale survivors by 1/(1-rate); in inference, identity. The mask is
  // drawn from `rng` at node construction (training mode only).
  NodeId dropout(NodeId a, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw std::invalid_argument("dropout: rate must be in [0,1)");
    }
    Tensor out = value(a);
    Tensor mask;
    if (training && rate > 0.0) {
      const double keep_scale = 1.0 / (1.0 - rate);
      mask = Tensor(out.shape);
      for (std::size_t i = 0; i < out.size(); ++i) {
        mask.data[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
        out.data[i] *= mask.data[i];
      }
    }
    NodeId id = push(Op::kDropout, a, -1, std::move(out), "dropout", true, rate);
    nodes_[id].mask = std::move(mask);
    return id;
  }

  // Elementwise coupled negative log-likelihood of per-pixel ln p values.
  NodeId coupled_nll(NodeId logp, double kappa) {
    check_coupling(kappa);
    const Tensor& L = value(logp);
    if ((carr(L) > 0.0).any()) {
      throw std::domain_error("coupled_nll: log_p entries must be <= 0");
    }
    Tensor out = L;
    if (kappa == 0.0) {
      earr(out) = -earr(out);
    } else {
      const double kp = kappa / (1.0 + kappa);
      earr(out) = ((earr(out) * -kp).exp() - 1.0) / kappa;
    }
    return push(Op::kCoupledNll, logp, -1, std::move(out), "coupled_nll", true, kappa);
  }

  // (m,n) -> (m,1), sum over columns.
  NodeId row_sum(NodeId a) {
    const Tensor& A = value(a);
    Tensor out({A.rows(), 1});
    emap(out).col(0) = cmap(A).rowwise().sum();
    return push(Op::kRowSum, a, -1, std::move(out), "row_sum");
  }

  NodeId sum_all(NodeId a) {
    return push(Op::kSumAll, a, -1, Tensor::scalar(carr(value(a)).sum()), "sum_all");
  }

  NodeId mean_all(NodeId a) {
    const Tensor& A = value(a);
    return push(Op::kMeanAll, a, -1,
                Tensor::scalar(carr(A).sum() / static_cast<double>(A.size())),
                "mean_all");
  }

  // -- access -----------------------------------------------------------------

  const Tensor& value(NodeId id) const { return at(id).value; }

  // Gradient of the last backward() target w.r.t. node `id`. Zero-shaped
  // tensor if the node did not receive any gradient.
  const Tensor& grad(NodeId id) const {
    const Node& n = at(id);
    if (n.grad.data.empty()) {
      zero_like_ = Tensor(n.value.shape);
      return zero_like_;
    }
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // -- backward ---------------------------------------------------------------

  // Exact reverse-mode gradients of a scalar node w.r.t. every differentiable
  // leaf that feeds it. May be called again (gradients are reset first).
  void backward(NodeId loss) {
    Node& l = at_mut(loss);
    if (l.value.size() != 1) {
      throw std::invalid_argument("backward: loss node must be scalar");
    }
    for (Node& n : nodes_) n.grad = Tensor();
    l.grad = Tensor::full(l.value.shape, 1.0);
    for (NodeId i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.wants_grad || n.grad.data.empty()) continue;
      if (!carr(n.grad).allFinite()) {
        throw NonFiniteError("non-finite gradient at node '" + n.name + "' (id " +
                             std::to_string(i) + ")");
      }
      propagate(i);
    }
  }

 private:
  enum class Op {
    kConstant,
    kLeaf,
    kMatMul,
    kAddRowVec,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAddScalar,
    kMulScalar,
    kScalarMinus,
    kRelu,
    kSigmoid,
    kExp,
    kLog,
    kClamp,
    kDropout,
    kCoupledNll,
    kRowSum,
    kSumAll,
    kMeanAll,
  };

  struct Node {
    Op op;
    NodeId in0 = -1, in1 = -1;
    Tensor value;
    Tensor grad;
    Tensor mask;  // dropout only
    double s0 = 0.0, s1 = 0.0;
    bool wants_grad = false;
    std::string name;
  };

  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static Eigen::Map<const EMat> cmap(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows()),
            static_cast<Eigen::Index>(t.cols())};
  }
  static Eigen::Map<EMat> emap(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows()),
            static_cast<Eigen::Index>(t.cols())};
  }
  static Eigen::Map<const Eigen::ArrayXd> carr(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.size())};
  }
  static Eigen::Map<Eigen::ArrayXd> earr(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.size())};
  }
  static Eigen::Map<const Eigen::RowVectorXd> crow(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.size())};
  }

  const Node& at(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw std::invalid_argument("Graph: invalid node id");
    }
    return nodes_[static_cast<std::size_t>(id)];
  }
  Node& at_mut(NodeId id) { return const_cast<Node&>(at(id)); }

  NodeId binary(Op op, NodeId a, NodeId b, const char* name) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw std::invalid_argument(std::string(name) + ": shape mismatch");
    }
    Tensor out = A;
    switch (op) {
      case Op::kAdd:
        earr(out) += carr(B);
        break;
      case Op::kSub:
        earr(out) -= carr(B);
        break;
      case Op::kMul:
        earr(out) *= carr(B);
        break;
      case Op::kDiv:
        earr(out) /= carr(B);
        break;
      default:
        throw std::logic_error("binary: not a binary op");
    }
    return push(op, a, b, std::move(out), name);
  }

  NodeId push(Op op, NodeId a, NodeId b, Tensor v, std::string name,
              bool differentiable = true, double s0 = 0.0, double s1 = 0.0) {
    Node n;
    n.op = op;
    n.in0 = a;
    n.in1 = b;
    n.value = std::move(v);
    n.s0 = s0;
    n.s1 = s1;
    n.name = std::move(name);
    if (op == Op::kLeaf) {
      n.wants_grad = true;
    } else if (op == Op::kConstant) {
      n.wants_grad = false;
    } else {
      const bool w0 = a >= 0 && at(a).wants_grad;
      const bool w1 = b >= 0 && at(b).wants_grad;
      n.wants_grad = differentiable && (w0 || w1);
    }
    const NodeId id = static_cast<NodeId>(nodes_.size());
    if (!carr(n.value).allFinite()) {
      throw NonFiniteError("non-finite value in node '" + n.name + "' (id " +
                           std::to_string(id) + ")");
    }
    nodes_.push_back(std::move(n));
    return id;
  }

  Tensor& grad_buffer(NodeId id) {
    Node& n = at_mut(id);
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

  void propagate(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.grad;
    const auto want = [&](NodeId in) { return in >= 0 && at(in).wants_grad; };
    switch (n.op) {
      case Op::kConstant:
      case Op::kLeaf:
        return;
      case Op::kMatMul: {
        const Tensor& A = value(n.in0);
        const Tensor& B = value(n.in1);
        if (want(n.in0)) emap(grad_buffer(n.in0)).noalias() += cmap(g) * cmap(B).transpose();
        if (want(n.in1)) emap(grad_buffer(n.in1)).noalias() += cmap(A).transpose() * cmap(g);
        return;
      }
      case Op::kAddRowVec: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g);
        if (want(n.in1)) crowsum_into(grad_buffer(n.in1), g);
        return;
      }
      case Op::kAdd: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g);
        if (want(n.in1)) earr(grad_buffer(n.in1)) += carr(g);
        return;
      }
      case Op::kSub: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g);
        if (want(n.in1)) earr(grad_buffer(n.in1)) -= carr(g);
        return;
      }
      case Op::kMul: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g) * carr(value(n.in1));
        if (want(n.in1)) earr(grad_buffer(n.in1)) += carr(g) * carr(value(n.in0));
        return;
      }
      case Op::kDiv: {
        const Tensor& B = value(n.in1);
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g) / carr(B);
        if (want(n.in1)) {
          earr(grad_buffer(n.in1)) -= carr(g) * carr(n.value) / carr(B);
        }
        return;
      }
      case Op::kAddScalar: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g);
        return;
      }
      case Op::kMulScalar: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g) * n.s0;
        return;
      }
      case Op::kScalarMinus: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) -= carr(g);
        return;
      }
      case Op::kRelu: {
        if (want(n.in0)) {
          earr(grad_buffer(n.in0)) +=
              (carr(value(n.in0)) > 0.0).select(carr(g), 0.0);
        }
        return;
      }
      case Op::kSigmoid: {
        if (want(n.in0)) {
          earr(grad_buffer(n.in0)) += carr(g) * carr(n.value) * (1.0 - carr(n.value));
        }
        return;
      }
      case Op::kExp: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g) * carr(n.value);
        return;
      }
      case Op::kLog: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += carr(g) / carr(value(n.in0));
        return;
      }
      case Op::kClamp: {
        if (want(n.in0)) {
          const auto x = carr(value(n.in0));
          earr(grad_buffer(n.in0)) +=
              (x >= n.s0 && x <= n.s1).select(carr(g), 0.0);
        }
        return;
      }
      case Op::kDropout: {
        if (!want(n.in0)) return;
        if (n.mask.data.empty()) {
          earr(grad_buffer(n.in0)) += carr(g);
        } else {
          earr(grad_buffer(n.in0)) += carr(g) * carr(n.mask);
        }
        return;
      }
      case Op::kCoupledNll: {
        if (!want(n.in0)) return;
        if (n.s0 == 0.0) {
          earr(grad_buffer(n.in0)) -= carr(g);
        } else {
          const double kp = n.s0 / (1.0 + n.s0);
          earr(grad_buffer(n.in0)) +=
              carr(g) * (carr(value(n.in0)) * -kp).exp() * (-1.0 / (1.0 + n.s0));
        }
        return;
      }
      case Op::kRowSum: {
        if (!want(n.in0)) return;
        Tensor& gx = grad_buffer(n.in0);
        emap(gx).colwise() += cmap(g).col(0);
        return;
      }
      case Op::kSumAll: {
        if (want(n.in0)) earr(grad_buffer(n.in0)) += g.data[0];
        return;
      }
      case Op::kMeanAll: {
        if (!want(n.in0)) return;
        Tensor& gx = grad_buffer(n.in0);
        earr(gx) += g.data[0] / static_cast<double>(gx.size());
        return;
      }
    }
  }

  static void crowsum_into(Tensor& bias_grad, const Tensor& g) {
    Eigen::Map<Eigen::RowVectorXd> acc(bias_grad.data.data(),
                                       static_cast<Eigen::Index>(bias_grad.size()));
    acc += cmap(g).colwise().sum();
  }

  std::vector<Node> nodes_;
  mutable Tensor zero_like_;
};

}  // namespace cvae
