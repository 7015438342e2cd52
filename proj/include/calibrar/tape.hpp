// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_TAPE_HPP_
#define CALIBRAR_TAPE_HPP_

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calibrar/error.hpp"
#include "calibrar/num_array.hpp"

namespace calibrar {

// Handle to a value recorded on a specific Tape.
struct NodeId {
  std::uint64_t tape = 0;
  std::size_t index = 0;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

// Floor applied before taking logarithms on the tape.
inline constexpr double kLogClamp = 1e-12;

// Linear record of primitive operations for reverse-mode differentiation.
//
// Nodes are appended in evaluation order, so the record is topologically
// sorted by construction. grad() walks it once from the loss node down to
// index 0. A Tape is a single-threaded value: it can be moved to another
// thread but not shared.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf.
  NodeId variable(NumArray value) { return push(std::move(value), true, {}); }

  // Non-differentiable leaf; gradients never flow into it.
  NodeId constant(NumArray value) { return push(std::move(value), false, {}); }

  const NumArray& value(NodeId id) const { return nodes_[check(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  NodeId matmul(NodeId a, NodeId b) {
    const auto ia = check(a), ib = check(b);
    NumArray out = ops::matmul(nodes_[ia].value, nodes_[ib].value);
    return push(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t, const NumArray& g) {
      if (t.needs(ia)) t.accumulate(ia, ops::matmul_nt(g, t.nodes_[ib].value));
      if (t.needs(ib)) t.accumulate(ib, ops::matmul_tn(t.nodes_[ia].value, g));
    });
  }

  NodeId add_bias(NodeId x, NodeId bias) {
    const auto ix = check(x), ib = check(bias);
    NumArray out = ops::add_bias(nodes_[ix].value, nodes_[ib].value);
    return push(std::move(out), needs(ix) || needs(ib), [ix, ib](Tape& t, const NumArray& g) {
      if (t.needs(ix)) t.accumulate(ix, g);
      if (t.needs(ib)) {
        NumArray gb(t.nodes_[ib].value.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
        }
        t.accumulate(ib, gb);
      }
    });
  }

  NodeId add(NodeId a, NodeId b) { return binary(a, b, "add", +1.0); }
  NodeId sub(NodeId a, NodeId b) { return binary(a, b, "sub", -1.0); }

  // Elementwise product of equal shapes.
  NodeId mul(NodeId a, NodeId b) {
    const auto ia = check(a), ib = check(b);
    const NumArray& va = nodes_[ia].value;
    const NumArray& vb = nodes_[ib].value;
    require_same_shape(va, vb, "mul");
    NumArray out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t, const NumArray& g) {
      if (t.needs(ia)) t.accumulate(ia, hadamard(g, t.nodes_[ib].value));
      if (t.needs(ib)) t.accumulate(ib, hadamard(g, t.nodes_[ia].value));
    });
  }

  NodeId scale(NodeId x, double factor) {
    const auto ix = check(x);
    NumArray out = nodes_[ix].value;
    for (double& v : out.values()) v *= factor;
    return push(std::move(out), needs(ix), [ix, factor](Tape& t, const NumArray& g) {
      NumArray gx = g;
      for (double& v : gx.values()) v *= factor;
      t.accumulate(ix, gx);
    });
  }

  NodeId relu(NodeId x) {
    const auto ix = check(x);
    NumArray out = ops::relu(nodes_[ix].value);
    return push(std::move(out), needs(ix), [ix](Tape& t, const NumArray& g) {
      const NumArray& in = t.nodes_[ix].value;
      NumArray gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (!(in[i] > 0.0)) gx[i] = 0.0;
      }
      t.accumulate(ix, gx);
    });
  }

  // max(x, floor) elementwise; the gradient is zero where the floor binds.
  NodeId clamp_min(NodeId x, double floor) {
    const auto ix = check(x);
    NumArray out = nodes_[ix].value;
    for (double& v : out.values()) v = v > floor ? v : floor;
    return push(std::move(out), needs(ix), [ix, floor](Tape& t, const NumArray& g) {
      const NumArray& in = t.nodes_[ix].value;
      NumArray gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (!(in[i] > floor)) gx[i] = 0.0;
      }
      t.accumulate(ix, gx);
    });
  }

  NodeId softmax(NodeId logits) {
    const auto ix = check(logits);
    NumArray out = ops::softmax(nodes_[ix].value);
    const std::size_t self = nodes_.size();
    return push(std::move(out), needs(ix), [ix, self](Tape& t, const NumArray& g) {
      const NumArray& p = t.nodes_[self].value;
      NumArray gx = g;
      for (std::size_t r = 0; r < p.rows(); ++r) {
        const auto pr = p.row(r);
        const auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < pr.size(); ++c) dot += gr[c] * pr[c];
        auto out = gx.row(r);
        for (std::size_t c = 0; c < pr.size(); ++c) out[c] = pr[c] * (gr[c] - dot);
      }
      t.accumulate(ix, gx);
    });
  }

  // log(max(x, kLogClamp)); no gradient flows through clamped entries.
  NodeId log(NodeId x) {
    const auto ix = check(x);
    NumArray out = nodes_[ix].value;
    for (double& v : out.values()) v = std::log(v > kLogClamp ? v : kLogClamp);
    return push(std::move(out), needs(ix), [ix](Tape& t, const NumArray& g) {
      const NumArray& in = t.nodes_[ix].value;
      NumArray gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] = in[i] > kLogClamp ? g[i] / in[i] : 0.0;
      }
      t.accumulate(ix, gx);
    });
  }

  // Sum of all entries; returns a scalar node.
  NodeId sum(NodeId x) {
    const auto ix = check(x);
    const NumArray& in = nodes_[ix].value;
    double total = 0.0;
    for (double v : in.values()) total += v;
    return push(NumArray::scalar(total), needs(ix), [ix](Tape& t, const NumArray& g) {
      NumArray gx(t.nodes_[ix].value.shape());
      for (double& v : gx.values()) v = g[0];
      t.accumulate(ix, gx);
    });
  }

  NodeId mean(NodeId x) {
    const double count = static_cast<double>(value(x).size());
    return scale(sum(x), 1.0 / count);
  }

  // Per-row sum of a matrix, as an n x 1 column.
  NodeId row_sum(NodeId x) {
    const auto ix = check(x);
    const NumArray& in = nodes_[ix].value;
    require_matrix(in, "row_sum");
    NumArray out = NumArray::matrix(in.rows(), 1);
    for (std::size_t r = 0; r < in.rows(); ++r) {
      double total = 0.0;
      for (double v : in.row(r)) total += v;
      out[r] = total;
    }
    return push(std::move(out), needs(ix), [ix](Tape& t, const NumArray& g) {
      NumArray gx(t.nodes_[ix].value.shape());
      for (std::size_t r = 0; r < gx.rows(); ++r) {
        for (double& v : gx.row(r)) v = g[r];
      }
      t.accumulate(ix, gx);
    });
  }

  // Picks column columns[r] from every row r, as an n x 1 column.
  NodeId pick(NodeId x, std::vector<std::size_t> columns) {
    const auto ix = check(x);
    const NumArray& in = nodes_[ix].value;
    require_matrix(in, "pick");
    check_columns(in, columns, "pick");
    NumArray out = NumArray::matrix(in.rows(), 1);
    for (std::size_t r = 0; r < in.rows(); ++r) out[r] = in(r, columns[r]);
    return push(std::move(out), needs(ix),
                [ix, columns = std::move(columns)](Tape& t, const NumArray& g) {
                  NumArray gx(t.nodes_[ix].value.shape());
                  for (std::size_t r = 0; r < gx.rows(); ++r) gx(r, columns[r]) = g[r];
                  t.accumulate(ix, gx);
                });
  }

  // Largest entry of every row excluding column excluded[r], as an n x 1
  // column. The gradient goes to the first maximizing column.
  NodeId max_excluding(NodeId x, std::vector<std::size_t> excluded) {
    const auto ix = check(x);
    const NumArray& in = nodes_[ix].value;
    require_matrix(in, "max_excluding");
    if (in.cols() < 2) throw ShapeError("max_excluding: needs at least two columns");
    check_columns(in, excluded, "max_excluding");
    NumArray out = NumArray::matrix(in.rows(), 1);
    std::vector<std::size_t> chosen(in.rows());
    for (std::size_t r = 0; r < in.rows(); ++r) {
      std::size_t best = excluded[r] == 0 ? 1 : 0;
      for (std::size_t c = best + 1; c < in.cols(); ++c) {
        if (c != excluded[r] && in(r, c) > in(r, best)) best = c;
      }
      chosen[r] = best;
      out[r] = in(r, best);
    }
    return push(std::move(out), needs(ix),
                [ix, chosen = std::move(chosen)](Tape& t, const NumArray& g) {
                  NumArray gx(t.nodes_[ix].value.shape());
                  for (std::size_t r = 0; r < gx.rows(); ++r) gx(r, chosen[r]) = g[r];
                  t.accumulate(ix, gx);
                });
  }

  // Mean over rows of -sum_z soft[z] * log(pred[z]), built from primitives.
  NodeId cross_entropy_soft(NodeId pred, NodeId soft_labels) {
    const NumArray& p = value(pred);
    require_matrix(p, "cross_entropy_soft");
    require_same_shape(p, value(soft_labels), "cross_entropy_soft");
    const double rows = static_cast<double>(p.rows());
    return scale(sum(mul(soft_labels, log(pred))), -1.0 / rows);
  }

  // Exact reverse-mode gradients of the scalar node `loss` with respect to
  // each node in `wrt`. Nodes the loss does not depend on get zeros.
  std::vector<NumArray> grad(NodeId loss, std::span<const NodeId> wrt) {
    const auto il = check(loss);
    if (nodes_[il].value.size() != 1) {
      throw ShapeError("grad: loss must be a scalar node, got " +
                       NumArray::shape_string(nodes_[il].value.shape()));
    }
    for (const NodeId& w : wrt) check(w);

    grads_.assign(il + 1, NumArray());
    has_grad_.assign(il + 1, false);
    grads_[il] = NumArray(nodes_[il].value.shape(), {1.0});
    has_grad_[il] = true;
    for (std::size_t i = il + 1; i-- > 0;) {
      if (!has_grad_[i] || !nodes_[i].backward) continue;
      nodes_[i].backward(*this, grads_[i]);
    }

    std::vector<NumArray> result;
    result.reserve(wrt.size());
    for (const NodeId& w : wrt) {
      if (w.index <= il && has_grad_[w.index]) {
        result.push_back(grads_[w.index]);
      } else {
        result.emplace_back(nodes_[w.index].value.shape());
      }
    }
    grads_.clear();
    has_grad_.clear();
    return result;
  }

  std::vector<NumArray> grad(NodeId loss, std::initializer_list<NodeId> wrt) {
    return grad(loss, std::span<const NodeId>(wrt.begin(), wrt.size()));
  }

 private:
  using Backward = std::function<void(Tape&, const NumArray&)>;

  struct Node {
    NumArray value;
    bool requires_grad = false;
    Backward backward;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  static NumArray hadamard(const NumArray& a, const NumArray& b) {
    NumArray out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
  }

  static void check_columns(const NumArray& in, const std::vector<std::size_t>& columns,
                            const char* where) {
    if (columns.size() != in.rows()) {
      throw ShapeError(std::string(where) + ": one column index per row required");
    }
    for (std::size_t c : columns) {
      if (c >= in.cols()) throw ShapeError(std::string(where) + ": column index out of range");
    }
  }

  std::size_t check(NodeId id) const {
    if (id.tape != id_ || id.index >= nodes_.size()) {
      throw DomainError("Tape: node " + std::to_string(id.index) + " is not on this tape");
    }
    return id.index;
  }

  bool needs(std::size_t index) const { return nodes_[index].requires_grad; }

  NodeId push(NumArray value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), requires_grad,
                          requires_grad ? std::move(backward) : Backward{}});
    return NodeId{id_, nodes_.size() - 1};
  }

  NodeId binary(NodeId a, NodeId b, const char* name, double sign) {
    const auto ia = check(a), ib = check(b);
    const NumArray& va = nodes_[ia].value;
    const NumArray& vb = nodes_[ib].value;
    require_same_shape(va, vb, name);
    NumArray out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * vb[i];
    return push(std::move(out), needs(ia) || needs(ib),
                [ia, ib, sign](Tape& t, const NumArray& g) {
                  if (t.needs(ia)) t.accumulate(ia, g);
                  if (t.needs(ib)) {
                    NumArray gb = g;
                    for (double& v : gb.values()) v *= sign;
                    t.accumulate(ib, gb);
                  }
                });
  }

  void accumulate(std::size_t index, const NumArray& g) {
    if (!has_grad_[index]) {
      grads_[index] = g;
      has_grad_[index] = true;
      return;
    }
    NumArray& acc = grads_[index];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<NumArray> grads_;
  std::vector<bool> has_grad_;
};

}  // namespace calibrar

#endif  // CALIBRAR_TAPE_HPP_
