#pragma once

#include "starmt/core/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace starmt::ad {

// Reverse-mode automatic differentiation over a dynamically built DAG.
// Forward values are computed eagerly at node construction; backward() walks
// the graph in reverse topological order. Teacher-side passes never enter
// this graph (they run on plain tensors), so gradient isolation of the
// teacher is structural rather than policed.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad; // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop; // reads this->grad, accumulates into parents

    bool needs_grad() const { return requires_grad; }
    void ensure_grad() {
        if (grad.numel() != val.numel()) grad = Tensor(val.shape());
    }
};

Var constant(Tensor t);
Var leaf(Tensor t); // trainable: participates in gradients

// Grid cell address used by gather/scatter between dense maps and proposals.
struct Cell {
    int frame = 0;
    int row = 0;
    int col = 0;
};

// ----- graph ops -----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, real c);
Var add_scalar(const Var& a, real c);
Var log_clamped(const Var& a, real eps); // log(clamp(a, eps, 1-eps))
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b); // x[m,k], w[n,k], b[n] -> [m,n]
Var softmax_rows(const Var& a, real temp);
Var rows_unit(const Var& x, real eps);
Var gather_cells(const Var& maps, const std::vector<Cell>& cells); // [T,C,h,w] -> [P,C]
Var mean_all(const Var& x);
Var sum_all(const Var& x);
Var row_mean(const Var& x); // [m,n] -> [m]
Var mse(const Var& a, const Var& b);
Var l1(const Var& a, const Var& b);
// Mean binary cross entropy against a constant target, scores clamped to
// [eps, 1-eps] before logs.
Var bce_mean(const Var& pred, const Tensor& target, real eps);

void backward(const Var& loss);

} // namespace starmt::ad
