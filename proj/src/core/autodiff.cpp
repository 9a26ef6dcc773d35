#include "starmt/core/autodiff.hpp"

#include "starmt/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace starmt::ad {

namespace {

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    n->requires_grad = false;
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    Tensor::shape_str(a->val.shape()) + " vs " +
                                    Tensor::shape_str(b->val.shape()));
}

} // namespace

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = false;
    return n;
}

Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    return n;
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    Tensor out = kernels::conv2d_fwd(x->val, w->val, b ? b->val : Tensor(), stride, pad);
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), std::move(parents), [stride, pad](Node& n) {
        const Var& x = n.parents[0];
        const Var& w = n.parents[1];
        Tensor* dx = nullptr;
        Tensor* dw = nullptr;
        Tensor* db = nullptr;
        if (x->needs_grad()) {
            x->ensure_grad();
            dx = &x->grad;
        }
        if (w->needs_grad()) {
            w->ensure_grad();
            dw = &w->grad;
        }
        if (n.parents.size() > 2 && n.parents[2]->needs_grad()) {
            n.parents[2]->ensure_grad();
            db = &n.parents[2]->grad;
        }
        kernels::conv2d_bwd(x->val, w->val, n.grad, stride, pad, dx, dw, db);
    });
}

Var silu(const Var& x) {
    return make(kernels::silu_fwd(x->val), {x}, [](Node& n) {
        const Var& x = n.parents[0];
        if (!x->needs_grad()) return;
        x->ensure_grad();
        kernels::silu_bwd(x->val, n.grad, &x->grad);
    });
}

Var sigmoid(const Var& x) {
    return make(kernels::sigmoid_fwd(x->val), {x}, [](Node& n) {
        const Var& x = n.parents[0];
        if (!x->needs_grad()) return;
        x->ensure_grad();
        const long m = n.val.numel();
        for (long i = 0; i < m; ++i) {
            const real s = n.val[i];
            x->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->val;
    out.add_inplace(b->val);
    return make(std::move(out), {a, b}, [](Node& n) {
        for (int p = 0; p < 2; ++p) {
            const Var& v = n.parents[p];
            if (!v->needs_grad()) continue;
            v->ensure_grad();
            v->grad.add_inplace(n.grad);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->val;
    out.add_inplace(b->val, -1.0);
    return make(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->needs_grad()) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.add_inplace(n.grad);
        }
        if (n.parents[1]->needs_grad()) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.add_inplace(n.grad, -1.0);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->val.shape());
    const long m = out.numel();
    for (long i = 0; i < m; ++i) out[i] = a->val[i] * b->val[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        const Var& a = n.parents[0];
        const Var& b = n.parents[1];
        const long m = n.val.numel();
        if (a->needs_grad()) {
            a->ensure_grad();
            for (long i = 0; i < m; ++i) a->grad[i] += n.grad[i] * b->val[i];
        }
        if (b->needs_grad()) {
            b->ensure_grad();
            for (long i = 0; i < m; ++i) b->grad[i] += n.grad[i] * a->val[i];
        }
    });
}

Var scale(const Var& a, real c) {
    Tensor out = a->val;
    out.scale_inplace(c);
    return make(std::move(out), {a}, [c](Node& n) {
        const Var& a = n.parents[0];
        if (!a->needs_grad()) return;
        a->ensure_grad();
        a->grad.add_inplace(n.grad, c);
    });
}

Var add_scalar(const Var& a, real c) {
    Tensor out = a->val;
    for (long i = 0; i < out.numel(); ++i) out[i] += c;
    return make(std::move(out), {a}, [](Node& n) {
        const Var& a = n.parents[0];
        if (!a->needs_grad()) return;
        a->ensure_grad();
        a->grad.add_inplace(n.grad);
    });
}

Var log_clamped(const Var& a, real eps) {
    Tensor out(a->val.shape());
    const long m = out.numel();
    for (long i = 0; i < m; ++i) out[i] = std::log(std::clamp(a->val[i], eps, 1.0 - eps));
    return make(std::move(out), {a}, [eps](Node& n) {
        const Var& a = n.parents[0];
        if (!a->needs_grad()) return;
        a->ensure_grad();
        const long m = n.val.numel();
        for (long i = 0; i < m; ++i) {
            const real v = a->val[i];
            if (v <= eps || v >= 1.0 - eps) continue; // clamped region: zero slope
            a->grad[i] += n.grad[i] / v;
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    return make(kernels::matmul(a->val, b->val), {a, b}, [](Node& n) {
        const Var& a = n.parents[0];
        const Var& b = n.parents[1];
        const int m = a->val.dim(0), k = a->val.dim(1), c = b->val.dim(1);
        if (a->needs_grad()) {
            a->ensure_grad(); // dA = G * B^T
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    real acc = 0.0;
                    for (int j = 0; j < c; ++j) acc += n.grad.at(i, j) * b->val.at(kk, j);
                    a->grad.at(i, kk) += acc;
                }
        }
        if (b->needs_grad()) {
            b->ensure_grad(); // dB = A^T * G
            for (int kk = 0; kk < k; ++kk)
                for (int j = 0; j < c; ++j) {
                    real acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += a->val.at(i, kk) * n.grad.at(i, j);
                    b->grad.at(kk, j) += acc;
                }
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    return make(kernels::matmul_nt(a->val, b->val), {a, b}, [](Node& n) {
        const Var& a = n.parents[0];
        const Var& b = n.parents[1];
        const int m = a->val.dim(0), k = a->val.dim(1), c = b->val.dim(0);
        if (a->needs_grad()) {
            a->ensure_grad(); // dA = G * B
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    real acc = 0.0;
                    for (int j = 0; j < c; ++j) acc += n.grad.at(i, j) * b->val.at(j, kk);
                    a->grad.at(i, kk) += acc;
                }
        }
        if (b->needs_grad()) {
            b->ensure_grad(); // dB = G^T * A
            for (int j = 0; j < c; ++j)
                for (int kk = 0; kk < k; ++kk) {
                    real acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += n.grad.at(i, j) * a->val.at(i, kk);
                    b->grad.at(j, kk) += acc;
                }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const int m = x->val.dim(0), k = x->val.dim(1), c = w->val.dim(0);
    if (w->val.dim(1) != k) throw std::invalid_argument("linear: dim mismatch");
    Tensor out = kernels::matmul_nt(x->val, w->val);
    if (b) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) out.at(i, j) += b->val[j];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), std::move(parents), [](Node& n) {
        const Var& x = n.parents[0];
        const Var& w = n.parents[1];
        const int m = x->val.dim(0), k = x->val.dim(1), c = w->val.dim(0);
        if (x->needs_grad()) {
            x->ensure_grad(); // dX = G * W
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    real acc = 0.0;
                    for (int j = 0; j < c; ++j) acc += n.grad.at(i, j) * w->val.at(j, kk);
                    x->grad.at(i, kk) += acc;
                }
        }
        if (w->needs_grad()) {
            w->ensure_grad(); // dW = G^T * X
            for (int j = 0; j < c; ++j)
                for (int kk = 0; kk < k; ++kk) {
                    real acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += n.grad.at(i, j) * x->val.at(i, kk);
                    w->grad.at(j, kk) += acc;
                }
        }
        if (n.parents.size() > 2 && n.parents[2]->needs_grad()) {
            const Var& b = n.parents[2];
            b->ensure_grad();
            for (int j = 0; j < c; ++j) {
                real acc = 0.0;
                for (int i = 0; i < m; ++i) acc += n.grad.at(i, j);
                b->grad[j] += acc;
            }
        }
    });
}

Var softmax_rows(const Var& a, real temp) {
    return make(kernels::softmax_rows(a->val, temp), {a}, [temp](Node& n) {
        const Var& a = n.parents[0];
        if (!a->needs_grad()) return;
        a->ensure_grad();
        const int m = n.val.dim(0), c = n.val.dim(1);
        for (int i = 0; i < m; ++i) {
            real dot = 0.0;
            for (int j = 0; j < c; ++j) dot += n.grad.at(i, j) * n.val.at(i, j);
            for (int j = 0; j < c; ++j)
                a->grad.at(i, j) += n.val.at(i, j) * (n.grad.at(i, j) - dot) / temp;
        }
    });
}

Var rows_unit(const Var& x, real eps) {
    return make(kernels::rows_unit(x->val, eps), {x}, [eps](Node& n) {
        const Var& x = n.parents[0];
        if (!x->needs_grad()) return;
        x->ensure_grad();
        const int m = x->val.dim(0), c = x->val.dim(1);
        for (int i = 0; i < m; ++i) {
            real sq = 0.0;
            for (int j = 0; j < c; ++j) sq += x->val.at(i, j) * x->val.at(i, j);
            const real norm = std::sqrt(sq + eps);
            real gy = 0.0;
            for (int j = 0; j < c; ++j) gy += n.grad.at(i, j) * n.val.at(i, j);
            for (int j = 0; j < c; ++j)
                x->grad.at(i, j) += (n.grad.at(i, j) - gy * n.val.at(i, j)) / norm;
        }
    });
}

Var gather_cells(const Var& maps, const std::vector<Cell>& cells) {
    const int C = maps->val.dim(1), h = maps->val.dim(2), w = maps->val.dim(3);
    const int P = static_cast<int>(cells.size());
    Tensor out({P, C});
    for (int p = 0; p < P; ++p) {
        const Cell& cl = cells[p];
        for (int c = 0; c < C; ++c) out.at(p, c) = maps->val.at(cl.frame, c, cl.row, cl.col);
    }
    (void)h;
    (void)w;
    return make(std::move(out), {maps}, [cells](Node& n) {
        const Var& maps = n.parents[0];
        if (!maps->needs_grad()) return;
        maps->ensure_grad();
        const int C = maps->val.dim(1);
        for (size_t p = 0; p < cells.size(); ++p) {
            const Cell& cl = cells[p];
            for (int c = 0; c < C; ++c)
                maps->grad.at(cl.frame, c, cl.row, cl.col) += n.grad.at(static_cast<int>(p), c);
        }
    });
}

Var sum_all(const Var& x) {
    real s = 0.0;
    for (long i = 0; i < x->val.numel(); ++i) s += x->val[i];
    return make(Tensor::scalar(s), {x}, [](Node& n) {
        const Var& x = n.parents[0];
        if (!x->needs_grad()) return;
        x->ensure_grad();
        const real g = n.grad[0];
        for (long i = 0; i < x->grad.numel(); ++i) x->grad[i] += g;
    });
}

Var mean_all(const Var& x) {
    const long m = x->val.numel();
    if (m == 0) throw std::invalid_argument("mean_all: empty tensor");
    return scale(sum_all(x), 1.0 / static_cast<real>(m));
}

Var row_mean(const Var& x) {
    const int m = x->val.dim(0), c = x->val.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        real s = 0.0;
        for (int j = 0; j < c; ++j) s += x->val.at(i, j);
        out[i] = s / c;
    }
    return make(std::move(out), {x}, [](Node& n) {
        const Var& x = n.parents[0];
        if (!x->needs_grad()) return;
        x->ensure_grad();
        const int m = x->val.dim(0), c = x->val.dim(1);
        for (int i = 0; i < m; ++i) {
            const real g = n.grad[i] / c;
            for (int j = 0; j < c; ++j) x->grad.at(i, j) += g;
        }
    });
}

Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    const long m = a->val.numel();
    real s = 0.0;
    for (long i = 0; i < m; ++i) {
        const real d = a->val[i] - b->val[i];
        s += d * d;
    }
    return make(Tensor::scalar(s / static_cast<real>(m)), {a, b}, [](Node& n) {
        const Var& a = n.parents[0];
        const Var& b = n.parents[1];
        const long m = a->val.numel();
        const real g = 2.0 * n.grad[0] / static_cast<real>(m);
        if (a->needs_grad()) {
            a->ensure_grad();
            for (long i = 0; i < m; ++i) a->grad[i] += g * (a->val[i] - b->val[i]);
        }
        if (b->needs_grad()) {
            b->ensure_grad();
            for (long i = 0; i < m; ++i) b->grad[i] -= g * (a->val[i] - b->val[i]);
        }
    });
}

Var l1(const Var& a, const Var& b) {
    check_same_shape(a, b, "l1");
    const long m = a->val.numel();
    real s = 0.0;
    for (long i = 0; i < m; ++i) s += std::abs(a->val[i] - b->val[i]);
    return make(Tensor::scalar(s / static_cast<real>(m)), {a, b}, [](Node& n) {
        const Var& a = n.parents[0];
        const Var& b = n.parents[1];
        const long m = a->val.numel();
        const real g = n.grad[0] / static_cast<real>(m);
        for (long i = 0; i < m; ++i) {
            const real d = a->val[i] - b->val[i];
            const real sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (a->needs_grad()) {
                a->ensure_grad();
                a->grad[i] += g * sgn;
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                b->grad[i] -= g * sgn;
            }
        }
    });
}

Var bce_mean(const Var& pred, const Tensor& target, real eps) {
    if (!pred->val.same_shape(target)) throw std::invalid_argument("bce_mean: shape mismatch");
    const long m = pred->val.numel();
    if (m == 0) throw std::invalid_argument("bce_mean: empty");
    real s = 0.0;
    for (long i = 0; i < m; ++i) {
        const real p = std::clamp(pred->val[i], eps, 1.0 - eps);
        const real t = target[i];
        s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    Tensor tcopy = target;
    return make(Tensor::scalar(s / static_cast<real>(m)), {pred},
                [tcopy = std::move(tcopy), eps](Node& n) {
                    const Var& pred = n.parents[0];
                    if (!pred->needs_grad()) return;
                    pred->ensure_grad();
                    const long m = pred->val.numel();
                    const real g = n.grad[0] / static_cast<real>(m);
                    for (long i = 0; i < m; ++i) {
                        const real raw = pred->val[i];
                        if (raw <= eps || raw >= 1.0 - eps) continue;
                        pred->grad[i] += g * (raw - tcopy[i]) / (raw * (1.0 - raw));
                    }
                });
}

void backward(const Var& loss) {
    if (loss->val.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // Reverse topological order via iterative DFS; construction order of the
    // graph makes the ordering deterministic.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->requires_grad) node->backprop(*node);
    }
}

} // namespace starmt::ad
