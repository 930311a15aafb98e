#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "petd/mat.hpp"
#include "petd/rng.hpp"

namespace petd {

// Named trainable tensor. Gradients and Adam moments live here between steps.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;  // Adam first moment, sized on first optimizer step
    Mat v;  // Adam second moment

    Param(std::string n, int rows, int cols) : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
};

struct Node {
    Mat val;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Node&)> back;  // pulls this->grad into parents
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
// insertion sequence is already a topological order for backward.
class Tape {
   public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Node* leaf(Mat v, bool requires_grad = false) {
        Node* n = alloc();
        n->val = std::move(v);
        n->requires_grad = grad_enabled_ && requires_grad;
        return n;
    }

    // Leaf bound to a parameter. Value is copied; gradients are gathered back
    // into Param::grad by accumulate_param_grads().
    Node* param(Param& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        Node* n = leaf(p.value, true);
        bindings_.emplace_back(&p, n);
        param_nodes_.emplace(&p, n);
        return n;
    }

    // ---- elementwise / shape ops ----

    Node* add(Node* a, Node* b) {
        assert(a->val.same_shape(b->val));
        Node* n = make(a->val, {a, b});
        for (size_t i = 0; i < n->val.a.size(); ++i) n->val.a[i] += b->val.a[i];
        if (n->requires_grad)
            n->back = [a, b](Node& self) {
                if (a->requires_grad) axpy(1.0, self.grad, a->grad);
                if (b->requires_grad) axpy(1.0, self.grad, b->grad);
            };
        return n;
    }

    // a (m x n) + row vector b (1 x n) on every row
    Node* add_rowvec(Node* a, Node* b) {
        assert(b->val.rows == 1 && a->val.cols == b->val.cols);
        Node* n = make(a->val, {a, b});
        for (int i = 0; i < n->val.rows; ++i)
            for (int j = 0; j < n->val.cols; ++j) n->val(i, j) += b->val(0, j);
        if (n->requires_grad)
            n->back = [a, b](Node& self) {
                if (a->requires_grad) axpy(1.0, self.grad, a->grad);
                if (b->requires_grad)
                    for (int i = 0; i < self.grad.rows; ++i)
                        for (int j = 0; j < self.grad.cols; ++j) b->grad(0, j) += self.grad(i, j);
            };
        return n;
    }

    Node* sub(Node* a, Node* b) { return add(a, scale(b, -1.0)); }

    Node* scale(Node* a, real c) {
        Node* n = make(a->val, {a});
        for (auto& v : n->val.a) v *= c;
        if (n->requires_grad)
            n->back = [a, c](Node& self) {
                if (a->requires_grad) axpy(c, self.grad, a->grad);
            };
        return n;
    }

    Node* hadamard(Node* a, Node* b) {
        assert(a->val.same_shape(b->val));
        Node* n = make(a->val, {a, b});
        for (size_t i = 0; i < n->val.a.size(); ++i) n->val.a[i] *= b->val.a[i];
        if (n->requires_grad)
            n->back = [a, b](Node& self) {
                for (size_t i = 0; i < self.grad.a.size(); ++i) {
                    if (a->requires_grad) a->grad.a[i] += self.grad.a[i] * b->val.a[i];
                    if (b->requires_grad) b->grad.a[i] += self.grad.a[i] * a->val.a[i];
                }
            };
        return n;
    }

    // Elementwise product with a constant mask.
    Node* mask(Node* a, const Mat& m) {
        assert(a->val.same_shape(m));
        Node* n = make(a->val, {a});
        for (size_t i = 0; i < n->val.a.size(); ++i) n->val.a[i] *= m.a[i];
        if (n->requires_grad) {
            Mat mc = m;
            n->back = [a, mc](Node& self) {
                for (size_t i = 0; i < self.grad.a.size(); ++i) a->grad.a[i] += self.grad.a[i] * mc.a[i];
            };
        }
        return n;
    }

    // ---- matrix products ----

    Node* matmul(Node* a, Node* b) {
        assert(a->val.cols == b->val.rows);
        Node* n = alloc_op(a->val.rows, b->val.cols, {a, b});
        matmul_acc(a->val, b->val, n->val);
        if (n->requires_grad)
            n->back = [a, b](Node& self) {
                if (a->requires_grad) matmul_nt_acc(self.grad, b->val, a->grad);
                if (b->requires_grad) matmul_tn_acc(a->val, self.grad, b->grad);
            };
        return n;
    }

    // a * b^T
    Node* matmul_nt(Node* a, Node* b) {
        assert(a->val.cols == b->val.cols);
        Node* n = alloc_op(a->val.rows, b->val.rows, {a, b});
        matmul_nt_acc(a->val, b->val, n->val);
        if (n->requires_grad)
            n->back = [a, b](Node& self) {
                if (a->requires_grad) matmul_acc(self.grad, b->val, a->grad);
                if (b->requires_grad) matmul_tn_acc(self.grad, a->val, b->grad);
            };
        return n;
    }

    // ---- structural ops ----

    Node* concat_cols(const std::vector<Node*>& parts) {
        assert(!parts.empty());
        int rows = parts[0]->val.rows, cols = 0;
        for (Node* p : parts) {
            assert(p->val.rows == rows);
            cols += p->val.cols;
        }
        Node* n = alloc_op(rows, cols, parts);
        int off = 0;
        for (Node* p : parts) {
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < p->val.cols; ++j) n->val(i, off + j) = p->val(i, j);
            off += p->val.cols;
        }
        if (n->requires_grad) {
            std::vector<Node*> ps = parts;
            n->back = [ps](Node& self) {
                int off2 = 0;
                for (Node* p : ps) {
                    if (p->requires_grad)
                        for (int i = 0; i < self.grad.rows; ++i)
                            for (int j = 0; j < p->val.cols; ++j) p->grad(i, j) += self.grad(i, off2 + j);
                    off2 += p->val.cols;
                }
            };
        }
        return n;
    }

    Node* concat_rows(const std::vector<Node*>& parts) {
        assert(!parts.empty());
        int cols = parts[0]->val.cols, rows = 0;
        for (Node* p : parts) {
            assert(p->val.cols == cols);
            rows += p->val.rows;
        }
        Node* n = alloc_op(rows, cols, parts);
        int off = 0;
        for (Node* p : parts) {
            for (int i = 0; i < p->val.rows; ++i)
                for (int j = 0; j < cols; ++j) n->val(off + i, j) = p->val(i, j);
            off += p->val.rows;
        }
        if (n->requires_grad) {
            std::vector<Node*> ps = parts;
            n->back = [ps](Node& self) {
                int off2 = 0;
                for (Node* p : ps) {
                    if (p->requires_grad)
                        for (int i = 0; i < p->val.rows; ++i)
                            for (int j = 0; j < self.grad.cols; ++j) p->grad(i, j) += self.grad(off2 + i, j);
                    off2 += p->val.rows;
                }
            };
        }
        return n;
    }

    Node* slice_rows(Node* a, int r0, int r1) {
        assert(0 <= r0 && r0 < r1 && r1 <= a->val.rows);
        Node* n = alloc_op(r1 - r0, a->val.cols, {a});
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < a->val.cols; ++j) n->val(i - r0, j) = a->val(i, j);
        if (n->requires_grad)
            n->back = [a, r0](Node& self) {
                for (int i = 0; i < self.grad.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j) a->grad(r0 + i, j) += self.grad(i, j);
            };
        return n;
    }

    Node* slice_cols(Node* a, int c0, int c1) {
        assert(0 <= c0 && c0 < c1 && c1 <= a->val.cols);
        Node* n = alloc_op(a->val.rows, c1 - c0, {a});
        for (int i = 0; i < a->val.rows; ++i)
            for (int j = c0; j < c1; ++j) n->val(i, j - c0) = a->val(i, j);
        if (n->requires_grad)
            n->back = [a, c0](Node& self) {
                for (int i = 0; i < self.grad.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j) a->grad(i, c0 + j) += self.grad(i, j);
            };
        return n;
    }

    // Embedding lookup: out row i = table row ids[i].
    Node* gather_rows(Node* table, const std::vector<int>& ids) {
        Node* n = alloc_op(static_cast<int>(ids.size()), table->val.cols, {table});
        for (size_t i = 0; i < ids.size(); ++i) {
            assert(ids[i] >= 0 && ids[i] < table->val.rows);
            const real* src = table->val.row_ptr(ids[i]);
            real* dst = n->val.row_ptr(static_cast<int>(i));
            for (int j = 0; j < table->val.cols; ++j) dst[j] = src[j];
        }
        if (n->requires_grad) {
            std::vector<int> idc = ids;
            n->back = [table, idc](Node& self) {
                for (size_t i = 0; i < idc.size(); ++i) {
                    const real* g = self.grad.row_ptr(static_cast<int>(i));
                    real* dst = table->grad.row_ptr(idc[i]);
                    for (int j = 0; j < self.grad.cols; ++j) dst[j] += g[j];
                }
            };
        }
        return n;
    }

    // Repeat a 1 x d row m times.
    Node* tile_row(Node* v, int m) {
        assert(v->val.rows == 1);
        Node* n = alloc_op(m, v->val.cols, {v});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < v->val.cols; ++j) n->val(i, j) = v->val(0, j);
        if (n->requires_grad)
            n->back = [v](Node& self) {
                for (int i = 0; i < self.grad.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j) v->grad(0, j) += self.grad(i, j);
            };
        return n;
    }

    Node* mean_rows(Node* a) {
        Node* n = alloc_op(1, a->val.cols, {a});
        const real inv = 1.0 / a->val.rows;
        for (int i = 0; i < a->val.rows; ++i)
            for (int j = 0; j < a->val.cols; ++j) n->val(0, j) += a->val(i, j) * inv;
        if (n->requires_grad)
            n->back = [a, inv](Node& self) {
                for (int i = 0; i < a->val.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j) a->grad(i, j) += self.grad(0, j) * inv;
            };
        return n;
    }

    // ---- nonlinearities ----

    Node* gelu(Node* a) {
        Node* n = make(a->val, {a});
        for (auto& v : n->val.a) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
        if (n->requires_grad)
            n->back = [a](Node& self) {
                for (size_t i = 0; i < self.grad.a.size(); ++i) {
                    const real x = a->val.a[i];
                    const real cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const real pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
                    a->grad.a[i] += self.grad.a[i] * (cdf + x * pdf);
                }
            };
        return n;
    }

    Node* relu(Node* a) {
        Node* n = make(a->val, {a});
        for (auto& v : n->val.a)
            if (v < 0.0) v = 0.0;
        if (n->requires_grad)
            n->back = [a](Node& self) {
                for (size_t i = 0; i < self.grad.a.size(); ++i)
                    if (a->val.a[i] > 0.0) a->grad.a[i] += self.grad.a[i];
            };
        return n;
    }

    Node* logn(Node* a) {
        Node* n = make(a->val, {a});
        for (auto& v : n->val.a) v = std::log(v);
        if (n->requires_grad)
            n->back = [a](Node& self) {
                for (size_t i = 0; i < self.grad.a.size(); ++i) a->grad.a[i] += self.grad.a[i] / a->val.a[i];
            };
        return n;
    }

    Node* softmax_rows(Node* a) {
        Node* n = make(a->val, {a});
        for (int i = 0; i < n->val.rows; ++i) {
            real* r = n->val.row_ptr(i);
            real mx = r[0];
            for (int j = 1; j < n->val.cols; ++j) mx = std::max(mx, r[j]);
            real s = 0.0;
            for (int j = 0; j < n->val.cols; ++j) {
                r[j] = std::exp(r[j] - mx);
                s += r[j];
            }
            const real inv = 1.0 / s;
            for (int j = 0; j < n->val.cols; ++j) r[j] *= inv;
        }
        if (n->requires_grad)
            n->back = [a](Node& self) {
                for (int i = 0; i < self.grad.rows; ++i) {
                    const real* y = self.val.row_ptr(i);
                    const real* dy = self.grad.row_ptr(i);
                    real dotv = 0.0;
                    for (int j = 0; j < self.grad.cols; ++j) dotv += dy[j] * y[j];
                    real* da = a->grad.row_ptr(i);
                    for (int j = 0; j < self.grad.cols; ++j) da[j] += (dy[j] - dotv) * y[j];
                }
            };
        return n;
    }

    // Row-wise layer norm with learnable gain/bias (1 x d each).
    Node* layer_norm(Node* a, Node* gain, Node* bias, real eps = 1e-5) {
        const int d = a->val.cols;
        assert(gain->val.rows == 1 && gain->val.cols == d && bias->val.rows == 1 && bias->val.cols == d);
        Node* n = alloc_op(a->val.rows, d, {a, gain, bias});
        Mat xhat(a->val.rows, d);
        std::vector<real> inv_sigma(a->val.rows);
        for (int i = 0; i < a->val.rows; ++i) {
            const real* x = a->val.row_ptr(i);
            real mu = 0.0;
            for (int j = 0; j < d; ++j) mu += x[j];
            mu /= d;
            real var = 0.0;
            for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
            var /= d;
            const real is = 1.0 / std::sqrt(var + eps);
            inv_sigma[i] = is;
            for (int j = 0; j < d; ++j) {
                xhat(i, j) = (x[j] - mu) * is;
                n->val(i, j) = gain->val(0, j) * xhat(i, j) + bias->val(0, j);
            }
        }
        if (n->requires_grad) {
            n->back = [a, gain, bias, xh = std::move(xhat), is = std::move(inv_sigma)](Node& self) {
                const int d2 = self.grad.cols;
                for (int i = 0; i < self.grad.rows; ++i) {
                    const real* dy = self.grad.row_ptr(i);
                    const real* xr = xh.row_ptr(i);
                    if (gain->requires_grad)
                        for (int j = 0; j < d2; ++j) gain->grad(0, j) += dy[j] * xr[j];
                    if (bias->requires_grad)
                        for (int j = 0; j < d2; ++j) bias->grad(0, j) += dy[j];
                    if (a->requires_grad) {
                        real m1 = 0.0, m2 = 0.0;
                        for (int j = 0; j < d2; ++j) {
                            const real t = dy[j] * gain->val(0, j);
                            m1 += t;
                            m2 += t * xr[j];
                        }
                        m1 /= d2;
                        m2 /= d2;
                        real* da = a->grad.row_ptr(i);
                        for (int j = 0; j < d2; ++j) {
                            const real t = dy[j] * gain->val(0, j);
                            da[j] += (t - m1 - xr[j] * m2) * is[i];
                        }
                    }
                }
            };
        }
        return n;
    }

    // Inverted dropout. No-op when rate is 0 or the tape is in eval mode.
    Node* dropout(Node* a, real rate, Rng& rng, bool train) {
        if (!train || rate <= 0.0) return a;
        Mat m(a->val.rows, a->val.cols);
        const real keep = 1.0 - rate;
        for (auto& v : m.a) v = (rng.uniform() < keep) ? (1.0 / keep) : 0.0;
        return mask(a, m);
    }

    // ---- scalar reductions (1 x 1 results) ----

    Node* pick(Node* a, int r, int c) {
        Node* n = alloc_op(1, 1, {a});
        n->val(0, 0) = a->val(r, c);
        if (n->requires_grad)
            n->back = [a, r, c](Node& self) { a->grad(r, c) += self.grad(0, 0); };
        return n;
    }

    // mean over rows r of -log( sum_{c in cols[r]} P(r, c) ).
    // The workhorse for cross-entropy over softmax outputs, including the
    // merged generation+copy distribution where one surface word owns
    // several columns.
    Node* neg_log_pick_sum(Node* p, const std::vector<std::vector<int>>& cols) {
        const int nrow = static_cast<int>(cols.size());
        assert(nrow >= 1 && nrow <= p->val.rows);
        Node* n = alloc_op(1, 1, {p});
        std::vector<real> sums(nrow);
        real total = 0.0;
        for (int r = 0; r < nrow; ++r) {
            real s = 0.0;
            for (int c : cols[r]) s += p->val(r, c);
            sums[r] = s;
            total += -std::log(s);
        }
        n->val(0, 0) = total / nrow;
        if (n->requires_grad) {
            auto colsc = cols;
            n->back = [p, colsc, sums, nrow](Node& self) {
                const real g = self.grad(0, 0) / nrow;
                for (int r = 0; r < nrow; ++r) {
                    const real coef = -g / sums[r];
                    for (int c : colsc[r]) p->grad(r, c) += coef;
                }
            };
        }
        return n;
    }

    Node* add_many(const std::vector<Node*>& terms) {
        assert(!terms.empty());
        Node* acc = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
        return acc;
    }

    // ---- engine ----

    void backward(Node* loss) {
        assert(loss->val.rows == 1 && loss->val.cols == 1);
        if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
        for (auto& nd : nodes_)
            if (nd.requires_grad && nd.grad.rows == 0) nd.grad = Mat(nd.val.rows, nd.val.cols);
        if (loss->grad.rows == 0) loss->grad = Mat(1, 1);  // constant loss (e.g. clamped)
        loss->grad(0, 0) = 1.0;
        bool active = false;  // nodes created after the loss cannot influence it
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!active) {
                if (&*it != loss) continue;
                active = true;
            }
            if (it->requires_grad && it->back) it->back(*it);
        }
    }

    // Add the gradients gathered at parameter leaves into Param::grad.
    void accumulate_param_grads(real scale_by = 1.0) {
        for (auto& [p, node] : bindings_)
            if (node->grad.rows > 0) axpy(scale_by, node->grad, p->grad);
    }

    // Accumulate into an external store (keyed by Param*) for thread-local use.
    void accumulate_param_grads_into(std::vector<std::pair<Param*, Mat>>& store, real scale_by = 1.0) {
        for (auto& [p, node] : bindings_) {
            if (node->grad.rows == 0) continue;
            Mat* dst = nullptr;
            for (auto& [q, m] : store)
                if (q == p) {
                    dst = &m;
                    break;
                }
            if (!dst) {
                store.emplace_back(p, Mat(p->value.rows, p->value.cols));
                dst = &store.back().second;
            }
            axpy(scale_by, node->grad, *dst);
        }
    }

    size_t node_count() const { return nodes_.size(); }

   private:
    static constexpr real kInvSqrt2 = 0.70710678118654752440;
    static constexpr real kInvSqrt2Pi = 0.39894228040143267794;

    Node* alloc() {
        nodes_.emplace_back();
        return &nodes_.back();
    }

    Node* alloc_op(int rows, int cols, const std::vector<Node*>& parents) {
        Node* n = alloc();
        n->val = Mat(rows, cols);
        if (grad_enabled_)
            for (Node* p : parents)
                if (p->requires_grad) {
                    n->requires_grad = true;
                    break;
                }
        return n;
    }

    // For ops whose output starts as a copy of the first parent's value.
    Node* make(const Mat& init, const std::vector<Node*>& parents) {
        Node* n = alloc();
        n->val = init;
        if (grad_enabled_)
            for (Node* p : parents)
                if (p->requires_grad) {
                    n->requires_grad = true;
                    break;
                }
        return n;
    }

    std::deque<Node> nodes_;
    std::vector<std::pair<Param*, Node*>> bindings_;
    std::unordered_map<Param*, Node*> param_nodes_;
    bool grad_enabled_;
};

}  // namespace petd
