#include "tmc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "tmc/errors.hpp"

namespace tmc {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    auto n = std::make_shared<Node>();
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ConfigError("tensor: value count " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->op = "leaf";
    return n;
}

NodePtr make_op(const char* op, Shape shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<std::size_t>(shape_numel(n->shape)));
    n->op = op;
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    return n;
}

int norm_axis(int axis, int ndim, const char* op) {
    int a = axis < 0 ? axis + ndim : axis;
    if (a < 0 || a >= ndim)
        throw ConfigError(std::string(op) + ": axis " + std::to_string(axis) +
                          " out of range for rank " + std::to_string(ndim));
    return a;
}

}  // namespace

// ---------------------------------------------------------------- Tensor ---

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), false));
}

Tensor Tensor::full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v), false));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::int64_t Tensor::numel() const { return node_->numel(); }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }

std::int64_t Tensor::dim(int axis) const {
    return node_->shape[static_cast<std::size_t>(norm_axis(axis, ndim(), "dim"))];
}

std::vector<double>& Tensor::values() { return node_->value; }
const std::vector<double>& Tensor::values() const { return node_->value; }

std::vector<double>& Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}
const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

double Tensor::item() const {
    if (numel() != 1) throw ConfigError("item: tensor has shape " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::all_finite() const {
    for (double v : node_->value)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

void Tensor::backward() const {
    if (numel() != 1)
        throw ConfigError("backward: root must be scalar, got " + shape_str(shape()));
    // Iterative topological sort over the ancestor graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn) {
            n->ensure_grad();
            n->backward_fn();
        }
    }
}

// ---------------------------------------------------- broadcast arithmetic ---

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const int nd = static_cast<int>(std::max(a.size(), b.size()));
    Shape out(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        std::int64_t da = i < static_cast<int>(a.size()) ? a[a.size() - 1 - static_cast<std::size_t>(i)] : 1;
        std::int64_t db = i < static_cast<int>(b.size()) ? b[b.size() - 1 - static_cast<std::size_t>(i)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ConfigError(std::string(op) + ": incompatible extents " + std::to_string(da) +
                              " vs " + std::to_string(db) + " at axis " +
                              std::to_string(nd - 1 - i) + " for shapes " + shape_str(a) +
                              " and " + shape_str(b));
        out[static_cast<std::size_t>(nd - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Strides into `in` for iteration over `out` (0 where `in` is broadcast).
std::vector<std::int64_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::int64_t stride = 1;
    for (int i = 0; i < static_cast<int>(in.size()); ++i) {
        const std::size_t ia = in.size() - 1 - static_cast<std::size_t>(i);
        const std::size_t oa = out.size() - 1 - static_cast<std::size_t>(i);
        st[oa] = (in[ia] == 1 && out[oa] != 1) ? 0 : stride;
        stride *= in[ia];
    }
    return st;
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_bcast(const char* opname, const Tensor& ta, const Tensor& tb, Fwd fwd, BwdA bwd_a,
                    BwdB bwd_b) {
    NodePtr a = ta.node(), b = tb.node();
    Shape oshape = broadcast_shape(a->shape, b->shape, opname);
    auto out = make_op(opname, oshape, {a, b});
    const std::int64_t n = out->numel();
    const double* av = a->value.data();
    const double* bv = b->value.data();
    double* ov = out->value.data();

    const bool same_a = a->shape == oshape;
    const bool same_b = b->shape == oshape;
    const std::int64_t an = a->numel(), bn = b->numel();
    // Suffix fast path: operand shape equals the trailing extents of out,
    // so it tiles with offset = i % numel.
    auto is_suffix = [&oshape](const Shape& s) {
        if (s.size() > oshape.size()) return false;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[s.size() - 1 - i] != oshape[oshape.size() - 1 - i]) return false;
        return true;
    };
    const bool suffix_b = same_a && !same_b && is_suffix(b->shape);
    const bool suffix_a = same_b && !same_a && is_suffix(a->shape);

    if (same_a && same_b) {
        for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
    } else if (suffix_b) {
        for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i % bn]);
    } else if (suffix_a) {
        for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i % an], bv[i]);
    } else {
        const auto sa = bcast_strides(a->shape, oshape);
        const auto sb = bcast_strides(b->shape, oshape);
        std::vector<std::int64_t> idx(oshape.size(), 0);
        std::int64_t offa = 0, offb = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            ov[i] = fwd(av[offa], bv[offb]);
            for (int ax = static_cast<int>(oshape.size()) - 1; ax >= 0; --ax) {
                const std::size_t u = static_cast<std::size_t>(ax);
                offa += sa[u];
                offb += sb[u];
                if (++idx[u] < oshape[u]) break;
                offa -= sa[u] * oshape[u];
                offb -= sb[u] * oshape[u];
                idx[u] = 0;
            }
        }
    }

    Node* raw = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backward_fn = [raw, pa, pb, bwd_a, bwd_b]() {
        const std::int64_t n = raw->numel();
        const double* g = raw->grad.data();
        const double* av = pa->value.data();
        const double* bv = pb->value.data();
        const std::int64_t an = pa->numel(), bn = pb->numel();
        const bool same_a = pa->shape == raw->shape;
        const bool same_b = pb->shape == raw->shape;
        if (pa->requires_grad) {
            pa->ensure_grad();
            double* ga = pa->grad.data();
            if (same_a) {
                if (same_b)
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd_a(g[i], av[i], bv[i]);
                else {
                    const auto sb = bcast_strides(pb->shape, raw->shape);
                    std::vector<std::int64_t> idx(raw->shape.size(), 0);
                    std::int64_t offb = 0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        ga[i] += bwd_a(g[i], av[i], bv[offb]);
                        for (int ax = static_cast<int>(raw->shape.size()) - 1; ax >= 0; --ax) {
                            const std::size_t u = static_cast<std::size_t>(ax);
                            offb += sb[u];
                            if (++idx[u] < raw->shape[u]) break;
                            offb -= sb[u] * raw->shape[u];
                            idx[u] = 0;
                        }
                    }
                }
            } else {
                const auto sa = bcast_strides(pa->shape, raw->shape);
                const auto sb = bcast_strides(pb->shape, raw->shape);
                std::vector<std::int64_t> idx(raw->shape.size(), 0);
                std::int64_t offa = 0, offb = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    ga[offa] += bwd_a(g[i], av[offa], bv[offb]);
                    for (int ax = static_cast<int>(raw->shape.size()) - 1; ax >= 0; --ax) {
                        const std::size_t u = static_cast<std::size_t>(ax);
                        offa += sa[u];
                        offb += sb[u];
                        if (++idx[u] < raw->shape[u]) break;
                        offa -= sa[u] * raw->shape[u];
                        offb -= sb[u] * raw->shape[u];
                        idx[u] = 0;
                    }
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            double* gb = pb->grad.data();
            if (same_b) {
                if (same_a)
                    for (std::int64_t i = 0; i < n; ++i) gb[i] += bwd_b(g[i], av[i], bv[i]);
                else {
                    const auto sa = bcast_strides(pa->shape, raw->shape);
                    std::vector<std::int64_t> idx(raw->shape.size(), 0);
                    std::int64_t offa = 0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        gb[i] += bwd_b(g[i], av[offa], bv[i]);
                        for (int ax = static_cast<int>(raw->shape.size()) - 1; ax >= 0; --ax) {
                            const std::size_t u = static_cast<std::size_t>(ax);
                            offa += sa[u];
                            if (++idx[u] < raw->shape[u]) break;
                            offa -= sa[u] * raw->shape[u];
                            idx[u] = 0;
                        }
                    }
                }
            } else {
                const auto sa = bcast_strides(pa->shape, raw->shape);
                const auto sb = bcast_strides(pb->shape, raw->shape);
                std::vector<std::int64_t> idx(raw->shape.size(), 0);
                std::int64_t offa = 0, offb = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    gb[offb] += bwd_b(g[i], av[offa], bv[offb]);
                    for (int ax = static_cast<int>(raw->shape.size()) - 1; ax >= 0; --ax) {
                        const std::size_t u = static_cast<std::size_t>(ax);
                        offa += sa[u];
                        offb += sb[u];
                        if (++idx[u] < raw->shape[u]) break;
                        offa -= sa[u] * raw->shape[u];
                        offb -= sb[u] * raw->shape[u];
                        idx[u] = 0;
                    }
                }
            }
        }
        (void)an;
        (void)bn;
    };
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_bcast(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_bcast(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_bcast(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double c) {
    auto out = make_op("scale", a.shape(), {a.node()});
    const std::int64_t n = out->numel();
    for (std::int64_t i = 0; i < n; ++i) out->value[static_cast<std::size_t>(i)] = c * a.values()[static_cast<std::size_t>(i)];
    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, c]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const std::int64_t n = raw->numel();
        for (std::int64_t i = 0; i < n; ++i) pa->grad[static_cast<std::size_t>(i)] += c * raw->grad[static_cast<std::size_t>(i)];
    };
    return Tensor(out);
}

// ---------------------------------------------------------------- matmul ---

namespace {

// C[n,m] += A[n,k] * B[k,m]
void mm_acc(double* C, const double* A, const double* B, std::int64_t n, std::int64_t k,
            std::int64_t m) {
    for (std::int64_t i = 0; i < n; ++i) {
        double* crow = C + i * m;
        const double* arow = A + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + p * m;
            for (std::int64_t j = 0; j < m; ++j) crow[j] += a * brow[j];
        }
    }
}

// dA[n,k] += dC[n,m] * B^T  (B is [k,m])
void mm_acc_bt(double* dA, const double* dC, const double* B, std::int64_t n, std::int64_t k,
               std::int64_t m) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* gro = dC + i * m;
        double* arow = dA + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double* brow = B + p * m;
            double acc = 0.0;
            for (std::int64_t j = 0; j < m; ++j) acc += gro[j] * brow[j];
            arow[p] += acc;
        }
    }
}

// dB[k,m] += A^T * dC  (A is [n,k])
void mm_acc_at(double* dB, const double* A, const double* dC, std::int64_t n, std::int64_t k,
               std::int64_t m) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* arow = A + i * k;
        const double* gro = dC + i * m;
        for (std::int64_t p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            double* brow = dB + p * m;
            for (std::int64_t j = 0; j < m; ++j) brow[j] += a * gro[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    NodePtr a = ta.node(), b = tb.node();
    const int ra = static_cast<int>(a->shape.size());
    const int rb = static_cast<int>(b->shape.size());
    if ((ra != 2 && ra != 3) || (rb != 2 && rb != 3) || (ra == 2 && rb == 3))
        throw ConfigError("matmul: unsupported ranks " + shape_str(a->shape) + " x " +
                          shape_str(b->shape));
    const std::int64_t n = a->shape[static_cast<std::size_t>(ra - 2)];
    const std::int64_t k = a->shape[static_cast<std::size_t>(ra - 1)];
    const std::int64_t kb = b->shape[static_cast<std::size_t>(rb - 2)];
    const std::int64_t m = b->shape[static_cast<std::size_t>(rb - 1)];
    if (k != kb)
        throw ConfigError("matmul: inner extents differ at last axis of lhs (" +
                          std::to_string(k) + ") vs axis " + std::to_string(rb - 2) +
                          " of rhs (" + std::to_string(kb) + ") for " + shape_str(a->shape) +
                          " x " + shape_str(b->shape));
    const std::int64_t batch = ra == 3 ? a->shape[0] : 1;
    if (ra == 3 && rb == 3 && b->shape[0] != batch)
        throw ConfigError("matmul: batch extents differ at axis 0: " + shape_str(a->shape) +
                          " x " + shape_str(b->shape));

    Shape oshape = ra == 3 ? Shape{batch, n, m} : Shape{n, m};
    auto out = make_op("matmul", oshape, {a, b});
    const bool b_batched = rb == 3;
    for (std::int64_t bi = 0; bi < batch; ++bi)
        mm_acc(out->value.data() + bi * n * m, a->value.data() + bi * n * k,
               b->value.data() + (b_batched ? bi * k * m : 0), n, k, m);

    Node* raw = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backward_fn = [raw, pa, pb, batch, n, k, m, b_batched]() {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t bi = 0; bi < batch; ++bi)
                mm_acc_bt(pa->grad.data() + bi * n * k, raw->grad.data() + bi * n * m,
                          pb->value.data() + (b_batched ? bi * k * m : 0), n, k, m);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t bi = 0; bi < batch; ++bi)
                mm_acc_at(pb->grad.data() + (b_batched ? bi * k * m : 0),
                          pa->value.data() + bi * n * k, raw->grad.data() + bi * n * m, n, k, m);
        }
    };
    return Tensor(out);
}

// ------------------------------------------------------- shape transforms ---

Tensor reshape(const Tensor& a, Shape shape) {
    // One extent may be -1 (inferred).
    std::int64_t known = 1;
    int infer = -1;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
        if (shape[static_cast<std::size_t>(i)] == -1) {
            if (infer >= 0) throw ConfigError("reshape: more than one inferred extent");
            infer = i;
        } else {
            known *= shape[static_cast<std::size_t>(i)];
        }
    }
    if (infer >= 0) {
        if (known == 0 || a.numel() % known != 0)
            throw ConfigError("reshape: cannot infer extent for " + shape_str(a.shape()) +
                              " -> " + shape_str(shape));
        shape[static_cast<std::size_t>(infer)] = a.numel() / known;
    }
    if (shape_numel(shape) != a.numel())
        throw ConfigError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                          shape_str(shape));
    auto out = make_op("reshape", shape, {a.node()});
    out->value = a.values();
    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < raw->grad.size(); ++i) pa->grad[i] += raw->grad[i];
    };
    return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ConfigError("concat: no inputs");
    const int nd = parts[0].ndim();
    const int ax = norm_axis(axis, nd, "concat");
    Shape oshape = parts[0].shape();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw ConfigError("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != ax && p.dim(i) != oshape[static_cast<std::size_t>(i)])
                throw ConfigError("concat: extent mismatch at axis " + std::to_string(i) +
                                  ": " + shape_str(p.shape()) + " vs " + shape_str(oshape));
        total += p.dim(ax);
    }
    oshape[static_cast<std::size_t>(ax)] = total;

    std::vector<NodePtr> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    auto out = make_op("concat", oshape, pnodes);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= oshape[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < nd; ++i) inner *= oshape[static_cast<std::size_t>(i)];

    std::int64_t off = 0;
    for (const auto& pn : pnodes) {
        const std::int64_t ext = pn->shape[static_cast<std::size_t>(ax)];
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(pn->value.data() + o * ext * inner, ext * inner,
                        out->value.data() + (o * total + off) * inner);
        off += ext;
    }

    Node* raw = out.get();
    std::vector<Node*> praw;
    for (auto& pn : pnodes) praw.push_back(pn.get());
    out->backward_fn = [raw, praw, outer, inner, total, ax]() {
        std::int64_t off = 0;
        for (Node* p : praw) {
            const std::int64_t ext = p->shape[static_cast<std::size_t>(ax)];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = raw->grad.data() + (o * total + off) * inner;
                    double* dst = p->grad.data() + o * ext * inner;
                    for (std::int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
                }
            }
            off += ext;
        }
    };
    return Tensor(out);
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
    const int nd = a.ndim();
    const int ax = norm_axis(axis, nd, "slice");
    const std::int64_t ext = a.dim(ax);
    if (start < 0 || len < 0 || start + len > ext)
        throw ConfigError("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of bounds for extent " +
                          std::to_string(ext) + " at axis " + std::to_string(ax));
    Shape oshape = a.shape();
    oshape[static_cast<std::size_t>(ax)] = len;
    auto out = make_op("slice", oshape, {a.node()});

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= a.dim(i);
    for (int i = ax + 1; i < nd; ++i) inner *= a.dim(i);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(a.values().data() + (o * ext + start) * inner, len * inner,
                    out->value.data() + o * len * inner);

    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, outer, inner, ext, start, len]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = raw->grad.data() + o * len * inner;
            double* dst = pa->grad.data() + (o * ext + start) * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    };
    return Tensor(out);
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
    const int nd = a.ndim();
    const int a0 = norm_axis(axis0, nd, "transpose");
    const int a1 = norm_axis(axis1, nd, "transpose");
    Shape oshape = a.shape();
    std::swap(oshape[static_cast<std::size_t>(a0)], oshape[static_cast<std::size_t>(a1)]);
    auto out = make_op("transpose", oshape, {a.node()});

    // Strides of the input, permuted to output axis order.
    std::vector<std::int64_t> istr(static_cast<std::size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        istr[static_cast<std::size_t>(i)] = istr[static_cast<std::size_t>(i + 1)] * a.dim(i + 1);
    std::vector<std::int64_t> pstr = istr;
    std::swap(pstr[static_cast<std::size_t>(a0)], pstr[static_cast<std::size_t>(a1)]);

    const std::int64_t n = out->numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        out->value[static_cast<std::size_t>(i)] = a.values()[static_cast<std::size_t>(src)];
        for (int ax = nd - 1; ax >= 0; --ax) {
            const std::size_t u = static_cast<std::size_t>(ax);
            src += pstr[u];
            if (++idx[u] < oshape[u]) break;
            src -= pstr[u] * oshape[u];
            idx[u] = 0;
        }
    }

    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, pstr, oshape, nd]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const std::int64_t n = raw->numel();
        std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
        std::int64_t src = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            pa->grad[static_cast<std::size_t>(src)] += raw->grad[static_cast<std::size_t>(i)];
            for (int ax = nd - 1; ax >= 0; --ax) {
                const std::size_t u = static_cast<std::size_t>(ax);
                src += pstr[u];
                if (++idx[u] < oshape[u]) break;
                src -= pstr[u] * oshape[u];
                idx[u] = 0;
            }
        }
    };
    return Tensor(out);
}

// -------------------------------------------------------------- reductions ---

Tensor reduce_mean(const Tensor& a) {
    auto out = make_op("reduce_mean", Shape{1}, {a.node()});
    const std::int64_t n = a.numel();
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    out->value[0] = acc / static_cast<double>(n);
    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, n]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = raw->grad[0] / static_cast<double>(n);
        for (auto& v : pa->grad) v += g;
    };
    return Tensor(out);
}

namespace {
void axis_extents(const Tensor& a, int ax, std::int64_t& outer, std::int64_t& ext,
                  std::int64_t& inner) {
    outer = inner = 1;
    ext = a.dim(ax);
    for (int i = 0; i < ax; ++i) outer *= a.dim(i);
    for (int i = ax + 1; i < a.ndim(); ++i) inner *= a.dim(i);
}

Shape drop_axis(const Shape& s, int ax) {
    Shape o;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != ax) o.push_back(s[static_cast<std::size_t>(i)]);
    if (o.empty()) o.push_back(1);
    return o;
}
}  // namespace

Tensor reduce_mean(const Tensor& a, int axis) {
    const int ax = norm_axis(axis, a.ndim(), "reduce_mean");
    std::int64_t outer, ext, inner;
    axis_extents(a, ax, outer, ext, inner);
    auto out = make_op("reduce_mean_axis", drop_axis(a.shape(), ax), {a.node()});
    const double* av = a.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::int64_t e = 0; e < ext; ++e) acc += av[(o * ext + e) * inner + i];
            out->value[static_cast<std::size_t>(o * inner + i)] = acc / static_cast<double>(ext);
        }
    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, outer, ext, inner]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                const double g =
                    raw->grad[static_cast<std::size_t>(o * inner + i)] / static_cast<double>(ext);
                for (std::int64_t e = 0; e < ext; ++e)
                    pa->grad[static_cast<std::size_t>((o * ext + e) * inner + i)] += g;
            }
    };
    return Tensor(out);
}

Tensor reduce_max(const Tensor& a, int axis) {
    const int ax = norm_axis(axis, a.ndim(), "reduce_max");
    std::int64_t outer, ext, inner;
    axis_extents(a, ax, outer, ext, inner);
    auto out = make_op("reduce_max", drop_axis(a.shape(), ax), {a.node()});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out->value.size());
    const double* av = a.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t bi = 0;
            for (std::int64_t e = 0; e < ext; ++e) {
                const double v = av[(o * ext + e) * inner + i];
                if (v > best) {
                    best = v;
                    bi = (o * ext + e) * inner + i;
                }
            }
            out->value[static_cast<std::size_t>(o * inner + i)] = best;
            (*argmax)[static_cast<std::size_t>(o * inner + i)] = bi;
        }
    Node* raw = out.get();
    Node* pa = a.node().get();
    out->backward_fn = [raw, pa, argmax]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < raw->grad.size(); ++i)
            pa->grad[static_cast<std::size_t>((*argmax)[i])] += raw->grad[i];
    };
    return Tensor(out);
}

// ------------------------------------------------------------------ conv ---

Tensor conv2d(const Tensor& tx, const Tensor& tw, const Tensor& tb, Padding padding) {
    NodePtr x = tx.node(), w = tw.node();
    if (x->shape.size() != 4 || w->shape.size() != 4)
        throw ConfigError("conv2d: expected NCHW input and FCkk kernel, got " +
                          shape_str(x->shape) + " and " + shape_str(w->shape));
    const std::int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t F = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[1] != C)
        throw ConfigError("conv2d: kernel channels " + std::to_string(w->shape[1]) +
                          " != input channels " + std::to_string(C));
    std::int64_t ph = 0, pw = 0, Ho, Wo;
    if (padding == Padding::Same) {
        ph = (kh - 1) / 2;
        pw = (kw - 1) / 2;
        Ho = H;
        Wo = W;
    } else {
        Ho = H - kh + 1;
        Wo = W - kw + 1;
        if (Ho <= 0 || Wo <= 0)
            throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " larger than input " + std::to_string(H) + "x" +
                              std::to_string(W) + " under valid padding");
    }
    const bool has_bias = tb.defined();
    if (has_bias && (tb.ndim() != 1 || tb.dim(0) != F))
        throw ConfigError("conv2d: bias shape " + shape_str(tb.shape()) + " != (F)=(" +
                          std::to_string(F) + ")");

    std::vector<NodePtr> parents{x, w};
    if (has_bias) parents.push_back(tb.node());
    auto out = make_op("conv2d", Shape{N, F, Ho, Wo}, parents);

    const double* xv = x->value.data();
    const double* wv = w->value.data();
    double* ov = out->value.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t f = 0; f < F; ++f) {
            const double bias = has_bias ? tb.values()[static_cast<std::size_t>(f)] : 0.0;
            for (std::int64_t i = 0; i < Ho; ++i) {
                double* orow = ov + ((n * F + f) * Ho + i) * Wo;
                for (std::int64_t j = 0; j < Wo; ++j) orow[j] = bias;
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t u = 0; u < kh; ++u) {
                        const std::int64_t ih = i + u - ph;
                        if (ih < 0 || ih >= H) continue;
                        const double* xr = xv + ((n * C + c) * H + ih) * W;
                        const double* wr = wv + ((f * C + c) * kh + u) * kw;
                        for (std::int64_t v = 0; v < kw; ++v) {
                            const double wval = wr[v];
                            if (wval == 0.0) continue;
                            const std::int64_t j0 = std::max<std::int64_t>(0, pw - v);
                            const std::int64_t j1 = std::min(Wo, W + pw - v);
                            const double* xoff = xr + v - pw;
                            for (std::int64_t j = j0; j < j1; ++j) orow[j] += wval * xoff[j];
                        }
                    }
            }
        }

    Node* raw = out.get();
    Node* px = x.get();
    Node* pwn = w.get();
    Node* pbn = has_bias ? tb.node().get() : nullptr;
    out->backward_fn = [raw, px, pwn, pbn, N, C, H, W, F, kh, kw, ph, pw, Ho, Wo]() {
        const double* g = raw->grad.data();
        if (px->requires_grad) {
            px->ensure_grad();
            double* dx = px->grad.data();
            const double* wv = pwn->value.data();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t f = 0; f < F; ++f)
                    for (std::int64_t i = 0; i < Ho; ++i) {
                        const double* grow = g + ((n * F + f) * Ho + i) * Wo;
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t u = 0; u < kh; ++u) {
                                const std::int64_t ih = i + u - ph;
                                if (ih < 0 || ih >= H) continue;
                                double* dxr = dx + ((n * C + c) * H + ih) * W;
                                const double* wr = wv + ((f * C + c) * kh + u) * kw;
                                for (std::int64_t v = 0; v < kw; ++v) {
                                    const double wval = wr[v];
                                    if (wval == 0.0) continue;
                                    const std::int64_t j0 = std::max<std::int64_t>(0, pw - v);
                                    const std::int64_t j1 = std::min(Wo, W + pw - v);
                                    double* dxoff = dxr + v - pw;
                                    for (std::int64_t j = j0; j < j1; ++j)
                                        dxoff[j] += wval * grow[j];
                                }
                            }
                    }
        }
        if (pwn->requires_grad) {
            pwn->ensure_grad();
            double* dw = pwn->grad.data();
            const double* xv = px->value.data();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t f = 0; f < F; ++f)
                    for (std::int64_t i = 0; i < Ho; ++i) {
                        const double* grow = g + ((n * F + f) * Ho + i) * Wo;
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t u = 0; u < kh; ++u) {
                                const std::int64_t ih = i + u - ph;
                                if (ih < 0 || ih >= H) continue;
                                const double* xr = xv + ((n * C + c) * H + ih) * W;
                                double* dwr = dw + ((f * C + c) * kh + u) * kw;
                                for (std::int64_t v = 0; v < kw; ++v) {
                                    const std::int64_t j0 = std::max<std::int64_t>(0, pw - v);
                                    const std::int64_t j1 = std::min(Wo, W + pw - v);
                                    const double* xoff = xr + v - pw;
                                    double acc = 0.0;
                                    for (std::int64_t j = j0; j < j1; ++j)
                                        acc += xoff[j] * grow[j];
                                    dwr[v] += acc;
                                }
                            }
                    }
        }
        if (pbn && pbn->requires_grad) {
            pbn->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t f = 0; f < F; ++f) {
                    const double* gplane = g + (n * F + f) * Ho * Wo;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gplane[i];
                    pbn->grad[static_cast<std::size_t>(f)] += acc;
                }
        }
    };
    return Tensor(out);
}

Tensor maxpool2d(const Tensor& tx, std::int64_t ph, std::int64_t pw) {
    NodePtr x = tx.node();
    if (x->shape.size() != 4)
        throw ConfigError("maxpool2d: expected NCHW input, got " + shape_str(x->shape));
    if (ph <= 0 || pw <= 0) throw ConfigError("maxpool2d: pool window of zero extent");
    const std::int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Ho = H / ph, Wo = W / pw;  // floor; partial edge windows dropped
    if (Ho == 0 || Wo == 0)
        throw ConfigError("maxpool2d: window " + std::to_string(ph) + "x" + std::to_string(pw) +
                          " larger than input " + std::to_string(H) + "x" + std::to_string(W));
    auto out = make_op("maxpool2d", Shape{N, C, Ho, Wo}, {x});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out->value.size());
    const double* xv = x->value.data();
    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < Ho; ++i)
                for (std::int64_t j = 0; j < Wo; ++j, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t bidx = 0;
                    for (std::int64_t u = 0; u < ph; ++u)
                        for (std::int64_t v = 0; v < pw; ++v) {
                            const std::int64_t src =
                                ((n * C + c) * H + i * ph + u) * W + j * pw + v;
                            if (xv[src] > best) {  // strict: ties keep the first in row-major
                                best = xv[src];
                                bidx = src;
                            }
                        }
                    out->value[static_cast<std::size_t>(oi)] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = bidx;
                }
    Node* raw = out.get();
    Node* px = x.get();
    out->backward_fn = [raw, px, argmax]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < raw->grad.size(); ++i)
            px->grad[static_cast<std::size_t>((*argmax)[i])] += raw->grad[i];
    };
    return Tensor(out);
}

// ---------------------------------------------------------- normalization ---

Tensor batchnorm(const Tensor& tx, const Tensor& tgamma, const Tensor& tbeta,
                 std::vector<double>& running_mean, std::vector<double>& running_var, Mode mode,
                 double momentum, double eps) {
    NodePtr x = tx.node();
    if (x->shape.size() != 4)
        throw ConfigError("batchnorm: expected NCHW input, got " + shape_str(x->shape));
    const std::int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    if (tgamma.numel() != C || tbeta.numel() != C)
        throw ConfigError("batchnorm: gamma/beta size != channel count " + std::to_string(C));
    if (static_cast<std::int64_t>(running_mean.size()) != C ||
        static_cast<std::int64_t>(running_var.size()) != C)
        throw ConfigError("batchnorm: running stats size != channel count");
    if (mode == Mode::Train && N < 2)
        throw ConfigError("batchnorm: train mode requires batch size >= 2, got " +
                          std::to_string(N));

    auto out = make_op("batchnorm", x->shape, {x, tgamma.node(), tbeta.node()});
    const std::int64_t plane = H * W;
    const std::int64_t m = N * plane;
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
    const double* xv = x->value.data();

    if (mode == Mode::Train) {
        for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const double* p = xv + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
            }
            const double mu = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const double* p = xv + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    vacc += d * d;
                }
            }
            const double var = vacc / static_cast<double>(m);
            (*mean)[static_cast<std::size_t>(c)] = mu;
            (*invstd)[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
            running_mean[static_cast<std::size_t>(c)] =
                momentum * running_mean[static_cast<std::size_t>(c)] + (1.0 - momentum) * mu;
            running_var[static_cast<std::size_t>(c)] =
                momentum * running_var[static_cast<std::size_t>(c)] + (1.0 - momentum) * var;
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            (*mean)[static_cast<std::size_t>(c)] = running_mean[static_cast<std::size_t>(c)];
            (*invstd)[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
        }
    }

    const double* gv = tgamma.values().data();
    const double* bv = tbeta.values().data();
    double* ov = out->value.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const double mu = (*mean)[static_cast<std::size_t>(c)];
            const double is = (*invstd)[static_cast<std::size_t>(c)];
            const double ga = gv[c], be = bv[c];
            const double* p = xv + (n * C + c) * plane;
            double* q = ov + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) q[i] = ga * (p[i] - mu) * is + be;
        }

    Node* raw = out.get();
    Node* px = x.get();
    Node* pg = tgamma.node().get();
    Node* pb = tbeta.node().get();
    const bool train = mode == Mode::Train;
    out->backward_fn = [raw, px, pg, pb, mean, invstd, N, C, plane, m, train]() {
        const double* g = raw->grad.data();
        const double* xv = px->value.data();
        const double* gv = pg->value.data();
        for (std::int64_t c = 0; c < C; ++c) {
            const double mu = (*mean)[static_cast<std::size_t>(c)];
            const double is = (*invstd)[static_cast<std::size_t>(c)];
            // Per-channel reductions over batch and spatial axes.
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const double* gr = g + (n * C + c) * plane;
                const double* xr = xv + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_dy += gr[i];
                    sum_dy_xhat += gr[i] * (xr[i] - mu) * is;
                }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                pg->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[static_cast<std::size_t>(c)] += sum_dy;
            }
            if (px->requires_grad) {
                px->ensure_grad();
                double* dx = px->grad.data();
                const double ga = gv[c];
                if (train) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::int64_t n = 0; n < N; ++n) {
                        const double* gr = g + (n * C + c) * plane;
                        const double* xr = xv + (n * C + c) * plane;
                        double* dr = dx + (n * C + c) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const double xhat = (xr[i] - mu) * is;
                            dr[i] += ga * is *
                                     (gr[i] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
                        }
                    }
                } else {
                    for (std::int64_t n = 0; n < N; ++n) {
                        const double* gr = g + (n * C + c) * plane;
                        double* dr = dx + (n * C + c) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) dr[i] += ga * is * gr[i];
                    }
                }
            }
        }
    };
    return Tensor(out);
}

Tensor layernorm(const Tensor& tx, const Tensor& tgamma, const Tensor& tbeta, double eps) {
    NodePtr x = tx.node();
    if (x->shape.empty()) throw ConfigError("layernorm: scalar input");
    const std::int64_t d = x->shape.back();
    if (tgamma.numel() != d || tbeta.numel() != d)
        throw ConfigError("layernorm: gamma/beta size != last-axis extent " + std::to_string(d));
    const std::int64_t rows = x->numel() / d;

    auto out = make_op("layernorm", x->shape, {x, tgamma.node(), tbeta.node()});
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    const double* xv = x->value.data();
    const double* gv = tgamma.values().data();
    const double* bv = tbeta.values().data();
    double* ov = out->value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* p = xv + r * d;
        double mu = 0.0;
        for (std::int64_t i = 0; i < d; ++i) mu += p[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            const double e = p[i] - mu;
            var += e * e;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean)[static_cast<std::size_t>(r)] = mu;
        (*invstd)[static_cast<std::size_t>(r)] = is;
        double* q = ov + r * d;
        for (std::int64_t i = 0; i < d; ++i) q[i] = gv[i] * (p[i] - mu) * is + bv[i];
    }

    Node* raw = out.get();
    Node* px = x.get();
    Node* pg = tgamma.node().get();
    Node* pb = tbeta.node().get();
    out->backward_fn = [raw, px, pg, pb, mean, invstd, rows, d]() {
        const double* g = raw->grad.data();
        const double* xv = px->value.data();
        const double* gv = pg->value.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double mu = (*mean)[static_cast<std::size_t>(r)];
            const double is = (*invstd)[static_cast<std::size_t>(r)];
            const double* gr = g + r * d;
            const double* xr = xv + r * d;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::int64_t i = 0; i < d; ++i) {
                const double xhat = (xr[i] - mu) * is;
                const double dxhat = gr[i] * gv[i];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    pg->grad[static_cast<std::size_t>(i)] += gr[i] * xhat;
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    pb->grad[static_cast<std::size_t>(i)] += gr[i];
                }
            }
            if (px->requires_grad) {
                px->ensure_grad();
                double* dr = px->grad.data() + r * d;
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::int64_t i = 0; i < d; ++i) {
                    const double xhat = (xr[i] - mu) * is;
                    const double dxhat = gr[i] * gv[i];
                    dr[i] += is * (dxhat - inv_d * sum_dxhat - inv_d * xhat * sum_dxhat_xhat);
                }
            }
        }
    };
    return Tensor(out);
}

// ------------------------------------------------------------- activations ---

namespace {
template <typename Fwd, typename Bwd>
Tensor unary(const char* opname, const Tensor& tx, Fwd fwd, Bwd bwd_from_out) {
    auto out = make_op(opname, tx.shape(), {tx.node()});
    const std::int64_t n = out->numel();
    const double* xv = tx.values().data();
    for (std::int64_t i = 0; i < n; ++i) out->value[static_cast<std::size_t>(i)] = fwd(xv[i]);
    Node* raw = out.get();
    Node* px = tx.node().get();
    out->backward_fn = [raw, px, bwd_from_out]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const std::int64_t n = raw->numel();
        for (std::int64_t i = 0; i < n; ++i)
            px->grad[static_cast<std::size_t>(i)] +=
                raw->grad[static_cast<std::size_t>(i)] *
                bwd_from_out(raw->value[static_cast<std::size_t>(i)],
                             px->value[static_cast<std::size_t>(i)]);
    };
    return Tensor(out);
}
}  // namespace

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double, double xin) { return xin > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double y, double) { return y * (1.0 - y); });
}

Tensor softmax_lastaxis(const Tensor& tx) {
    NodePtr x = tx.node();
    if (x->shape.empty()) throw ConfigError("softmax: scalar input");
    const std::int64_t d = x->shape.back();
    const std::int64_t rows = x->numel() / d;
    auto out = make_op("softmax", x->shape, {x});
    const double* xv = x->value.data();
    double* ov = out->value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* p = xv + r * d;
        double mx = p[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, p[i]);
        double sum = 0.0;
        double* q = ov + r * d;
        for (std::int64_t i = 0; i < d; ++i) {
            q[i] = std::exp(p[i] - mx);
            sum += q[i];
        }
        for (std::int64_t i = 0; i < d; ++i) q[i] /= sum;
    }
    Node* raw = out.get();
    Node* px = x.get();
    out->backward_fn = [raw, px, rows, d]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const double* g = raw->grad.data();
        const double* y = raw->value.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* gr = g + r * d;
            const double* yr = y + r * d;
            double dot = 0.0;
            for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
            double* dr = px->grad.data() + r * d;
            for (std::int64_t i = 0; i < d; ++i) dr[i] += yr[i] * (gr[i] - dot);
        }
    };
    return Tensor(out);
}

Tensor dropout(const Tensor& tx, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p = " + std::to_string(p) + " outside [0,1)");
    if (mode == Mode::Eval || p == 0.0) {
        // Identity pass-through that still participates in the graph.
        return scale(tx, 1.0);
    }
    auto out = make_op("dropout", tx.shape(), {tx.node()});
    const std::int64_t n = out->numel();
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    const double keep = 1.0 / (1.0 - p);
    const double* xv = tx.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
        const double m = rng.uniform() < p ? 0.0 : keep;
        (*mask)[static_cast<std::size_t>(i)] = m;
        out->value[static_cast<std::size_t>(i)] = xv[i] * m;
    }
    Node* raw = out.get();
    Node* px = tx.node().get();
    out->backward_fn = [raw, px, mask]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < raw->grad.size(); ++i)
            px->grad[i] += raw->grad[i] * (*mask)[i];
    };
    return Tensor(out);
}

Tensor bce_mean(const Tensor& tprobs, const std::vector<double>& labels) {
    NodePtr probs = tprobs.node();
    const std::int64_t n = probs->numel();
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw ConfigError("bce: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " probabilities");
    for (double y : labels)
        if (y != 0.0 && y != 1.0)
            throw ConfigError("bce: label " + std::to_string(y) + " outside {0,1}");
    constexpr double kClamp = 1e-7;
    auto clamped = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = probs->value[static_cast<std::size_t>(i)];
        if (!std::isfinite(v))
            throw NumericalError("bce: non-finite probability at index " + std::to_string(i));
        const double c = std::min(1.0 - kClamp, std::max(kClamp, v));
        (*clamped)[static_cast<std::size_t>(i)] = c;
        acc -= labels[static_cast<std::size_t>(i)] * std::log(c) +
               (1.0 - labels[static_cast<std::size_t>(i)]) * std::log(1.0 - c);
    }
    auto out = make_op("bce_mean", Shape{1}, {probs});
    out->value[0] = acc / static_cast<double>(n);
    auto lab = std::make_shared<std::vector<double>>(labels);
    Node* raw = out.get();
    Node* pp = probs.get();
    out->backward_fn = [raw, pp, clamped, lab, n]() {
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const double g = raw->grad[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const double c = (*clamped)[static_cast<std::size_t>(i)];
            const double y = (*lab)[static_cast<std::size_t>(i)];
            pp->grad[static_cast<std::size_t>(i)] += g * (-(y / c) + (1.0 - y) / (1.0 - c));
        }
    };
    return Tensor(out);
}

}  // namespace tmc
