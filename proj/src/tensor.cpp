#include "sedeg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace sedeg {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    check_defined(a, op);
    check_defined(b, op);
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("shape dims must be positive, got " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
               BackwardFn fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const Tensor& p : parents) {
            if (p.defined() && p.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        for (const Tensor& p : parents) {
            if (p.defined()) node->parents.push_back(p.node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
    const int64_t n = shape_numel(shape);
    return make_op(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), {}, nullptr);
}

Tensor Tensor::full(Shape shape, double v) {
    const int64_t n = shape_numel(shape);
    return make_op(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), {}, nullptr);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    const int64_t n = shape_numel(shape);
    require(n == static_cast<int64_t>(values.size()),
            "Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                shape_str(shape));
    return make_op(std::move(shape), std::move(values), {}, nullptr);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    const int64_t n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal() * stddev;
    return make_op(std::move(shape), std::move(v), {}, nullptr);
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, double stddev) {
    const int64_t n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.truncated_normal(stddev);
    return make_op(std::move(shape), std::move(v), {}, nullptr);
}

Tensor Tensor::param(Shape shape, Rng& rng, double stddev) {
    Tensor t = trunc_normal(std::move(shape), rng, stddev);
    t.set_requires_grad(true);
    return t;
}

double Tensor::item() const {
    require(numel() == 1, "item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    require(node_->parents.empty(), "set_requires_grad: only valid on leaf tensors");
    node_->requires_grad = flag;
    return *this;
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->requires_grad = node_->requires_grad;
    return Tensor(std::move(node));
}

void Tensor::check_finite(const std::string& what) const {
    for (double v : node_->value) {
        if (!std::isfinite(v)) throw std::runtime_error(what + ": non-finite value");
    }
}

uint64_t Tensor::value_hash() const {
    return hash_bytes(node_->value.data(), node_->value.size() * sizeof(double));
}

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    require(loss.numel() == 1, "backward: loss must be scalar");
    require(loss.requires_grad(), "backward: loss does not depend on any trainable tensor");
    require(!loss.raw()->consumed, "backward: graph already released by a previous backward");

    // iterative post-order DFS -> topological order (leaves first)
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.raw(), 0);
    visited.insert(loss.raw());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss.raw()->ensure_grad()[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    // release the graph; leaf gradients stay in place
    for (TensorNode* node : topo) {
        if (node->backward) {
            node->backward = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->consumed = true;
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    check_defined(a, "scale");
    std::vector<double> v(a.values());
    for (auto& x : v) x *= c;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), {a}, [pa, c](TensorNode& out) {
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * out.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    check_defined(a, "add_scalar");
    std::vector<double> v(a.values());
    for (auto& x : v) x += c;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), {a}, [pa](TensorNode& out) {
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    });
}

Tensor add_broadcast(const Tensor& x, const Tensor& p) {
    check_defined(x, "add_broadcast");
    check_defined(p, "add_broadcast");
    const Shape& xs = x.shape();
    const Shape& ps = p.shape();
    require(ps.size() <= xs.size() &&
                std::equal(ps.begin(), ps.end(), xs.end() - static_cast<long>(ps.size())),
            "add_broadcast: " + shape_str(ps) + " is not a suffix of " + shape_str(xs));
    const int64_t inner = shape_numel(ps);
    const int64_t outer = x.numel() / inner;
    const auto& xv = x.values();
    const auto& pv = p.values();
    std::vector<double> v(xv.size());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) v[o * inner + i] = xv[o * inner + i] + pv[i];
    auto px = x.node(), pp = p.node();
    return make_op(xs, std::move(v), {x, p}, [px, pp, outer, inner](TensorNode& out) {
        if (px->requires_grad) {
            auto& g = px->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        }
        if (pp->requires_grad) {
            auto& g = pp->ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) g[i] += out.grad[o * inner + i];
        }
    });
}

Tensor expand_leading(const Tensor& x, int n) {
    check_defined(x, "expand_leading");
    require(x.ndim() >= 1 && x.dim(0) == 1, "expand_leading: leading dim must be 1");
    require(n >= 1, "expand_leading: n must be >= 1");
    Shape out_shape = x.shape();
    out_shape[0] = n;
    const auto& xv = x.values();
    const int64_t inner = static_cast<int64_t>(xv.size());
    std::vector<double> v(static_cast<size_t>(inner * n));
    for (int r = 0; r < n; ++r) std::copy(xv.begin(), xv.end(), v.begin() + r * inner);
    auto px = x.node();
    return make_op(std::move(out_shape), std::move(v), {x}, [px, n, inner](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (int r = 0; r < n; ++r)
            for (int64_t i = 0; i < inner; ++i) g[i] += out.grad[r * inner + i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    require(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto px = x.node();
    return make_op(std::move(shape), std::vector<double>(x.values()), {x},
                   [px](TensorNode& out) {
                       if (!px->requires_grad) return;
                       auto& g = px->ensure_grad();
                       for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
                   });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_last: no inputs");
    const Shape& first = parts[0].shape();
    require(!first.empty(), "concat_last: need >= 1 dim");
    Shape lead(first.begin(), first.end() - 1);
    int total_last = 0;
    for (const Tensor& p : parts) {
        check_defined(p, "concat_last");
        require(p.ndim() == static_cast<int>(first.size()) &&
                    std::equal(lead.begin(), lead.end(), p.shape().begin()),
                "concat_last: leading dims mismatch");
        total_last += p.shape().back();
    }
    const int64_t rows = shape_numel(first) / first.back();
    Shape out_shape = lead;
    out_shape.push_back(total_last);
    std::vector<double> v(static_cast<size_t>(rows * total_last));
    std::vector<int> offsets;
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.shape().back();
        const auto& pv = p.values();
        for (int64_t r = 0; r < rows; ++r)
            std::copy(pv.begin() + r * w, pv.begin() + (r + 1) * w,
                      v.begin() + r * total_last + off);
        offsets.push_back(off);
        off += w;
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.shape().back());
    }
    return make_op(std::move(out_shape), std::move(v), parts,
                   [nodes, widths, offsets, rows, total_last](TensorNode& out) {
                       for (size_t k = 0; k < nodes.size(); ++k) {
                           if (!nodes[k]->requires_grad) continue;
                           auto& g = nodes[k]->ensure_grad();
                           const int w = widths[k];
                           const int o = offsets[k];
                           for (int64_t r = 0; r < rows; ++r)
                               for (int c = 0; c < w; ++c)
                                   g[r * w + c] += out.grad[r * total_last + o + c];
                       }
                   });
}

Tensor slice_last(const Tensor& x, int begin, int end) {
    check_defined(x, "slice_last");
    const int last = x.shape().back();
    require(0 <= begin && begin < end && end <= last,
            "slice_last: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") for last dim " + std::to_string(last));
    const int w = end - begin;
    const int64_t rows = x.numel() / last;
    Shape out_shape = x.shape();
    out_shape.back() = w;
    const auto& xv = x.values();
    std::vector<double> v(static_cast<size_t>(rows * w));
    for (int64_t r = 0; r < rows; ++r)
        std::copy(xv.begin() + r * last + begin, xv.begin() + r * last + end, v.begin() + r * w);
    auto px = x.node();
    return make_op(std::move(out_shape), std::move(v), {x},
                   [px, rows, w, last, begin](TensorNode& out) {
                       if (!px->requires_grad) return;
                       auto& g = px->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r)
                           for (int c = 0; c < w; ++c)
                               g[r * last + begin + c] += out.grad[r * w + c];
                   });
}

Tensor swap_dims_1_2(const Tensor& x) {
    check_defined(x, "swap_dims_1_2");
    require(x.ndim() == 4, "swap_dims_1_2: expected 4-D, got " + shape_str(x.shape()));
    const int A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
    const auto& xv = x.values();
    std::vector<double> v(xv.size());
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double* src = &xv[((static_cast<int64_t>(a) * B + b) * C + c) * D];
                double* dst = &v[((static_cast<int64_t>(a) * C + c) * B + b) * D];
                std::copy(src, src + D, dst);
            }
    auto px = x.node();
    return make_op({A, C, B, D}, std::move(v), {x}, [px, A, B, C, D](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (int a = 0; a < A; ++a)
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double* src = &out.grad[((static_cast<int64_t>(a) * C + c) * B + b) * D];
                    double* dst = &g[((static_cast<int64_t>(a) * B + b) * C + c) * D];
                    for (int d = 0; d < D; ++d) dst[d] += src[d];
                }
    });
}

// ---------------------------------------------------------------------------
// matmul kernels
// ---------------------------------------------------------------------------

namespace detail {

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<int64_t>(i) * n;
        const double* arow = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<int64_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    // c[kk, j] += sum_i a[i, kk] * b[i, j]
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        const double* brow = b + static_cast<int64_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* crow = c + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "linear");
    check_defined(w, "linear");
    check_defined(b, "linear");
    require(w.ndim() == 2, "linear: weight must be 2-D");
    const int K = w.dim(0), N = w.dim(1);
    require(x.shape().back() == K, "linear: input " + shape_str(x.shape()) +
                                       " incompatible with weight " + shape_str(w.shape()));
    require(b.ndim() == 1 && b.dim(0) == N, "linear: bias must be [N]");
    const int64_t M = x.numel() / K;
    std::vector<double> v(static_cast<size_t>(M * N));
    const auto& bv = b.values();
    for (int64_t r = 0; r < M; ++r) std::copy(bv.begin(), bv.end(), v.begin() + r * N);
    detail::mm_nn(x.values().data(), w.values().data(), v.data(), static_cast<int>(M), K, N);
    Shape out_shape = x.shape();
    out_shape.back() = N;
    auto px = x.node(), pw = w.node(), pb = b.node();
    return make_op(std::move(out_shape), std::move(v), {x, w, b},
                   [px, pw, pb, M, K, N](TensorNode& out) {
                       const double* g = out.grad.data();
                       if (px->requires_grad) {
                           detail::mm_nt(g, pw->value.data(), px->ensure_grad().data(),
                                         static_cast<int>(M), N, K);
                       }
                       if (pw->requires_grad) {
                           detail::mm_tn(px->value.data(), g, pw->ensure_grad().data(),
                                         static_cast<int>(M), K, N);
                       }
                       if (pb->requires_grad) {
                           auto& gb = pb->ensure_grad();
                           for (int64_t r = 0; r < M; ++r)
                               for (int j = 0; j < N; ++j) gb[j] += g[r * N + j];
                       }
                   });
}

namespace {

void check_bmm(const char* op, const Tensor& a, const Tensor& b, int b_rows_dim) {
    check_defined(a, op);
    check_defined(b, op);
    require(a.ndim() == 3 && b.ndim() == 3, std::string(op) + ": expected 3-D inputs");
    require(a.dim(0) == b.dim(0), std::string(op) + ": batch dims differ");
    require(a.dim(2) == b.dim(b_rows_dim), std::string(op) + ": inner dims differ for " +
                                               shape_str(a.shape()) + " x " + shape_str(b.shape()));
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
    check_bmm("bmm", a, b, 1);
    const int L = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    std::vector<double> v(static_cast<size_t>(L) * M * N, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int l = 0; l < L; ++l)
        detail::mm_nn(av + static_cast<int64_t>(l) * M * K, bv + static_cast<int64_t>(l) * K * N,
                      v.data() + static_cast<int64_t>(l) * M * N, M, K, N);
    auto pa = a.node(), pb = b.node();
    return make_op({L, M, N}, std::move(v), {a, b}, [pa, pb, L, M, K, N](TensorNode& out) {
        for (int l = 0; l < L; ++l) {
            const double* g = out.grad.data() + static_cast<int64_t>(l) * M * N;
            if (pa->requires_grad) {
                // da = g * b^T
                detail::mm_nt(g, pb->value.data() + static_cast<int64_t>(l) * K * N,
                              pa->ensure_grad().data() + static_cast<int64_t>(l) * M * K, M, N, K);
            }
            if (pb->requires_grad) {
                // db = a^T * g
                detail::mm_tn(pa->value.data() + static_cast<int64_t>(l) * M * K, g,
                              pb->ensure_grad().data() + static_cast<int64_t>(l) * K * N, M, K, N);
            }
        }
    });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    check_bmm("bmm_nt", a, b, 2);
    const int L = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
    std::vector<double> v(static_cast<size_t>(L) * M * N, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int l = 0; l < L; ++l)
        detail::mm_nt(av + static_cast<int64_t>(l) * M * K, bv + static_cast<int64_t>(l) * N * K,
                      v.data() + static_cast<int64_t>(l) * M * N, M, K, N);
    auto pa = a.node(), pb = b.node();
    return make_op({L, M, N}, std::move(v), {a, b}, [pa, pb, L, M, K, N](TensorNode& out) {
        for (int l = 0; l < L; ++l) {
            const double* g = out.grad.data() + static_cast<int64_t>(l) * M * N;
            if (pa->requires_grad) {
                // da = g * b
                detail::mm_nn(g, pb->value.data() + static_cast<int64_t>(l) * N * K,
                              pa->ensure_grad().data() + static_cast<int64_t>(l) * M * K, M, N, K);
            }
            if (pb->requires_grad) {
                // db = g^T * a
                detail::mm_tn(g, pa->value.data() + static_cast<int64_t>(l) * M * K,
                              pb->ensure_grad().data() + static_cast<int64_t>(l) * N * K, M, N, K);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& x) {
    check_defined(x, "softmax_last");
    const int C = x.shape().back();
    const int64_t rows = x.numel() / C;
    const auto& xv = x.values();
    std::vector<double> v(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = &xv[r * C];
        double m = row[0];
        for (int j = 1; j < C; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int j = 0; j < C; ++j) {
            v[r * C + j] = std::exp(row[j] - m);
            sum += v[r * C + j];
        }
        for (int j = 0; j < C; ++j) v[r * C + j] /= sum;
    }
    auto px = x.node();
    std::vector<double> y = v;  // saved for backward
    return make_op(x.shape(), std::move(v), {x}, [px, y, rows, C](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int j = 0; j < C; ++j) dot += out.grad[r * C + j] * y[r * C + j];
            for (int j = 0; j < C; ++j)
                g[r * C + j] += y[r * C + j] * (out.grad[r * C + j] - dot);
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    check_defined(x, "sigmoid");
    const auto& xv = x.values();
    std::vector<double> v(xv.size());
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    auto px = x.node();
    std::vector<double> y = v;
    return make_op(x.shape(), std::move(v), {x}, [px, y](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    const auto& xv = x.values();
    std::vector<double> v(xv.size());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
    auto px = x.node();
    return make_op(x.shape(), std::move(v), {x}, [px](TensorNode& out) {
        if (!px->requires_grad) return;
        constexpr double c = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        auto& g = px->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double xi = px->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(xi * c));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
            g[i] += out.grad[i] * (cdf + xi * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gamma, "layer_norm");
    check_defined(beta, "layer_norm");
    const int N = x.shape().back();
    require(gamma.ndim() == 1 && gamma.dim(0) == N && beta.ndim() == 1 && beta.dim(0) == N,
            "layer_norm: gamma/beta must be [" + std::to_string(N) + "]");
    const int64_t rows = x.numel() / N;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<double> v(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = &xv[r * N];
        double mean = 0.0;
        for (int j = 0; j < N; ++j) mean += row[j];
        mean /= N;
        double var = 0.0;
        for (int j = 0; j < N; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= N;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = istd;
        for (int j = 0; j < N; ++j) {
            const double xh = (row[j] - mean) * istd;
            xhat[r * N + j] = xh;
            v[r * N + j] = gv[j] * xh + bv[j];
        }
    }
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    return make_op(x.shape(), std::move(v), {x, gamma, beta},
                   [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                    N](TensorNode& out) {
                       const double* g = out.grad.data();
                       if (pg->requires_grad) {
                           auto& gg = pg->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r)
                               for (int j = 0; j < N; ++j) gg[j] += g[r * N + j] * xhat[r * N + j];
                       }
                       if (pb->requires_grad) {
                           auto& gb = pb->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r)
                               for (int j = 0; j < N; ++j) gb[j] += g[r * N + j];
                       }
                       if (px->requires_grad) {
                           auto& gx = px->ensure_grad();
                           const auto& gv2 = pg->value;
                           for (int64_t r = 0; r < rows; ++r) {
                               double sum_d = 0.0, sum_dx = 0.0;
                               for (int j = 0; j < N; ++j) {
                                   const double d = g[r * N + j] * gv2[j];
                                   sum_d += d;
                                   sum_dx += d * xhat[r * N + j];
                               }
                               const double istd = inv_std[static_cast<size_t>(r)];
                               for (int j = 0; j < N; ++j) {
                                   const double d = g[r * N + j] * gv2[j];
                                   gx[r * N + j] += istd * (d - (sum_d + xhat[r * N + j] * sum_dx) / N);
                               }
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto px = x.node();
    return make_op({1}, {s}, {x}, [px](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (auto& gi : g) gi += out.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    check_defined(x, "mean_all");
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto px = x.node();
    return make_op({1}, {s * inv}, {x}, [px, inv](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (auto& gi : g) gi += out.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// fused classification primitives
// ---------------------------------------------------------------------------

double softplus(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double log_sigmoid(double x) { return -softplus(-x); }

Tensor cross_entropy_with_offsets(const Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<double>& offsets) {
    check_defined(logits, "cross_entropy_with_offsets");
    require(logits.ndim() == 2, "cross_entropy_with_offsets: logits must be [batch, classes]");
    const int B = logits.dim(0), C = logits.dim(1);
    require(static_cast<int>(labels.size()) == B, "cross_entropy_with_offsets: batch mismatch");
    require(static_cast<int>(offsets.size()) == C, "cross_entropy_with_offsets: offsets size");
    for (int b = 0; b < B; ++b) {
        require(labels[b] >= 0 && labels[b] < C,
                "cross_entropy_with_offsets: label " + std::to_string(labels[b]) +
                    " out of range [0," + std::to_string(C) + ")");
        require(offsets[static_cast<size_t>(labels[b])] > -std::numeric_limits<double>::infinity(),
                "cross_entropy_with_offsets: true class has -inf offset");
    }
    const auto& xv = logits.values();
    std::vector<double> probs(xv.size());
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* row = &xv[static_cast<int64_t>(b) * C];
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < C; ++j) m = std::max(m, row[j] + offsets[static_cast<size_t>(j)]);
        double sum = 0.0;
        for (int j = 0; j < C; ++j) {
            const double z = row[j] + offsets[static_cast<size_t>(j)];
            const double e = std::isfinite(z) ? std::exp(z - m) : 0.0;
            probs[static_cast<int64_t>(b) * C + j] = e;
            sum += e;
        }
        for (int j = 0; j < C; ++j) probs[static_cast<int64_t>(b) * C + j] /= sum;
        const double zy = row[labels[b]] + offsets[static_cast<size_t>(labels[b])];
        loss += m + std::log(sum) - zy;
    }
    loss /= B;
    auto px = logits.node();
    return make_op({1}, {loss}, {logits},
                   [px, probs = std::move(probs), labels, B, C](TensorNode& out) {
                       if (!px->requires_grad) return;
                       auto& g = px->ensure_grad();
                       const double go = out.grad[0] / B;
                       for (int b = 0; b < B; ++b) {
                           for (int j = 0; j < C; ++j)
                               g[static_cast<int64_t>(b) * C + j] +=
                                   go * probs[static_cast<int64_t>(b) * C + j];
                           g[static_cast<int64_t>(b) * C + labels[b]] -= go;
                       }
                   });
}

Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
    check_defined(logits, "bce_with_logits_mean");
    require(static_cast<int64_t>(targets.size()) == logits.numel(),
            "bce_with_logits_mean: targets size mismatch");
    const auto& xv = logits.values();
    const int64_t n = logits.numel();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) loss += softplus(xv[i]) - targets[static_cast<size_t>(i)] * xv[i];
    loss /= static_cast<double>(n);
    auto px = logits.node();
    return make_op({1}, {loss}, {logits}, [px, targets, n](TensorNode& out) {
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        const double go = out.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-px->value[i]));
            g[i] += go * (s - targets[static_cast<size_t>(i)]);
        }
    });
}

uint64_t hash_bytes(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace sedeg
