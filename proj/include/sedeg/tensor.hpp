#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sedeg/rng.hpp"

namespace sedeg {

// Shapes are row-major; a scalar is shape {1}.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;
using BackwardFn = std::function<void(TensorNode&)>;

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient is accumulated into it
    bool requires_grad = false;
    bool consumed = false;  // set once backward() has released this graph
    std::vector<std::shared_ptr<TensorNode>> parents;
    BackwardFn backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

// Thread-local switch: while disabled, ops do not record the graph.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Dense multi-dimensional array of doubles with reverse-mode autodiff.
// Cheap handle with shared-node semantics; clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor trunc_normal(Shape shape, Rng& rng, double stddev);
    // trainable leaf initialized with truncated normal(0, stddev)
    static Tensor param(Shape shape, Rng& rng, double stddev = 0.02);

    bool defined() const { return node_ != nullptr; }
    explicit operator bool() const { return defined(); }

    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    // value copy detached from the graph, requires_grad = false
    Tensor detach() const;
    // deep copy: fresh leaf with the same values and requires_grad flag
    Tensor clone() const;

    TensorNode* raw() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    void check_finite(const std::string& what) const;
    uint64_t value_hash() const;

    friend Tensor make_op(Shape shape, std::vector<double> value,
                          const std::vector<Tensor>& parents, BackwardFn fn);

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Single shot: the
// traversed graph is released afterwards. Leaves with requires_grad=false
// never receive (or allocate) gradients.
void backward(const Tensor& loss);

// Builds a graph node. The backward fn (and the parent links) are kept only
// when grad mode is on and some parent requires a gradient.
Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
               BackwardFn fn);

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// p's shape must be a suffix of x's shape; p is broadcast over the leading dims
Tensor add_broadcast(const Tensor& x, const Tensor& p);
// x.shape[0] == 1 -> repeat n times along dim 0
Tensor expand_leading(const Tensor& x, int n);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, int begin, int end);
// 4-D [A,B,C,D] -> [A,C,B,D]
Tensor swap_dims_1_2(const Tensor& x);

// x: [..., K], w: [K, N], b: [N]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// a: [L,M,K], b: [L,K,N] -> [L,M,N]
Tensor bmm(const Tensor& a, const Tensor& b);
// a: [L,M,K], b: [L,N,K] -> [L,M,N]  (b transposed in place)
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor softmax_last(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Fused classification primitives (stable log-sum-exp / softplus forms).
// Targets and offsets are constants: gradients reach logits only.
// mean over batch of -log softmax(logits + offsets)[label]
Tensor cross_entropy_with_offsets(const Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<double>& offsets);
// mean over all elements of  softplus(logit) - target * logit
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets);

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

double log_sigmoid(double x);
double softplus(double x);
uint64_t hash_bytes(const void* data, size_t len, uint64_t seed = 1469598103934665603ULL);

namespace detail {
// C += A (MxK) * B (KxN)
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C += A (MxK) * B (NxK)^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C += A (MxK)^T * B (MxN), C is KxN
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n);
}  // namespace detail

}  // namespace sedeg
