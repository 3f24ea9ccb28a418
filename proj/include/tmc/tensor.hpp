#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tmc/rng.hpp"

namespace tmc {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // reads this->grad, accumulates into parents
    const char* op = "";

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// A dense array of doubles with optional reverse-mode graph linkage.
// Copies are shallow (shared node); graphs are built define-by-run.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from(Shape shape, std::vector<double> values);
    // Leaf that participates in differentiation.
    static Tensor param(Shape shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t numel() const;
    std::int64_t dim(int axis) const;
    int ndim() const;

    std::vector<double>& values();
    const std::vector<double>& values() const;
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    bool requires_grad() const;

    double item() const;  // scalar tensors only
    bool all_finite() const;

    void zero_grad();
    // Reverse pass from a scalar root (seeds d(root)/d(root) = 1).
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// ---- core ops (broadcast on unit extents for add/mul, numpy alignment) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// (n,k)x(k,m); (B,n,k)x(k,m); (B,n,k)x(B,k,m)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor reduce_mean(const Tensor& a);            // all elements -> scalar
Tensor reduce_mean(const Tensor& a, int axis);  // drop axis
Tensor reduce_max(const Tensor& a, int axis);

// ---- neural ops ----
// x: N x C x H x W, w: F x C x kh x kw, b: F (may be undefined for no bias).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding);
Tensor maxpool2d(const Tensor& x, std::int64_t ph, std::int64_t pw);
// Normalizes over batch+spatial per channel (train) or running stats (eval).
// running_mean/var are owned by the caller and updated in train mode.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 std::vector<double>& running_mean, std::vector<double>& running_var,
                 Mode mode, double momentum = 0.9, double eps = 1e-5);
// Normalizes over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_lastaxis(const Tensor& x);
// Inverted dropout: train zeroes with prob p and scales by 1/(1-p); eval is identity.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

// Mean binary cross-entropy over a batch of probabilities (clamped to
// [1e-7, 1-1e-7]); labels are constants in {0,1}. Throws NumericalError on
// non-finite probabilities.
Tensor bce_mean(const Tensor& probs, const std::vector<double>& labels);

}  // namespace tmc
