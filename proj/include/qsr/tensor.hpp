#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qsr/common.hpp"

namespace qsr {

using Shape = std::vector<int>;

long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;       // true for anything that participates in the graph
    std::vector<double> grad;         // allocated lazily, same length as data

    // autograd record
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;  // empty for leaves
    std::uint64_t node_id = 0;                     // creation order; parents always older

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Global flag gating graph recording (single-threaded by contract).
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }

private:
    bool prev_;
};

// Dense NCHW tensor of doubles; value-semantic handle onto shared storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    long numel() const { return static_cast<long>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& vec() { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }

    // scalar access; contract: numel() == 1
    double value() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
    double* grad();
    const double* grad() const;
    std::vector<double>& grad_vec();
    void zero_grad();

    // true if any entry is NaN or Inf
    bool has_non_finite() const;
    void check_finite(const std::string& what) const;

    // deep copy with no graph history
    Tensor clone(bool requires_grad = false) const;
    // graph-breaking view of the same values (copies data, no parents)
    Tensor detach() const;

    detail::TensorImpl* impl() { return impl_.get(); }
    const detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

    // internal: wrap an impl
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Builds a graph node. `parents` that do not require grad are still kept so the
// backward closure can read their values.
Tensor make_node(Shape shape, std::vector<Tensor> parents,
                 std::function<void(detail::TensorImpl&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1, visits the
// recorded nodes exactly once in reverse creation (= reverse topological)
// order, accumulating into .grad of every participating tensor. Returns the
// number of nodes whose backward closure ran. Grads accumulate across calls
// until zero_grad().
std::size_t backward(const Tensor& loss);

}  // namespace qsr
