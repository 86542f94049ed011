#include "qsr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace qsr {

long shape_numel(const Shape& s) {
    long n = 1;
    for (int d : s) {
        if (d <= 0) throw ContractError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {
bool g_grad_mode = true;
std::atomic<std::uint64_t> g_next_node_id{1};
}  // namespace

bool GradMode::enabled() { return g_grad_mode; }
void GradMode::set_enabled(bool on) { g_grad_mode = on; }

static std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<double> data,
                                                    bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    long n = shape_numel(shape);
    if (static_cast<long>(data.size()) != n)
        throw ContractError("data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    impl->node_id = g_next_node_id.fetch_add(1);
    return impl;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(new_impl(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0),
                           requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(new_impl(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), value),
                           requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(new_impl({1}, {value}, requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_impl(shape, std::move(data), requires_grad));
}

double Tensor::value() const {
    if (numel() != 1) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

double* Tensor::grad() {
    impl_->ensure_grad();
    return impl_->grad.data();
}

const double* Tensor::grad() const {
    return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

std::vector<double>& Tensor::grad_vec() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::has_non_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return true;
    return false;
}

void Tensor::check_finite(const std::string& what) const {
    if (has_non_finite()) throw NumericError("non-finite values in " + what);
}

Tensor Tensor::clone(bool requires_grad) const {
    return Tensor(new_impl(impl_->shape, impl_->data, requires_grad));
}

Tensor Tensor::detach() const { return clone(false); }

Tensor make_node(Shape shape, std::vector<Tensor> parents,
                 std::function<void(detail::TensorImpl&)> backward_fn) {
    bool track = GradMode::enabled();
    bool any_grad = false;
    if (track) {
        for (const auto& p : parents)
            if (p.requires_grad()) {
                any_grad = true;
                break;
            }
    }
    auto impl = new_impl(std::move(shape),
                         std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0),
                         track && any_grad);
    if (impl->requires_grad) {
        impl->parents.reserve(parents.size());
        for (auto& p : parents) impl->parents.push_back(p.impl_ptr());
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(impl);
}

std::size_t backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward expects a scalar loss");
    auto* root = const_cast<detail::TensorImpl*>(loss.impl());
    if (!root->requires_grad) return 0;

    // Collect the reachable subgraph. Creation order is a topological order by
    // construction (parents are always created before children).
    std::vector<detail::TensorImpl*> nodes;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<detail::TensorImpl*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        detail::TensorImpl* cur = stack.back();
        stack.pop_back();
        nodes.push_back(cur);
        for (auto& p : cur->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::TensorImpl* a, const detail::TensorImpl* b) {
                  return a->node_id > b->node_id;
              });

    root->ensure_grad();
    root->grad[0] += 1.0;

    std::size_t visited = 0;
    for (detail::TensorImpl* n : nodes) {
        if (!n->backward_fn) continue;  // leaf
        n->ensure_grad();
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backward_fn(*n);
        ++visited;
    }
    return visited;
}

}  // namespace qsr
