// SPDX-License-Identifier: Apache-2.0
#include "dmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dmt {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t s : shape) {
        if (s < 0) throw ShapeError("negative axis length in shape " + shape_str(shape));
        n *= s;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d, bool req_grad)
    : shape(std::move(s)), data(std::move(d)), requires_grad(req_grad) {
    if (dmt::numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

double Tensor::item() const {
    if (data.size() != 1) {
        throw ShapeError("item() requires a single-element tensor, got shape " + shape_str(shape));
    }
    return data[0];
}

std::vector<double>& Tensor::grad_ref() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

namespace tensor {

TensorPtr from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    detail::check_finite(data, "from_data");
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(dmt::numel(shape)), 0.0);
    return std::make_shared<Tensor>(std::move(shape), std::move(d), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    if (!std::isfinite(value)) throw ValueError("full: non-finite fill value");
    std::vector<double> d(static_cast<std::size_t>(dmt::numel(shape)), value);
    return std::make_shared<Tensor>(std::move(shape), std::move(d), requires_grad);
}

TensorPtr scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

TensorPtr rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(dmt::numel(shape)));
    for (double& x : d) x = rng.uniform(lo, hi);
    return std::make_shared<Tensor>(std::move(shape), std::move(d), requires_grad);
}

TensorPtr rand_gaussian(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(dmt::numel(shape)));
    for (double& x : d) x = stddev * rng.gaussian();
    return std::make_shared<Tensor>(std::move(shape), std::move(d), requires_grad);
}

} // namespace tensor

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const TensorPtr& loss) {
    if (!loss) throw ValueError("backward: null loss");
    if (loss->numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) {
        throw ValueError("backward: loss is not gradient-tracked");
    }

    // Iterative post-order DFS for a topological ordering of the subgraph.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad_ref()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

namespace detail {

void check_finite(const std::vector<double>& data, const char* where) {
    for (double x : data) {
        if (!std::isfinite(x)) {
            throw ValueError(std::string(where) + ": non-finite value produced");
        }
    }
}

TensorPtr make_node(Shape shape, std::vector<double> data, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward_fn, const char* op) {
    check_finite(data, op);
    bool track = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                track = true;
                break;
            }
        }
    }
    auto out = std::make_shared<Tensor>(std::move(shape), std::move(data), track);
    out->op = op;
    if (track) {
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return out;
}

void accumulate(Tensor& t, const std::vector<double>& delta) {
    auto& g = t.grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

} // namespace detail

} // namespace dmt
