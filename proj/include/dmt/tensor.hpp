// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmt/common.hpp"

namespace dmt {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float64 tensor, a node in the reverse-mode tape.
// Values are immutable after construction; only `grad` is written during a
// backward pass. Leaves have no parents; interior nodes keep their inputs
// alive through `parents` and accumulate into them via `backward_fn`.
struct Tensor : std::enable_shared_from_this<Tensor> {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until first accumulation

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn; // null for leaves
    const char* op = "";

    Tensor(Shape s, std::vector<double> d, bool req_grad);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    double item() const;

    /// Grad buffer, zero-allocated on first use.
    std::vector<double>& grad_ref();
    void zero_grad() { grad.clear(); }
};

namespace tensor {

TensorPtr from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar(double value, bool requires_grad = false);
/// Uniform in [lo, hi).
TensorPtr rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0,
                       bool requires_grad = false);
TensorPtr rand_gaussian(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

} // namespace tensor

// Thread-local gradient mode. When disabled, operators compute values only
// and the tape is not extended (used for inference, benchmarks, and the
// frozen prior model).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Reverse-mode accumulation from a scalar loss into every reachable
/// tensor with requires_grad. Grads of untracked tensors are untouched.
void backward(const TensorPtr& loss);

namespace detail {

/// Throws ValueError if any element is NaN/Inf. `where` names the operator.
void check_finite(const std::vector<double>& data, const char* where);

/// Builds a tape node: validates finiteness, wires parents/backward when
/// gradients are enabled and some parent requires them.
TensorPtr make_node(Shape shape, std::vector<double> data, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward_fn, const char* op);

void accumulate(Tensor& t, const std::vector<double>& delta);

} // namespace detail

} // namespace dmt
