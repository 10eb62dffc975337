#include "tensor/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace csts {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local Precision g_precision = Precision::f64;
std::string g_sabotage_op;

} // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

Precision parse_precision(const std::string& name) {
    if (name == "f64" || name == "64") return Precision::f64;
    if (name == "f32" || name == "32") return Precision::f32;
    throw ConfigError("unknown precision '" + name + "' (expected f64 or f32)");
}

const char* precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    for (Index d : shape)
        if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    for (Index d : shape)
        if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != static_cast<Index>(data.size()))
        throw DimensionError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Index Tensor::size(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

std::span<double> Tensor::mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), impl_->data); }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, BackwardFn fn) {
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    const double one = 1.0;
    backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& loss, std::span<const double> seed) {
    if (!loss.defined() || static_cast<Index>(seed.size()) != loss.numel())
        throw ContractError("backward(): seed size does not match the output");
    const TensorImpl* target = loss.impl().get();
    bool on_tape = false;
    for (const auto& e : entries_) {
        if (e.output.get() == target) on_tape = true;
        for (const auto& in : e.inputs)
            if (in->requires_grad) in->ensure_grad();
    }
    if (!on_tape) throw ContractError("backward() loss was not produced on this tape");

    loss.impl()->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) loss.impl()->grad[i] += seed[i];

    const std::string& sabotage = g_sabotage_op;
    std::vector<std::vector<double>> before;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        const bool flip = !sabotage.empty() && sabotage == it->op;
        if (flip) {
            before.clear();
            for (const auto& in : it->inputs) before.push_back(in->grad);
        }
        it->fn();
        if (flip) {
            for (std::size_t k = 0; k < it->inputs.size(); ++k) {
                auto& g = it->inputs[k]->grad;
                if (g.empty() || before[k].empty()) continue;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = before[k][i] - (g[i] - before[k][i]);
            }
        }
    }
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void set_gradient_sabotage(const std::string& op_name) { g_sabotage_op = op_name; }
const std::string& gradient_sabotage() { return g_sabotage_op; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> data) {
    if (g_precision == Precision::f32)
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    for (double v : data)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by op '") + op + "' (shape " +
                               shape_str(shape) + ")");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
    if (!g_active_tape) return false;
    for (const Tensor& t : inputs)
        if (t.defined() && t.requires_grad()) return true;
    return false;
}

void record(const char* op, Tensor& out, std::vector<Tensor> inputs, Tape::BackwardFn fn) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(inputs.size());
    for (auto& t : inputs)
        if (t.defined()) impls.push_back(t.impl());
    g_active_tape->record(op, std::move(impls), out.impl(), std::move(fn));
}

} // namespace detail

} // namespace csts
