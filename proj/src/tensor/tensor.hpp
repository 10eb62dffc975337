#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common/errors.hpp"

namespace csts {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

// Numeric mode for op outputs. Storage is always double; in f32 mode every
// forward result is rounded through float so activations carry f32 precision.
enum class Precision { f64, f32 };

Precision precision();
void set_precision(Precision p);
Precision parse_precision(const std::string& name);
const char* precision_name(Precision p);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// Reference-counted handle to an immutable array. Copies share storage; ops
// always return fresh tensors, so sharing is safe once a tensor is built.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    // Negative axes count from the end.
    Index size(int axis) const;
    Index numel() const { return static_cast<Index>(impl_->data.size()); }

    std::span<const double> data() const { return impl_->data; }
    // Only for leaves (parameters, inputs) that are not yet on a tape.
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;
    double operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad();
    void zero_grad();

    // Fresh copy with no gradient tracking.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable ops executed while the tape is active.
// Entries are appended in execution order, so inputs always precede the ops
// that consume them; backward() walks the record once in reverse.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                std::shared_ptr<TensorImpl> output, BackwardFn fn);

    // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad input
    // recorded on this tape. Leaves accumulate, so zero them between steps.
    void backward(const Tensor& loss);
    // Vector-Jacobian product: seeds d/d(out) = seed instead of a scalar 1.
    void backward(const Tensor& out, std::span<const double> seed);

    std::size_t size() const { return entries_.size(); }
    const char* op_name(std::size_t i) const { return entries_[i].op; }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        const char* op;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
};

// The tape new ops record onto for the current thread, or nullptr.
Tape* active_tape();

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Suspends recording (e.g. for finite-difference probes) on this thread.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

// Fault-injection hook for the gradient checker: backward contributions of
// the named op are negated. Empty string disables. Process-wide.
void set_gradient_sabotage(const std::string& op_name);
const std::string& gradient_sabotage();

namespace detail {

// Wraps op output data into a tensor, enforcing the finite-value policy and
// the active precision mode.
Tensor make_result(const char* op, Shape shape, std::vector<double> data);

// True when a tape is active and any input tracks gradients.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

void record(const char* op, Tensor& out, std::vector<Tensor> inputs, Tape::BackwardFn fn);

} // namespace detail

} // namespace csts
