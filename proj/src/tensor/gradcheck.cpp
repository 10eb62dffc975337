#include "tensor/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "common/rng.hpp"

namespace csts {

GradCheckResult compare_with_central_differences(const std::function<double()>& f, Tensor x,
                                                 std::span<const double> analytic, double h,
                                                 const std::vector<Index>& indices) {
    GradCheckResult res;
    auto data = x.mutable_data();
    auto probe = [&](Index i) {
        const auto iu = static_cast<std::size_t>(i);
        const double saved = data[iu];
        double fp = 0.0, fm = 0.0;
        bool finite = true;
        try {
            data[iu] = saved + h;
            fp = f();
            data[iu] = saved - h;
            fm = f();
        } catch (const NumericError&) {
            finite = false;
        }
        data[iu] = saved;
        const double a = analytic[iu];
        if (!finite || !std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
            res.non_finite = true;
            res.max_rel_error = std::numeric_limits<double>::infinity();
            res.worst_index = i;
            return;
        }
        const double c = (fp - fm) / (2.0 * h);
        const double err = std::abs(a - c) / (std::abs(a) + std::abs(c) + 1e-12);
        if (err > res.max_rel_error || res.worst_index < 0) {
            res.max_rel_error = std::max(res.max_rel_error, err);
            res.worst_index = i;
            res.analytic = a;
            res.numeric = c;
        }
    };
    if (indices.empty()) {
        for (Index i = 0; i < x.numel(); ++i) probe(i);
    } else {
        for (Index i : indices) probe(i);
    }
    return res;
}

GradCheckResult finite_diff_check(const std::function<Tensor()>& f, Tensor x, double h,
                                  const std::vector<Index>& indices) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tape tape;
    Tensor loss;
    try {
        TapeScope scope(tape);
        loss = f();
    } catch (const NumericError&) {
        GradCheckResult res;
        res.non_finite = true;
        res.max_rel_error = std::numeric_limits<double>::infinity();
        return res;
    }
    tape.backward(loss);
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(x.numel()), 0.0);
    tape.clear();
    auto eval = [&]() {
        NoGradScope ng;
        return f().item();
    };
    return compare_with_central_differences(eval, x, analytic, h, indices);
}

namespace {

struct OpCase {
    const char* op;
    std::vector<Shape> shapes;
    std::vector<std::pair<double, double>> ranges;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
};

std::vector<OpCase> op_cases() {
    using V = const std::vector<Tensor>&;
    const std::pair<double, double> sym{-1.0, 1.0}, pos{0.5, 2.0};
    return {
        {"add", {{2, 3}, {3}}, {sym, sym}, [](V x) { return add(x[0], x[1]); }},
        {"sub", {{2, 3}, {3}}, {sym, sym}, [](V x) { return sub(x[0], x[1]); }},
        {"mul", {{2, 3}, {2, 1}}, {sym, sym}, [](V x) { return mul(x[0], x[1]); }},
        {"div", {{2, 3}, {3}}, {sym, pos}, [](V x) { return div(x[0], x[1]); }},
        {"add_scalar", {{2, 3}}, {sym}, [](V x) { return add_scalar(x[0], 0.7); }},
        {"mul_scalar", {{2, 3}}, {sym}, [](V x) { return mul_scalar(x[0], -1.3); }},
        {"exp", {{2, 3}}, {sym}, [](V x) { return exp(x[0]); }},
        {"log", {{2, 3}}, {pos}, [](V x) { return log(x[0]); }},
        {"gelu", {{2, 3}}, {sym}, [](V x) { return gelu(x[0]); }},
        {"sum", {{2, 3}}, {sym}, [](V x) { return sum(x[0]); }},
        {"sum_axis", {{2, 3, 2}}, {sym}, [](V x) { return sum(x[0], 1); }},
        {"reshape", {{2, 3}}, {sym}, [](V x) { return reshape(x[0], {3, 2}); }},
        {"permute", {{2, 3, 2}}, {sym}, [](V x) { return permute(x[0], {2, 0, 1}); }},
        {"concat", {{2, 2}, {2, 3}}, {sym, sym}, [](V x) { return concat({x[0], x[1]}, 1); }},
        {"slice", {{4, 3}}, {sym}, [](V x) { return slice(x[0], 0, 1, 2); }},
        {"broadcast_to", {{1, 3}}, {sym}, [](V x) { return broadcast_to(x[0], {2, 3}); }},
        {"repeat_axis", {{2, 3}}, {sym}, [](V x) { return repeat_axis(x[0], 0, 2); }},
        {"matmul", {{2, 2, 3}, {3, 2}}, {sym, sym}, [](V x) { return matmul(x[0], x[1]); }},
        {"softmax_last", {{2, 4}}, {sym}, [](V x) { return softmax_last(x[0]); }},
        {"log_softmax_last", {{2, 4}}, {sym}, [](V x) { return log_softmax_last(x[0]); }},
        {"layer_norm", {{2, 4}, {4}, {4}}, {sym, pos, sym}, [](V x) { return layer_norm(x[0], x[1], x[2]); }},
        {"linear", {{2, 3}, {3, 2}, {2}}, {sym, sym, sym}, [](V x) { return linear(x[0], x[1], x[2]); }},
        {"l2_normalize_last", {{2, 3}}, {sym}, [](V x) { return l2_normalize_last(x[0]); }},
        {"extract_patches", {{2, 4, 4, 2}}, {sym},
         [](V x) { return extract_patches(x[0], {2, 2, 2}, {1, 2, 2}, {0, 1, 1}); }},
        {"interp_linear_axis", {{3, 2}}, {sym}, [](V x) { return interp_linear_axis(x[0], 0, 5); }},
    };
}

} // namespace

std::vector<OpCheck> op_gradcheck_suite(std::uint64_t seed, double h) {
    Rng rng(seed);
    std::vector<OpCheck> out;
    for (const auto& c : op_cases()) {
        std::vector<Tensor> xs;
        for (std::size_t k = 0; k < c.shapes.size(); ++k) {
            std::vector<double> v(static_cast<std::size_t>(shape_numel(c.shapes[k])));
            for (double& e : v) e = rng.uniform(c.ranges[k].first, c.ranges[k].second);
            Tensor t = Tensor::from_data(c.shapes[k], std::move(v));
            t.set_requires_grad(true);
            xs.push_back(t);
        }
        Tape tape;
        Tensor y;
        {
            TapeScope scope(tape);
            y = c.fn(xs);
        }
        std::vector<double> w(static_cast<std::size_t>(y.numel()));
        for (double& e : w) e = rng.uniform(-1.0, 1.0);
        tape.backward(y, w);
        auto f = [&]() {
            NoGradScope ng;
            const Tensor z = c.fn(xs);
            double acc = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * z.data()[i];
            return acc;
        };
        OpCheck oc{c.op, 0.0};
        for (auto& x : xs) {
            std::vector<double> analytic(x.grad().begin(), x.grad().end());
            if (analytic.empty()) analytic.assign(static_cast<std::size_t>(x.numel()), 0.0);
            oc.max_rel_error = std::max(oc.max_rel_error, compare_with_central_differences(f, x, analytic, h, {}).max_rel_error);
        }
        out.push_back(oc);
    }
    return out;
}

} // namespace csts
