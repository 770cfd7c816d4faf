#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cardlab/model.hpp"
#include "cardlab/tape.hpp"

namespace cardlab::gradcheck {

inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

struct Report {
    double max_rel_err = 0.0;
    std::string worst;

    void observe(double err, const std::string& where) {
        if (err > max_rel_err) {
            max_rel_err = err;
            worst = where;
        }
    }
};

// Central-difference sweep over every parameter scalar. `loss` must evaluate a
// fresh forward pass against the current parameter values.
inline Report check_against_fd(ad::ParamStore& params, const std::function<double()>& loss,
                               const std::function<std::vector<ad::Tensor>()>& analytic,
                               double step) {
    Report report;
    const std::vector<ad::Tensor> grads = analytic();
    for (std::size_t p = 0; p < params.count(); ++p) {
        ad::Tensor& theta = params.tensor(p);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta.data[i];
            theta.data[i] = saved + step;
            const double up = loss();
            theta.data[i] = saved - step;
            const double down = loss();
            theta.data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            report.observe(rel_error(grads[p].data[i], numeric),
                           params.name(p) + "[" + std::to_string(i) + "]");
        }
    }
    return report;
}

namespace detail {

// Scalarizes an arbitrary matrix output with fixed random projections so the
// whole backward path stays active.
struct Scalarizer {
    ad::Tensor left;   // 1 x rows
    ad::Tensor right;  // cols x 1

    Scalarizer(std::size_t rows, std::size_t cols, Rng& rng) : left(1, rows), right(cols, 1) {
        left.fill_uniform(rng, -1.0, 1.0);
        right.fill_uniform(rng, -1.0, 1.0);
    }

    ad::Tape::Id apply(ad::Tape& tape, ad::Tape::Id id) const {
        return tape.matmul(tape.matmul(tape.constant(left), id), tape.constant(right));
    }
};

inline ad::Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng,
                                bool away_from_zero = false) {
    ad::Tensor t(rows, cols);
    t.fill_uniform(rng, -1.0, 1.0);
    if (away_from_zero)
        for (double& v : t.data)
            if (std::abs(v) < 0.1) v += (v >= 0 ? 0.2 : -0.2);
    return t;
}

inline Report check_graph(ad::ParamStore& params,
                          const std::function<ad::Tape::Id(ad::Tape&)>& build, double step) {
    auto loss = [&]() {
        ad::Tape tape(&params);
        return tape.value(build(tape)).item();
    };
    auto analytic = [&]() {
        ad::Tape tape(&params);
        auto id = build(tape);
        auto grads = params.zeros_like();
        tape.backward(id, grads);
        return grads;
    };
    return check_against_fd(params, loss, analytic, step);
}

}  // namespace detail

// Finite-difference check of each tape primitive in isolation.
inline std::vector<std::pair<std::string, double>> primitive_checks(Rng rng, double step = 1e-6) {
    using detail::check_graph;
    using detail::random_tensor;
    using detail::Scalarizer;
    std::vector<std::pair<std::string, double>> results;

    auto record = [&](const std::string& name, const Report& r) {
        results.emplace_back(name, r.max_rel_err);
    };

    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng));
        std::size_t b = ps.add("b", random_tensor(4, 2, rng));
        Scalarizer s(3, 2, rng);
        record("matmul", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.matmul(t.param(a), t.param(b)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng));
        std::size_t b = ps.add("b", random_tensor(2, 4, rng));
        Scalarizer s(3, 2, rng);
        record("matmul_nt", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.matmul_nt(t.param(a), t.param(b)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng));
        std::size_t b = ps.add("b", random_tensor(3, 4, rng));
        Scalarizer s(3, 4, rng);
        record("add", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.add(t.param(a), t.param(b)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng));
        Scalarizer s(3, 4, rng);
        record("scale", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.scale(t.param(a), 1.7));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng, /*away_from_zero=*/true));
        Scalarizer s(3, 4, rng);
        record("relu", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.relu(t.param(a)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 5, rng));
        Scalarizer s(3, 5, rng);
        record("softmax_rows", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.softmax_rows(t.param(a)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t x = ps.add("x", random_tensor(3, 6, rng));
        std::size_t g = ps.add("gain", random_tensor(1, 6, rng, /*away_from_zero=*/true));
        std::size_t b = ps.add("bias", random_tensor(1, 6, rng));
        Scalarizer s(3, 6, rng);
        record("layer_norm_rows", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.layer_norm_rows(t.param(x), t.param(g), t.param(b)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t x = ps.add("x", random_tensor(3, 4, rng));
        std::size_t w = ps.add("w", random_tensor(4, 2, rng));
        std::size_t b = ps.add("b", random_tensor(1, 2, rng));
        Scalarizer s(3, 2, rng);
        record("linear", check_graph(ps, [&](ad::Tape& t) {
            return s.apply(t, t.linear(t.param(x), t.param(w), t.param(b)));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(2, 3, rng));
        std::size_t b = ps.add("b", random_tensor(1, 3, rng));
        Scalarizer s(3, 3, rng);
        record("concat_rows", check_graph(ps, [&](ad::Tape& t) {
            std::vector<ad::Tape::Id> parts{t.param(a), t.param(b)};
            return s.apply(t, t.concat_rows(parts));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(2, 3, rng));
        std::size_t b = ps.add("b", random_tensor(2, 2, rng));
        Scalarizer s(2, 5, rng);
        record("concat_cols", check_graph(ps, [&](ad::Tape& t) {
            std::vector<ad::Tape::Id> parts{t.param(a), t.param(b)};
            return s.apply(t, t.concat_cols(parts));
        }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t a = ps.add("a", random_tensor(3, 4, rng));
        record("sum", check_graph(ps, [&](ad::Tape& t) { return t.sum(t.param(a)); }, step));
    }
    {
        ad::ParamStore ps;
        std::size_t p = ps.add("preds", random_tensor(5, 1, rng));
        ad::Tensor labels = random_tensor(5, 1, rng);
        ad::Tensor weights(5, 1);
        for (double& w : weights.data) w = rng.uniform(0.1, 1.0);
        record("mwse", check_graph(ps, [&](ad::Tape& t) {
            return t.mwse(t.param(p), labels, weights);
        }, step));
    }
    return results;
}

// Full forward/backward of a cardinality model against central differences.
inline Report check_model(CardModel& model, Rng& rng, double step = 1e-5) {
    const auto manifest = model.manifest();
    const std::size_t T = manifest.at("T").get<std::size_t>();
    const std::size_t d_x = manifest.at("d_x").get<std::size_t>();
    const std::size_t d_q = manifest.at("d_q").get<std::size_t>();

    ad::Tensor states(T, d_x);
    states.fill_uniform(rng, 0.0, 1.0);
    ad::Tensor query(1, d_q);
    query.fill_uniform(rng, 0.0, 1.0);
    ad::Tensor label = ad::Tensor(1, 1, {rng.uniform(0.0, 8.0)});
    ad::Tensor weight = ad::Tensor(1, 1, {1.0});

    auto build = [&](ad::Tape& tape) {
        auto pred = model.forward(tape, states, query);
        return tape.mwse(pred, label, weight);
    };
    return detail::check_graph(model.params(), build, step);
}

}  // namespace cardlab::gradcheck
