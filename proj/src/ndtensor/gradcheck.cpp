#include "texgraph/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "texgraph/errors.hpp"

namespace texgraph {

namespace {

std::string coordinate_name(const Parameter& p, std::size_t i) {
    return (p.name.empty() ? std::string("x") : p.name) + "[" + std::to_string(i) + "]";
}

double evaluate(const TapeFunction& f, const std::string& where) {
    Tape tape;
    const double v = f(tape).value().item();
    if (!std::isfinite(v)) throw OracleError("non-finite function value while perturbing " + where, where);
    return v;
}

}  // namespace

GradCheckReport check_gradients(const TapeFunction& f, std::span<Parameter* const> params, double h) {
    std::vector<Tensor> saved_grads;
    saved_grads.reserve(params.size());
    for (Parameter* p : params) {
        saved_grads.push_back(p->grad);
        p->grad = Tensor(p->value.shape(), 0.0);
    }

    {
        Tape tape;
        const Var loss = f(tape);
        if (!std::isfinite(loss.value().item())) throw OracleError("non-finite function value at the base point", "");
        tape.backward(loss).accumulate_into_parameters();
    }

    GradCheckReport report;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const std::string where = coordinate_name(*p, i);
            const double original = p->value[i];
            p->value[i] = original + h;
            const double up = evaluate(f, where);
            p->value[i] = original - h;
            const double down = evaluate(f, where);
            p->value[i] = original;

            const double central = (up - down) / (2.0 * h);
            const double analytic = p->grad[i];
            const double err = std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-8);
            ++report.coordinates;
            if (report.worst_coordinate.empty() || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_coordinate = where;
            }
        }
    }

    for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = std::move(saved_grads[k]);
    return report;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
    Parameter px("x", x);
    Parameter* ptr = &px;
    return check_gradients([&](Tape& t) { return f(t, t.parameter(px)); }, std::span<Parameter* const>(&ptr, 1), h)
        .max_rel_error;
}

}  // namespace texgraph
