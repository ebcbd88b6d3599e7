#include "splitprune/pruner.hpp"

#include <cmath>
#include <limits>

#include "splitprune/errors.hpp"
#include "splitprune/prox.hpp"

namespace splitprune {

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::none: return "none";
        case Algorithm::rvsm: return "rvsm";
        case Algorithm::rgsm: return "rgsm";
        case Algorithm::admm: return "admm";
    }
    return "none";
}

Algorithm parse_algorithm(const std::string& s) {
    if (s == "none") return Algorithm::none;
    if (s == "rvsm") return Algorithm::rvsm;
    if (s == "rgsm") return Algorithm::rgsm;
    if (s == "admm") return Algorithm::admm;
    throw ParameterError("unknown pruner algorithm '" + s + "'");
}

std::string to_string(GroupProx p) { return p == GroupProx::group_lasso ? "group_lasso" : "group_l0"; }

GroupProx parse_group_prox(const std::string& s) {
    if (s == "group_lasso") return GroupProx::group_lasso;
    if (s == "group_l0") return GroupProx::group_l0;
    throw ParameterError("unknown group prox '" + s + "'");
}

namespace {

void validate_hyper(Algorithm algorithm, const PrunerHyper& h) {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be a finite value >= 0");
    };
    nonneg(h.beta, "beta");
    nonneg(h.lambda, "lambda");
    nonneg(h.lambda1, "lambda1");
    nonneg(h.lambda2, "lambda2");
    if (!(h.eta > 0.0) || !std::isfinite(h.eta)) throw ParameterError("eta must be > 0");
    if (algorithm == Algorithm::admm && h.beta == 0.0) throw ParameterError("admm requires beta > 0 (dual update undefined)");
}

void check_grad(const PrunerState& s, std::span<const Tensor> grad) {
    if (grad.size() != s.w.size())
        throw ContractError("gradient map has " + std::to_string(grad.size()) + " entries, state has " +
                            std::to_string(s.w.size()) + " parameters");
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (grad[i].empty()) throw ContractError("missing gradient for parameter " + std::to_string(i));
        if (grad[i].shape() != s.w[i].shape())
            throw DimensionError("gradient for parameter " + std::to_string(i) + " has shape " +
                                 shape_string(grad[i].shape()) + ", expected " + shape_string(s.w[i].shape()));
    }
}

void require(const PrunerState& s, Algorithm a) {
    if (s.algorithm != a) throw ContractError("state is tagged " + to_string(s.algorithm) + ", step expects " + to_string(a));
}

// w <- w - eta * grad - eta * beta * (w - u)
void splitting_update(PrunerState& s, std::span<const Tensor> grad) {
    const double eta = s.hyper.eta, beta = s.hyper.beta;
    for (std::size_t p = 0; p < s.w.size(); ++p) {
        auto w = s.w[p].data();
        const auto u = s.u[p].data();
        const auto g = grad[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - eta * g[i] - eta * beta * (w[i] - u[i]);
    }
}

void append_monitor(PrunerState& s, std::optional<double> monitor) {
    if (monitor) s.history.push_back(state_lagrangian(s, *monitor));
}

}  // namespace

double rvsm_threshold(double lambda, double beta) {
    if (lambda == 0.0) return 0.0;
    if (beta == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(2.0 * lambda / beta);
}

std::vector<Tensor> project_auxiliary(const PrunerState& s, std::span<const Tensor> w) {
    std::vector<Tensor> u(w.begin(), w.end());
    switch (s.algorithm) {
        case Algorithm::none:
            break;
        case Algorithm::rvsm: {
            const double a = rvsm_threshold(s.hyper.lambda, s.hyper.beta);
            for (auto& t : u) t = hard_threshold(t, a);
            break;
        }
        case Algorithm::rgsm:
            for (const auto& g : s.groups) {
                auto src = group_view(w, g);
                auto out = s.hyper.group_prox == GroupProx::group_lasso ? prox_group_lasso(src, s.hyper.lambda1)
                                                                        : prox_group_l0(src, s.hyper.lambda1);
                auto dst = group_view(std::span<Tensor>(u), g);
                std::copy(out.begin(), out.end(), dst.begin());
            }
            break;
        case Algorithm::admm: {
            const double beta = s.hyper.beta;
            const double a = s.hyper.lambda / beta;
            for (std::size_t p = 0; p < u.size(); ++p)
                for (std::size_t i = 0; i < u[p].size(); ++i) {
                    const double zi = s.z.empty() ? 0.0 : s.z[p][i];
                    u[p][i] = soft_threshold(w[p][i] + zi / beta, a);
                }
            break;
        }
    }
    return u;
}

PrunerState make_pruner_state(Algorithm algorithm, const PrunerHyper& hyper, std::vector<Tensor> w,
                              std::vector<GroupLabel> groups) {
    validate_hyper(algorithm, hyper);
    validate_groups(w, groups);
    PrunerState s;
    s.algorithm = algorithm;
    s.hyper = hyper;
    s.w = std::move(w);
    s.groups = std::move(groups);
    if (algorithm == Algorithm::admm)
        for (const auto& t : s.w) s.z.emplace_back(t.shape(), 0.0);
    s.u = project_auxiliary(s, s.w);
    return s;
}

PrunerState make_pruner_state(Algorithm algorithm, const PrunerHyper& hyper, const Model& model) {
    return make_pruner_state(algorithm, hyper, model.parameter_values(), model.groups());
}

bool auxiliary_consistent(const PrunerState& s) {
    if (s.algorithm == Algorithm::admm) return true;  // u depends on z from the previous step
    return project_auxiliary(s, s.w) == s.u;
}

void rvsm_step(PrunerState& s, std::span<const Tensor> grad, std::optional<double> monitor) {
    require(s, Algorithm::rvsm);
    check_grad(s, grad);
    validate_hyper(s.algorithm, s.hyper);
    splitting_update(s, grad);
    // Threshold the freshly updated weights.
    const double a = rvsm_threshold(s.hyper.lambda, s.hyper.beta);
    for (std::size_t p = 0; p < s.w.size(); ++p) s.u[p] = hard_threshold(s.w[p], a);
    append_monitor(s, monitor);
}

void rgsm_step(PrunerState& s, std::span<const Tensor> grad, std::optional<double> monitor) {
    require(s, Algorithm::rgsm);
    check_grad(s, grad);
    validate_hyper(s.algorithm, s.hyper);
    std::vector<Tensor> effective(grad.begin(), grad.end());
    if (s.hyper.lambda2 != 0.0) {
        for (const auto& g : s.groups) {
            auto wg = group_view(std::span<const Tensor>(s.w), g);
            const double norm = l2_norm(wg);
            if (norm == 0.0) continue;  // subgradient 0 at the zero group
            auto eg = group_view(std::span<Tensor>(effective), g);
            for (std::size_t i = 0; i < eg.size(); ++i) eg[i] += s.hyper.lambda2 * wg[i] / norm;
        }
    }
    splitting_update(s, effective);
    s.u = project_auxiliary(s, s.w);
    append_monitor(s, monitor);
}

void admm_step(PrunerState& s, std::span<const Tensor> grad, std::optional<double> monitor) {
    require(s, Algorithm::admm);
    check_grad(s, grad);
    validate_hyper(s.algorithm, s.hyper);
    if (s.z.size() != s.w.size()) throw ContractError("admm state is missing its dual variables");
    const double eta = s.hyper.eta, beta = s.hyper.beta;
    for (std::size_t p = 0; p < s.w.size(); ++p) {
        auto w = s.w[p].data();
        const auto u = s.u[p].data();
        const auto z = s.z[p].data();
        const auto g = grad[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - eta * (g[i] + z[i] + beta * (w[i] - u[i]));
    }
    s.u = project_auxiliary(s, s.w);
    for (std::size_t p = 0; p < s.w.size(); ++p)
        for (std::size_t i = 0; i < s.w[p].size(); ++i) s.z[p][i] += beta * (s.w[p][i] - s.u[p][i]);
    append_monitor(s, monitor);
}

void pruner_step(PrunerState& s, std::span<const Tensor> grad, std::optional<double> monitor) {
    switch (s.algorithm) {
        case Algorithm::rvsm: return rvsm_step(s, grad, monitor);
        case Algorithm::rgsm: return rgsm_step(s, grad, monitor);
        case Algorithm::admm: return admm_step(s, grad, monitor);
        case Algorithm::none: {
            check_grad(s, grad);
            for (std::size_t p = 0; p < s.w.size(); ++p)
                for (std::size_t i = 0; i < s.w[p].size(); ++i) s.w[p][i] -= s.hyper.eta * grad[p][i];
            s.u = s.w;
            append_monitor(s, monitor);
            return;
        }
    }
}

double lagrangian_value(double f_val, std::span<const Tensor> w, std::span<const Tensor> u,
                        std::span<const GroupLabel> groups, double lam, double beta, PenaltyKind kind,
                        std::span<const Tensor> z) {
    if (w.size() != u.size()) throw DimensionError("lagrangian_value: w and u hold different parameter counts");
    if (!z.empty() && z.size() != w.size()) throw DimensionError("lagrangian_value: z does not match w");
    double gap = 0.0, coupling = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) {
        if (w[p].shape() != u[p].shape())
            throw DimensionError("lagrangian_value: parameter " + std::to_string(p) + " has shapes " +
                                 shape_string(w[p].shape()) + " and " + shape_string(u[p].shape()));
        for (std::size_t i = 0; i < w[p].size(); ++i) {
            const double d = w[p][i] - u[p][i];
            gap += d * d;
            if (!z.empty()) coupling += z[p][i] * d;
        }
    }
    double penalty = 0.0;
    switch (kind) {
        case PenaltyKind::l0: penalty = l0_penalty(u); break;
        case PenaltyKind::l1: penalty = l1_penalty(u); break;
        case PenaltyKind::group_lasso: penalty = group_lasso_penalty(u, groups); break;
        case PenaltyKind::group_l0: penalty = group_l0_penalty(u, groups); break;
    }
    return f_val + lam * penalty + coupling + 0.5 * beta * gap;
}

double state_lagrangian(const PrunerState& s, double f_val) {
    const auto& h = s.hyper;
    switch (s.algorithm) {
        case Algorithm::none:
            return f_val;
        case Algorithm::rvsm:
            return lagrangian_value(f_val, s.w, s.u, s.groups, h.lambda, h.beta, PenaltyKind::l0);
        case Algorithm::rgsm: {
            // The u-update Prox_{lambda1} minimizes beta*lambda1*P(u) + beta/2 ||w - u||^2.
            const double smooth = f_val + h.lambda2 * group_lasso_penalty(s.w, s.groups);
            const auto kind = h.group_prox == GroupProx::group_lasso ? PenaltyKind::group_lasso : PenaltyKind::group_l0;
            return lagrangian_value(smooth, s.w, s.u, s.groups, h.beta * h.lambda1, h.beta, kind);
        }
        case Algorithm::admm:
            return lagrangian_value(f_val, s.w, s.u, s.groups, h.lambda, h.beta, PenaltyKind::l1, s.z);
    }
    return f_val;
}

bool descent_holds(const PrunerState& s, double slack) {
    const auto& h = s.history;
    if (h.size() < 2) return true;
    return h[h.size() - 1] <= h[h.size() - 2] + slack;
}

LipschitzEstimate lipschitz_estimate(const GradientOracle& grad, std::span<const double> w, std::size_t n_probes,
                                     double radius, Rng& rng) {
    if (n_probes == 0) throw ParameterError("lipschitz_estimate: need at least one probe");
    if (!(radius >= 0.0)) throw ParameterError("lipschitz_estimate: radius must be >= 0");
    std::uniform_real_distribution<double> uni(-radius, radius);
    LipschitzEstimate est;
    std::vector<double> a(w.size()), b(w.size());
    for (std::size_t k = 0; k < n_probes; ++k) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            a[i] = w[i] + uni(rng);
            b[i] = w[i] + uni(rng);
        }
        double dist = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
        if (dist == 0.0) continue;
        const auto ga = grad(a);
        const auto gb = grad(b);
        if (ga.size() != w.size() || gb.size() != w.size())
            throw DimensionError("lipschitz_estimate: gradient oracle returned the wrong size");
        double diff = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) diff += (ga[i] - gb[i]) * (ga[i] - gb[i]);
        est.value = std::max(est.value, std::sqrt(diff) / std::sqrt(dist));
        ++est.pairs;
    }
    if (est.pairs == 0) throw EstimationError("lipschitz_estimate: every probe pair was degenerate");
    return est;
}

Model finalize_epoch(const PrunerState& state, const Model& model) {
    Model out = model;
    out.set_parameter_values(state.u);
    return out;
}

}  // namespace splitprune
