#include "splitprune/prox.hpp"

#include <cmath>
#include <string>

#include "splitprune/errors.hpp"

namespace splitprune {

namespace {

void check_threshold(double a, const char* op) {
    if (!(a >= 0.0)) throw ParameterError(std::string(op) + ": threshold must be >= 0, got " + std::to_string(a));
}

}  // namespace

double hard_threshold(double w, double a) { return std::abs(w) > a ? w : 0.0; }

Tensor hard_threshold(const Tensor& w, double a) {
    check_threshold(a, "hard_threshold");
    Tensor out = w;
    for (auto& v : out.data()) v = hard_threshold(v, a);
    return out;
}

double soft_threshold(double w, double a) {
    const double m = std::abs(w) - a;
    if (m <= 0.0) return 0.0;
    return w > 0.0 ? m : -m;
}

Tensor soft_threshold(const Tensor& w, double a) {
    check_threshold(a, "soft_threshold");
    Tensor out = w;
    for (auto& v : out.data()) v = soft_threshold(v, a);
    return out;
}

double l2_norm(std::span<const double> g) {
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
}

std::vector<double> prox_group_lasso(std::span<const double> g, double lam) {
    check_threshold(lam, "prox_group_lasso");
    const double norm = l2_norm(g);
    std::vector<double> out(g.size(), 0.0);
    if (norm <= lam) return out;
    const double factor = 1.0 - lam / norm;
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * factor;
    return out;
}

std::vector<double> prox_group_l0(std::span<const double> g, double lam) {
    check_threshold(lam, "prox_group_l0");
    // Compare squared norms against 2*lam to keep the tie exact.
    double sq = 0.0;
    for (double v : g) sq += v * v;
    if (sq <= 2.0 * lam) return std::vector<double>(g.size(), 0.0);
    return {g.begin(), g.end()};
}

static void check_label(std::size_t nparams, std::size_t param_size, const GroupLabel& label) {
    if (label.param >= nparams) throw ContractError("group refers to parameter " + std::to_string(label.param) + " which does not exist");
    if (label.offset + label.length > param_size)
        throw ContractError("group " + std::to_string(label.group) + " of layer " + std::to_string(label.layer) +
                            " exceeds its parameter");
}

std::span<const double> group_view(std::span<const Tensor> params, const GroupLabel& label) {
    check_label(params.size(), label.param < params.size() ? params[label.param].size() : 0, label);
    return params[label.param].data().subspan(label.offset, label.length);
}

std::span<double> group_view(std::span<Tensor> params, const GroupLabel& label) {
    check_label(params.size(), label.param < params.size() ? params[label.param].size() : 0, label);
    return params[label.param].data().subspan(label.offset, label.length);
}

void validate_groups(std::span<const Tensor> params, std::span<const GroupLabel> groups) {
    std::vector<std::vector<bool>> seen(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) seen[p].assign(params[p].size(), false);
    for (const auto& g : groups) {
        check_label(params.size(), g.param < params.size() ? params[g.param].size() : 0, g);
        for (std::size_t i = g.offset; i < g.offset + g.length; ++i) {
            if (seen[g.param][i])
                throw ContractError("groups overlap at parameter " + std::to_string(g.param) + " coordinate " + std::to_string(i));
            seen[g.param][i] = true;
        }
    }
}

double group_lasso_penalty(std::span<const Tensor> params, std::span<const GroupLabel> groups) {
    validate_groups(params, groups);
    double total = 0.0;
    for (const auto& g : groups) total += l2_norm(group_view(params, g));
    return total;
}

double group_l0_penalty(std::span<const Tensor> params, std::span<const GroupLabel> groups) {
    validate_groups(params, groups);
    double total = 0.0;
    for (const auto& g : groups) total += l2_norm(group_view(params, g)) != 0.0 ? 1.0 : 0.0;
    return total;
}

double l0_penalty(std::span<const Tensor> params) {
    double n = 0.0;
    for (const auto& p : params)
        for (double v : p.values()) n += v != 0.0 ? 1.0 : 0.0;
    return n;
}

double l1_penalty(std::span<const Tensor> params) {
    double s = 0.0;
    for (const auto& p : params)
        for (double v : p.values()) s += std::abs(v);
    return s;
}

}  // namespace splitprune
