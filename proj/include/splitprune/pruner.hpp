#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitprune/model.hpp"
#include "splitprune/rng.hpp"
#include "splitprune/tensor.hpp"

namespace splitprune {

enum class Algorithm { none, rvsm, rgsm, admm };
enum class GroupProx { group_lasso, group_l0 };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
std::string to_string(GroupProx p);
GroupProx parse_group_prox(const std::string& s);

struct PrunerHyper {
    double beta = 1.0;
    double lambda = 0.0;   // rvsm / admm
    double lambda1 = 0.0;  // rgsm prox threshold
    double lambda2 = 0.0;  // rgsm group-lasso weight in the objective
    double eta = 0.1;
    GroupProx group_prox = GroupProx::group_lasso;

    bool operator==(const PrunerHyper&) const = default;
};

// Weights w, auxiliary sparse copy u, and (ADMM only) dual z, all aligned with
// a model's parameter registry.
struct PrunerState {
    Algorithm algorithm = Algorithm::none;
    PrunerHyper hyper;
    std::vector<Tensor> w;
    std::vector<Tensor> u;
    std::vector<Tensor> z;
    std::vector<GroupLabel> groups;
    std::vector<double> history;

    bool operator==(const PrunerState&) const = default;
};

// Builds the initial state: u = prox(w), z = 0 for ADMM.
PrunerState make_pruner_state(Algorithm algorithm, const PrunerHyper& hyper, std::vector<Tensor> w,
                              std::vector<GroupLabel> groups);
PrunerState make_pruner_state(Algorithm algorithm, const PrunerHyper& hyper, const Model& model);

// sqrt(2 lambda / beta), with 0 when lambda == 0 and +inf when beta == 0 < lambda.
double rvsm_threshold(double lambda, double beta);

// The algorithm's u-map applied to the given weights (and dual for ADMM).
std::vector<Tensor> project_auxiliary(const PrunerState& state, std::span<const Tensor> w);

// Validates the u invariant: u equals the prox image of the current weights.
bool auxiliary_consistent(const PrunerState& state);

void rvsm_step(PrunerState& state, std::span<const Tensor> grad, std::optional<double> monitor = std::nullopt);
void rgsm_step(PrunerState& state, std::span<const Tensor> grad, std::optional<double> monitor = std::nullopt);
void admm_step(PrunerState& state, std::span<const Tensor> grad, std::optional<double> monitor = std::nullopt);
// Dispatches on the algorithm tag; `none` is a plain gradient step with u = w.
void pruner_step(PrunerState& state, std::span<const Tensor> grad, std::optional<double> monitor = std::nullopt);

enum class PenaltyKind { l0, l1, group_lasso, group_l0 };

// f + lam * penalty(u) + beta/2 ||w - u||^2 (+ <z, w - u> when z is given).
double lagrangian_value(double f_val, std::span<const Tensor> w, std::span<const Tensor> u,
                        std::span<const GroupLabel> groups, double lam, double beta, PenaltyKind kind,
                        std::span<const Tensor> z = {});

// Lagrangian matching the state's algorithm, for the monitor. For rgsm the
// objective includes lambda2 ||w||_GL.
double state_lagrangian(const PrunerState& state, double f_val);

// True when the last history value does not exceed the previous by more than slack.
bool descent_holds(const PrunerState& state, double slack);

using GradientOracle = std::function<std::vector<double>(std::span<const double>)>;

struct LipschitzEstimate {
    double value = 0.0;
    std::size_t pairs = 0;
};

// Max of ||grad(w1) - grad(w2)|| / ||w1 - w2|| over random probe pairs within
// `radius` (per coordinate) of w. A lower bound on the local constant.
LipschitzEstimate lipschitz_estimate(const GradientOracle& grad, std::span<const double> w, std::size_t n_probes,
                                     double radius, Rng& rng);

// Copy of the model with its parameters replaced by u.
Model finalize_epoch(const PrunerState& state, const Model& model);

}  // namespace splitprune
