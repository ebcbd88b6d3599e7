#pragma once

#include <span>
#include <vector>

#include "splitprune/model.hpp"
#include "splitprune/tensor.hpp"

namespace splitprune {

// Keeps w_i when |w_i| > a, zero otherwise (ties go to zero). With
// a = sqrt(2 lambda / beta) this is the exact per-coordinate minimizer of
// lambda * 1{u != 0} + beta/2 (w - u)^2.
Tensor hard_threshold(const Tensor& w, double a);
double hard_threshold(double w, double a);

// sign(w) * max(|w| - a, 0).
Tensor soft_threshold(const Tensor& w, double a);
double soft_threshold(double w, double a);

// Minimizer of lam * ||u||_2 + 1/2 ||u - g||^2: zero when ||g|| <= lam,
// otherwise g * (1 - lam / ||g||).
std::vector<double> prox_group_lasso(std::span<const double> g, double lam);

// Minimizer of lam * 1{u != 0} + 1/2 ||u - g||^2: zero when ||g|| <= sqrt(2 lam),
// otherwise g unchanged.
std::vector<double> prox_group_l0(std::span<const double> g, double lam);

double l2_norm(std::span<const double> g);

// Read-only slice of the coordinates of one group.
std::span<const double> group_view(std::span<const Tensor> params, const GroupLabel& label);
std::span<double> group_view(std::span<Tensor> params, const GroupLabel& label);

// Throws ContractError when groups overlap or fall outside their parameter.
void validate_groups(std::span<const Tensor> params, std::span<const GroupLabel> groups);

double group_lasso_penalty(std::span<const Tensor> params, std::span<const GroupLabel> groups);
double group_l0_penalty(std::span<const Tensor> params, std::span<const GroupLabel> groups);
double l0_penalty(std::span<const Tensor> params);
double l1_penalty(std::span<const Tensor> params);

}  // namespace splitprune
