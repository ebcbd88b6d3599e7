#pragma once

#include <span>
#include <string>

#include "splitprune/model.hpp"
#include "splitprune/rng.hpp"
#include "splitprune/tensor.hpp"

namespace splitprune {

enum class AttackFamily { none, fgsm, ifgsm };

// Untargeted l-infinity attack description. epsilon and step are in input units.
struct AttackSpec {
    AttackFamily family = AttackFamily::none;
    double epsilon = 0.0;
    double step = 0.0;
    int iterations = 1;
    bool random_init = false;
    double lo = 0.0;
    double hi = 1.0;

    bool operator==(const AttackSpec&) const = default;
};

void validate(const AttackSpec& spec);

// Text form: "none", "fgsm:eps=0.03", "ifgsm:eps=0.03,alpha=0.008,steps=20,init=1,lo=0,hi=1".
std::string to_string(const AttackSpec& spec);
AttackSpec parse_attack(const std::string& text);

// Gradient of the mean cross-entropy w.r.t. the input batch. Noise (for
// noise-injected ensembles) follows `mode`.
Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> y, Mode mode, Rng& rng);

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng);
Tensor ifgsm(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng);

// Dispatch on spec.family; `none` returns x unchanged.
Tensor attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng);

}  // namespace splitprune
