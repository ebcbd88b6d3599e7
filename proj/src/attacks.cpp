#include "splitprune/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "splitprune/errors.hpp"

namespace splitprune {

void validate(const AttackSpec& spec) {
    if (!(spec.epsilon >= 0.0) || !std::isfinite(spec.epsilon)) throw ParameterError("attack epsilon must be >= 0");
    if (!(spec.step >= 0.0) || !std::isfinite(spec.step)) throw ParameterError("attack step size must be >= 0");
    if (spec.family == AttackFamily::ifgsm && spec.iterations < 1)
        throw ParameterError("ifgsm needs at least one iteration");
    if (!(spec.lo <= spec.hi)) throw ParameterError("attack clamp range is empty");
}

static std::string fmt(double v) { return format_double(v); }

std::string to_string(const AttackSpec& s) {
    switch (s.family) {
        case AttackFamily::none:
            return "none";
        case AttackFamily::fgsm:
            return "fgsm:eps=" + fmt(s.epsilon) + ",lo=" + fmt(s.lo) + ",hi=" + fmt(s.hi);
        case AttackFamily::ifgsm:
            return "ifgsm:eps=" + fmt(s.epsilon) + ",alpha=" + fmt(s.step) + ",steps=" + std::to_string(s.iterations) +
                   ",init=" + (s.random_init ? "1" : "0") + ",lo=" + fmt(s.lo) + ",hi=" + fmt(s.hi);
    }
    return "none";
}

AttackSpec parse_attack(const std::string& text) {
    AttackSpec spec;
    const auto colon = text.find(':');
    const std::string family = text.substr(0, colon);
    if (family == "none") spec.family = AttackFamily::none;
    else if (family == "fgsm") spec.family = AttackFamily::fgsm;
    else if (family == "ifgsm") spec.family = AttackFamily::ifgsm;
    else throw ParseError("unknown attack family '" + family + "'");
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw ParseError("attack option '" + item + "' is not key=value");
            const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
            try {
                if (key == "eps") spec.epsilon = std::stod(value);
                else if (key == "alpha") spec.step = std::stod(value);
                else if (key == "steps") spec.iterations = std::stoi(value);
                else if (key == "init") spec.random_init = std::stoi(value) != 0;
                else if (key == "lo") spec.lo = std::stod(value);
                else if (key == "hi") spec.hi = std::stod(value);
                else throw ParseError("unknown attack option '" + key + "'");
            } catch (const std::logic_error&) {
                throw ParseError("bad value for attack option '" + key + "': '" + value + "'");
            }
        }
    }
    validate(spec);
    return spec;
}

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> y, Mode mode, Rng& rng) {
    Tape tape;
    auto params = bind_parameters(model, tape, false);
    Var input = tape.leaf(x, true);
    Var loss = softmax_cross_entropy(forward(model, input, params, mode, rng), y);
    auto grads = tape.backward(loss);
    return std::move(grads.at(input.id));
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Projects v onto the eps-ball around x0 intersected with [lo, hi], such that
// the computed |v - x0| never exceeds eps.
double project(double v, double x0, double eps, double lo, double hi) {
    v = std::clamp(v, std::max(x0 - eps, lo), std::min(x0 + eps, hi));
    while (v - x0 > eps) v = std::nextafter(v, x0);
    while (x0 - v > eps) v = std::nextafter(v, x0);
    return std::clamp(v, lo, hi);
}

void signed_step(Tensor& cur, const Tensor& origin, const Tensor& grad, double size, const AttackSpec& spec) {
    for (std::size_t i = 0; i < cur.size(); ++i)
        cur[i] = project(cur[i] + size * sign(grad[i]), origin[i], spec.epsilon, spec.lo, spec.hi);
}

}  // namespace

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng) {
    validate(spec);
    Tensor g = input_gradient(model, x, y, mode, rng);
    Tensor out = x;
    signed_step(out, x, g, spec.epsilon, spec);
    return out;
}

Tensor ifgsm(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng) {
    validate(spec);
    if (spec.iterations < 1) throw ParameterError("ifgsm needs at least one iteration");
    Tensor cur = x;
    if (spec.random_init && spec.epsilon > 0.0) {
        std::uniform_real_distribution<double> uni(-spec.epsilon, spec.epsilon);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = project(x[i] + uni(rng), x[i], spec.epsilon, spec.lo, spec.hi);
    }
    for (int m = 0; m < spec.iterations; ++m) {
        Tensor g = input_gradient(model, cur, y, mode, rng);
        signed_step(cur, x, g, spec.step, spec);
    }
    return cur;
}

Tensor attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec, Mode mode, Rng& rng) {
    switch (spec.family) {
        case AttackFamily::none: validate(spec); return x;
        case AttackFamily::fgsm: return fgsm(model, x, y, spec, mode, rng);
        case AttackFamily::ifgsm: return ifgsm(model, x, y, spec, mode, rng);
    }
    return x;
}

}  // namespace splitprune
