#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <cstdint>
#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada {

enum class OptimizerKind : std::uint8_t { sgd_momentum, adamw, adam };

inline const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd_momentum: return "sgd-momentum";
        case OptimizerKind::adamw: return "adamw";
        case OptimizerKind::adam: return "adam";
    }
    return "unknown";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
    if (s == "adamw") return OptimizerKind::adamw;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double lr = 0.0009;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool cosine = true;          // cosine decay to 0 over total_steps
    std::size_t total_steps = 0;
};

// Stateful first-order optimizer over a fixed list of parameter tensors.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
        if (!(cfg_.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (cfg_.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
    }

    double current_lr() const {
        if (!cfg_.cosine || cfg_.total_steps == 0) return cfg_.lr;
        const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(cfg_.total_steps));
        return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }

    std::size_t steps_taken() const noexcept { return t_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) throw ContractError("optimizer: params/grads length mismatch");
        if (state1_.empty()) {
            for (const Tensor* p : params) {
                state1_.emplace_back(p->shape());
                state2_.emplace_back(p->shape());
            }
        }
        const double lr = current_lr();
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            Tensor& m = state1_[i];
            Tensor& v = state2_[i];
            switch (cfg_.kind) {
                case OptimizerKind::sgd_momentum:
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        const double gj = g[j] + cfg_.weight_decay * p[j];
                        m[j] = cfg_.momentum * m[j] + gj;
                        p[j] -= lr * m[j];
                    }
                    break;
                case OptimizerKind::adamw:
                case OptimizerKind::adam: {
                    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                    const bool decoupled = cfg_.kind == OptimizerKind::adamw;
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        double gj = g[j];
                        if (!decoupled) gj += cfg_.weight_decay * p[j];
                        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                        if (decoupled) p[j] -= lr * cfg_.weight_decay * p[j];
                        p[j] -= lr * (m[j] / b1t) / (std::sqrt(v[j] / b2t) + cfg_.eps);
                    }
                    break;
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor> state1_;
    std::vector<Tensor> state2_;
};

}  // namespace rada
