#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "latflow/autodiff.hpp"
#include "latflow/tensor.hpp"

namespace latflow::nn {

using ad::Value;

/// Ordered collection of named trainable tensors. Iteration order is
/// insertion order, which fixes optimizer and serialization order and
/// therefore keeps training bit-reproducible.
class ParamStore {
public:
    /// Registers a parameter. `decay` marks it for weight decay (matrices of
    /// genuine linear maps); biases, gains and embeddings should pass false.
    Value add(const std::string& name, Tensor init, bool decay);

    Value get(const std::string& name) const;
    bool has(const std::string& name) const;
    bool decay_flag(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::int64_t param_count() const;

    void zero_grad();

    /// Copies of the current values, keyed by name.
    std::map<std::string, Tensor> snapshot() const;
    /// Overwrites values from a snapshot. Every parameter must be present
    /// with a matching shape.
    void load(const std::map<std::string, Tensor>& weights);

    /// FNV-1a over all parameter bytes in registration order. Used to verify
    /// that frozen weights stayed bitwise identical.
    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Value> map_;
    std::unordered_map<std::string, bool> decay_;
};

// ----- initializers -----
Tensor init_xavier_uniform(Rng& rng, std::int64_t fan_in, std::int64_t fan_out);
Tensor init_normal(Rng& rng, Shape s, float stddev);

/// Dense layer bundle; bias optional.
struct Linear {
    Value W; // [in, out]
    Value b; // [out] or null
    Linear() = default;
    Linear(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
           bool bias = true);
    /// A layer whose weight and bias start at exactly zero. Used for
    /// modulation heads so blocks start as the identity.
    static Linear zeros(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out);
    Value operator()(const Value& x) const;
};

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name so that checkpoint resume restores the exact optimizer state.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(ParamStore& ps, double lr);
    std::int64_t steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor m, v;
    };
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Slot> slots_;
};

/// Exponential moving average of parameters:
///   shadow <- beta * shadow + (1 - beta) * live, applied every step.
/// beta = 0 tracks the live weights exactly; beta = 1 never moves.
class Ema {
public:
    Ema() = default;
    Ema(const ParamStore& ps, double beta);
    void update(const ParamStore& ps);
    const std::map<std::string, Tensor>& shadow() const { return shadow_; }
    std::map<std::string, Tensor>& shadow_mut() { return shadow_; }
    double beta() const { return beta_; }

private:
    double beta_ = 0.999;
    std::map<std::string, Tensor> shadow_;
};

/// Cosine annealing from lr_max to lr_min over total_steps, evaluated at
/// step (0-based). Constant lr_max when total_steps <= 1.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min);

} // namespace latflow::nn
