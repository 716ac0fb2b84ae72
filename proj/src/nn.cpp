#include "latflow/nn.hpp"

#include <cmath>

#include "latflow/error.hpp"
#include "latflow/rng.hpp"

namespace latflow::nn {

Value ParamStore::add(const std::string& name, Tensor init, bool decay) {
    if (map_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Value v = ad::leaf(std::move(init));
    order_.push_back(name);
    map_[name] = v;
    decay_[name] = decay;
    return v;
}

Value ParamStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return map_.count(name) > 0; }

bool ParamStore::decay_flag(const std::string& name) const {
    auto it = decay_.find(name);
    if (it == decay_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

std::int64_t ParamStore::param_count() const {
    std::int64_t n = 0;
    for (const auto& name : order_) n += map_.at(name)->val.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (const auto& name : order_) {
        auto& g = map_.at(name)->grad;
        std::fill(g.data.begin(), g.data.end(), 0.0f);
    }
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& name : order_) out[name] = map_.at(name)->val;
    return out;
}

void ParamStore::load(const std::map<std::string, Tensor>& weights) {
    for (const auto& name : order_) {
        auto it = weights.find(name);
        if (it == weights.end()) throw IoError("checkpoint missing parameter: " + name);
        Tensor& dst = map_.at(name)->val;
        if (!shape_eq(dst.shape, it->second.shape))
            throw ShapeError("checkpoint shape mismatch for " + name + ": expected " +
                             shape_str(dst.shape) + ", got " + shape_str(it->second.shape));
        dst.data = it->second.data;
    }
}

std::uint64_t ParamStore::fingerprint() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& name : order_) {
        h = fnv1a64(name.data(), name.size(), h);
        const auto& d = map_.at(name)->val.data;
        h = fnv1a64(d.data(), d.size() * sizeof(float), h);
    }
    return h;
}

Tensor init_xavier_uniform(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    const float s = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    return Tensor::uniform(rng, {fan_in, fan_out}, -s, s);
}

Tensor init_normal(Rng& rng, Shape s, float stddev) { return Tensor::randn(rng, std::move(s), stddev); }

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
               bool bias) {
    W = ps.add(name + ".w", init_xavier_uniform(rng, in, out), true);
    if (bias) b = ps.add(name + ".b", Tensor::zeros({out}), false);
}

Linear Linear::zeros(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out) {
    Linear l;
    l.W = ps.add(name + ".w", Tensor::zeros({in, out}), false);
    l.b = ps.add(name + ".b", Tensor::zeros({out}), false);
    return l;
}

Value Linear::operator()(const Value& x) const {
    return b ? ad::linear(x, W, b) : ad::linear(x, W);
}

void AdamW::step(ParamStore& ps, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& name : ps.names()) {
        Value p = ps.get(name);
        if (p->grad.data.empty()) p->ensure_grad();
        auto& slot = slots_[name];
        if (slot.m.data.empty()) {
            slot.m = Tensor(p->val.shape);
            slot.v = Tensor(p->val.shape);
        }
        const bool decay = ps.decay_flag(name);
        const std::int64_t n = p->val.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double g = p->grad.data[i];
            double m = beta1_ * slot.m.data[i] + (1.0 - beta1_) * g;
            double v = beta2_ * slot.v.data[i] + (1.0 - beta2_) * g * g;
            slot.m.data[i] = static_cast<float>(m);
            slot.v.data[i] = static_cast<float>(v);
            double upd = (m / bc1) / (std::sqrt(v / bc2) + eps_);
            if (decay) upd += weight_decay_ * p->val.data[i];
            p->val.data[i] = static_cast<float>(p->val.data[i] - lr * upd);
        }
    }
}

Ema::Ema(const ParamStore& ps, double beta) : beta_(beta) {
    if (beta < 0.0 || beta > 1.0) throw RangeError("ema beta must be in [0, 1]");
    shadow_ = ps.snapshot();
}

void Ema::update(const ParamStore& ps) {
    for (const auto& name : ps.names()) {
        const Tensor& live = ps.get(name)->val;
        Tensor& sh = shadow_.at(name);
        const std::int64_t n = live.numel();
        for (std::int64_t i = 0; i < n; ++i)
            sh.data[i] = static_cast<float>(beta_ * sh.data[i] + (1.0 - beta_) * live.data[i]);
    }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
    if (total_steps <= 1) return lr_max;
    const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * p));
}

} // namespace latflow::nn
