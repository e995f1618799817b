#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "jtcn/core.hpp"

namespace jtcn {

// Named trainable tensor with its gradient and Adam moment estimates.
struct ParamEntry {
    Tensor2 value;
    Tensor2 grad;
    Tensor2 m;
    Tensor2 v;
};

// Single-writer parameter store. Iteration order is the sorted name order,
// which keeps every pass over the parameters deterministic.
class ParamStore {
public:
    Tensor2& create(const std::string& name, std::size_t rows, std::size_t cols) {
        if (entries_.count(name))
            throw ContractViolation("ParamStore: duplicate parameter '" + name + "'");
        ParamEntry e;
        e.value = Tensor2(rows, cols);
        e.grad = Tensor2(rows, cols);
        e.m = Tensor2(rows, cols);
        e.v = Tensor2(rows, cols);
        return entries_.emplace(name, std::move(e)).first->second.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ContractViolation("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const ParamEntry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ContractViolation("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor2& value(const std::string& name) { return entry(name).value; }
    const Tensor2& value(const std::string& name) const { return entry(name).value; }
    Tensor2& grad(const std::string& name) { return entry(name).grad; }
    const Tensor2& grad(const std::string& name) const { return entry(name).grad; }

    std::map<std::string, ParamEntry>& entries() { return entries_; }
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }

    std::uint64_t step_count() const { return step_count_; }
    void set_step_count(std::uint64_t t) { step_count_ = t; }

    void zero_grads() {
        for (auto& [name, e] : entries_) e.grad.fill(0.0);
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_) n += e.value.size();
        return n;
    }

    // One Adam update with bias correction over every parameter.
    // Gradients are zeroed afterwards.
    void adam_step(double lr, double beta1, double beta2, double eps) {
        std::uint64_t t = step_count_ + 1;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (auto& [name, e] : entries_) {
            if (!all_finite(e.grad.v))
                throw NumericError("adam_step: non-finite gradient for parameter '" + name + "'");
            for (std::size_t i = 0; i < e.value.size(); ++i) {
                double g = e.grad.v[i];
                e.m.v[i] = beta1 * e.m.v[i] + (1.0 - beta1) * g;
                e.v.v[i] = beta2 * e.v.v[i] + (1.0 - beta2) * g * g;
                double mhat = e.m.v[i] / bc1;
                double vhat = e.v.v[i] / bc2;
                e.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            e.grad.fill(0.0);
        }
        step_count_ = t;
    }

private:
    std::map<std::string, ParamEntry> entries_;
    std::uint64_t step_count_ = 0;
};

inline void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
    store.adam_step(lr, beta1, beta2, eps);
}

// Central finite differences of a scalar loss w.r.t. one named parameter.
// The store is restored to its original values before returning.
inline Tensor2 finite_diff_grad(const std::function<double(ParamStore&)>& loss_fn,
                                ParamStore& store, const std::string& param,
                                double epsilon = 1e-5) {
    if (!(epsilon > 0.0)) throw ContractViolation("finite_diff_grad: epsilon must be positive");
    Tensor2& theta = store.value(param);  // throws on unknown name
    Tensor2 out(theta.rows, theta.cols);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double orig = theta.v[i];
        theta.v[i] = orig + epsilon;
        double lp = loss_fn(store);
        theta.v[i] = orig - epsilon;
        double lm = loss_fn(store);
        theta.v[i] = orig;
        out.v[i] = (lp - lm) / (2.0 * epsilon);
    }
    return out;
}

}  // namespace jtcn
