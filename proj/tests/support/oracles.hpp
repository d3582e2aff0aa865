#pragma once

// Brute-force reference computations for the diffusion and autoregressive
// objectives. Nothing here uses the closed forms under test: posteriors come
// from Bayes' rule over enumerated forward paths and bounds from enumerating
// whole trajectories.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <vector>

namespace ddlab::testing {

// Categories 0..V-1 are tokens, V is the mask.
struct StepKernel {
    int vocab;
    int steps;

    int categories() const { return vocab + 1; }
    double beta(int t) const { return 1.0 / (steps - t + 1); }

    // Q_t(i -> j): a token stays with 1 - beta_t or jumps to the mask; the
    // mask is absorbing.
    double q(int t, int i, int j) const {
        const int mask = vocab;
        if (i == mask) return j == mask ? 1.0 : 0.0;
        if (j == i) return 1.0 - beta(t);
        if (j == mask) return beta(t);
        return 0.0;
    }

    // q(x^t = j | x^0 = i) by summing over every path of single-token states.
    double marginal(int t, int i, int j) const {
        if (t == 0) return i == j ? 1.0 : 0.0;
        double total = 0;
        std::vector<int> path(t + 1, 0);
        path[0] = i;
        const int k = categories();
        std::function<void(int, double)> walk = [&](int s, double p) {
            if (p == 0) return;
            if (s == t) {
                if (path[t] == j) total += p;
                return;
            }
            for (int c = 0; c < k; ++c) {
                path[s + 1] = c;
                walk(s + 1, p * q(s + 1, path[s], c));
            }
        };
        walk(0, 1.0);
        return total;
    }

    // q(x^{t-1} | x^t = xt, x^0 = x0) over all categories; empty when the
    // conditioning event has probability zero.
    std::vector<double> bayes_posterior(int t, int x0, int xt) const {
        const int k = categories();
        std::vector<double> p(k, 0.0);
        double z = 0;
        for (int c = 0; c < k; ++c) z += (p[c] = q(t, c, xt) * marginal(t - 1, x0, c));
        if (z == 0) return {};
        for (auto& v : p) v /= z;
        return p;
    }
};

// Clean-token probabilities for every position of a noisy sequence at step t.
using CleanPredictor = std::function<std::vector<std::vector<double>>(const std::vector<int>& xt, int t)>;

struct ExactDiffusion {
    double bound_nats = 0;  // E_q[log q(x^{1:T}|x0) - log p(x^{0:T})]
    double nll_nats = 0;    // -log sum over trajectories of p(x^{0:T})
};

// Enumerates every (x^1, ..., x^T) for a short sequence. The reverse step is
// the x0-parameterization: mix Bayes posteriors by the predicted clean token,
// with unmasked positions carried over; the prior on x^T is all-mask.
inline ExactDiffusion enumerate_diffusion(const StepKernel& kernel, const std::vector<int>& x0,
                                          const CleanPredictor& predict) {
    const int L = static_cast<int>(x0.size()), K = kernel.categories(), T = kernel.steps, V = kernel.vocab;
    int states = 1;
    for (int i = 0; i < L; ++i) states *= K;
    auto decode = [&](int code) {
        std::vector<int> x(L);
        for (int i = 0; i < L; ++i, code /= K) x[i] = code % K;
        return x;
    };

    // Cache predictions and posteriors, both independent of the trajectory.
    std::map<std::pair<int, int>, std::vector<std::vector<double>>> preds;
    auto pred = [&](int code, int t) -> const std::vector<std::vector<double>>& {
        auto key = std::make_pair(code, t);
        auto it = preds.find(key);
        if (it == preds.end()) it = preds.emplace(key, predict(decode(code), t)).first;
        return it->second;
    };
    std::map<std::tuple<int, int, int>, std::vector<double>> post;
    auto bayes = [&](int t, int c0, int xt) -> const std::vector<double>& {
        auto key = std::make_tuple(t, c0, xt);
        auto it = post.find(key);
        if (it == post.end()) it = post.emplace(key, kernel.bayes_posterior(t, c0, xt)).first;
        return it->second;
    };

    // log p_theta(x^{t-1} = prev | x^t = cur)
    auto reverse_logp = [&](int t, int prev_code, int cur_code) {
        const auto prev = decode(prev_code), cur = decode(cur_code);
        const auto& p0 = pred(cur_code, t);
        double lp = 0;
        for (int i = 0; i < L; ++i) {
            double p = 0;
            if (cur[i] != V) {
                p = prev[i] == cur[i] ? 1.0 : 0.0;
            } else if (t == 1) {
                p = prev[i] < V ? p0[i][prev[i]] : 0.0;
            } else {
                for (int c = 0; c < V; ++c) {
                    const auto& b = bayes(t, c, cur[i]);
                    if (!b.empty()) p += b[prev[i]] * p0[i][c];
                }
            }
            if (p <= 0) return -std::numeric_limits<double>::infinity();
            lp += std::log(p);
        }
        return lp;
    };
    auto forward_logq = [&](int t, int prev_code, int cur_code) {
        const auto prev = decode(prev_code), cur = decode(cur_code);
        double lq = 0;
        for (int i = 0; i < L; ++i) {
            const double q = kernel.q(t, prev[i], cur[i]);
            if (q <= 0) return -std::numeric_limits<double>::infinity();
            lq += std::log(q);
        }
        return lq;
    };

    int x0_code = 0;
    for (int i = L - 1; i >= 0; --i) x0_code = x0_code * K + x0[i];
    const int all_mask = states - 1;

    ExactDiffusion out;
    double likelihood = 0;
    std::vector<int> traj(T + 1, 0);
    traj[0] = x0_code;
    std::function<void(int, double, double)> walk = [&](int t, double log_q, double log_p) {
        if (t > T) {
            if (traj[T] != all_mask) return;  // prior puts no mass elsewhere
            likelihood += std::exp(log_p);
            if (log_q > -INFINITY) out.bound_nats += std::exp(log_q) * (log_q - log_p);
            return;
        }
        for (int code = 0; code < states; ++code) {
            traj[t] = code;
            const double lq = forward_logq(t, traj[t - 1], code);
            const double lp = reverse_logp(t, traj[t - 1], code);
            if (lq == -INFINITY && lp == -INFINITY) continue;
            walk(t + 1, log_q + lq, log_p + lp);
        }
    };
    walk(1, 0.0, 0.0);
    out.nll_nats = -std::log(likelihood);
    return out;
}

// Number of (x^1, ..., x^T) assignments the enumeration ranges over.
inline std::size_t trajectory_count(int vocab, int length, int steps) {
    std::size_t n = 1;
    for (int i = 0; i < length * steps; ++i) n *= static_cast<std::size_t>(vocab + 1);
    return n;
}

// Scalar AdamW written out term by term.
struct ScalarAdamW {
    double lr, wd, b1, b2, eps;
    double m = 0, v = 0;
    int step = 0;

    double update(double w, double g) {
        ++step;
        w -= lr * wd * w;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, step));
        const double vhat = v / (1 - std::pow(b2, step));
        return w - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace ddlab::testing
