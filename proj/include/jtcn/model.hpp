#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "jtcn/core.hpp"
#include "jtcn/data.hpp"
#include "jtcn/param_store.hpp"
#include "jtcn/text.hpp"

namespace jtcn {

struct ModelDims {
    std::size_t d = 0;         // latent factors
    std::size_t k = 0;         // preference capsules
    std::size_t d_a = 0;       // attention hidden width
    std::size_t d_h = 0;       // tower hidden width
    std::size_t vocab = 0;     // tf-idf vocabulary size
    std::size_t n_partners = 0;
};

// All trainable tensors plus the frozen routing-logit initializer beta.
// beta is drawn once at construction and never updated; zero-initialized
// routing logits would keep all capsules identical forever because the
// bilinear map S is shared.
struct ModelParams {
    ModelDims dims;
    ParamStore store;
    Tensor2 beta;  // K x 1, frozen

    static ModelParams init(const ModelDims& dims, std::uint64_t seed) {
        if (dims.d == 0 || dims.k == 0 || dims.d_a == 0 || dims.d_h == 0 || dims.vocab == 0 ||
            dims.n_partners == 0)
            throw ContractViolation("ModelParams::init: all dimensions must be positive");
        ModelParams p;
        p.dims = dims;
        RngStream rng(seed);
        auto glorot = [&rng](Tensor2& t) {
            double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
            for (double& x : t.v) x = rng.next_uniform(-limit, limit);
        };
        glorot(p.store.create("partner_emb", dims.n_partners, dims.d));
        glorot(p.store.create("S", dims.d, dims.d));
        glorot(p.store.create("W_a", dims.d_a, dims.d));
        p.store.create("b_a", dims.d_a, 1);
        glorot(p.store.create("h", dims.d_a, 1));
        glorot(p.store.create("W_u", dims.d, 2 * dims.d));
        p.store.create("b_u", dims.d, 1);
        glorot(p.store.create("fc.W1", dims.d_h, dims.vocab));
        p.store.create("fc.b1", dims.d_h, 1);
        glorot(p.store.create("fc.W2", dims.d, dims.d_h));
        p.store.create("fc.b2", dims.d, 1);
        glorot(p.store.create("fp.W1", dims.d_h, dims.vocab));
        p.store.create("fp.b1", dims.d_h, 1);
        glorot(p.store.create("fp.W2", dims.d, dims.d_h));
        p.store.create("fp.b2", dims.d, 1);
        p.beta = Tensor2(dims.k, 1);
        for (double& x : p.beta.v) x = rng.next_normal();
        return p;
    }

    const Tensor2& value(const std::string& name) const { return store.value(name); }
    Tensor2& grad(const std::string& name) { return store.grad(name); }
};

// --------------------------------------------------------------------------
// squash: norm-bounding nonlinearity, ||out|| = ||z||^2 / (1 + ||z||^2) < 1
// --------------------------------------------------------------------------
inline std::vector<double> squash(std::span<const double> z) {
    double n2 = dot(z, z);
    std::vector<double> p(z.size(), 0.0);
    double n = std::sqrt(n2);
    if (n < 1e-12) return p;  // zero guard
    double s = n / (1.0 + n2);
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = s * z[i];
    return p;
}

inline std::vector<double> squash_backward(std::span<const double> dp, std::span<const double> z) {
    double n2 = dot(z, z);
    double n = std::sqrt(n2);
    std::vector<double> dz(z.size(), 0.0);
    if (n < 1e-12) return dz;  // output pinned to zero below the guard
    double s = n / (1.0 + n2);
    double ds_dn = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
    double zdp = dot(z, dp);
    double coef = ds_dn * zdp / n;
    for (std::size_t i = 0; i < z.size(); ++i) dz[i] = s * dp[i] + coef * z[i];
    return dz;
}

// --------------------------------------------------------------------------
// Dynamic routing-by-agreement between behavior and preference capsules
// --------------------------------------------------------------------------

// Final-iteration routing state. Coupling rows are softmax over the K
// preference capsules, so each row sums to 1.
struct CapsuleState {
    Tensor2 logits;       // J x K, the logits that produced the final couplings
    Tensor2 couplings;    // J x K
    Tensor2 candidates;   // K x d (z)
    Tensor2 capsules;     // K x d (p)
    Tensor2 transformed;  // J x d cache of S e_j
};

// Routing logits start at beta_k for every behavior capsule and are
// recomputed from fresh capsules each iteration: b_jk = p_k . (S e_j).
inline CapsuleState dynamic_routing(const Tensor2& hist_emb, const Tensor2& s_map,
                                    const Tensor2& beta, std::size_t iters) {
    std::size_t j_count = hist_emb.rows;
    std::size_t d = hist_emb.cols;
    std::size_t k_count = beta.rows;
    if (j_count < 1) throw ContractViolation("dynamic_routing: empty history");
    if (iters < 1) throw ContractViolation("dynamic_routing: iters must be >= 1");
    if (s_map.rows != d || s_map.cols != d)
        throw ContractViolation("dynamic_routing: S must be " + shape_str(d, d));

    CapsuleState st;
    st.transformed = Tensor2(j_count, d);
    for (std::size_t j = 0; j < j_count; ++j) {
        auto t = matvec(s_map, {hist_emb.row(j), d});
        std::copy(t.begin(), t.end(), st.transformed.row(j));
    }

    Tensor2 logits(j_count, k_count);
    for (std::size_t j = 0; j < j_count; ++j)
        for (std::size_t k = 0; k < k_count; ++k) logits(j, k) = beta.v[k];

    Tensor2 couplings(j_count, k_count);
    Tensor2 candidates(k_count, d);
    Tensor2 capsules(k_count, d);
    for (std::size_t it = 0; it < iters; ++it) {
        if (it + 1 == iters) st.logits = logits;
        for (std::size_t j = 0; j < j_count; ++j) {
            auto c = stable_softmax({logits.row(j), k_count});
            std::copy(c.begin(), c.end(), couplings.row(j));
        }
        candidates.fill(0.0);
        for (std::size_t j = 0; j < j_count; ++j)
            for (std::size_t k = 0; k < k_count; ++k)
                axpy(couplings(j, k), {st.transformed.row(j), d}, {candidates.row(k), d});
        for (std::size_t k = 0; k < k_count; ++k) {
            auto p = squash({candidates.row(k), d});
            std::copy(p.begin(), p.end(), capsules.row(k));
        }
        for (std::size_t j = 0; j < j_count; ++j)
            for (std::size_t k = 0; k < k_count; ++k)
                logits(j, k) = dot({capsules.row(k), d}, {st.transformed.row(j), d});
    }
    st.couplings = std::move(couplings);
    st.candidates = std::move(candidates);
    st.capsules = std::move(capsules);
    return st;
}

// Backward through the final routing iteration with couplings treated as
// constants. Accumulates into dS and returns gradients w.r.t. the history
// embeddings (J x d).
inline Tensor2 routing_backward(const CapsuleState& st, const Tensor2& hist_emb,
                                const Tensor2& s_map, const Tensor2& dcaps, Tensor2& ds_acc) {
    std::size_t j_count = hist_emb.rows;
    std::size_t d = hist_emb.cols;
    std::size_t k_count = st.capsules.rows;

    Tensor2 dcand(k_count, d);
    for (std::size_t k = 0; k < k_count; ++k) {
        auto dz = squash_backward({dcaps.row(k), d}, {st.candidates.row(k), d});
        std::copy(dz.begin(), dz.end(), dcand.row(k));
    }
    Tensor2 dhist(j_count, d);
    std::vector<double> dt(d);
    for (std::size_t j = 0; j < j_count; ++j) {
        std::fill(dt.begin(), dt.end(), 0.0);
        for (std::size_t k = 0; k < k_count; ++k)
            axpy(st.couplings(j, k), {dcand.row(k), d}, dt);
        add_outer(ds_acc, dt, {hist_emb.row(j), d});
        auto de = matvec_t(s_map, dt);
        std::copy(de.begin(), de.end(), dhist.row(j));
    }
    return dhist;
}

// --------------------------------------------------------------------------
// Attention pooling over preference capsules
// --------------------------------------------------------------------------
struct AttentionTrace {
    Tensor2 hidden;               // K x d_a, post-ReLU
    std::vector<double> pre_act;  // a_k
    std::vector<double> alpha;    // softmax weights
    std::vector<double> pooled;   // u^p
};

inline AttentionTrace attention_pool(const Tensor2& capsules, const Tensor2& w_a,
                                     const Tensor2& b_a, const Tensor2& h) {
    std::size_t k_count = capsules.rows;
    std::size_t d = capsules.cols;
    std::size_t d_a = w_a.rows;
    if (k_count < 1) throw ContractViolation("attention_pool: K must be >= 1");
    AttentionTrace tr;
    tr.hidden = Tensor2(k_count, d_a);
    tr.pre_act.resize(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        auto q = affine({capsules.row(k), d}, w_a, b_a.v);
        auto r = relu(q);
        std::copy(r.begin(), r.end(), tr.hidden.row(k));
        tr.pre_act[k] = dot(h.v, r);
    }
    tr.alpha = stable_softmax(tr.pre_act);
    tr.pooled.assign(d, 0.0);
    for (std::size_t k = 0; k < k_count; ++k)
        axpy(tr.alpha[k], {capsules.row(k), d}, tr.pooled);
    return tr;
}

// Returns gradients w.r.t. the capsules; accumulates attention parameters.
inline Tensor2 attention_backward(const AttentionTrace& tr, const Tensor2& capsules,
                                  const Tensor2& w_a, const Tensor2& h,
                                  std::span<const double> dpooled, Tensor2& dw_a, Tensor2& db_a,
                                  Tensor2& dh) {
    std::size_t k_count = capsules.rows;
    std::size_t d = capsules.cols;
    std::size_t d_a = w_a.rows;

    std::vector<double> dalpha(k_count);
    for (std::size_t k = 0; k < k_count; ++k)
        dalpha[k] = dot(dpooled, {capsules.row(k), d});
    auto da = softmax_backward(tr.alpha, dalpha);

    Tensor2 dcaps(k_count, d);
    std::vector<double> dq(d_a);
    for (std::size_t k = 0; k < k_count; ++k) {
        const double* r = tr.hidden.row(k);
        axpy(da[k], {r, d_a}, dh.v);
        for (std::size_t i = 0; i < d_a; ++i) dq[i] = r[i] > 0.0 ? da[k] * h.v[i] : 0.0;
        add_outer(dw_a, dq, {capsules.row(k), d});
        axpy(1.0, dq, db_a.v);
        auto dp = matvec_t(w_a, dq);
        for (std::size_t i = 0; i < d; ++i) dcaps(k, i) = tr.alpha[k] * dpooled[i] + dp[i];
    }
    return dcaps;
}

// --------------------------------------------------------------------------
// Side-information towers: out = W2 ReLU(W1 x + b1) + b2, sparse first matvec
// --------------------------------------------------------------------------
struct TowerTrace {
    std::vector<double> hidden;  // post-ReLU
    std::vector<double> out;
    bool empty_doc = false;
};

inline TowerTrace tower_forward(const SparseRow& x, const Tensor2& w1, const Tensor2& b1,
                                const Tensor2& w2, const Tensor2& b2) {
    std::size_t d_h = w1.rows;
    TowerTrace tr;
    tr.empty_doc = x.empty();
    std::vector<double> pre(b1.v);
    for (const auto& [idx, w] : x.entries) {
        if (idx >= w1.cols) throw ContractViolation("tower_forward: term index out of range");
        for (std::size_t r = 0; r < d_h; ++r) pre[r] += w * w1(r, idx);
    }
    tr.hidden = relu(pre);
    tr.out = affine(tr.hidden, w2, b2.v);
    return tr;
}

inline void tower_backward(const TowerTrace& tr, const SparseRow& x, const Tensor2& w2,
                           std::span<const double> dout, Tensor2& dw1, Tensor2& db1, Tensor2& dw2,
                           Tensor2& db2) {
    std::size_t d_h = tr.hidden.size();
    add_outer(dw2, dout, tr.hidden);
    axpy(1.0, dout, db2.v);
    auto dh = matvec_t(w2, dout);
    for (std::size_t r = 0; r < d_h; ++r)
        if (tr.hidden[r] <= 0.0) dh[r] = 0.0;
    axpy(1.0, dh, db1.v);
    for (const auto& [idx, w] : x.entries)
        for (std::size_t r = 0; r < d_h; ++r) dw1(r, idx) += w * dh[r];
}

// --------------------------------------------------------------------------
// Fusion of content and preference representations
// --------------------------------------------------------------------------
struct FuseTrace {
    std::vector<double> concat;  // [u^c, u^p]
    std::vector<double> fused;   // ReLU(W_u concat + b_u)
};

// Concatenation order is content first, preference second (fixed for
// checkpoint compatibility).
inline FuseTrace fuse(std::span<const double> u_c, std::span<const double> u_p,
                      const Tensor2& w_u, const Tensor2& b_u) {
    if (u_c.size() + u_p.size() != w_u.cols)
        throw ContractViolation("fuse: shape mismatch W_u=" + shape_str(w_u.rows, w_u.cols) +
                                " vs concat[" + std::to_string(u_c.size() + u_p.size()) + "]");
    FuseTrace tr;
    tr.concat.reserve(w_u.cols);
    tr.concat.assign(u_c.begin(), u_c.end());
    tr.concat.insert(tr.concat.end(), u_p.begin(), u_p.end());
    tr.fused = relu(affine(tr.concat, w_u, b_u.v));
    return tr;
}

// Returns d(concat); accumulates W_u, b_u.
inline std::vector<double> fuse_backward(const FuseTrace& tr, const Tensor2& w_u,
                                         std::span<const double> dfused, Tensor2& dw_u,
                                         Tensor2& db_u) {
    std::size_t d = tr.fused.size();
    std::vector<double> dpre(d);
    for (std::size_t i = 0; i < d; ++i) dpre[i] = tr.fused[i] > 0.0 ? dfused[i] : 0.0;
    add_outer(dw_u, dpre, tr.concat);
    axpy(1.0, dpre, db_u.v);
    return matvec_t(w_u, dpre);
}

// --------------------------------------------------------------------------
// Losses
// --------------------------------------------------------------------------

struct SoftmaxLossTrace {
    std::vector<double> probs;
    double loss = 0.0;
};

// loss = -ln( exp(u.e_target) / sum_{j in C} exp(u.e_j) ), max-shifted.
inline SoftmaxLossTrace softmax_loss(std::span<const double> u, const Tensor2& emb,
                                     std::span<const Id> candidates, std::size_t target_pos) {
    if (candidates.size() < 2)
        throw ContractViolation("softmax_loss: candidate set must hold >= 2 partners");
    if (target_pos >= candidates.size())
        throw ContractViolation("softmax_loss: target position out of range");
    std::size_t n = candidates.size();
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i)
        scores[i] = dot(u, {emb.row(static_cast<std::size_t>(candidates[i])), emb.cols});
    double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    SoftmaxLossTrace tr;
    tr.probs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        tr.probs[i] = std::exp(scores[i] - mx);
        sum += tr.probs[i];
    }
    for (double& p : tr.probs) p /= sum;
    tr.loss = std::log(sum) - (scores[target_pos] - mx);
    return tr;
}

// Squared L2 distance between the routed preference and the mimic tower
// output. The preference vector is a stop-gradient target: the returned
// gradient is w.r.t. the tower output only.
inline double mimic_loss(std::span<const double> u_p, std::span<const double> f_p_out,
                         std::vector<double>* dmimic_out = nullptr) {
    if (u_p.size() != f_p_out.size())
        throw ContractViolation("mimic_loss: dimension mismatch");
    double loss = 0.0;
    if (dmimic_out) dmimic_out->assign(u_p.size(), 0.0);
    for (std::size_t i = 0; i < u_p.size(); ++i) {
        double diff = u_p[i] - f_p_out[i];
        loss += diff * diff;
        if (dmimic_out) (*dmimic_out)[i] = 2.0 * (f_p_out[i] - u_p[i]);
    }
    return loss;
}

// --------------------------------------------------------------------------
// Per-example forward/backward
// --------------------------------------------------------------------------

struct ForwardTrace {
    std::vector<Id> hist_ids;
    Tensor2 hist_emb;  // J x d
    CapsuleState caps;
    AttentionTrace attn;
    TowerTrace content;  // f_c
    TowerTrace mimic;    // f_p
    FuseTrace fused;
    std::vector<Id> candidates;
    std::size_t target_pos = 0;
    SoftmaxLossTrace sm;
    double loss_mimic = 0.0;
    bool empty_doc = false;
};

inline Tensor2 gather_rows(const Tensor2& emb, std::span<const Id> ids) {
    Tensor2 out(ids.size(), emb.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= emb.rows)
            throw ContractViolation("gather_rows: id out of range");
        std::copy(emb.row(static_cast<std::size_t>(ids[i])),
                  emb.row(static_cast<std::size_t>(ids[i])) + emb.cols, out.row(i));
    }
    return out;
}

// Preference + content forward shared by training and validation scoring.
struct UserVector {
    std::vector<double> u;    // fused representation (Eq. 7 analogue)
    std::vector<double> u_p;  // routed preference
    bool empty_doc = false;
};

inline ForwardTrace example_forward(const ModelParams& p, const SparseRow& doc,
                                    std::span<const Id> hist, std::vector<Id> candidates,
                                    std::size_t target_pos, std::size_t iters) {
    ForwardTrace tr;
    tr.hist_ids.assign(hist.begin(), hist.end());
    tr.hist_emb = gather_rows(p.value("partner_emb"), hist);
    tr.caps = dynamic_routing(tr.hist_emb, p.value("S"), p.beta, iters);
    tr.attn = attention_pool(tr.caps.capsules, p.value("W_a"), p.value("b_a"), p.value("h"));
    tr.content = tower_forward(doc, p.value("fc.W1"), p.value("fc.b1"), p.value("fc.W2"),
                               p.value("fc.b2"));
    tr.mimic = tower_forward(doc, p.value("fp.W1"), p.value("fp.b1"), p.value("fp.W2"),
                             p.value("fp.b2"));
    tr.empty_doc = doc.empty();
    tr.fused = fuse(tr.content.out, tr.attn.pooled, p.value("W_u"), p.value("b_u"));
    tr.candidates = std::move(candidates);
    tr.target_pos = target_pos;
    tr.sm = softmax_loss(tr.fused.fused, p.value("partner_emb"), tr.candidates, target_pos);
    tr.loss_mimic = mimic_loss(tr.attn.pooled, tr.mimic.out);
    return tr;
}

inline UserVector user_forward(const ModelParams& p, const SparseRow& doc,
                               std::span<const Id> hist, std::size_t iters) {
    UserVector uv;
    Tensor2 hist_emb = gather_rows(p.value("partner_emb"), hist);
    CapsuleState caps = dynamic_routing(hist_emb, p.value("S"), p.beta, iters);
    AttentionTrace attn =
        attention_pool(caps.capsules, p.value("W_a"), p.value("b_a"), p.value("h"));
    TowerTrace content = tower_forward(doc, p.value("fc.W1"), p.value("fc.b1"), p.value("fc.W2"),
                                       p.value("fc.b2"));
    FuseTrace fused = fuse(content.out, attn.pooled, p.value("W_u"), p.value("b_u"));
    uv.u = std::move(fused.fused);
    uv.u_p = std::move(attn.pooled);
    uv.empty_doc = doc.empty();
    return uv;
}

// Accumulates gradients of w_sm * loss_softmax + w_mm * loss_mimic into the
// store. Routing couplings are constants in this pass; the mimic target u^p
// receives no gradient from the mimic term.
inline void example_backward(ModelParams& p, const ForwardTrace& tr, const SparseRow& doc,
                             double w_sm, double w_mm) {
    std::size_t d = p.dims.d;
    const Tensor2& emb = p.value("partner_emb");
    Tensor2& g_emb = p.grad("partner_emb");

    // mimic loss -> f_p only (stop-gradient target)
    if (w_mm != 0.0) {
        std::vector<double> dm;
        mimic_loss(tr.attn.pooled, tr.mimic.out, &dm);
        for (double& x : dm) x *= w_mm;
        tower_backward(tr.mimic, doc, p.value("fp.W2"), dm, p.grad("fp.W1"), p.grad("fp.b1"),
                       p.grad("fp.W2"), p.grad("fp.b2"));
    }

    // softmax loss -> u and candidate embeddings
    std::vector<double> du(d, 0.0);
    for (std::size_t i = 0; i < tr.candidates.size(); ++i) {
        double g = w_sm * (tr.sm.probs[i] - (i == tr.target_pos ? 1.0 : 0.0));
        std::size_t row = static_cast<std::size_t>(tr.candidates[i]);
        axpy(g, {emb.row(row), d}, du);
        axpy(g, tr.fused.fused, {g_emb.row(row), d});
    }

    // fuse -> content tower and attention-pooled preference
    auto dconcat = fuse_backward(tr.fused, p.value("W_u"), du, p.grad("W_u"), p.grad("b_u"));
    std::span<const double> du_c(dconcat.data(), d);
    std::span<const double> du_p(dconcat.data() + d, d);
    tower_backward(tr.content, doc, p.value("fc.W2"), du_c, p.grad("fc.W1"), p.grad("fc.b1"),
                   p.grad("fc.W2"), p.grad("fc.b2"));

    // attention -> capsules
    Tensor2 dcaps = attention_backward(tr.attn, tr.caps.capsules, p.value("W_a"), p.value("h"),
                                       du_p, p.grad("W_a"), p.grad("b_a"), p.grad("h"));

    // routing -> S and history embeddings
    Tensor2 dhist = routing_backward(tr.caps, tr.hist_emb, p.value("S"), dcaps, p.grad("S"));
    for (std::size_t j = 0; j < tr.hist_ids.size(); ++j)
        axpy(1.0, {dhist.row(j), d}, {g_emb.row(static_cast<std::size_t>(tr.hist_ids[j])), d});
}

// --------------------------------------------------------------------------
// Joint loss over a batch
// --------------------------------------------------------------------------

struct JointResult {
    double loss_joint = 0.0;
    double loss_softmax = 0.0;  // batch mean
    double loss_mimic = 0.0;    // batch mean
};

struct JointOptions {
    double lambda_mimic = 1.0;
    std::size_t negatives = 0;
    std::size_t iters = 3;
    bool accumulate_grads = true;
};

// Samples n distinct partners outside the anchor's positive set.
inline void sample_negatives(std::vector<Id>& candidates, const std::vector<Id>& positives,
                             std::size_t n, Id n_partners, RngStream& rng) {
    if (n == 0) return;
    std::set<Id> taken;
    std::size_t attempts = 0, max_attempts = 100 * n + 100;
    while (taken.size() < n && attempts < max_attempts) {
        ++attempts;
        Id cand = static_cast<Id>(rng.next_below(static_cast<std::uint64_t>(n_partners)));
        if (std::binary_search(positives.begin(), positives.end(), cand)) continue;
        taken.insert(cand);
    }
    candidates.insert(candidates.end(), taken.begin(), taken.end());
}

// L_joint = mean softmax loss + lambda * mean mimic loss over the batch.
// The candidate set per row is the anchor's training positives (target
// included) plus optional sampled negatives; `exclude_adj` (full positives,
// validation pairs included) guards the sampling when provided.
inline JointResult joint_forward_backward(ModelParams& p, const Batch& batch,
                                          const DocMatrix& docs,
                                          const std::vector<std::vector<Id>>& cand_adj,
                                          const JointOptions& opt, RngStream& rng,
                                          const std::vector<std::vector<Id>>* exclude_adj = nullptr) {
    if (batch.size == 0) throw ContractViolation("joint_forward_backward: empty batch");
    JointResult res;
    double w = 1.0 / static_cast<double>(batch.size);
    for (std::size_t r = 0; r < batch.size; ++r) {
        Id anchor = batch.anchors[r];
        std::size_t j_count = 0;
        while (j_count < batch.width && batch.valid_row(r)[j_count]) ++j_count;
        std::span<const Id> hist(batch.history_row(r), j_count);

        const std::vector<Id>& positives = cand_adj[static_cast<std::size_t>(anchor)];
        std::vector<Id> candidates = positives;
        if (opt.negatives > 0) {
            const std::vector<Id>& excl =
                exclude_adj ? (*exclude_adj)[static_cast<std::size_t>(anchor)] : positives;
            sample_negatives(candidates, excl, opt.negatives,
                             static_cast<Id>(p.dims.n_partners), rng);
        }
        auto it = std::lower_bound(positives.begin(), positives.end(), batch.targets[r]);
        if (it == positives.end() || *it != batch.targets[r])
            throw ContractViolation("joint_forward_backward: target not in candidate set");
        std::size_t target_pos = static_cast<std::size_t>(it - positives.begin());

        ForwardTrace tr = example_forward(p, docs.rows[static_cast<std::size_t>(anchor)], hist,
                                          std::move(candidates), target_pos, opt.iters);
        res.loss_softmax += w * tr.sm.loss;
        res.loss_mimic += w * tr.loss_mimic;
        if (opt.accumulate_grads)
            example_backward(p, tr, docs.rows[static_cast<std::size_t>(anchor)], w,
                             opt.lambda_mimic * w);
    }
    res.loss_joint = res.loss_softmax + opt.lambda_mimic * res.loss_mimic;
    return res;
}

}  // namespace jtcn
