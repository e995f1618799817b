#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "jtcn/core.hpp"
#include "jtcn/data.hpp"
#include "jtcn/eval.hpp"
#include "jtcn/model.hpp"
#include "jtcn/param_store.hpp"
#include "jtcn/text.hpp"

namespace jtcn {

struct TrainConfig {
    std::size_t d = 256;
    std::size_t k_capsules = 5;
    std::size_t d_a = 128;
    std::size_t d_h = 0;  // 0 means "same as d"
    std::size_t iters = 3;
    std::size_t h_max = 100;
    std::size_t batch_size = 128;
    double lr = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t patience = 10;
    std::size_t max_epochs = 200;
    double lambda_mimic = 1.0;
    std::size_t negatives = 0;
    std::uint64_t seed = 42;
    std::string orientation = "item-cold";
    double val_fraction = 0.05;
    std::size_t val_k = 100;

    std::size_t hidden_width() const { return d_h == 0 ? d : d_h; }

    void validate() const {
        if (d == 0 || k_capsules == 0 || d_a == 0 || iters == 0 || h_max == 0 || batch_size == 0 ||
            max_epochs == 0 || val_k == 0)
            throw ContractViolation("TrainConfig: size fields must be positive");
        if (patience < 1) throw ContractViolation("TrainConfig: patience must be >= 1");
        if (!(lr > 0.0)) throw ContractViolation("TrainConfig: lr must be positive");
        if (lambda_mimic < 0.0) throw ContractViolation("TrainConfig: lambda_mimic must be >= 0");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ContractViolation("TrainConfig: val_fraction must lie in [0, 1)");
        if (orientation != "item-cold" && orientation != "user-cold")
            throw ContractViolation("TrainConfig: orientation must be item-cold or user-cold");
    }
};

// --------------------------------------------------------------------------
// Warm-validation holdout: a seeded fraction of warm anchors' pairs, never
// draining any anchor below two training interactions (leave-one-out needs
// a nonempty history).
// --------------------------------------------------------------------------
struct ValidationSplit {
    std::vector<std::vector<Id>> train_adj;        // per anchor, sorted; empty for cold
    std::vector<std::pair<Id, Id>> val_pairs;      // (anchor, partner)
    std::size_t train_pair_count = 0;
};

inline ValidationSplit make_validation_split(const InteractionSet& inter, const ColdSplit& split,
                                             double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw ContractViolation("make_validation_split: fraction must lie in [0, 1)");
    ValidationSplit vs;
    vs.train_adj.resize(inter.n_anchors);
    std::vector<std::pair<Id, Id>> pairs;
    for (Id a : split.warm_anchors) {
        vs.train_adj[static_cast<std::size_t>(a)] = inter.adj[static_cast<std::size_t>(a)];
        for (Id p : inter.adj[static_cast<std::size_t>(a)]) pairs.emplace_back(a, p);
    }
    std::size_t target =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pairs.size())));
    if (target > 0) {
        RngStream rng(RngStream::mix(seed, 0x76616c6964ULL));
        rng.shuffle(pairs);
        for (const auto& [a, p] : pairs) {
            if (vs.val_pairs.size() >= target) break;
            std::vector<Id>& adj = vs.train_adj[static_cast<std::size_t>(a)];
            if (adj.size() < 3) continue;  // keep at least two training pairs per anchor
            adj.erase(std::lower_bound(adj.begin(), adj.end(), p));
            vs.val_pairs.emplace_back(a, p);
        }
    }
    for (const auto& adj : vs.train_adj) vs.train_pair_count += adj.size();
    return vs;
}

// Recall@k over the held-out warm pairs, scored with the full warm-path user
// vector against every partner; an anchor's remaining training positives are
// struck from the candidate pool.
inline double validation_recall(const ModelParams& p, const ValidationSplit& vs,
                                const DocMatrix& docs, std::size_t val_k, std::size_t h_max,
                                std::size_t iters, std::uint64_t seed) {
    if (vs.val_pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::map<Id, std::vector<Id>> by_anchor;
    for (const auto& [a, pr] : vs.val_pairs) by_anchor[a].push_back(pr);
    for (auto& [a, held] : by_anchor) std::sort(held.begin(), held.end());

    const Tensor2& emb = p.value("partner_emb");
    std::size_t k = std::min(val_k, p.dims.n_partners);
    double total = 0.0;
    for (const auto& [a, held] : by_anchor) {
        std::vector<Id> hist = vs.train_adj[static_cast<std::size_t>(a)];
        if (hist.size() > h_max) {
            RngStream r(RngStream::mix(seed, static_cast<std::uint64_t>(a)));
            r.shuffle(hist);
            hist.resize(h_max);
            std::sort(hist.begin(), hist.end());
        }
        UserVector uv = user_forward(p, docs.rows[static_cast<std::size_t>(a)], hist, iters);
        std::vector<double> scores = score_all(uv.u, emb);
        for (Id tp : vs.train_adj[static_cast<std::size_t>(a)])
            scores[static_cast<std::size_t>(tp)] = -std::numeric_limits<double>::infinity();
        std::vector<Id> order = rank_order(scores);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < k; ++i)
            if (std::binary_search(held.begin(), held.end(), order[i])) ++hits;
        total += static_cast<double>(hits) / static_cast<double>(held.size());
    }
    return total / static_cast<double>(by_anchor.size());
}

// --------------------------------------------------------------------------
// Training loop
// --------------------------------------------------------------------------
struct EpochLog {
    std::size_t epoch = 0;
    double loss_joint = 0.0;
    double loss_softmax = 0.0;
    double loss_mimic = 0.0;
    double val_recall = 0.0;  // NaN when no validation pairs exist
    bool improved = false;
};

struct TrainResult {
    ModelParams params;  // best-validation snapshot
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    std::size_t epochs_run = 0;
    std::vector<EpochLog> history;
};

inline TrainResult train(const TrainConfig& cfg, const InteractionSet& inter,
                         const DocMatrix& docs, const ColdSplit& split, std::size_t vocab_size,
                         std::ostream* progress = nullptr) {
    cfg.validate();
    if (docs.rows.size() != static_cast<std::size_t>(inter.n_anchors))
        throw DataError("train: document matrix covers " + std::to_string(docs.rows.size()) +
                        " anchors, interactions cover " + std::to_string(inter.n_anchors));

    ModelDims dims{cfg.d, cfg.k_capsules, cfg.d_a, cfg.hidden_width(), vocab_size,
                   static_cast<std::size_t>(inter.n_partners)};
    ModelParams params = ModelParams::init(dims, RngStream::mix(cfg.seed, 0x696e6974ULL));

    ValidationSplit vs = make_validation_split(inter, split, cfg.val_fraction, cfg.seed);
    if (vs.train_pair_count == 0) throw DataError("train: no training interactions after split");
    bool has_val = !vs.val_pairs.empty();
    if (!has_val)
        warn("train: no validation pairs; early stopping disabled, running all epochs");

    // For negative sampling, exclude an anchor's full positive set, the
    // validation holdout included.
    std::vector<std::vector<Id>> full_adj(inter.n_anchors);
    for (Id a : split.warm_anchors)
        full_adj[static_cast<std::size_t>(a)] = inter.adj[static_cast<std::size_t>(a)];

    TrainResult res;
    res.params = params;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t since_improved = 0;

    JointOptions opt;
    opt.lambda_mimic = cfg.lambda_mimic;
    opt.negatives = cfg.negatives;
    opt.iters = cfg.iters;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        BatchStream stream(vs.train_adj, cfg.batch_size, cfg.h_max,
                           RngStream::mix(cfg.seed, epoch), epoch == 1);
        RngStream neg_rng(RngStream::mix(RngStream::mix(cfg.seed, 0x6e6567ULL), epoch));
        double sum_joint = 0.0, sum_sm = 0.0, sum_mm = 0.0, examples = 0.0;
        std::size_t batch_idx = 0;
        while (auto batch = stream.next()) {
            ++batch_idx;
            JointResult jr =
                joint_forward_backward(params, *batch, docs, vs.train_adj, opt, neg_rng, &full_adj);
            if (!std::isfinite(jr.loss_joint))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_idx));
            adam_step(params.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
            double n = static_cast<double>(batch->size);
            sum_joint += jr.loss_joint * n;
            sum_sm += jr.loss_softmax * n;
            sum_mm += jr.loss_mimic * n;
            examples += n;
        }
        if (examples == 0.0)
            throw DataError("train: no usable training examples (all anchors single-interaction?)");

        EpochLog log;
        log.epoch = epoch;
        log.loss_joint = sum_joint / examples;
        log.loss_softmax = sum_sm / examples;
        log.loss_mimic = sum_mm / examples;
        log.val_recall = validation_recall(params, vs, docs, cfg.val_k, cfg.h_max, cfg.iters,
                                           RngStream::mix(cfg.seed, 0x76726563ULL));
        log.improved = has_val && log.val_recall > best;
        res.epochs_run = epoch;

        if (log.improved) {
            best = log.val_recall;
            res.params = params;
            res.best_epoch = epoch;
            res.best_val = best;
            since_improved = 0;
        } else {
            ++since_improved;
        }
        res.history.push_back(log);
        if (progress) {
            (*progress) << "epoch " << epoch << "  loss " << log.loss_joint << "  (softmax "
                        << log.loss_softmax << ", mimic " << log.loss_mimic << ")";
            if (has_val)
                (*progress) << "  val_recall@" << std::min(cfg.val_k, dims.n_partners) << " "
                            << log.val_recall << (log.improved ? "  *" : "");
            (*progress) << "\n" << std::flush;
        }
        if (has_val && since_improved >= cfg.patience) break;
    }

    if (!has_val || res.best_epoch == 0) {
        res.params = std::move(params);
        res.best_epoch = res.epochs_run;
        res.best_val = res.history.empty() ? 0.0 : res.history.back().val_recall;
    }
    return res;
}

// --------------------------------------------------------------------------
// Checkpoint: magic "JTCN", u16 version, length-prefixed UTF-8 metadata
// (config, vocabulary, id maps, training state), then named tensors.
// --------------------------------------------------------------------------
struct Checkpoint {
    std::uint16_t version = 1;
    TrainConfig config;
    Vocabulary vocab;
    IdMaps ids;
    std::map<std::string, Tensor2> tensors;  // trainable parameters plus "beta"
    double best_val = 0.0;
    std::size_t best_epoch = 0;

    ModelParams to_params() const {
        ModelParams p;
        p.dims = ModelDims{config.d, config.k_capsules, config.d_a,
                           config.d_h == 0 ? config.d : config.d_h, vocab.terms.size(),
                           ids.partner_names.size()};
        for (const auto& [name, t] : tensors) {
            if (name == "beta") {
                p.beta = t;
                continue;
            }
            p.store.create(name, t.rows, t.cols).v = t.v;
        }
        if (p.beta.rows != config.k_capsules || p.beta.cols != 1)
            throw DataError("checkpoint: missing or misshapen beta tensor");
        return p;
    }

    static Checkpoint from_training(const TrainConfig& cfg, const Vocabulary& vocab,
                                    const IdMaps& ids, const TrainResult& tr) {
        Checkpoint c;
        c.config = cfg;
        c.vocab = vocab;
        c.ids = ids;
        c.best_val = tr.best_val;
        c.best_epoch = tr.best_epoch;
        for (const auto& [name, e] : tr.params.store.entries()) c.tensors[name] = e.value;
        c.tensors["beta"] = tr.params.beta;
        return c;
    }
};

namespace detail {

inline std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "d=" << c.d << "\nk_capsules=" << c.k_capsules << "\nd_a=" << c.d_a
       << "\nd_h=" << c.d_h << "\niters=" << c.iters << "\nh_max=" << c.h_max
       << "\nbatch_size=" << c.batch_size << "\nlr=" << format_double(c.lr)
       << "\nbeta1=" << format_double(c.beta1) << "\nbeta2=" << format_double(c.beta2)
       << "\neps=" << format_double(c.eps) << "\npatience=" << c.patience
       << "\nmax_epochs=" << c.max_epochs << "\nlambda_mimic=" << format_double(c.lambda_mimic)
       << "\nnegatives=" << c.negatives << "\nseed=" << c.seed
       << "\norientation=" << c.orientation << "\nval_fraction=" << format_double(c.val_fraction)
       << "\nval_k=" << c.val_k << "\n";
    return os.str();
}

inline bool apply_config_kv(TrainConfig& c, const std::string& key, const std::string& value) {
    auto u64 = [&value] { return static_cast<std::uint64_t>(std::stoull(value)); };
    auto sz = [&value] { return static_cast<std::size_t>(std::stoull(value)); };
    auto f64 = [&value] { return std::stod(value); };
    if (key == "d") c.d = sz();
    else if (key == "k_capsules") c.k_capsules = sz();
    else if (key == "d_a") c.d_a = sz();
    else if (key == "d_h") c.d_h = sz();
    else if (key == "iters") c.iters = sz();
    else if (key == "h_max") c.h_max = sz();
    else if (key == "batch_size") c.batch_size = sz();
    else if (key == "lr") c.lr = f64();
    else if (key == "beta1") c.beta1 = f64();
    else if (key == "beta2") c.beta2 = f64();
    else if (key == "eps") c.eps = f64();
    else if (key == "patience") c.patience = sz();
    else if (key == "max_epochs") c.max_epochs = sz();
    else if (key == "lambda_mimic") c.lambda_mimic = f64();
    else if (key == "negatives") c.negatives = sz();
    else if (key == "seed") c.seed = u64();
    else if (key == "orientation") c.orientation = value;
    else if (key == "val_fraction") c.val_fraction = f64();
    else if (key == "val_k") c.val_k = sz();
    else return false;
    return true;
}

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw DataError(std::string("truncated checkpoint (reading ") + what + ")");
}

inline void write_u16(std::ostream& out, std::uint16_t x) {
    unsigned char b[2] = {static_cast<unsigned char>(x & 0xff),
                          static_cast<unsigned char>(x >> 8)};
    write_bytes(out, b, 2);
}

inline std::uint16_t read_u16(std::istream& in, const char* what) {
    unsigned char b[2];
    read_bytes(in, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (static_cast<std::uint16_t>(b[1]) << 8));
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ostringstream meta;
    meta << "[config]\n" << detail::config_to_text(ckpt.config);
    meta << "[state]\nbest_epoch=" << ckpt.best_epoch
         << "\nbest_val=" << format_double(ckpt.best_val) << "\n";
    meta << "[vocab]\ncount=" << ckpt.vocab.terms.size() << "\n";
    for (std::size_t i = 0; i < ckpt.vocab.terms.size(); ++i)
        meta << ckpt.vocab.terms[i] << '\t' << format_double(ckpt.vocab.idf[i]) << '\n';
    meta << "[anchors]\ncount=" << ckpt.ids.anchor_names.size() << "\n";
    for (const std::string& n : ckpt.ids.anchor_names) meta << n << '\n';
    meta << "[partners]\ncount=" << ckpt.ids.partner_names.size() << "\n";
    for (const std::string& n : ckpt.ids.partner_names) meta << n << '\n';
    std::string m = meta.str();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("JTCN", 4);
    detail::write_u16(out, ckpt.version);
    detail::write_u32(out, static_cast<std::uint32_t>(m.size()));
    detail::write_bytes(out, m.data(), m.size());
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        detail::write_bytes(out, name.data(), name.size());
        detail::write_u32(out, static_cast<std::uint32_t>(t.rows));
        detail::write_u32(out, static_cast<std::uint32_t>(t.cols));
        for (double x : t.v) detail::write_f64(out, x);
    }
    if (!out) throw DataError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    detail::read_bytes(in, magic, 4, "magic");
    if (std::string(magic, 4) != "JTCN")
        throw DataError(path + " is not a checkpoint file (bad magic)");
    Checkpoint ckpt;
    ckpt.version = detail::read_u16(in, "version");
    if (ckpt.version != 1)
        throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version) +
                        " (this build reads version 1)");
    std::uint32_t mlen = detail::read_u32(in, "metadata length");
    std::string meta(mlen, '\0');
    detail::read_bytes(in, meta.data(), mlen, "metadata");

    std::istringstream ms(meta);
    std::string line, section;
    std::size_t pending = 0;
    std::vector<std::string>* name_sink = nullptr;
    while (std::getline(ms, line)) {
        if (!line.empty() && line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            pending = 0;
            name_sink = section == "anchors"    ? &ckpt.ids.anchor_names
                        : section == "partners" ? &ckpt.ids.partner_names
                                                : nullptr;
            continue;
        }
        if (section == "config") {
            auto eq = line.find('=');
            if (eq == std::string::npos) throw DataError("checkpoint: malformed config line");
            detail::apply_config_kv(ckpt.config, line.substr(0, eq), line.substr(eq + 1));
        } else if (section == "state") {
            auto eq = line.find('=');
            if (eq == std::string::npos) throw DataError("checkpoint: malformed state line");
            std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            if (key == "best_epoch") ckpt.best_epoch = std::stoull(value);
            else if (key == "best_val") ckpt.best_val = std::stod(value);
        } else if (section == "vocab") {
            if (line.rfind("count=", 0) == 0) {
                pending = std::stoull(line.substr(6));
                continue;
            }
            auto tab = line.find('\t');
            if (tab == std::string::npos) throw DataError("checkpoint: malformed vocab line");
            ckpt.vocab.terms.push_back(line.substr(0, tab));
            ckpt.vocab.idf.push_back(std::stod(line.substr(tab + 1)));
        } else if (name_sink) {
            if (line.rfind("count=", 0) == 0) {
                pending = std::stoull(line.substr(6));
                continue;
            }
            name_sink->push_back(line);
        }
    }
    (void)pending;
    if (ckpt.vocab.terms.empty()) throw DataError("checkpoint: empty vocabulary section");
    ckpt.vocab.rebuild_index();
    ckpt.ids.rebuild_index();

    std::uint32_t count = detail::read_u32(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = detail::read_u32(in, "tensor name length");
        std::string name(nlen, '\0');
        detail::read_bytes(in, name.data(), nlen, "tensor name");
        std::uint32_t rows = detail::read_u32(in, "tensor rows");
        std::uint32_t cols = detail::read_u32(in, "tensor cols");
        Tensor2 t(rows, cols);
        for (double& x : t.v) x = detail::read_f64(in, "tensor data");
        ckpt.tensors[name] = std::move(t);
    }
    return ckpt;
}

}  // namespace jtcn
