#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "jtcn/core.hpp"
#include "jtcn/data.hpp"
#include "jtcn/eval.hpp"
#include "jtcn/model.hpp"
#include "jtcn/text.hpp"
#include "jtcn/train.hpp"

namespace jtcn {

// All artifacts live under one workdir with fixed names so the subcommands
// compose without path plumbing.
struct RunConfig {
    TrainConfig train;
    std::string interactions;
    std::string documents;
    std::string workdir = "workdir";
    std::size_t top_n = 8000;
    double ratio = 0.2;
    std::vector<std::size_t> at = {100};
    bool with_knn = false;
    std::size_t knn_neighbors = 50;
    std::size_t top_k = 10;
    std::size_t threads = 0;  // 0 = hardware concurrency

    std::string path(const std::string& name) const {
        return (std::filesystem::path(workdir) / name).string();
    }
    std::size_t eval_threads() const { return threads == 0 ? default_eval_threads() : threads; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_k_list(const std::string& value) {
    std::vector<std::size_t> ks;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        ks.push_back(std::stoull(item));
    }
    if (ks.empty()) throw ContractViolation("K list is empty: '" + value + "'");
    return ks;
}

inline bool parse_bool(const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ContractViolation("expected a boolean, got '" + value + "'");
}

inline bool apply_run_kv(RunConfig& c, const std::string& key, const std::string& value) {
    if (apply_config_kv(c.train, key, value)) return true;
    if (key == "interactions") c.interactions = value;
    else if (key == "documents") c.documents = value;
    else if (key == "workdir") c.workdir = value;
    else if (key == "top_n") c.top_n = std::stoull(value);
    else if (key == "ratio") c.ratio = std::stod(value);
    else if (key == "at") c.at = parse_k_list(value);
    else if (key == "with_knn") c.with_knn = parse_bool(value);
    else if (key == "knn_neighbors") c.knn_neighbors = std::stoull(value);
    else if (key == "top_k") c.top_k = std::stoull(value);
    else if (key == "threads") c.threads = std::stoull(value);
    else return false;
    return true;
}

}  // namespace detail

// Flat "key = value" text; '#' starts a comment line.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ContractViolation(path + ":" + std::to_string(lineno) +
                                    ": expected 'key = value'");
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        try {
            if (!detail::apply_run_kv(cfg, key, value))
                throw ContractViolation(path + ":" + std::to_string(lineno) +
                                        ": unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ContractViolation(path + ":" + std::to_string(lineno) + ": bad value for '" +
                                    key + "'");
        } catch (const std::out_of_range&) {
            throw ContractViolation(path + ":" + std::to_string(lineno) + ": bad value for '" +
                                    key + "'");
        }
    }
}

inline std::string effective_config_text(const RunConfig& c) {
    std::ostringstream os;
    os << "interactions = " << c.interactions << "\ndocuments = " << c.documents
       << "\nworkdir = " << c.workdir << "\ntop_n = " << c.top_n
       << "\nratio = " << format_double(c.ratio) << "\nat = ";
    for (std::size_t i = 0; i < c.at.size(); ++i) os << (i ? "," : "") << c.at[i];
    os << "\nwith_knn = " << (c.with_knn ? "true" : "false")
       << "\nknn_neighbors = " << c.knn_neighbors << "\ntop_k = " << c.top_k
       << "\nthreads = " << c.threads << "\n";
    std::istringstream ts(detail::config_to_text(c.train));
    std::string line;
    while (std::getline(ts, line)) {
        auto eq = line.find('=');
        os << line.substr(0, eq) << " = " << line.substr(eq + 1) << "\n";
    }
    return os.str();
}

inline void write_effective_config(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.workdir);
    std::ofstream out(cfg.path("effective_config.txt"), std::ios::binary);
    if (!out) throw DataError("cannot write " + cfg.path("effective_config.txt"));
    out << effective_config_text(cfg);
}

// --------------------------------------------------------------------------
// prepare: vocabulary, tf-idf document matrix, id maps
// --------------------------------------------------------------------------
inline void run_prepare(const RunConfig& cfg, std::ostream& out) {
    if (cfg.interactions.empty() || cfg.documents.empty())
        throw ContractViolation("prepare: interactions and documents paths are required");
    if (cfg.top_n < 1) throw ContractViolation("prepare: top_n must be >= 1");
    write_effective_config(cfg);

    IdMaps ids;
    InteractionSet inter =
        load_interactions(cfg.interactions, ids, cfg.train.orientation == "item-cold");
    std::vector<std::string> raw_texts;
    std::size_t unknown = load_documents(cfg.documents, ids, raw_texts);
    if (unknown > 0)
        warn("prepare: " + std::to_string(unknown) +
             " document line(s) referenced anchors absent from the interactions; skipped");

    std::vector<std::vector<std::string>> token_lists(raw_texts.size());
    for (std::size_t i = 0; i < raw_texts.size(); ++i) token_lists[i] = tokenize(raw_texts[i]);
    Vocabulary vocab = build_vocab(token_lists, cfg.top_n);
    DocMatrix docs;
    docs.rows.resize(token_lists.size());
    for (std::size_t i = 0; i < token_lists.size(); ++i)
        docs.rows[i] = vectorize(token_lists[i], vocab);

    save_vocab(vocab, cfg.path("vocab.tsv"));
    save_docs(docs, cfg.path("docs.bin"));
    save_id_maps(ids, cfg.path("id_map.tsv"));
    out << "prepared: " << ids.anchor_names.size() << " anchors, " << ids.partner_names.size()
        << " partners, " << inter.pair_count << " interactions, vocabulary of "
        << vocab.terms.size() << " terms\n";
}

namespace detail {

struct LoadedData {
    IdMaps ids;
    InteractionSet inter;
    Vocabulary vocab;
    DocMatrix docs;
};

inline LoadedData load_prepared(const RunConfig& cfg, const std::string& who) {
    if (!std::filesystem::exists(cfg.path("id_map.tsv")))
        throw DataError(who + ": " + cfg.path("id_map.tsv") +
                        " missing; run the prepare command first");
    LoadedData d;
    d.ids = load_id_maps(cfg.path("id_map.tsv"));
    d.vocab = load_vocab(cfg.path("vocab.tsv"));
    d.docs = load_docs(cfg.path("docs.bin"));
    if (cfg.interactions.empty())
        throw ContractViolation(who + ": interactions path is required");
    IdMaps fresh;
    d.inter = load_interactions(cfg.interactions, fresh, cfg.train.orientation == "item-cold");
    if (!(fresh == d.ids))
        throw DataError(who + ": " + cfg.interactions +
                        " no longer matches id_map.tsv; re-run prepare");
    if (d.docs.rows.size() != d.ids.anchor_names.size())
        throw DataError(who + ": docs.bin does not cover the anchor set; re-run prepare");
    return d;
}

}  // namespace detail

// --------------------------------------------------------------------------
// split: seeded cold-anchor holdout
// --------------------------------------------------------------------------
inline void run_split(const RunConfig& cfg, std::ostream& out) {
    write_effective_config(cfg);
    detail::LoadedData d = detail::load_prepared(cfg, "split");
    ColdSplit split = cold_split(d.inter, d.docs, cfg.ratio, cfg.train.seed);
    save_split(split, d.ids, cfg.path("split.tsv"));
    out << "split: " << split.warm_anchors.size() << " warm anchors, "
        << split.cold_anchors.size() << " cold anchors (ratio " << cfg.ratio << ", seed "
        << cfg.train.seed << ")\n";
}

// --------------------------------------------------------------------------
// train: epoch loop plus best checkpoint
// --------------------------------------------------------------------------
inline std::string run_train(const RunConfig& cfg, std::ostream& out) {
    write_effective_config(cfg);
    detail::LoadedData d = detail::load_prepared(cfg, "train");
    if (!std::filesystem::exists(cfg.path("split.tsv")))
        throw DataError("train: " + cfg.path("split.tsv") +
                        " missing; run the split command first");
    ColdSplit split = load_split(d.ids, cfg.path("split.tsv"));
    TrainResult result = train(cfg.train, d.inter, d.docs, split, d.vocab.terms.size(), &out);
    Checkpoint ckpt = Checkpoint::from_training(cfg.train, d.vocab, d.ids, result);
    std::string path = cfg.path("model.ckpt");
    save_checkpoint(ckpt, path);
    out << "best epoch " << result.best_epoch << " (validation recall "
        << format_double(result.best_val) << "), checkpoint written to " << path << "\n";
    return path;
}

// --------------------------------------------------------------------------
// eval: cold-start ranking metrics
// --------------------------------------------------------------------------
inline RankingResult run_eval(const RunConfig& cfg, std::ostream& out) {
    write_effective_config(cfg);
    detail::LoadedData d = detail::load_prepared(cfg, "eval");
    if (!std::filesystem::exists(cfg.path("model.ckpt")))
        throw DataError("eval: " + cfg.path("model.ckpt") +
                        " missing; run the train command first");
    Checkpoint ckpt = load_checkpoint(cfg.path("model.ckpt"));
    if (!(ckpt.ids == d.ids))
        throw DataError("eval: checkpoint id maps disagree with the workdir; re-run prepare/train");
    if (!std::filesystem::exists(cfg.path("split.tsv")))
        throw DataError("eval: " + cfg.path("split.tsv") + " missing; run the split command first");
    ColdSplit split = load_split(d.ids, cfg.path("split.tsv"));
    ModelParams params = ckpt.to_params();

    EvalConfig ec;
    ec.ks = cfg.at;
    ec.with_knn = cfg.with_knn;
    ec.knn_neighbors = cfg.knn_neighbors;
    ec.threads = cfg.eval_threads();
    RankingResult res = evaluate(params, d.docs, d.inter, split, ec);
    write_metrics(cfg.path("metrics.tsv"), res.rows);
    write_rankings(cfg.path("rankings.tsv"), res, d.ids);
    for (const MetricRow& r : res.rows)
        out << r.metric << "@" << r.k << " = " << format_double(r.value) << "  (over "
            << r.anchor_count << " cold anchors)\n";
    return res;
}

// --------------------------------------------------------------------------
// recommend: ad-hoc cold-start query from free text
// --------------------------------------------------------------------------
inline void run_recommend(const RunConfig& cfg, const std::string& doc_text, std::ostream& out) {
    if (!std::filesystem::exists(cfg.path("model.ckpt")))
        throw DataError("recommend: " + cfg.path("model.ckpt") +
                        " missing; run the train command first");
    Checkpoint ckpt = load_checkpoint(cfg.path("model.ckpt"));
    ModelParams params = ckpt.to_params();

    SparseRow row = vectorize(tokenize(doc_text), ckpt.vocab);
    if (row.empty())
        warn("recommend: empty-document (no in-vocabulary terms); scoring from bias paths");
    ColdEmbed ce = cold_embed(params, row);
    std::vector<double> scores = score_all(ce.u, params.value("partner_emb"));
    std::vector<Id> order = rank_order(scores);

    std::size_t k = cfg.top_k;
    if (k > order.size()) {
        warn("recommend: top_k " + std::to_string(k) + " clamped to partner count " +
             std::to_string(order.size()));
        k = order.size();
    }
    for (std::size_t r = 0; r < k; ++r)
        out << (r + 1) << '\t' << ckpt.ids.partner_names[static_cast<std::size_t>(order[r])]
            << '\t' << format_double(scores[static_cast<std::size_t>(order[r])]) << '\n';
}

}  // namespace jtcn
