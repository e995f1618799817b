#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jtcn/jtcn.hpp"

namespace {

// flag > config file > built-in default: flag assignments are replayed after
// the config file loads.
struct Overrides {
    std::vector<std::pair<const CLI::Option*, std::function<void()>>> items;
    void add(const CLI::Option* opt, std::function<void()> fn) {
        items.emplace_back(opt, std::move(fn));
    }
    void apply() const {
        for (const auto& [opt, fn] : items)
            if (opt->count() > 0) fn();
    }
};

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw jtcn::DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint-training capsule network for cold-start recommendation"};
    app.require_subcommand(1);
    app.fallthrough(true);

    jtcn::RunConfig cfg;
    Overrides ov;

    std::string config_path;
    auto* config_opt = app.add_option("--config", config_path, "flat key = value config file");
    std::string workdir_v;
    ov.add(app.add_option("--workdir", workdir_v, "artifact directory (default workdir)"),
           [&] { cfg.workdir = workdir_v; });
    std::uint64_t seed_v = 0;
    ov.add(app.add_option("--seed", seed_v, "master seed"), [&] { cfg.train.seed = seed_v; });

    std::string interactions_v, documents_v, orientation_v;
    auto add_data_opts = [&](CLI::App* cmd) {
        ov.add(cmd->add_option("--interactions", interactions_v, "anchor-partner pairs (TSV)"),
               [&] { cfg.interactions = interactions_v; });
        ov.add(cmd->add_option("--documents", documents_v, "anchor documents (TSV)"),
               [&] { cfg.documents = documents_v; });
        ov.add(cmd->add_option("--orientation", orientation_v, "item-cold or user-cold")
                   ->check(CLI::IsMember({"item-cold", "user-cold"})),
               [&] { cfg.train.orientation = orientation_v; });
    };

    auto* prepare = app.add_subcommand("prepare", "build vocabulary, tf-idf rows, and id maps");
    add_data_opts(prepare);
    std::size_t top_n_v = 0;
    ov.add(prepare->add_option("--top-n", top_n_v, "vocabulary size"),
           [&] { cfg.top_n = top_n_v; });

    auto* split = app.add_subcommand("split", "hold out a seeded fraction of anchors as cold");
    add_data_opts(split);
    double ratio_v = 0.0;
    ov.add(split->add_option("--ratio", ratio_v, "cold fraction in (0,1)"),
           [&] { cfg.ratio = ratio_v; });

    auto* train = app.add_subcommand("train", "train and write the best checkpoint");
    add_data_opts(train);
    std::size_t d_v = 0, k_v = 0, da_v = 0, dh_v = 0, iters_v = 0, hmax_v = 0, bs_v = 0;
    std::size_t patience_v = 0, max_epochs_v = 0, negatives_v = 0, val_k_v = 0;
    double lr_v = 0.0, lambda_v = 0.0, val_fraction_v = 0.0;
    ov.add(train->add_option("--d", d_v, "latent factors"), [&] { cfg.train.d = d_v; });
    ov.add(train->add_option("--k-capsules", k_v, "preference capsules"),
           [&] { cfg.train.k_capsules = k_v; });
    ov.add(train->add_option("--d-a", da_v, "attention hidden width"),
           [&] { cfg.train.d_a = da_v; });
    ov.add(train->add_option("--d-h", dh_v, "tower hidden width (0 = d)"),
           [&] { cfg.train.d_h = dh_v; });
    ov.add(train->add_option("--iters", iters_v, "routing iterations"),
           [&] { cfg.train.iters = iters_v; });
    ov.add(train->add_option("--h-max", hmax_v, "history cap per example"),
           [&] { cfg.train.h_max = hmax_v; });
    ov.add(train->add_option("--lr", lr_v, "learning rate"), [&] { cfg.train.lr = lr_v; });
    ov.add(train->add_option("--patience", patience_v, "early-stopping patience"),
           [&] { cfg.train.patience = patience_v; });
    ov.add(train->add_option("--batch-size", bs_v, "examples per step"),
           [&] { cfg.train.batch_size = bs_v; });
    ov.add(train->add_option("--negatives", negatives_v, "sampled negatives per example"),
           [&] { cfg.train.negatives = negatives_v; });
    ov.add(train->add_option("--lambda-mimic", lambda_v, "mimic loss weight"),
           [&] { cfg.train.lambda_mimic = lambda_v; });
    ov.add(train->add_option("--max-epochs", max_epochs_v, "epoch cap"),
           [&] { cfg.train.max_epochs = max_epochs_v; });
    ov.add(train->add_option("--val-fraction", val_fraction_v, "warm pairs held out"),
           [&] { cfg.train.val_fraction = val_fraction_v; });
    ov.add(train->add_option("--val-k", val_k_v, "validation recall cutoff"),
           [&] { cfg.train.val_k = val_k_v; });

    auto* eval = app.add_subcommand("eval", "cold-start ranking metrics");
    add_data_opts(eval);
    std::vector<std::size_t> at_v;
    ov.add(eval->add_option("--at", at_v, "metric cutoff K (repeatable)"),
           [&] { cfg.at = at_v; });
    auto* with_knn_opt = eval->add_flag("--with-knn", "also score the content-KNN baseline");
    ov.add(with_knn_opt, [&] { cfg.with_knn = true; });
    std::size_t knn_nb_v = 0, threads_v = 0;
    ov.add(eval->add_option("--knn-neighbors", knn_nb_v, "KNN neighborhood size"),
           [&] { cfg.knn_neighbors = knn_nb_v; });
    ov.add(eval->add_option("--threads", threads_v, "evaluation threads (0 = auto)"),
           [&] { cfg.threads = threads_v; });

    auto* recommend = app.add_subcommand("recommend", "rank partners for an ad-hoc document");
    std::string text_v, doc_file_v;
    auto* text_opt = recommend->add_option("--text", text_v, "document text");
    auto* doc_file_opt = recommend->add_option("--doc-file", doc_file_v, "file with document text");
    std::size_t top_k_v = 0;
    ov.add(recommend->add_option("--top-k", top_k_v, "list length"),
           [&] { cfg.top_k = top_k_v; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (config_opt->count() > 0) jtcn::load_config_file(cfg, config_path);
        ov.apply();

        if (app.got_subcommand(prepare)) {
            jtcn::run_prepare(cfg, std::cout);
        } else if (app.got_subcommand(split)) {
            jtcn::run_split(cfg, std::cout);
        } else if (app.got_subcommand(train)) {
            jtcn::run_train(cfg, std::cout);
        } else if (app.got_subcommand(eval)) {
            jtcn::run_eval(cfg, std::cout);
        } else if (app.got_subcommand(recommend)) {
            if ((text_opt->count() > 0) == (doc_file_opt->count() > 0))
                throw jtcn::ContractViolation(
                    "recommend: exactly one of --text or --doc-file is required");
            std::string text = text_opt->count() > 0 ? text_v : read_text_file(doc_file_v);
            jtcn::run_recommend(cfg, text, std::cout);
        }
    } catch (const jtcn::ContractViolation& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const jtcn::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const jtcn::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
