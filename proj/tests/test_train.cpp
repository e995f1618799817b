#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jtcn/train.hpp"
#include "support/synthetic.hpp"

using namespace jtcn;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

testsup::Bundle small_bundle() {
    testsup::SyntheticSpec sp;
    sp.clusters = 2;
    sp.anchors = 20;
    sp.partners = 10;
    sp.words_per_cluster = 6;
    sp.doc_len = 10;
    sp.min_inter = 3;
    sp.max_inter = 5;
    sp.seed = 9;
    return testsup::make_bundle(sp);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.d = 8;
    cfg.k_capsules = 2;
    cfg.d_a = 4;
    cfg.iters = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    cfg.max_epochs = 5;
    cfg.negatives = 3;
    cfg.val_fraction = 0.1;
    cfg.val_k = 10;
    cfg.seed = 21;
    return cfg;
}

}  // namespace

TEST(ValidationSplit, HoldsOutTheRequestedFractionWithoutDrainingAnchors) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    ValidationSplit vs = make_validation_split(b.inter, split, 0.15, 3);
    std::size_t warm_pairs = 0;
    for (Id a : split.warm_anchors) warm_pairs += b.inter.adj[static_cast<std::size_t>(a)].size();
    EXPECT_EQ(vs.val_pairs.size(),
              static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(warm_pairs))));
    EXPECT_EQ(vs.train_pair_count + vs.val_pairs.size(), warm_pairs);
    for (Id a : split.warm_anchors)
        EXPECT_GE(vs.train_adj[static_cast<std::size_t>(a)].size(), 2u);
    for (Id a : split.cold_anchors)
        EXPECT_TRUE(vs.train_adj[static_cast<std::size_t>(a)].empty());
    for (const auto& [a, p] : vs.val_pairs) {
        const auto& adj = vs.train_adj[static_cast<std::size_t>(a)];
        EXPECT_FALSE(std::binary_search(adj.begin(), adj.end(), p));
        EXPECT_TRUE(b.inter.has_pair(a, p));
    }

    ValidationSplit again = make_validation_split(b.inter, split, 0.15, 3);
    EXPECT_EQ(vs.val_pairs, again.val_pairs);
    EXPECT_THROW(make_validation_split(b.inter, split, 1.0, 3), ContractViolation);
    EXPECT_THROW(make_validation_split(b.inter, split, -0.1, 3), ContractViolation);
}

TEST(ValidationSplit, TwoInteractionAnchorsDonateNothing) {
    InteractionSet s;
    s.n_anchors = 3;
    s.n_partners = 4;
    s.adj = {{0, 1}, {1, 2}, {2, 3}};
    s.pair_count = 6;
    ColdSplit split;
    split.warm_anchors = {0, 1, 2};
    ValidationSplit vs = make_validation_split(s, split, 0.4, 7);
    EXPECT_TRUE(vs.val_pairs.empty());  // every anchor pinned at two pairs
    EXPECT_EQ(vs.train_pair_count, 6u);
}

TEST(ValidationRecall, NanWithoutPairsAndPerfectWhenKCoversAll) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    ValidationSplit vs = make_validation_split(b.inter, split, 0.15, 3);
    ModelDims dims{.d = 8,
                   .k = 2,
                   .d_a = 4,
                   .d_h = 8,
                   .vocab = b.vocab.terms.size(),
                   .n_partners = static_cast<std::size_t>(b.inter.n_partners)};
    ModelParams p = ModelParams::init(dims, 3);

    ValidationSplit none = vs;
    none.val_pairs.clear();
    EXPECT_TRUE(std::isnan(validation_recall(p, none, b.docs, 10, 100, 2, 1)));

    // k >= n_partners ranks every partner, so each held-out pair is found
    double r = validation_recall(p, vs, b.docs, 100, 100, 2, 1);
    EXPECT_DOUBLE_EQ(r, 1.0);
    double r10 = validation_recall(p, vs, b.docs, 10, 100, 2, 1);
    EXPECT_GE(r10, 0.0);
    EXPECT_LE(r10, 1.0);
}

TEST(Train, LossFallsAndValidationSaturatesOnSeparableData) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
    ASSERT_EQ(res.history.size(), 5u);
    for (std::size_t e = 1; e < res.history.size(); ++e)
        EXPECT_LT(res.history[e].loss_joint, res.history[e - 1].loss_joint)
            << "epoch " << e + 1 << " did not improve on epoch " << e;
    EXPECT_DOUBLE_EQ(res.history.back().val_recall, 1.0);
    EXPECT_DOUBLE_EQ(res.best_val, 1.0);
}

TEST(Train, PatienceOneStopsAtTheSecondEpoch) {
    // val_k covers the whole catalogue, so recall pins at 1.0 from epoch 1
    // and epoch 2 cannot improve on it.
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.patience = 1;
    cfg.val_k = 100;
    cfg.max_epochs = 50;
    TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
    EXPECT_EQ(res.epochs_run, 2u);
    EXPECT_EQ(res.best_epoch, 1u);
    EXPECT_DOUBLE_EQ(res.best_val, 1.0);
}

TEST(Train, BestValEqualsTheHistoryMaximum) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.val_k = 3;  // non-degenerate recall
    cfg.max_epochs = 6;
    TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
    double best = 0.0;
    for (const auto& log : res.history) best = std::max(best, log.val_recall);
    EXPECT_DOUBLE_EQ(res.best_val, best);
    EXPECT_EQ(res.history[res.best_epoch - 1].val_recall, best);
}

TEST(Train, ExplodingRateRaisesNumericError) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.lr = 1e200;
    cfg.batch_size = 1;
    cfg.val_fraction = 0.0;
    try {
        train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}

TEST(Train, SameSeedSameCheckpointBytes) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 3;
    std::string pa = tmp_path("jtcn_ck_a.ckpt"), pb = tmp_path("jtcn_ck_b.ckpt");
    for (const auto& [path, tag] : {std::pair{pa, 1}, std::pair{pb, 2}}) {
        TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
        save_checkpoint(Checkpoint::from_training(cfg, b.vocab, b.ids, res), path);
        (void)tag;
    }
    std::string bytes_a = slurp(pa), bytes_b = slurp(pb);
    ASSERT_FALSE(bytes_a.empty());
    EXPECT_EQ(bytes_a, bytes_b);
    std::remove(pa.c_str());
    std::remove(pb.c_str());
}

TEST(Checkpoint, RoundTripIsBitExactAndLoadsBack) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 2;
    cfg.lambda_mimic = 0.25;
    TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
    Checkpoint ck = Checkpoint::from_training(cfg, b.vocab, b.ids, res);
    std::string path = tmp_path("jtcn_ck_rt.ckpt");
    save_checkpoint(ck, path);
    Checkpoint back = load_checkpoint(path);

    EXPECT_EQ(back.version, 1);
    EXPECT_EQ(back.config.d, cfg.d);
    EXPECT_DOUBLE_EQ(back.config.lambda_mimic, 0.25);
    EXPECT_EQ(back.config.orientation, cfg.orientation);
    EXPECT_EQ(back.best_epoch, res.best_epoch);
    EXPECT_DOUBLE_EQ(back.best_val, res.best_val);
    EXPECT_TRUE(back.ids == b.ids);
    ASSERT_EQ(back.vocab.terms, b.vocab.terms);
    for (std::size_t i = 0; i < b.vocab.idf.size(); ++i)
        EXPECT_EQ(back.vocab.idf[i], b.vocab.idf[i]);

    ASSERT_EQ(back.tensors.size(), ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        const Tensor2& u = back.tensors.at(name);
        ASSERT_EQ(u.rows, t.rows) << name;
        ASSERT_EQ(u.cols, t.cols) << name;
        EXPECT_EQ(u.v, t.v) << name;  // bit-exact doubles
    }

    // an identical forward pass through the reloaded parameters
    ModelParams orig = ck.to_params(), loaded = back.to_params();
    std::vector<Id> hist{0, 3, 5};
    UserVector a = user_forward(orig, b.docs.rows[0], hist, cfg.iters);
    UserVector c = user_forward(loaded, b.docs.rows[0], hist, cfg.iters);
    EXPECT_EQ(a.u, c.u);
    std::remove(path.c_str());
}

TEST(Checkpoint, StructuredErrorsOnDamagedFiles) {
    testsup::Bundle b = small_bundle();
    ColdSplit split = cold_split(b.inter, b.docs, 0.2, 5);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 1;
    TrainResult res = train(cfg, b.inter, b.docs, split, b.vocab.terms.size());
    std::string path = tmp_path("jtcn_ck_dmg.ckpt");
    save_checkpoint(Checkpoint::from_training(cfg, b.vocab, b.ids, res), path);
    std::string bytes = slurp(path);

    auto write_bytes = [&](const std::string& s) {
        std::ofstream out(path, std::ios::binary);
        out << s;
    };

    write_bytes(bytes.substr(0, bytes.size() - 7));
    try {
        load_checkpoint(path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write_bytes(wrong_magic);
    try {
        load_checkpoint(path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("not a checkpoint"), std::string::npos);
    }

    std::string future = bytes;
    future[4] = 9;  // little-endian u16 version right after the magic
    write_bytes(future);
    try {
        load_checkpoint(path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported checkpoint version"), std::string::npos);
    }

    EXPECT_THROW(load_checkpoint(tmp_path("jtcn_no_such.ckpt")), DataError);
    std::remove(path.c_str());
}

TEST(ConfigText, KeyValueParsingCoversEveryField) {
    TrainConfig cfg;
    EXPECT_TRUE(detail::apply_config_kv(cfg, "d", "16"));
    EXPECT_TRUE(detail::apply_config_kv(cfg, "lr", "0.25"));
    EXPECT_TRUE(detail::apply_config_kv(cfg, "orientation", "user-cold"));
    EXPECT_TRUE(detail::apply_config_kv(cfg, "negatives", "7"));
    EXPECT_EQ(cfg.d, 16u);
    EXPECT_DOUBLE_EQ(cfg.lr, 0.25);
    EXPECT_EQ(cfg.orientation, "user-cold");
    EXPECT_EQ(cfg.negatives, 7u);
    EXPECT_FALSE(detail::apply_config_kv(cfg, "no_such_key", "1"));

    // the serialized form parses back to the same configuration
    TrainConfig parsed;
    std::istringstream text(detail::config_to_text(cfg));
    std::string line;
    while (std::getline(text, line)) {
        auto eq = line.find('=');
        ASSERT_NE(eq, std::string::npos);
        EXPECT_TRUE(detail::apply_config_kv(parsed, line.substr(0, eq), line.substr(eq + 1)));
    }
    EXPECT_EQ(parsed.d, cfg.d);
    EXPECT_DOUBLE_EQ(parsed.lr, cfg.lr);
    EXPECT_EQ(parsed.orientation, cfg.orientation);
    EXPECT_DOUBLE_EQ(parsed.val_fraction, cfg.val_fraction);
}

TEST(ConfigText, ValidateRejectsBadFields) {
    TrainConfig cfg;
    cfg.lr = 0.0;
    EXPECT_THROW(cfg.validate(), ContractViolation);
    cfg = TrainConfig{};
    cfg.orientation = "sideways";
    EXPECT_THROW(cfg.validate(), ContractViolation);
    cfg = TrainConfig{};
    cfg.val_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), ContractViolation);
}
