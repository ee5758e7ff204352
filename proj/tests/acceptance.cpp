// Acceptance gate: ten criteria, one [PASS]/[FAIL] line each with the
// measured values and the pinned thresholds. Exits nonzero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "daer/align.hpp"
#include "daer/bench.hpp"
#include "daer/datagen.hpp"
#include "daer/ers.hpp"
#include "daer/hier_index.hpp"
#include "daer/mcts.hpp"
#include "daer/rng.hpp"
#include "daer/trainer.hpp"

using namespace daer;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) {
    char buf[768];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Mat random_mat(std::size_t rows, std::size_t cols, Rng& rng) {
    Mat m(rows, cols);
    for (auto& x : m.data) x = rng.normal();
    return m;
}

align::ModalEmbedding random_embedding(std::size_t dim, Rng& rng) {
    std::vector<double> v = datagen::random_unit(dim, rng);
    return {std::move(v), true};
}

// ---- criterion 1: numerical core ----

Outcome criterion1() {
    Rng rng(mix_seed(11, stream::init, 0));
    double max_row = 0.0, max_oracle = 0.0;

    for (int cse = 0; cse < 100; ++cse) {
        const std::size_t t = 1 + rng.index(6);
        const std::size_t n = 1 + rng.index(8);
        const std::size_t d = 1 + rng.index(16);
        const Mat ft = random_mat(t, d, rng);
        const Mat f3 = random_mat(n, d, rng);
        const align::ProjectionSet w = align::ProjectionSet::random(d, rng);
        const align::Projected p = align::project_qkv(ft, f3, w);

        auto proj_err = [&](const Mat& got, const Mat& in, const Mat& weight) {
            for (std::size_t i = 0; i < got.rows; ++i)
                for (std::size_t j = 0; j < got.cols; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < in.cols; ++k) acc += in.at(i, k) * weight.at(k, j);
                    max_oracle = std::max(max_oracle, std::abs(got.at(i, j) - acc));
                }
        };
        proj_err(p.q_text, ft, w.w_q);
        proj_err(p.k_3d, f3, w.w_k_3d);
        proj_err(p.v_3d, f3, w.w_v_3d);
        proj_err(p.v_text, ft, w.w_v_text);

        const align::AttentionState st = align::initial_attention(p.q_text, p.k_3d);
        const double inv = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < t; ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) dot += p.q_text.at(i, k) * p.k_3d.at(j, k);
                max_oracle = std::max(max_oracle, std::abs(st.logits.at(i, j) - dot * inv));
                row_sum += st.attention.at(i, j);
            }
            max_row = std::max(max_row, std::abs(row_sum - 1.0));
        }

        const align::Aggregated agg = align::aggregate(st, p.v_3d, p.v_text);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) acc += st.attention.at(i, k) * p.v_3d.at(k, j);
                max_oracle = std::max(max_oracle, std::abs(agg.z_text.at(i, j) - acc));
            }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < t; ++i) acc += st.attention.at(i, j) * p.v_text.at(i, c);
                max_oracle = std::max(max_oracle, std::abs(agg.z_3d.at(j, c) - acc));
            }
    }

    // Analytic InfoNCE gradients against central finite differences.
    double max_rel = 0.0;
    const double h = 1e-5;
    for (int cse = 0; cse < 100; ++cse) {
        const std::size_t b = 2 + rng.index(7);
        const std::size_t dp = 2 + rng.index(15);
        std::vector<align::ModalEmbedding> et, e3;
        for (std::size_t i = 0; i < b; ++i) {
            et.push_back(random_embedding(dp, rng));
            e3.push_back(random_embedding(dp, rng));
        }
        const double tau = 0.05 + 0.15 * rng.next_double();
        const align::LossResult lr = align::infonce_bidirectional(et, e3, {tau});

        auto fd_rel = [&](std::vector<align::ModalEmbedding>& side, const Mat& grad) {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < dp; ++j) {
                    const double keep = side[i].vec[j];
                    side[i].vec[j] = keep + h;
                    const double up = align::infonce_loss(et, e3, tau);
                    side[i].vec[j] = keep - h;
                    const double dn = align::infonce_loss(et, e3, tau);
                    side[i].vec[j] = keep;
                    const double fd = (up - dn) / (2.0 * h);
                    max_rel = std::max(max_rel,
                                       std::abs(grad.at(i, j) - fd) / std::max(1.0, std::abs(fd)));
                }
        };
        fd_rel(et, lr.d_text);
        fd_rel(e3, lr.d_3d);
        const double up = align::infonce_loss(et, e3, tau + h);
        const double dn = align::infonce_loss(et, e3, tau - h);
        const double fd_tau = (up - dn) / (2.0 * h);
        max_rel = std::max(max_rel, std::abs(lr.d_tau - fd_tau) / std::max(1.0, std::abs(fd_tau)));
    }

    const bool pass = max_row <= 1e-6 && max_oracle <= 1e-12 && max_rel <= 1e-4;
    return {pass, fmt("100 cases each; softmax row-sum err %.2e (<= 1e-6), "
                      "projection/aggregation oracle err %.2e (<= 1e-12), "
                      "InfoNCE FD rel err %.2e (<= 1e-4)",
                      max_row, max_oracle, max_rel)};
}

// ---- shared planted-alignment search fixture ----

struct SearchFixture {
    align::Model model;
    mcts::RewardConfig rcfg;
    align::AttentionState root;
};

SearchFixture make_search_fixture(std::uint64_t s) {
    trainer::SyntheticTaskSpec task;
    task.t_tokens = 2;
    task.n_points = 3;
    task.dim = 8;
    task.concepts = 2;
    task.noise_sigma = 0.25;
    const trainer::SampleBatch batch = trainer::generate_batch(task, 8, mix_seed(s, stream::data, 0));

    Rng rng(mix_seed(s, stream::init, 0));
    SearchFixture fx;
    fx.model.proj = align::ProjectionSet::random(8, rng);
    // Sharper logits separate the candidate actions' rewards.
    for (auto& x : fx.model.proj.w_q.data) x *= 2.5;
    for (auto& x : fx.model.proj.w_k_3d.data) x *= 2.5;
    fx.model.head_text = align::EmbedHead::random(8, 8, rng);
    fx.model.head_3d = align::EmbedHead::random(8, 8, rng);
    fx.model.tau = 0.07;

    fx.rcfg.alpha = 0.5;
    for (std::size_t i = 0; i < batch.size(); ++i)
        fx.rcfg.probe.push_back({batch.f_text[i], batch.f_3d[i]});

    const align::Projected p = align::project_qkv(batch.f_text[0], batch.f_3d[0], fx.model.proj);
    fx.root = align::initial_attention(p.q_text, p.k_3d);
    return fx;
}

mcts::MctsConfig search_config(std::uint64_t s, std::size_t budget) {
    mcts::MctsConfig mc;
    mc.budget = budget;
    mc.rollout_depth = 5;
    mc.delta = 0.1;
    mc.mask_fraction = 0.1;       // 1-position masks on the 2x3 grid
    mc.actions_per_expansion = 12; // covers the whole action space exactly
    mc.max_tree_depth = 3;
    mc.c = 0.01;
    mc.epsilon = 1e-6;
    mc.seed = mix_seed(s, stream::search, 0);
    return mc;
}

// ---- criterion 2: search mechanics ----

Outcome criterion2() {
    // Fuzzed backpropagation on a fixed 3-level tree with oracle bookkeeping.
    mcts::SearchNode root;
    for (int i = 0; i < 4; ++i) {
        mcts::Edge e;
        e.child = std::make_unique<mcts::SearchNode>();
        for (int j = 0; j < 3; ++j) {
            mcts::Edge g;
            g.child = std::make_unique<mcts::SearchNode>();
            e.child->edges.push_back(std::move(g));
        }
        root.edges.push_back(std::move(e));
    }

    std::map<const mcts::Edge*, std::pair<std::uint64_t, double>> edge_oracle;
    std::map<const mcts::SearchNode*, std::uint64_t> node_oracle, terminus_oracle;
    Rng rng(mix_seed(22, stream::init, 0));
    double max_mean_err = 0.0;
    std::size_t order_violations = 0;

    auto scan_order = [&]() {
        // Any unvisited edge must outrank every visited sibling once the node
        // has been visited twice (rewards stay in [-1, 1], c = 1.5).
        auto check_node = [&](const mcts::SearchNode& nd) {
            if (nd.visits < 2) return;
            double min_unvisited = 1e300, max_visited = -1e300;
            bool has_u = false, has_v = false;
            for (const auto& e : nd.edges) {
                const double s = mcts::uct_score(e, nd.visits, 1.5, 1e-6);
                if (e.visits == 0) {
                    has_u = true;
                    min_unvisited = std::min(min_unvisited, s);
                } else {
                    has_v = true;
                    max_visited = std::max(max_visited, s);
                }
            }
            if (has_u && has_v && !(min_unvisited > max_visited)) ++order_violations;
        };
        check_node(root);
        for (const auto& e : root.edges) check_node(*e.child);
    };

    for (int seq = 0; seq < 1000; ++seq) {
        const double r = 2.0 * rng.next_double() - 1.0;
        const std::size_t i = rng.index(4);
        std::vector<mcts::PathStep> path;
        mcts::SearchNode* child = root.edges[i].child.get();
        if (rng.index(2) == 0) {
            path = {{&root, &root.edges[i]}, {child, nullptr}};
            ++terminus_oracle[child];
        } else {
            const std::size_t j = rng.index(3);
            mcts::SearchNode* grand = child->edges[j].child.get();
            path = {{&root, &root.edges[i]}, {child, &child->edges[j]}, {grand, nullptr}};
            ++terminus_oracle[grand];
            auto& g = edge_oracle[&child->edges[j]];
            ++g.first;
            g.second += r;
        }
        auto& o = edge_oracle[&root.edges[i]];
        ++o.first;
        o.second += r;
        mcts::backpropagate(path, r);
        scan_order();
    }

    std::size_t visit_mismatch = 0;
    for (const auto& [edge, stats] : edge_oracle) {
        if (edge->visits != stats.first) ++visit_mismatch;
        max_mean_err = std::max(max_mean_err,
                                std::abs(edge->q_mean - stats.second / double(stats.first)));
    }
    // Visit conservation: every node's count splits into child-edge visits
    // plus the times the node itself ended a path.
    auto conserved = [&](const mcts::SearchNode& nd) {
        std::uint64_t through = 0;
        for (const auto& e : nd.edges) through += e.visits;
        return nd.visits == through + terminus_oracle[&nd];
    };
    if (root.visits != 1000) ++visit_mismatch;
    for (const auto& e : root.edges) {
        if (!conserved(*e.child)) ++visit_mismatch;
        for (const auto& g : e.child->edges)
            if (g.child->visits != terminus_oracle[g.child.get()]) ++visit_mismatch;
    }

    // Identical seeds give bit-identical optimized attention.
    std::size_t determinism_breaks = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const SearchFixture fx = make_search_fixture(s);
        const mcts::RewardEvaluator eval(fx.model, fx.rcfg);
        const mcts::MctsConfig mc = search_config(s, 40);
        const mcts::MctsResult a = mcts::mcts_optimize(fx.root, mc, eval);
        const mcts::MctsResult b = mcts::mcts_optimize(fx.root, mc, eval);
        if (a.state.logits.data != b.state.logits.data ||
            a.state.attention.data != b.state.attention.data)
            ++determinism_breaks;
    }

    const bool pass = max_mean_err <= 1e-9 && visit_mismatch == 0 && order_violations == 0 &&
                      determinism_breaks == 0;
    return {pass, fmt("1000 fuzzed backprops: running-mean err %.2e (<= 1e-9), "
                      "%zu visit-count mismatches, %zu unvisited-first violations; "
                      "%zu/5 determinism breaks",
                      max_mean_err, visit_mismatch, order_violations, determinism_breaks)};
}

// ---- criterion 3: search efficacy vs the depth-1 exhaustive oracle ----

Outcome criterion3() {
    int improved = 0, matched = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const SearchFixture fx = make_search_fixture(s);
        const mcts::RewardEvaluator eval(fx.model, fx.rcfg);
        const mcts::MctsResult res = mcts::mcts_optimize(fx.root, search_config(s, 100), eval);

        const double root_reward = eval.reward(fx.root, fx.root);
        if (res.chosen_reward >= root_reward) ++improved;

        double best = -1e300;
        mcts::ActionSpec best_action;
        for (std::uint32_t pos = 0; pos < 6; ++pos)
            for (const mcts::Sign sign : {mcts::Sign::enhance, mcts::Sign::suppress}) {
                mcts::ActionSpec a;
                a.mask = {{pos / 3, pos % 3}};
                a.sign = sign;
                a.delta = 0.1;
                const double r = eval.reward(fx.root, mcts::apply_action(fx.root, a));
                if (r > best) {
                    best = r;
                    best_action = a;
                }
            }
        if (res.chosen && res.chosen->mask == best_action.mask &&
            res.chosen->sign == best_action.sign)
            ++matched;
    }
    const bool pass = improved >= 45 && matched >= 40;
    return {pass, fmt("budget 100 over 50 seeds: reward >= root in %d/50 (need >= 45), "
                      "oracle-action match %d/50 (need >= 40)",
                      improved, matched)};
}

// ---- criterion 4: reward-ablation ordering ----

Outcome criterion4() {
    trainer::TrainConfig base;
    base.task.n_points = 32;
    base.task.dim = 16;
    base.task.noise_sigma = 0.25;
    base.d_prime = 16;
    base.batch = 16;
    base.phase1_steps = 100;
    base.phase2_steps = 400;
    base.mcts_every = 5;
    base.probe_size = 15;
    base.lr_peak = 0.01;
    base.warmup_steps = 100;
    base.mcts.budget = 100;

    const double alphas[3] = {0.0, 0.5, 1.0};
    double mean[3] = {0.0, 0.0, 0.0};
    for (int a = 0; a < 3; ++a) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            trainer::TrainConfig cfg = base;
            cfg.alpha = alphas[a];
            cfg.seed = seed;
            trainer::Trainer t(cfg);
            t.run();
            mean[a] += t.eval_planted_mass(64);
        }
        mean[a] /= 5.0;
    }
    const bool pass = mean[1] >= 0.99 * mean[0] && mean[1] >= 0.99 * mean[2];
    return {pass, fmt("mean final planted mass over 5 seeds: alpha=0 %.4f, alpha=0.5 %.4f, "
                      "alpha=1 %.4f; need alpha=0.5 >= 0.99x both (chance level 0.25)",
                      mean[0], mean[1], mean[2])};
}

// ---- criterion 5: exhaustive retrieval equals exact knn ----

Outcome criterion5() {
    datagen::Clustered data = datagen::gen_clustered(1000, 8, 10, 0.1, 3);
    hier::BuildConfig bc;
    bc.levels = 2;
    bc.branching = 4;
    bc.leaf_capacity = 16;
    bc.kmeans_iters = 10;
    bc.seed = 3;
    const hier::HierIndex index = hier::build_index(std::move(data.items), bc);
    const datagen::QuerySet qs = datagen::gen_queries(index.items, 200, 0.05, 5);

    ers::ErsConfig ec;
    ec.k = 10;
    ec.push_width = 2;
    ec.re_expand = true;
    ec.i_max = 1000000;

    int equal_sets = 0;
    for (const auto& q : qs.queries) {
        const ers::RetrieveResult got = ers::ers_retrieve(q.data(), index, ec, nullptr);
        const ers::RetrieveResult want = ers::knn_exact(q.data(), index.items, 10);
        std::set<std::uint64_t> gs, ws;
        for (const auto& c : got.items) gs.insert(c.id);
        for (const auto& c : want.items) ws.insert(c.id);
        if (gs == ws) ++equal_sets;
    }
    return {equal_sets == 200,
            fmt("exhaustive frontier (push_width 2, re-expand, i_max 1e6) vs exact knn: "
                "top-10 sets equal on %d/200 queries over 1000 items (need 200/200)",
                equal_sets)};
}

// ---- criterion 6: bandit retrieval beats greedy descent ----

Outcome criterion6() {
    hier::BuildConfig bc;
    bc.levels = 2;
    bc.branching = 2;
    bc.leaf_capacity = 8;

    int greedy_hits = 0, ers_hits = 0, per_instance_ok = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const datagen::Adversarial inst = datagen::gen_adversarial(8, s, bc);
        const std::uint64_t want = ers::knn_exact(inst.query.data(), inst.index.items, 1).items[0].id;

        const int g = ers::greedy_retrieve(inst.query.data(), inst.index, 1).items[0].id == want;
        ers::ErsConfig ec;
        ec.k = 1;
        ec.i_max = 64;
        ec.lambda1 = 0.6;
        ec.lambda2 = 0.2;
        ec.lambda3 = 0.2;
        const int e = ers::ers_retrieve(inst.query.data(), inst.index, ec, nullptr).items[0].id == want;
        greedy_hits += g;
        ers_hits += e;
        if (e >= g) ++per_instance_ok;
    }
    const double gm = greedy_hits / 50.0, em = ers_hits / 50.0;
    const bool pass = gm <= 0.5 && em >= 0.9 && per_instance_ok == 50;
    return {pass, fmt("50 adversarial instances: greedy recall@1 %.2f (need <= 0.5), "
                      "ers recall@1 %.2f (need >= 0.9), ers >= greedy on %d/50 (need 50)",
                      gm, em, per_instance_ok)};
}

// ---- criterion 7: recall and scan efficiency at desk scale ----

Outcome criterion7() {
    datagen::Clustered data = datagen::gen_clustered(100000, 64, 256, 0.08, 21);
    hier::BuildConfig bc;
    bc.levels = 3;
    bc.branching = 8;
    bc.leaf_capacity = 32;
    bc.kmeans_iters = 60;
    bc.seed = 21;
    const hier::HierIndex index = hier::build_index(std::move(data.items), bc);
    const datagen::QuerySet qs = datagen::gen_queries(index.items, 200, 0.05, 22);

    ers::ErsConfig ec;
    ec.k = 10;
    ec.push_width = 8;
    ec.i_max = 30;

    double recall = 0.0, scanned = 0.0;
    for (const auto& q : qs.queries) {
        const ers::RetrieveResult got = ers::ers_retrieve(q.data(), index, ec, nullptr);
        const ers::RetrieveResult want = ers::knn_exact(q.data(), index.items, 10);
        std::set<std::uint64_t> ws;
        for (const auto& c : want.items) ws.insert(c.id);
        std::size_t hit = 0;
        for (const auto& c : got.items) hit += ws.count(c.id);
        recall += static_cast<double>(hit) / 10.0;
        scanned += static_cast<double>(got.items_scored);
    }
    recall /= 200.0;
    const double pct = scanned / 200.0 / 100000.0 * 100.0;
    const bool pass = recall >= 0.9 && pct <= 5.0;
    return {pass, fmt("100000 items, dim 64, 256 clusters, i_max 30: recall@10 %.4f "
                      "(need >= 0.9), items scored %.2f%% (need <= 5%%)",
                      recall, pct)};
}

// ---- criterion 8: index integrity ----

void gather_items(const hier::IndexNode* n, std::vector<std::uint32_t>& out) {
    if (n->is_leaf()) {
        out.insert(out.end(), n->item_idx.begin(), n->item_idx.end());
        return;
    }
    for (const auto& ch : n->children) gather_items(ch.get(), out);
}

Outcome criterion8() {
    Rng rng(mix_seed(88, stream::init, 0));
    std::size_t bad_partition = 0, bad_roundtrip = 0, bad_truncation = 0;
    double max_centroid_err = 0.0;

    for (int b = 0; b < 20; ++b) {
        const std::size_t dims[3] = {4, 8, 16};
        const std::size_t dim = dims[rng.index(3)];
        const std::size_t n = 50 + rng.index(951);
        const std::size_t clusters = 2 + rng.index(11);
        const double noise = 0.05 + 0.2 * rng.next_double();
        hier::BuildConfig bc;
        bc.levels = 1 + rng.index(3);
        bc.branching = 2 + rng.index(5);
        bc.leaf_capacity = 4 + rng.index(29);
        bc.kmeans_iters = 5 + rng.index(16);
        bc.seed = rng.next_u64();

        datagen::Clustered data = datagen::gen_clustered(n, dim, clusters, noise, rng.next_u64());
        const hier::ItemStore keep = data.items;
        const hier::HierIndex index = hier::build_index(std::move(data.items), bc);

        // Leaves partition the store: every item exactly once.
        std::vector<std::uint32_t> members;
        gather_items(index.root.get(), members);
        std::sort(members.begin(), members.end());
        bool ok = members.size() == n;
        for (std::size_t i = 0; ok && i < members.size(); ++i) ok = members[i] == i;
        if (!ok) ++bad_partition;

        // Every centroid is the normalized mean of its subtree's items.
        for (const hier::IndexNode* node : index.nodes) {
            std::vector<std::uint32_t> idx;
            gather_items(node, idx);
            std::vector<double> mean(dim, 0.0);
            for (const std::uint32_t i : idx)
                for (std::size_t c = 0; c < dim; ++c) mean[c] += index.items.vec(i)[c];
            double norm = 0.0;
            for (const double x : mean) norm += x * x;
            norm = std::sqrt(norm);
            for (std::size_t c = 0; c < dim; ++c)
                max_centroid_err =
                    std::max(max_centroid_err, std::abs(node->centroid[c] - mean[c] / norm));
        }

        // serialize -> deserialize -> serialize is bitwise stable.
        const std::vector<std::uint8_t> bytes = hier::serialize_index(index);
        const hier::HierIndex back = hier::deserialize_index(bytes, keep);
        if (hier::serialize_index(back) != bytes) ++bad_roundtrip;
        // Embedding payloads are f32-quantized and renormalized on ingest, so
        // the integrity bar is exact ids/framing plus quantization-level data.
        const std::vector<std::uint8_t> emb = hier::serialize_embeddings(index.items);
        const hier::ItemStore emb_back = hier::deserialize_embeddings(emb);
        if (emb_back.ids != index.items.ids || emb_back.dim != index.items.dim) ++bad_roundtrip;
        double max_emb_err = 0.0;
        for (std::size_t i = 0; i < emb_back.count(); ++i)
            for (std::uint32_t c = 0; c < emb_back.dim; ++c)
                max_emb_err =
                    std::max(max_emb_err, std::abs(emb_back.vec(i)[c] - index.items.vec(i)[c]));
        if (max_emb_err > 1e-6) ++bad_roundtrip;
        const std::vector<std::uint8_t> emb_again = hier::serialize_embeddings(emb_back);
        if (emb_again.size() != emb.size() ||
            !std::equal(emb_again.begin(), emb_again.begin() + 20, emb.begin()))
            ++bad_roundtrip;

        // Truncations decode-fail, never crash.
        for (const std::size_t cut : {std::size_t{1}, bytes.size() / 2, bytes.size() - 1}) {
            std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
            try {
                hier::deserialize_index(part, keep);
                ++bad_truncation;
            } catch (const decode_error&) {
            } catch (...) {
                ++bad_truncation;
            }
        }
    }

    const bool pass = bad_partition == 0 && max_centroid_err <= 1e-6 && bad_roundtrip == 0 &&
                      bad_truncation == 0;
    return {pass, fmt("20 randomized builds: %zu partition faults, centroid err %.2e (<= 1e-6), "
                      "%zu round-trip faults, %zu truncation faults",
                      bad_partition, max_centroid_err, bad_roundtrip, bad_truncation)};
}

// ---- criterion 9: training plumbing ----

Outcome criterion9() {
    // (a) checkpoint round-trip reproduces the next 100 losses exactly.
    trainer::TrainConfig cfg;
    cfg.task.t_tokens = 2;
    cfg.task.n_points = 4;
    cfg.task.dim = 4;
    cfg.task.concepts = 2;
    cfg.d_prime = 4;
    cfg.batch = 4;
    cfg.phase1_steps = 55;
    cfg.phase2_steps = 55;
    cfg.mcts_every = 5;
    cfg.probe_size = 3;
    cfg.lr_peak = 0.01;
    cfg.warmup_steps = 10;
    cfg.mcts.budget = 5;
    cfg.mcts.rollout_depth = 2;
    cfg.mcts.actions_per_expansion = 4;
    cfg.mcts.max_tree_depth = 2;
    cfg.seed = 29;

    trainer::Trainer a(cfg);
    for (int i = 0; i < 10; ++i) a.run_step();
    const std::vector<std::uint8_t> bytes = a.serialize_checkpoint();
    trainer::Trainer b(cfg);
    b.restore_checkpoint(bytes);
    std::size_t loss_mismatch = 0;
    for (int i = 0; i < 100; ++i)
        if (a.run_step().loss != b.run_step().loss) ++loss_mismatch;

    // (b) phase-1 loss decreases: first-decile vs last-decile medians, 5 seeds.
    int learned = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        trainer::TrainConfig lc;
        lc.task.t_tokens = 4;
        lc.task.n_points = 16;
        lc.task.dim = 16;
        lc.task.noise_sigma = 0.25;
        lc.d_prime = 16;
        lc.batch = 16;
        lc.phase1_steps = 100;
        lc.phase2_steps = 0;
        lc.lr_peak = 0.01;
        lc.warmup_steps = 10;
        lc.seed = seed;
        trainer::Trainer t(lc);
        std::vector<double> losses;
        for (int i = 0; i < 100; ++i) losses.push_back(t.run_step().loss);
        auto median10 = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return 0.5 * (v[4] + v[5]);
        };
        const std::vector<double> first(losses.begin(), losses.begin() + 10);
        const std::vector<double> last(losses.end() - 10, losses.end());
        if (median10(last) < median10(first)) ++learned;
    }

    // (c) with search disabled, phase 2 is numerically phase 1: a 120-step
    // phase-1 run and a 60+60 disabled run produce identical losses.
    trainer::TrainConfig x = cfg;
    x.phase1_steps = 120;
    x.phase2_steps = 0;
    x.seed = 31;
    trainer::TrainConfig y = cfg;
    y.phase1_steps = 60;
    y.phase2_steps = 60;
    y.mcts_enabled = false;
    y.seed = 31;
    trainer::Trainer tx(x), ty(y);
    std::size_t phase_mismatch = 0;
    for (int i = 0; i < 120; ++i)
        if (tx.run_step().loss != ty.run_step().loss) ++phase_mismatch;

    const bool pass = loss_mismatch == 0 && learned == 5 && phase_mismatch == 0;
    return {pass, fmt("checkpoint: %zu/100 continued-loss mismatches (need 0); "
                      "phase-1 loss decreased on %d/5 seeds (need 5); "
                      "disabled-search phase 2 vs phase 1: %zu/120 loss mismatches (need 0)",
                      loss_mismatch, learned, phase_mismatch)};
}

// ---- criterion 10: overhead instrumentation ----

Outcome criterion10() {
    trainer::TrainConfig cfg;
    cfg.task.n_points = 32;
    cfg.task.dim = 16;
    cfg.d_prime = 16;
    cfg.batch = 8;
    cfg.phase1_steps = 2;
    cfg.phase2_steps = 8;
    cfg.mcts_every = 2;
    cfg.probe_size = 7;
    cfg.mcts.budget = 50;
    cfg.seed = 10;

    trainer::Trainer on(cfg);
    on.run();
    trainer::TrainConfig off_cfg = cfg;
    off_cfg.mcts_enabled = false;
    trainer::Trainer off(off_cfg);
    off.run();
    const double on_ms = on.total_step_ms() / 10.0;
    const double off_ms = off.total_step_ms() / 10.0;

    bench::ScenarioSpec spec;
    spec.items = 2000;
    spec.dim = 16;
    spec.clusters = 16;
    spec.queries = 30;
    spec.warmup = 5;
    spec.k = 10;
    spec.build.levels = 2;
    spec.build.branching = 4;
    spec.build.leaf_capacity = 16;
    spec.build.kmeans_iters = 15;
    spec.ers.i_max = 32;
    spec.seed = 17;
    const bench::BenchResult result = bench::run_benchmark(spec, [](const std::string&) {});

    bool counters = result.methods.size() == 3;
    double knn_scored = 0.0, ers_nodes = 0.0;
    for (const auto& m : result.methods) {
        if (!(m.latency.qps > 0.0) || !(m.latency.items_scored_mean > 0.0)) counters = false;
        if (m.method == bench::Method::knn) knn_scored = m.latency.items_scored_mean;
        if (m.method == bench::Method::ers) ers_nodes = m.nodes_visited_mean;
    }
    if (knn_scored != 2000.0 || !(ers_nodes > 0.0)) counters = false;

    const bool pass = on.mcts_share() > 0.0 && off.mcts_share() == 0.0 && on_ms > off_ms &&
                      counters;
    return {pass, fmt("search on/off mean step %.2f/%.2f ms (need on > off), search share "
                      "%.3f/%.3f (need > 0 / == 0); bench counters: knn scores %.0f items, "
                      "ers visits %.1f nodes per query",
                      on_ms, off_ms, on.mcts_share(), off.mcts_share(), knn_scored, ers_nodes)};
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        Outcome (*fn)();
        double limit_s;
    };
    const Entry entries[] = {
        {1, "numerical core", criterion1, 10.0},
        {2, "search mechanics", criterion2, 30.0},
        {3, "search efficacy", criterion3, 120.0},
        {4, "reward-ablation ordering", criterion4, 600.0},
        {5, "retrieval oracle equivalence", criterion5, 10.0},
        {6, "adversarial retrieval", criterion6, 60.0},
        {7, "retrieval efficiency at scale", criterion7, 300.0},
        {8, "index integrity", criterion8, 30.0},
        {9, "training plumbing", criterion9, 300.0},
        {10, "overhead instrumentation", criterion10, 600.0},
    };

    int failures = 0;
    for (const Entry& e : entries) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = e.fn();
        } catch (const std::exception& ex) {
            o = {false, std::string("unexpected exception: ") + ex.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs < e.limit_s;
        if (!pass) ++failures;
        std::printf("[%s] criterion %d (%s): %s; %.1fs (limit %.0fs)\n", pass ? "PASS" : "FAIL",
                    e.id, e.name, o.detail.c_str(), secs, e.limit_s);
        std::fflush(stdout);
    }
    if (failures == 0)
        std::printf("all 10 criteria passed\n");
    else
        std::printf("%d of 10 criteria FAILED\n", failures);
    return failures == 0 ? 0 : 1;
}
