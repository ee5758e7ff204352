#include "daer/mcts.hpp"

#include "daer/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace daer::mcts {

align::AttentionState apply_action(const align::AttentionState& s, const ActionSpec& a) {
    if (a.mask.empty()) throw std::invalid_argument("apply_action: empty mask");
    if (!(a.delta > 0.0)) throw std::invalid_argument("apply_action: delta must be positive");
    Mat logits = s.logits;
    const double step = (a.sign == Sign::enhance ? 1.0 : -1.0) * a.delta;
    for (const auto& [r, c] : a.mask) {
        if (r >= logits.rows || c >= logits.cols)
            throw std::invalid_argument("apply_action: mask position out of bounds");
        logits.at(r, c) += step;
    }
    return align::attention_from_logits(std::move(logits));
}

RewardEvaluator::RewardEvaluator(const align::Model& model, const RewardConfig& cfg)
    : model_(model), cfg_(cfg) {
    if (cfg_.probe.empty()) throw config_error("RewardEvaluator: empty probe");
    if (!(cfg_.alpha >= 0.0 && cfg_.alpha <= 1.0))
        throw config_error("RewardEvaluator: alpha must be in [0,1]");
    const double wsum = cfg_.w_r1 + cfg_.w_r5 + cfg_.w_map;
    if (cfg_.w_r1 < 0.0 || cfg_.w_r5 < 0.0 || cfg_.w_map < 0.0 ||
        std::abs(wsum - 1.0) > 1e-9)
        throw config_error("RewardEvaluator: external weights must be >= 0, sum 1");

    {
        const ProbePair& p0 = cfg_.probe[0];
        align::Projected proj = align::project_qkv(p0.f_text, p0.f_3d, model_.proj);
        v_3d_0_ = std::move(proj.v_3d);
        v_text_0_ = std::move(proj.v_text);
    }
    for (std::size_t i = 1; i < cfg_.probe.size(); ++i) {
        const ProbePair& p = cfg_.probe[i];
        align::Projected proj = align::project_qkv(p.f_text, p.f_3d, model_.proj);
        align::AttentionState a0 = align::initial_attention(proj.q_text, proj.k_3d);
        auto [et, e3] = align::embed_pair(model_, a0, proj.v_3d, proj.v_text);
        fixed_text_.push_back(std::move(et));
        fixed_3d_.push_back(std::move(e3));
    }
}

std::vector<align::ModalEmbedding> RewardEvaluator::assemble_text(
    const align::AttentionState& s) const {
    std::vector<align::ModalEmbedding> out;
    out.reserve(1 + fixed_text_.size());
    align::Aggregated agg = align::aggregate(s, v_3d_0_, v_text_0_);
    out.push_back(align::pool_embed(agg.z_text, model_.head_text));
    for (const auto& e : fixed_text_) out.push_back(e);
    return out;
}

std::vector<align::ModalEmbedding> RewardEvaluator::assemble_3d() const {
    return fixed_3d_;
}

double RewardEvaluator::loss_with(const align::AttentionState& s) const {
    align::Aggregated agg = align::aggregate(s, v_3d_0_, v_text_0_);
    std::vector<align::ModalEmbedding> et;
    et.reserve(1 + fixed_text_.size());
    et.push_back(align::pool_embed(agg.z_text, model_.head_text));
    for (const auto& e : fixed_text_) et.push_back(e);
    std::vector<align::ModalEmbedding> e3;
    e3.reserve(1 + fixed_3d_.size());
    e3.push_back(align::pool_embed(agg.z_3d, model_.head_3d));
    for (const auto& e : fixed_3d_) e3.push_back(e);
    return align::infonce_loss(et, e3, model_.tau);
}

double RewardEvaluator::external_with(const align::AttentionState& s) const {
    align::Aggregated agg = align::aggregate(s, v_3d_0_, v_text_0_);
    std::vector<const std::vector<double>*> et, e3;
    align::ModalEmbedding et0 = align::pool_embed(agg.z_text, model_.head_text);
    align::ModalEmbedding e30 = align::pool_embed(agg.z_3d, model_.head_3d);
    et.push_back(&et0.vec);
    e3.push_back(&e30.vec);
    for (const auto& e : fixed_text_) et.push_back(&e.vec);
    for (const auto& e : fixed_3d_) e3.push_back(&e.vec);

    const std::size_t b = et.size();
    const std::size_t d = et0.vec.size();
    double r1 = 0.0, r5 = 0.0, ap = 0.0;
    std::vector<double> sims(b);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j)
            sims[j] = kernels::dot(et[i]->data(), e3[j]->data(), d);
        // rank of the matching item; ties broken by lower index
        std::size_t rank = 1;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            if (sims[j] > sims[i] || (sims[j] == sims[i] && j < i)) ++rank;
        }
        if (rank == 1) r1 += 1.0;
        if (rank <= 5) r5 += 1.0;
        ap += 1.0 / static_cast<double>(rank);
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    return cfg_.w_r1 * r1 * inv_b + cfg_.w_r5 * r5 * inv_b + cfg_.w_map * ap * inv_b;
}

double RewardEvaluator::reward(const align::AttentionState& before,
                               const align::AttentionState& after) const {
    return reward_vs_baseline(loss_with(before), after);
}

double RewardEvaluator::reward_vs_baseline(double loss_before,
                                           const align::AttentionState& after) const {
    const double internal = loss_before - loss_with(after);
    const double external = cfg_.alpha < 1.0 ? external_with(after) : 0.0;
    return cfg_.alpha * internal + (1.0 - cfg_.alpha) * external;
}

double compute_reward(const align::AttentionState& before, const align::AttentionState& after,
                      const RewardConfig& cfg, const align::Model& model) {
    return RewardEvaluator(model, cfg).reward(before, after);
}

double uct_score(const Edge& edge, std::uint64_t parent_visits, double c, double epsilon) {
    const double ln_n = std::log(static_cast<double>(std::max<std::uint64_t>(parent_visits, 1)));
    return edge.q_mean +
           c * std::sqrt(2.0 * ln_n / (static_cast<double>(edge.visits) + epsilon));
}

void backpropagate(std::vector<PathStep>& path, double r_hat) {
    for (PathStep& step : path) {
        step.node->visits += 1;
        if (step.edge != nullptr) {
            step.edge->visits += 1;
            step.edge->q_mean +=
                (r_hat - step.edge->q_mean) / static_cast<double>(step.edge->visits);
        }
    }
}

namespace {

std::size_t mask_size(std::size_t t, std::size_t n, double mask_fraction) {
    const auto total = static_cast<double>(t * n);
    auto m = static_cast<std::size_t>(std::llround(mask_fraction * total));
    if (m < 1) m = 1;
    if (m > t * n) m = t * n;
    return m;
}

ActionSpec make_action(const std::vector<std::uint32_t>& flat, std::size_t n, Sign sign,
                       double delta) {
    ActionSpec a;
    a.mask.reserve(flat.size());
    for (std::uint32_t p : flat)
        a.mask.emplace_back(p / static_cast<std::uint32_t>(n), p % static_cast<std::uint32_t>(n));
    std::sort(a.mask.begin(), a.mask.end());
    a.sign = sign;
    a.delta = delta;
    return a;
}

}  // namespace

std::vector<ActionSpec> sample_actions(Rng& rng, std::size_t t, std::size_t n,
                                       double mask_fraction, double delta, std::size_t count) {
    if (t == 0 || n == 0) throw std::invalid_argument("sample_actions: empty attention");
    const std::size_t m = mask_size(t, n, mask_fraction);
    std::vector<ActionSpec> out;

    if (m == 1 && count >= 2 * t * n) {
        // Small single-position space: enumerate it exactly.
        for (std::uint32_t p = 0; p < t * n; ++p)
            for (Sign sign : {Sign::enhance, Sign::suppress})
                out.push_back(make_action({p}, n, sign, delta));
        return out;
    }

    std::set<std::pair<std::int8_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>>> seen;
    const std::size_t max_attempts = 20 * count;
    for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
        std::vector<std::uint32_t> flat = rng.sample_indices(t * n, m);
        const Sign sign = (rng.next_u64() & 1u) != 0 ? Sign::enhance : Sign::suppress;
        ActionSpec a = make_action(flat, n, sign, delta);
        if (seen.emplace(static_cast<std::int8_t>(a.sign), a.mask).second)
            out.push_back(std::move(a));
    }
    return out;
}

ActionSpec random_action(Rng& rng, std::size_t t, std::size_t n, double mask_fraction,
                         double delta) {
    const std::size_t m = mask_size(t, n, mask_fraction);
    std::vector<std::uint32_t> flat = rng.sample_indices(t * n, m);
    const Sign sign = (rng.next_u64() & 1u) != 0 ? Sign::enhance : Sign::suppress;
    return make_action(flat, n, sign, delta);
}

namespace {

void validate(const MctsConfig& cfg) {
    if (cfg.budget < 1) throw config_error("mcts: budget must be >= 1");
    if (cfg.c < 0.0) throw config_error("mcts: c must be >= 0");
    if (!(cfg.epsilon > 0.0)) throw config_error("mcts: epsilon must be positive");
    if (cfg.actions_per_expansion < 1)
        throw config_error("mcts: actions_per_expansion must be >= 1");
    if (!(cfg.delta > 0.0)) throw config_error("mcts: delta must be positive");
    if (!(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0))
        throw config_error("mcts: mask_fraction must be in (0,1]");
    if (cfg.max_tree_depth < 1) throw config_error("mcts: max_tree_depth must be >= 1");
    if (cfg.selection == Selection::epsilon_greedy &&
        !(cfg.greedy_epsilon >= 0.0 && cfg.greedy_epsilon <= 1.0))
        throw config_error("mcts: greedy_epsilon must be in [0,1]");
}

void expand(SearchNode& node, Rng& rng, const MctsConfig& cfg) {
    const std::size_t t = node.state.logits.rows;
    const std::size_t n = node.state.logits.cols;
    std::vector<ActionSpec> actions =
        sample_actions(rng, t, n, cfg.mask_fraction, cfg.delta, cfg.actions_per_expansion);
    node.edges.reserve(actions.size());
    for (ActionSpec& a : actions) node.edges.push_back(Edge{std::move(a), 0, 0.0, nullptr});
    node.expanded = true;
}

Edge* select_edge(SearchNode& node, Rng& rng, const MctsConfig& cfg) {
    if (cfg.selection == Selection::epsilon_greedy) {
        if (rng.next_double() < cfg.greedy_epsilon)
            return &node.edges[rng.index(node.edges.size())];
        Edge* best = &node.edges[0];
        for (Edge& e : node.edges)
            if (e.q_mean > best->q_mean) best = &e;
        return best;
    }
    Edge* best = &node.edges[0];
    double best_score = uct_score(*best, node.visits, cfg.c, cfg.epsilon);
    for (std::size_t i = 1; i < node.edges.size(); ++i) {
        const double score = uct_score(node.edges[i], node.visits, cfg.c, cfg.epsilon);
        if (score > best_score) {
            best = &node.edges[i];
            best_score = score;
        }
    }
    return best;
}

}  // namespace

MctsResult mcts_optimize(const align::AttentionState& a_initial, const MctsConfig& cfg,
                         const RewardEvaluator& eval, const TraceFn& trace) {
    validate(cfg);
    Rng rng(cfg.seed);

    SearchNode root;
    root.state = a_initial;
    root.depth = 0;
    // Pre-expanded so every iteration traverses a root edge; see uct_score's
    // max(N,1) guard for the first selection.
    expand(root, rng, cfg);
    if (root.edges.empty())
        return MctsResult{a_initial, MctsStatus::no_action, std::nullopt, 0.0, 0};

    const double root_loss = eval.loss_with(root.state);
    std::vector<PathStep> path;
    std::vector<std::uint32_t> trace_edges;

    for (std::size_t iter = 0; iter < cfg.budget; ++iter) {
        path.clear();
        SearchNode* node = &root;
        // All randomness below the root (deeper expansions, epsilon draws,
        // rollout actions) comes from a stream keyed by the selected root
        // edge's visit ordinal. The k-th visits of any two root actions then
        // share one random suffix, so suffix noise cancels out of their value
        // comparison instead of drowning the per-action signal.
        std::optional<Rng> iter_rng;
        for (;;) {
            if (node->depth >= cfg.max_tree_depth) break;  // terminal by depth cap
            if (!node->expanded) {
                if (node->visits == 0) break;  // first visit: simulate, expand later
                expand(*node, *iter_rng, cfg);
                if (node->edges.empty()) break;
            }
            Edge* e = select_edge(*node, iter_rng ? *iter_rng : rng, cfg);
            if (!iter_rng) iter_rng.emplace(mix_seed(cfg.seed, stream::search, e->visits));
            const bool fresh = e->child == nullptr;
            if (fresh)
                e->child = std::make_unique<SearchNode>(
                    SearchNode{apply_action(node->state, e->action), 0, {}, false,
                               node->depth + 1});
            path.push_back(PathStep{node, e});
            node = e->child.get();
            if (fresh) break;
        }

        // Rollout from the reached node (none if terminal by depth).
        double r_hat = 0.0;
        {
            const std::size_t steps =
                node->depth >= cfg.max_tree_depth || !iter_rng ? 0 : cfg.rollout_depth;
            if (steps == 0) {
                r_hat = eval.reward_vs_baseline(root_loss, node->state);
            } else {
                align::AttentionState s = node->state;
                const std::size_t t = s.logits.rows, n = s.logits.cols;
                for (std::size_t j = 0; j < steps; ++j)
                    s = apply_action(s, random_action(*iter_rng, t, n, cfg.mask_fraction,
                                                      cfg.delta));
                r_hat = eval.reward_vs_baseline(root_loss, s);
            }
        }

        path.push_back(PathStep{node, nullptr});
        backpropagate(path, r_hat);

        if (trace) {
            trace_edges.clear();
            for (const PathStep& step : path)
                if (step.edge != nullptr)
                    trace_edges.push_back(
                        static_cast<std::uint32_t>(step.edge - step.node->edges.data()));
            trace(iter, trace_edges, r_hat);
        }
    }

    const Edge* chosen = &root.edges[0];
    for (const Edge& e : root.edges)
        if (e.visits > chosen->visits) chosen = &e;

    MctsResult result;
    result.state = apply_action(a_initial, chosen->action);
    result.status = MctsStatus::ok;
    result.chosen = chosen->action;
    result.chosen_reward = eval.reward_vs_baseline(root_loss, result.state);
    result.iterations = cfg.budget;
    return result;
}

MctsResult mcts_optimize(const align::AttentionState& a_initial, const MctsConfig& cfg,
                         const RewardConfig& rcfg, const align::Model& model) {
    RewardEvaluator eval(model, rcfg);
    return mcts_optimize(a_initial, cfg, eval, nullptr);
}

}  // namespace daer::mcts
