#include "daer/ers.hpp"

#include "daer/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace daer::ers {

namespace {

double clamp_sim(double v) { return std::min(1.0, std::max(-1.0, v)); }

bool candidate_less(const Candidate& a, const Candidate& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
}

void sort_and_trim(std::vector<Candidate>& pool, std::size_t k) {
    std::sort(pool.begin(), pool.end(), candidate_less);
    if (pool.size() > k) pool.resize(k);
}

void validate(const ErsConfig& cfg) {
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.lambda3 < 0.0)
        throw config_error("ers: lambdas must be non-negative");
    if (!(cfg.epsilon > 0.0)) throw config_error("ers: epsilon must be positive");
    if (cfg.i_max < 1) throw config_error("ers: i_max must be >= 1");
    if (cfg.k < 1) throw config_error("ers: k must be >= 1");
    if (cfg.push_width < 1) throw config_error("ers: push_width must be >= 1");
}

}  // namespace

void QueryStats::reset(const hier::HierIndex& index) {
    node_visits.assign(index.node_count, 0);
    edge_visits.assign(index.edge_count, 0);
    edge_success.assign(index.edge_count, 0);
}

bool QueryStats::sized_for(const hier::HierIndex& index) const {
    return node_visits.size() == index.node_count && edge_visits.size() == index.edge_count &&
           edge_success.size() == index.edge_count;
}

double uct_lite_score(double sim, std::uint64_t node_visits, std::uint64_t edge_visits,
                      std::uint64_t edge_success, const ErsConfig& cfg) {
    const double n_sa = static_cast<double>(edge_visits) + cfg.epsilon;
    const double ln_n =
        std::log(static_cast<double>(std::max<std::uint64_t>(node_visits, 1)));
    return cfg.lambda1 * sim + cfg.lambda2 * static_cast<double>(edge_success) / n_sa +
           cfg.lambda3 * std::sqrt(ln_n / n_sa);
}

namespace {

struct FrontierEntry {
    double priority;
    std::uint64_t seq;  // insertion order; older entries win ties
    const hier::IndexNode* node;
    std::vector<std::uint32_t> path_edges;  // flat edge ids from root to node
};

struct FrontierCmp {
    bool operator()(const FrontierEntry& a, const FrontierEntry& b) const {
        if (a.priority != b.priority) return a.priority < b.priority;  // max-heap
        return a.seq > b.seq;
    }
};

}  // namespace

RetrieveResult ers_retrieve(const double* q, const hier::HierIndex& index, const ErsConfig& cfg,
                            QueryStats* persistent) {
    validate(cfg);
    RetrieveResult result;
    if (!index.root || index.item_count() == 0) {
        result.status = RetrieveStatus::empty_index;
        return result;
    }

    QueryStats local;
    QueryStats* stats = persistent;
    if (stats == nullptr) {
        local.reset(index);
        stats = &local;
    } else if (!stats->sized_for(index)) {
        throw std::invalid_argument("ers_retrieve: stats not sized for this index");
    }

    const std::size_t dim = index.dim;
    std::vector<bool> pushed(index.edge_count, false);  // per-query push tracking
    std::priority_queue<FrontierEntry, std::vector<FrontierEntry>, FrontierCmp> frontier;
    std::uint64_t seq = 0;
    frontier.push(FrontierEntry{std::numeric_limits<double>::infinity(), seq++, index.root.get(),
                                {}});

    std::vector<Candidate> pool;
    struct Scored {
        double uct;
        double sim;
        std::uint32_t child;
    };
    std::vector<Scored> scored;

    while (result.iterations < cfg.i_max && !frontier.empty()) {
        FrontierEntry entry = frontier.top();
        frontier.pop();
        ++result.iterations;
        ++result.nodes_visited;
        const hier::IndexNode* node = entry.node;

        if (node->is_leaf()) {
            ++result.leaves_visited;
            bool success = false;
            for (std::size_t i = 0; i < node->item_idx.size(); ++i) {
                const double sim = clamp_sim(kernels::dot(q, index.items.vec(node->item_idx[i]), dim));
                ++result.items_scored;
                pool.push_back(Candidate{node->item_ids[i], sim});
                if (sim >= cfg.success_threshold) success = true;
            }
            if (success)
                for (std::uint32_t e : entry.path_edges) ++stats->edge_success[e];
            continue;
        }

        ++result.internals_visited;
        const std::uint32_t base = index.edge_offset[node->node_id];
        scored.clear();
        for (std::uint32_t ci = 0; ci < node->children.size(); ++ci) {
            if (pushed[base + ci]) continue;
            const double sim = clamp_sim(kernels::dot(q, node->children[ci]->centroid.data(), dim));
            ++result.centroid_evals;
            const double uct = uct_lite_score(sim, stats->node_visits[node->node_id],
                                              stats->edge_visits[base + ci],
                                              stats->edge_success[base + ci], cfg);
            scored.push_back(Scored{uct, sim, ci});
        }
        if (scored.empty()) continue;

        // Top push_width children by UCT_Lite, ties to the lowest child index.
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            if (a.uct != b.uct) return a.uct > b.uct;
            return a.child < b.child;
        });
        const std::size_t width = std::min(cfg.push_width, scored.size());
        for (std::size_t i = 0; i < width; ++i) {
            const Scored& sc = scored[i];
            const std::uint32_t edge = base + sc.child;
            pushed[edge] = true;
            ++stats->node_visits[node->node_id];
            ++stats->edge_visits[edge];
            std::vector<std::uint32_t> child_path = entry.path_edges;
            child_path.push_back(edge);
            frontier.push(FrontierEntry{sc.uct, seq++, node->children[sc.child].get(),
                                        std::move(child_path)});
        }
        if (cfg.re_expand && width < scored.size())
            frontier.push(FrontierEntry{scored[width].uct, seq++, node,
                                        std::move(entry.path_edges)});
    }

    sort_and_trim(pool, cfg.k);
    result.items = std::move(pool);
    return result;
}

RetrieveResult greedy_retrieve(const double* q, const hier::HierIndex& index, std::size_t k) {
    if (k < 1) throw config_error("greedy_retrieve: k must be >= 1");
    RetrieveResult result;
    if (!index.root || index.item_count() == 0) {
        result.status = RetrieveStatus::empty_index;
        return result;
    }
    const std::size_t dim = index.dim;
    const hier::IndexNode* node = index.root.get();
    ++result.nodes_visited;
    while (!node->is_leaf()) {
        ++result.internals_visited;
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t ci = 0; ci < node->children.size(); ++ci) {
            const double sim = kernels::dot(q, node->children[ci]->centroid.data(), dim);
            ++result.centroid_evals;
            if (sim > best_sim) {
                best = ci;
                best_sim = sim;
            }
        }
        node = node->children[best].get();
        ++result.nodes_visited;
        ++result.iterations;
    }
    ++result.leaves_visited;
    std::vector<Candidate> pool;
    pool.reserve(node->item_idx.size());
    for (std::size_t i = 0; i < node->item_idx.size(); ++i) {
        const double sim = clamp_sim(kernels::dot(q, index.items.vec(node->item_idx[i]), dim));
        ++result.items_scored;
        pool.push_back(Candidate{node->item_ids[i], sim});
    }
    sort_and_trim(pool, k);
    result.items = std::move(pool);
    return result;
}

RetrieveResult knn_exact(const double* q, const hier::ItemStore& items, std::size_t k) {
    if (k < 1) throw config_error("knn_exact: k must be >= 1");
    RetrieveResult result;
    if (items.count() == 0) {
        result.status = RetrieveStatus::empty_index;
        return result;
    }
    std::vector<Candidate> pool;
    pool.reserve(items.count());
    for (std::size_t i = 0; i < items.count(); ++i) {
        const double sim = clamp_sim(kernels::dot(q, items.vec(i), items.dim));
        ++result.items_scored;
        pool.push_back(Candidate{items.ids[i], sim});
    }
    if (pool.size() > k) {
        std::nth_element(pool.begin(), pool.begin() + static_cast<long>(k), pool.end(),
                         candidate_less);
        pool.resize(k);
    }
    std::sort(pool.begin(), pool.end(), candidate_less);
    result.items = std::move(pool);
    return result;
}

}  // namespace daer::ers
