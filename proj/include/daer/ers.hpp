#pragma once

#include <cstdint>
#include <vector>

#include "daer/hier_index.hpp"

// Bandit-guided hierarchical retrieval over a HierIndex: children are scored
// by a blend of query-centroid similarity, historical success rate, and an
// exploration bonus; plus the greedy-descent and exact flat-scan baselines.
namespace daer::ers {

struct ErsConfig {
    double lambda1 = 0.6;  // query-centroid similarity
    double lambda2 = 0.2;  // success rate
    double lambda3 = 0.2;  // exploration
    double epsilon = 1e-6;
    std::size_t i_max = 64;
    std::size_t k = 10;
    double success_threshold = 0.7;
    std::size_t push_width = 2;   // children pushed per expansion
    bool re_expand = false;       // re-enqueue a node until all children pushed
};

// Visit/success counters of one index, indexed by node id and flat edge id.
// Fresh per query by default; pass the same instance across queries for the
// persistent (session) mode.
struct QueryStats {
    std::vector<std::uint64_t> node_visits;
    std::vector<std::uint64_t> edge_visits;
    std::vector<std::uint64_t> edge_success;

    QueryStats() = default;
    explicit QueryStats(const hier::HierIndex& index) { reset(index); }
    void reset(const hier::HierIndex& index);
    bool sized_for(const hier::HierIndex& index) const;
};

struct Candidate {
    std::uint64_t id = 0;
    double similarity = 0.0;
};

enum class RetrieveStatus { ok, empty_index };

struct RetrieveResult {
    std::vector<Candidate> items;  // similarity non-increasing, ids distinct
    RetrieveStatus status = RetrieveStatus::ok;
    std::size_t iterations = 0;
    std::size_t nodes_visited = 0;
    std::size_t internals_visited = 0;
    std::size_t leaves_visited = 0;
    std::size_t items_scored = 0;
    std::size_t centroid_evals = 0;
};

// lambda1*sim + lambda2*N_success/(N(s,a)+eps) + lambda3*sqrt(ln(max(N(s),1))/(N(s,a)+eps))
double uct_lite_score(double sim, std::uint64_t node_visits, std::uint64_t edge_visits,
                      std::uint64_t edge_success, const ErsConfig& cfg);

// Best-first frontier traversal: pop the highest-priority node; internal nodes
// score their unpushed children and push the top push_width by UCT_Lite
// (incrementing N(s) per push and N(s,a) on the pushed edge); leaves score
// their items into the candidate pool and credit N_success along the path when
// any similarity reaches success_threshold. Stops after i_max pops or when the
// frontier empties; returns the k most similar distinct items.
RetrieveResult ers_retrieve(const double* q, const hier::HierIndex& index, const ErsConfig& cfg,
                            QueryStats* persistent = nullptr);

// Root-to-leaf descent by max centroid similarity; scores only the reached leaf.
RetrieveResult greedy_retrieve(const double* q, const hier::HierIndex& index, std::size_t k);

// Exhaustive inner-product scan; ties broken by ascending id.
RetrieveResult knn_exact(const double* q, const hier::ItemStore& items, std::size_t k);

}  // namespace daer::ers
