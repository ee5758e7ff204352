#include "daer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace daer::metrics {

double recall_at_k(const std::vector<std::uint64_t>& ranked,
                   const std::unordered_set<std::uint64_t>& relevant, std::size_t k) {
    if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
    const std::size_t top = std::min(k, ranked.size());
    for (std::size_t i = 0; i < top; ++i)
        if (relevant.contains(ranked[i])) return 1.0;
    return 0.0;
}

double rr_at_k(const std::vector<std::uint64_t>& ranked,
               const std::unordered_set<std::uint64_t>& relevant, std::size_t k) {
    return recall_at_k(ranked, relevant, k);
}

double ndcg_at_k(const std::vector<std::uint64_t>& ranked,
                 const std::unordered_map<std::uint64_t, double>& relevance, std::size_t k) {
    if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
    for (const auto& [id, rel] : relevance)
        if (rel < 0.0) throw std::invalid_argument("ndcg_at_k: negative relevance");

    double dcg = 0.0;
    const std::size_t top = std::min(k, ranked.size());
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < top; ++i) {
        if (!seen.insert(ranked[i]).second) continue;  // credit an id once
        auto it = relevance.find(ranked[i]);
        if (it != relevance.end())
            dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
    }

    std::vector<double> rels;
    rels.reserve(relevance.size());
    for (const auto& [id, rel] : relevance) rels.push_back(rel);
    std::sort(rels.begin(), rels.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, rels.size()); ++i)
        idcg += rels[i] / std::log2(static_cast<double>(i) + 2.0);

    return idcg > 0.0 ? dcg / idcg : 0.0;
}

double average_precision(const std::vector<std::uint64_t>& ranked,
                         const std::unordered_set<std::uint64_t>& relevant) {
    if (relevant.empty()) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (!seen.insert(ranked[i]).second) continue;  // credit an id once
        if (!relevant.contains(ranked[i])) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    return sum / static_cast<double>(relevant.size());
}

MetricAccumulator::MetricAccumulator(std::vector<std::size_t> ks) : ks_(std::move(ks)) {
    std::sort(ks_.begin(), ks_.end());
    ks_.erase(std::unique(ks_.begin(), ks_.end()), ks_.end());
    for (std::size_t k : ks_) {
        if (k == 0) throw std::invalid_argument("MetricAccumulator: k must be >= 1");
        recall_sum_[k] = 0.0;
    }
}

void MetricAccumulator::add_query(const std::vector<std::uint64_t>& ranked,
                                  const std::unordered_set<std::uint64_t>& relevant) {
    for (std::size_t k : ks_) recall_sum_[k] += recall_at_k(ranked, relevant, k);
    std::unordered_map<std::uint64_t, double> relevance;
    for (std::uint64_t id : relevant) relevance[id] = 1.0;
    ndcg_sum_ += ndcg_at_k(ranked, relevance, 5);
    ap_sum_ += average_precision(ranked, relevant);
    ++n_;
}

MetricReport MetricAccumulator::report() const {
    MetricReport r;
    r.n_queries = n_;
    const double inv = n_ > 0 ? 1.0 / static_cast<double>(n_) : 0.0;
    for (const auto& [k, sum] : recall_sum_) {
        r.recall_at[k] = sum * inv;
        r.rr_at[k] = sum * inv;
    }
    r.ndcg_at_5 = ndcg_sum_ * inv;
    r.mean_ap = ap_sum_ * inv;
    return r;
}

}  // namespace daer::metrics
