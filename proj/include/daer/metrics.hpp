#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <unordered_set>
#include <vector>

// Ranking metrics: Recall@K / RR@K (single-relevant convention), NDCG@K, mAP.
namespace daer::metrics {

// 1 if any relevant id appears in the top-k of `ranked`, else 0.
// Empty ranking scores 0.
double recall_at_k(const std::vector<std::uint64_t>& ranked,
                   const std::unordered_set<std::uint64_t>& relevant, std::size_t k);

// Single-relevant retrieval rate; identical computation to recall_at_k under
// the one-correct-item convention.
double rr_at_k(const std::vector<std::uint64_t>& ranked,
               const std::unordered_set<std::uint64_t>& relevant, std::size_t k);

// DCG = sum_{i=1..k} rel_i / log2(i+1), normalized by the ideal DCG over the
// relevance map; 0 when IDCG is 0.
double ndcg_at_k(const std::vector<std::uint64_t>& ranked,
                 const std::unordered_map<std::uint64_t, double>& relevance, std::size_t k);

// Mean of precision-at-hit over relevant items; 0 when `relevant` is empty.
double average_precision(const std::vector<std::uint64_t>& ranked,
                         const std::unordered_set<std::uint64_t>& relevant);

struct MetricReport {
    std::map<std::size_t, double> recall_at;
    std::map<std::size_t, double> rr_at;
    double ndcg_at_5 = 0.0;
    double mean_ap = 0.0;
    std::size_t n_queries = 0;
};

// Accumulates per-query rankings into a MetricReport averaged over queries.
class MetricAccumulator {
  public:
    explicit MetricAccumulator(std::vector<std::size_t> ks = {1, 5, 10});

    void add_query(const std::vector<std::uint64_t>& ranked,
                   const std::unordered_set<std::uint64_t>& relevant);

    MetricReport report() const;

  private:
    std::vector<std::size_t> ks_;
    std::map<std::size_t, double> recall_sum_;
    double ndcg_sum_ = 0.0;
    double ap_sum_ = 0.0;
    std::size_t n_ = 0;
};

}  // namespace daer::metrics
