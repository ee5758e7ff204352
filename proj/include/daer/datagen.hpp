#pragma once

#include <cstdint>
#include <vector>

#include "daer/hier_index.hpp"
#include "daer/rng.hpp"

// Synthetic retrieval datasets: uniform and clustered unit-vector databases,
// noised-copy query sets with single-relevant ground truth, and the
// adversarial two-cluster family where greedy descent provably misses the
// true nearest item.
namespace daer::datagen {

hier::ItemStore gen_uniform(std::size_t n, std::size_t dim, std::uint64_t seed);

struct Clustered {
    hier::ItemStore items;
    Mat centers;                            // clusters x dim, unit rows
    std::vector<std::uint32_t> item_cluster;
};

Clustered gen_clustered(std::size_t n, std::size_t dim, std::size_t clusters, double noise,
                        std::uint64_t seed);

struct QuerySet {
    std::vector<std::vector<double>> queries;  // unit vectors
    std::vector<std::uint64_t> relevant;       // source item id per query
};

// Each query is a renormalized noised copy of a uniformly chosen item.
QuerySet gen_queries(const hier::ItemStore& items, std::size_t count, double noise,
                     std::uint64_t seed);

// One adversarial instance: two angular clusters in a random 2D subspace where
// the query is closer to cluster A's centroid but its true nearest item (the
// planted target) sits in cluster B. Construction is verified against the
// actual built index (greedy's leaf must miss the flat-scan top-1) with
// bounded basis retries, so the returned instance carries the guarantee.
struct Adversarial {
    hier::HierIndex index;
    std::vector<double> query;
    std::uint64_t target_id = 0;
    std::uint32_t tries = 0;  // basis seeds consumed by the construction check
};

Adversarial gen_adversarial(std::size_t dim, std::uint64_t seed, const hier::BuildConfig& build);

// v <- normalize(v + sigma * gaussian)
void perturb_unit(std::vector<double>& v, double sigma, Rng& rng);

std::vector<double> random_unit(std::size_t dim, Rng& rng);

}  // namespace daer::datagen
