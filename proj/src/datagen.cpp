#include "daer/datagen.hpp"

#include "daer/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "daer/ers.hpp"

namespace daer::datagen {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    for (;;) {
        for (double& x : v) x = rng.normal();
        const double norm = l2_norm(v.data(), dim);
        if (norm > 1e-12) {
            kernels::scale(v.data(), dim, 1.0 / norm);
            return v;
        }
    }
}

void perturb_unit(std::vector<double>& v, double sigma, Rng& rng) {
    for (double& x : v) x += sigma * rng.normal();
    normalize(v.data(), v.size(), "perturb_unit");
}

hier::ItemStore gen_uniform(std::size_t n, std::size_t dim, std::uint64_t seed) {
    if (n == 0 || dim == 0) throw config_error("gen_uniform: empty spec");
    Rng rng(mix_seed(seed, stream::data, 0));
    hier::ItemStore items = hier::ItemStore::with_dim(static_cast<std::uint32_t>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> v = random_unit(dim, rng);
        items.add(i, v.data());
    }
    return items;
}

Clustered gen_clustered(std::size_t n, std::size_t dim, std::size_t clusters, double noise,
                        std::uint64_t seed) {
    if (n == 0 || dim == 0 || clusters == 0)
        throw config_error("gen_clustered: empty spec");
    Rng rng(mix_seed(seed, stream::data, 1));
    Clustered out;
    out.centers = Mat(clusters, dim);
    for (std::size_t c = 0; c < clusters; ++c) {
        const std::vector<double> v = random_unit(dim, rng);
        std::copy(v.begin(), v.end(), out.centers.row(c));
    }
    out.items = hier::ItemStore::with_dim(static_cast<std::uint32_t>(dim));
    out.item_cluster.reserve(n);
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % clusters;
        std::copy_n(out.centers.row(c), dim, v.begin());
        perturb_unit(v, noise, rng);
        out.items.add(i, v.data());
        out.item_cluster.push_back(static_cast<std::uint32_t>(c));
    }
    return out;
}

QuerySet gen_queries(const hier::ItemStore& items, std::size_t count, double noise,
                     std::uint64_t seed) {
    if (items.count() == 0) throw config_error("gen_queries: empty store");
    Rng rng(mix_seed(seed, stream::data, 2));
    QuerySet out;
    out.queries.reserve(count);
    out.relevant.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t pick = rng.index(items.count());
        std::vector<double> q(items.vec(pick), items.vec(pick) + items.dim);
        perturb_unit(q, noise, rng);
        out.queries.push_back(std::move(q));
        out.relevant.push_back(items.ids[pick]);
    }
    return out;
}

namespace {

// Angles in degrees on the unit circle spanned by (b1, b2):
//   cluster A jitters around 0, cluster B around 95, the planted target sits
//   at 55, the query at 38. The query is nearer A's centroid (cos 38 > cos 55)
//   yet the target is its global nearest item (cos 17 beats A's best ~cos 28).
constexpr double kClusterA = 0.0;
constexpr double kClusterB = 95.0;
constexpr double kTarget = 55.0;
constexpr double kQuery = 38.0;
constexpr double kJitter = 10.0;
constexpr std::size_t kClusterSize = 40;

std::vector<double> on_circle(const std::vector<double>& b1, const std::vector<double>& b2,
                              double degrees) {
    const double rad = degrees * std::numbers::pi_v<double> / 180.0;
    std::vector<double> v(b1.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = std::cos(rad) * b1[i] + std::sin(rad) * b2[i];
    return v;
}

}  // namespace

Adversarial gen_adversarial(std::size_t dim, std::uint64_t seed,
                            const hier::BuildConfig& build) {
    if (dim < 2) throw config_error("gen_adversarial: dim must be >= 2");

    for (std::uint32_t attempt = 0; attempt < 16; ++attempt) {
        Rng rng(mix_seed(seed, stream::data, 3 + attempt));

        // Random orthonormal 2D basis.
        std::vector<double> b1 = random_unit(dim, rng);
        std::vector<double> b2 = random_unit(dim, rng);
        const double proj = kernels::dot(b1.data(), b2.data(), dim);
        kernels::axpy(-proj, b1.data(), b2.data(), dim);
        const double norm = l2_norm(b2.data(), dim);
        if (norm < 1e-6) continue;
        kernels::scale(b2.data(), dim, 1.0 / norm);

        hier::ItemStore items = hier::ItemStore::with_dim(static_cast<std::uint32_t>(dim));
        std::uint64_t id = 0;
        for (std::size_t i = 0; i < kClusterSize; ++i) {
            const double jitter = (rng.next_double() * 2.0 - 1.0) * kJitter;
            const std::vector<double> v = on_circle(b1, b2, kClusterA + jitter);
            items.add(id++, v.data());
        }
        for (std::size_t i = 0; i + 1 < kClusterSize; ++i) {
            const double jitter = (rng.next_double() * 2.0 - 1.0) * kJitter;
            const std::vector<double> v = on_circle(b1, b2, kClusterB + jitter);
            items.add(id++, v.data());
        }
        const std::uint64_t target_id = id;
        {
            const std::vector<double> v = on_circle(b1, b2, kTarget);
            items.add(id++, v.data());
        }

        hier::BuildConfig bc = build;
        bc.seed = mix_seed(seed, stream::data, 100 + attempt);
        hier::HierIndex index = hier::build_index(std::move(items), bc);

        const std::vector<double> query = on_circle(b1, b2, kQuery);

        // Construction check: the flat-scan top-1 must be the target and the
        // greedy descent must end in a different leaf.
        const ers::RetrieveResult flat = ers::knn_exact(query.data(), index.items, 1);
        if (flat.items.empty() || flat.items[0].id != target_id) continue;
        const ers::RetrieveResult greedy = ers::greedy_retrieve(query.data(), index, 1);
        if (greedy.items.empty()) continue;
        bool greedy_has_target = false;
        for (const ers::Candidate& c : greedy.items)
            if (c.id == target_id) greedy_has_target = true;
        if (greedy_has_target) continue;

        Adversarial out;
        out.index = std::move(index);
        out.query = query;
        out.target_id = target_id;
        out.tries = attempt + 1;
        return out;
    }
    throw std::runtime_error("gen_adversarial: construction check failed for seed " +
                             std::to_string(seed));
}

}  // namespace daer::datagen
