#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "daer/datagen.hpp"
#include "daer/error.hpp"
#include "daer/hier_index.hpp"
#include "daer/kernels.hpp"
#include "daer/rng.hpp"

using namespace daer;
using namespace daer::hier;

namespace {

void collect_leaves(const IndexNode* node, std::vector<const IndexNode*>& out) {
    if (node->is_leaf()) {
        out.push_back(node);
        return;
    }
    for (const auto& c : node->children) collect_leaves(c.get(), out);
}

// Ids of all items under a node, in encounter order.
void collect_ids(const IndexNode* node, std::vector<std::uint64_t>& out) {
    if (node->is_leaf()) {
        out.insert(out.end(), node->item_ids.begin(), node->item_ids.end());
        return;
    }
    for (const auto& c : node->children) collect_ids(c.get(), out);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return kernels::dot(a.data(), b.data(), a.size());
}

}  // namespace

TEST_CASE("ItemStore validates dimension, id uniqueness, and unit norms") {
    ItemStore store = ItemStore::with_dim(3);
    const std::vector<double> e0 = {1.0, 0.0, 0.0};
    store.add(7, e0.data());
    CHECK(store.count() == 1);
    CHECK(store.by_id.at(7) == 0);
    CHECK(store.vec(0)[0] == 1.0);

    CHECK_THROWS_AS(store.add(7, e0.data()), std::invalid_argument);
    const std::vector<double> short_vec = {0.9, 0.0, 0.0};
    CHECK_THROWS_AS(store.add(8, short_vec.data()), std::invalid_argument);

    // Norm off by less than the tolerance is accepted and renormalized.
    const std::vector<double> near = {1.0 + 5e-7, 0.0, 0.0};
    store.add(9, near.data());
    double norm2 = 0.0;
    for (std::uint32_t j = 0; j < 3; ++j) norm2 += store.vec(1)[j] * store.vec(1)[j];
    CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("kmeans with k=1 returns the renormalized mean") {
    Rng rng(71);
    const std::size_t n = 9, dim = 5;
    std::vector<double> pts;
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = datagen::random_unit(dim, rng);
        pts.insert(pts.end(), v.begin(), v.end());
    }
    const KmeansResult res = kmeans(pts.data(), n, dim, 1, 10, 3);
    REQUIRE(res.centroids.rows == 1);
    CHECK_FALSE(res.k_clamped);
    for (std::uint32_t a : res.assignments) CHECK(a == 0);

    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += pts[i * dim + j] / static_cast<double>(n);
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j)
        CHECK(res.centroids.at(0, j) == doctest::Approx(mean[j] / norm).epsilon(1e-12));
}

TEST_CASE("kmeans separates two tight clusters exactly") {
    Rng rng(72);
    const std::size_t dim = 6, per_cluster = 8;
    std::vector<double> pts;
    std::vector<int> truth;
    for (int c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < per_cluster; ++i) {
            std::vector<double> v(dim, 0.0);
            v[c] = 1.0;
            datagen::perturb_unit(v, 0.02, rng);
            pts.insert(pts.end(), v.begin(), v.end());
            truth.push_back(c);
        }
    const KmeansResult res = kmeans(pts.data(), 2 * per_cluster, dim, 2, 20, 5);
    REQUIRE(res.assignments.size() == 2 * per_cluster);

    // All points of one true cluster share a label, and the labels differ.
    for (std::size_t i = 1; i < per_cluster; ++i) {
        CHECK(res.assignments[i] == res.assignments[0]);
        CHECK(res.assignments[per_cluster + i] == res.assignments[per_cluster]);
    }
    CHECK(res.assignments[0] != res.assignments[per_cluster]);

    // Fixed point: each point's label is its max-cosine centroid.
    for (std::size_t i = 0; i < 2 * per_cluster; ++i) {
        double best = -2.0;
        std::uint32_t arg = 0;
        for (std::uint32_t c = 0; c < 2; ++c) {
            const double s = kernels::dot(pts.data() + i * dim, res.centroids.row(c), dim);
            if (s > best) {
                best = s;
                arg = c;
            }
        }
        CHECK(res.assignments[i] == arg);
    }

    // Centroids are unit and close to the true axes.
    for (std::uint32_t c = 0; c < 2; ++c) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) norm2 += res.centroids.at(c, j) * res.centroids.at(c, j);
        CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const std::uint32_t c0 = res.assignments[0];
    CHECK(res.centroids.at(c0, 0) > 0.99);
    CHECK(res.centroids.at(1 - c0, 1) > 0.99);
}

TEST_CASE("kmeans clamps k to the point count and is deterministic") {
    Rng rng(73);
    const std::size_t n = 3, dim = 4;
    std::vector<double> pts;
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = datagen::random_unit(dim, rng);
        pts.insert(pts.end(), v.begin(), v.end());
    }
    const KmeansResult clamped = kmeans(pts.data(), n, dim, 8, 10, 1);
    CHECK(clamped.k_clamped);
    CHECK(clamped.centroids.rows == n);

    const KmeansResult a = kmeans(pts.data(), n, dim, 2, 15, 9);
    const KmeansResult b = kmeans(pts.data(), n, dim, 2, 15, 9);
    CHECK(a.centroids.data == b.centroids.data);
    CHECK(a.assignments == b.assignments);

    CHECK_THROWS_AS(kmeans(pts.data(), 0, dim, 2, 10, 0), std::invalid_argument);
    CHECK_THROWS_AS(kmeans(pts.data(), n, dim, 0, 10, 0), std::invalid_argument);
}

TEST_CASE("build_index partitions every item into exactly one leaf") {
    const auto gen = datagen::gen_clustered(500, 8, 8, 0.1, 5);
    BuildConfig cfg;
    cfg.levels = 2;
    cfg.branching = 4;
    cfg.leaf_capacity = 16;
    cfg.kmeans_iters = 15;
    cfg.seed = 2;
    const HierIndex index = build_index(gen.items, cfg);

    REQUIRE(index.root != nullptr);
    CHECK(index.dim == 8);
    CHECK(index.item_count() == 500);

    std::vector<std::uint64_t> seen;
    collect_ids(index.root.get(), seen);
    CHECK(seen.size() == 500);
    std::set<std::uint64_t> unique(seen.begin(), seen.end());
    CHECK(unique.size() == 500);
    for (std::uint64_t id : index.items.ids) CHECK(unique.contains(id));

    // Leaf bookkeeping: resolved store indices agree with the ids.
    std::vector<const IndexNode*> leaves;
    collect_leaves(index.root.get(), leaves);
    for (const IndexNode* leaf : leaves) {
        REQUIRE(leaf->item_idx.size() == leaf->item_ids.size());
        for (std::size_t i = 0; i < leaf->item_ids.size(); ++i)
            CHECK(index.items.ids[leaf->item_idx[i]] == leaf->item_ids[i]);
    }
}

TEST_CASE("index nodes carry preorder ids and normalized subtree centroids") {
    const auto gen = datagen::gen_clustered(300, 6, 4, 0.12, 11);
    BuildConfig cfg;
    cfg.levels = 2;
    cfg.branching = 3;
    cfg.leaf_capacity = 8;
    cfg.kmeans_iters = 12;
    cfg.seed = 4;
    const HierIndex index = build_index(gen.items, cfg);

    REQUIRE(index.nodes.size() == index.node_count);
    std::uint32_t edges = 0;
    for (std::uint32_t i = 0; i < index.node_count; ++i) {
        const IndexNode* node = index.nodes[i];
        CHECK(node->node_id == i);
        edges += static_cast<std::uint32_t>(node->children.size());

        // Centroid equals the renormalized mean of the subtree's items.
        std::vector<std::uint64_t> ids;
        collect_ids(node, ids);
        REQUIRE(!ids.empty());
        std::vector<double> mean(index.dim, 0.0);
        for (std::uint64_t id : ids) {
            const double* v = index.items.vec(index.items.by_id.at(id));
            for (std::uint32_t j = 0; j < index.dim; ++j) mean[j] += v[j];
        }
        double norm = 0.0;
        for (double v : mean) norm += v * v;
        norm = std::sqrt(norm);
        REQUIRE(norm > 0.0);
        for (std::uint32_t j = 0; j < index.dim; ++j)
            CHECK(node->centroid[j] == doctest::Approx(mean[j] / norm).epsilon(1e-6));

        for (const auto& child : node->children) CHECK(child->level == node->level + 1);
    }
    CHECK(index.edge_count == edges);
    CHECK(index.root->level == 0);
    CHECK(index.root->node_id == 0);

    // Depth never exceeds the configured level count.
    std::vector<const IndexNode*> leaves;
    collect_leaves(index.root.get(), leaves);
    for (const IndexNode* leaf : leaves) CHECK(leaf->level <= cfg.levels);
}

TEST_CASE("a store within leaf_capacity builds a single-leaf index") {
    const auto gen = datagen::gen_uniform(10, 5, 17);
    BuildConfig cfg;
    cfg.leaf_capacity = 32;
    const HierIndex index = build_index(gen, cfg);
    CHECK(index.root->is_leaf());
    CHECK(index.node_count == 1);
    CHECK(index.edge_count == 0);
    CHECK(index.root->item_ids.size() == 10);
}

TEST_CASE("build_index is deterministic for a fixed seed") {
    const auto gen = datagen::gen_clustered(200, 6, 4, 0.1, 23);
    BuildConfig cfg;
    cfg.levels = 2;
    cfg.branching = 4;
    cfg.leaf_capacity = 8;
    cfg.seed = 19;
    const HierIndex a = build_index(gen.items, cfg);
    const HierIndex b = build_index(gen.items, cfg);
    CHECK(serialize_index(a) == serialize_index(b));
}

TEST_CASE("build_index validates its configuration") {
    const auto gen = datagen::gen_uniform(20, 4, 29);
    BuildConfig cfg;
    cfg.branching = 1;
    CHECK_THROWS_AS(build_index(gen, cfg), std::invalid_argument);
    cfg = BuildConfig{};
    cfg.levels = 0;
    CHECK_THROWS_AS(build_index(gen, cfg), std::invalid_argument);
    cfg = BuildConfig{};
    CHECK_THROWS_AS(build_index(ItemStore::with_dim(4), cfg), std::invalid_argument);
}

TEST_CASE("index serialization round-trips bitwise") {
    const auto gen = datagen::gen_clustered(150, 5, 3, 0.15, 31);
    BuildConfig cfg;
    cfg.levels = 2;
    cfg.branching = 3;
    cfg.leaf_capacity = 8;
    cfg.seed = 6;
    const HierIndex index = build_index(gen.items, cfg);

    const std::vector<std::uint8_t> bytes = serialize_index(index);
    ItemStore copy = ItemStore::with_dim(5);
    for (std::size_t i = 0; i < gen.items.count(); ++i)
        copy.add(gen.items.ids[i], gen.items.vec(i));
    const HierIndex back = deserialize_index(bytes, std::move(copy));
    CHECK(serialize_index(back) == bytes);
    CHECK(back.node_count == index.node_count);
    CHECK(back.edge_count == index.edge_count);
}

TEST_CASE("embedding serialization round-trips within f32 quantization") {
    const auto gen = datagen::gen_uniform(40, 7, 37);
    const std::vector<std::uint8_t> bytes = serialize_embeddings(gen);
    const ItemStore back = deserialize_embeddings(bytes);
    CHECK(back.count() == 40);
    CHECK(back.dim == 7);
    CHECK(back.ids == gen.ids);
    // The store renormalizes on ingest, so the payload is not bitwise stable;
    // what holds is f32-level closeness plus exact unit rows after decode.
    for (std::size_t i = 0; i < back.count(); ++i) {
        double norm_sq = 0.0;
        for (std::uint32_t j = 0; j < back.dim; ++j) {
            CHECK(std::abs(back.vec(i)[j] - gen.vec(i)[j]) < 1e-6);
            norm_sq += back.vec(i)[j] * back.vec(i)[j];
        }
        CHECK(std::abs(norm_sq - 1.0) < 1e-12);
    }
    // Re-serializing keeps the framing identical even though the f32 payload
    // may shift by an ulp from renormalization.
    const std::vector<std::uint8_t> again = serialize_embeddings(back);
    CHECK(again.size() == bytes.size());
    CHECK(std::equal(again.begin(), again.begin() + 20, bytes.begin()));
}

TEST_CASE("decoders reject truncated or corrupted bytes") {
    const auto gen = datagen::gen_uniform(25, 4, 41);
    BuildConfig cfg;
    cfg.leaf_capacity = 4;
    cfg.levels = 2;
    cfg.branching = 2;
    const HierIndex index = build_index(gen, cfg);

    std::vector<std::uint8_t> emb = serialize_embeddings(index.items);
    std::vector<std::uint8_t> idx = serialize_index(index);

    for (std::size_t cut : {std::size_t{1}, std::size_t{7}, emb.size() / 2}) {
        std::vector<std::uint8_t> t(emb.begin(), emb.end() - static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(deserialize_embeddings(t), decode_error);
    }
    for (std::size_t cut : {std::size_t{1}, std::size_t{9}, idx.size() / 2}) {
        std::vector<std::uint8_t> t(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(cut));
        ItemStore copy = ItemStore::with_dim(4);
        for (std::size_t i = 0; i < index.items.count(); ++i)
            copy.add(index.items.ids[i], index.items.vec(i));
        CHECK_THROWS_AS(deserialize_index(t, std::move(copy)), decode_error);
    }

    std::vector<std::uint8_t> bad_magic = emb;
    bad_magic[0] ^= 0xff;
    CHECK_THROWS_AS(deserialize_embeddings(bad_magic), decode_error);
    std::vector<std::uint8_t> bad_idx = idx;
    bad_idx[3] ^= 0xff;
    {
        ItemStore copy = ItemStore::with_dim(4);
        for (std::size_t i = 0; i < index.items.count(); ++i)
            copy.add(index.items.ids[i], index.items.vec(i));
        CHECK_THROWS_AS(deserialize_index(bad_idx, std::move(copy)), decode_error);
    }

    // Deserializing against a store with different membership must fail.
    {
        ItemStore wrong = ItemStore::with_dim(4);
        Rng rng(43);
        for (std::size_t i = 0; i < index.items.count(); ++i) {
            const auto v = datagen::random_unit(4, rng);
            wrong.add(10000 + i, v.data());
        }
        CHECK_THROWS_AS(deserialize_index(idx, std::move(wrong)), decode_error);
    }
}

TEST_CASE("embedding and index files survive a disk round trip") {
    const auto gen = datagen::gen_clustered(80, 6, 4, 0.1, 47);
    BuildConfig cfg;
    cfg.levels = 2;
    cfg.branching = 2;
    cfg.leaf_capacity = 8;
    const HierIndex index = build_index(gen.items, cfg);

    const std::string emb_path = "test_hier_emb.bin";
    const std::string idx_path = "test_hier_idx.bin";
    write_embeddings_file(emb_path, index.items);
    write_index_file(idx_path, index);

    const ItemStore items = read_embeddings_file(emb_path);
    const HierIndex back = read_index_file(idx_path, items);
    CHECK(back.item_count() == 80);
    CHECK(serialize_index(back) == serialize_index(index));

    std::remove(emb_path.c_str());
    std::remove(idx_path.c_str());

    CHECK_THROWS_AS(read_embeddings_file("does_not_exist.bin"), io_error);
}

TEST_CASE("datagen outputs are unit vectors with coherent ground truth") {
    const auto gen = datagen::gen_clustered(120, 8, 4, 0.1, 53);
    CHECK(gen.items.count() == 120);
    CHECK(gen.item_cluster.size() == 120);
    CHECK(gen.centers.rows == 4);
    for (std::size_t i = 0; i < gen.items.count(); ++i) {
        double norm2 = 0.0;
        for (std::uint32_t j = 0; j < 8; ++j) norm2 += gen.items.vec(i)[j] * gen.items.vec(i)[j];
        CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-9));
        // Items sit closer to their own cluster center than to any other.
        const std::uint32_t c = gen.item_cluster[i];
        std::vector<double> own(gen.centers.row(c), gen.centers.row(c) + 8);
        std::vector<double> item(gen.items.vec(i), gen.items.vec(i) + 8);
        const double own_cos = cosine(item, own);
        for (std::uint32_t o = 0; o < 4; ++o) {
            if (o == c) continue;
            std::vector<double> other(gen.centers.row(o), gen.centers.row(o) + 8);
            CHECK(own_cos > cosine(item, other));
        }
    }

    const auto queries = datagen::gen_queries(gen.items, 30, 0.05, 59);
    CHECK(queries.queries.size() == 30);
    CHECK(queries.relevant.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(gen.items.by_id.contains(queries.relevant[i]));
        double norm2 = 0.0;
        for (double v : queries.queries[i]) norm2 += v * v;
        CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-9));
        // Low-noise queries stay close to their source item.
        const double* src = gen.items.vec(gen.items.by_id.at(queries.relevant[i]));
        CHECK(kernels::dot(queries.queries[i].data(), src, 8) > 0.9);
    }
}
