#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "daer/matrix.hpp"
#include "daer/rng.hpp"

// Multi-level centroid tree over a unit-vector embedding database, built with
// k-means (k-means++ seeding, max-cosine assignment, renormalized centroids).
namespace daer::hier {

// Flat store of unit embeddings keyed by opaque 64-bit ids.
struct ItemStore {
    std::uint32_t dim = 0;
    std::vector<std::uint64_t> ids;
    std::vector<double> data;  // count x dim, row-major
    std::unordered_map<std::uint64_t, std::size_t> by_id;

    std::size_t count() const { return ids.size(); }
    const double* vec(std::size_t idx) const { return data.data() + idx * dim; }

    // Validates dimension, id uniqueness, and unit norm (within 1e-6), then
    // renormalizes in double so downstream similarities share one exact store.
    void add(std::uint64_t id, const double* v);

    static ItemStore with_dim(std::uint32_t dim);
};

struct BuildConfig {
    std::size_t levels = 3;
    std::size_t branching = 8;
    std::size_t leaf_capacity = 32;
    std::size_t kmeans_iters = 25;
    std::uint64_t seed = 0;
};

struct IndexNode {
    std::vector<double> centroid;  // unit
    std::uint32_t level = 0;
    std::uint32_t node_id = 0;  // preorder, assigned at finalize
    std::vector<std::unique_ptr<IndexNode>> children;
    std::vector<std::uint64_t> item_ids;   // leaves only
    std::vector<std::uint32_t> item_idx;   // store indices, resolved at finalize

    bool is_leaf() const { return children.empty(); }
};

struct HierIndex {
    std::uint32_t dim = 0;
    std::unique_ptr<IndexNode> root;
    ItemStore items;

    // Derived at finalize: preorder node table and flat edge numbering.
    std::uint32_t node_count = 0;
    std::uint32_t edge_count = 0;
    std::vector<IndexNode*> nodes;           // by node_id
    std::vector<std::uint32_t> edge_offset;  // per node, base of its child edges

    std::size_t item_count() const { return items.count(); }
};

struct KmeansResult {
    Mat centroids;  // k x dim, unit rows
    std::vector<std::uint32_t> assignments;
    bool k_clamped = false;
};

// Lloyd with k-means++ seeding; assignment by max cosine; centroids are
// renormalized means of their final assignment; empty clusters reseeded with
// the point farthest from its centroid. Deterministic given seed.
// k > count clamps k and sets k_clamped.
KmeansResult kmeans(const double* points, std::size_t count, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed);

// Recursive clustering with `branching` per level, down to `levels` or until a
// node holds <= leaf_capacity items. Every item lands in exactly one leaf;
// each node's centroid is the normalized mean of its subtree's items.
HierIndex build_index(ItemStore items, const BuildConfig& cfg);

// Rebuild node ids, node/edge tables, and leaf store indices.
void finalize_index(HierIndex& index);

// Tree bytes: magic "DAERIDX1", u32 version, u32 dim, u64 item count, then
// preorder records (u8 tag, centroid f64s, child count or id list).
std::vector<std::uint8_t> serialize_index(const HierIndex& index);

// Rebuilds the index over `items`; every leaf id must resolve and the id sets
// must match exactly. Throws decode_error on malformed bytes.
HierIndex deserialize_index(std::span<const std::uint8_t> bytes, ItemStore items);

// Embedding database: magic "DAEREMB1", u32 dim, u64 count, then
// count x (u64 id + dim little-endian f32). Ingestion re-checks unit norms.
std::vector<std::uint8_t> serialize_embeddings(const ItemStore& items);
ItemStore deserialize_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings_file(const std::string& path, const ItemStore& items);
ItemStore read_embeddings_file(const std::string& path);

void write_index_file(const std::string& path, const HierIndex& index);
HierIndex read_index_file(const std::string& path, ItemStore items);

}  // namespace daer::hier
