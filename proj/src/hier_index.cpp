#include "daer/hier_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "daer/error.hpp"
#include "daer/io.hpp"

namespace daer::hier {

ItemStore ItemStore::with_dim(std::uint32_t dim) {
    ItemStore s;
    s.dim = dim;
    return s;
}

void ItemStore::add(std::uint64_t id, const double* v) {
    if (dim == 0) throw dim_error("ItemStore: dim not set");
    if (by_id.contains(id))
        throw std::invalid_argument("ItemStore: duplicate id " + std::to_string(id));
    const double norm = l2_norm(v, dim);
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > 1e-6)
        throw std::invalid_argument("ItemStore: embedding for id " + std::to_string(id) +
                                    " is not unit-norm");
    by_id.emplace(id, ids.size());
    ids.push_back(id);
    const std::size_t base = data.size();
    data.insert(data.end(), v, v + dim);
    kernels::scale(data.data() + base, dim, 1.0 / norm);
}

namespace {

// Accessor over a subset of store rows.
struct Subset {
    const double* base;
    std::size_t dim;
    const std::uint32_t* idx;
    std::size_t count;

    const double* vec(std::size_t i) const { return base + static_cast<std::size_t>(idx[i]) * dim; }
};

std::vector<double> normalized_mean(const Subset& s, const std::vector<std::uint32_t>& members) {
    std::vector<double> mean(s.dim, 0.0);
    for (std::uint32_t m : members) kernels::axpy(1.0, s.vec(m), mean.data(), s.dim);
    kernels::scale(mean.data(), s.dim, 1.0 / static_cast<double>(members.size()));
    normalize(mean.data(), s.dim, "centroid");
    return mean;
}

struct SubsetKmeans {
    Mat centroids;
    std::vector<std::uint32_t> assignments;
    bool k_clamped = false;
};

// Core Lloyd loop over a subset; positions are subset-local.
SubsetKmeans kmeans_subset(const Subset& s, std::size_t k, std::size_t iters,
                           std::uint64_t seed) {
    if (s.count == 0) throw std::invalid_argument("kmeans: empty point set");
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    SubsetKmeans out;
    if (k > s.count) {
        k = s.count;
        out.k_clamped = true;
    }

    Rng rng(seed);
    Mat& c = out.centroids;
    c = Mat(k, s.dim);

    // k-means++ seeding on squared euclidean distance (= 2 - 2 cos for unit vectors).
    {
        std::size_t first = rng.index(s.count);
        std::copy_n(s.vec(first), s.dim, c.row(0));
        std::vector<double> d2(s.count);
        for (std::size_t j = 1; j < k; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < s.count; ++i) {
                double best = 2.0 - 2.0 * kernels::dot(s.vec(i), c.row(0), s.dim);
                for (std::size_t cc = 1; cc < j; ++cc) {
                    const double d = 2.0 - 2.0 * kernels::dot(s.vec(i), c.row(cc), s.dim);
                    if (d < best) best = d;
                }
                if (best < 0.0) best = 0.0;
                d2[i] = best;
                total += best;
            }
            std::size_t pick;
            if (total > 0.0) {
                const double r = rng.next_double() * total;
                double acc = 0.0;
                pick = s.count - 1;
                for (std::size_t i = 0; i < s.count; ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.index(s.count);  // all points coincide with chosen centroids
            }
            std::copy_n(s.vec(pick), s.dim, c.row(j));
        }
    }

    std::vector<std::uint32_t>& assign = out.assignments;
    assign.assign(s.count, 0);
    std::vector<std::uint32_t> prev;
    std::vector<std::uint32_t> cluster_size(k, 0);

    for (std::size_t iter = 0; iter < iters; ++iter) {
        // Assignment by max cosine, ties to the lowest centroid index.
        for (std::size_t i = 0; i < s.count; ++i) {
            std::size_t best = 0;
            double best_sim = kernels::dot(s.vec(i), c.row(0), s.dim);
            for (std::size_t cc = 1; cc < k; ++cc) {
                const double sim = kernels::dot(s.vec(i), c.row(cc), s.dim);
                if (sim > best_sim) {
                    best = cc;
                    best_sim = sim;
                }
            }
            assign[i] = static_cast<std::uint32_t>(best);
        }

        // Reseed empty clusters with the point farthest from its centroid.
        bool reseeded = false;
        std::fill(cluster_size.begin(), cluster_size.end(), 0);
        for (std::uint32_t a : assign) ++cluster_size[a];
        for (std::size_t cc = 0; cc < k; ++cc) {
            if (cluster_size[cc] != 0) continue;
            std::size_t worst = 0;
            double worst_sim = 2.0;
            for (std::size_t i = 0; i < s.count; ++i) {
                if (cluster_size[assign[i]] <= 1) continue;  // keep donors non-empty
                const double sim = kernels::dot(s.vec(i), c.row(assign[i]), s.dim);
                if (sim < worst_sim) {
                    worst = i;
                    worst_sim = sim;
                }
            }
            if (worst_sim >= 2.0) continue;  // no donor; cluster stays empty this round
            --cluster_size[assign[worst]];
            assign[worst] = static_cast<std::uint32_t>(cc);
            ++cluster_size[cc];
            reseeded = true;
        }

        const bool converged = !reseeded && iter > 0 && assign == prev;
        prev = assign;

        // Update: centroids become normalized means of the current assignment,
        // so the loop always ends consistent with `assignments`.
        std::vector<std::vector<std::uint32_t>> members(k);
        for (std::size_t i = 0; i < s.count; ++i) members[assign[i]].push_back(i);
        for (std::size_t cc = 0; cc < k; ++cc)
            if (!members[cc].empty()) {
                std::vector<double> mean = normalized_mean(s, members[cc]);
                std::copy(mean.begin(), mean.end(), c.row(cc));
            }

        if (converged) break;
    }
    return out;
}

}  // namespace

KmeansResult kmeans(const double* points, std::size_t count, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed) {
    std::vector<std::uint32_t> all(count);
    for (std::size_t i = 0; i < count; ++i) all[i] = static_cast<std::uint32_t>(i);
    Subset s{points, dim, all.data(), count};
    SubsetKmeans r = kmeans_subset(s, k, iters, seed);
    return KmeansResult{std::move(r.centroids), std::move(r.assignments), r.k_clamped};
}

namespace {

std::unique_ptr<IndexNode> build_node(const ItemStore& items,
                                      std::vector<std::uint32_t> subset,
                                      std::vector<double> centroid, std::uint32_t depth,
                                      const BuildConfig& cfg, std::uint64_t& node_counter) {
    auto node = std::make_unique<IndexNode>();
    node->centroid = std::move(centroid);
    node->level = depth;

    if (subset.size() <= cfg.leaf_capacity || depth >= cfg.levels) {
        node->item_ids.reserve(subset.size());
        node->item_idx.reserve(subset.size());
        for (std::uint32_t i : subset) {
            node->item_ids.push_back(items.ids[i]);
            node->item_idx.push_back(i);
        }
        return node;
    }

    Subset s{items.data.data(), items.dim, subset.data(), subset.size()};
    const std::uint64_t seed = mix_seed(cfg.seed, 0x4b4d4e53, node_counter++);
    SubsetKmeans km = kmeans_subset(s, cfg.branching, cfg.kmeans_iters, seed);

    const std::size_t k = km.centroids.rows;
    std::vector<std::vector<std::uint32_t>> groups(k);
    for (std::size_t i = 0; i < subset.size(); ++i)
        groups[km.assignments[i]].push_back(subset[i]);

    for (std::size_t cc = 0; cc < k; ++cc) {
        if (groups[cc].empty()) continue;  // possible when reseeding found no donor
        std::vector<double> child_centroid(km.centroids.row(cc),
                                           km.centroids.row(cc) + items.dim);
        node->children.push_back(build_node(items, std::move(groups[cc]),
                                            std::move(child_centroid), depth + 1, cfg,
                                            node_counter));
    }
    return node;
}

void index_walk(IndexNode* node, HierIndex& index) {
    node->node_id = index.node_count++;
    index.nodes.push_back(node);
    index.edge_offset.push_back(index.edge_count);
    index.edge_count += static_cast<std::uint32_t>(node->children.size());
    for (auto& child : node->children) index_walk(child.get(), index);
}

}  // namespace

void finalize_index(HierIndex& index) {
    index.node_count = 0;
    index.edge_count = 0;
    index.nodes.clear();
    index.edge_offset.clear();
    if (index.root) index_walk(index.root.get(), index);
    // Resolve leaf ids against the store.
    std::size_t total = 0;
    for (IndexNode* node : index.nodes) {
        if (!node->is_leaf()) continue;
        node->item_idx.resize(node->item_ids.size());
        for (std::size_t i = 0; i < node->item_ids.size(); ++i) {
            auto it = index.items.by_id.find(node->item_ids[i]);
            if (it == index.items.by_id.end())
                throw decode_error("index references unknown item id " +
                                   std::to_string(node->item_ids[i]));
            node->item_idx[i] = static_cast<std::uint32_t>(it->second);
        }
        total += node->item_ids.size();
    }
    if (index.root && total != index.items.count())
        throw decode_error("index leaves do not cover the item store");
}

HierIndex build_index(ItemStore items, const BuildConfig& cfg) {
    if (items.count() == 0) throw config_error("build_index: no items");
    if (cfg.levels < 1) throw config_error("build_index: levels must be >= 1");
    if (cfg.branching < 2) throw config_error("build_index: branching must be >= 2");
    if (cfg.leaf_capacity < 1)
        throw config_error("build_index: leaf_capacity must be >= 1");

    HierIndex index;
    index.dim = items.dim;
    index.items = std::move(items);

    std::vector<std::uint32_t> all(index.items.count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
    Subset s{index.items.data.data(), index.items.dim, all.data(), all.size()};
    std::vector<std::uint32_t> members(all.begin(), all.end());
    std::vector<double> root_centroid = normalized_mean(s, members);

    std::uint64_t node_counter = 0;
    index.root = build_node(index.items, std::move(all), std::move(root_centroid), 0, cfg,
                            node_counter);
    finalize_index(index);
    return index;
}

namespace {

constexpr char kMagic[8] = {'D', 'A', 'E', 'R', 'I', 'D', 'X', '1'};
constexpr std::uint32_t kVersion = 1;

void serialize_node(const IndexNode& node, std::vector<std::uint8_t>& out) {
    io::put_u8(out, node.is_leaf() ? 1 : 0);
    for (double v : node.centroid) io::put_f64(out, v);
    if (node.is_leaf()) {
        io::put_u64(out, node.item_ids.size());
        for (std::uint64_t id : node.item_ids) io::put_u64(out, id);
    } else {
        io::put_u32(out, static_cast<std::uint32_t>(node.children.size()));
        for (const auto& child : node.children) serialize_node(*child, out);
    }
}

std::unique_ptr<IndexNode> parse_node(io::Reader& r, std::uint32_t dim, std::uint32_t depth,
                                      std::uint64_t& items_seen, std::uint64_t item_count) {
    if (depth > 64) throw decode_error("index: nesting too deep");
    auto node = std::make_unique<IndexNode>();
    node->level = depth;
    const std::uint8_t tag = r.u8();
    if (tag > 1) throw decode_error("index: unknown node tag");
    node->centroid.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) node->centroid[i] = r.f64();
    if (tag == 1) {
        const std::uint64_t n = r.u64();
        if (n == 0) throw decode_error("index: empty leaf");
        if (items_seen + n > item_count) throw decode_error("index: more ids than declared");
        items_seen += n;
        node->item_ids.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) node->item_ids[i] = r.u64();
    } else {
        const std::uint32_t n = r.u32();
        if (n == 0) throw decode_error("index: internal node without children");
        node->children.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i)
            node->children.push_back(parse_node(r, dim, depth + 1, items_seen, item_count));
    }
    return node;
}

}  // namespace

std::vector<std::uint8_t> serialize_index(const HierIndex& index) {
    if (!index.root) throw std::invalid_argument("serialize_index: empty index");
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    io::put_u32(out, kVersion);
    io::put_u32(out, index.dim);
    io::put_u64(out, index.item_count());
    serialize_node(*index.root, out);
    return out;
}

namespace {

constexpr char kEmbMagic[8] = {'D', 'A', 'E', 'R', 'E', 'M', 'B', '1'};

}  // namespace

std::vector<std::uint8_t> serialize_embeddings(const ItemStore& items) {
    if (items.dim == 0) throw std::invalid_argument("serialize_embeddings: dim not set");
    std::vector<std::uint8_t> out;
    out.reserve(20 + items.count() * (8 + 4 * items.dim));
    out.insert(out.end(), kEmbMagic, kEmbMagic + 8);
    io::put_u32(out, items.dim);
    io::put_u64(out, items.count());
    for (std::size_t i = 0; i < items.count(); ++i) {
        io::put_u64(out, items.ids[i]);
        const double* v = items.vec(i);
        for (std::uint32_t j = 0; j < items.dim; ++j)
            io::put_f32(out, static_cast<float>(v[j]));
    }
    return out;
}

ItemStore deserialize_embeddings(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes.data(), bytes.size(), "embeddings");
    const auto magic = r.bytes(8);
    if (std::memcmp(magic.data(), kEmbMagic, 8) != 0) throw decode_error("embeddings: bad magic");
    const std::uint32_t dim = r.u32();
    if (dim == 0) throw decode_error("embeddings: zero dimension");
    const std::uint64_t count = r.u64();
    ItemStore items = ItemStore::with_dim(dim);
    std::vector<double> v(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t id = r.u64();
        for (std::uint32_t j = 0; j < dim; ++j) v[j] = static_cast<double>(r.f32());
        try {
            items.add(id, v.data());
        } catch (const std::invalid_argument& e) {
            throw decode_error(std::string("embeddings: ") + e.what());
        }
    }
    if (!r.done()) throw decode_error("embeddings: trailing bytes");
    return items;
}

void write_embeddings_file(const std::string& path, const ItemStore& items) {
    io::write_file_atomic(path, serialize_embeddings(items));
}

ItemStore read_embeddings_file(const std::string& path) {
    const std::vector<std::uint8_t> bytes = io::read_file(path);
    return deserialize_embeddings(bytes);
}

void write_index_file(const std::string& path, const HierIndex& index) {
    io::write_file_atomic(path, serialize_index(index));
}

HierIndex read_index_file(const std::string& path, ItemStore items) {
    const std::vector<std::uint8_t> bytes = io::read_file(path);
    return deserialize_index(bytes, std::move(items));
}

HierIndex deserialize_index(std::span<const std::uint8_t> bytes, ItemStore items) {
    io::Reader r(bytes.data(), bytes.size(), "index");
    const auto magic = r.bytes(8);
    if (std::memcmp(magic.data(), kMagic, 8) != 0) throw decode_error("index: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw decode_error("index: unsupported version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    if (dim == 0) throw decode_error("index: zero dimension");
    if (dim != items.dim) throw dim_error("index: dimension does not match item store");
    const std::uint64_t item_count = r.u64();
    if (item_count != items.count())
        throw decode_error("index: item count does not match store");

    HierIndex index;
    index.dim = dim;
    index.items = std::move(items);
    std::uint64_t items_seen = 0;
    index.root = parse_node(r, dim, 0, items_seen, item_count);
    if (items_seen != item_count)
        throw decode_error("index: declared item count does not match leaves");
    if (!r.done()) throw decode_error("index: trailing bytes");
    finalize_index(index);
    return index;
}

}  // namespace daer::hier
