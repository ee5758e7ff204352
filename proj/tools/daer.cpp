// Command-line entry point: data generation, training, index building,
// querying, benchmarking, attention export, and file inspection.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "daer/bench.hpp"
#include "daer/datagen.hpp"
#include "daer/ers.hpp"
#include "daer/hier_index.hpp"
#include "daer/io.hpp"
#include "daer/kernels.hpp"
#include "daer/log.hpp"
#include "daer/trainer.hpp"

namespace {

using json = nlohmann::json;
using namespace daer;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// --config file, then --set overrides; specific flags are layered on top by
// each subcommand, giving flag > override > file > default precedence.
std::map<std::string, std::string> base_kv(const std::string& config_path,
                                           const std::vector<std::string>& sets) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = io::load_kv_file(config_path);
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || trim(s.substr(0, eq)).empty())
            throw config_error("--set expects key=value, got '" + s + "'");
        kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    return kv;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json kv_json(const std::map<std::string, std::string>& kv) {
    json obj = json::object();
    for (const auto& [k, v] : kv) obj[k] = v;
    return obj;
}

json train_config_json(const trainer::TrainConfig& cfg) {
    json obj = json::object();
    std::istringstream ss(trainer::config_canonical(cfg));
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) obj[line.substr(0, eq)] = line.substr(eq + 1);
    }
    obj["out_dir"] = cfg.out_dir;
    obj["checkpoint_every"] = std::to_string(cfg.checkpoint_every);
    return obj;
}

// Output sink: a file when a path is given, stdout otherwise.
struct LineSink {
    std::ofstream file;
    bool to_file = false;

    explicit LineSink(const std::string& path) {
        if (!path.empty()) {
            file.open(path, std::ios::trunc);
            if (!file) throw io_error("cannot open " + path + " for writing");
            to_file = true;
        }
    }
    void line(const std::string& s) {
        if (to_file)
            file << s << '\n';
        else
            std::cout << s << '\n';
    }
};

std::vector<double> parse_hex_query(const std::string& hex, std::uint32_t dim) {
    const std::size_t want = static_cast<std::size_t>(dim) * 8;
    if (hex.size() != want)
        throw config_error("--hex: expected " + std::to_string(want) + " hex chars for dim " +
                           std::to_string(dim) + ", got " + std::to_string(hex.size()));
    auto nib = [](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
        throw config_error(std::string("--hex: invalid hex character '") + c + "'");
    };
    std::vector<std::uint8_t> bytes(hex.size() / 2);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>((nib(hex[2 * i]) << 4) | nib(hex[2 * i + 1]));
    io::Reader r(bytes.data(), bytes.size(), "hex query");
    std::vector<double> q(dim);
    for (std::uint32_t i = 0; i < dim; ++i) q[i] = static_cast<double>(r.f32());
    const double norm = l2_norm(q.data(), q.size());
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw config_error("--hex: query vector has degenerate norm");
    kernels::scale(q.data(), q.size(), 1.0 / norm);
    return q;
}

// ---- gen-data ----

struct GenDataArgs {
    std::string config, out;
    std::vector<std::string> sets;
    std::string kind = "uniform";
    std::uint64_t items = 1000, dim = 64, clusters = 16, seed = 1;
    double noise = 0.15;
};

int cmd_gen_data(const GenDataArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--kind")) kv["kind"] = a.kind;
    if (cmd->count("--items")) kv["items"] = std::to_string(a.items);
    if (cmd->count("--dim")) kv["dim"] = std::to_string(a.dim);
    if (cmd->count("--clusters")) kv["clusters"] = std::to_string(a.clusters);
    if (cmd->count("--noise")) kv["noise"] = fmt_double(a.noise);
    if (cmd->count("--seed")) kv["seed"] = std::to_string(a.seed);

    io::KvReader r(kv);
    const std::string kind = r.get_string("kind", "uniform");
    const std::size_t items = r.get_u64("items", 1000);
    const std::size_t dim = r.get_u64("dim", 64);
    const std::size_t clusters = r.get_u64("clusters", 16);
    const double noise = r.get_double("noise", 0.15);
    const std::uint64_t seed = r.get_u64("seed", 1);
    r.finish();

    hier::ItemStore store;
    if (kind == "uniform") {
        store = datagen::gen_uniform(items, dim, mix_seed(seed, stream::data, 1));
    } else if (kind == "clustered") {
        store = std::move(
            datagen::gen_clustered(items, dim, clusters, noise, mix_seed(seed, stream::data, 1))
                .items);
    } else {
        throw config_error("gen-data: unknown kind '" + kind + "'");
    }
    hier::write_embeddings_file(a.out, store);

    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "gen-data";
    hdr["kind"] = kind;
    hdr["items"] = items;
    hdr["dim"] = dim;
    if (kind == "clustered") {
        hdr["clusters"] = clusters;
        hdr["noise"] = noise;
    }
    hdr["seed"] = seed;
    hdr["out"] = a.out;
    std::cout << hdr.dump() << '\n';
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string config, out, metrics, resume;
    std::vector<std::string> sets;
    std::uint64_t seed = 0, budget = 0;
    double alpha = 0.0;
};

int cmd_train(const TrainArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--seed")) kv["seed"] = std::to_string(a.seed);
    if (cmd->count("--alpha")) kv["alpha"] = fmt_double(a.alpha);
    if (cmd->count("--budget")) kv["mcts.budget"] = std::to_string(a.budget);
    if (cmd->count("--out")) kv["out_dir"] = a.out;

    const trainer::TrainConfig cfg = trainer::config_from_kv(kv);
    trainer::Trainer t(cfg);
    if (!a.resume.empty()) t.load_checkpoint(a.resume);

    std::string metrics_path = a.metrics;
    if (metrics_path.empty() && !cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics_path = cfg.out_dir + "/metrics.jsonl";
    }
    LineSink sink(metrics_path);

    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "train";
    hdr["config"] = train_config_json(t.config());
    hdr["resumed_from"] = a.resume;
    hdr["start_step"] = t.global_step();
    sink.line(hdr.dump());

    t.set_metrics_sink([&sink](const trainer::StepRecord& r) {
        json rec;
        rec["type"] = "step";
        rec["step"] = r.step;
        rec["phase"] = r.phase;
        rec["loss"] = r.loss;
        rec["reward"] = r.reward;
        rec["mcts_ms"] = r.mcts_ms;
        rec["step_ms"] = r.step_ms;
        sink.line(rec.dump());
    });
    t.run();

    json done;
    done["type"] = "done";
    done["steps"] = t.global_step();
    done["mcts_share"] = t.mcts_share();
    done["skipped_steps"] = t.skipped_steps();
    done["tau"] = t.model().tau;
    done["planted_mass"] = t.eval_planted_mass(64);
    sink.line(done.dump());
    if (sink.to_file) std::cout << done.dump() << '\n';
    return 0;
}

// ---- build-index ----

struct BuildIndexArgs {
    std::string config, in, out;
    std::vector<std::string> sets;
    std::uint64_t levels = 3, branching = 8, leaf_capacity = 32, iters = 25, seed = 0;
};

int cmd_build_index(const BuildIndexArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--levels")) kv["levels"] = std::to_string(a.levels);
    if (cmd->count("--branching")) kv["branching"] = std::to_string(a.branching);
    if (cmd->count("--leaf-capacity")) kv["leaf_capacity"] = std::to_string(a.leaf_capacity);
    if (cmd->count("--iters")) kv["kmeans_iters"] = std::to_string(a.iters);
    if (cmd->count("--seed")) kv["seed"] = std::to_string(a.seed);

    io::KvReader r(kv);
    hier::BuildConfig cfg;
    cfg.levels = r.get_u64("levels", cfg.levels);
    cfg.branching = r.get_u64("branching", cfg.branching);
    cfg.leaf_capacity = r.get_u64("leaf_capacity", cfg.leaf_capacity);
    cfg.kmeans_iters = r.get_u64("kmeans_iters", cfg.kmeans_iters);
    cfg.seed = r.get_u64("seed", cfg.seed);
    r.finish();

    hier::ItemStore store = hier::read_embeddings_file(a.in);
    const hier::HierIndex index = hier::build_index(std::move(store), cfg);
    hier::write_index_file(a.out, index);

    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "build-index";
    hdr["in"] = a.in;
    hdr["out"] = a.out;
    hdr["levels"] = cfg.levels;
    hdr["branching"] = cfg.branching;
    hdr["leaf_capacity"] = cfg.leaf_capacity;
    hdr["kmeans_iters"] = cfg.kmeans_iters;
    hdr["seed"] = cfg.seed;
    hdr["items"] = index.item_count();
    hdr["nodes"] = index.node_count;
    hdr["edges"] = index.edge_count;
    std::cout << hdr.dump() << '\n';
    return 0;
}

// ---- query ----

struct QueryArgs {
    std::string config, db, index, queries, hex, out;
    std::vector<std::string> sets;
    std::string method = "ers", stats_mode = "fresh";
    std::uint64_t k = 10, i_max = 64, push_width = 2;
    double lambda1 = 0.6, lambda2 = 0.2, lambda3 = 0.2, success_threshold = 0.7;
    bool re_expand = false;
};

int cmd_query(const QueryArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--method")) kv["method"] = a.method;
    if (cmd->count("--k")) kv["k"] = std::to_string(a.k);
    if (cmd->count("--i-max")) kv["ers.i_max"] = std::to_string(a.i_max);
    if (cmd->count("--lambda1")) kv["ers.lambda1"] = fmt_double(a.lambda1);
    if (cmd->count("--lambda2")) kv["ers.lambda2"] = fmt_double(a.lambda2);
    if (cmd->count("--lambda3")) kv["ers.lambda3"] = fmt_double(a.lambda3);
    if (cmd->count("--success-threshold"))
        kv["ers.success_threshold"] = fmt_double(a.success_threshold);
    if (cmd->count("--push-width")) kv["ers.push_width"] = std::to_string(a.push_width);
    if (cmd->count("--re-expand")) kv["ers.re_expand"] = "1";
    if (cmd->count("--stats-mode")) kv["stats"] = a.stats_mode;

    io::KvReader r(kv);
    const std::string method_name = r.get_string("method", "ers");
    const bench::Method method = bench::method_from_string(method_name);
    const std::size_t k = r.get_u64("k", 10);
    ers::ErsConfig ecfg;
    ecfg.lambda1 = r.get_double("ers.lambda1", ecfg.lambda1);
    ecfg.lambda2 = r.get_double("ers.lambda2", ecfg.lambda2);
    ecfg.lambda3 = r.get_double("ers.lambda3", ecfg.lambda3);
    ecfg.epsilon = r.get_double("ers.epsilon", ecfg.epsilon);
    ecfg.i_max = r.get_u64("ers.i_max", ecfg.i_max);
    ecfg.success_threshold = r.get_double("ers.success_threshold", ecfg.success_threshold);
    ecfg.push_width = r.get_u64("ers.push_width", ecfg.push_width);
    ecfg.re_expand = r.get_bool("ers.re_expand", ecfg.re_expand);
    ecfg.k = k;
    const std::string stats_mode = r.get_string("stats", "fresh");
    r.finish();
    if (stats_mode != "fresh" && stats_mode != "persistent")
        throw config_error("query: stats mode must be fresh or persistent, got '" + stats_mode +
                           "'");
    if (a.queries.empty() == a.hex.empty())
        throw config_error("query: exactly one of --queries or --hex is required");

    hier::ItemStore store = hier::read_embeddings_file(a.db);
    const std::uint32_t dim = store.dim;

    hier::HierIndex index;
    const bool need_index = method != bench::Method::knn;
    if (need_index) {
        if (a.index.empty()) throw config_error("query: --index is required for " + method_name);
        index = hier::read_index_file(a.index, std::move(store));
    }
    const hier::ItemStore& items = need_index ? index.items : store;

    std::vector<std::uint64_t> query_ids;
    Mat queries;
    if (!a.hex.empty()) {
        const std::vector<double> q = parse_hex_query(a.hex, dim);
        queries = Mat(1, dim);
        std::copy(q.begin(), q.end(), queries.row(0));
        query_ids.push_back(0);
    } else {
        const hier::ItemStore qs = hier::read_embeddings_file(a.queries);
        if (qs.dim != dim) throw dim_error("query: query dim does not match database dim");
        queries = Mat(qs.count(), dim);
        for (std::size_t i = 0; i < qs.count(); ++i) {
            std::copy(qs.vec(i), qs.vec(i) + dim, queries.row(i));
            query_ids.push_back(qs.ids[i]);
        }
    }

    LineSink sink(a.out);
    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "query";
    hdr["method"] = method_name;
    hdr["k"] = k;
    hdr["stats"] = stats_mode;
    hdr["db"] = a.db;
    hdr["index"] = a.index;
    hdr["queries"] = queries.rows;
    if (method == bench::Method::ers) {
        hdr["ers"] = {{"lambda1", ecfg.lambda1},
                      {"lambda2", ecfg.lambda2},
                      {"lambda3", ecfg.lambda3},
                      {"epsilon", ecfg.epsilon},
                      {"i_max", ecfg.i_max},
                      {"success_threshold", ecfg.success_threshold},
                      {"push_width", ecfg.push_width},
                      {"re_expand", ecfg.re_expand}};
    }
    sink.line(hdr.dump());

    ers::QueryStats stats;
    if (need_index) stats.reset(index);
    ers::QueryStats* stats_ptr = stats_mode == "persistent" ? &stats : nullptr;
    for (std::size_t i = 0; i < queries.rows; ++i) {
        ers::RetrieveResult res;
        switch (method) {
            case bench::Method::knn: res = ers::knn_exact(queries.row(i), items, k); break;
            case bench::Method::greedy: res = ers::greedy_retrieve(queries.row(i), index, k); break;
            case bench::Method::ers:
                res = ers::ers_retrieve(queries.row(i), index, ecfg, stats_ptr);
                break;
        }
        for (std::size_t rank = 0; rank < res.items.size(); ++rank) {
            json rec;
            rec["query_id"] = query_ids[i];
            rec["rank"] = rank + 1;
            rec["item_id"] = res.items[rank].id;
            rec["similarity"] = res.items[rank].similarity;
            rec["items_scored"] = res.items_scored;
            rec["nodes_visited"] = res.nodes_visited;
            sink.line(rec.dump());
        }
    }
    return 0;
}

// ---- bench ----

struct BenchArgs {
    std::string config, out;
    std::vector<std::string> sets;
    std::uint64_t seed = 0, i_max = 0, k = 0;
    double lambda1 = 0, lambda2 = 0, lambda3 = 0, alpha = 0;
};

std::vector<std::string> split_commas(const std::string& joined) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= joined.size()) {
        const std::size_t comma = joined.find(',', start);
        const std::string token =
            joined.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!trim(token).empty()) out.push_back(trim(token));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int cmd_bench(const BenchArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--seed")) kv["seed"] = std::to_string(a.seed);
    if (cmd->count("--i-max")) kv["ers.i_max"] = std::to_string(a.i_max);
    if (cmd->count("--k")) kv["k"] = std::to_string(a.k);
    if (cmd->count("--lambda1")) kv["ers.lambda1"] = fmt_double(a.lambda1);
    if (cmd->count("--lambda2")) kv["ers.lambda2"] = fmt_double(a.lambda2);
    if (cmd->count("--lambda3")) kv["ers.lambda3"] = fmt_double(a.lambda3);

    std::string jsonl_path, csv_path;
    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        jsonl_path = a.out + "/bench.jsonl";
        csv_path = a.out + "/summary.csv";
    }
    LineSink sink(jsonl_path);
    const auto emit = [&sink](const std::string& line) { sink.line(line); };

    const auto kind_it = kv.find("kind");
    if (kind_it != kv.end() && kind_it->second == "ablation") {
        // Reward-weight grid over the trainer; train.* keys configure runs.
        std::map<std::string, std::string> train_kv;
        bench::AblationSpec spec;
        std::map<std::string, std::string> rest;
        for (const auto& [key, value] : kv) {
            if (key.rfind("train.", 0) == 0)
                train_kv[key.substr(6)] = value;
            else if (key != "kind")
                rest[key] = value;
        }
        io::KvReader r(rest);
        if (r.has("ablation.alphas")) {
            spec.alphas.clear();
            for (const auto& tok : split_commas(r.get_string("ablation.alphas", "")))
                spec.alphas.push_back(std::stod(tok));
        }
        if (r.has("ablation.seeds")) {
            spec.seeds.clear();
            for (const auto& tok : split_commas(r.get_string("ablation.seeds", "")))
                spec.seeds.push_back(std::stoull(tok));
        }
        spec.eval_samples = r.get_u64("ablation.eval_samples", spec.eval_samples);
        if (cmd->count("--seed")) {
            // --seed replaces the seed list for single-cell runs.
            spec.seeds = {a.seed};
            r.get_u64("seed", 0);
        }
        if (cmd->count("--alpha")) spec.alphas = {a.alpha};
        r.finish();
        spec.base = trainer::config_from_kv(train_kv);

        json hdr;
        hdr["type"] = "config";
        hdr["command"] = "bench";
        hdr["kind"] = "ablation";
        hdr["alphas"] = spec.alphas;
        hdr["seeds"] = spec.seeds;
        hdr["train"] = train_config_json(spec.base);
        emit(hdr.dump());

        const auto cells = bench::run_ablation_grid(spec, emit);
        if (!csv_path.empty()) {
            std::string csv = "alpha,seed,final_loss,planted_mass,mcts_share\n";
            char buf[256];
            for (const auto& c : cells) {
                std::snprintf(buf, sizeof(buf), "%.6g,%llu,%.6g,%.6g,%.6g\n", c.alpha,
                              static_cast<unsigned long long>(c.seed), c.final_loss,
                              c.planted_mass, c.mcts_share);
                csv += buf;
            }
            io::write_text_atomic(csv_path, csv);
        }
        return 0;
    }

    const bench::ScenarioSpec spec = bench::scenario_from_kv(kv);
    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "bench";
    hdr["scenario"] = kv_json(kv);
    emit(hdr.dump());
    const bench::BenchResult result = bench::run_benchmark(spec, emit);
    if (!csv_path.empty()) io::write_text_atomic(csv_path, bench::csv_summary(result));
    return 0;
}

// ---- export-attn ----

struct ExportArgs {
    std::string config, out, resume;
    std::vector<std::string> sets;
    std::uint64_t seed = 0, budget = 0, salt = 0;
    double alpha = 0.0;
};

int cmd_export_attn(const ExportArgs& a, const CLI::App* cmd) {
    auto kv = base_kv(a.config, a.sets);
    if (cmd->count("--seed")) kv["seed"] = std::to_string(a.seed);
    if (cmd->count("--alpha")) kv["alpha"] = fmt_double(a.alpha);
    if (cmd->count("--budget")) kv["mcts.budget"] = std::to_string(a.budget);
    kv["out_dir"] = "";  // export never writes checkpoints

    const trainer::TrainConfig cfg = trainer::config_from_kv(kv);
    trainer::Trainer t(cfg);
    if (!a.resume.empty()) t.load_checkpoint(a.resume);

    std::filesystem::create_directories(a.out);
    const auto pair = t.export_attention(a.salt);
    io::write_matrix_csv(a.out + "/a_initial.csv", pair.initial);
    io::write_matrix_csv(a.out + "/a_optimized.csv", pair.optimized);

    json hdr;
    hdr["type"] = "config";
    hdr["command"] = "export-attn";
    hdr["config"] = train_config_json(t.config());
    hdr["resumed_from"] = a.resume;
    hdr["salt"] = a.salt;
    hdr["rows"] = pair.initial.rows;
    hdr["cols"] = pair.initial.cols;
    hdr["out"] = a.out;
    std::cout << hdr.dump() << '\n';
    return 0;
}

// ---- inspect ----

json inspect_index_bytes(io::Reader& r, std::uint32_t dim) {
    // Walks the preorder node records without needing the item store.
    std::uint64_t nodes = 0, leaves = 0, ids = 0;
    std::uint32_t max_depth = 0;
    struct Frame {
        std::uint32_t remaining;
        std::uint32_t depth;
    };
    std::vector<Frame> stack;
    stack.push_back({1, 0});
    while (!stack.empty()) {
        if (stack.back().remaining == 0) {
            stack.pop_back();
            continue;
        }
        --stack.back().remaining;
        const std::uint32_t depth = stack.back().depth;
        max_depth = std::max(max_depth, depth);
        const std::uint8_t tag = r.u8();
        if (tag > 1) throw decode_error("index: bad node tag");
        for (std::uint32_t i = 0; i < dim; ++i) r.f64();
        ++nodes;
        if (tag == 1) {
            ++leaves;
            const std::uint64_t count = r.u64();
            for (std::uint64_t i = 0; i < count; ++i) r.u64();
            ids += count;
        } else {
            const std::uint32_t children = r.u32();
            if (children == 0) throw decode_error("index: internal node with zero children");
            if (depth > 64) throw decode_error("index: tree too deep");
            stack.push_back({children, depth + 1});
        }
    }
    json rec;
    rec["nodes"] = nodes;
    rec["leaves"] = leaves;
    rec["leaf_ids"] = ids;
    rec["max_depth"] = max_depth;
    return rec;
}

int cmd_inspect(const std::string& path) {
    const auto bytes = io::read_file(path);
    if (bytes.size() < 8) throw decode_error("inspect: file too short for a magic header");
    const std::string magic(bytes.begin(), bytes.begin() + 8);
    json rec;
    rec["file"] = path;
    rec["magic"] = magic;
    if (magic == "DAEREMB1") {
        const hier::ItemStore store = hier::deserialize_embeddings(bytes);
        rec["type"] = "embeddings";
        rec["dim"] = store.dim;
        rec["count"] = store.count();
    } else if (magic == "DAERIDX1") {
        io::Reader r(bytes.data(), bytes.size(), "index");
        r.bytes(8);
        rec["type"] = "index";
        rec["version"] = r.u32();
        const std::uint32_t dim = r.u32();
        rec["dim"] = dim;
        rec["items"] = r.u64();
        if (dim == 0) throw decode_error("index: zero dimension");
        const json walk = inspect_index_bytes(r, dim);
        if (!r.done()) throw decode_error("index: trailing bytes");
        rec.update(walk);
    } else if (magic == "DAERCKPT") {
        io::Reader r(bytes.data(), bytes.size(), "checkpoint");
        r.bytes(8);
        rec["type"] = "checkpoint";
        rec["version"] = r.u32();
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(r.u64()));
        rec["config_hash"] = hex;
        rec["seed"] = r.u64();
        rec["step"] = r.u64();
        rec["adam_steps"] = r.u64();
        rec["skipped_steps"] = r.u64();
    } else {
        throw decode_error("inspect: unknown file magic '" + magic + "'");
    }
    std::cout << rec.dump() << '\n';
    return 0;
}

void emit_error(const char* kind, const std::string& message) {
    json rec;
    rec["error"] = kind;
    rec["message"] = message;
    std::cerr << rec.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention refinement and hierarchical retrieval toolkit"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic embedding database");
    gen_data->add_option("--config", gd.config, "key=value config file");
    gen_data->add_option("--set", gd.sets, "override key=value (repeatable)");
    gen_data->add_option("--kind", gd.kind, "uniform|clustered");
    gen_data->add_option("--items", gd.items, "database size");
    gen_data->add_option("--dim", gd.dim, "embedding dimension");
    gen_data->add_option("--clusters", gd.clusters, "cluster count (clustered)");
    gen_data->add_option("--noise", gd.noise, "within-cluster noise (clustered)");
    gen_data->add_option("--seed", gd.seed, "rng seed");
    gen_data->add_option("--out", gd.out, "output embedding file")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "run two-phase contrastive training");
    train->add_option("--config", tr.config, "key=value config file");
    train->add_option("--set", tr.sets, "override key=value (repeatable)");
    train->add_option("--seed", tr.seed, "master seed");
    train->add_option("--alpha", tr.alpha, "hybrid reward weight");
    train->add_option("--budget", tr.budget, "search iterations per refinement");
    train->add_option("--out", tr.out, "output directory (checkpoints + metrics.jsonl)");
    train->add_option("--metrics", tr.metrics, "metrics JSONL path (overrides --out default)");
    train->add_option("--resume", tr.resume, "checkpoint file to resume from");

    BuildIndexArgs bi;
    auto* build_index = app.add_subcommand("build-index", "cluster a database into a tree index");
    build_index->add_option("--config", bi.config, "key=value config file");
    build_index->add_option("--set", bi.sets, "override key=value (repeatable)");
    build_index->add_option("--in", bi.in, "input embedding file")->required();
    build_index->add_option("--out", bi.out, "output index file")->required();
    build_index->add_option("--levels", bi.levels, "max tree depth");
    build_index->add_option("--branching", bi.branching, "children per node");
    build_index->add_option("--leaf-capacity", bi.leaf_capacity, "max items per leaf");
    build_index->add_option("--iters", bi.iters, "k-means iterations");
    build_index->add_option("--seed", bi.seed, "clustering seed");

    QueryArgs qa;
    auto* query = app.add_subcommand("query", "retrieve top-k items for query embeddings");
    query->add_option("--config", qa.config, "key=value config file");
    query->add_option("--set", qa.sets, "override key=value (repeatable)");
    query->add_option("--db", qa.db, "database embedding file")->required();
    query->add_option("--index", qa.index, "index file (greedy/ers)");
    query->add_option("--queries", qa.queries, "query embedding file");
    query->add_option("--hex", qa.hex, "one query as little-endian f32 hex");
    query->add_option("--method", qa.method, "knn|greedy|ers");
    query->add_option("--k", qa.k, "results per query");
    query->add_option("--i-max", qa.i_max, "frontier pop budget");
    query->add_option("--lambda1", qa.lambda1, "similarity weight");
    query->add_option("--lambda2", qa.lambda2, "success-rate weight");
    query->add_option("--lambda3", qa.lambda3, "exploration weight");
    query->add_option("--success-threshold", qa.success_threshold, "leaf success similarity");
    query->add_option("--push-width", qa.push_width, "children pushed per expansion");
    query->add_flag("--re-expand", qa.re_expand, "re-enqueue nodes until all children pushed");
    query->add_option("--stats-mode", qa.stats_mode, "fresh|persistent");
    query->add_option("--out", qa.out, "JSONL output path (default stdout)");

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "run a retrieval scenario or ablation grid");
    bench_cmd->add_option("--config", ba.config, "scenario config file");
    bench_cmd->add_option("--set", ba.sets, "override key=value (repeatable)");
    bench_cmd->add_option("--seed", ba.seed, "scenario seed");
    bench_cmd->add_option("--i-max", ba.i_max, "frontier pop budget");
    bench_cmd->add_option("--k", ba.k, "results per query");
    bench_cmd->add_option("--lambda1", ba.lambda1, "similarity weight");
    bench_cmd->add_option("--lambda2", ba.lambda2, "success-rate weight");
    bench_cmd->add_option("--lambda3", ba.lambda3, "exploration weight");
    bench_cmd->add_option("--alpha", ba.alpha, "single-alpha override (ablation)");
    bench_cmd->add_option("--out", ba.out, "output directory (bench.jsonl + summary.csv)");

    ExportArgs ea;
    auto* export_attn =
        app.add_subcommand("export-attn", "write initial and refined attention as CSV");
    export_attn->add_option("--config", ea.config, "train config file");
    export_attn->add_option("--set", ea.sets, "override key=value (repeatable)");
    export_attn->add_option("--seed", ea.seed, "master seed");
    export_attn->add_option("--alpha", ea.alpha, "hybrid reward weight");
    export_attn->add_option("--budget", ea.budget, "search iterations");
    export_attn->add_option("--salt", ea.salt, "sample selector");
    export_attn->add_option("--resume", ea.resume, "checkpoint to export from");
    export_attn->add_option("--out", ea.out, "output directory")->required();

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "print the header of an emitted file");
    inspect->add_option("file", inspect_path, "file to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(gen_data)) return cmd_gen_data(gd, gen_data);
        if (app.got_subcommand(train)) return cmd_train(tr, train);
        if (app.got_subcommand(build_index)) return cmd_build_index(bi, build_index);
        if (app.got_subcommand(query)) return cmd_query(qa, query);
        if (app.got_subcommand(bench_cmd)) return cmd_bench(ba, bench_cmd);
        if (app.got_subcommand(export_attn)) return cmd_export_attn(ea, export_attn);
        if (app.got_subcommand(inspect)) return cmd_inspect(inspect_path);
    } catch (const config_error& e) {
        emit_error("config", e.what());
        return 2;
    } catch (const dim_error& e) {
        emit_error("dimension", e.what());
        return 5;
    } catch (const decode_error& e) {
        emit_error("decode", e.what());
        return 4;
    } catch (const io_error& e) {
        emit_error("io", e.what());
        return 3;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 1;
    }
    return 0;
}
