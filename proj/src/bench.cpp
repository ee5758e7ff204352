#include "daer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "json.hpp"

#include "daer/io.hpp"
#include "daer/log.hpp"

namespace daer::bench {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Nearest-rank percentile of an unsorted sample.
double percentile(std::vector<double> xs, double p) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const std::size_t rank =
        std::min(xs.size() - 1,
                 static_cast<std::size_t>(std::ceil(p * static_cast<double>(xs.size()))) == 0
                     ? 0
                     : static_cast<std::size_t>(std::ceil(p * static_cast<double>(xs.size()))) - 1);
    return xs[rank];
}

std::vector<std::uint64_t> ranked_ids(const ers::RetrieveResult& r) {
    std::vector<std::uint64_t> ids;
    ids.reserve(r.items.size());
    for (const auto& c : r.items) ids.push_back(c.id);
    return ids;
}

double overlap_fraction(const std::vector<std::uint64_t>& got,
                        const std::vector<std::uint64_t>& oracle) {
    if (oracle.empty()) return 0.0;
    const std::unordered_set<std::uint64_t> ref(oracle.begin(), oracle.end());
    std::size_t hits = 0;
    for (std::uint64_t id : got)
        if (ref.contains(id)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(oracle.size());
}

struct QueryOutcome {
    ers::RetrieveResult result;
    double latency_ms = 0.0;
};

// One retrieval dispatch; greedy and knn ignore the stats argument.
QueryOutcome run_query(Method m, const double* q, const hier::HierIndex& index,
                       const ScenarioSpec& spec, ers::QueryStats* stats) {
    QueryOutcome out;
    const auto t0 = Clock::now();
    switch (m) {
        case Method::knn: out.result = ers::knn_exact(q, index.items, spec.k); break;
        case Method::greedy: out.result = ers::greedy_retrieve(q, index, spec.k); break;
        case Method::ers: out.result = ers::ers_retrieve(q, index, spec.ers, stats); break;
    }
    out.latency_ms = ms_since(t0);
    return out;
}

struct MethodAccum {
    metrics::MetricAccumulator acc;
    std::vector<double> latencies;
    double items_scored_sum = 0.0;
    double nodes_visited_sum = 0.0;
    double oracle_overlap_sum = 0.0;
    std::size_t n = 0;

    explicit MethodAccum(std::size_t k)
        : acc(std::vector<std::size_t>{1, 5, std::max<std::size_t>(k, 1)}) {}
};

MethodSummary summarize(Method m, MethodAccum& a, std::size_t db_items) {
    MethodSummary s;
    s.method = m;
    s.metrics = a.acc.report();
    s.oracle_recall = a.n ? a.oracle_overlap_sum / static_cast<double>(a.n) : 0.0;
    s.latency.mean_ms = 0.0;
    for (double v : a.latencies) s.latency.mean_ms += v;
    double total_ms = s.latency.mean_ms;
    if (a.n) s.latency.mean_ms /= static_cast<double>(a.n);
    s.latency.p50_ms = percentile(a.latencies, 0.50);
    s.latency.p95_ms = percentile(a.latencies, 0.95);
    total_ms = std::max(total_ms, 1e-9);
    s.latency.qps = static_cast<double>(a.n) * 1000.0 / total_ms;
    s.latency.items_scored_mean = a.n ? a.items_scored_sum / static_cast<double>(a.n) : 0.0;
    s.items_scored_pct =
        db_items ? 100.0 * s.latency.items_scored_mean / static_cast<double>(db_items) : 0.0;
    s.nodes_visited_mean = a.n ? a.nodes_visited_sum / static_cast<double>(a.n) : 0.0;
    return s;
}

json summary_json(const MethodSummary& s, std::size_t n_queries) {
    json rec;
    rec["type"] = "summary";
    rec["method"] = method_name(s.method);
    rec["n_queries"] = n_queries;
    for (const auto& [k, v] : s.metrics.recall_at) rec["recall_at"][std::to_string(k)] = v;
    for (const auto& [k, v] : s.metrics.rr_at) rec["rr_at"][std::to_string(k)] = v;
    rec["ndcg_at_5"] = s.metrics.ndcg_at_5;
    rec["mean_ap"] = s.metrics.mean_ap;
    rec["oracle_recall"] = s.oracle_recall;
    rec["latency_ms"] = {{"mean", s.latency.mean_ms},
                         {"p50", s.latency.p50_ms},
                         {"p95", s.latency.p95_ms}};
    rec["qps"] = s.latency.qps;
    rec["items_scored_mean"] = s.latency.items_scored_mean;
    rec["items_scored_pct"] = s.items_scored_pct;
    rec["nodes_visited_mean"] = s.nodes_visited_mean;
    return rec;
}

void validate(const ScenarioSpec& spec) {
    if (spec.kind != "clustered" && spec.kind != "uniform" && spec.kind != "adversarial")
        throw config_error("scenario: unknown kind '" + spec.kind + "'");
    if (spec.methods.empty()) throw config_error("scenario: methods must be non-empty");
    if (spec.items == 0 || spec.dim == 0) throw config_error("scenario: items and dim must be positive");
    if (spec.kind == "clustered" && spec.clusters == 0)
        throw config_error("scenario: clusters must be positive");
    if (spec.kind == "adversarial" ? spec.instances == 0 : spec.queries == 0)
        throw config_error("scenario: query count must be positive");
    if (spec.k == 0) throw config_error("scenario: k must be positive");
}

}  // namespace

Method method_from_string(const std::string& name) {
    if (name == "knn") return Method::knn;
    if (name == "greedy") return Method::greedy;
    if (name == "ers") return Method::ers;
    throw config_error("unknown method: " + name);
}

const char* method_name(Method m) {
    switch (m) {
        case Method::knn: return "knn";
        case Method::greedy: return "greedy";
        case Method::ers: return "ers";
    }
    return "knn";
}

ScenarioSpec scenario_from_kv(const std::map<std::string, std::string>& kv) {
    io::KvReader r(kv);
    ScenarioSpec spec;
    spec.kind = r.get_string("kind", spec.kind);
    spec.items = r.get_u64("items", spec.items);
    spec.dim = r.get_u64("dim", spec.dim);
    spec.clusters = r.get_u64("clusters", spec.clusters);
    spec.item_noise = r.get_double("item_noise", spec.item_noise);
    spec.queries = r.get_u64("queries", spec.queries);
    spec.query_noise = r.get_double("query_noise", spec.query_noise);
    spec.instances = r.get_u64("instances", spec.instances);
    if (r.has("methods")) {
        const std::string joined = r.get_string("methods", "");
        spec.methods.clear();
        std::size_t start = 0;
        while (start <= joined.size()) {
            const std::size_t comma = joined.find(',', start);
            const std::string token = joined.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!token.empty()) spec.methods.push_back(method_from_string(token));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    spec.k = r.get_u64("k", spec.k);
    spec.warmup = r.get_u64("warmup", spec.warmup);
    spec.persistent_stats = r.get_bool("persistent_stats", spec.persistent_stats);
    spec.build.levels = r.get_u64("build.levels", spec.build.levels);
    spec.build.branching = r.get_u64("build.branching", spec.build.branching);
    spec.build.leaf_capacity = r.get_u64("build.leaf_capacity", spec.build.leaf_capacity);
    spec.build.kmeans_iters = r.get_u64("build.kmeans_iters", spec.build.kmeans_iters);
    spec.ers.lambda1 = r.get_double("ers.lambda1", spec.ers.lambda1);
    spec.ers.lambda2 = r.get_double("ers.lambda2", spec.ers.lambda2);
    spec.ers.lambda3 = r.get_double("ers.lambda3", spec.ers.lambda3);
    spec.ers.epsilon = r.get_double("ers.epsilon", spec.ers.epsilon);
    spec.ers.i_max = r.get_u64("ers.i_max", spec.ers.i_max);
    spec.ers.success_threshold = r.get_double("ers.success_threshold", spec.ers.success_threshold);
    spec.ers.push_width = r.get_u64("ers.push_width", spec.ers.push_width);
    spec.ers.re_expand = r.get_bool("ers.re_expand", spec.ers.re_expand);
    spec.seed = r.get_u64("seed", spec.seed);
    r.finish();
    spec.ers.k = spec.k;
    validate(spec);
    return spec;
}

BenchResult run_benchmark(const ScenarioSpec& spec_in, const EmitFn& emit) {
    ScenarioSpec spec = spec_in;
    spec.ers.k = spec.k;
    validate(spec);

    BenchResult result;
    result.spec = spec;

    if (emit) {
        json hdr;
        hdr["type"] = "scenario";
        hdr["kind"] = spec.kind;
        hdr["items"] = spec.items;
        hdr["dim"] = spec.dim;
        hdr["k"] = spec.k;
        hdr["seed"] = spec.seed;
        hdr["persistent_stats"] = spec.persistent_stats;
        emit(hdr.dump());
    }

    if (spec.kind == "adversarial") {
        // One constructed index + query per instance; all methods see the same
        // instances.
        std::vector<datagen::Adversarial> cases;
        cases.reserve(spec.instances);
        for (std::size_t i = 0; i < spec.instances; ++i)
            cases.push_back(
                datagen::gen_adversarial(spec.dim, mix_seed(spec.seed, stream::data, 1000 + i),
                                         spec.build));
        result.n_queries = cases.size();
        for (Method m : spec.methods) {
            MethodAccum acc(spec.k);
            for (std::size_t i = 0; i < cases.size(); ++i) {
                const auto& inst = cases[i];
                ers::QueryStats stats(inst.index);
                QueryOutcome out = run_query(m, inst.query.data(), inst.index, spec,
                                             spec.persistent_stats ? &stats : nullptr);
                const auto ids = ranked_ids(out.result);
                const std::unordered_set<std::uint64_t> relevant{inst.target_id};
                acc.acc.add_query(ids, relevant);
                const auto oracle =
                    ranked_ids(ers::knn_exact(inst.query.data(), inst.index.items, spec.k));
                acc.oracle_overlap_sum += overlap_fraction(ids, oracle);
                acc.latencies.push_back(out.latency_ms);
                acc.items_scored_sum += static_cast<double>(out.result.items_scored);
                acc.nodes_visited_sum += static_cast<double>(out.result.nodes_visited);
                ++acc.n;
                if (emit) {
                    json rec;
                    rec["type"] = "query";
                    rec["method"] = method_name(m);
                    rec["query_id"] = i;
                    rec["hit_at_1"] = !ids.empty() && ids[0] == inst.target_id;
                    rec["items_scored"] = out.result.items_scored;
                    rec["nodes_visited"] = out.result.nodes_visited;
                    rec["latency_ms"] = out.latency_ms;
                    emit(rec.dump());
                }
            }
            MethodSummary s = summarize(m, acc, cases.empty() ? 0 : cases[0].index.item_count());
            if (emit) emit(summary_json(s, result.n_queries).dump());
            result.methods.push_back(std::move(s));
        }
        return result;
    }

    // Shared database, index, and query set.
    hier::ItemStore store = spec.kind == "clustered"
                                ? std::move(datagen::gen_clustered(spec.items, spec.dim,
                                                                   spec.clusters, spec.item_noise,
                                                                   mix_seed(spec.seed, stream::data, 1))
                                                .items)
                                : datagen::gen_uniform(spec.items, spec.dim,
                                                       mix_seed(spec.seed, stream::data, 1));
    const datagen::QuerySet queries =
        datagen::gen_queries(store, spec.queries, spec.query_noise,
                             mix_seed(spec.seed, stream::data, 2));
    hier::BuildConfig build = spec.build;
    build.seed = mix_seed(spec.seed, stream::data, 3);
    const hier::HierIndex index = hier::build_index(std::move(store), build);
    result.n_queries = spec.queries;

    // Flat-scan ground truth, shared by every method.
    std::vector<std::vector<std::uint64_t>> oracle(spec.queries);
    for (std::size_t i = 0; i < spec.queries; ++i)
        oracle[i] = ranked_ids(ers::knn_exact(queries.queries[i].data(), index.items, spec.k));

    for (Method m : spec.methods) {
        MethodAccum acc(spec.k);
        ers::QueryStats stats(index);
        ers::QueryStats* stats_ptr = spec.persistent_stats ? &stats : nullptr;
        const std::size_t warm = std::min(spec.warmup, spec.queries);
        for (std::size_t i = 0; i < warm; ++i)
            run_query(m, queries.queries[i].data(), index, spec, stats_ptr);
        for (std::size_t i = 0; i < spec.queries; ++i) {
            QueryOutcome out = run_query(m, queries.queries[i].data(), index, spec, stats_ptr);
            const auto ids = ranked_ids(out.result);
            const std::unordered_set<std::uint64_t> relevant{queries.relevant[i]};
            acc.acc.add_query(ids, relevant);
            acc.oracle_overlap_sum += overlap_fraction(ids, oracle[i]);
            acc.latencies.push_back(out.latency_ms);
            acc.items_scored_sum += static_cast<double>(out.result.items_scored);
            acc.nodes_visited_sum += static_cast<double>(out.result.nodes_visited);
            ++acc.n;
            if (emit) {
                json rec;
                rec["type"] = "query";
                rec["method"] = method_name(m);
                rec["query_id"] = i;
                rec["hit_at_1"] = !ids.empty() && ids[0] == queries.relevant[i];
                rec["oracle_overlap"] = overlap_fraction(ids, oracle[i]);
                rec["items_scored"] = out.result.items_scored;
                rec["nodes_visited"] = out.result.nodes_visited;
                rec["latency_ms"] = out.latency_ms;
                emit(rec.dump());
            }
        }
        MethodSummary s = summarize(m, acc, index.item_count());
        if (emit) emit(summary_json(s, result.n_queries).dump());
        result.methods.push_back(std::move(s));
    }
    return result;
}

std::string csv_summary(const BenchResult& result) {
    std::string out =
        "method,recall_at_1,recall_at_5,recall_at_k,rr_at_1,ndcg_at_5,mean_ap,oracle_recall,"
        "mean_ms,p50_ms,p95_ms,qps,items_scored_mean,items_scored_pct,nodes_visited_mean\n";
    char buf[512];
    for (const auto& s : result.methods) {
        auto at = [&s](std::size_t k) {
            auto it = s.metrics.recall_at.find(k);
            return it == s.metrics.recall_at.end() ? 0.0 : it->second;
        };
        const double rr1 =
            s.metrics.rr_at.contains(1) ? s.metrics.rr_at.at(1) : 0.0;
        std::snprintf(buf, sizeof(buf),
                      "%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                      method_name(s.method), at(1), at(5), at(result.spec.k), rr1,
                      s.metrics.ndcg_at_5, s.metrics.mean_ap, s.oracle_recall, s.latency.mean_ms,
                      s.latency.p50_ms, s.latency.p95_ms, s.latency.qps,
                      s.latency.items_scored_mean, s.items_scored_pct, s.nodes_visited_mean);
        out += buf;
    }
    return out;
}

std::vector<AblationCell> run_ablation_grid(const AblationSpec& spec, const EmitFn& emit) {
    if (spec.alphas.empty() || spec.seeds.empty())
        throw config_error("ablation: alphas and seeds must be non-empty");
    std::vector<AblationCell> cells;
    cells.reserve(spec.alphas.size() * spec.seeds.size());
    for (double alpha : spec.alphas) {
        for (std::uint64_t seed : spec.seeds) {
            trainer::TrainConfig cfg = spec.base;
            cfg.variant = trainer::Variant::full;
            cfg.alpha = alpha;
            cfg.seed = seed;
            cfg.out_dir.clear();
            cfg.checkpoint_every = 0;
            trainer::Trainer t(std::move(cfg));
            double last_loss = 0.0;
            t.set_metrics_sink([&last_loss](const trainer::StepRecord& r) { last_loss = r.loss; });
            t.run();
            AblationCell cell;
            cell.alpha = alpha;
            cell.seed = seed;
            cell.final_loss = last_loss;
            cell.planted_mass = t.eval_planted_mass(spec.eval_samples);
            cell.mcts_share = t.mcts_share();
            if (emit) {
                json rec;
                rec["type"] = "ablation";
                rec["alpha"] = cell.alpha;
                rec["seed"] = cell.seed;
                rec["final_loss"] = cell.final_loss;
                rec["planted_mass"] = cell.planted_mass;
                rec["mcts_share"] = cell.mcts_share;
                emit(rec.dump());
            }
            cells.push_back(cell);
        }
    }
    return cells;
}

}  // namespace daer::bench
