#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "daer/datagen.hpp"
#include "daer/ers.hpp"
#include "daer/metrics.hpp"
#include "daer/trainer.hpp"

// Experiment harness: runs retrieval methods on identical synthetic query
// sets against the flat-scan oracle, with latency and work instrumentation,
// plus the reward-weight ablation grid over the trainer.
namespace daer::bench {

enum class Method { knn, greedy, ers };

Method method_from_string(const std::string& name);
const char* method_name(Method m);

struct LatencyReport {
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double qps = 0.0;
    double items_scored_mean = 0.0;
};

struct ScenarioSpec {
    std::string kind = "clustered";  // clustered | uniform | adversarial
    std::size_t items = 10000;
    std::size_t dim = 64;
    std::size_t clusters = 256;   // clustered kind
    double item_noise = 0.15;     // clustered kind
    std::size_t queries = 200;
    double query_noise = 0.05;
    std::size_t instances = 50;  // adversarial kind: one query per instance
    std::vector<Method> methods = {Method::knn, Method::greedy, Method::ers};
    std::size_t k = 10;
    std::size_t warmup = 10;  // discarded untimed queries per method
    bool persistent_stats = false;
    hier::BuildConfig build;
    ers::ErsConfig ers;
    std::uint64_t seed = 1;
};

ScenarioSpec scenario_from_kv(const std::map<std::string, std::string>& kv);

struct MethodSummary {
    Method method = Method::knn;
    metrics::MetricReport metrics;  // vs the constructed single-relevant truth
    double oracle_recall = 0.0;     // mean top-k overlap with the flat scan
    LatencyReport latency;
    double items_scored_pct = 0.0;
    double nodes_visited_mean = 0.0;
};

struct BenchResult {
    ScenarioSpec spec;
    std::size_t n_queries = 0;
    std::vector<MethodSummary> methods;
};

// Receives one serialized JSON line per record.
using EmitFn = std::function<void(const std::string&)>;

BenchResult run_benchmark(const ScenarioSpec& spec, const EmitFn& emit = nullptr);

// CSV table of the per-method summaries (header + one row per method).
std::string csv_summary(const BenchResult& result);

struct AblationSpec {
    trainer::TrainConfig base;  // variant forced to full; alpha/seed set per cell
    std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t eval_samples = 64;
};

struct AblationCell {
    double alpha = 0.0;
    std::uint64_t seed = 0;
    double final_loss = 0.0;
    double planted_mass = 0.0;
    double mcts_share = 0.0;
};

std::vector<AblationCell> run_ablation_grid(const AblationSpec& spec,
                                            const EmitFn& emit = nullptr);

}  // namespace daer::bench
