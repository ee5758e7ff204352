#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "daer/align.hpp"
#include "daer/rng.hpp"

// Attention refinement search: masked-delta actions over the pre-softmax
// logits, UCT selection, random rollouts, hybrid reward (contrastive-loss
// decrease blended with in-batch retrieval quality), incremental-mean
// backpropagation.
namespace daer::mcts {

enum class Sign : std::int8_t { suppress = -1, enhance = 1 };

struct ActionSpec {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> mask;  // sorted (row, col), distinct
    Sign sign = Sign::enhance;
    double delta = 0.1;
};

// New logits = old logits +/- delta on the mask; softmax re-derived.
// The input state is untouched.
align::AttentionState apply_action(const align::AttentionState& s, const ActionSpec& a);

// One feature pair of the reward probe. probe[0] is the pair whose attention
// the search refines; the remaining pairs keep their own initial attention.
struct ProbePair {
    Mat f_text;
    Mat f_3d;
};

struct RewardConfig {
    double alpha = 0.5;  // weight on the internal (loss-decrease) reward
    double w_r1 = 0.5;
    double w_r5 = 0.3;
    double w_map = 0.2;
    std::vector<ProbePair> probe;
};

// Caches everything about (model, probe) that does not depend on the
// evaluated state: value projections of the searched pair and the fixed
// embeddings of the remaining probe pairs.
class RewardEvaluator {
  public:
    RewardEvaluator(const align::Model& model, const RewardConfig& cfg);

    // Bidirectional InfoNCE over the probe with probe[0] embedded under `s`.
    double loss_with(const align::AttentionState& s) const;
    // w_r1*R@1 + w_r5*R@5 + w_map*mAP of in-probe text->3d retrieval under `s`.
    double external_with(const align::AttentionState& s) const;
    // alpha*(loss(before) - loss(after)) + (1-alpha)*external(after)
    double reward(const align::AttentionState& before, const align::AttentionState& after) const;
    // Same, with loss(before) precomputed; the search hot path.
    double reward_vs_baseline(double loss_before, const align::AttentionState& after) const;

    double alpha() const { return cfg_.alpha; }

  private:
    std::vector<align::ModalEmbedding> assemble_text(const align::AttentionState& s) const;
    std::vector<align::ModalEmbedding> assemble_3d() const;

    const align::Model& model_;
    RewardConfig cfg_;
    Mat v_3d_0_, v_text_0_;  // searched pair value projections
    std::vector<align::ModalEmbedding> fixed_text_, fixed_3d_;
};

double compute_reward(const align::AttentionState& before, const align::AttentionState& after,
                      const RewardConfig& cfg, const align::Model& model);

enum class Selection { uct, epsilon_greedy };

struct MctsConfig {
    std::size_t budget = 100;
    double c = 1.5;
    double epsilon = 1e-6;
    std::size_t rollout_depth = 5;
    std::size_t actions_per_expansion = 8;
    double delta = 0.1;
    double mask_fraction = 0.1;
    std::size_t max_tree_depth = 6;
    Selection selection = Selection::uct;
    double greedy_epsilon = 0.1;  // epsilon_greedy selection only
    std::uint64_t seed = 0;
};

struct SearchNode;

struct Edge {
    ActionSpec action;
    std::uint64_t visits = 0;
    double q_mean = 0.0;
    std::unique_ptr<SearchNode> child;
};

struct SearchNode {
    align::AttentionState state;
    std::uint64_t visits = 0;
    std::vector<Edge> edges;
    bool expanded = false;
    std::uint32_t depth = 0;
};

// Q_mean + c * sqrt(2 * ln(max(parent_visits,1)) / (edge_visits + epsilon))
double uct_score(const Edge& edge, std::uint64_t parent_visits, double c, double epsilon);

// One traversal step; the terminus carries edge = nullptr.
struct PathStep {
    SearchNode* node;
    Edge* edge;
};

// N(s) += 1 along the path, N(s,a) += 1 and Q_mean += (r - Q_mean)/N(s,a) on
// traversed edges.
void backpropagate(std::vector<PathStep>& path, double r_hat);

// Candidate actions for one expansion. When masks are single positions and
// `count` covers the whole space, enumerates it exactly (position-major,
// enhance before suppress); otherwise samples distinct actions.
std::vector<ActionSpec> sample_actions(Rng& rng, std::size_t t, std::size_t n,
                                       double mask_fraction, double delta, std::size_t count);

ActionSpec random_action(Rng& rng, std::size_t t, std::size_t n, double mask_fraction,
                         double delta);

enum class MctsStatus { ok, no_action };

struct MctsResult {
    align::AttentionState state;
    MctsStatus status = MctsStatus::ok;
    std::optional<ActionSpec> chosen;
    double chosen_reward = 0.0;  // reward of the returned state vs the root
    std::size_t iterations = 0;
};

// One record per iteration: (iteration, edge indices of the selected path,
// backpropagated reward).
using TraceFn = std::function<void(std::size_t, const std::vector<std::uint32_t>&, double)>;

MctsResult mcts_optimize(const align::AttentionState& a_initial, const MctsConfig& cfg,
                         const RewardEvaluator& eval, const TraceFn& trace = nullptr);

// Convenience overload building the evaluator in place.
MctsResult mcts_optimize(const align::AttentionState& a_initial, const MctsConfig& cfg,
                         const RewardConfig& rcfg, const align::Model& model);

}  // namespace daer::mcts
