#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daer/align.hpp"
#include "daer/mcts.hpp"

// Two-phase contrastive training on synthetic planted-alignment data:
// phase 1 trains on the initial attention, phase 2 periodically refines the
// attention by search and treats the chosen logit modulation as a constant
// while gradients keep flowing through the softmax.
namespace daer::trainer {

// Synthetic task: token i carries concept (i mod C), point j carries concept
// floor(j*C/N). Each sample draws its own latent concept vectors, shared by
// the two modalities, so matching a token to its planted points recovers the
// sample's identity; rows are latent vectors plus gaussian noise, unit
// normalized. The planted token->point mask is identical for every sample, so
// one attention modulation is meaningful batch-wide.
struct SyntheticTaskSpec {
    std::size_t t_tokens = 8;
    std::size_t n_points = 64;
    std::size_t dim = 32;
    std::size_t concepts = 4;
    double noise_sigma = 0.25;
};

// One sample's latent concept rows (concepts x dim, unit rows).
Mat concept_vectors(const SyntheticTaskSpec& spec, Rng& rng);
std::size_t token_concept(const SyntheticTaskSpec& spec, std::size_t i);
std::size_t point_concept(const SyntheticTaskSpec& spec, std::size_t j);
Mat planted_mask(const SyntheticTaskSpec& spec);  // T x N of {0,1}

struct SampleBatch {
    std::vector<Mat> f_text;
    std::vector<Mat> f_3d;
    std::size_t size() const { return f_text.size(); }
};

SampleBatch generate_batch(const SyntheticTaskSpec& spec, std::size_t count,
                           std::uint64_t seed);

// Share of attention mass on planted positions, averaged over rows.
double planted_mass_ratio(const Mat& attention, const Mat& mask);

enum class Variant {
    full,
    no_mcts,
    internal_only,
    external_only,
    epsilon_greedy,
    direct_mcts,
    simple_fusion,
};

Variant variant_from_string(const std::string& name);
const char* variant_name(Variant v);

// Simple-fusion ablation: concat(mean F_text, mean F_3d) -> hidden d (GELU)
// -> T*N logits replacing Q K^T / sqrt(d).
struct FusionHead {
    Mat w1;                  // d x 2d
    std::vector<double> b1;  // d
    Mat w2;                  // T*N x d
    std::vector<double> b2;  // T*N
};

struct TrainConfig {
    SyntheticTaskSpec task;
    std::size_t d_prime = 32;
    std::size_t batch = 32;
    std::size_t phase1_steps = 2000;
    std::size_t phase2_steps = 2000;
    std::size_t mcts_every = 10;
    double lr_peak = 1e-4;
    std::size_t warmup_steps = 1000;
    double weight_decay = 0.05;
    double grad_clip = 1.0;
    double gamma = 0.0;  // total-loss regularizer weight; AdamW decay is the default regularizer
    double alpha = 0.5;
    double w_r1 = 0.5, w_r5 = 0.3, w_map = 0.2;
    std::size_t probe_size = 31;  // probe pairs taken from the batch beyond the searched sample
    mcts::MctsConfig mcts;        // per-step seed derived from the master seed
    bool mcts_enabled = true;
    bool reuse_off_step = true;  // false: initial attention on off-steps
    Variant variant = Variant::full;
    std::uint64_t seed = 42;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    std::string out_dir;               // metrics/checkpoint files; empty: in-memory only

    std::size_t total_steps() const { return phase1_steps + phase2_steps; }
};

// Documented key=value surface; unknown keys are rejected.
TrainConfig config_from_kv(const std::map<std::string, std::string>& kv);
// FNV-1a over the canonical serialized config; stored in checkpoints.
std::uint64_t config_hash(const TrainConfig& cfg);
std::string config_canonical(const TrainConfig& cfg);

// Linear warmup 0 -> peak over warmup steps, then cosine decay to 0 at total.
double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak);

struct ParamRef {
    std::string name;
    double* data;
    std::size_t size;
    bool decay;
};

// Decoupled-weight-decay Adam with bias correction and global gradient-norm
// clipping applied before the update. Non-finite gradients skip the step.
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-8);

    void register_params(const std::vector<ParamRef>& params);
    // grads laid out parallel to the registered params.
    void step(const std::vector<ParamRef>& params,
              const std::map<std::string, std::vector<double>>& grads, double lr,
              double weight_decay, double clip);

    std::uint64_t step_count() const { return t_; }
    std::uint64_t skipped() const { return skipped_; }

    std::map<std::string, std::vector<double>>& moments_m() { return m_; }
    std::map<std::string, std::vector<double>>& moments_v() { return v_; }
    const std::map<std::string, std::vector<double>>& moments_m() const { return m_; }
    const std::map<std::string, std::vector<double>>& moments_v() const { return v_; }
    void restore(std::uint64_t t, std::uint64_t skipped) {
        t_ = t;
        skipped_ = skipped;
    }

  private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::uint64_t skipped_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

struct StepRecord {
    std::size_t step = 0;
    int phase = 1;
    double loss = 0.0;
    double reward = 0.0;   // hybrid reward of the latest search's chosen action
    double mcts_ms = 0.0;  // search time this step (0 off-step)
    double step_ms = 0.0;
};

using MetricsSink = std::function<void(const StepRecord&)>;

class Trainer {
  public:
    explicit Trainer(TrainConfig cfg);

    void set_metrics_sink(MetricsSink sink) { sink_ = std::move(sink); }
    void set_trace_sink(mcts::TraceFn trace) { trace_ = std::move(trace); }

    StepRecord run_step();
    void run();  // all remaining steps, with checkpoints when out_dir is set

    std::size_t global_step() const { return step_; }
    int phase() const;
    const align::Model& model() const { return model_; }
    align::Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::optional<mcts::ActionSpec>& modulation() const { return modulation_; }

    // Mean planted-mass ratio of the initial attention on a fresh eval batch.
    double eval_planted_mass(std::size_t samples, std::uint64_t salt = 0) const;

    double total_mcts_ms() const { return total_mcts_ms_; }
    double total_step_ms() const { return total_step_ms_; }
    double mcts_share() const {
        return total_step_ms_ > 0.0 ? total_mcts_ms_ / total_step_ms_ : 0.0;
    }
    std::uint64_t skipped_steps() const { return opt_.skipped(); }

    // Checkpoint: magic "DAERCKPT", version u32, header, then length-prefixed
    // parameter blocks (value, first moment, second moment) as LE f64.
    std::vector<std::uint8_t> serialize_checkpoint() const;
    void restore_checkpoint(std::span<const std::uint8_t> bytes);
    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    // Attention states of one fresh sample under the current model: the
    // initial attention and the search-refined one.
    struct AttentionPair {
        Mat initial;
        Mat optimized;
    };
    AttentionPair export_attention(std::uint64_t salt = 0);

  private:
    struct Forward;

    // Mutable views into the model parameters, shared by the optimizer and
    // the checkpoint (de)serializer; order defines the checkpoint layout.
    std::vector<ParamRef> param_refs() const;
    void init_params();
    Forward forward_sample(const Mat& f_text, const Mat& f_3d, const Mat* offsets) const;
    void backward_sample(const Forward& f, const Mat& f_text, const Mat& f_3d,
                         const double* d_etext, const double* d_e3d,
                         std::map<std::string, std::vector<double>>& grads) const;
    void run_search(const SampleBatch& batch);
    Mat modulation_offsets(std::size_t rows, std::size_t cols) const;

    TrainConfig cfg_;
    align::Model model_;
    std::optional<FusionHead> fusion_;
    AdamW opt_;
    std::size_t step_ = 0;
    std::optional<mcts::ActionSpec> modulation_;
    double last_reward_ = 0.0;
    Mat planted_;
    double total_mcts_ms_ = 0.0;
    double total_step_ms_ = 0.0;
    MetricsSink sink_;
    mcts::TraceFn trace_;
};

}  // namespace daer::trainer
