#include "daer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "daer/datagen.hpp"
#include "daer/io.hpp"
#include "daer/kernels.hpp"
#include "daer/log.hpp"

namespace daer::trainer {

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'A', 'E', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void validate_task(const SyntheticTaskSpec& spec) {
    if (spec.t_tokens == 0 || spec.n_points == 0 || spec.dim == 0)
        throw config_error("task: t_tokens, n_points, and dim must be positive");
    if (spec.concepts == 0) throw config_error("task: concepts must be positive");
    if (!(spec.noise_sigma >= 0.0)) throw config_error("task: noise_sigma must be >= 0");
}

void validate_config(const TrainConfig& cfg) {
    validate_task(cfg.task);
    if (cfg.d_prime == 0) throw config_error("train: d_prime must be positive");
    if (cfg.batch == 0) throw config_error("train: batch must be positive");
    if (cfg.mcts_every == 0) throw config_error("train: mcts_every must be positive");
    if (!(cfg.lr_peak > 0.0)) throw config_error("train: lr_peak must be positive");
    if (!(cfg.weight_decay >= 0.0)) throw config_error("train: weight_decay must be >= 0");
    if (!(cfg.grad_clip >= 0.0)) throw config_error("train: grad_clip must be >= 0");
    if (!(cfg.gamma >= 0.0)) throw config_error("train: gamma must be >= 0");
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw config_error("train: alpha must be in [0,1]");
    if (!(cfg.w_r1 >= 0.0 && cfg.w_r5 >= 0.0 && cfg.w_map >= 0.0))
        throw config_error("train: reward weights must be >= 0");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// y = W x + b for a rows x cols matrix and length-cols input.
void affine(const Mat& w, const std::vector<double>& b, const double* x, double* y) {
    for (std::size_t r = 0; r < w.rows; ++r)
        y[r] = b[r] + kernels::dot(w.row(r), x, w.cols);
}

void accumulate(const Mat& src, std::vector<double>& dst) {
    for (std::size_t i = 0; i < src.data.size(); ++i) dst[i] += src.data[i];
}

}  // namespace

Mat concept_vectors(const SyntheticTaskSpec& spec, Rng& rng) {
    validate_task(spec);
    Mat c(spec.concepts, spec.dim);
    for (std::size_t i = 0; i < spec.concepts; ++i) {
        const std::vector<double> v = datagen::random_unit(spec.dim, rng);
        std::copy(v.begin(), v.end(), c.row(i));
    }
    return c;
}

std::size_t token_concept(const SyntheticTaskSpec& spec, std::size_t i) {
    return i % spec.concepts;
}

std::size_t point_concept(const SyntheticTaskSpec& spec, std::size_t j) {
    return (j * spec.concepts) / spec.n_points;
}

Mat planted_mask(const SyntheticTaskSpec& spec) {
    validate_task(spec);
    Mat m(spec.t_tokens, spec.n_points);
    for (std::size_t i = 0; i < spec.t_tokens; ++i)
        for (std::size_t j = 0; j < spec.n_points; ++j)
            m.at(i, j) = token_concept(spec, i) == point_concept(spec, j) ? 1.0 : 0.0;
    return m;
}

SampleBatch generate_batch(const SyntheticTaskSpec& spec, std::size_t count,
                           std::uint64_t seed) {
    validate_task(spec);
    Rng rng(seed);
    SampleBatch batch;
    batch.f_text.reserve(count);
    batch.f_3d.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const Mat cv = concept_vectors(spec, rng);
        Mat ft(spec.t_tokens, spec.dim);
        for (std::size_t i = 0; i < spec.t_tokens; ++i) {
            std::vector<double> row(cv.row(token_concept(spec, i)),
                                    cv.row(token_concept(spec, i)) + spec.dim);
            datagen::perturb_unit(row, spec.noise_sigma, rng);
            std::copy(row.begin(), row.end(), ft.row(i));
        }
        Mat fp(spec.n_points, spec.dim);
        for (std::size_t j = 0; j < spec.n_points; ++j) {
            std::vector<double> row(cv.row(point_concept(spec, j)),
                                    cv.row(point_concept(spec, j)) + spec.dim);
            datagen::perturb_unit(row, spec.noise_sigma, rng);
            std::copy(row.begin(), row.end(), fp.row(j));
        }
        batch.f_text.push_back(std::move(ft));
        batch.f_3d.push_back(std::move(fp));
    }
    return batch;
}

double planted_mass_ratio(const Mat& attention, const Mat& mask) {
    if (!attention.same_shape(mask)) throw dim_error("planted_mass_ratio: shape mismatch");
    if (attention.rows == 0) throw dim_error("planted_mass_ratio: empty attention");
    double acc = 0.0;
    for (std::size_t i = 0; i < attention.data.size(); ++i)
        acc += attention.data[i] * mask.data[i];
    return acc / static_cast<double>(attention.rows);
}

Variant variant_from_string(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "no_mcts") return Variant::no_mcts;
    if (name == "internal_only") return Variant::internal_only;
    if (name == "external_only") return Variant::external_only;
    if (name == "epsilon_greedy") return Variant::epsilon_greedy;
    if (name == "direct_mcts") return Variant::direct_mcts;
    if (name == "simple_fusion") return Variant::simple_fusion;
    throw config_error("unknown variant: " + name);
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_mcts: return "no_mcts";
        case Variant::internal_only: return "internal_only";
        case Variant::external_only: return "external_only";
        case Variant::epsilon_greedy: return "epsilon_greedy";
        case Variant::direct_mcts: return "direct_mcts";
        case Variant::simple_fusion: return "simple_fusion";
    }
    return "full";
}

namespace {

// Variants are expressed as config rewrites so one training loop serves all.
void apply_variant(TrainConfig& cfg) {
    switch (cfg.variant) {
        case Variant::full:
        case Variant::simple_fusion:
            break;
        case Variant::no_mcts:
            cfg.mcts_enabled = false;
            break;
        case Variant::internal_only:
            cfg.alpha = 1.0;
            break;
        case Variant::external_only:
            cfg.alpha = 0.0;
            break;
        case Variant::epsilon_greedy:
            cfg.mcts.selection = mcts::Selection::epsilon_greedy;
            break;
        case Variant::direct_mcts:
            cfg.phase2_steps += cfg.phase1_steps;
            cfg.phase1_steps = 0;
            break;
    }
}

}  // namespace

TrainConfig config_from_kv(const std::map<std::string, std::string>& kv) {
    io::KvReader r(kv);
    TrainConfig cfg;
    cfg.task.t_tokens = r.get_u64("task.t_tokens", cfg.task.t_tokens);
    cfg.task.n_points = r.get_u64("task.n_points", cfg.task.n_points);
    cfg.task.dim = r.get_u64("task.dim", cfg.task.dim);
    cfg.task.concepts = r.get_u64("task.concepts", cfg.task.concepts);
    cfg.task.noise_sigma = r.get_double("task.noise_sigma", cfg.task.noise_sigma);
    cfg.d_prime = r.get_u64("d_prime", cfg.d_prime);
    cfg.batch = r.get_u64("batch", cfg.batch);
    cfg.phase1_steps = r.get_u64("phase1_steps", cfg.phase1_steps);
    cfg.phase2_steps = r.get_u64("phase2_steps", cfg.phase2_steps);
    cfg.mcts_every = r.get_u64("mcts_every", cfg.mcts_every);
    cfg.lr_peak = r.get_double("lr_peak", cfg.lr_peak);
    cfg.warmup_steps = r.get_u64("warmup_steps", cfg.warmup_steps);
    cfg.weight_decay = r.get_double("weight_decay", cfg.weight_decay);
    cfg.grad_clip = r.get_double("grad_clip", cfg.grad_clip);
    cfg.gamma = r.get_double("gamma", cfg.gamma);
    cfg.alpha = r.get_double("alpha", cfg.alpha);
    cfg.w_r1 = r.get_double("w_r1", cfg.w_r1);
    cfg.w_r5 = r.get_double("w_r5", cfg.w_r5);
    cfg.w_map = r.get_double("w_map", cfg.w_map);
    cfg.probe_size = r.get_u64("probe_size", cfg.probe_size);
    cfg.mcts.budget = r.get_u64("mcts.budget", cfg.mcts.budget);
    cfg.mcts.c = r.get_double("mcts.c", cfg.mcts.c);
    cfg.mcts.epsilon = r.get_double("mcts.epsilon", cfg.mcts.epsilon);
    cfg.mcts.rollout_depth = r.get_u64("mcts.rollout_depth", cfg.mcts.rollout_depth);
    cfg.mcts.actions_per_expansion =
        r.get_u64("mcts.actions_per_expansion", cfg.mcts.actions_per_expansion);
    cfg.mcts.delta = r.get_double("mcts.delta", cfg.mcts.delta);
    cfg.mcts.mask_fraction = r.get_double("mcts.mask_fraction", cfg.mcts.mask_fraction);
    cfg.mcts.max_tree_depth = r.get_u64("mcts.max_tree_depth", cfg.mcts.max_tree_depth);
    cfg.mcts.greedy_epsilon = r.get_double("mcts.greedy_epsilon", cfg.mcts.greedy_epsilon);
    {
        const std::string sel = r.get_string(
            "mcts.selection",
            cfg.mcts.selection == mcts::Selection::uct ? "uct" : "epsilon_greedy");
        if (sel == "uct")
            cfg.mcts.selection = mcts::Selection::uct;
        else if (sel == "epsilon_greedy")
            cfg.mcts.selection = mcts::Selection::epsilon_greedy;
        else
            throw config_error("config key 'mcts.selection': expected uct or epsilon_greedy, got '" +
                               sel + "'");
    }
    cfg.mcts_enabled = r.get_bool("mcts_enabled", cfg.mcts_enabled);
    cfg.reuse_off_step = r.get_bool("reuse_off_step", cfg.reuse_off_step);
    cfg.variant = variant_from_string(r.get_string("variant", variant_name(cfg.variant)));
    cfg.seed = r.get_u64("seed", cfg.seed);
    cfg.checkpoint_every = r.get_u64("checkpoint_every", cfg.checkpoint_every);
    cfg.out_dir = r.get_string("out_dir", cfg.out_dir);
    r.finish();
    validate_config(cfg);
    return cfg;
}

// out_dir and checkpoint cadence are runtime concerns, not part of the
// trajectory; they stay out of the canonical form so a resumed run may write
// elsewhere.
std::string config_canonical(const TrainConfig& cfg) {
    std::string s;
    auto add = [&s](const char* key, const std::string& value) {
        s += key;
        s += '=';
        s += value;
        s += '\n';
    };
    add("task.t_tokens", std::to_string(cfg.task.t_tokens));
    add("task.n_points", std::to_string(cfg.task.n_points));
    add("task.dim", std::to_string(cfg.task.dim));
    add("task.concepts", std::to_string(cfg.task.concepts));
    add("task.noise_sigma", fmt_double(cfg.task.noise_sigma));
    add("d_prime", std::to_string(cfg.d_prime));
    add("batch", std::to_string(cfg.batch));
    add("phase1_steps", std::to_string(cfg.phase1_steps));
    add("phase2_steps", std::to_string(cfg.phase2_steps));
    add("mcts_every", std::to_string(cfg.mcts_every));
    add("lr_peak", fmt_double(cfg.lr_peak));
    add("warmup_steps", std::to_string(cfg.warmup_steps));
    add("weight_decay", fmt_double(cfg.weight_decay));
    add("grad_clip", fmt_double(cfg.grad_clip));
    add("gamma", fmt_double(cfg.gamma));
    add("alpha", fmt_double(cfg.alpha));
    add("w_r1", fmt_double(cfg.w_r1));
    add("w_r5", fmt_double(cfg.w_r5));
    add("w_map", fmt_double(cfg.w_map));
    add("probe_size", std::to_string(cfg.probe_size));
    add("mcts.budget", std::to_string(cfg.mcts.budget));
    add("mcts.c", fmt_double(cfg.mcts.c));
    add("mcts.epsilon", fmt_double(cfg.mcts.epsilon));
    add("mcts.rollout_depth", std::to_string(cfg.mcts.rollout_depth));
    add("mcts.actions_per_expansion", std::to_string(cfg.mcts.actions_per_expansion));
    add("mcts.delta", fmt_double(cfg.mcts.delta));
    add("mcts.mask_fraction", fmt_double(cfg.mcts.mask_fraction));
    add("mcts.max_tree_depth", std::to_string(cfg.mcts.max_tree_depth));
    add("mcts.selection", cfg.mcts.selection == mcts::Selection::uct ? "uct" : "epsilon_greedy");
    add("mcts.greedy_epsilon", fmt_double(cfg.mcts.greedy_epsilon));
    add("mcts_enabled", cfg.mcts_enabled ? "1" : "0");
    add("reuse_off_step", cfg.reuse_off_step ? "1" : "0");
    add("variant", variant_name(cfg.variant));
    add("seed", std::to_string(cfg.seed));
    return s;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    const std::string s = config_canonical(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak) {
    if (total == 0 || step >= total) return 0.0;
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step) / warmup;
    if (total <= warmup) return peak;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi_v<double> * progress));
}

AdamW::AdamW(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw config_error("AdamW: betas must be in [0,1)");
    if (!(eps > 0.0)) throw config_error("AdamW: eps must be positive");
}

void AdamW::register_params(const std::vector<ParamRef>& params) {
    for (const auto& p : params) {
        if (m_.contains(p.name)) throw config_error("AdamW: duplicate parameter " + p.name);
        m_.emplace(p.name, std::vector<double>(p.size, 0.0));
        v_.emplace(p.name, std::vector<double>(p.size, 0.0));
    }
}

void AdamW::step(const std::vector<ParamRef>& params,
                 const std::map<std::string, std::vector<double>>& grads, double lr,
                 double weight_decay, double clip) {
    double sq = 0.0;
    bool finite = true;
    for (const auto& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end() || it->second.size() != p.size)
            throw config_error("AdamW: missing or misshapen gradient for " + p.name);
        for (double g : it->second) {
            if (!std::isfinite(g)) finite = false;
            sq += g * g;
        }
    }
    if (!finite || !std::isfinite(sq)) {
        ++skipped_;
        log::warn("AdamW: non-finite gradient, step skipped");
        return;
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& p : params) {
        const auto& g = grads.at(p.name);
        auto& m = m_.at(p.name);
        auto& v = v_.at(p.name);
        if (m.size() != p.size) throw config_error("AdamW: unregistered parameter " + p.name);
        for (std::size_t i = 0; i < p.size; ++i) {
            const double gi = g[i] * scale;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            double update = m_hat / (std::sqrt(v_hat) + eps_);
            if (p.decay && weight_decay > 0.0) update += weight_decay * p.data[i];
            p.data[i] -= lr * update;
        }
    }
}

struct Trainer::Forward {
    align::Projected proj;
    align::AttentionState state;
    align::Aggregated agg;
    std::vector<double> pool_text, pool_3d;
    align::HeadForward ht, h3;
    std::vector<double> e_text, e_3d;
    double nrm_text = 0.0, nrm_3d = 0.0;
    std::vector<double> fus_in, fus_h, fus_a;
};

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    apply_variant(cfg_);
    validate_config(cfg_);
    planted_ = planted_mask(cfg_.task);
    init_params();
    opt_.register_params(param_refs());
}

int Trainer::phase() const { return step_ < cfg_.phase1_steps ? 1 : 2; }

void Trainer::init_params() {
    Rng rng(mix_seed(cfg_.seed, stream::init, 0));
    const std::size_t d = cfg_.task.dim;
    model_.proj = align::ProjectionSet::random(d, rng);
    model_.head_text = align::EmbedHead::random(d, cfg_.d_prime, rng);
    model_.head_3d = align::EmbedHead::random(d, cfg_.d_prime, rng);
    model_.tau = 0.07;
    if (cfg_.variant == Variant::simple_fusion) {
        const std::size_t tn = cfg_.task.t_tokens * cfg_.task.n_points;
        FusionHead fh;
        fh.w1 = Mat(d, 2 * d);
        fh.b1.assign(d, 0.0);
        fh.w2 = Mat(tn, d);
        fh.b2.assign(tn, 0.0);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(2 * d));
        for (auto& w : fh.w1.data) w = rng.normal() * s1;
        const double s2 = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& w : fh.w2.data) w = rng.normal() * s2;
        fusion_ = std::move(fh);
    }
}

std::vector<ParamRef> Trainer::param_refs() const {
    auto* self = const_cast<Trainer*>(this);
    std::vector<ParamRef> refs;
    auto add_mat = [&refs](const char* name, Mat& m, bool decay) {
        refs.push_back({name, m.data.data(), m.data.size(), decay});
    };
    auto add_vec = [&refs](const char* name, std::vector<double>& v) {
        refs.push_back({name, v.data(), v.size(), false});
    };
    add_mat("proj.w_q", self->model_.proj.w_q, true);
    add_mat("proj.w_k", self->model_.proj.w_k_3d, true);
    add_mat("proj.w_v3d", self->model_.proj.w_v_3d, true);
    add_mat("proj.w_vtext", self->model_.proj.w_v_text, true);
    add_mat("head_text.w1", self->model_.head_text.w1, true);
    add_vec("head_text.b1", self->model_.head_text.b1);
    add_mat("head_text.w2", self->model_.head_text.w2, true);
    add_vec("head_text.b2", self->model_.head_text.b2);
    add_mat("head_3d.w1", self->model_.head_3d.w1, true);
    add_vec("head_3d.b1", self->model_.head_3d.b1);
    add_mat("head_3d.w2", self->model_.head_3d.w2, true);
    add_vec("head_3d.b2", self->model_.head_3d.b2);
    refs.push_back({"tau", &self->model_.tau, 1, false});
    if (self->fusion_) {
        add_mat("fusion.w1", self->fusion_->w1, true);
        add_vec("fusion.b1", self->fusion_->b1);
        add_mat("fusion.w2", self->fusion_->w2, true);
        add_vec("fusion.b2", self->fusion_->b2);
    }
    return refs;
}

Trainer::Forward Trainer::forward_sample(const Mat& f_text, const Mat& f_3d,
                                         const Mat* offsets) const {
    Forward f;
    f.proj = align::project_qkv(f_text, f_3d, model_.proj);
    const std::size_t t = f_text.rows, n = f_3d.rows, d = model_.dim();
    if (fusion_) {
        f.fus_in.assign(2 * d, 0.0);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < d; ++c) f.fus_in[c] += f_text.at(i, c) / t;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < d; ++c) f.fus_in[d + c] += f_3d.at(j, c) / n;
        f.fus_h.resize(fusion_->w1.rows);
        affine(fusion_->w1, fusion_->b1, f.fus_in.data(), f.fus_h.data());
        f.fus_a.resize(f.fus_h.size());
        for (std::size_t i = 0; i < f.fus_h.size(); ++i) f.fus_a[i] = align::gelu(f.fus_h[i]);
        std::vector<double> out(fusion_->w2.rows);
        affine(fusion_->w2, fusion_->b2, f.fus_a.data(), out.data());
        Mat logits(t, n);
        std::copy(out.begin(), out.end(), logits.data.begin());
        if (offsets) {
            require_shape(*offsets, t, n, "modulation offsets");
            for (std::size_t i = 0; i < logits.data.size(); ++i)
                logits.data[i] += offsets->data[i];
        }
        f.state = align::attention_from_logits(std::move(logits));
    } else {
        f.state = align::initial_attention(f.proj.q_text, f.proj.k_3d);
        if (offsets) {
            require_shape(*offsets, t, n, "modulation offsets");
            Mat logits = f.state.logits;
            for (std::size_t i = 0; i < logits.data.size(); ++i)
                logits.data[i] += offsets->data[i];
            f.state = align::attention_from_logits(std::move(logits));
        }
    }
    f.agg = align::aggregate(f.state, f.proj.v_3d, f.proj.v_text);
    f.pool_text.assign(d, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) f.pool_text[c] += f.agg.z_text.at(i, c) / t;
    f.pool_3d.assign(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) f.pool_3d[c] += f.agg.z_3d.at(j, c) / n;
    f.ht = align::head_forward(model_.head_text, f.pool_text.data());
    f.h3 = align::head_forward(model_.head_3d, f.pool_3d.data());
    auto unit = [](const std::vector<double>& u, std::vector<double>& e, double& nrm) {
        nrm = l2_norm(u.data(), u.size());
        if (!(nrm > 0.0) || !std::isfinite(nrm))
            throw dim_error("forward: degenerate embedding norm");
        e.resize(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) e[i] = u[i] / nrm;
    };
    unit(f.ht.u, f.e_text, f.nrm_text);
    unit(f.h3.u, f.e_3d, f.nrm_3d);
    return f;
}

void Trainer::backward_sample(const Forward& f, const Mat& f_text, const Mat& f_3d,
                              const double* d_etext, const double* d_e3d,
                              std::map<std::string, std::vector<double>>& grads) const {
    const std::size_t t = f_text.rows, n = f_3d.rows, d = model_.dim();

    // Unit-normalization backward: d_u = (g - e (e.g)) / ||u||.
    auto norm_back = [](const std::vector<double>& e, double nrm, const double* g,
                        std::vector<double>& du) {
        const std::size_t k = e.size();
        du.resize(k);
        const double eg = kernels::dot(e.data(), g, k);
        for (std::size_t i = 0; i < k; ++i) du[i] = (g[i] - e[i] * eg) / nrm;
    };
    std::vector<double> du_t, du_3;
    norm_back(f.e_text, f.nrm_text, d_etext, du_t);
    norm_back(f.e_3d, f.nrm_3d, d_e3d, du_3);

    auto head_back = [&](const align::EmbedHead& head, const align::HeadForward& hf,
                         const double* x, const std::vector<double>& du,
                         const std::string& prefix, std::vector<double>& dx) {
        const std::size_t out = head.out_dim(), in = head.in_dim();
        auto& gw1 = grads.at(prefix + ".w1");
        auto& gb1 = grads.at(prefix + ".b1");
        auto& gw2 = grads.at(prefix + ".w2");
        auto& gb2 = grads.at(prefix + ".b2");
        std::vector<double> da1(out, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            gb2[r] += du[r];
            const double* w2r = head.w2.row(r);
            for (std::size_t c = 0; c < out; ++c) {
                gw2[r * out + c] += du[r] * hf.a1[c];
                da1[c] += w2r[c] * du[r];
            }
        }
        dx.assign(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double dh = head.act == align::Activation::gelu
                                  ? da1[r] * align::gelu_grad(hf.h1[r])
                                  : da1[r];
            gb1[r] += dh;
            const double* w1r = head.w1.row(r);
            for (std::size_t c = 0; c < in; ++c) {
                gw1[r * in + c] += dh * x[c];
                dx[c] += w1r[c] * dh;
            }
        }
    };
    std::vector<double> dpool_t, dpool_3;
    head_back(model_.head_text, f.ht, f.pool_text.data(), du_t, "head_text", dpool_t);
    head_back(model_.head_3d, f.h3, f.pool_3d.data(), du_3, "head_3d", dpool_3);

    // Mean-pool backward.
    Mat d_zt(t, d), d_z3(n, d);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) d_zt.at(i, c) = dpool_t[c] / t;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) d_z3.at(j, c) = dpool_3[c] / n;

    // Z_text = A V_3d and Z_3d = A^T V_text give
    // dA = dZt V3^T + Vt dZ3^T, dV3 = A^T dZt, dVt = A dZ3.
    Mat d_att = mat_mul_nt(d_zt, f.proj.v_3d);
    {
        const Mat d_att2 = mat_mul_nt(f.proj.v_text, d_z3);
        for (std::size_t i = 0; i < d_att.data.size(); ++i) d_att.data[i] += d_att2.data[i];
    }
    const Mat d_v3 = mat_mul_tn(f.state.attention, d_zt);
    const Mat d_vt = mat_mul(f.state.attention, d_z3);

    // Softmax rows backward: dlogits = a (g - g.a).
    Mat d_log(t, n);
    for (std::size_t r = 0; r < t; ++r) {
        const double* a = f.state.attention.row(r);
        const double* g = d_att.row(r);
        const double gd = kernels::dot(g, a, n);
        for (std::size_t j = 0; j < n; ++j) d_log.at(r, j) = a[j] * (g[j] - gd);
    }

    if (fusion_) {
        auto& gw1 = grads.at("fusion.w1");
        auto& gb1 = grads.at("fusion.b1");
        auto& gw2 = grads.at("fusion.w2");
        auto& gb2 = grads.at("fusion.b2");
        const std::size_t hid = fusion_->w1.rows;
        const std::size_t in = fusion_->w1.cols;
        std::vector<double> da(hid, 0.0);
        for (std::size_t r = 0; r < t * n; ++r) {
            const double dout = d_log.data[r];
            gb2[r] += dout;
            const double* w2r = fusion_->w2.row(r);
            for (std::size_t c = 0; c < hid; ++c) {
                gw2[r * hid + c] += dout * f.fus_a[c];
                da[c] += w2r[c] * dout;
            }
        }
        for (std::size_t r = 0; r < hid; ++r) {
            const double dh = da[r] * align::gelu_grad(f.fus_h[r]);
            gb1[r] += dh;
            for (std::size_t c = 0; c < in; ++c) gw1[r * in + c] += dh * f.fus_in[c];
        }
    } else {
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        Mat d_q = mat_mul(d_log, f.proj.k_3d);
        for (auto& v : d_q.data) v *= inv_sqrt_d;
        Mat d_k = mat_mul_tn(d_log, f.proj.q_text);
        for (auto& v : d_k.data) v *= inv_sqrt_d;
        accumulate(mat_mul_tn(f_text, d_q), grads.at("proj.w_q"));
        accumulate(mat_mul_tn(f_3d, d_k), grads.at("proj.w_k"));
    }
    accumulate(mat_mul_tn(f_3d, d_v3), grads.at("proj.w_v3d"));
    accumulate(mat_mul_tn(f_text, d_vt), grads.at("proj.w_vtext"));
}

Mat Trainer::modulation_offsets(std::size_t rows, std::size_t cols) const {
    Mat off(rows, cols);
    if (!modulation_) return off;
    const double signed_delta =
        modulation_->delta * (modulation_->sign == mcts::Sign::enhance ? 1.0 : -1.0);
    for (const auto& [r, c] : modulation_->mask) {
        if (r >= rows || c >= cols) throw dim_error("modulation mask out of range");
        off.at(r, c) += signed_delta;
    }
    return off;
}

void Trainer::run_search(const SampleBatch& batch) {
    mcts::RewardConfig rcfg;
    rcfg.alpha = cfg_.alpha;
    rcfg.w_r1 = cfg_.w_r1;
    rcfg.w_r5 = cfg_.w_r5;
    rcfg.w_map = cfg_.w_map;
    rcfg.probe.push_back({batch.f_text[0], batch.f_3d[0]});
    for (std::size_t i = 1; i < batch.size() && rcfg.probe.size() < cfg_.probe_size + 1; ++i)
        rcfg.probe.push_back({batch.f_text[i], batch.f_3d[i]});
    if (rcfg.probe.size() < 2) {
        // Degenerate batch: draw probe companions from a dedicated stream so
        // the retrieval reward still ranks against something.
        const std::size_t extra = std::max<std::size_t>(cfg_.probe_size, 1);
        SampleBatch more =
            generate_batch(cfg_.task, extra, mix_seed(cfg_.seed, stream::probe, step_));
        for (std::size_t i = 0; i < more.size(); ++i)
            rcfg.probe.push_back({more.f_text[i], more.f_3d[i]});
    }
    const Forward f0 = forward_sample(batch.f_text[0], batch.f_3d[0], nullptr);
    mcts::MctsConfig mc = cfg_.mcts;
    mc.seed = mix_seed(cfg_.seed, stream::search, step_);
    const mcts::RewardEvaluator eval(model_, rcfg);
    const mcts::MctsResult res = mcts::mcts_optimize(f0.state, mc, eval, trace_);
    if (res.status == mcts::MctsStatus::ok && res.chosen) {
        modulation_ = res.chosen;
        last_reward_ = res.chosen_reward;
    }
}

StepRecord Trainer::run_step() {
    const auto t0 = std::chrono::steady_clock::now();
    if (step_ >= cfg_.total_steps())
        throw config_error("Trainer::run_step: all configured steps already ran");
    const std::size_t idx = step_;
    const int ph = phase();
    const SampleBatch batch =
        generate_batch(cfg_.task, cfg_.batch, mix_seed(cfg_.seed, stream::batch, idx));

    double mcts_ms = 0.0;
    bool searched = false;
    if (ph == 2 && cfg_.mcts_enabled) {
        const std::size_t local = idx - cfg_.phase1_steps;
        if (local % cfg_.mcts_every == 0) {
            const auto s0 = std::chrono::steady_clock::now();
            run_search(batch);
            mcts_ms = elapsed_ms(s0);
            searched = true;
        }
    }
    Mat offsets;
    const Mat* off_ptr = nullptr;
    if (ph == 2 && modulation_ && (searched || cfg_.reuse_off_step)) {
        offsets = modulation_offsets(cfg_.task.t_tokens, cfg_.task.n_points);
        off_ptr = &offsets;
    }

    std::vector<Forward> fwd;
    fwd.reserve(batch.size());
    std::vector<align::ModalEmbedding> e_text(batch.size()), e_3d(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        fwd.push_back(forward_sample(batch.f_text[i], batch.f_3d[i], off_ptr));
        e_text[i] = {fwd[i].e_text, true};
        e_3d[i] = {fwd[i].e_3d, true};
    }
    const align::LossResult lr = align::infonce_bidirectional(e_text, e_3d, {model_.tau});

    const auto refs = param_refs();
    std::map<std::string, std::vector<double>> grads;
    for (const auto& p : refs) grads.emplace(p.name, std::vector<double>(p.size, 0.0));
    for (std::size_t i = 0; i < batch.size(); ++i)
        backward_sample(fwd[i], batch.f_text[i], batch.f_3d[i], lr.d_text.row(i), lr.d_3d.row(i),
                        grads);
    grads.at("tau")[0] = lr.d_tau;

    double loss = lr.loss;
    if (cfg_.gamma > 0.0) {
        double reg = 0.0;
        for (const auto& p : refs) {
            if (!p.decay) continue;
            reg += kernels::sum_squares(p.data, p.size);
            auto& g = grads.at(p.name);
            for (std::size_t i = 0; i < p.size; ++i) g[i] += 2.0 * cfg_.gamma * p.data[i];
        }
        loss = align::total_loss(lr.loss, reg, cfg_.gamma);
    }

    const double lr_t = cosine_lr(idx, cfg_.warmup_steps, cfg_.total_steps(), cfg_.lr_peak);
    opt_.step(refs, grads, lr_t, cfg_.weight_decay, cfg_.grad_clip);
    model_.tau = std::clamp(model_.tau, 1e-3, 1.0);

    ++step_;
    StepRecord rec;
    rec.step = idx;
    rec.phase = ph;
    rec.loss = loss;
    rec.reward = last_reward_;
    rec.mcts_ms = mcts_ms;
    rec.step_ms = elapsed_ms(t0);
    total_mcts_ms_ += mcts_ms;
    total_step_ms_ += rec.step_ms;
    if (sink_) sink_(rec);
    return rec;
}

void Trainer::run() {
    namespace fs = std::filesystem;
    if (!cfg_.out_dir.empty()) fs::create_directories(cfg_.out_dir);
    while (step_ < cfg_.total_steps()) {
        run_step();
        if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && step_ < cfg_.total_steps() &&
            step_ % cfg_.checkpoint_every == 0)
            save_checkpoint(cfg_.out_dir + "/checkpoint_" + std::to_string(step_) + ".bin");
    }
    if (!cfg_.out_dir.empty()) save_checkpoint(cfg_.out_dir + "/checkpoint.bin");
}

double Trainer::eval_planted_mass(std::size_t samples, std::uint64_t salt) const {
    if (samples == 0) throw config_error("eval_planted_mass: samples must be positive");
    const SampleBatch batch =
        generate_batch(cfg_.task, samples, mix_seed(cfg_.seed, stream::eval, salt));
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Forward f = forward_sample(batch.f_text[i], batch.f_3d[i], nullptr);
        acc += planted_mass_ratio(f.state.attention, planted_);
    }
    return acc / static_cast<double>(samples);
}

Trainer::AttentionPair Trainer::export_attention(std::uint64_t salt) {
    const SampleBatch one =
        generate_batch(cfg_.task, 1, mix_seed(cfg_.seed, stream::probe, salt));
    const Forward f0 = forward_sample(one.f_text[0], one.f_3d[0], nullptr);
    mcts::RewardConfig rcfg;
    rcfg.alpha = cfg_.alpha;
    rcfg.w_r1 = cfg_.w_r1;
    rcfg.w_r5 = cfg_.w_r5;
    rcfg.w_map = cfg_.w_map;
    rcfg.probe.push_back({one.f_text[0], one.f_3d[0]});
    const std::size_t extra = std::max<std::size_t>(cfg_.probe_size, 1);
    const SampleBatch more =
        generate_batch(cfg_.task, extra, mix_seed(cfg_.seed, stream::probe, salt + 1));
    for (std::size_t i = 0; i < more.size(); ++i)
        rcfg.probe.push_back({more.f_text[i], more.f_3d[i]});
    mcts::MctsConfig mc = cfg_.mcts;
    mc.seed = mix_seed(cfg_.seed, stream::search, salt);
    const mcts::RewardEvaluator eval(model_, rcfg);
    const mcts::MctsResult res = mcts::mcts_optimize(f0.state, mc, eval, trace_);
    return {f0.state.attention, res.state.attention};
}

std::vector<std::uint8_t> Trainer::serialize_checkpoint() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
    io::put_u32(out, kCheckpointVersion);
    io::put_u64(out, config_hash(cfg_));
    io::put_u64(out, cfg_.seed);
    io::put_u64(out, step_);
    io::put_u64(out, opt_.step_count());
    io::put_u64(out, opt_.skipped());
    io::put_f64(out, last_reward_);
    io::put_f64(out, total_mcts_ms_);
    io::put_f64(out, total_step_ms_);
    io::put_u8(out, modulation_ ? 1 : 0);
    if (modulation_) {
        io::put_u8(out, modulation_->sign == mcts::Sign::enhance ? 1 : 0);
        io::put_f64(out, modulation_->delta);
        io::put_u64(out, modulation_->mask.size());
        for (const auto& [r, c] : modulation_->mask) {
            io::put_u32(out, r);
            io::put_u32(out, c);
        }
    }
    const auto refs = param_refs();
    io::put_u64(out, refs.size());
    for (const auto& p : refs) {
        io::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        io::put_u64(out, p.size);
        for (std::size_t i = 0; i < p.size; ++i) io::put_f64(out, p.data[i]);
        const auto& m = opt_.moments_m().at(p.name);
        for (double v : m) io::put_f64(out, v);
        const auto& v = opt_.moments_v().at(p.name);
        for (double x : v) io::put_f64(out, x);
    }
    return out;
}

void Trainer::restore_checkpoint(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes.data(), bytes.size(), "checkpoint");
    const auto magic = r.bytes(8);
    if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0)
        throw decode_error("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw decode_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t hash = r.u64();
    if (hash != config_hash(cfg_))
        throw config_error("checkpoint: config hash mismatch (checkpoint was written by a "
                           "different configuration)");
    const std::uint64_t seed = r.u64();
    if (seed != cfg_.seed) throw config_error("checkpoint: seed mismatch");
    const std::uint64_t step = r.u64();
    if (step > cfg_.total_steps()) throw decode_error("checkpoint: step beyond configured total");
    const std::uint64_t adam_t = r.u64();
    const std::uint64_t skipped = r.u64();
    const double last_reward = r.f64();
    const double total_mcts = r.f64();
    const double total_step = r.f64();
    std::optional<mcts::ActionSpec> modulation;
    const std::uint8_t has_mod = r.u8();
    if (has_mod > 1) throw decode_error("checkpoint: bad modulation flag");
    if (has_mod == 1) {
        mcts::ActionSpec a;
        const std::uint8_t sign = r.u8();
        if (sign > 1) throw decode_error("checkpoint: bad modulation sign");
        a.sign = sign == 1 ? mcts::Sign::enhance : mcts::Sign::suppress;
        a.delta = r.f64();
        if (!std::isfinite(a.delta)) throw decode_error("checkpoint: non-finite delta");
        const std::uint64_t count = r.u64();
        if (count > cfg_.task.t_tokens * cfg_.task.n_points)
            throw decode_error("checkpoint: modulation mask larger than the logit grid");
        a.mask.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t row = r.u32();
            const std::uint32_t col = r.u32();
            if (row >= cfg_.task.t_tokens || col >= cfg_.task.n_points)
                throw decode_error("checkpoint: modulation mask out of range");
            a.mask.emplace_back(row, col);
        }
        modulation = std::move(a);
    }
    const auto refs = param_refs();
    const std::uint64_t n_params = r.u64();
    if (n_params != refs.size())
        throw decode_error("checkpoint: parameter count mismatch (" + std::to_string(n_params) +
                           " vs " + std::to_string(refs.size()) + ")");
    for (const auto& p : refs) {
        const std::uint32_t name_len = r.u32();
        if (name_len > 256) throw decode_error("checkpoint: parameter name too long");
        const auto name_bytes = r.bytes(name_len);
        const std::string name(reinterpret_cast<const char*>(name_bytes.data()), name_len);
        if (name != p.name)
            throw decode_error("checkpoint: parameter order mismatch at " + p.name);
        const std::uint64_t size = r.u64();
        if (size != p.size) throw decode_error("checkpoint: size mismatch for " + p.name);
        for (std::size_t i = 0; i < p.size; ++i) p.data[i] = r.f64();
        auto& m = opt_.moments_m().at(p.name);
        for (std::size_t i = 0; i < p.size; ++i) m[i] = r.f64();
        auto& v = opt_.moments_v().at(p.name);
        for (std::size_t i = 0; i < p.size; ++i) v[i] = r.f64();
    }
    if (!r.done()) throw decode_error("checkpoint: trailing bytes");
    step_ = step;
    opt_.restore(adam_t, skipped);
    last_reward_ = last_reward;
    total_mcts_ms_ = total_mcts;
    total_step_ms_ = total_step;
    modulation_ = std::move(modulation);
}

void Trainer::save_checkpoint(const std::string& path) const {
    io::write_file_atomic(path, serialize_checkpoint());
}

void Trainer::load_checkpoint(const std::string& path) {
    const auto bytes = io::read_file(path);
    restore_checkpoint(bytes);
}

}  // namespace daer::trainer
