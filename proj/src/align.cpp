#include "daer/align.hpp"

#include <cmath>
#include <numbers>

namespace daer::align {

namespace {

void require_finite(const Mat& m, const char* what) {
    if (!m.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite values");
}

Mat random_mat(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi_v<double>);
    return cdf + x * pdf;
}

ProjectionSet ProjectionSet::identity(std::size_t d) {
    return {Mat::identity(d), Mat::identity(d), Mat::identity(d), Mat::identity(d)};
}

ProjectionSet ProjectionSet::random(std::size_t d, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    return {random_mat(d, d, scale, rng), random_mat(d, d, scale, rng),
            random_mat(d, d, scale, rng), random_mat(d, d, scale, rng)};
}

EmbedHead EmbedHead::identity(std::size_t d) {
    EmbedHead h;
    h.w1 = Mat::identity(d);
    h.b1.assign(d, 0.0);
    h.w2 = Mat::identity(d);
    h.b2.assign(d, 0.0);
    h.act = Activation::identity;
    return h;
}

EmbedHead EmbedHead::random(std::size_t d, std::size_t d_prime, Rng& rng) {
    EmbedHead h;
    h.w1 = random_mat(d_prime, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    h.b1.assign(d_prime, 0.0);
    h.w2 = random_mat(d_prime, d_prime, 1.0 / std::sqrt(static_cast<double>(d_prime)), rng);
    h.b2.assign(d_prime, 0.0);
    h.act = Activation::gelu;
    return h;
}

Projected project_qkv(const Mat& f_text, const Mat& f_3d, const ProjectionSet& w) {
    const std::size_t d = w.dim();
    if (d == 0 || f_text.rows == 0 || f_3d.rows == 0)
        throw dim_error("project_qkv: empty operand");
    if (f_text.cols != d || f_3d.cols != d)
        throw dim_error("project_qkv: feature dim does not match projection dim");
    require_shape(w.w_q, d, d, "project_qkv: w_q");
    require_shape(w.w_k_3d, d, d, "project_qkv: w_k_3d");
    require_shape(w.w_v_3d, d, d, "project_qkv: w_v_3d");
    require_shape(w.w_v_text, d, d, "project_qkv: w_v_text");
    require_finite(f_text, "project_qkv: f_text");
    require_finite(f_3d, "project_qkv: f_3d");

    Projected p;
    p.q_text = mat_mul(f_text, w.w_q);
    p.k_3d = mat_mul(f_3d, w.w_k_3d);
    p.v_3d = mat_mul(f_3d, w.w_v_3d);
    p.v_text = mat_mul(f_text, w.w_v_text);
    return p;
}

AttentionState attention_from_logits(Mat logits) {
    if (logits.rows == 0 || logits.cols == 0)
        throw dim_error("attention_from_logits: empty logits");
    if (!logits.all_finite())
        throw std::invalid_argument("attention_from_logits: non-finite logits");
    AttentionState s;
    s.attention = Mat(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i)
        kernels::softmax_row(logits.row(i), s.attention.row(i), logits.cols);
    s.logits = std::move(logits);
    return s;
}

AttentionState initial_attention(const Mat& q_text, const Mat& k_3d) {
    if (q_text.cols != k_3d.cols) throw dim_error("initial_attention: dim mismatch");
    if (q_text.rows == 0 || k_3d.rows == 0) throw dim_error("initial_attention: empty operand");
    Mat logits = mat_mul_nt(q_text, k_3d);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q_text.cols));
    kernels::scale(logits.data.data(), logits.data.size(), inv_sqrt_d);
    return attention_from_logits(std::move(logits));
}

Aggregated aggregate(const AttentionState& state, const Mat& v_3d, const Mat& v_text) {
    const Mat& a = state.attention;
    if (a.rows != v_text.rows) throw dim_error("aggregate: attention rows vs v_text rows");
    if (a.cols != v_3d.rows) throw dim_error("aggregate: attention cols vs v_3d rows");
    if (v_3d.cols != v_text.cols) throw dim_error("aggregate: value dims differ");
    Aggregated out;
    out.z_text = mat_mul(a, v_3d);
    out.z_3d = mat_mul_tn(a, v_text);
    return out;
}

HeadForward head_forward(const EmbedHead& head, const double* x) {
    const std::size_t d = head.in_dim();
    const std::size_t dp = head.out_dim();
    HeadForward f;
    f.h1.assign(dp, 0.0);
    for (std::size_t i = 0; i < dp; ++i)
        f.h1[i] = head.b1[i] + kernels::dot(head.w1.row(i), x, d);
    f.a1.resize(dp);
    for (std::size_t i = 0; i < dp; ++i)
        f.a1[i] = head.act == Activation::gelu ? gelu(f.h1[i]) : f.h1[i];
    f.u.assign(dp, 0.0);
    for (std::size_t i = 0; i < dp; ++i)
        f.u[i] = head.b2[i] + kernels::dot(head.w2.row(i), f.a1.data(), dp);
    return f;
}

ModalEmbedding pool_embed(const Mat& z, const EmbedHead& head) {
    if (z.rows == 0) throw dim_error("pool_embed: empty input");
    if (z.cols != head.in_dim()) throw dim_error("pool_embed: dim does not match head");
    std::vector<double> pooled(z.cols, 0.0);
    const double inv_rows = 1.0 / static_cast<double>(z.rows);
    for (std::size_t i = 0; i < z.rows; ++i)
        kernels::axpy(inv_rows, z.row(i), pooled.data(), z.cols);
    HeadForward f = head_forward(head, pooled.data());
    normalize(f.u.data(), f.u.size(), "pool_embed");
    return ModalEmbedding{std::move(f.u), true};
}

std::pair<ModalEmbedding, ModalEmbedding> embed_pair(const Model& model,
                                                     const AttentionState& state,
                                                     const Mat& v_3d, const Mat& v_text) {
    Aggregated agg = aggregate(state, v_3d, v_text);
    return {pool_embed(agg.z_text, model.head_text), pool_embed(agg.z_3d, model.head_3d)};
}

namespace {

void check_batch(const std::vector<ModalEmbedding>& e_text,
                 const std::vector<ModalEmbedding>& e_3d, double tau) {
    if (e_text.empty() || e_text.size() != e_3d.size())
        throw dim_error("infonce: batch empty or sizes differ");
    if (!(tau > 0.0)) throw std::invalid_argument("infonce: tau must be positive");
    const std::size_t d = e_text[0].vec.size();
    for (const auto* batch : {&e_text, &e_3d})
        for (const auto& e : *batch) {
            if (e.vec.size() != d) throw dim_error("infonce: embedding dims differ");
            if (!e.normalized) throw std::invalid_argument("infonce: unnormalized embedding");
        }
}

// S[i][j] = <e_text_i, e_3d_j> / tau
Mat similarity_logits(const std::vector<ModalEmbedding>& e_text,
                      const std::vector<ModalEmbedding>& e_3d, double tau) {
    const std::size_t b = e_text.size();
    const std::size_t d = e_text[0].vec.size();
    Mat s(b, b);
    const double inv_tau = 1.0 / tau;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            s.at(i, j) = inv_tau * kernels::dot(e_text[i].vec.data(), e_3d[j].vec.data(), d);
    return s;
}

double direction_loss_rows(const Mat& s) {
    // mean over rows of (logsumexp(row) - diagonal)
    double total = 0.0;
    std::vector<double> tmp(s.cols);
    for (std::size_t i = 0; i < s.rows; ++i) {
        const double m = kernels::reduce_max(s.row(i), s.cols);
        double sum = 0.0;
        for (std::size_t j = 0; j < s.cols; ++j) sum += std::exp(s.at(i, j) - m);
        total += m + std::log(sum) - s.at(i, i);
    }
    return total / static_cast<double>(s.rows);
}

}  // namespace

double infonce_loss(const std::vector<ModalEmbedding>& e_text,
                    const std::vector<ModalEmbedding>& e_3d, double tau) {
    check_batch(e_text, e_3d, tau);
    const Mat s = similarity_logits(e_text, e_3d, tau);
    Mat st(s.cols, s.rows);
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) st.at(j, i) = s.at(i, j);
    return direction_loss_rows(s) + direction_loss_rows(st);
}

LossResult infonce_bidirectional(const std::vector<ModalEmbedding>& e_text,
                                 const std::vector<ModalEmbedding>& e_3d,
                                 const LossConfig& cfg) {
    check_batch(e_text, e_3d, cfg.tau);
    const std::size_t b = e_text.size();
    const std::size_t d = e_text[0].vec.size();
    const Mat s = similarity_logits(e_text, e_3d, cfg.tau);

    // Row softmax (text -> 3d) and column softmax (3d -> text).
    Mat p_row(b, b);
    for (std::size_t i = 0; i < b; ++i) kernels::softmax_row(s.row(i), p_row.row(i), b);
    Mat p_col(b, b);
    {
        std::vector<double> col(b), soft(b);
        for (std::size_t j = 0; j < b; ++j) {
            for (std::size_t i = 0; i < b; ++i) col[i] = s.at(i, j);
            kernels::softmax_row(col.data(), soft.data(), b);
            for (std::size_t i = 0; i < b; ++i) p_col.at(i, j) = soft[i];
        }
    }

    LossResult out;
    {
        double loss_t2v = 0.0, loss_v2t = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            loss_t2v -= std::log(p_row.at(i, i));
            loss_v2t -= std::log(p_col.at(i, i));
        }
        out.loss = (loss_t2v + loss_v2t) / static_cast<double>(b);
    }

    // dL/dS = (P_row + P_col - 2I) / B, then chain into embeddings and tau.
    Mat g_s(b, b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            g_s.at(i, j) = inv_b * (p_row.at(i, j) + p_col.at(i, j) - (i == j ? 2.0 : 0.0));

    out.d_text = Mat(b, d);
    out.d_3d = Mat(b, d);
    const double inv_tau = 1.0 / cfg.tau;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            const double g = g_s.at(i, j) * inv_tau;
            kernels::axpy(g, e_3d[j].vec.data(), out.d_text.row(i), d);
            kernels::axpy(g, e_text[i].vec.data(), out.d_3d.row(j), d);
        }

    double d_tau = 0.0;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) d_tau -= g_s.at(i, j) * s.at(i, j);
    out.d_tau = d_tau * inv_tau;
    return out;
}

double total_loss(double bidirectional, double reg, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("total_loss: gamma must be >= 0");
    return bidirectional + gamma * reg;
}

}  // namespace daer::align
