#pragma once

#include <cstddef>
#include <vector>

#include "daer/matrix.hpp"
#include "daer/rng.hpp"

// Cross-attention alignment core: token/point projections, stable softmax
// attention, bidirectional aggregation, pooled unit embeddings, and the
// bidirectional InfoNCE loss with analytic gradients.
namespace daer::align {

// Learnable d x d projections.
struct ProjectionSet {
    Mat w_q;       // queries from text features
    Mat w_k_3d;    // keys from point features
    Mat w_v_3d;    // values from point features
    Mat w_v_text;  // values from text features

    std::size_t dim() const { return w_q.rows; }

    static ProjectionSet identity(std::size_t d);
    // Gaussian init scaled by 1/sqrt(d).
    static ProjectionSet random(std::size_t d, Rng& rng);
};

struct Projected {
    Mat q_text;  // T x d
    Mat k_3d;    // N x d
    Mat v_3d;    // N x d
    Mat v_text;  // T x d
};

// Pre-softmax logits paired with their row-stochastic softmax. Kept together
// so refinement can edit logits and re-normalize without losing either view.
struct AttentionState {
    Mat logits;     // T x N
    Mat attention;  // T x N, rows sum to 1
};

struct Aggregated {
    Mat z_text;  // T x d, rows of A * V_3d
    Mat z_3d;    // N x d, rows of A^T * V_text
};

enum class Activation { gelu, identity };

// Two-layer projection head: d -> d' with activation, then d' -> d'.
struct EmbedHead {
    Mat w1;                  // d' x d
    std::vector<double> b1;  // d'
    Mat w2;                  // d' x d'
    std::vector<double> b2;  // d'
    Activation act = Activation::gelu;

    std::size_t in_dim() const { return w1.cols; }
    std::size_t out_dim() const { return w2.rows; }

    static EmbedHead identity(std::size_t d);
    static EmbedHead random(std::size_t d, std::size_t d_prime, Rng& rng);
};

struct HeadForward {
    std::vector<double> h1;  // pre-activation
    std::vector<double> a1;  // activation output
    std::vector<double> u;   // pre-normalization output
};

// Unit-norm global embedding of one modality.
struct ModalEmbedding {
    std::vector<double> vec;
    bool normalized = false;
};

// Contrastive model parameters shared by training, search reward, and export.
struct Model {
    ProjectionSet proj;
    EmbedHead head_text;
    EmbedHead head_3d;
    double tau = 0.07;

    std::size_t dim() const { return proj.dim(); }
    std::size_t embed_dim() const { return head_text.out_dim(); }
};

double gelu(double x);
double gelu_grad(double x);

// Q = F_text W_Q, K = F_3d W_K, V_3d = F_3d W_V3d, V_text = F_text W_Vtext.
// Rejects shape mismatches and non-finite features.
Projected project_qkv(const Mat& f_text, const Mat& f_3d, const ProjectionSet& w);

// logits = Q K^T / sqrt(d); attention = row-wise stable softmax.
// Rejects non-finite logits.
AttentionState initial_attention(const Mat& q_text, const Mat& k_3d);

// Rebuild the softmax view from edited logits.
AttentionState attention_from_logits(Mat logits);

// Z_text = A V_3d, Z_3d = A^T V_text.
Aggregated aggregate(const AttentionState& state, const Mat& v_3d, const Mat& v_text);

HeadForward head_forward(const EmbedHead& head, const double* x);

// Mean-pool rows of z, apply the head, L2-normalize.
ModalEmbedding pool_embed(const Mat& z, const EmbedHead& head);

// Full per-sample embedding path from an attention state; used by the search
// reward and by evaluation.
std::pair<ModalEmbedding, ModalEmbedding> embed_pair(const Model& model,
                                                     const AttentionState& state,
                                                     const Mat& v_3d, const Mat& v_text);

struct LossConfig {
    double tau = 0.07;
};

struct LossResult {
    double loss = 0.0;
    Mat d_text;    // B x d', gradient w.r.t. text embeddings (pre-normalization NOT included)
    Mat d_3d;      // B x d'
    double d_tau = 0.0;
};

// Symmetric InfoNCE over a batch of normalized embedding pairs; positives on
// the diagonal. Returns loss and analytic gradients.
LossResult infonce_bidirectional(const std::vector<ModalEmbedding>& e_text,
                                 const std::vector<ModalEmbedding>& e_3d,
                                 const LossConfig& cfg);

// Value-only variant for reward evaluation hot paths.
double infonce_loss(const std::vector<ModalEmbedding>& e_text,
                    const std::vector<ModalEmbedding>& e_3d, double tau);

// bidirectional + gamma * reg; gamma >= 0.
double total_loss(double bidirectional, double reg, double gamma);

}  // namespace daer::align
