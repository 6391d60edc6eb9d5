#pragma once

#include <tuple>
#include <vector>

#include "dsla/types.hpp"

namespace dsla {

// Everything the backward pass and the score expansion need from one
// recurrent forward run. States are stored per step and per head;
// S1[t]/S2[t] hold the state *after* consuming token t, index 0 is the
// initial zero state (so the arrays have T+1 entries).
struct ForwardTrace {
    Matrix Q, K, V;                        // T x d
    Matrix alpha1, beta1, alpha2, beta2;   // T x d, logistic outputs
    std::vector<std::vector<Matrix>> S1;   // [T+1][heads], each d_h x d_h
    std::vector<std::vector<Matrix>> S2;   // DSLA only; empty for GLA
    Matrix mixed;                          // T x d, per-head q_t * blended state
    Matrix Y;                              // T x d, mixed * W_o
};

struct TeacherResult {
    Matrix O;                    // T x d
    std::vector<Matrix> A;       // per head, T x T causal row-stochastic
};

std::tuple<Matrix, Matrix, Matrix> project_qkv(const Matrix& X, const LayerParams& p);

// G = logistic(A_a x + b_a) logistic(A_b x + b_b)^T; entries in (0,1).
Matrix compute_gate(const Vector& x_t, const GateProjection& g);

// S_t = G (.) S_prev + k^T v
Matrix gla_step(const Matrix& S_prev, const Matrix& G, const RowVector& k, const RowVector& v);

// o = q S (row vector times matrix)
RowVector gla_output(const RowVector& q, const Matrix& S);

DualState dsla_step(const DualState& st, const Matrix& G1, const Matrix& G2,
                    const RowVector& k, const RowVector& v);

RowVector dsla_output(const RowVector& q, const DualState& st, double gamma);

// Recurrent forward over the whole sequence for GLA or DSLA layers.
ForwardTrace forward_sequence(const LayerParams& p, const Matrix& X);

// Causal softmax self-attention (scaled dot product, per head).
TeacherResult teacher_forward(const LayerParams& p, const Matrix& X);

// Score-expanded form: per head, sigma_t = (q_T (.) k_t) * prod of gates
// after t, collapsed to an L2 magnitude per token. Also usable as the
// equivalence oracle against the recurrent path.
std::vector<AttentionProfile> attention_scores_parallel(const LayerParams& p, const Matrix& X,
                                                        int layer_index = 0);

// Per-head score vectors before the L2 collapse, for the parallel/recurrent
// equivalence check: reconstructed output sum_t sigma_t (.) v_t per head.
// Returns the T x d reconstruction of the final-position pre-W_o output.
RowVector parallel_reconstruct_last(const LayerParams& p, const Matrix& X);

// Final-query score decomposition for DSLA layers: per head, the sigma^1
// and sigma^2 magnitude vectors separately (history vs recency).
struct ScoreDecomposition {
    int head_index = 0;
    Vector sigma1;  // length T magnitudes
    Vector sigma2;
};
std::vector<ScoreDecomposition> dsla_score_decomposition(const LayerParams& p, const Matrix& X);

}  // namespace dsla
