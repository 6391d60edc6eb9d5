#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsla {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class LayerKind { Teacher, GLA, DSLA };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Teacher: return "teacher";
        case LayerKind::GLA: return "gla";
        case LayerKind::DSLA: return "dsla";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "teacher") return LayerKind::Teacher;
    if (s == "gla") return LayerKind::GLA;
    if (s == "dsla") return LayerKind::DSLA;
    throw std::invalid_argument("unknown layer kind: " + s);
}

// Rank-1 forget-gate parameterization: G_t = logistic(A_a x_t + b_a) *
// logistic(A_b x_t + b_b)^T, so every entry lies in (0,1).
struct GateProjection {
    Matrix A_alpha;  // d x d
    Vector b_alpha;  // d
    Matrix A_beta;   // d x d
    Vector b_beta;   // d

    static GateProjection Zero(int d) {
        return {Matrix::Zero(d, d), Vector::Zero(d), Matrix::Zero(d, d), Vector::Zero(d)};
    }
};

// One layer's weights. Teacher layers use only the projections; GLA adds
// gate1; DSLA adds gate2 and the blend coefficient gamma (stored as an
// unconstrained pre-image mapped through the logistic).
struct LayerParams {
    LayerKind kind = LayerKind::Teacher;
    Matrix W_q, W_k, W_v, W_o;  // d x d
    std::optional<GateProjection> gate1;
    std::optional<GateProjection> gate2;
    double gamma_raw = 0.0;  // gamma = logistic(gamma_raw)
    int head_count = 1;

    int dim() const { return static_cast<int>(W_q.rows()); }
    int head_dim() const { return dim() / head_count; }
    double gamma() const { return 1.0 / (1.0 + std::exp(-gamma_raw)); }

    void validate() const;
};

// Pair of hidden states carried across tokens; S1 is the history state,
// S2 the recency state. For GLA only S1 is used.
struct DualState {
    Matrix S1;
    Matrix S2;

    static DualState Zero(int d) { return {Matrix::Zero(d, d), Matrix::Zero(d, d)}; }
};

// Attention magnitudes from the final query to every past token, one
// profile per (layer, head). Teacher profiles are softmax rows (sum to 1);
// linear-attention profiles are L2 magnitudes of the score vectors.
struct AttentionProfile {
    int layer_index = 0;
    int head_index = 0;
    Vector scores;  // length T, non-negative
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw std::domain_error("non-finite values in " + what);
}

inline void require_finite(const Vector& v, const std::string& what) {
    if (!v.allFinite()) throw std::domain_error("non-finite values in " + what);
}

}  // namespace dsla
