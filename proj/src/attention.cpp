#include "dsla/attention.hpp"

#include <cmath>

namespace dsla {

void LayerParams::validate() const {
    const int d = dim();
    require(d >= 1, "layer dim must be >= 1");
    require(head_count >= 1 && d % head_count == 0, "d must be divisible by head_count");
    auto chk = [&](const Matrix& m, const char* name) {
        require(m.rows() == d && m.cols() == d, std::string(name) + " must be d x d");
        require_finite(m, name);
    };
    chk(W_q, "W_q");
    chk(W_k, "W_k");
    chk(W_v, "W_v");
    chk(W_o, "W_o");
    if (kind == LayerKind::Teacher) return;
    require(gate1.has_value(), "GLA/DSLA layer requires gate1");
    if (kind == LayerKind::DSLA) {
        require(gate2.has_value(), "DSLA layer requires gate2");
    } else {
        require(!gate2.has_value(), "gate2 is present iff kind is DSLA");
    }
}

static Vector logistic(const Vector& z) {
    return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

std::tuple<Matrix, Matrix, Matrix> project_qkv(const Matrix& X, const LayerParams& p) {
    require(X.cols() == p.dim(), "token dim does not match layer dim");
    require(X.rows() >= 1, "need at least one token");
    require_finite(X, "X");
    return {X * p.W_q, X * p.W_k, X * p.W_v};
}

Matrix compute_gate(const Vector& x_t, const GateProjection& g) {
    require(x_t.size() == g.A_alpha.cols(), "gate projection dim mismatch");
    require_finite(x_t, "gate input");
    const Vector alpha = logistic(g.A_alpha * x_t + g.b_alpha);
    const Vector beta = logistic(g.A_beta * x_t + g.b_beta);
    return alpha * beta.transpose();
}

Matrix gla_step(const Matrix& S_prev, const Matrix& G, const RowVector& k, const RowVector& v) {
    require(S_prev.rows() == G.rows() && S_prev.cols() == G.cols(), "gate/state shape mismatch");
    require(k.size() == S_prev.rows() && v.size() == S_prev.cols(), "k/v shape mismatch");
    return G.cwiseProduct(S_prev) + k.transpose() * v;
}

RowVector gla_output(const RowVector& q, const Matrix& S) {
    require(q.size() == S.rows(), "query/state shape mismatch");
    return q * S;
}

DualState dsla_step(const DualState& st, const Matrix& G1, const Matrix& G2,
                    const RowVector& k, const RowVector& v) {
    return {gla_step(st.S1, G1, k, v), gla_step(st.S2, G2, k, v)};
}

RowVector dsla_output(const RowVector& q, const DualState& st, double gamma) {
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0,1]");
    return q * (gamma * st.S1 + (1.0 - gamma) * st.S2);
}

ForwardTrace forward_sequence(const LayerParams& p, const Matrix& X) {
    p.validate();
    require(p.kind == LayerKind::GLA || p.kind == LayerKind::DSLA,
            "forward_sequence requires a GLA or DSLA layer");
    const int T = static_cast<int>(X.rows());
    const int d = p.dim();
    const int h = p.head_count;
    const int dh = p.head_dim();
    const bool dual = p.kind == LayerKind::DSLA;
    const double gamma = dual ? p.gamma() : 1.0;

    ForwardTrace tr;
    std::tie(tr.Q, tr.K, tr.V) = project_qkv(X, p);
    tr.alpha1.resize(T, d);
    tr.beta1.resize(T, d);
    if (dual) {
        tr.alpha2.resize(T, d);
        tr.beta2.resize(T, d);
    }
    tr.S1.assign(T + 1, std::vector<Matrix>(h, Matrix::Zero(dh, dh)));
    if (dual) tr.S2.assign(T + 1, std::vector<Matrix>(h, Matrix::Zero(dh, dh)));
    tr.mixed.resize(T, d);

    const GateProjection& g1 = *p.gate1;
    for (int t = 0; t < T; ++t) {
        const Vector x = X.row(t).transpose();
        tr.alpha1.row(t) = logistic(g1.A_alpha * x + g1.b_alpha).transpose();
        tr.beta1.row(t) = logistic(g1.A_beta * x + g1.b_beta).transpose();
        if (dual) {
            const GateProjection& g2 = *p.gate2;
            tr.alpha2.row(t) = logistic(g2.A_alpha * x + g2.b_alpha).transpose();
            tr.beta2.row(t) = logistic(g2.A_beta * x + g2.b_beta).transpose();
        }
        for (int hd = 0; hd < h; ++hd) {
            const int c0 = hd * dh;
            const RowVector k = tr.K.row(t).segment(c0, dh);
            const RowVector v = tr.V.row(t).segment(c0, dh);
            const RowVector q = tr.Q.row(t).segment(c0, dh);
            const Matrix G1 = tr.alpha1.row(t).segment(c0, dh).transpose() *
                              tr.beta1.row(t).segment(c0, dh);
            tr.S1[t + 1][hd] = gla_step(tr.S1[t][hd], G1, k, v);
            if (dual) {
                const Matrix G2 = tr.alpha2.row(t).segment(c0, dh).transpose() *
                                  tr.beta2.row(t).segment(c0, dh);
                tr.S2[t + 1][hd] = gla_step(tr.S2[t][hd], G2, k, v);
                tr.mixed.row(t).segment(c0, dh) =
                    dsla_output(q, {tr.S1[t + 1][hd], tr.S2[t + 1][hd]}, gamma);
            } else {
                tr.mixed.row(t).segment(c0, dh) = gla_output(q, tr.S1[t + 1][hd]);
            }
        }
        if (!tr.mixed.row(t).allFinite()) {
            throw std::domain_error("non-finite recurrent output at step " + std::to_string(t));
        }
    }
    tr.Y = tr.mixed * p.W_o;
    return tr;
}

TeacherResult teacher_forward(const LayerParams& p, const Matrix& X) {
    p.validate();
    require(p.kind == LayerKind::Teacher, "teacher_forward requires a Teacher layer");
    const int T = static_cast<int>(X.rows());
    const int h = p.head_count;
    const int dh = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto [Q, K, V] = project_qkv(X, p);
    TeacherResult res;
    res.A.resize(h);
    Matrix concat(T, p.dim());
    for (int hd = 0; hd < h; ++hd) {
        const int c0 = hd * dh;
        const Matrix Qh = Q.middleCols(c0, dh);
        const Matrix Kh = K.middleCols(c0, dh);
        const Matrix Vh = V.middleCols(c0, dh);
        Matrix A = Matrix::Zero(T, T);
        for (int t = 0; t < T; ++t) {
            RowVector logits = scale * (Qh.row(t) * Kh.transpose());
            const double m = logits.head(t + 1).maxCoeff();
            double z = 0.0;
            for (int i = 0; i <= t; ++i) {
                A(t, i) = std::exp(logits(i) - m);
                z += A(t, i);
            }
            A.row(t).head(t + 1) /= z;
        }
        concat.middleCols(c0, dh) = A * Vh;
        res.A[hd] = std::move(A);
    }
    res.O = concat * p.W_o;
    return res;
}

namespace {

// Per-head expansion of the gate-product score form. Walks t from the final
// token backward, folding gates into the running Hadamard product.
struct HeadScores {
    std::vector<RowVector> sigma1;  // [T] vectors of length d_h
    std::vector<RowVector> sigma2;  // empty for GLA
};

HeadScores head_scores(const ForwardTrace& tr, int c0, int dh, bool dual) {
    const int T = static_cast<int>(tr.Q.rows());
    HeadScores hs;
    hs.sigma1.assign(T, RowVector());
    if (dual) hs.sigma2.assign(T, RowVector());
    const RowVector qT = tr.Q.row(T - 1).segment(c0, dh);
    Matrix P1 = Matrix::Ones(dh, dh);
    Matrix P2 = Matrix::Ones(dh, dh);
    for (int t = T - 1; t >= 0; --t) {
        const RowVector qk = qT.cwiseProduct(tr.K.row(t).segment(c0, dh));
        hs.sigma1[t] = qk * P1;
        if (dual) hs.sigma2[t] = qk * P2;
        const Matrix G1 = tr.alpha1.row(t).segment(c0, dh).transpose() *
                          tr.beta1.row(t).segment(c0, dh);
        P1 = P1.cwiseProduct(G1);
        if (dual) {
            const Matrix G2 = tr.alpha2.row(t).segment(c0, dh).transpose() *
                              tr.beta2.row(t).segment(c0, dh);
            P2 = P2.cwiseProduct(G2);
        }
        require_finite(P1, "gate product");
    }
    return hs;
}

}  // namespace

std::vector<AttentionProfile> attention_scores_parallel(const LayerParams& p, const Matrix& X,
                                                        int layer_index) {
    require(p.kind == LayerKind::GLA || p.kind == LayerKind::DSLA,
            "scores_parallel requires a GLA or DSLA layer");
    const ForwardTrace tr = forward_sequence(p, X);
    const int T = static_cast<int>(X.rows());
    const int dh = p.head_dim();
    const bool dual = p.kind == LayerKind::DSLA;
    const double gamma = dual ? p.gamma() : 1.0;

    std::vector<AttentionProfile> out;
    for (int hd = 0; hd < p.head_count; ++hd) {
        const HeadScores hs = head_scores(tr, hd * dh, dh, dual);
        AttentionProfile prof;
        prof.layer_index = layer_index;
        prof.head_index = hd;
        prof.scores.resize(T);
        for (int t = 0; t < T; ++t) {
            RowVector s = dual ? RowVector(gamma * hs.sigma1[t] + (1.0 - gamma) * hs.sigma2[t])
                               : hs.sigma1[t];
            prof.scores(t) = s.norm();
        }
        out.push_back(std::move(prof));
    }
    return out;
}

RowVector parallel_reconstruct_last(const LayerParams& p, const Matrix& X) {
    const ForwardTrace tr = forward_sequence(p, X);
    const int T = static_cast<int>(X.rows());
    const int dh = p.head_dim();
    const bool dual = p.kind == LayerKind::DSLA;
    const double gamma = dual ? p.gamma() : 1.0;

    RowVector concat = RowVector::Zero(p.dim());
    for (int hd = 0; hd < p.head_count; ++hd) {
        const int c0 = hd * dh;
        const HeadScores hs = head_scores(tr, c0, dh, dual);
        RowVector o = RowVector::Zero(dh);
        for (int t = 0; t < T; ++t) {
            RowVector s = dual ? RowVector(gamma * hs.sigma1[t] + (1.0 - gamma) * hs.sigma2[t])
                               : hs.sigma1[t];
            o += s.cwiseProduct(tr.V.row(t).segment(c0, dh));
        }
        concat.segment(c0, dh) = o;
    }
    return concat * p.W_o;
}

std::vector<ScoreDecomposition> dsla_score_decomposition(const LayerParams& p, const Matrix& X) {
    require(p.kind == LayerKind::DSLA, "score decomposition requires a DSLA layer");
    const ForwardTrace tr = forward_sequence(p, X);
    const int T = static_cast<int>(X.rows());
    const int dh = p.head_dim();
    std::vector<ScoreDecomposition> out;
    for (int hd = 0; hd < p.head_count; ++hd) {
        const HeadScores hs = head_scores(tr, hd * dh, dh, true);
        ScoreDecomposition dec;
        dec.head_index = hd;
        dec.sigma1.resize(T);
        dec.sigma2.resize(T);
        for (int t = 0; t < T; ++t) {
            dec.sigma1(t) = hs.sigma1[t].norm();
            dec.sigma2(t) = hs.sigma2[t].norm();
        }
        out.push_back(std::move(dec));
    }
    return out;
}

}  // namespace dsla
