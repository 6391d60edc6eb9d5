#include "dsla/backward.hpp"

#include <cmath>

namespace dsla {

void GradientSet::check_finite() const {
    auto chk = [](const Matrix& m, const char* name) {
        if (!m.allFinite()) throw std::domain_error(std::string("non-finite gradient for ") + name);
    };
    chk(W_q, "W_q");
    chk(W_k, "W_k");
    chk(W_v, "W_v");
    chk(W_o, "W_o");
    chk(gate1.A_alpha, "gate1.A_alpha");
    chk(gate1.A_beta, "gate1.A_beta");
    chk(gate2.A_alpha, "gate2.A_alpha");
    chk(gate2.A_beta, "gate2.A_beta");
    if (!gate1.b_alpha.allFinite() || !gate1.b_beta.allFinite() ||
        !gate2.b_alpha.allFinite() || !gate2.b_beta.allFinite() || !std::isfinite(gamma_raw)) {
        throw std::domain_error("non-finite gradient for gate bias or gamma");
    }
}

std::pair<LossBreakdown, GradientSet> backward(const LayerParams& p, const Matrix& X,
                                               const Matrix& teacher_O, double lambda,
                                               DistillObjective obj) {
    require(p.kind == LayerKind::DSLA, "backward requires a DSLA layer");
    const ForwardTrace tr = forward_sequence(p, X);
    const int T = static_cast<int>(X.rows());
    const int d = p.dim();
    const int h = p.head_count;
    const int dh = p.head_dim();
    const double gamma = p.gamma();

    // Full-d gate matrices drive the contrastive term; their per-head
    // diagonal blocks drive the recurrence.
    std::vector<Matrix> G1(T), G2(T);
    for (int t = 0; t < T; ++t) {
        G1[t] = tr.alpha1.row(t).transpose() * tr.beta1.row(t);
        G2[t] = tr.alpha2.row(t).transpose() * tr.beta2.row(t);
    }

    LossBreakdown lb = total_loss(tr.Y, teacher_O, G1, G2, lambda, obj);

    // dL/dY
    Matrix dY(T, d);
    if (obj == DistillObjective::MSE) {
        dY = 2.0 * (tr.Y - teacher_O) / (T * d);
    } else {
        const Matrix P = row_softmax(teacher_O);
        const Matrix Q = row_softmax(tr.Y);
        dY = (Q - P) / T;
    }

    GradientSet g = GradientSet::Zero(d);
    g.W_o = tr.mixed.transpose() * dY;
    const Matrix dMixed = dY * p.W_o.transpose();

    Matrix dQm = Matrix::Zero(T, d), dKm = Matrix::Zero(T, d), dVm = Matrix::Zero(T, d);
    std::vector<Matrix> dG1(T, Matrix::Zero(d, d)), dG2(T, Matrix::Zero(d, d));

    // Contrastive term: mean_t cos(G1_t, G2_t) on flattened matrices.
    for (int t = 0; t < T; ++t) {
        const double n1 = G1[t].norm();
        const double n2 = G2[t].norm();
        const double dot = G1[t].cwiseProduct(G2[t]).sum();
        const double cs = dot / (n1 * n2);
        const double w = lambda / T;
        dG1[t] += w * (G2[t] / (n1 * n2) - cs * G1[t] / (n1 * n1));
        dG2[t] += w * (G1[t] / (n1 * n2) - cs * G2[t] / (n2 * n2));
    }

    double dGamma = 0.0;
    for (int hd = 0; hd < h; ++hd) {
        const int c0 = hd * dh;
        // Local contributions at each step, then BPTT through both states.
        std::vector<Matrix> dS1loc(T), dS2loc(T);
        for (int t = 0; t < T; ++t) {
            const RowVector q = tr.Q.row(t).segment(c0, dh);
            const RowVector dm = dMixed.row(t).segment(c0, dh);
            const Matrix dB = q.transpose() * dm;
            dGamma += dB.cwiseProduct(tr.S1[t + 1][hd] - tr.S2[t + 1][hd]).sum();
            dS1loc[t] = gamma * dB;
            dS2loc[t] = (1.0 - gamma) * dB;
            dQm.row(t).segment(c0, dh) +=
                dm * (gamma * tr.S1[t + 1][hd] + (1.0 - gamma) * tr.S2[t + 1][hd]).transpose();
        }
        Matrix carry1 = Matrix::Zero(dh, dh), carry2 = Matrix::Zero(dh, dh);
        for (int t = T - 1; t >= 0; --t) {
            const RowVector k = tr.K.row(t).segment(c0, dh);
            const RowVector v = tr.V.row(t).segment(c0, dh);
            const Matrix D1 = carry1 + dS1loc[t];
            const Matrix D2 = carry2 + dS2loc[t];
            dG1[t].block(c0, c0, dh, dh) += D1.cwiseProduct(tr.S1[t][hd]);
            dG2[t].block(c0, c0, dh, dh) += D2.cwiseProduct(tr.S2[t][hd]);
            dKm.row(t).segment(c0, dh) += ((D1 + D2) * v.transpose()).transpose();
            dVm.row(t).segment(c0, dh) += k * (D1 + D2);
            carry1 = D1.cwiseProduct(G1[t].block(c0, c0, dh, dh));
            carry2 = D2.cwiseProduct(G2[t].block(c0, c0, dh, dh));
        }
    }

    // Gate matrices back to projections: G = alpha beta^T.
    auto gate_back = [&](const std::vector<Matrix>& dG, const Matrix& alpha, const Matrix& beta,
                         GateProjection& out) {
        for (int t = 0; t < T; ++t) {
            const Vector a = alpha.row(t).transpose();
            const Vector b = beta.row(t).transpose();
            const Vector da = dG[t] * b;
            const Vector db = dG[t].transpose() * a;
            const Vector dza = da.cwiseProduct(a.cwiseProduct(Vector::Ones(d) - a));
            const Vector dzb = db.cwiseProduct(b.cwiseProduct(Vector::Ones(d) - b));
            out.A_alpha += dza * X.row(t);
            out.b_alpha += dza;
            out.A_beta += dzb * X.row(t);
            out.b_beta += dzb;
        }
    };
    gate_back(dG1, tr.alpha1, tr.beta1, g.gate1);
    gate_back(dG2, tr.alpha2, tr.beta2, g.gate2);

    g.W_q = X.transpose() * dQm;
    g.W_k = X.transpose() * dKm;
    g.W_v = X.transpose() * dVm;
    g.gamma_raw = dGamma * gamma * (1.0 - gamma);
    g.check_finite();
    return {lb, g};
}

std::pair<GradientSet, Matrix> teacher_backward(const LayerParams& p, const Matrix& X,
                                                const Matrix& dY) {
    require(p.kind == LayerKind::Teacher, "teacher_backward requires a Teacher layer");
    const int T = static_cast<int>(X.rows());
    const int d = p.dim();
    const int h = p.head_count;
    const int dh = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto [Q, K, V] = project_qkv(X, p);
    const TeacherResult fwd = teacher_forward(p, X);

    GradientSet g = GradientSet::Zero(d);
    Matrix concat(T, d);
    for (int hd = 0; hd < h; ++hd) {
        concat.middleCols(hd * dh, dh) = fwd.A[hd] * V.middleCols(hd * dh, dh);
    }
    g.W_o = concat.transpose() * dY;
    const Matrix dConcat = dY * p.W_o.transpose();

    Matrix dQm = Matrix::Zero(T, d), dKm = Matrix::Zero(T, d), dVm = Matrix::Zero(T, d);
    for (int hd = 0; hd < h; ++hd) {
        const int c0 = hd * dh;
        const Matrix& A = fwd.A[hd];
        const Matrix Vh = V.middleCols(c0, dh);
        const Matrix dCh = dConcat.middleCols(c0, dh);
        const Matrix dA = dCh * Vh.transpose();
        dVm.middleCols(c0, dh) = A.transpose() * dCh;
        Matrix dZ = Matrix::Zero(T, T);
        for (int t = 0; t < T; ++t) {
            const auto a = A.row(t).head(t + 1);
            const auto da = dA.row(t).head(t + 1);
            const double dot = (a.array() * da.array()).sum();
            dZ.row(t).head(t + 1) = a.array() * (da.array() - dot);
        }
        dQm.middleCols(c0, dh) = scale * dZ * K.middleCols(c0, dh);
        dKm.middleCols(c0, dh) = scale * dZ.transpose() * Q.middleCols(c0, dh);
    }

    g.W_q = X.transpose() * dQm;
    g.W_k = X.transpose() * dKm;
    g.W_v = X.transpose() * dVm;
    Matrix dX = dQm * p.W_q.transpose() + dKm * p.W_k.transpose() + dVm * p.W_v.transpose();
    g.check_finite();
    return {g, dX};
}

}  // namespace dsla
