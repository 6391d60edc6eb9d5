#include "dsla/optimizer.hpp"

#include <cmath>

namespace dsla {

double LrSchedule::lr_at(long step) const {
    const double ws = warmup_fraction * static_cast<double>(total_steps);
    if (ws > 0.0 && static_cast<double>(step) < ws) {
        return peak_lr * static_cast<double>(step) / ws;
    }
    const double span = static_cast<double>(total_steps) - ws;
    double progress = span > 0.0 ? (static_cast<double>(step) - ws) / span : 1.0;
    progress = std::min(std::max(progress, 0.0), 1.0);
    return floor_lr + 0.5 * (peak_lr - floor_lr) * (1.0 + std::cos(M_PI * progress));
}

OptimizerState OptimizerState::create(int d, LrSchedule sched, double weight_decay) {
    OptimizerState st;
    st.schedule = sched;
    st.weight_decay = weight_decay;
    st.m = GradientSet::Zero(d);
    st.v = GradientSet::Zero(d);
    return st;
}

namespace {

void adamw_tensor(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, const OptimizerState& st,
                  double lr, double bc1, double bc2, bool decay) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    const Matrix mhat = m / bc1;
    const Matrix vhat = v / bc2;
    p -= lr * mhat.cwiseQuotient(vhat.cwiseSqrt() + Matrix::Constant(p.rows(), p.cols(), st.eps));
    if (decay) p -= lr * st.weight_decay * p;
}

void adamw_vector(Vector& p, const Vector& g, Vector& m, Vector& v, const OptimizerState& st,
                  double lr, double bc1, double bc2) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    const Vector mhat = m / bc1;
    const Vector vhat = v / bc2;
    p -= lr * mhat.cwiseQuotient(vhat.cwiseSqrt() + Vector::Constant(p.size(), st.eps));
}

void adamw_scalar(double& p, double g, double& m, double& v, const OptimizerState& st,
                  double lr, double bc1, double bc2) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
}

}  // namespace

void optimizer_step(LayerParams& params, const GradientSet& grads, OptimizerState& state) {
    const double lr = state.schedule.lr_at(state.step);
    const long t = state.step + 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));

    // Decoupled decay on weight matrices only; biases and gamma are exempt.
    adamw_tensor(params.W_q, grads.W_q, state.m.W_q, state.v.W_q, state, lr, bc1, bc2, true);
    adamw_tensor(params.W_k, grads.W_k, state.m.W_k, state.v.W_k, state, lr, bc1, bc2, true);
    adamw_tensor(params.W_v, grads.W_v, state.m.W_v, state.v.W_v, state, lr, bc1, bc2, true);
    adamw_tensor(params.W_o, grads.W_o, state.m.W_o, state.v.W_o, state, lr, bc1, bc2, true);

    auto gate_update = [&](GateProjection& p, const GateProjection& g, GateProjection& m,
                           GateProjection& v) {
        adamw_tensor(p.A_alpha, g.A_alpha, m.A_alpha, v.A_alpha, state, lr, bc1, bc2, true);
        adamw_tensor(p.A_beta, g.A_beta, m.A_beta, v.A_beta, state, lr, bc1, bc2, true);
        adamw_vector(p.b_alpha, g.b_alpha, m.b_alpha, v.b_alpha, state, lr, bc1, bc2);
        adamw_vector(p.b_beta, g.b_beta, m.b_beta, v.b_beta, state, lr, bc1, bc2);
    };
    if (params.gate1) gate_update(*params.gate1, grads.gate1, state.m.gate1, state.v.gate1);
    if (params.gate2) gate_update(*params.gate2, grads.gate2, state.m.gate2, state.v.gate2);
    if (params.kind == LayerKind::DSLA) {
        adamw_scalar(params.gamma_raw, grads.gamma_raw, state.m.gamma_raw, state.v.gamma_raw,
                     state, lr, bc1, bc2);
    }
    state.step += 1;
}

}  // namespace dsla
