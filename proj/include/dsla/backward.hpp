#pragma once

#include <utility>

#include "dsla/attention.hpp"
#include "dsla/losses.hpp"

namespace dsla {

// Gradients with the same shapes as the corresponding LayerParams entries.
// Teacher layers leave the gate blocks and gamma at zero.
struct GradientSet {
    Matrix W_q, W_k, W_v, W_o;
    GateProjection gate1;
    GateProjection gate2;
    double gamma_raw = 0.0;

    static GradientSet Zero(int d) {
        GradientSet g;
        g.W_q = g.W_k = g.W_v = g.W_o = Matrix::Zero(d, d);
        g.gate1 = GateProjection::Zero(d);
        g.gate2 = GateProjection::Zero(d);
        return g;
    }
    void check_finite() const;
};

// Loss and exact gradients of total_loss for one DSLA layer, running the
// recurrence trace backward in O(T d^2).
std::pair<LossBreakdown, GradientSet> backward(const LayerParams& p, const Matrix& X,
                                               const Matrix& teacher_O, double lambda,
                                               DistillObjective obj = DistillObjective::SoftmaxKL);

// Reverse pass through causal softmax attention given dL/dY; returns the
// parameter gradients and dL/dX (needed when teacher layers are stacked).
std::pair<GradientSet, Matrix> teacher_backward(const LayerParams& p, const Matrix& X,
                                                const Matrix& dY);

}  // namespace dsla
