#include "dsla/losses.hpp"

#include <cmath>

namespace dsla {

Matrix row_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (int t = 0; t < logits.rows(); ++t) {
        const double m = logits.row(t).maxCoeff();
        out.row(t) = (logits.row(t).array() - m).exp();
        out.row(t) /= out.row(t).sum();
    }
    return out;
}

double distill_loss(const Matrix& student_O, const Matrix& teacher_O, DistillObjective obj) {
    require(student_O.rows() == teacher_O.rows() && student_O.cols() == teacher_O.cols(),
            "student/teacher output shape mismatch");
    require(student_O.rows() >= 1, "need at least one token");
    require_finite(student_O, "student output");
    require_finite(teacher_O, "teacher output");
    const int T = static_cast<int>(student_O.rows());

    if (obj == DistillObjective::MSE) {
        return (student_O - teacher_O).squaredNorm() / (T * student_O.cols());
    }

    const Matrix P = row_softmax(teacher_O);
    const Matrix Q = row_softmax(student_O);
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < P.cols(); ++j) {
            acc += P(t, j) * (std::log(P(t, j)) - std::log(Q(t, j)));
        }
    }
    return acc / T;
}

double contrastive_loss(const std::vector<Matrix>& gates1, const std::vector<Matrix>& gates2) {
    require(gates1.size() == gates2.size() && !gates1.empty(), "gate lists must match and be non-empty");
    double acc = 0.0;
    for (size_t t = 0; t < gates1.size(); ++t) {
        const double n1 = gates1[t].norm();
        const double n2 = gates2[t].norm();
        require(n1 > 0.0 && n2 > 0.0, "zero-norm gate matrix");
        acc += gates1[t].cwiseProduct(gates2[t]).sum() / (n1 * n2);
    }
    return acc / static_cast<double>(gates1.size());
}

LossBreakdown total_loss(const Matrix& student_O, const Matrix& teacher_O,
                         const std::vector<Matrix>& gates1, const std::vector<Matrix>& gates2,
                         double lambda, DistillObjective obj) {
    require(lambda >= 0.0, "lambda must be non-negative");
    LossBreakdown lb;
    lb.l_dist = distill_loss(student_O, teacher_O, obj);
    lb.l_cont = contrastive_loss(gates1, gates2);
    lb.lambda = lambda;
    lb.total = lb.l_dist + lambda * lb.l_cont;
    return lb;
}

}  // namespace dsla
