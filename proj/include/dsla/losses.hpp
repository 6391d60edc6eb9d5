#pragma once

#include <vector>

#include "dsla/types.hpp"

namespace dsla {

enum class DistillObjective { SoftmaxKL, MSE };

struct LossBreakdown {
    double l_dist = 0.0;   // >= 0 for SoftmaxKL
    double l_cont = 0.0;   // mean gate cosine, in [-1, 1]
    double lambda = 0.0;
    double total = 0.0;    // l_dist + lambda * l_cont, exactly
};

// Softmax over the feature dimension, one row at a time.
Matrix row_softmax(const Matrix& logits);

// Mean over tokens of KL(teacher || student), both rows softmax-normalized
// over the feature dimension. MSE variant: mean squared entry difference.
double distill_loss(const Matrix& student_O, const Matrix& teacher_O,
                    DistillObjective obj = DistillObjective::SoftmaxKL);

// Mean over steps of cosine similarity between the flattened gate matrices.
double contrastive_loss(const std::vector<Matrix>& gates1, const std::vector<Matrix>& gates2);

LossBreakdown total_loss(const Matrix& student_O, const Matrix& teacher_O,
                         const std::vector<Matrix>& gates1, const std::vector<Matrix>& gates2,
                         double lambda, DistillObjective obj = DistillObjective::SoftmaxKL);

}  // namespace dsla
