#pragma once

#include <vector>

#include "dsla/model.hpp"

namespace dsla {

struct LayerSensitivity {
    int layer_index = 0;
    double mean_entropy = 0.0;  // nats
    long sample_count = 0;
};

using ConversionOrder = std::vector<int>;

// Shannon entropy in nats of one attention row; 0*ln 0 reads as 0.
double attention_entropy(const Vector& row);

// Mean entropy over calibration sequences and heads. Scores the final-query
// row by default; all_rows averages over every causal row instead.
LayerSensitivity layer_entropy(const ToyModel& m, int layer_idx,
                               const std::vector<Matrix>& calibration, bool all_rows = false);

// Ascending mean entropy, ties broken by lower layer index.
ConversionOrder rank_layers(const ToyModel& m, const std::vector<Matrix>& calibration,
                            bool all_rows = false);

struct RankingReportRow {
    int layer;
    double mean_entropy;
    int rank;
};
std::vector<RankingReportRow> ranking_report(const ToyModel& m,
                                             const std::vector<Matrix>& calibration);

}  // namespace dsla
