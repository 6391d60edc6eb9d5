#include "dsla/sensitivity.hpp"

#include <algorithm>
#include <cmath>

namespace dsla {

double attention_entropy(const Vector& row) {
    require(row.size() >= 1, "empty attention row");
    double sum = 0.0;
    for (int i = 0; i < row.size(); ++i) {
        if (row(i) < 0.0) throw std::domain_error("negative attention weight");
        sum += row(i);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("attention row is not normalized");
    double h = 0.0;
    for (int i = 0; i < row.size(); ++i) {
        if (row(i) > 0.0) h -= row(i) * std::log(row(i));
    }
    return h;
}

LayerSensitivity layer_entropy(const ToyModel& m, int layer_idx,
                               const std::vector<Matrix>& calibration, bool all_rows) {
    require(!calibration.empty(), "empty calibration set");
    LayerSensitivity ls;
    ls.layer_index = layer_idx;
    double acc = 0.0;
    long n = 0;
    for (const Matrix& X : calibration) {
        const TeacherResult r = teacher_layer_result(m, layer_idx, X, 0);
        const int T = static_cast<int>(X.rows());
        for (const Matrix& A : r.A) {
            if (all_rows) {
                for (int t = 0; t < T; ++t) {
                    acc += attention_entropy(A.row(t).head(t + 1).transpose());
                    ++n;
                }
            } else {
                acc += attention_entropy(A.row(T - 1).transpose());
                ++n;
            }
        }
    }
    ls.mean_entropy = acc / n;
    ls.sample_count = n;
    return ls;
}

ConversionOrder rank_layers(const ToyModel& m, const std::vector<Matrix>& calibration,
                            bool all_rows) {
    require(m.layer_count() >= 1, "model has no layers");
    std::vector<LayerSensitivity> sens;
    for (int l = 0; l < m.layer_count(); ++l) {
        sens.push_back(layer_entropy(m, l, calibration, all_rows));
    }
    ConversionOrder order(m.layer_count());
    for (int l = 0; l < m.layer_count(); ++l) order[l] = l;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sens[a].mean_entropy != sens[b].mean_entropy)
            return sens[a].mean_entropy < sens[b].mean_entropy;
        return a < b;
    });
    return order;
}

std::vector<RankingReportRow> ranking_report(const ToyModel& m,
                                             const std::vector<Matrix>& calibration) {
    ConversionOrder order = rank_layers(m, calibration);
    std::vector<RankingReportRow> rows;
    for (int rank = 0; rank < static_cast<int>(order.size()); ++rank) {
        const int layer = order[rank];
        rows.push_back({layer, layer_entropy(m, layer, calibration).mean_entropy, rank});
    }
    std::sort(rows.begin(), rows.end(),
              [](const RankingReportRow& a, const RankingReportRow& b) { return a.layer < b.layer; });
    return rows;
}

}  // namespace dsla
