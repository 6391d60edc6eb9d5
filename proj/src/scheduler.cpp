#include "dsla/scheduler.hpp"

namespace dsla {

std::vector<std::vector<int>> schedule_batch(const std::vector<BatchMember>& batch,
                                             int layer_idx) {
    require(layer_idx >= 0, "layer index out of range");
    std::vector<std::vector<int>> subs;
    std::vector<LayerKind> sub_kind;
    for (size_t i = 0; i < batch.size(); ++i) {
        require(layer_idx < static_cast<int>(batch[i].kinds.size()),
                "batch member mask shorter than the stack");
        const LayerKind k = batch[i].kinds[layer_idx];
        int slot = -1;
        for (size_t s = 0; s < sub_kind.size(); ++s) {
            if (sub_kind[s] == k) slot = static_cast<int>(s);
        }
        if (slot < 0) {
            sub_kind.push_back(k);
            subs.emplace_back();
            slot = static_cast<int>(subs.size()) - 1;
        }
        subs[slot].push_back(static_cast<int>(i));
    }
    return subs;
}

namespace {

Matrix apply_layer(const ToyModel& m, int layer_idx, const Matrix& X, bool converted) {
    if (converted) {
        require(m.replacement[layer_idx].has_value(),
                "converted layer has no trained replacement");
        return forward_sequence(*m.replacement[layer_idx], X).Y;
    }
    return teacher_forward(m.teacher[layer_idx], X).O;
}

}  // namespace

std::vector<Matrix> batched_forward(const ToyModel& m, const std::vector<Matrix>& inputs,
                                    const std::vector<std::vector<bool>>& converted_mask) {
    require(inputs.size() == converted_mask.size(), "one mask per input required");
    const int L = m.layer_count();
    std::vector<BatchMember> batch(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        require(static_cast<int>(converted_mask[i].size()) == L, "mask length must equal depth");
        batch[i].request_id = static_cast<int>(i);
        batch[i].kinds.resize(L);
        for (int l = 0; l < L; ++l)
            batch[i].kinds[l] = converted_mask[i][l] ? LayerKind::DSLA : LayerKind::Teacher;
    }

    std::vector<Matrix> cur = inputs;
    for (int l = 0; l < L; ++l) {
        // split by kind, run each sub-batch through the layer, merge back
        for (const std::vector<int>& sub : schedule_batch(batch, l)) {
            for (int idx : sub) cur[idx] = apply_layer(m, l, cur[idx], converted_mask[idx][l]);
        }
        if (l + 1 < L)
            for (Matrix& y : cur) y = y.array().tanh().matrix();
    }
    return cur;
}

Matrix masked_forward(const ToyModel& m, const Matrix& X, const std::vector<bool>& converted_mask) {
    require(static_cast<int>(converted_mask.size()) == m.layer_count(),
            "mask length must equal depth");
    Matrix cur = X;
    for (int l = 0; l < m.layer_count(); ++l) {
        Matrix y = apply_layer(m, l, cur, converted_mask[l]);
        cur = (l + 1 < m.layer_count()) ? y.array().tanh().matrix() : y;
    }
    return cur;
}

}  // namespace dsla
