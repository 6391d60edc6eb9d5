#pragma once

#include <vector>

#include "dsla/model.hpp"

namespace dsla {

// One request's routing through the stack: kinds[l] is the architecture it
// needs at layer l.
struct BatchMember {
    int request_id = 0;
    std::vector<LayerKind> kinds;
};

// Order-stable partition of the batch by kind at one layer; at most two
// sub-batches since kinds at a layer are binary (teacher vs converted).
// Sub-batches appear in order of first member.
std::vector<std::vector<int>> schedule_batch(const std::vector<BatchMember>& batch, int layer_idx);

// Runs a mixed batch through the model layer by layer, splitting into
// sub-batches where routing diverges and merging after each layer. Each
// member's mask holds true where it runs the DSLA replacement. Outputs are
// indexed like `inputs`.
std::vector<Matrix> batched_forward(const ToyModel& m, const std::vector<Matrix>& inputs,
                                    const std::vector<std::vector<bool>>& converted_mask);

// Sequential oracle: one request at a time through the same routing.
Matrix masked_forward(const ToyModel& m, const Matrix& X, const std::vector<bool>& converted_mask);

}  // namespace dsla
