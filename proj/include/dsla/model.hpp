#pragma once

#include <functional>
#include <random>
#include <vector>

#include "dsla/backward.hpp"
#include "dsla/optimizer.hpp"

namespace dsla {

// Stack of layers with a fixed tanh between them. Teacher layers are kept
// even after conversion so any prefix of the conversion order can run; the
// trained DSLA replacement lives alongside its teacher layer.
struct ToyModel {
    std::vector<LayerParams> teacher;
    std::vector<std::optional<LayerParams>> replacement;
    std::vector<int> conversion_order;
    int committed = 0;  // layers conversion_order[0..committed) run as DSLA

    int layer_count() const { return static_cast<int>(teacher.size()); }
    int dim() const { return teacher.empty() ? 0 : teacher.front().dim(); }
    // true if layer runs as DSLA under the first `active` conversions
    bool converted(int layer_idx, int active) const;
    void validate() const;
};

struct Dataset {
    std::vector<Matrix> inputs;    // each T x d
    std::vector<Matrix> targets;   // teacher pretraining targets, T x d
    int target_window = 0;         // loss applies to the last `target_window` rows
};

// Synthetic sequences with a planted long-range dependency: the codebook
// token at position 0 determines the target rows in the final quarter.
Dataset make_longrange_dataset(std::mt19937_64& rng, int count, int T, int d, int codebook = 4);

// Forward through the stack; `active` conversions taken from the order
// (-1 means the committed count).
Matrix model_forward(const ToyModel& m, const Matrix& X, int active = -1);

// Activations entering layer `layer_idx` under `active` conversions.
Matrix layer_input(const ToyModel& m, int layer_idx, const Matrix& X, int active = -1);

// Final-layer attention rows of a teacher layer evaluated in-place in the
// model (used by sensitivity scoring).
TeacherResult teacher_layer_result(const ToyModel& m, int layer_idx, const Matrix& X,
                                   int active = 0);

struct FinetuneConfig {
    double lambda = 0.1;
    DistillObjective objective = DistillObjective::SoftmaxKL;
    long step_cap = 2000;
    int plateau_window = 50;
    double plateau_tol = 1e-4;
    LrSchedule schedule{0.05, 1e-4, 5e-5, 2000};
    double history_gate_bias = 4.0;   // gate entries ~0.964, near the Hadamard identity
    double recency_sigma = 0.02;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
};

struct TrainLogRow {
    long step;
    double l_dist;
    double l_cont;
    double total;
    double lr;
};

struct FinetuneResult {
    LayerParams layer;
    std::vector<TrainLogRow> history;
    bool converged = false;
};

// DSLA layer seeded from a teacher layer: projections reused, history gate
// near-identity, recency gate randomly initialized, gamma at 0.5.
LayerParams init_dsla_from_teacher(const LayerParams& teacher, const FinetuneConfig& cfg,
                                   std::mt19937_64& rng);

// Trains a DSLA replacement for one teacher layer against that layer's
// outputs, inputs taken from the current partially converted stack. All
// other layers stay untouched.
FinetuneResult finetune_layer(const ToyModel& m, int layer_idx, const Dataset& data,
                              const FinetuneConfig& cfg);

// Chained procedure: convert in order, commit each stage. The callback (if
// set) receives the model after each committed stage.
using StageCallback = std::function<void(const ToyModel&, int stage, const FinetuneResult&)>;
void chained_finetune(ToyModel& m, const std::vector<int>& order, const Dataset& data,
                      const FinetuneConfig& cfg, const StageCallback& on_stage = nullptr);

// Teacher pretraining on the planted task: full backprop through the stack,
// mean-squared error on the target window.
struct TeacherTrainConfig {
    long steps = 400;
    LrSchedule schedule{0.05, 1e-2, 1e-3, 400};
    double weight_decay = 0.0;
};
std::vector<double> train_teacher(ToyModel& m, const Dataset& data, const TeacherTrainConfig& cfg);

// Fresh random teacher stack.
ToyModel make_teacher_model(std::mt19937_64& rng, int layers, int d, int heads, double scale = 0.4);

// Mean distillation loss between the fully-converted (or `active`-prefix)
// model and the all-teacher model over a dataset.
double heldout_distill_loss(const ToyModel& m, const Dataset& data, int active,
                            DistillObjective obj = DistillObjective::SoftmaxKL);

}  // namespace dsla
