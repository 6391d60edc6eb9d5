#include "dsla/model.hpp"

#include <algorithm>
#include <cmath>

namespace dsla {

bool ToyModel::converted(int layer_idx, int active) const {
    if (active < 0) active = committed;
    for (int i = 0; i < active && i < static_cast<int>(conversion_order.size()); ++i) {
        if (conversion_order[i] == layer_idx) return true;
    }
    return false;
}

void ToyModel::validate() const {
    require(!teacher.empty(), "model needs at least one layer");
    require(replacement.size() == teacher.size(), "replacement list size mismatch");
    for (const auto& l : teacher) require(l.kind == LayerKind::Teacher, "base stack must be teacher layers");
    if (!conversion_order.empty()) {
        std::vector<int> sorted = conversion_order;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < static_cast<int>(sorted.size()); ++i)
            require(sorted[i] == i, "conversion_order must be a permutation");
    }
    require(committed >= 0 && committed <= static_cast<int>(conversion_order.size()),
            "committed count out of range");
}

namespace {

Matrix run_layer(const ToyModel& m, int layer_idx, const Matrix& X, int active) {
    if (m.converted(layer_idx, active)) {
        require(m.replacement[layer_idx].has_value(), "converted layer has no trained replacement");
        return forward_sequence(*m.replacement[layer_idx], X).Y;
    }
    return teacher_forward(m.teacher[layer_idx], X).O;
}

}  // namespace

Matrix model_forward(const ToyModel& m, const Matrix& X, int active) {
    Matrix cur = X;
    for (int l = 0; l < m.layer_count(); ++l) {
        Matrix Y = run_layer(m, l, cur, active);
        cur = (l + 1 < m.layer_count()) ? Y.array().tanh().matrix() : Y;
    }
    return cur;
}

Matrix layer_input(const ToyModel& m, int layer_idx, const Matrix& X, int active) {
    require(layer_idx >= 0 && layer_idx < m.layer_count(), "layer index out of range");
    Matrix cur = X;
    for (int l = 0; l < layer_idx; ++l) {
        cur = run_layer(m, l, cur, active).array().tanh().matrix();
    }
    return cur;
}

TeacherResult teacher_layer_result(const ToyModel& m, int layer_idx, const Matrix& X, int active) {
    require(!m.converted(layer_idx, active), "entropy target layer must run as teacher");
    return teacher_forward(m.teacher[layer_idx], layer_input(m, layer_idx, X, active));
}

Dataset make_longrange_dataset(std::mt19937_64& rng, int count, int T, int d, int codebook) {
    require(count >= 0 && T >= 4 && d >= 2, "bad dataset dimensions");
    // fixed random codebook of unit-norm embeddings
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Vector> code(codebook);
    for (auto& c : code) {
        c.resize(d);
        for (int i = 0; i < d; ++i) c(i) = dist(rng);
        c.normalize();
    }
    Dataset ds;
    ds.target_window = T / 4;
    std::uniform_int_distribution<int> pick(0, codebook - 1);
    for (int s = 0; s < count; ++s) {
        Matrix X(T, d);
        const int cue = pick(rng);
        X.row(0) = code[cue].transpose();
        for (int t = 1; t < T; ++t) {
            for (int i = 0; i < d; ++i) X(t, i) = 0.5 * dist(rng);
        }
        Matrix Y = Matrix::Zero(T, d);
        for (int t = T - ds.target_window; t < T; ++t) Y.row(t) = code[cue].transpose();
        ds.inputs.push_back(std::move(X));
        ds.targets.push_back(std::move(Y));
    }
    return ds;
}

ToyModel make_teacher_model(std::mt19937_64& rng, int layers, int d, int heads, double scale) {
    std::normal_distribution<double> dist(0.0, scale);
    auto rand_mat = [&](int r, int c) {
        Matrix m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
        return m;
    };
    ToyModel m;
    for (int l = 0; l < layers; ++l) {
        LayerParams p;
        p.kind = LayerKind::Teacher;
        p.head_count = heads;
        p.W_q = rand_mat(d, d);
        p.W_k = rand_mat(d, d);
        p.W_v = rand_mat(d, d);
        p.W_o = rand_mat(d, d);
        m.teacher.push_back(std::move(p));
        m.replacement.emplace_back();
    }
    return m;
}

std::vector<double> train_teacher(ToyModel& m, const Dataset& data, const TeacherTrainConfig& cfg) {
    require(!data.inputs.empty(), "empty dataset");
    const int L = m.layer_count();
    const int d = m.dim();
    std::vector<OptimizerState> opt;
    for (int l = 0; l < L; ++l) {
        LrSchedule sched = cfg.schedule;
        sched.total_steps = cfg.steps;
        opt.push_back(OptimizerState::create(d, sched, cfg.weight_decay));
    }

    std::vector<double> history;
    for (long step = 0; step < cfg.steps; ++step) {
        const size_t idx = static_cast<size_t>(step) % data.inputs.size();
        const Matrix& X = data.inputs[idx];
        const Matrix& target = data.targets[idx];
        const int W = data.target_window;
        const int T = static_cast<int>(X.rows());

        // forward, keeping inputs to every layer
        std::vector<Matrix> ins(L);
        std::vector<Matrix> outs(L);
        Matrix cur = X;
        for (int l = 0; l < L; ++l) {
            ins[l] = cur;
            outs[l] = teacher_forward(m.teacher[l], cur).O;
            cur = (l + 1 < L) ? outs[l].array().tanh().matrix() : outs[l];
        }

        Matrix dY = Matrix::Zero(T, d);
        double loss = 0.0;
        for (int t = T - W; t < T; ++t) {
            const RowVector diff = outs[L - 1].row(t) - target.row(t);
            loss += 0.5 * diff.squaredNorm();
            dY.row(t) = diff;
        }
        loss /= W;
        dY /= W;
        history.push_back(loss);

        for (int l = L - 1; l >= 0; --l) {
            auto [g, dX] = teacher_backward(m.teacher[l], ins[l], dY);
            optimizer_step(m.teacher[l], g, opt[l]);
            if (l > 0) {
                const Matrix th = outs[l - 1].array().tanh().matrix();
                dY = dX.cwiseProduct(Matrix::Ones(T, d) - th.cwiseProduct(th));
            }
        }
    }
    return history;
}

LayerParams init_dsla_from_teacher(const LayerParams& teacher, const FinetuneConfig& cfg,
                                   std::mt19937_64& rng) {
    const int d = teacher.dim();
    std::normal_distribution<double> dist(0.0, cfg.recency_sigma);
    auto rand_mat = [&]() {
        Matrix m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = dist(rng);
        return m;
    };
    auto rand_vec = [&]() {
        Vector v(d);
        for (int i = 0; i < d; ++i) v(i) = dist(rng);
        return v;
    };
    LayerParams p;
    p.kind = LayerKind::DSLA;
    p.head_count = teacher.head_count;
    p.W_q = teacher.W_q;
    p.W_k = teacher.W_k;
    p.W_v = teacher.W_v;
    p.W_o = teacher.W_o;
    p.gate1 = GateProjection{rand_mat(), Vector::Constant(d, cfg.history_gate_bias), rand_mat(),
                             Vector::Constant(d, cfg.history_gate_bias)};
    p.gate2 = GateProjection{rand_mat(), rand_vec(), rand_mat(), rand_vec()};
    p.gamma_raw = 0.0;
    return p;
}

namespace {

bool plateaued(const std::vector<TrainLogRow>& hist, int window, double tol) {
    if (static_cast<int>(hist.size()) < 2 * window) return false;
    const size_t n = hist.size();
    double recent = 0.0, previous = 0.0;
    for (int i = 0; i < window; ++i) {
        recent += hist[n - 1 - i].total;
        previous += hist[n - 1 - window - i].total;
    }
    recent /= window;
    previous /= window;
    const double denom = std::max(std::abs(previous), 1e-12);
    return (previous - recent) / denom < tol;
}

}  // namespace

FinetuneResult finetune_layer(const ToyModel& m, int layer_idx, const Dataset& data,
                              const FinetuneConfig& cfg) {
    require(!data.inputs.empty(), "empty dataset");
    require(layer_idx >= 0 && layer_idx < m.layer_count(), "layer index out of range");
    require(!m.converted(layer_idx, m.committed), "layer is already converted");

    std::mt19937_64 rng(cfg.seed);
    FinetuneResult res;
    res.layer = init_dsla_from_teacher(m.teacher[layer_idx], cfg, rng);

    // Inputs under the committed prefix are fixed while this layer trains;
    // precompute them once per sequence.
    std::vector<Matrix> ins, targets;
    for (const Matrix& X : data.inputs) {
        Matrix xin = layer_input(m, layer_idx, X, m.committed);
        targets.push_back(teacher_forward(m.teacher[layer_idx], xin).O);
        ins.push_back(std::move(xin));
    }

    LrSchedule sched = cfg.schedule;
    sched.total_steps = cfg.step_cap;
    OptimizerState opt = OptimizerState::create(m.dim(), sched, cfg.weight_decay);

    for (long step = 0; step < cfg.step_cap; ++step) {
        const size_t idx = static_cast<size_t>(step) % ins.size();
        auto [lb, g] = backward(res.layer, ins[idx], targets[idx], cfg.lambda, cfg.objective);
        const double lr = opt.schedule.lr_at(opt.step);
        optimizer_step(res.layer, g, opt);
        res.history.push_back({step, lb.l_dist, lb.l_cont, lb.total, lr});
        if (plateaued(res.history, cfg.plateau_window, cfg.plateau_tol)) {
            res.converged = true;
            break;
        }
    }
    if (!res.converged && !res.history.empty()) {
        res.converged = plateaued(res.history, cfg.plateau_window, cfg.plateau_tol);
    }
    return res;
}

void chained_finetune(ToyModel& m, const std::vector<int>& order, const Dataset& data,
                      const FinetuneConfig& cfg, const StageCallback& on_stage) {
    m.conversion_order = order;
    m.committed = 0;
    m.validate();
    for (size_t stage = 0; stage < order.size(); ++stage) {
        FinetuneConfig stage_cfg = cfg;
        stage_cfg.seed = cfg.seed + stage * 7919;
        FinetuneResult res = finetune_layer(m, order[stage], data, stage_cfg);
        m.replacement[order[stage]] = res.layer;
        m.committed = static_cast<int>(stage) + 1;
        if (on_stage) on_stage(m, static_cast<int>(stage), res);
    }
}

double heldout_distill_loss(const ToyModel& m, const Dataset& data, int active,
                            DistillObjective obj) {
    require(!data.inputs.empty(), "empty dataset");
    double acc = 0.0;
    for (const Matrix& X : data.inputs) {
        acc += distill_loss(model_forward(m, X, active), model_forward(m, X, 0), obj);
    }
    return acc / data.inputs.size();
}

}  // namespace dsla
