// End-to-end acceptance checks: one pass/fail line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "dsla/backward.hpp"
#include "dsla/controller.hpp"
#include "dsla/costmodel.hpp"
#include "dsla/losses.hpp"
#include "dsla/model.hpp"
#include "dsla/scheduler.hpp"
#include "dsla/sensitivity.hpp"
#include "dsla/simulate.hpp"
#include "dsla/trace.hpp"
#include "test_util.hpp"

using namespace dsla;
using testutil::random_layer;
using testutil::random_matrix;

namespace {

int failures = 0;

void report(int criterion, const char* name, bool ok, const std::string& detail) {
    std::printf("%s  criterion %2d  %-38s %s\n", ok ? "PASS" : "FAIL", criterion, name,
                detail.c_str());
    if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

// ---- 1: recurrent vs score-expanded equivalence --------------------------
void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (unsigned seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> dd(1, 4), tt(1, 16);
        const int dh = dd(rng);
        const int heads = 1 + static_cast<int>(rng() % 2);
        const int d = dh * heads;
        const int T = tt(rng);
        for (LayerKind kind : {LayerKind::GLA, LayerKind::DSLA}) {
            LayerParams p = random_layer(rng, kind, d, heads);
            Matrix X = random_matrix(rng, T, d);
            ForwardTrace tr = forward_sequence(p, X);
            RowVector rec = parallel_reconstruct_last(p, X);
            worst = std::max(worst, (tr.Y.row(T - 1) - rec).cwiseAbs().maxCoeff());
        }
    }
    const double secs = seconds_since(t0);
    report(1, "recurrent/parallel equivalence", worst < 1e-10 && secs < 5.0,
           fmt("max err %.2e, %.2fs", worst, secs));
}

// ---- 2: gamma-endpoint reductions and gate collapse ----------------------
void criterion2() {
    std::mt19937_64 rng(29);
    bool ok = true;
    double collapse_worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const int heads = 1 + trial % 2;
        const int d = 4 * heads;
        LayerParams p = random_layer(rng, LayerKind::DSLA, d, heads);
        Matrix X = random_matrix(rng, 8, d);

        LayerParams g1 = p;
        g1.kind = LayerKind::GLA;
        g1.gate2.reset();
        LayerParams g2 = g1;
        g2.gate1 = p.gate2;

        p.gamma_raw = 1000.0;  // logistic saturates to exactly 1
        ok = ok && (forward_sequence(p, X).Y - forward_sequence(g1, X).Y).cwiseAbs().maxCoeff() ==
                       0.0;
        p.gamma_raw = -1000.0;
        ok = ok && (forward_sequence(p, X).Y - forward_sequence(g2, X).Y).cwiseAbs().maxCoeff() ==
                       0.0;

        LayerParams same = random_layer(rng, LayerKind::DSLA, d, heads);
        same.gate2 = same.gate1;
        LayerParams other = same;
        same.gamma_raw = -0.7;
        other.gamma_raw = 1.3;
        collapse_worst = std::max(collapse_worst, (forward_sequence(same, X).Y -
                                                   forward_sequence(other, X).Y)
                                                      .cwiseAbs()
                                                      .maxCoeff());
    }
    report(2, "gamma-endpoint reduction identities", ok && collapse_worst < 1e-12,
           fmt("bitwise %s, collapse err %.2e", ok ? "yes" : "no", collapse_worst));
}

// ---- 3: analytic gradients vs central finite differences -----------------
double fd_rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double max_grad_rel_err(LayerParams p, const Matrix& X, const Matrix& teacher_O, double lambda) {
    const double eps = 1e-5;
    auto loss_of = [&](const LayerParams& q) {
        const ForwardTrace tr = forward_sequence(q, X);
        const int T = static_cast<int>(X.rows());
        std::vector<Matrix> G1(T), G2(T);
        for (int t = 0; t < T; ++t) {
            G1[t] = tr.alpha1.row(t).transpose() * tr.beta1.row(t);
            G2[t] = tr.alpha2.row(t).transpose() * tr.beta2.row(t);
        }
        return total_loss(tr.Y, teacher_O, G1, G2, lambda).total;
    };
    auto [lb, g] = backward(p, X, teacher_O, lambda);
    double worst = 0.0;
    auto probe = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + eps;
        const double lp = loss_of(p);
        param = saved - eps;
        const double lm = loss_of(p);
        param = saved;
        worst = std::max(worst, fd_rel_err(analytic, (lp - lm) / (2.0 * eps)));
    };
    auto probe_matrix = [&](Matrix& m, const Matrix& gm) {
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) probe(m(i, j), gm(i, j));
    };
    auto probe_vector = [&](Vector& v, const Vector& gv) {
        for (int i = 0; i < v.size(); ++i) probe(v(i), gv(i));
    };
    probe_matrix(p.W_q, g.W_q);
    probe_matrix(p.W_k, g.W_k);
    probe_matrix(p.W_v, g.W_v);
    probe_matrix(p.W_o, g.W_o);
    probe_matrix(p.gate1->A_alpha, g.gate1.A_alpha);
    probe_vector(p.gate1->b_alpha, g.gate1.b_alpha);
    probe_matrix(p.gate1->A_beta, g.gate1.A_beta);
    probe_vector(p.gate1->b_beta, g.gate1.b_beta);
    probe_matrix(p.gate2->A_alpha, g.gate2.A_alpha);
    probe_vector(p.gate2->b_alpha, g.gate2.b_alpha);
    probe_matrix(p.gate2->A_beta, g.gate2.A_beta);
    probe_vector(p.gate2->b_beta, g.gate2.b_beta);
    probe(p.gamma_raw, g.gamma_raw);
    return worst;
}

void criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (unsigned seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const int d = 4, T = 6;
        const int heads = (seed % 2) + 1;
        LayerParams p = random_layer(rng, LayerKind::DSLA, d, heads);
        Matrix X = random_matrix(rng, T, d);
        LayerParams teacher = random_layer(rng, LayerKind::Teacher, d, heads);
        Matrix teacher_O = teacher_forward(teacher, X).O;
        const double lambda = (seed % 3 == 0) ? 0.0 : 0.1;
        worst = std::max(worst, max_grad_rel_err(p, X, teacher_O, lambda));
    }
    const double secs = seconds_since(t0);
    report(3, "gradient finite-difference checks", worst < 1e-5 && secs < 30.0,
           fmt("max rel err %.2e, %.2fs", worst, secs));
}

// ---- 4: entropy identities and ranking ------------------------------------
void criterion4() {
    bool ok = true;
    const double hu = attention_entropy(Vector::Constant(9, 1.0 / 9.0));
    ok = ok && std::abs(hu - std::log(9.0)) < 1e-12;
    Vector onehot = Vector::Zero(6);
    onehot(3) = 1.0;
    ok = ok && attention_entropy(onehot) == 0.0;

    std::mt19937_64 rng(13);
    ToyModel m = make_teacher_model(rng, 4, 8, 2);
    std::vector<Matrix> calib;
    for (int i = 0; i < 3; ++i) calib.push_back(random_matrix(rng, 9, 8));
    ConversionOrder o1 = rank_layers(m, calib);
    ConversionOrder o2 = rank_layers(m, calib);
    ok = ok && o1 == o2;
    ConversionOrder sorted = o1;
    std::sort(sorted.begin(), sorted.end());
    ok = ok && sorted == ConversionOrder{0, 1, 2, 3};
    report(4, "entropy identities and ranking", ok,
           fmt("uniform err %.2e", std::abs(hu - std::log(9.0))));
}

// ---- 5: specialization pressure -------------------------------------------
void criterion5() {
    std::mt19937_64 rng(7);
    const int d = 8, T = 16;
    ToyModel m = make_teacher_model(rng, 1, d, 2);
    Dataset data = make_longrange_dataset(rng, 8, T, d);
    Dataset heldout = make_longrange_dataset(rng, 4, T, d);
    TeacherTrainConfig tcfg;
    tcfg.steps = 150;
    tcfg.schedule.total_steps = 150;
    train_teacher(m, data, tcfg);

    auto run = [&](double lambda) {
        FinetuneConfig cfg;
        cfg.lambda = lambda;
        cfg.step_cap = 1500;
        cfg.plateau_window = 100000;  // fixed budget for a fair comparison
        cfg.schedule = {0.05, 1e-3, 1e-4, 1500};
        cfg.seed = 5;
        return finetune_layer(m, 0, data, cfg);
    };
    FinetuneResult reg = run(0.1);
    FinetuneResult plain = run(0.0);

    auto gate_cos = [&](const LayerParams& layer) {
        double acc = 0.0;
        for (const Matrix& X : data.inputs) {
            ForwardTrace tr = forward_sequence(layer, X);
            std::vector<Matrix> g1, g2;
            for (int t = 0; t < T; ++t) {
                g1.push_back(tr.alpha1.row(t).transpose() * tr.beta1.row(t));
                g2.push_back(tr.alpha2.row(t).transpose() * tr.beta2.row(t));
            }
            acc += contrastive_loss(g1, g2);
        }
        return acc / data.inputs.size();
    };
    auto held = [&](const LayerParams& layer) {
        double acc = 0.0;
        for (const Matrix& X : heldout.inputs)
            acc += distill_loss(forward_sequence(layer, X).Y, teacher_forward(m.teacher[0], X).O);
        return acc / heldout.inputs.size();
    };

    const double cos_reg = gate_cos(reg.layer), cos_plain = gate_cos(plain.layer);
    const double held_reg = held(reg.layer), held_plain = held(plain.layer);

    // history-state mass on the first token quartile vs the recency state
    double share1 = 0.0, share2 = 0.0;
    long n = 0;
    for (const Matrix& X : heldout.inputs) {
        for (const ScoreDecomposition& dcomp : dsla_score_decomposition(reg.layer, X)) {
            share1 += dcomp.sigma1.head(T / 4).sum() / dcomp.sigma1.sum();
            share2 += dcomp.sigma2.head(T / 4).sum() / dcomp.sigma2.sum();
            ++n;
        }
    }
    share1 /= n;
    share2 /= n;

    const bool ok = cos_reg < cos_plain && held_reg <= 1.1 * held_plain && share1 > share2;
    report(5, "specialization pressure", ok,
           fmt("cos %.6f<%.6f, held %.5f<=1.1*%.5f, q1 mass %.3f>%.3g", cos_reg, cos_plain,
               held_reg, held_plain, share1, share2));
}

// ---- 6: chained vs naive fine-tuning --------------------------------------
void criterion6() {
    std::mt19937_64 rng(8);
    const int d = 8, T = 16;
    ToyModel m = make_teacher_model(rng, 2, d, 2);
    Dataset data = make_longrange_dataset(rng, 10, T, d);
    Dataset heldout = make_longrange_dataset(rng, 5, T, d);
    TeacherTrainConfig tcfg;
    tcfg.steps = 150;
    tcfg.schedule.total_steps = 150;
    train_teacher(m, data, tcfg);

    FinetuneConfig cfg;
    cfg.step_cap = 600;
    cfg.schedule = {0.05, 1e-3, 1e-4, 600};
    cfg.seed = 21;

    ToyModel chained = m;
    chained_finetune(chained, {0, 1}, data, cfg);
    const double chained_loss = heldout_distill_loss(chained, heldout, 2);

    // naive: both layers trained against the all-teacher stack, then assembled
    ToyModel naive = m;
    naive.conversion_order = {0, 1};
    naive.committed = 0;
    FinetuneConfig c0 = cfg;
    naive.replacement[0] = finetune_layer(naive, 0, data, c0).layer;
    ToyModel fresh = m;
    fresh.conversion_order = {0, 1};
    fresh.committed = 0;
    FinetuneConfig c1 = cfg;
    c1.seed = cfg.seed + 7919;  // matches the chained stage-1 seed
    naive.replacement[1] = finetune_layer(fresh, 1, data, c1).layer;
    naive.committed = 2;
    const double naive_loss = heldout_distill_loss(naive, heldout, 2);

    report(6, "chained <= naive held-out loss", chained_loss <= naive_loss,
           fmt("chained %.5f, naive %.5f", chained_loss, naive_loss));
}

// ---- 7: KV-cache formula ---------------------------------------------------
void criterion7() {
    bool ok = kv_cache_bytes(32, 1, 4096, 32, 128, 2) == 2147483648ULL;
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30 && ok; ++trial) {
        long n = 1 + long(rng() % 48), b = 1 + long(rng() % 8), s = 1 + long(rng() % 8192);
        long h = 1 + long(rng() % 64), dh = 1 + long(rng() % 256);
        const auto base = kv_cache_bytes(n, b, s, h, dh, 2);
        ok = ok && kv_cache_bytes(2 * n, b, s, h, dh, 2) == 2 * base &&
             kv_cache_bytes(n, 2 * b, s, h, dh, 2) == 2 * base &&
             kv_cache_bytes(n, b, 2 * s, h, dh, 2) == 2 * base &&
             kv_cache_bytes(n, b, s, 2 * h, dh, 2) == 2 * base &&
             kv_cache_bytes(n, b, s, h, 2 * dh, 2) == 2 * base &&
             kv_cache_bytes(n, b, s, h, dh, 4) == 2 * base;
    }
    report(7, "kv-cache byte formula", ok, "exact value and linearity");
}

// ---- 8: controller bucket caps and prefix property -------------------------
void criterion8() {
    ControllerConfig cfg = ControllerConfig::table_defaults();
    LoadSnapshot hot;
    hot.memory_fraction = 0.9;
    hot.quality = 1.0;
    TraceRequest shortr, longr;
    shortr.prompt_tokens = 1000;
    longr.prompt_tokens = 9000;

    bool ok = controller_decide(hot, shortr, 32, 0, cfg) == 4 &&    // floor(0.125*32)
              controller_decide(hot, longr, 32, 0, cfg) == 16 &&    // floor(0.5*32)
              controller_decide(hot, shortr, 30, 0, cfg) == 3 &&    // floor(3.75)
              controller_decide(hot, longr, 31, 0, cfg) == 15;      // floor(15.5)

    // conversion sets stay prefixes of the order and inside the caps in a
    // pressured simulation
    TraceConfig tc = TraceConfig::defaults();
    tc.sessions = 150;
    tc.session_rate = 20.0;
    tc.think_time_mean = 0.5;
    auto trace = generate_trace(tc, 17);
    ModelProfile prof;
    prof.n = 16;
    prof.h = 2;
    prof.d_h = 16;
    prof.bytes_per_elem = 2;
    prof.conversion_order = {15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
    prof.base_kinds.assign(prof.n, LayerKind::Teacher);
    SimConfig scfg;
    scfg.memory_capacity_bytes = 64e6;
    scfg.max_batch = 24;
    SimReport rep = simulate(trace, prof, cfg, CostModel::defaults(), scfg, 1);
    long converted_any = 0;
    for (const RequestStats& r : rep.requests) {
        const int cap = static_cast<int>(std::floor(cfg.cap_rate(r.prompt_tokens) * prof.n));
        ok = ok && r.converted_layers >= 0 && r.converted_layers <= cap;
        converted_any += r.converted_layers;
    }
    ok = ok && converted_any > 0;
    report(8, "controller policy caps", ok, fmt("converted layers total %ld", converted_any));
}

// ---- 9: end-to-end simulator speedup ---------------------------------------
void criterion9() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string dir = DSLA_DATA_DIR;
    auto trace = load_trace(dir + "/trace_10k.jsonl");
    CostModel cm = CostModel::from_file(dir + "/calibration.txt");
    ControllerConfig ccfg = ControllerConfig::from_file(dir + "/controller.txt");
    ModelProfile prof;
    prof.n = 32;
    prof.h = 8;
    prof.d_h = 64;
    prof.bytes_per_elem = 2;
    prof.conversion_order.resize(prof.n);
    std::iota(prof.conversion_order.begin(), prof.conversion_order.end(), 0);
    prof.base_kinds.assign(prof.n, LayerKind::Teacher);
    SimConfig on;
    on.memory_capacity_bytes = 4.0 * double(1ull << 30);
    on.max_batch = 48;
    SimConfig off = on;
    off.policy_enabled = false;

    SimReport rep_on = simulate(trace, prof, ccfg, cm, on, 1);
    SimReport rep_off = simulate(trace, prof, ccfg, cm, off, 1);
    const double ratio = rep_off.mean_normalized_latency / rep_on.mean_normalized_latency;
    const double secs = seconds_since(t0);
    long expect = 0;
    for (const TraceRequest& r : trace) expect += r.output_tokens;
    const bool conserved =
        rep_on.total_generated == expect && rep_off.total_generated == expect;
    report(9, "adaptive serving speedup on 10k trace",
           ratio >= 1.5 && secs < 60.0 && conserved, fmt("ratio %.2fx, %.1fs", ratio, secs));
}

// ---- 10: sub-batch scheduling equals sequential execution -------------------
void criterion10() {
    std::mt19937_64 rng(2);
    const int d = 8, T = 10, L = 3;
    ToyModel m = make_teacher_model(rng, L, d, 2);
    FinetuneConfig cfg;
    for (int l = 0; l < L; ++l)
        m.replacement[l] = init_dsla_from_teacher(m.teacher[l], cfg, rng);

    std::vector<Matrix> inputs;
    std::vector<std::vector<bool>> masks;
    for (int i = 0; i < 10; ++i) {
        inputs.push_back(random_matrix(rng, T, d));
        std::vector<bool> mask(L);
        for (int l = 0; l < L; ++l) mask[l] = rng() & 1;
        masks.push_back(mask);
    }
    std::vector<Matrix> batched = batched_forward(m, inputs, masks);
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i)
        worst = std::max(worst,
                         (batched[i] - masked_forward(m, inputs[i], masks[i]))
                             .cwiseAbs()
                             .maxCoeff());
    report(10, "scheduler matches sequential outputs", worst < 1e-12,
           fmt("max err %.2e", worst));
}

// ---- 11: trace statistics ---------------------------------------------------
void criterion11() {
    TraceConfig cfg = TraceConfig::defaults();
    cfg.sessions = 33000;
    auto trace = generate_trace(cfg, 42);
    auto shares = bucket_shares(trace, cfg.buckets);
    double worst_gap = 0.0;
    for (size_t i = 0; i < shares.size(); ++i)
        worst_gap = std::max(worst_gap, std::abs(shares[i] - cfg.buckets[i].share));

    std::map<long, int> turns;
    for (const TraceRequest& r : trace) turns[r.session_id] = r.turn_index + 1;
    const int kmax = 9;
    std::vector<long> observed(kmax, 0);
    for (const auto& [sid, k] : turns) ++observed[std::min(k, kmax) - 1];
    const double lambda = 3.0;
    std::vector<double> expected(kmax, 0.0);
    double pmf = std::exp(-lambda);
    expected[0] = pmf;  // clamp folds zero-turn sessions into one turn
    for (int k = 1; k < kmax; ++k) {
        pmf *= lambda / k;
        expected[std::min(k, kmax) - 1] += pmf;
    }
    double tail = 1.0;
    for (int k = 0; k < kmax - 1; ++k) tail -= expected[k];
    expected[kmax - 1] = tail;
    double chi2 = 0.0;
    for (int k = 0; k < kmax; ++k) {
        const double e = expected[k] * cfg.sessions;
        chi2 += (observed[k] - e) * (observed[k] - e) / e;
    }
    // chi-square critical value at 8 degrees of freedom, alpha = 0.01
    const bool ok = trace.size() >= 100000 && worst_gap < 0.02 && chi2 < 20.09;
    report(11, "trace bucket mix and turn distribution", ok,
           fmt("%zu requests, worst share gap %.4f, chi2 %.2f", trace.size(), worst_gap, chi2));
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    criterion11();
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all criteria passed\n");
    return failures ? 1 : 0;
}
