#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "dsla/checkpoint.hpp"
#include "dsla/controller.hpp"
#include "dsla/costmodel.hpp"
#include "dsla/io.hpp"
#include "dsla/model.hpp"
#include "dsla/scheduler.hpp"
#include "dsla/sensitivity.hpp"
#include "dsla/simulate.hpp"
#include "dsla/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsla;

namespace {

struct Global {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

struct Experiment {
    json cfg;
    std::string config_hash;  // over the raw config bytes
    std::uint64_t seed = 0;
    fs::path out;
};

Experiment open_experiment(const Global& g) {
    if (!fs::exists(g.config)) throw std::invalid_argument("config file not found: " + g.config);
    const std::string text = read_file(g.config);
    Experiment e;
    try {
        e.cfg = json::parse(text);
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + ex.what());
    }
    e.config_hash = hex64(fnv1a(text));
    e.seed = g.seed.value_or(e.cfg.value("seed", std::uint64_t{0}));
    e.out = g.out;
    return e;
}

void write_csv(const fs::path& path, const Experiment& e, const std::string& body) {
    atomic_write(path, csv_provenance(e.config_hash, e.seed) + body);
}

void write_json(const fs::path& path, const Experiment& e, json j) {
    j["config_hash"] = e.config_hash;
    j["seed"] = e.seed;
    atomic_write(path, j.dump(2) + "\n");
}

int run_distill(const Global& g) {
    Experiment e = open_experiment(g);
    const json& model_cfg = e.cfg.at("model");
    const int layers = model_cfg.at("layers").get<int>();
    const int dim = model_cfg.at("dim").get<int>();
    const int heads = model_cfg.value("heads", 1);
    const json& data_cfg = e.cfg.at("dataset");
    const int sequences = data_cfg.at("sequences").get<int>();
    const int tokens = data_cfg.at("tokens").get<int>();
    const int heldout_count = data_cfg.value("heldout", 0);

    std::mt19937_64 rng(e.seed);
    ToyModel m = make_teacher_model(rng, layers, dim, heads);
    Dataset data = make_longrange_dataset(rng, sequences, tokens, dim);
    Dataset heldout = make_longrange_dataset(rng, heldout_count, tokens, dim);

    TeacherTrainConfig tcfg;
    tcfg.steps = e.cfg.value("teacher_steps", 200L);
    tcfg.schedule.total_steps = tcfg.steps;
    train_teacher(m, data, tcfg);

    const ConversionOrder order = rank_layers(m, data.inputs);
    {
        std::ostringstream body;
        body.precision(17);
        body << "layer,mean_entropy,rank\n";
        for (const RankingReportRow& r : ranking_report(m, data.inputs))
            body << r.layer << ',' << r.mean_entropy << ',' << r.rank << '\n';
        write_csv(e.out / "ranking.csv", e, body.str());
    }

    FinetuneConfig fcfg;
    if (e.cfg.contains("finetune")) {
        const json& f = e.cfg["finetune"];
        fcfg.lambda = f.value("lambda", fcfg.lambda);
        fcfg.step_cap = f.value("step_cap", fcfg.step_cap);
        fcfg.plateau_window = f.value("plateau_window", fcfg.plateau_window);
        fcfg.schedule.peak_lr = f.value("peak_lr", fcfg.schedule.peak_lr);
        fcfg.schedule.floor_lr = f.value("floor_lr", fcfg.schedule.floor_lr);
        const std::string obj = f.value("objective", std::string("kl"));
        if (obj == "kl") fcfg.objective = DistillObjective::SoftmaxKL;
        else if (obj == "mse") fcfg.objective = DistillObjective::MSE;
        else throw std::invalid_argument("objective must be kl or mse");
    }
    fcfg.schedule.total_steps = fcfg.step_cap;
    fcfg.seed = e.seed;

    chained_finetune(m, order, data, fcfg,
                     [&](const ToyModel& mm, int stage, const FinetuneResult& res) {
                         CheckpointHeader hdr;
                         hdr.stage = mm.committed;
                         hdr.conversion_mask.assign(layers, 0);
                         for (int i = 0; i < mm.committed; ++i) hdr.conversion_mask[order[i]] = 1;
                         hdr.config_hash = e.config_hash;
                         hdr.seed = e.seed;
                         save_checkpoint(e.out / ("stage" + std::to_string(stage + 1) + ".json"),
                                         mm, hdr);
                         std::ostringstream body;
                         body.precision(17);
                         body << "step,l_dist,l_cont,total,lr\n";
                         for (const TrainLogRow& r : res.history)
                             body << r.step << ',' << r.l_dist << ',' << r.l_cont << ','
                                  << r.total << ',' << r.lr << '\n';
                         write_csv(e.out / ("train_stage" + std::to_string(stage + 1) + ".csv"),
                                   e, body.str());
                     });

    json summary{{"stages", layers}, {"conversion_order", order}};
    if (heldout_count > 0)
        summary["heldout_l_dist"] = heldout_distill_loss(m, heldout, layers, fcfg.objective);
    write_json(e.out / "distill_summary.json", e, summary);
    std::cout << "distilled " << layers << " layers, order";
    for (int l : order) std::cout << ' ' << l;
    std::cout << '\n';
    return 0;
}

int run_analyze(const Global& g) {
    Experiment e = open_experiment(g);
    const std::string ckpt_path = e.cfg.at("checkpoint").get<std::string>();
    if (!fs::exists(ckpt_path)) throw std::invalid_argument("checkpoint not found: " + ckpt_path);
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    const ToyModel& m = lc.model;
    const int T = e.cfg.value("tokens", 16);
    const int sequences = e.cfg.value("sequences", 1);
    require(T >= 2 && sequences >= 1, "analyze needs tokens >= 2 and sequences >= 1");

    std::mt19937_64 rng(e.seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Matrix> calib;
    for (int i = 0; i < sequences; ++i) {
        Matrix X(T, m.dim());
        for (int r = 0; r < T; ++r)
            for (int c = 0; c < m.dim(); ++c) X(r, c) = dist(rng);
        calib.push_back(X);
    }

    std::ostringstream body;
    body.precision(17);
    body << "sequence,layer,head,position,kind,score,sigma1,sigma2\n";
    for (int s = 0; s < sequences; ++s) {
        for (int l = 0; l < m.layer_count(); ++l) {
            const bool conv = m.converted(l, m.committed);
            const Matrix xin = layer_input(m, l, calib[s]);
            if (conv) {
                const LayerParams& p = *m.replacement[l];
                const double gamma = p.gamma();
                auto decomp = dsla_score_decomposition(p, xin);
                for (const ScoreDecomposition& d : decomp)
                    for (int t = 0; t < T; ++t)
                        body << s << ',' << l << ',' << d.head_index << ',' << t << ','
                             << to_string(p.kind) << ','
                             << gamma * d.sigma1(t) + (1.0 - gamma) * d.sigma2(t) << ','
                             << d.sigma1(t) << ',' << d.sigma2(t) << '\n';
            } else {
                TeacherResult r = teacher_forward(m.teacher[l], xin);
                for (size_t h = 0; h < r.A.size(); ++h)
                    for (int t = 0; t < T; ++t)
                        body << s << ',' << l << ',' << h << ',' << t << ",teacher,"
                             << r.A[h](T - 1, t) << ",0,0\n";
            }
        }
    }
    write_csv(e.out / "profiles.csv", e, body.str());

    std::ostringstream gbody;
    gbody.precision(17);
    gbody << "layer,kind,gamma\n";
    for (int l = 0; l < m.layer_count(); ++l) {
        if (m.converted(l, m.committed))
            gbody << l << ',' << to_string(m.replacement[l]->kind) << ','
                  << m.replacement[l]->gamma() << '\n';
        else
            gbody << l << ",teacher,\n";
    }
    write_csv(e.out / "gammas.csv", e, gbody.str());

    // entropy over the still-teacher layers, if any
    std::ostringstream ebody;
    ebody.precision(17);
    ebody << "layer,mean_entropy\n";
    for (int l = 0; l < m.layer_count(); ++l) {
        if (m.converted(l, m.committed)) continue;
        ebody << l << ',' << layer_entropy(m, l, calib).mean_entropy << '\n';
    }
    write_csv(e.out / "entropy.csv", e, ebody.str());
    std::cout << "analyzed " << m.layer_count() << " layers over " << sequences
              << " sequences\n";
    return 0;
}

TraceConfig trace_config_from(const json& cfg) {
    TraceConfig tc = TraceConfig::defaults();
    tc.sessions = cfg.value("sessions", tc.sessions);
    tc.turn_lambda = cfg.value("turn_lambda", tc.turn_lambda);
    tc.session_rate = cfg.value("session_rate", tc.session_rate);
    tc.think_time_mean = cfg.value("think_time_mean", tc.think_time_mean);
    tc.output_min = cfg.value("output_min", tc.output_min);
    tc.output_max = cfg.value("output_max", tc.output_max);
    tc.max_prompt = cfg.value("max_prompt", tc.max_prompt);
    if (cfg.contains("buckets")) {
        tc.buckets.clear();
        for (const json& b : cfg["buckets"])
            tc.buckets.push_back({b.at("lo").get<long>(), b.at("hi").get<long>(),
                                  b.at("share").get<double>()});
    }
    return tc;
}

int run_gen_trace(const Global& g) {
    Experiment e = open_experiment(g);
    TraceConfig tc = trace_config_from(e.cfg);
    std::vector<TraceRequest> trace = generate_trace(tc, e.seed);
    save_trace(e.out / "trace.jsonl", trace);
    json summary{{"requests", trace.size()},
                 {"sessions", tc.sessions},
                 {"bucket_shares", bucket_shares(trace, tc.buckets)}};
    write_json(e.out / "trace_summary.json", e, summary);
    std::cout << "generated " << trace.size() << " requests\n";
    return 0;
}

int run_simulate(const Global& g) {
    Experiment e = open_experiment(g);
    const std::string trace_path = e.cfg.at("trace").get<std::string>();
    if (!fs::exists(trace_path)) throw std::invalid_argument("trace not found: " + trace_path);
    std::vector<TraceRequest> trace = load_trace(trace_path);

    CostModel cm = CostModel::defaults();
    if (e.cfg.contains("calibration")) {
        const std::string p = e.cfg["calibration"].get<std::string>();
        if (!fs::exists(p)) throw std::invalid_argument("calibration not found: " + p);
        cm = CostModel::from_file(p);
    }
    ControllerConfig ccfg = ControllerConfig::table_defaults();
    if (e.cfg.contains("controller")) {
        const std::string p = e.cfg["controller"].get<std::string>();
        if (!fs::exists(p)) throw std::invalid_argument("controller config not found: " + p);
        ccfg = ControllerConfig::from_file(p);
    }

    ModelProfile profile = ModelProfile::defaults();
    if (e.cfg.contains("profile")) {
        const json& p = e.cfg["profile"];
        profile.n = p.value("layers", profile.n);
        profile.h = p.value("heads", profile.h);
        profile.d_h = p.value("head_dim", profile.d_h);
        profile.bytes_per_elem = p.value("bytes_per_elem", profile.bytes_per_elem);
        profile.conversion_order.resize(profile.n);
        std::iota(profile.conversion_order.begin(), profile.conversion_order.end(), 0);
        profile.base_kinds.assign(profile.n, LayerKind::Teacher);
        if (p.contains("conversion_order"))
            profile.conversion_order = p["conversion_order"].get<ConversionOrder>();
    }

    SimConfig scfg;
    scfg.memory_capacity_bytes = e.cfg.value("capacity_gb", 8.0) * double(1ull << 30);
    scfg.max_batch = e.cfg.value("max_batch", scfg.max_batch);
    scfg.policy_enabled = e.cfg.value("policy", true);
    const bool comparison = e.cfg.value("comparison", false);

    auto emit = [&](const SimReport& rep, const std::string& tag) {
        json s = json::parse(rep.summary_json());
        write_json(e.out / ("summary" + tag + ".json"), e, s);
        write_csv(e.out / ("series" + tag + ".csv"), e, rep.series_csv());
        write_csv(e.out / ("requests" + tag + ".csv"), e, rep.requests_csv());
    };

    if (!comparison) {
        SimReport rep = simulate(trace, profile, ccfg, cm, scfg, e.seed);
        emit(rep, "");
        std::cout << "mean normalized latency: " << rep.mean_normalized_latency << " ms/token\n";
        return 0;
    }

    SimConfig on = scfg, off = scfg;
    on.policy_enabled = true;
    off.policy_enabled = false;
    SimReport rep_on = simulate(trace, profile, ccfg, cm, on, e.seed);
    SimReport rep_off = simulate(trace, profile, ccfg, cm, off, e.seed);
    emit(rep_on, "_on");
    emit(rep_off, "_off");
    const double ratio = rep_off.mean_normalized_latency / rep_on.mean_normalized_latency;
    write_json(e.out / "comparison.json", e,
               json{{"mean_normalized_latency_on_ms", rep_on.mean_normalized_latency},
                    {"mean_normalized_latency_off_ms", rep_off.mean_normalized_latency},
                    {"ratio", ratio}});
    std::cout << "policy on:  " << rep_on.mean_normalized_latency << " ms/token\n"
              << "policy off: " << rep_off.mean_normalized_latency << " ms/token\n"
              << "ratio: " << ratio << "x\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-state linear attention distillation and serving toolkit"};
    app.require_subcommand(1);

    Global g;
    app.add_option("--config", g.config, "experiment config (JSON)");
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out, "output directory");

    auto* distill = app.add_subcommand("distill", "rank, replace, and fine-tune layer by layer");
    auto* analyze = app.add_subcommand("analyze", "attention profiles and gamma report");
    auto* gen_trace = app.add_subcommand("gen-trace", "generate a session-based request trace");
    auto* simulate_cmd = app.add_subcommand("simulate", "replay a trace through the server model");
    for (CLI::App* sub : {distill, analyze, gen_trace, simulate_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (g.config.empty()) throw std::invalid_argument("--config is required");
        if (distill->parsed()) return run_distill(g);
        if (analyze->parsed()) return run_analyze(g);
        if (gen_trace->parsed()) return run_gen_trace(g);
        if (simulate_cmd->parsed()) return run_simulate(g);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
