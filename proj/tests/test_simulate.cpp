#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "dsla/simulate.hpp"

using namespace dsla;

namespace {

ModelProfile small_profile() {
    ModelProfile p;
    p.n = 8;
    p.h = 2;
    p.d_h = 16;
    p.bytes_per_elem = 2;
    p.conversion_order.resize(p.n);
    std::iota(p.conversion_order.begin(), p.conversion_order.end(), 0);
    p.base_kinds.assign(p.n, LayerKind::Teacher);
    return p;
}

std::vector<TraceRequest> pressured_trace() {
    TraceConfig cfg = TraceConfig::defaults();
    cfg.sessions = 120;
    cfg.session_rate = 20.0;  // arrivals much faster than service
    cfg.think_time_mean = 0.5;
    return generate_trace(cfg, 17);
}

SimConfig tight_capacity(const std::vector<TraceRequest>& trace, const ModelProfile& p) {
    // capacity a little above the largest single request so pressure builds
    std::uint64_t biggest = 0;
    for (const TraceRequest& r : trace)
        biggest = std::max(biggest, kv_cache_bytes(p.n, 1, r.prompt_tokens + r.output_tokens,
                                                   p.h, p.d_h, p.bytes_per_elem));
    SimConfig s;
    s.memory_capacity_bytes = 3.0 * double(biggest);
    s.max_batch = 32;
    return s;
}

}  // namespace

TEST_CASE("simulate rejects an empty trace") {
    CHECK_THROWS_AS(simulate({}, small_profile(), ControllerConfig::table_defaults(),
                             CostModel::defaults(), SimConfig{}, 1),
                    std::invalid_argument);
}

TEST_CASE("single short request under no pressure converts nothing") {
    TraceRequest r;
    r.arrival_time = 0.0;
    r.prompt_tokens = 500;
    r.output_tokens = 20;
    SimConfig scfg;
    scfg.memory_capacity_bytes = 1e12;
    SimReport rep = simulate({r}, small_profile(), ControllerConfig::table_defaults(),
                             CostModel::defaults(), scfg, 1);
    REQUIRE(rep.requests.size() == 1);
    CHECK(rep.requests[0].converted_layers == 0);
    CHECK(rep.requests[0].queueing_delay == 0.0);
    CHECK(rep.total_generated == 20);
    for (const TimelinePoint& p : rep.timeline) CHECK(p.conversion_rate == 0.0);
}

TEST_CASE("simulation is deterministic") {
    auto trace = pressured_trace();
    ModelProfile p = small_profile();
    SimConfig scfg = tight_capacity(trace, p);
    CostModel cm = CostModel::defaults();
    cm.jitter_prob = 0.3;  // exercise the seeded jitter path too
    cm.jitter_mult = 2.0;
    SimReport a = simulate(trace, p, ControllerConfig::table_defaults(), cm, scfg, 99);
    SimReport b = simulate(trace, p, ControllerConfig::table_defaults(), cm, scfg, 99);
    CHECK(a.summary_json() == b.summary_json());
    CHECK(a.series_csv() == b.series_csv());
    CHECK(a.requests_csv() == b.requests_csv());
}

TEST_CASE("token conservation and causal timestamps") {
    auto trace = pressured_trace();
    ModelProfile p = small_profile();
    SimReport rep = simulate(trace, p, ControllerConfig::table_defaults(), CostModel::defaults(),
                             tight_capacity(trace, p), 3);
    long expect = 0;
    for (const TraceRequest& r : trace) expect += r.output_tokens;
    CHECK(rep.total_generated == expect);
    REQUIRE(rep.requests.size() == trace.size());
    for (const RequestStats& r : rep.requests) {
        CHECK(r.admitted >= r.arrival);
        CHECK(r.first_token > r.admitted);
        CHECK(r.finished >= r.first_token);
        CHECK(r.normalized_latency > 0.0);
        CHECK(r.queueing_delay >= 0.0);
    }
}

TEST_CASE("policy off never converts and queues under pressure") {
    auto trace = pressured_trace();
    ModelProfile p = small_profile();
    SimConfig scfg = tight_capacity(trace, p);
    scfg.policy_enabled = false;
    SimReport rep = simulate(trace, p, ControllerConfig::table_defaults(), CostModel::defaults(),
                             scfg, 3);
    for (const TimelinePoint& pt : rep.timeline) CHECK(pt.conversion_rate == 0.0);
    for (const RequestStats& r : rep.requests) CHECK(r.converted_layers == 0);
    double max_queue = 0.0;
    for (const RequestStats& r : rep.requests) max_queue = std::max(max_queue, r.queueing_delay);
    CHECK(max_queue > 0.0);
}

TEST_CASE("adaptive policy converts under pressure and lowers mean latency") {
    auto trace = pressured_trace();
    ModelProfile p = small_profile();
    SimConfig on = tight_capacity(trace, p);
    SimConfig off = on;
    off.policy_enabled = false;
    ControllerConfig ccfg = ControllerConfig::table_defaults();
    SimReport rep_on = simulate(trace, p, ccfg, CostModel::defaults(), on, 3);
    SimReport rep_off = simulate(trace, p, ccfg, CostModel::defaults(), off, 3);

    long converted = 0;
    for (const RequestStats& r : rep_on.requests) converted += r.converted_layers;
    CHECK(converted > 0);
    // caps respected per bucket
    for (const RequestStats& r : rep_on.requests) {
        const int cap = static_cast<int>(ccfg.cap_rate(r.prompt_tokens) * p.n);
        CHECK(r.converted_layers <= cap);
    }
    CHECK(rep_on.mean_normalized_latency < rep_off.mean_normalized_latency);
    CHECK(rep_on.sub_batch_splits > 0);
}

TEST_CASE("report serializations carry the headline numbers") {
    TraceRequest r;
    r.prompt_tokens = 100;
    r.output_tokens = 5;
    SimConfig scfg;
    scfg.memory_capacity_bytes = 1e12;
    SimReport rep = simulate({r}, small_profile(), ControllerConfig::table_defaults(),
                             CostModel::defaults(), scfg, 1);
    CHECK(rep.summary_json().find("mean_normalized_latency_ms") != std::string::npos);
    CHECK(rep.series_csv().rfind("time_ms,", 0) == 0);
    CHECK(rep.requests_csv().find("normalized_latency_ms") != std::string::npos);
}
