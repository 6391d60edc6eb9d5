#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsla/controller.hpp"
#include "dsla/costmodel.hpp"
#include "dsla/sensitivity.hpp"
#include "dsla/trace.hpp"

namespace dsla {

// Shape of the served model for memory/latency accounting only.
struct ModelProfile {
    long n = 32;
    long h = 32;
    long d_h = 128;
    long bytes_per_elem = 2;
    ConversionOrder conversion_order;      // defaults to 0..n-1
    std::vector<LayerKind> base_kinds;     // pre-conversion kinds, defaults to all Teacher

    static ModelProfile defaults();
    void validate() const;
};

struct SimConfig {
    double memory_capacity_bytes = 8.0 * (1ull << 30);
    long max_batch = 64;
    bool policy_enabled = true;
};

struct RequestStats {
    int id = 0;
    double arrival = 0.0;
    double admitted = 0.0;
    double first_token = 0.0;
    double finished = 0.0;
    long prompt_tokens = 0;
    long output_tokens = 0;
    int converted_layers = 0;
    double queueing_delay = 0.0;
    double normalized_latency = 0.0;  // ms per generated token, end to end
};

struct TimelinePoint {
    double time = 0.0;
    double memory_fraction = 0.0;
    double conversion_rate = 0.0;  // mean converted fraction over active requests
    long batch_size = 0;
};

struct SimReport {
    std::vector<RequestStats> requests;
    std::vector<TimelinePoint> timeline;
    long sub_batch_splits = 0;     // iterations-layer slots that ran split
    long total_generated = 0;
    double mean_normalized_latency = 0.0;
    double median_normalized_latency = 0.0;
    double p95_normalized_latency = 0.0;
    double peak_memory_fraction = 0.0;

    std::string summary_json() const;
    std::string series_csv() const;
    std::string requests_csv() const;
};

// Deterministic single-threaded iteration loop: continuous batching with one
// prefill or decode step per active request per iteration, per-layer
// sub-batch timing, KV memory restricted to unconverted layers, and the
// watermark-driven conversion controller consulted at admissions and after
// every iteration.
SimReport simulate(const std::vector<TraceRequest>& trace, const ModelProfile& profile,
                   const ControllerConfig& ccfg, const CostModel& cm, const SimConfig& scfg,
                   std::uint64_t seed);

}  // namespace dsla
