#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsla/trace.hpp"

namespace dsla {

struct BucketCap {
    long lo = 0;     // inclusive
    long hi = 0;     // exclusive; <=0 unbounded
    double rate = 0.0;  // max fraction of layers converted for prompts here
};

struct ControllerConfig {
    std::vector<BucketCap> caps;     // by ascending prompt length
    double high_watermark = 0.85;    // memory fraction that triggers conversion
    double low_watermark = 0.65;     // below this, conversion stops growing
    double quality_floor = 0.0;      // halt conversion when the proxy dips under
    int hysteresis_ticks = 1;        // controller ticks below low before relief
    // monotone map: fleet conversion rate -> quality proxy (piecewise linear)
    std::vector<std::pair<double, double>> quality_table;

    static ControllerConfig table_defaults();
    static ControllerConfig from_file(const std::filesystem::path& path);
    std::string to_text() const;
    void validate() const;
    double cap_rate(long prompt_tokens) const;
    double quality_at(double conversion_rate) const;
};

struct LoadSnapshot {
    double memory_fraction = 0.0;  // of capacity, after current admissions
    long active_requests = 0;
    double quality = 1.0;          // current quality proxy
};

// Prefix length of the conversion order this request should run with.
// Monotone in `current`: conversions never retract mid-flight.
int controller_decide(const LoadSnapshot& state, const TraceRequest& req, int n_layers,
                      int current, const ControllerConfig& cfg);

}  // namespace dsla
