#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsla {

struct TraceRequest {
    double arrival_time = 0.0;  // seconds
    long session_id = 0;
    int turn_index = 0;
    long prompt_tokens = 0;  // includes concatenated session history
    long output_tokens = 0;
};

struct LengthBucket {
    long lo = 0;        // inclusive
    long hi = 0;        // exclusive; <=0 means unbounded
    double share = 0.0;
};

struct TraceConfig {
    long sessions = 1000;
    double turn_lambda = 3.0;          // Poisson turns per session
    double session_rate = 1.0;         // session starts per second (Poisson process)
    double think_time_mean = 5.0;      // seconds between turns within a session
    long output_min = 32;
    long output_max = 256;
    long max_prompt = 16384;
    std::vector<LengthBucket> buckets;  // shares must sum to 1

    static TraceConfig defaults();  // the serving-paper prompt-length mix
    void validate() const;
};

// Deterministic per seed. Turn counts are Poisson(turn_lambda) clamped to at
// least one; each turn's prompt concatenates the session history, and total
// prompt lengths are steered onto the configured bucket mix by a greedy
// quota rule over feasible buckets.
std::vector<TraceRequest> generate_trace(const TraceConfig& cfg, std::uint64_t seed);

// JSON-lines, one request per line.
std::string trace_to_jsonl(const std::vector<TraceRequest>& trace);
std::vector<TraceRequest> trace_from_jsonl(const std::string& text);
void save_trace(const std::filesystem::path& path, const std::vector<TraceRequest>& trace);
std::vector<TraceRequest> load_trace(const std::filesystem::path& path);

// Empirical share of requests per bucket.
std::vector<double> bucket_shares(const std::vector<TraceRequest>& trace,
                                  const std::vector<LengthBucket>& buckets);

}  // namespace dsla
