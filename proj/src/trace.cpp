#include "dsla/trace.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dsla/io.hpp"

namespace dsla {

using nlohmann::json;

TraceConfig TraceConfig::defaults() {
    TraceConfig cfg;
    cfg.buckets = {
        {0, 2000, 0.6468},
        {2000, 4000, 0.1616},
        {4000, 8000, 0.1603},
        {8000, 0, 0.0310},
    };
    // published shares sum to 0.9997; renormalize so the mix is a distribution
    double total = 0.0;
    for (const LengthBucket& b : cfg.buckets) total += b.share;
    for (LengthBucket& b : cfg.buckets) b.share /= total;
    return cfg;
}

void TraceConfig::validate() const {
    if (sessions < 0) throw std::invalid_argument("sessions must be non-negative");
    if (turn_lambda < 0.0) throw std::invalid_argument("turn_lambda must be non-negative");
    if (session_rate <= 0.0) throw std::invalid_argument("session_rate must be positive");
    if (think_time_mean <= 0.0) throw std::invalid_argument("think_time_mean must be positive");
    if (output_min < 1 || output_max < output_min)
        throw std::invalid_argument("output token range invalid");
    if (buckets.empty()) throw std::invalid_argument("no length buckets configured");
    double total = 0.0;
    long prev_hi = 0;
    for (size_t i = 0; i < buckets.size(); ++i) {
        const LengthBucket& b = buckets[i];
        if (b.share < 0.0) throw std::invalid_argument("bucket share negative");
        if (b.lo != prev_hi) throw std::invalid_argument("buckets must be contiguous from 0");
        const bool last = i + 1 == buckets.size();
        if (last) {
            if (b.hi > 0) throw std::invalid_argument("last bucket must be unbounded");
        } else {
            if (b.hi <= b.lo) throw std::invalid_argument("bucket range empty");
            prev_hi = b.hi;
        }
        total += b.share;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("bucket shares must sum to 1");
    if (max_prompt <= buckets.back().lo)
        throw std::invalid_argument("max_prompt must exceed the last bucket's lower edge");
}

namespace {

long effective_hi(const LengthBucket& b, long max_prompt) {
    return b.hi > 0 ? std::min(b.hi, max_prompt + 1) : max_prompt + 1;
}

}  // namespace

std::vector<TraceRequest> generate_trace(const TraceConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> session_gap(cfg.session_rate);
    std::exponential_distribution<double> think_gap(1.0 / cfg.think_time_mean);
    std::uniform_int_distribution<long> out_tokens(cfg.output_min, cfg.output_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const size_t nb = cfg.buckets.size();
    std::vector<long> emitted(nb, 0);
    long emitted_total = 0;

    std::vector<TraceRequest> trace;
    double session_start = 0.0;
    for (long sid = 0; sid < cfg.sessions; ++sid) {
        session_start += session_gap(rng);
        long turns = 1;
        if (cfg.turn_lambda > 0.0) {
            std::poisson_distribution<long> turn_dist(cfg.turn_lambda);
            turns = std::max<long>(1, turn_dist(rng));
        }

        double t = session_start;
        long history = 0;  // prior prompts + outputs, concatenated into each turn
        for (int turn = 0; turn < turns; ++turn) {
            const long min_total = history + 1;
            // greedy quota steering: among buckets that can still hold this
            // session's history, pick the one furthest below its target share
            int pick = -1;
            double best = -1e300;
            for (size_t i = 0; i < nb; ++i) {
                const long lo = std::max(cfg.buckets[i].lo, min_total);
                if (lo >= effective_hi(cfg.buckets[i], cfg.max_prompt)) continue;
                const double got = emitted_total ? double(emitted[i]) / emitted_total : 0.0;
                const double deficit = cfg.buckets[i].share - got;
                if (deficit > best) {
                    best = deficit;
                    pick = static_cast<int>(i);
                }
            }
            long total;
            if (pick < 0) {
                total = min_total;  // history outgrew every bucket
                pick = static_cast<int>(nb) - 1;
            } else {
                const long lo = std::max(cfg.buckets[pick].lo, min_total);
                const long hi = effective_hi(cfg.buckets[pick], cfg.max_prompt);
                // bias toward the low edge so multi-turn sessions stay in
                // their bucket instead of spilling upward
                const double u = unit(rng);
                total = lo + static_cast<long>(std::floor((hi - lo) * u * u));
            }
            TraceRequest req;
            req.arrival_time = t;
            req.session_id = sid;
            req.turn_index = turn;
            req.prompt_tokens = total;
            req.output_tokens = out_tokens(rng);
            trace.push_back(req);
            ++emitted[pick];
            ++emitted_total;

            history = total + req.output_tokens;
            t += think_gap(rng);
        }
    }
    std::stable_sort(trace.begin(), trace.end(),
                     [](const TraceRequest& a, const TraceRequest& b) {
                         return a.arrival_time < b.arrival_time;
                     });
    return trace;
}

std::string trace_to_jsonl(const std::vector<TraceRequest>& trace) {
    std::ostringstream out;
    for (const TraceRequest& r : trace) {
        json j{{"arrival_time", r.arrival_time},
               {"session_id", r.session_id},
               {"turn_index", r.turn_index},
               {"prompt_tokens", r.prompt_tokens},
               {"output_tokens", r.output_tokens}};
        out << j.dump() << '\n';
    }
    return out.str();
}

std::vector<TraceRequest> trace_from_jsonl(const std::string& text) {
    std::vector<TraceRequest> trace;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        TraceRequest r;
        r.arrival_time = j.at("arrival_time").get<double>();
        r.session_id = j.at("session_id").get<long>();
        r.turn_index = j.at("turn_index").get<int>();
        r.prompt_tokens = j.at("prompt_tokens").get<long>();
        r.output_tokens = j.at("output_tokens").get<long>();
        if (r.prompt_tokens < 1 || r.output_tokens < 1)
            throw std::invalid_argument("trace line with non-positive token count");
        trace.push_back(r);
    }
    return trace;
}

void save_trace(const std::filesystem::path& path, const std::vector<TraceRequest>& trace) {
    atomic_write(path, trace_to_jsonl(trace));
}

std::vector<TraceRequest> load_trace(const std::filesystem::path& path) {
    return trace_from_jsonl(read_file(path));
}

std::vector<double> bucket_shares(const std::vector<TraceRequest>& trace,
                                  const std::vector<LengthBucket>& buckets) {
    std::vector<double> shares(buckets.size(), 0.0);
    if (trace.empty()) return shares;
    for (const TraceRequest& r : trace) {
        for (size_t i = 0; i < buckets.size(); ++i) {
            const bool in_hi = buckets[i].hi <= 0 || r.prompt_tokens < buckets[i].hi;
            if (r.prompt_tokens >= buckets[i].lo && in_hi) {
                shares[i] += 1.0;
                break;
            }
        }
    }
    for (double& s : shares) s /= trace.size();
    return shares;
}

}  // namespace dsla
