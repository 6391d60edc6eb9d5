#include "dsla/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace dsla {

ModelProfile ModelProfile::defaults() {
    ModelProfile p;
    p.conversion_order.resize(p.n);
    std::iota(p.conversion_order.begin(), p.conversion_order.end(), 0);
    p.base_kinds.assign(p.n, LayerKind::Teacher);
    return p;
}

void ModelProfile::validate() const {
    require(n >= 1 && h >= 1 && d_h >= 1, "profile sizes must be positive");
    require(bytes_per_elem == 2 || bytes_per_elem == 4 || bytes_per_elem == 8,
            "bytes_per_elem must be 2, 4, or 8");
    require(static_cast<long>(base_kinds.size()) == n, "kind mask must cover every layer");
    ConversionOrder sorted = conversion_order;
    std::sort(sorted.begin(), sorted.end());
    require(static_cast<long>(sorted.size()) == n, "conversion order must cover every layer");
    for (long i = 0; i < n; ++i)
        require(sorted[i] == i, "conversion order must be a permutation of the layers");
}

namespace {

struct Active {
    int id;
    const TraceRequest* req;
    int converted = 0;       // prefix length of the conversion order
    bool prefilled = false;
    long generated = 0;
    double admitted = 0.0;
    double first_token = -1.0;
    std::uint64_t kv = 0;    // bytes currently accounted for this request
};

LayerKind kind_at(const ModelProfile& p, int converted, long layer) {
    for (int i = 0; i < converted; ++i)
        if (p.conversion_order[i] == layer) return LayerKind::DSLA;
    return p.base_kinds[layer];
}

std::uint64_t request_kv(const ModelProfile& p, int converted, long context) {
    long unconv = 0;
    for (long l = 0; l < p.n; ++l)
        if (kind_at(p, converted, l) == LayerKind::Teacher) ++unconv;
    if (unconv == 0) return 0;
    return kv_cache_bytes(unconv, 1, context, p.h, p.d_h, p.bytes_per_elem);
}

}  // namespace

SimReport simulate(const std::vector<TraceRequest>& trace, const ModelProfile& profile,
                   const ControllerConfig& ccfg, const CostModel& cm, const SimConfig& scfg,
                   std::uint64_t seed) {
    require(!trace.empty(), "trace is empty");
    profile.validate();
    ccfg.validate();
    cm.validate();
    require(scfg.memory_capacity_bytes > 0.0 && scfg.max_batch >= 1, "bad simulator capacity");

    constexpr double kMs = 1000.0;  // arrivals are seconds, costs milliseconds

    std::vector<const TraceRequest*> pending(trace.size());
    for (size_t i = 0; i < trace.size(); ++i) pending[i] = &trace[i];
    std::stable_sort(pending.begin(), pending.end(),
                     [](const TraceRequest* a, const TraceRequest* b) {
                         return a->arrival_time < b->arrival_time;
                     });

    std::mt19937_64 jitter_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SimReport report;
    report.requests.resize(trace.size());
    std::vector<Active> batch;
    size_t next_arrival = 0;
    double t = 0.0;
    long double mem = 0.0;
    const double cap_bytes = scfg.memory_capacity_bytes;

    auto fraction = [&] { return static_cast<double>(mem / cap_bytes); };
    auto mean_rate = [&] {
        if (batch.empty()) return 0.0;
        double acc = 0.0;
        for (const Active& a : batch) acc += double(a.converted) / profile.n;
        return acc / batch.size();
    };
    auto snapshot = [&] {
        LoadSnapshot s;
        s.memory_fraction = fraction();
        s.active_requests = static_cast<long>(batch.size());
        s.quality = ccfg.quality_at(mean_rate());
        return s;
    };
    auto set_kv = [&](Active& a, std::uint64_t kv) {
        mem += static_cast<long double>(kv) - static_cast<long double>(a.kv);
        a.kv = kv;
    };

    // pressure relief: grow conversions toward the bucket caps, longest
    // prompts first, until the high watermark clears or caps are reached
    auto relieve = [&] {
        if (!scfg.policy_enabled) return;
        std::vector<Active*> order;
        for (Active& a : batch) order.push_back(&a);
        std::sort(order.begin(), order.end(), [](const Active* x, const Active* y) {
            if (x->req->prompt_tokens != y->req->prompt_tokens)
                return x->req->prompt_tokens > y->req->prompt_tokens;
            return x->id < y->id;
        });
        for (Active* a : order) {
            if (fraction() <= ccfg.high_watermark) break;
            const int next =
                controller_decide(snapshot(), *a->req, static_cast<int>(profile.n), a->converted, ccfg);
            if (next > a->converted) {
                a->converted = next;
                set_kv(*a, request_kv(profile, a->converted,
                                      a->req->prompt_tokens + a->generated));
            }
        }
    };

    auto admit = [&] {
        while (next_arrival < pending.size() &&
               pending[next_arrival]->arrival_time * kMs <= t &&
               static_cast<long>(batch.size()) < scfg.max_batch) {
            const TraceRequest* r = pending[next_arrival];
            int conv = 0;
            if (scfg.policy_enabled)
                conv = controller_decide(snapshot(), *r, static_cast<int>(profile.n), 0, ccfg);
            const std::uint64_t kv = request_kv(profile, conv, r->prompt_tokens);
            // FIFO: the head waits for capacity unless it is alone and can
            // never fit, in which case it runs alone over budget
            if (mem + kv > cap_bytes && !batch.empty()) break;
            Active a;
            a.id = static_cast<int>(r - trace.data());
            a.req = r;
            a.converted = conv;
            a.admitted = t;
            batch.push_back(a);
            set_kv(batch.back(), kv);
            ++next_arrival;
            if (scfg.policy_enabled && fraction() > ccfg.high_watermark) relieve();
        }
    };

    while (next_arrival < pending.size() || !batch.empty()) {
        if (batch.empty()) {
            t = std::max(t, pending[next_arrival]->arrival_time * kMs);
            admit();
            require(!batch.empty(), "admission stalled with an empty batch");
        }

        // one iteration: a prefill or decode step for every active request,
        // timed per layer over at most two kind sub-batches
        double duration = 0.0;
        for (long l = 0; l < profile.n; ++l) {
            double worst[2] = {0.0, 0.0};
            bool seen[2] = {false, false};
            for (const Active& a : batch) {
                const LayerKind k = kind_at(profile, a.converted, l);
                const Phase ph = a.prefilled ? Phase::Decode : Phase::Prefill;
                const long s = a.prefilled ? a.req->prompt_tokens + a.generated
                                           : a.req->prompt_tokens;
                const int slot = (k == LayerKind::Teacher) ? 0 : 1;
                seen[slot] = true;
                worst[slot] = std::max(worst[slot], step_cost(k, ph, s, cm));
            }
            if (seen[0] && seen[1]) ++report.sub_batch_splits;
            duration += worst[0] + worst[1];
        }
        if (cm.jitter_prob > 0.0 && unit(jitter_rng) < cm.jitter_prob)
            duration *= cm.jitter_mult;
        t += duration;

        // every request emits one token (prefill emits the first)
        for (Active& a : batch) {
            if (!a.prefilled) {
                a.prefilled = true;
                a.first_token = t;
            }
            ++a.generated;
            ++report.total_generated;
        }
        for (size_t i = 0; i < batch.size();) {
            Active& a = batch[i];
            if (a.generated >= a.req->output_tokens) {
                RequestStats& st = report.requests[a.id];
                st.id = a.id;
                st.arrival = a.req->arrival_time * kMs;
                st.admitted = a.admitted;
                st.first_token = a.first_token;
                st.finished = t;
                st.prompt_tokens = a.req->prompt_tokens;
                st.output_tokens = a.req->output_tokens;
                st.converted_layers = a.converted;
                st.queueing_delay = a.admitted - a.req->arrival_time * kMs;
                st.normalized_latency = (t - a.req->arrival_time * kMs) / a.req->output_tokens;
                set_kv(a, 0);
                batch.erase(batch.begin() + i);
            } else {
                set_kv(a, request_kv(profile, a.converted, a.req->prompt_tokens + a.generated));
                ++i;
            }
        }

        admit();
        if (fraction() > ccfg.high_watermark) relieve();

        report.peak_memory_fraction = std::max(report.peak_memory_fraction, fraction());
        report.timeline.push_back({t, fraction(), mean_rate(), static_cast<long>(batch.size())});
    }

    std::vector<double> lat;
    for (const RequestStats& r : report.requests) lat.push_back(r.normalized_latency);
    std::sort(lat.begin(), lat.end());
    const size_t m = lat.size();
    report.mean_normalized_latency = std::accumulate(lat.begin(), lat.end(), 0.0) / m;
    report.median_normalized_latency = lat[m / 2];
    report.p95_normalized_latency = lat[std::min(m - 1, static_cast<size_t>(0.95 * m))];
    return report;
}

std::string SimReport::summary_json() const {
    nlohmann::json j{{"requests", requests.size()},
                     {"total_generated", total_generated},
                     {"mean_normalized_latency_ms", mean_normalized_latency},
                     {"median_normalized_latency_ms", median_normalized_latency},
                     {"p95_normalized_latency_ms", p95_normalized_latency},
                     {"peak_memory_fraction", peak_memory_fraction},
                     {"sub_batch_splits", sub_batch_splits}};
    return j.dump(2) + "\n";
}

std::string SimReport::series_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "time_ms,memory_fraction,conversion_rate,batch_size\n";
    for (const TimelinePoint& p : timeline)
        out << p.time << ',' << p.memory_fraction << ',' << p.conversion_rate << ','
            << p.batch_size << '\n';
    return out.str();
}

std::string SimReport::requests_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "id,arrival_ms,admitted_ms,first_token_ms,finished_ms,prompt_tokens,output_tokens,"
           "converted_layers,queueing_delay_ms,normalized_latency_ms\n";
    for (const RequestStats& r : requests)
        out << r.id << ',' << r.arrival << ',' << r.admitted << ',' << r.first_token << ','
            << r.finished << ',' << r.prompt_tokens << ',' << r.output_tokens << ','
            << r.converted_layers << ',' << r.queueing_delay << ',' << r.normalized_latency
            << '\n';
    return out.str();
}

}  // namespace dsla
