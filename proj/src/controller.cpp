#include "dsla/controller.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dsla/io.hpp"
#include "dsla/types.hpp"

namespace dsla {

ControllerConfig ControllerConfig::table_defaults() {
    ControllerConfig cfg;
    cfg.caps = {
        {0, 2000, 0.125},
        {2000, 4000, 0.25},
        {4000, 8000, 0.375},
        {8000, 0, 0.50},
    };
    cfg.quality_table = {{0.0, 1.0}, {1.0, 0.8}};
    return cfg;
}

void ControllerConfig::validate() const {
    require(!caps.empty(), "controller needs at least one bucket cap");
    long prev_hi = 0;
    double prev_rate = -1.0;
    for (size_t i = 0; i < caps.size(); ++i) {
        require(caps[i].lo == prev_hi, "bucket caps must be contiguous from 0");
        require(caps[i].rate >= 0.0 && caps[i].rate <= 1.0, "cap rate must lie in [0,1]");
        require(caps[i].rate >= prev_rate, "cap rates must be non-decreasing with length");
        prev_rate = caps[i].rate;
        const bool last = i + 1 == caps.size();
        if (last) {
            require(caps[i].hi <= 0, "last bucket cap must be unbounded");
        } else {
            require(caps[i].hi > caps[i].lo, "bucket cap range empty");
            prev_hi = caps[i].hi;
        }
    }
    require(high_watermark > low_watermark, "high watermark must exceed low watermark");
    require(low_watermark > 0.0 && high_watermark <= 1.0, "watermarks must lie in (0,1]");
    require(hysteresis_ticks >= 0, "hysteresis_ticks must be non-negative");
    require(!quality_table.empty(), "quality table empty");
    for (size_t i = 1; i < quality_table.size(); ++i)
        require(quality_table[i].first > quality_table[i - 1].first,
                "quality table rates must be increasing");
}

double ControllerConfig::cap_rate(long prompt_tokens) const {
    for (const BucketCap& c : caps) {
        const bool in_hi = c.hi <= 0 || prompt_tokens < c.hi;
        if (prompt_tokens >= c.lo && in_hi) return c.rate;
    }
    return caps.back().rate;
}

double ControllerConfig::quality_at(double conversion_rate) const {
    const auto& t = quality_table;
    if (conversion_rate <= t.front().first) return t.front().second;
    if (conversion_rate >= t.back().first) return t.back().second;
    for (size_t i = 1; i < t.size(); ++i) {
        if (conversion_rate <= t[i].first) {
            const double w = (conversion_rate - t[i - 1].first) / (t[i].first - t[i - 1].first);
            return t[i - 1].second + w * (t[i].second - t[i - 1].second);
        }
    }
    return t.back().second;
}

int controller_decide(const LoadSnapshot& state, const TraceRequest& req, int n_layers,
                      int current, const ControllerConfig& cfg) {
    require(n_layers >= 1, "model needs at least one layer");
    require(current >= 0 && current <= n_layers, "current conversion count out of range");
    if (state.memory_fraction <= cfg.high_watermark) return current;   // no pressure
    if (state.quality < cfg.quality_floor) return current;             // accuracy at risk
    const int cap = static_cast<int>(std::floor(cfg.cap_rate(req.prompt_tokens) * n_layers));
    return std::max(current, cap);
}

ControllerConfig ControllerConfig::from_file(const std::filesystem::path& path) {
    ControllerConfig cfg = table_defaults();
    cfg.caps.clear();
    cfg.quality_table.clear();
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    bool saw_caps = false, saw_quality = false;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("controller line " + std::to_string(lineno) +
                                        " is not key=value");
        std::string key = line.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        const std::string val = line.substr(eq + 1);
        if (key == "high_watermark") cfg.high_watermark = std::stod(val);
        else if (key == "low_watermark") cfg.low_watermark = std::stod(val);
        else if (key == "quality_floor") cfg.quality_floor = std::stod(val);
        else if (key == "hysteresis_ticks") cfg.hysteresis_ticks = std::stoi(val);
        else if (key == "cap") {
            // cap=lo:hi:rate, hi of 0 means unbounded
            std::istringstream vs(val);
            BucketCap c;
            char sep1, sep2;
            if (!(vs >> c.lo >> sep1 >> c.hi >> sep2 >> c.rate) || sep1 != ':' || sep2 != ':')
                throw std::invalid_argument("bad cap spec: " + val);
            cfg.caps.push_back(c);
            saw_caps = true;
        } else if (key == "quality") {
            // quality=rate:score
            std::istringstream vs(val);
            double r, q;
            char sep;
            if (!(vs >> r >> sep >> q) || sep != ':')
                throw std::invalid_argument("bad quality spec: " + val);
            cfg.quality_table.emplace_back(r, q);
            saw_quality = true;
        } else {
            throw std::invalid_argument("unknown controller key: " + key);
        }
    }
    if (!saw_caps) cfg.caps = table_defaults().caps;
    if (!saw_quality) cfg.quality_table = table_defaults().quality_table;
    cfg.validate();
    return cfg;
}

std::string ControllerConfig::to_text() const {
    std::ostringstream out;
    out.precision(17);
    for (const BucketCap& c : caps)
        out << "cap=" << c.lo << ":" << (c.hi > 0 ? c.hi : 0) << ":" << c.rate << "\n";
    out << "high_watermark=" << high_watermark << "\n"
        << "low_watermark=" << low_watermark << "\n"
        << "quality_floor=" << quality_floor << "\n"
        << "hysteresis_ticks=" << hysteresis_ticks << "\n";
    for (const auto& [r, q] : quality_table) out << "quality=" << r << ":" << q << "\n";
    return out.str();
}

}  // namespace dsla
