#include "dsla/costmodel.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dsla/io.hpp"

namespace dsla {

std::uint64_t kv_cache_bytes(long n, long b, long s, long h, long d_h, long bytes_per_elem) {
    require(n > 0 && b > 0 && s > 0 && h > 0 && d_h > 0, "kv_cache_bytes needs positive sizes");
    require(bytes_per_elem == 2 || bytes_per_elem == 4 || bytes_per_elem == 8,
            "bytes_per_elem must be 2, 4, or 8");
    unsigned __int128 v = 2;
    for (long f : {n, b, s, h, d_h, bytes_per_elem}) v *= static_cast<unsigned __int128>(f);
    if (v > static_cast<unsigned __int128>(std::numeric_limits<std::uint64_t>::max()))
        throw std::overflow_error("kv_cache_bytes exceeds 64 bits");
    return static_cast<std::uint64_t>(v);
}

double step_cost(LayerKind kind, Phase phase, long s, const CostModel& cm) {
    require(s >= 1, "context length must be at least 1");
    const double sd = static_cast<double>(s);
    if (kind == LayerKind::Teacher) {
        if (phase == Phase::Prefill) return cm.teacher_prefill_a * sd * sd + cm.teacher_prefill_c;
        return cm.teacher_decode_a * sd + cm.teacher_decode_c;
    }
    // GLA and DSLA share the linear-state cost shape
    if (phase == Phase::Prefill) return cm.dsla_prefill_a * sd + cm.dsla_prefill_c;
    return cm.dsla_decode_c;
}

void CostModel::validate() const {
    require(teacher_prefill_a > 0.0 && teacher_decode_a > 0.0 && dsla_prefill_a > 0.0,
            "cost slopes must be positive");
    require(teacher_prefill_c >= 0.0 && teacher_decode_c >= 0.0 && dsla_prefill_c >= 0.0 &&
                dsla_decode_c >= 0.0,
            "cost offsets must be non-negative");
    require(jitter_prob >= 0.0 && jitter_prob <= 1.0, "jitter_prob must lie in [0,1]");
    require(jitter_mult >= 1.0, "jitter_mult must be at least 1");
}

double CostModel::prefill_crossover() const {
    // a_T s^2 + c_T = a_D s + c_D, positive root
    const double a = teacher_prefill_a, b = -dsla_prefill_a, c = teacher_prefill_c - dsla_prefill_c;
    const double disc = b * b - 4 * a * c;
    require(disc >= 0.0, "no prefill crossover for these constants");
    return (-b + std::sqrt(disc)) / (2 * a);
}

CostModel CostModel::from_file(const std::filesystem::path& path) {
    CostModel cm;
    std::map<std::string, double*> fields{
        {"teacher_prefill_a", &cm.teacher_prefill_a}, {"teacher_prefill_c", &cm.teacher_prefill_c},
        {"teacher_decode_a", &cm.teacher_decode_a},   {"teacher_decode_c", &cm.teacher_decode_c},
        {"dsla_prefill_a", &cm.dsla_prefill_a},       {"dsla_prefill_c", &cm.dsla_prefill_c},
        {"dsla_decode_c", &cm.dsla_decode_c},         {"jitter_prob", &cm.jitter_prob},
        {"jitter_mult", &cm.jitter_mult}};
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const size_t eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw std::invalid_argument("calibration line " + std::to_string(lineno) +
                                        " is not key=value");
        std::string key = line.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        auto it = fields.find(key);
        if (it == fields.end()) throw std::invalid_argument("unknown calibration key: " + key);
        *it->second = std::stod(line.substr(eq + 1));
    }
    cm.validate();
    return cm;
}

std::string CostModel::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "teacher_prefill_a=" << teacher_prefill_a << "\n"
        << "teacher_prefill_c=" << teacher_prefill_c << "\n"
        << "teacher_decode_a=" << teacher_decode_a << "\n"
        << "teacher_decode_c=" << teacher_decode_c << "\n"
        << "dsla_prefill_a=" << dsla_prefill_a << "\n"
        << "dsla_prefill_c=" << dsla_prefill_c << "\n"
        << "dsla_decode_c=" << dsla_decode_c << "\n"
        << "jitter_prob=" << jitter_prob << "\n"
        << "jitter_mult=" << jitter_mult << "\n";
    return out.str();
}

}  // namespace dsla
