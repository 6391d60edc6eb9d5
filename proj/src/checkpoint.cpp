#include "dsla/checkpoint.hpp"

#include <json.hpp>

#include "dsla/io.hpp"

namespace dsla {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const int rows = static_cast<int>(j.size());
    require(rows > 0, "empty matrix in checkpoint");
    const int cols = static_cast<int>(j.at(0).size());
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        require(static_cast<int>(j.at(i).size()) == cols, "ragged matrix in checkpoint");
        for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

json vector_to_json(const Vector& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vector vector_from_json(const json& j) {
    Vector v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

json gate_to_json(const GateProjection& g) {
    return {{"A_alpha", matrix_to_json(g.A_alpha)},
            {"b_alpha", vector_to_json(g.b_alpha)},
            {"A_beta", matrix_to_json(g.A_beta)},
            {"b_beta", vector_to_json(g.b_beta)}};
}

GateProjection gate_from_json(const json& j) {
    return {matrix_from_json(j.at("A_alpha")), vector_from_json(j.at("b_alpha")),
            matrix_from_json(j.at("A_beta")), vector_from_json(j.at("b_beta"))};
}

json layer_to_json(const LayerParams& p) {
    json j = {{"kind", to_string(p.kind)},
              {"dim", p.dim()},
              {"heads", p.head_count},
              {"W_q", matrix_to_json(p.W_q)},
              {"W_k", matrix_to_json(p.W_k)},
              {"W_v", matrix_to_json(p.W_v)},
              {"W_o", matrix_to_json(p.W_o)}};
    if (p.gate1) j["gate1"] = gate_to_json(*p.gate1);
    if (p.gate2) j["gate2"] = gate_to_json(*p.gate2);
    if (p.kind == LayerKind::DSLA) j["gamma_raw"] = p.gamma_raw;
    return j;
}

LayerParams layer_from_json(const json& j) {
    LayerParams p;
    p.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    p.head_count = j.at("heads").get<int>();
    p.W_q = matrix_from_json(j.at("W_q"));
    p.W_k = matrix_from_json(j.at("W_k"));
    p.W_v = matrix_from_json(j.at("W_v"));
    p.W_o = matrix_from_json(j.at("W_o"));
    if (j.contains("gate1")) p.gate1 = gate_from_json(j.at("gate1"));
    if (j.contains("gate2")) p.gate2 = gate_from_json(j.at("gate2"));
    if (j.contains("gamma_raw")) p.gamma_raw = j.at("gamma_raw").get<double>();
    p.validate();
    return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ToyModel& m,
                     const CheckpointHeader& header) {
    m.validate();
    json j;
    j["format"] = "dsla-checkpoint-v1";
    j["stage"] = header.stage;
    j["conversion_mask"] = header.conversion_mask;
    j["conversion_order"] = m.conversion_order;
    j["committed"] = m.committed;
    j["config_hash"] = header.config_hash;
    j["seed"] = header.seed;
    json layers = json::array();
    for (int l = 0; l < m.layer_count(); ++l) {
        json entry;
        entry["teacher"] = layer_to_json(m.teacher[l]);
        if (m.replacement[l]) entry["replacement"] = layer_to_json(*m.replacement[l]);
        layers.push_back(std::move(entry));
    }
    j["layers"] = std::move(layers);
    atomic_write(path, j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const json j = json::parse(read_file(path));
    require(j.at("format") == "dsla-checkpoint-v1", "unrecognized checkpoint format");
    LoadedCheckpoint lc;
    lc.header.stage = j.at("stage").get<int>();
    lc.header.conversion_mask = j.at("conversion_mask").get<std::vector<int>>();
    lc.header.config_hash = j.value("config_hash", "");
    lc.header.seed = j.value("seed", 0ULL);
    lc.model.conversion_order = j.at("conversion_order").get<std::vector<int>>();
    lc.model.committed = j.at("committed").get<int>();
    for (const auto& entry : j.at("layers")) {
        lc.model.teacher.push_back(layer_from_json(entry.at("teacher")));
        if (entry.contains("replacement")) {
            lc.model.replacement.push_back(layer_from_json(entry.at("replacement")));
        } else {
            lc.model.replacement.emplace_back();
        }
    }
    lc.model.validate();
    return lc;
}

}  // namespace dsla
