#ifndef QSHEET_MODEL_HPP
#define QSHEET_MODEL_HPP

#include "qsheet/constraint.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsheet {

// Doubles cross the model file as hex-float strings so refits round-trip
// bit for bit.
inline std::string double_to_hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double hex_to_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw std::invalid_argument("bad hex-float: " + s);
    return v;
}

// Fitted quantile sheet plus everything needed to evaluate it on raw data.
struct SheetModel {
    int schema_version = 1;
    int K0_tau = 4, m_tau = 4;
    int K0_x = 4, m_x = 4;
    Eigen::VectorXd beta;
    double lambda_tau = 0.0, lambda_11 = 0.0, lambda_12 = 0.0;
    double x_lo = 0.0, x_hi = 1.0;  // raw x mapped affinely onto [0,1]
    std::string method;
    std::string stop_reason;
    double final_loss = 0.0;
    int iterations = 0;
    double wall_time = 0.0;
    bool converged = true;

    SheetSpec spec() const { return make_sheet_spec(K0_tau, m_tau, K0_x, m_x, 0.0, 1.0); }
    CoefficientState state() const { return map_beta(beta, K0_x + m_x); }

    double to_unit(double x_raw) const { return (x_raw - x_lo) / (x_hi - x_lo); }
    double from_unit(double u) const { return x_lo + u * (x_hi - x_lo); }

    double predict(double tau, double x_raw) const {
        return eval_point(spec(), state(), tau, to_unit(x_raw));
    }
};

inline nlohmann::json model_to_json(const SheetModel& m) {
    nlohmann::json j;
    j["schema_version"] = m.schema_version;
    j["basis"] = {{"K0_tau", m.K0_tau}, {"m_tau", m.m_tau}, {"K0_x", m.K0_x}, {"m_x", m.m_x}};
    std::vector<std::string> beta;
    beta.reserve(m.beta.size());
    for (Eigen::Index i = 0; i < m.beta.size(); ++i) beta.push_back(double_to_hex(m.beta[i]));
    j["beta"] = beta;
    j["penalty"] = {{"lambda_tau", m.lambda_tau},
                    {"lambda_11", m.lambda_11},
                    {"lambda_12", m.lambda_12}};
    j["x_map"] = {{"lo", double_to_hex(m.x_lo)}, {"hi", double_to_hex(m.x_hi)}};
    j["fit"] = {{"method", m.method},
                {"stop_reason", m.stop_reason},
                {"final_loss", m.final_loss},
                {"iterations", m.iterations},
                {"wall_time", m.wall_time},
                {"converged", m.converged}};
    return j;
}

inline SheetModel model_from_json(const nlohmann::json& j) {
    SheetModel m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1)
        throw std::invalid_argument("unsupported model schema version " +
                                    std::to_string(m.schema_version));
    const auto& b = j.at("basis");
    m.K0_tau = b.at("K0_tau").get<int>();
    m.m_tau = b.at("m_tau").get<int>();
    m.K0_x = b.at("K0_x").get<int>();
    m.m_x = b.at("m_x").get<int>();
    const auto beta = j.at("beta").get<std::vector<std::string>>();
    m.beta.resize(static_cast<Eigen::Index>(beta.size()));
    for (std::size_t i = 0; i < beta.size(); ++i) m.beta[static_cast<Eigen::Index>(i)] = hex_to_double(beta[i]);
    const auto& p = j.at("penalty");
    m.lambda_tau = p.at("lambda_tau").get<double>();
    m.lambda_11 = p.at("lambda_11").get<double>();
    m.lambda_12 = p.at("lambda_12").get<double>();
    m.x_lo = hex_to_double(j.at("x_map").at("lo").get<std::string>());
    m.x_hi = hex_to_double(j.at("x_map").at("hi").get<std::string>());
    const auto& f = j.at("fit");
    m.method = f.at("method").get<std::string>();
    m.stop_reason = f.at("stop_reason").get<std::string>();
    m.final_loss = f.at("final_loss").get<double>();
    m.iterations = f.at("iterations").get<int>();
    m.wall_time = f.at("wall_time").get<double>();
    m.converged = f.at("converged").get<bool>();
    return m;
}

}  // namespace qsheet

#endif  // QSHEET_MODEL_HPP
