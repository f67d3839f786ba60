#pragma once

// Machine-readable per-identity reports: JSON (one object per check) and an
// aggregate CSV summary.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace wflow {

struct IdentityReport {
    std::string name;
    double lhs = 0;
    double rhs = 0;
    double residual = 0;           // absolute
    double relative_residual = 0;  // residual / scale
    double tolerance = 0;          // on the relative residual unless noted
    bool pass = false;
    std::string inputs_digest;     // model/grid/N/seed fingerprint
    double runtime_seconds = 0;
    // named auxiliary quantities (slacks, per-checkpoint extrema, p-values)
    std::vector<std::pair<std::string, double>> details;

    double detail(const std::string& key) const {
        for (const auto& [k, v] : details)
            if (k == key) return v;
        throw std::out_of_range("report '" + name + "': no detail '" + key +
                                "'");
    }

    nlohmann::ordered_json to_json(bool include_runtime = true) const {
        nlohmann::ordered_json j;
        j["name"] = name;
        j["lhs"] = lhs;
        j["rhs"] = rhs;
        j["residual"] = residual;
        j["relative_residual"] = relative_residual;
        j["tol"] = tolerance;
        j["verdict"] = pass ? "pass" : "fail";
        j["inputs"] = inputs_digest;
        if (include_runtime) j["runtime_seconds"] = runtime_seconds;
        nlohmann::ordered_json d = nlohmann::ordered_json::object();
        for (const auto& [k, v] : details) d[k] = v;
        j["details"] = d;
        return j;
    }
};

// Timestamps and runtimes are excluded when deterministic = true so that
// reruns with the same config and seed are byte-identical.
inline void write_reports_json(const std::string& path,
                               const std::vector<IdentityReport>& reports,
                               bool deterministic = true) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : reports) j.push_back(r.to_json(!deterministic));
    os << j.dump(2) << "\n";
}

inline void write_reports_csv(const std::string& path,
                              const std::vector<IdentityReport>& reports) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    os.precision(17);
    os << "name,lhs,rhs,residual,relative_residual,tol,verdict\n";
    for (const auto& r : reports)
        os << r.name << "," << r.lhs << "," << r.rhs << "," << r.residual
           << "," << r.relative_residual << "," << r.tolerance << ","
           << (r.pass ? "pass" : "fail") << "\n";
}

}  // namespace wflow
