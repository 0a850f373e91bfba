#pragma once

// Run artifacts: a JSON-lines metrics stream (one header record, then one
// record per evaluation), CSV assignment timelines, and the representation
// matrix as CSV. No wall-clock fields anywhere; identical runs must produce
// byte-identical files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldsa/config.hpp"
#include "ldsa/errors.hpp"
#include "ldsa/rollout.hpp"

namespace ldsa {

struct EvalMetrics {
    long timestep = 0;
    double loss_td = 0.0;        // means over gradient steps since the last record
    double loss_spread = 0.0;
    double loss_temporal = 0.0;
    int grad_steps = 0;
    double eval_return = 0.0;         // mean undiscounted episode return
    double discounted_return = 0.0;   // mean discounted episode return
    double oracle_return = 0.0;       // mean best attainable discounted return
    double normalized_return = 0.0;   // discounted_return / oracle_return
    double switch_mean = 0.0;         // mean assignment switches per episode
    std::vector<long> usage;          // agent-steps per subtask over all eval episodes
};

class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw ConfigError("cannot open metrics file " + path.string());
    }

    void write_header(const RunConfig& cfg) {
        nlohmann::json rec;
        rec["record"] = "header";
        rec["ablation"] = ablation_name(cfg.ablation);
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg.hash()));
        rec["config_hash"] = hex;
        nlohmann::json conf = nlohmann::json::object();
        std::istringstream is(cfg.serialize());
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq != std::string::npos) conf[line.substr(0, eq)] = line.substr(eq + 1);
        }
        rec["config"] = std::move(conf);
        out_ << rec.dump() << "\n";
        out_.flush();
    }

    void write_eval(const EvalMetrics& m) {
        nlohmann::json rec;
        rec["record"] = "eval";
        rec["timestep"] = m.timestep;
        rec["loss_td"] = m.loss_td;
        rec["loss_spread"] = m.loss_spread;
        rec["loss_temporal"] = m.loss_temporal;
        rec["grad_steps"] = m.grad_steps;
        rec["eval_return"] = m.eval_return;
        rec["discounted_return"] = m.discounted_return;
        rec["oracle_return"] = m.oracle_return;
        rec["normalized_return"] = m.normalized_return;
        rec["switch_mean"] = m.switch_mean;
        rec["usage"] = m.usage;
        out_ << rec.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

// Parses every line and checks the field inventory; returns the number of
// eval records. Throws ConfigError on any malformed line.
inline int validate_metrics_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metrics file " + path.string());
    std::string line;
    int line_no = 0;
    int evals = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
        auto need = [&](const char* field) {
            if (!rec.contains(field)) {
                throw ConfigError("metrics line " + std::to_string(line_no) + ": missing field '" +
                                  std::string(field) + "'");
            }
        };
        need("record");
        const std::string kind = rec["record"];
        if (kind == "header") {
            if (line_no != 1) throw ConfigError("metrics header must be the first record");
            need("config");
            need("config_hash");
            need("ablation");
            saw_header = true;
        } else if (kind == "eval") {
            for (const char* f : {"timestep", "loss_td", "loss_spread", "loss_temporal", "eval_return",
                                  "discounted_return", "oracle_return", "normalized_return", "switch_mean",
                                  "usage"}) {
                need(f);
            }
            const double norm = rec["normalized_return"];
            if (rec["oracle_return"].get<double>() > 0.0 && !(norm >= 0.0 && norm <= 1.0 + 1e-9)) {
                throw ConfigError("metrics line " + std::to_string(line_no) + ": normalized return " +
                                  std::to_string(norm) + " outside [0, 1]");
            }
            ++evals;
        } else {
            throw ConfigError("metrics line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
        }
    }
    if (!saw_header) throw ConfigError("metrics file has no header record");
    return evals;
}

inline void write_timeline_csv(const std::filesystem::path& path, std::span<const TimelineRow> rows, int k) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open timeline file " + path.string());
    out << "timestep,agent,subtask";
    for (int i = 0; i < k; ++i) out << ",p" << i;
    out << "\n";
    char buf[40];
    for (const auto& row : rows) {
        out << row.t << "," << row.agent << "," << row.subtask;
        for (double p : row.probs) {
            std::snprintf(buf, sizeof(buf), "%.17g", p);
            out << "," << buf;
        }
        out << "\n";
    }
}

// k rows by m columns, one subtask representation per row.
inline void write_repr_csv(const std::filesystem::path& path, const ParamStore& store, const ModelDims& dims) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open representation file " + path.string());
    if (!dims.has_repr) return;  // baseline variants have nothing to export
    Tape tape;
    auto bound = bind_params(tape, store);
    Tensor reprs = subtask_representations(tape, bound, dims.k);
    char buf[40];
    for (int i = 0; i < dims.k; ++i) {
        for (int j = 0; j < dims.repr_dim; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", reprs.values()[static_cast<std::size_t>(i) * dims.repr_dim + j]);
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

}  // namespace ldsa
