#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ragprobe/attention_probes.hpp"
#include "ragprobe/tracing.hpp"

namespace ragprobe {

// Deterministic "%.9g" float formatting shared by all CSV writers.
std::string fmt_double(double v);

// Every emitted file starts with "# config: <compact JSON>" so outputs carry
// their full resolved configuration. Timestamps live in run_meta.json only.
std::string csv_config_line(const nlohmann::json& config_echo);

// rows = layers, columns = buckets; absent buckets print empty cells.
std::string grid_csv(const EffectGrid& grid, const nlohmann::json& config_echo);

nlohmann::json grid_json(const EffectGrid& grid);

struct LongRow {
    int layer = 0;
    std::string bucket;
    double value = 0.0;
    std::string setting;
};

// Plot-ready long format: layer,bucket,value,setting.
std::string long_csv(const std::vector<LongRow>& rows, const nlohmann::json& config_echo);

// rows = layers, columns = source buckets (mean over instances of the
// per-layer bucket means; counts echoed in the JSON report instead).
struct ContributionTable {
    int n_layers = 0;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> values; // [layer][column]
    std::vector<int> counts;                 // contributing instances per column
};

std::string contributions_csv(const ContributionTable& table, const nlohmann::json& config_echo);

std::string knockout_csv(const KnockoutSweep& sweep, const std::string& setting,
                         const nlohmann::json& config_echo);

nlohmann::json comparison_json(const ComparisonReport& report);

void write_text_file(const std::string& path, const std::string& content);

} // namespace ragprobe
