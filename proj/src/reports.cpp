#include "ragprobe/reports.hpp"

#include <cstdio>
#include <fstream>

#include "ragprobe/errors.hpp"

namespace ragprobe {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string csv_config_line(const nlohmann::json& config_echo) {
    return "# config: " + config_echo.dump() + "\n";
}

std::string grid_csv(const EffectGrid& grid, const nlohmann::json& config_echo) {
    std::string out = csv_config_line(config_echo);
    out += "layer";
    for (int b = 0; b < kNumBuckets; ++b) {
        out += ",";
        out += bucket_label(b);
    }
    out += "\n";
    for (int l = 0; l < grid.n_layers; ++l) {
        out += std::to_string(l);
        for (int b = 0; b < kNumBuckets; ++b) {
            out += ",";
            if (grid.has(b)) out += fmt_double(grid.at(l, b));
        }
        out += "\n";
    }
    return out;
}

nlohmann::json grid_json(const EffectGrid& grid) {
    nlohmann::json j;
    j["n_layers"] = grid.n_layers;
    j["buckets"] = nlohmann::json::array();
    for (int b = 0; b < kNumBuckets; ++b) j["buckets"].push_back(bucket_label(b));
    j["bucket_counts"] = grid.bucket_counts;
    j["values"] = nlohmann::json::array();
    for (int l = 0; l < grid.n_layers; ++l) {
        nlohmann::json row = nlohmann::json::array();
        for (int b = 0; b < kNumBuckets; ++b) {
            if (grid.has(b)) {
                row.push_back(grid.at(l, b));
            } else {
                row.push_back(nullptr);
            }
        }
        j["values"].push_back(row);
    }
    j["base_probs"] = {{"p_clean", grid.p_clean}, {"p_star_mean", grid.p_star_mean}};
    j["n_instances"] = grid.n_instances;
    return j;
}

std::string long_csv(const std::vector<LongRow>& rows, const nlohmann::json& config_echo) {
    std::string out = csv_config_line(config_echo);
    out += "layer,bucket,value,setting\n";
    for (const LongRow& r : rows) {
        out += std::to_string(r.layer);
        out += ",";
        out += r.bucket;
        out += ",";
        out += fmt_double(r.value);
        out += ",";
        out += r.setting;
        out += "\n";
    }
    return out;
}

std::string contributions_csv(const ContributionTable& table, const nlohmann::json& config_echo) {
    std::string out = csv_config_line(config_echo);
    out += "# instances per column:";
    for (size_t c = 0; c < table.columns.size(); ++c) {
        out += " " + table.columns[c] + "=" + std::to_string(table.counts[c]);
    }
    out += "\n";
    out += "layer";
    for (const std::string& c : table.columns) {
        out += ",";
        out += c;
    }
    out += "\n";
    for (int l = 0; l < table.n_layers; ++l) {
        out += std::to_string(l);
        for (size_t c = 0; c < table.columns.size(); ++c) {
            out += ",";
            if (table.counts[c] > 0) out += fmt_double(table.values[static_cast<size_t>(l)][c]);
        }
        out += "\n";
    }
    return out;
}

std::string knockout_csv(const KnockoutSweep& sweep, const std::string& setting,
                         const nlohmann::json& config_echo) {
    std::string out = csv_config_line(config_echo);
    out += "window_start,window_width,mean_relative_drop,defined_count,setting\n";
    auto row = [&](const KnockoutWindow& w) {
        out += w.label.empty() ? std::to_string(w.first_layer) : w.label;
        out += ",";
        out += std::to_string(w.width);
        out += ",";
        out += fmt_double(w.mean_drop);
        out += ",";
        out += std::to_string(w.defined_count);
        out += ",";
        out += setting;
        out += "\n";
    };
    for (const KnockoutWindow& w : sweep.windows) row(w);
    row(sweep.all_layers);
    return out;
}

nlohmann::json comparison_json(const ComparisonReport& report) {
    nlohmann::json j;
    j["n_pairs_total"] = report.n_pairs_total;
    j["n_pairs_correct"] = report.n_pairs_correct;
    j["attribute_comparison_available"] = report.attribute_comparison_available;
    j["medians"] = {
        {"st_contribution_ratio_vanilla_over_rag_max", report.median_st_ratio_vanilla_over_rag},
        {"st_contribution_ratio_vanilla_over_rag_mean", report.median_st_ratio_vanilla_over_rag_mean},
        {"knockout_drop_vanilla", report.median_drop_vanilla},
        {"knockout_drop_rag", report.median_drop_rag},
    };
    j["direction_counts"] = {
        {"st_vanilla_greater", report.count_st_vanilla_greater},
        {"attr_greater_than_st", report.count_attr_greater_than_st},
        {"attr_comparable", report.count_attr_comparable},
        {"drop_vanilla_greater", report.count_drop_vanilla_greater},
        {"drop_comparable", report.count_drop_comparable},
    };
    j["facts"] = nlohmann::json::array();
    for (const FactComparison& fc : report.facts) {
        nlohmann::json f;
        f["fact_index"] = fc.fact_index;
        f["correct_vanilla"] = fc.correct_vanilla;
        f["correct_rag"] = fc.correct_rag;
        f["st_contribution"] = {{"vanilla_max", fc.st_vanilla_max},
                                {"vanilla_mean", fc.st_vanilla_mean},
                                {"rag_max", fc.st_rag_max},
                                {"rag_mean", fc.st_rag_mean}};
        if (fc.has_attribute) {
            f["attribute_contribution"] = {{"rag_max", fc.attr_rag_max},
                                           {"rag_mean", fc.attr_rag_mean}};
        } else {
            f["attribute_contribution"] = nullptr;
        }
        f["knockout_drop"] = {
            {"vanilla", fc.drop_vanilla_defined ? nlohmann::json(fc.drop_vanilla) : nlohmann::json()},
            {"rag", fc.drop_rag_defined ? nlohmann::json(fc.drop_rag) : nlohmann::json()},
        };
        j["facts"].push_back(f);
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path);
}

} // namespace ragprobe
