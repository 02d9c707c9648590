#pragma once

#include "subtyper/biomarker.hpp"
#include "subtyper/cluster.hpp"
#include "subtyper/matrix.hpp"
#include "subtyper/survstats.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace subtyper {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// sample_id,label
void write_labels_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                      const ClusterAssignment& labels);

struct LabelFile {
    std::vector<std::string> sample_ids;
    ClusterAssignment labels;  ///< canonical relabelling of the file's integer ids
};
LabelFile read_labels_csv(const std::filesystem::path& path);

/// sample_id,z1..zd
void write_latent_csv(const std::filesystem::path& path, std::span<const std::string> ids, const Matrix& latent);

/// n x n consensus values with sample ids as header row and first column.
void write_consensus_csv(const std::filesystem::path& path, std::span<const std::string> ids, const ConsensusMatrix& m);

struct GroupCurve {
    std::size_t group = 0;
    SurvivalCurve curve;
};

/// group,time,survival,at_risk,deaths,censored
void write_km_csv(const std::filesystem::path& path, std::span<const GroupCurve> curves);

/// Standalone SVG step plot of every group's Kaplan-Meier curve.
std::string km_svg(std::span<const GroupCurve> curves, const std::string& title = "");

/// feature_name,importance,rank for every feature in rank order.
void write_importance_csv(const std::filesystem::path& path, const ImportanceRanking& ranking,
                          std::span<const std::string> names);

} // namespace subtyper
