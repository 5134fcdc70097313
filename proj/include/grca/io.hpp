#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "grca/geometry.hpp"
#include "grca/schema.hpp"
#include "grca/simulator.hpp"

namespace grca::io {

using nlohmann::json;

/// {"K": 9 row-major numbers, "R": 9 row-major numbers, "t": 3 numbers}
CameraCalibration calibration_from_json(const json& j);
json to_json(const CameraCalibration& cal);

/// A calibration file holds either one shared calibration or an object
/// mapping example ids to calibrations.
struct CalibrationSet {
  std::optional<CameraCalibration> shared;
  std::map<std::string, CameraCalibration> by_id;

  const CameraCalibration* find(const std::string& id) const;
};
CalibrationSet read_calibrations(const std::filesystem::path& path);

/// {"bins": 1000, "x2d": [lo, hi], "y2d": [...], "x3d": [...], "y3d": [...], "z3d": [...]};
/// absent keys keep the defaults.
FieldRanges ranges_from_json(const json& j, FieldRanges base = {});
json to_json(const FieldRanges& r);
FieldRanges read_ranges(const std::filesystem::path& path, FieldRanges base = {});

/// The six-field wire object (bins) plus "id".
json output_to_json(const ParsedOutput& p, const std::string& id);

json to_json(const sim::Metrics& m);
json to_json(const sim::SimConfig& c);
json to_json(const sim::TrainingReport& r);
json to_json(const VarianceReport& r);
json to_json(const sim::VarianceStudy& s);
json to_json(const sim::Scene& s);
sim::Scene scene_from_json(const json& j);

/// step plus one column per metric, fixed precision.
std::string curves_csv(const sim::TrainingReport& r);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace grca::io
