#pragma once

#include "viv/field.hpp"

#include <json.hpp>

#include <string>

namespace viv {

using nlohmann::json;

inline constexpr const char* kArtifactVersion = "1.0.0";

/// Write `content` to `path` atomically (write temp file, then rename).
void atomic_write(const std::string& path, const std::string& content);

/// Field snapshot: little-endian binary block (magic, dims, h, DOF array)
/// plus a JSON sidecar `<path>.json` with mesh metadata.
void save_field(const std::string& path, const Mesh& m, const CoupledField& f);
CoupledField load_field(const std::string& path, const Mesh& m);

void save_pressure(const std::string& path, const Mesh& m, const PressureField& p);
PressureField load_pressure(const std::string& path, const Mesh& m);

/// CSV export (RFC-4180 quoting not needed for numeric tables): one row per
/// sampled face/cell with index, x, y, value.
void export_field_csv(const std::string& path, const Mesh& m, const CoupledField& f);

/// JSON report with stable key order, version and config hash attached.
void write_report(const std::string& path, json j, const std::string& config_hash);

} // namespace viv
