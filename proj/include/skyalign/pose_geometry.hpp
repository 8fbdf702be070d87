#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skyalign/common.hpp"
#include "skyalign/csv.hpp"

// Orientation pseudo-labels from estimated camera positions.
//
// All angles follow one convention: azimuth is measured clockwise from north
// in the ground plane, i.e. atan2(east, north), in degrees on [0, 360).
namespace skyalign {

// x east, y north, z up; meters.
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

enum class PoseStatus : std::uint8_t { ok = 0, failed = 1 };

struct PoseRecord {
  std::string view_id;
  std::string building_id;
  ViewKind kind = ViewKind::drone;
  Vec3 position;  // ignored when status == failed
  PoseStatus status = PoseStatus::ok;
};

class LabelConfig {
 public:
  explicit LabelConfig(int bins) : bins_(bins) {
    if (bins < 2) throw ConfigError("orientation bins must be >= 2");
  }

  int bins() const { return bins_; }
  double bin_width_deg() const { return 360.0 / bins_; }

 private:
  int bins_;
};

struct OrientationLabel {
  std::string view_id;
  std::string building_id;
  std::optional<double> azimuth_deg;  // absent iff masked
  std::optional<int> bin;             // absent iff masked
  bool masked = true;
};

inline constexpr double kDegenerateHorizontalSq = 1e-12;

// Wraps any finite angle into [0, 360).
inline double normalize_deg(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  // fmod of a tiny negative value can round up to exactly 360.
  if (r >= 360.0) r = 0.0;
  return r;
}

// Azimuth of the drone as seen from the satellite image center; nullopt when
// the drone is (numerically) straight above it.
inline std::optional<double> try_relative_azimuth(const Vec3& sat, const Vec3& drone) {
  const double dx = drone.x - sat.x;
  const double dy = drone.y - sat.y;
  if (dx * dx + dy * dy < kDegenerateHorizontalSq) return std::nullopt;
  return normalize_deg(std::atan2(dx, dy) * 180.0 / std::numbers::pi);
}

inline double relative_azimuth(const Vec3& sat, const Vec3& drone) {
  const auto az = try_relative_azimuth(sat, drone);
  if (!az) throw DegenerateAzimuth("drone has no horizontal offset from the satellite origin");
  return *az;
}

// Half-open bins [k*w, (k+1)*w); 0 deg belongs to bin 0.
inline int bin_of(double azimuth_deg, const LabelConfig& cfg) {
  const int k = static_cast<int>(std::floor(azimuth_deg / cfg.bin_width_deg()));
  if (k < 0) return 0;
  if (k >= cfg.bins()) return cfg.bins() - 1;
  return k;
}

// Rotating the satellite view clockwise by k_steps bin widths raises the
// relative label by k_steps (mod b). k_steps may be negative.
inline int rotate_label(int bin, long long k_steps, const LabelConfig& cfg) {
  const long long b = cfg.bins();
  long long r = (static_cast<long long>(bin) + k_steps) % b;
  if (r < 0) r += b;
  return static_cast<int>(r);
}

// One label per drone record, in manifest order. Failed poses and drones with
// a degenerate azimuth are masked.
inline std::vector<OrientationLabel> generate_labels(const std::vector<PoseRecord>& manifest,
                                                     const LabelConfig& cfg) {
  std::map<std::string, const PoseRecord*> satellites;
  for (const auto& rec : manifest) {
    if (rec.kind != ViewKind::satellite) continue;
    if (rec.status != PoseStatus::ok) {
      throw ManifestError("satellite view '" + rec.view_id + "' has a failed pose");
    }
    if (!satellites.emplace(rec.building_id, &rec).second) {
      throw ManifestError("building '" + rec.building_id + "' has more than one satellite view");
    }
  }

  std::vector<OrientationLabel> labels;
  for (const auto& rec : manifest) {
    if (rec.kind != ViewKind::drone) continue;
    const auto sat = satellites.find(rec.building_id);
    if (sat == satellites.end()) {
      throw ManifestError("building '" + rec.building_id + "' lacks an ok satellite record");
    }
    OrientationLabel label{rec.view_id, rec.building_id, std::nullopt, std::nullopt, true};
    if (rec.status == PoseStatus::ok) {
      if (const auto az = try_relative_azimuth(sat->second->position, rec.position)) {
        label.azimuth_deg = *az;
        label.bin = bin_of(*az, cfg);
        label.masked = false;
      }
    }
    labels.push_back(std::move(label));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Manifest and label CSV files.

inline constexpr std::string_view kManifestHeader = "view_id,building_id,kind,x,y,z,status";
inline constexpr std::string_view kLabelHeader = "view_id,building_id,azimuth_deg,bin,masked";

inline std::vector<PoseRecord> parse_manifest(const std::vector<std::string>& lines) {
  if (lines.empty() || csv::trim(lines.front()) != kManifestHeader) {
    throw ManifestError("line 1: expected header '" + std::string(kManifestHeader) + "'");
  }
  std::vector<PoseRecord> records;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "line " + std::to_string(i + 1) + ": ";
    if (csv::trim(lines[i]).empty()) continue;
    const auto fields = csv::split(lines[i]);
    if (fields.size() != 7) throw ManifestError(where + "expected 7 fields");
    try {
      PoseRecord rec;
      rec.view_id = std::string(csv::trim(fields[0]));
      rec.building_id = std::string(csv::trim(fields[1]));
      rec.kind = parse_view_kind(csv::trim(fields[2]));
      const auto status = csv::trim(fields[6]);
      if (status == "ok") {
        rec.status = PoseStatus::ok;
      } else if (status == "failed") {
        rec.status = PoseStatus::failed;
      } else {
        throw FormatError("unknown status '" + std::string(status) + "'");
      }
      if (rec.status == PoseStatus::ok) {
        rec.position = {csv::parse_double(fields[3]), csv::parse_double(fields[4]),
                        csv::parse_double(fields[5])};
        if (!std::isfinite(rec.position.x) || !std::isfinite(rec.position.y) ||
            !std::isfinite(rec.position.z)) {
          throw FormatError("non-finite position");
        }
      }
      if (rec.view_id.empty() || rec.building_id.empty()) throw FormatError("empty id");
      if (!seen.insert(rec.view_id).second) {
        throw FormatError("duplicate view_id '" + rec.view_id + "'");
      }
      records.push_back(std::move(rec));
    } catch (const FormatError& e) {
      throw ManifestError(where + e.what());
    }
  }
  return records;
}

inline std::vector<PoseRecord> read_manifest(const std::string& path) {
  return parse_manifest(csv::read_lines(path));
}

inline void write_manifest(std::ostream& os, const std::vector<PoseRecord>& records) {
  os << kManifestHeader << '\n';
  for (const auto& r : records) {
    os << r.view_id << ',' << r.building_id << ',' << to_string(r.kind) << ',';
    if (r.status == PoseStatus::ok) {
      os << csv::format_double(r.position.x) << ',' << csv::format_double(r.position.y) << ','
         << csv::format_double(r.position.z);
    } else {
      os << ",,";
    }
    os << ',' << (r.status == PoseStatus::ok ? "ok" : "failed") << '\n';
  }
}

inline void write_labels(std::ostream& os, const std::vector<OrientationLabel>& labels) {
  os << kLabelHeader << '\n';
  for (const auto& l : labels) {
    os << l.view_id << ',' << l.building_id << ',';
    if (!l.masked) os << csv::format_double(*l.azimuth_deg);
    os << ',';
    if (!l.masked) os << *l.bin;
    os << ',' << (l.masked ? 1 : 0) << '\n';
  }
}

}  // namespace skyalign
