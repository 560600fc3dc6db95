#pragma once

// JSON plumbing shared by the file formats: checked field access with path
// context, vector/matrix conversion, camera files and config hashing.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtrack/geometry.hpp"

namespace mtrack::io {

using json = nlohmann::json;

/// Parses a JSON file. Syntax errors are reported as SchemaError with
/// line:column; unreadable files as IoError.
json read_json_file(const std::filesystem::path& path);
json parse_json_text(const std::string& text, std::string_view source_name);
void write_json_file(const std::filesystem::path& path, const json& value);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Field `key` of object `obj`; throws SchemaError naming `context.key`.
const json& require(const json& obj, std::string_view key, std::string_view context);
double require_number(const json& obj, std::string_view key, std::string_view context);
int require_int(const json& obj, std::string_view key, std::string_view context);
bool require_bool(const json& obj, std::string_view key, std::string_view context);

/// Numeric array of exactly n entries.
std::vector<double> number_array(const json& value, std::size_t n, std::string_view context);
Vec2 to_vec2(const json& value, std::string_view context);
Vec3 to_vec3(const json& value, std::string_view context);
Mat3 to_mat3_row_major(const json& value, std::string_view context);

json from_vec(const Eigen::Ref<const Eigen::VectorXd>& v);
json from_mat3_row_major(const Mat3& m);

json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const json& value, std::string_view context);

json cameras_to_json(const std::vector<CameraModel>& cameras);
/// Accepts either a bare array of cameras or {"cameras": [...]}.
std::vector<CameraModel> cameras_from_json(const json& value, std::string_view context);
std::vector<CameraModel> read_cameras(const std::filesystem::path& path);
void write_cameras(const std::filesystem::path& path, const std::vector<CameraModel>& cameras);

/// 64-bit FNV-1a of the compact serialisation, as 16 hex digits.
std::string content_hash(const json& value);

}  // namespace mtrack::io
