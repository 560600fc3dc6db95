#include "mtrack/json_io.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include <Eigen/LU>

#include "mtrack/errors.hpp"

namespace mtrack::io {

namespace {

std::string join(std::string_view context, std::string_view key) {
  if (context.empty()) return std::string(key);
  return std::string(context) + "." + std::string(key);
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

json parse_json_text(const std::string& text, std::string_view source_name) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string(source_name) + ": malformed JSON at " +
                                            line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& value) {
  write_text_file(path, value.dump(1) + "\n");
}

const json& require(const json& obj, std::string_view key, std::string_view context) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::SchemaError, std::string(context.empty() ? "<root>" : context) + ": expected an object");
  }
  const auto it = obj.find(std::string(key));
  if (it == obj.end()) throw Error(ErrorCode::SchemaError, join(context, key) + ": missing field");
  return *it;
}

double require_number(const json& obj, std::string_view key, std::string_view context) {
  const json& v = require(obj, key, context);
  if (!v.is_number()) throw Error(ErrorCode::SchemaError, join(context, key) + ": expected a number");
  return v.get<double>();
}

int require_int(const json& obj, std::string_view key, std::string_view context) {
  const json& v = require(obj, key, context);
  if (!v.is_number_integer()) throw Error(ErrorCode::SchemaError, join(context, key) + ": expected an integer");
  return v.get<int>();
}

bool require_bool(const json& obj, std::string_view key, std::string_view context) {
  const json& v = require(obj, key, context);
  if (!v.is_boolean()) throw Error(ErrorCode::SchemaError, join(context, key) + ": expected a boolean");
  return v.get<bool>();
}

std::vector<double> number_array(const json& value, std::size_t n, std::string_view context) {
  if (!value.is_array() || value.size() != n) {
    throw Error(ErrorCode::SchemaError, std::string(context) + ": expected an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  out.reserve(n);
  for (const auto& e : value) {
    if (!e.is_number()) throw Error(ErrorCode::SchemaError, std::string(context) + ": non-numeric entry");
    out.push_back(e.get<double>());
  }
  return out;
}

Vec2 to_vec2(const json& value, std::string_view context) {
  const auto a = number_array(value, 2, context);
  return {a[0], a[1]};
}

Vec3 to_vec3(const json& value, std::string_view context) {
  const auto a = number_array(value, 3, context);
  return {a[0], a[1], a[2]};
}

Mat3 to_mat3_row_major(const json& value, std::string_view context) {
  const auto a = number_array(value, 9, context);
  Mat3 m;
  m << a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8];
  return m;
}

json from_vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json from_mat3_row_major(const Mat3& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

json camera_to_json(const CameraModel& camera) {
  return json{{"id", camera.id},
              {"K", from_mat3_row_major(camera.calibration)},
              {"R", from_mat3_row_major(camera.pose_global.rotation)},
              {"t", from_vec(camera.pose_global.translation)},
              {"image_size", json::array({camera.image_size.width, camera.image_size.height})}};
}

CameraModel camera_from_json(const json& value, std::string_view context) {
  CameraModel cam;
  cam.id = require_int(value, "id", context);
  cam.calibration = to_mat3_row_major(require(value, "K", context), join(context, "K"));
  cam.pose_global.rotation = to_mat3_row_major(require(value, "R", context), join(context, "R"));
  cam.pose_global.translation = to_vec3(require(value, "t", context), join(context, "t"));
  const auto size = number_array(require(value, "image_size", context), 2, join(context, "image_size"));
  cam.image_size = {static_cast<int>(size[0]), static_cast<int>(size[1])};
  const Mat3& R = cam.pose_global.rotation;
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || R.determinant() < 0) {
    throw Error(ErrorCode::SchemaError, join(context, "R") + ": not a proper rotation matrix");
  }
  const Mat3& K = cam.calibration;
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(0, 0) <= 0 || K(1, 1) <= 0 || K(2, 2) <= 0) {
    throw Error(ErrorCode::SchemaError, join(context, "K") + ": expected upper-triangular K with positive diagonal");
  }
  cam.calibration /= K(2, 2);
  return cam;
}

json cameras_to_json(const std::vector<CameraModel>& cameras) {
  json arr = json::array();
  for (const auto& c : cameras) arr.push_back(camera_to_json(c));
  return json{{"cameras", arr}};
}

std::vector<CameraModel> cameras_from_json(const json& value, std::string_view context) {
  const json* arr = &value;
  std::string ctx(context);
  if (value.is_object()) {
    arr = &require(value, "cameras", context);
    ctx = join(context, "cameras");
  }
  if (!arr->is_array()) throw Error(ErrorCode::SchemaError, ctx + ": expected an array of cameras");
  std::vector<CameraModel> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    out.push_back(camera_from_json((*arr)[i], ctx + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<CameraModel> read_cameras(const std::filesystem::path& path) {
  return cameras_from_json(read_json_file(path), path.filename().string());
}

void write_cameras(const std::filesystem::path& path, const std::vector<CameraModel>& cameras) {
  write_json_file(path, cameras_to_json(cameras));
}

std::string content_hash(const json& value) {
  const std::string s = value.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace mtrack::io
