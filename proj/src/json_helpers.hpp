#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "meshforge/error.hpp"
#include "meshforge/types.hpp"

namespace meshforge::detail {

using nlohmann::json;

inline json to_json_rows(const Eigen::Ref<const MatX>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Derived>
json to_json_points(const Eigen::MatrixBase<Derived>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json_vec(const Eigen::Ref<const VecX>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline VecX vec_from_json(const json& a, const char* what) {
  if (!a.is_array()) throw IoError(std::string("expected array for ") + what);
  VecX v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<Scalar>();
  return v;
}

template <typename Mat>
Mat matrix_from_json(const json& a, Eigen::Index expect_cols, const char* what) {
  if (!a.is_array()) throw IoError(std::string("expected array of rows for ") + what);
  Mat m(static_cast<Eigen::Index>(a.size()), expect_cols);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const json& row = a[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != expect_cols)
      throw IoError(std::string(what) + ": row " + std::to_string(i) + " does not have " +
                    std::to_string(expect_cols) + " entries");
    for (Eigen::Index j = 0; j < expect_cols; ++j)
      m(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)].get<typename Mat::Scalar>();
  }
  return m;
}

inline json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("parse error in " + path.string() + " at byte " + std::to_string(e.byte) +
                  ": " + e.what());
  }
}

inline json parse_string(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("parse error in " + origin + " at byte " + std::to_string(e.byte) + ": " +
                  e.what());
  }
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace meshforge::detail
