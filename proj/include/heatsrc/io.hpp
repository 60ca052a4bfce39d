#ifndef HEATSRC_IO_HPP
#define HEATSRC_IO_HPP

// File formats: samples.csv, grid.csv + sidecar meta JSON.

#include <Eigen/Dense>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "heatsrc/field.hpp"
#include "json.hpp"

namespace heatsrc {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  IoError(const fs::path& path, const std::string& what) : std::runtime_error(path.string() + ": " + what) {}
};

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const fs::path& path) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError(path, "cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::ofstream open_for_write(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path, "cannot open for writing");
  return f;
}

inline void check_written(std::ofstream& f, const fs::path& path) {
  f.flush();
  if (!f) throw IoError(path, "write failed");
}

inline void write_samples(const Eigen::MatrixXd& samples, const std::vector<std::string>& labels, const fs::path& path) {
  if (static_cast<Eigen::Index>(labels.size()) != samples.cols()) {
    throw std::invalid_argument("write_samples: label count does not match columns");
  }
  auto f = open_for_write(path);
  for (std::size_t c = 0; c < labels.size(); ++c) f << (c ? "," : "") << labels[c];
  f << '\n';
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < samples.cols(); ++c) f << (c ? "," : "") << format_double(samples(r, c));
    f << '\n';
  }
  check_written(f, path);
}

struct SamplesFile {
  std::vector<std::string> labels;
  Eigen::MatrixXd samples;
};

inline SamplesFile read_samples(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path, "cannot open for reading");
  SamplesFile out;
  std::string line;
  if (!std::getline(f, line)) throw IoError(path, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto tok : split_csv_line(line)) out.labels.emplace_back(tok);
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    const auto toks = split_csv_line(line);
    if (toks.size() != out.labels.size()) {
      throw IoError(path, "row " + std::to_string(rows + 1) + " has " + std::to_string(toks.size()) +
                              " fields, expected " + std::to_string(out.labels.size()));
    }
    for (auto t : toks) values.push_back(parse_double(t, path));
    ++rows;
  }
  out.samples.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out.labels.size()));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < out.labels.size(); ++c) {
      out.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * out.labels.size() + c];
    }
  }
  return out;
}

inline nlohmann::json grid_meta(const FieldGrid& g) {
  return {{"region", {{"xmin", g.region.xmin}, {"xmax", g.region.xmax}, {"ymin", g.region.ymin}, {"ymax", g.region.ymax}}},
          {"nx", g.nx},
          {"ny", g.ny},
          {"wall", to_string(g.wall)},
          {"layout", "row-major, rows ascend in y, cell centers"}};
}

/// Writes `<stem>.csv` (ny rows of nx values) and `<stem>.meta.json`.
inline void write_grid(const FieldGrid& g, const fs::path& csv_path, const nlohmann::json& extra_meta = {}) {
  {
    auto f = open_for_write(csv_path);
    for (std::size_t iy = 0; iy < g.ny; ++iy) {
      for (std::size_t ix = 0; ix < g.nx; ++ix) f << (ix ? "," : "") << format_double(g.at(ix, iy));
      f << '\n';
    }
    check_written(f, csv_path);
  }
  auto meta = grid_meta(g);
  if (extra_meta.is_object()) {
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
  }
  fs::path meta_path = csv_path;
  meta_path.replace_extension(".meta.json");
  auto f = open_for_write(meta_path);
  f << meta.dump(2) << '\n';
  check_written(f, meta_path);
}

inline FieldGrid read_grid(const fs::path& csv_path) {
  fs::path meta_path = csv_path;
  meta_path.replace_extension(".meta.json");
  std::ifstream mf(meta_path);
  if (!mf) throw IoError(meta_path, "cannot open for reading");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path, e.what());
  }
  FieldGrid g;
  const auto& r = meta.at("region");
  g.region = {r.at("xmin"), r.at("xmax"), r.at("ymin"), r.at("ymax")};
  g.nx = meta.at("nx");
  g.ny = meta.at("ny");
  g.wall = meta.at("wall") == "adiabatic" ? Wall::AdiabaticY0 : Wall::Unbounded;
  std::ifstream f(csv_path);
  if (!f) throw IoError(csv_path, "cannot open for reading");
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    for (auto t : split_csv_line(line)) g.values.push_back(parse_double(t, csv_path));
  }
  if (g.values.size() != g.nx * g.ny) throw IoError(csv_path, "value count does not match nx * ny");
  return g;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path, "cannot open for reading");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("invalid JSON: ") + e.what());
  }
}

inline void write_json(const nlohmann::json& j, const fs::path& path) {
  auto f = open_for_write(path);
  f << j.dump(2) << '\n';
  check_written(f, path);
}

}  // namespace heatsrc

#endif  // HEATSRC_IO_HPP
