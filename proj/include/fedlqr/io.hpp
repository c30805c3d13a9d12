#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "fedlqr/ensemble.hpp"
#include "fedlqr/errors.hpp"
#include "fedlqr/federated.hpp"

namespace fedlqr::io {

using nlohmann::json;

// Locale-independent float text with 17 significant digits; "inf", "-inf"
// and "nan" for non-finite values.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                                 std::chars_format::general, 17);
  if (ec != std::errc{}) throw Error("format_double: conversion failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw InvalidInput("parse_double: not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes via a temporary sibling and renames into place.
inline void write_file_atomic(const std::filesystem::path& p, std::string_view content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::filesystem::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

// ---- matrices -------------------------------------------------------------

inline json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Accepts [[...], ...], {"diag": [...]} or {"scaled_identity": s}; the last
// form needs the dimension from context.
inline MatrixXd matrix_from_json(const json& j, const std::string& what, Eigen::Index dim = -1) {
  if (j.is_object()) {
    if (j.size() != 1) throw InvalidInput(what + ": matrix object must have exactly one key");
    if (j.contains("diag")) {
      const json& d = j.at("diag");
      if (!d.is_array() || d.empty()) throw InvalidInput(what + ": diag must be a nonempty array");
      VectorXd v(static_cast<Eigen::Index>(d.size()));
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!d[i].is_number()) throw InvalidInput(what + ": diag entries must be numbers");
        v(static_cast<Eigen::Index>(i)) = d[i].get<double>();
      }
      return v.asDiagonal();
    }
    if (j.contains("scaled_identity")) {
      if (dim < 1) throw InvalidInput(what + ": scaled_identity needs a known dimension");
      if (!j.at("scaled_identity").is_number()) {
        throw InvalidInput(what + ": scaled_identity must be a number");
      }
      return j.at("scaled_identity").get<double>() * MatrixXd::Identity(dim, dim);
    }
    throw InvalidInput(what + ": unknown matrix form '" + j.begin().key() + "'");
  }
  if (!j.is_array() || j.empty()) throw InvalidInput(what + ": expected a matrix");
  const std::size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty()) throw InvalidInput(what + ": rows must be arrays");
  const std::size_t cols = j[0].size();
  MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw InvalidInput(what + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw InvalidInput(what + ": entries must be numbers");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
    }
  }
  if (!m.allFinite()) throw InvalidInput(what + ": non-finite entries");
  return m;
}

// ---- ensembles -------------------------------------------------------------

inline json ensemble_to_json(const Ensemble& e) {
  json systems = json::array();
  for (const auto& s : e.systems) {
    systems.push_back({{"a", matrix_to_json(s.a)}, {"b", matrix_to_json(s.b)}});
  }
  return {{"nominal_index", e.nominal_index}, {"systems", std::move(systems)}};
}

inline Ensemble ensemble_from_json(const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k != "nominal_index" && k != "systems") throw InvalidInput("ensemble: unknown key '" + k + "'");
  }
  Ensemble e;
  e.nominal_index = j.value("nominal_index", std::size_t{0});
  for (const auto& s : j.at("systems")) {
    LinearSystem sys{matrix_from_json(s.at("a"), "ensemble.a"), matrix_from_json(s.at("b"), "ensemble.b")};
    sys.validate();
    e.systems.push_back(std::move(sys));
  }
  if (e.systems.empty() || e.nominal_index >= e.systems.size()) {
    throw InvalidInput("ensemble: empty or bad nominal_index");
  }
  return e;
}

// ---- traces ---------------------------------------------------------------

inline constexpr std::string_view kTraceHeader =
    "round,agent,cost_gap,normalized_gap,spectral_radius,stab_ok,diverged_estimates,local_failure\n";

// One row per (round, agent); agents are 1-based as in the plots.
inline std::string trace_csv(const FedResult& r) {
  std::string out(kTraceHeader);
  for (const auto& tr : r.traces) {
    for (std::size_t i = 0; i < tr.per_agent_cost_gap.size(); ++i) {
      out += std::to_string(tr.round);
      out += ',';
      out += std::to_string(i + 1);
      out += ',';
      out += format_double(tr.per_agent_cost_gap[i]);
      out += ',';
      out += format_double(tr.per_agent_normalized_gap[i]);
      out += ',';
      out += format_double(tr.per_agent_spectral_radius[i]);
      out += ',';
      out += tr.stab_set_ok ? '1' : '0';
      out += ',';
      out += std::to_string(tr.per_agent_diverged[i]);
      out += ',';
      out += tr.per_agent_local_failure[i] ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

// Minimal CSV reader for files this library writes (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw InvalidInput("csv: missing column '" + std::string(name) + "'");
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw InvalidInput("csv: empty file");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw InvalidInput("csv: row width mismatch");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace fedlqr::io
