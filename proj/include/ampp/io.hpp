// Copyright 2025 the ampp authors
// On-disk formats shared by the tools: the [T x F] f32 matrix container
// used for spectrograms and feature sets, id sidecars, and CSV rows.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ampp/common.hpp"
#include "ampp/matrix.hpp"

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace ampp {

// Layout: u32 rows, u32 cols (little-endian), then rows*cols f32,
// row-major. Time-major when the matrix is a spectrogram.
inline void write_matrix_f32(const std::string &path, const Matrix<float> &m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "write_matrix_f32: cannot open " + path);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    f.write(reinterpret_cast<const char *>(dims), 8);
    f.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
    require(f.good(), "write_matrix_f32: short write to " + path);
}

inline Matrix<float> read_matrix_f32(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "read_matrix_f32: cannot open " + path);
    std::uint32_t dims[2] = {0, 0};
    f.read(reinterpret_cast<char *>(dims), 8);
    require(f.gcount() == 8, "read_matrix_f32: truncated header in " + path);
    Matrix<float> m(static_cast<index_t>(dims[0]), static_cast<index_t>(dims[1]));
    const auto nbytes = static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size()));
    f.read(reinterpret_cast<char *>(m.data()), nbytes);
    require(f.gcount() == nbytes, "read_matrix_f32: truncated payload in " + path);
    return m;
}

// One clip id per line, UTF-8; order matches the feature matrix rows.
inline void write_id_list(const std::string &path, const std::vector<std::string> &ids) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_id_list: cannot open " + path);
    for (const std::string &id : ids) f << id << '\n';
    require(f.good(), "write_id_list: short write to " + path);
}

inline std::vector<std::string> read_id_list(const std::string &path) {
    std::ifstream f(path);
    require(f.good(), "read_id_list: cannot open " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

// Plain comma split; none of the formats here use quoting.
inline std::vector<std::string> split_csv_line(const std::string &line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string &path, bool skip_header) {
    std::ifstream f(path);
    require(f.good(), "read_csv: cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first && skip_header) {
            first = false;
            continue;
        }
        first = false;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

} // namespace ampp
