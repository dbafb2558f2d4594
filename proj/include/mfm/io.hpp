#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfm/errors.hpp"
#include "mfm/types.hpp"

namespace mfm {
namespace io {

// Binary tensor format: magic "MFM1", u32 version, u64 T, u64 p1, u64 p2,
// u32 dtype (0 = little-endian float64), then T*p1*p2 doubles in
// t-major/row-major order. All header integers little-endian.

inline constexpr std::array<char, 4> kMagic = {'M', 'F', 'M', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeF64 = 0;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T)); // host assumed little-endian (x86/arm64)
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw invalid_data_error("tensor file: truncated header/payload");
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

/// 17 significant digits: lossless round-trip for IEEE doubles.
inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace detail

inline void write_tensor_binary(const std::string& path, const MatrixSeries& series) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw invalid_data_error("cannot open for writing: " + path);
    os.write(kMagic.data(), 4);
    detail::write_le<std::uint32_t>(os, kVersion);
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(series.T()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(series.p1()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(series.p2()));
    detail::write_le<std::uint32_t>(os, kDtypeF64);
    for (const double v : series.to_flat()) detail::write_le<double>(os, v);
    if (!os) throw invalid_data_error("write failed: " + path);
}

inline MatrixSeries read_tensor_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw invalid_data_error("cannot open: " + path);
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != kMagic) throw invalid_data_error("tensor file: bad magic: " + path);
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kVersion) throw invalid_data_error("tensor file: unsupported version");
    const auto T = static_cast<Eigen::Index>(detail::read_le<std::uint64_t>(is));
    const auto p1 = static_cast<Eigen::Index>(detail::read_le<std::uint64_t>(is));
    const auto p2 = static_cast<Eigen::Index>(detail::read_le<std::uint64_t>(is));
    const auto dtype = detail::read_le<std::uint32_t>(is);
    if (dtype != kDtypeF64) throw invalid_data_error("tensor file: unsupported dtype code");
    if (T < 1 || p1 < 1 || p2 < 1) throw invalid_data_error("tensor file: bad dimensions");
    std::vector<double> flat(static_cast<std::size_t>(T * p1 * p2));
    for (double& v : flat) v = detail::read_le<double>(is);
    char extra;
    if (is.read(&extra, 1)) throw invalid_data_error("tensor file: trailing bytes");
    return MatrixSeries::from_flat(flat, T, p1, p2);
}

/// Long CSV: header "t,i,j,value", 1-based indices, each (t,i,j) exactly once.
inline void write_tensor_csv(const std::string& path, const MatrixSeries& series) {
    std::ofstream os(path);
    if (!os) throw invalid_data_error("cannot open for writing: " + path);
    os << "t,i,j,value\n";
    for (Eigen::Index t = 0; t < series.T(); ++t)
        for (Eigen::Index i = 0; i < series.p1(); ++i)
            for (Eigen::Index j = 0; j < series.p2(); ++j)
                os << (t + 1) << ',' << (i + 1) << ',' << (j + 1) << ','
                   << detail::format_double(series[t](i, j)) << '\n';
    if (!os) throw invalid_data_error("write failed: " + path);
}

inline MatrixSeries read_tensor_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw invalid_data_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "t,i,j,value")
        throw invalid_data_error("tensor csv: missing 't,i,j,value' header: " + path);
    struct Entry {
        long t, i, j;
        double v;
    };
    std::vector<Entry> entries;
    long maxT = 0, maxI = 0, maxJ = 0;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        Entry e{};
        char* end = nullptr;
        const char* s = line.c_str();
        e.t = std::strtol(s, &end, 10);
        if (*end != ',') throw invalid_data_error("tensor csv: parse error line " + std::to_string(lineno));
        e.i = std::strtol(end + 1, &end, 10);
        if (*end != ',') throw invalid_data_error("tensor csv: parse error line " + std::to_string(lineno));
        e.j = std::strtol(end + 1, &end, 10);
        if (*end != ',') throw invalid_data_error("tensor csv: parse error line " + std::to_string(lineno));
        e.v = std::strtod(end + 1, &end);
        if (*end != '\0' && *end != '\r')
            throw invalid_data_error("tensor csv: parse error line " + std::to_string(lineno));
        if (e.t < 1 || e.i < 1 || e.j < 1)
            throw invalid_data_error("tensor csv: indices must be 1-based positive");
        maxT = std::max(maxT, e.t);
        maxI = std::max(maxI, e.i);
        maxJ = std::max(maxJ, e.j);
        entries.push_back(e);
    }
    if (entries.empty()) throw invalid_data_error("tensor csv: no data rows");
    const std::size_t total = static_cast<std::size_t>(maxT) * static_cast<std::size_t>(maxI) *
                              static_cast<std::size_t>(maxJ);
    if (entries.size() != total)
        throw invalid_data_error("tensor csv: must cover every (t,i,j) exactly once");
    std::vector<double> flat(total);
    std::vector<bool> seen(total, false);
    for (const Entry& e : entries) {
        const std::size_t idx = (static_cast<std::size_t>(e.t - 1) * static_cast<std::size_t>(maxI) +
                                 static_cast<std::size_t>(e.i - 1)) *
                                    static_cast<std::size_t>(maxJ) +
                                static_cast<std::size_t>(e.j - 1);
        if (seen[idx]) throw invalid_data_error("tensor csv: duplicate (t,i,j) entry");
        seen[idx] = true;
        flat[idx] = e.v;
    }
    return MatrixSeries::from_flat(flat, maxT, maxI, maxJ);
}

/// Plain comma-separated matrix, one row per line, 17 significant digits.
inline void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream os(path);
    if (!os) throw invalid_data_error("cannot open for writing: " + path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << detail::format_double(m(i, j));
        }
        os << '\n';
    }
    if (!os) throw invalid_data_error("write failed: " + path);
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw invalid_data_error("cannot open: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw invalid_data_error("matrix csv: ragged rows: " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw invalid_data_error("matrix csv: empty file: " + path);
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

/// Factor sequence as a (T*k1) x k2 stack of blocks.
inline void write_factors_csv(const std::string& path, const std::vector<Matrix>& F) {
    if (F.empty()) throw invalid_argument_error("write_factors_csv: empty sequence");
    Matrix stacked(static_cast<Eigen::Index>(F.size()) * F.front().rows(), F.front().cols());
    for (std::size_t t = 0; t < F.size(); ++t)
        stacked.block(static_cast<Eigen::Index>(t) * F.front().rows(), 0, F.front().rows(),
                      F.front().cols()) = F[t];
    write_matrix_csv(path, stacked);
}

inline std::vector<Matrix> read_factors_csv(const std::string& path, Eigen::Index k1) {
    const Matrix stacked = read_matrix_csv(path);
    if (k1 < 1 || stacked.rows() % k1 != 0)
        throw invalid_data_error("read_factors_csv: row count not divisible by k1");
    std::vector<Matrix> F;
    for (Eigen::Index t = 0; t < stacked.rows() / k1; ++t)
        F.push_back(stacked.block(t * k1, 0, k1, stacked.cols()));
    return F;
}

} // namespace io
} // namespace mfm
