// Audio ingestion and export: 16-bit PCM mono WAV, missing-sample masks,
// evaluation metrics, CSV writing.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/linalg.hpp"

namespace gtfnmf {

struct AudioBuffer {
    VectorXd samples;          // in [-1, 1]
    double sample_rate = 16000.0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] |
                                      (static_cast<std::uint16_t>(p[1]) << 8));
}

inline void write_u32(std::ofstream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff),
                       static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff),
                       static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void write_u16(std::ofstream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff),
                       static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

} // namespace detail

// 16-bit PCM mono RIFF/WAVE reader; anything else is rejected with the
// offending chunk named. Samples scale by 1/32768.
inline AudioBuffer read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("read_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0)
        throw FormatError("read_wav: missing RIFF header in " + path);
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("read_wav: RIFF form is not WAVE in " + path);

    AudioBuffer buf;
    bool have_fmt = false;
    std::size_t pos = 12;
    std::uint16_t channels = 0, bits = 0;
    while (pos + 8 <= bytes.size()) {
        const std::string id(reinterpret_cast<const char*>(&bytes[pos]), 4);
        const std::uint32_t size = detail::read_u32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size())
            throw FormatError("read_wav: chunk '" + id + "' overruns file");
        if (id == "fmt ") {
            if (size < 16)
                throw FormatError("read_wav: short 'fmt ' chunk");
            const std::uint16_t format = detail::read_u16(&bytes[body]);
            channels = detail::read_u16(&bytes[body + 2]);
            buf.sample_rate =
                static_cast<double>(detail::read_u32(&bytes[body + 4]));
            bits = detail::read_u16(&bytes[body + 14]);
            if (format != 1)
                throw FormatError(
                    "read_wav: 'fmt ' declares non-PCM encoding");
            if (channels != 1)
                throw FormatError(
                    "read_wav: 'fmt ' declares " + std::to_string(channels) +
                    " channels; only mono is supported");
            if (bits != 16)
                throw FormatError("read_wav: 'fmt ' declares " +
                                  std::to_string(bits) +
                                  "-bit samples; only 16-bit is supported");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt)
                throw FormatError("read_wav: 'data' chunk before 'fmt '");
            const std::size_t count = size / 2;
            buf.samples.resize(static_cast<Eigen::Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                const std::int16_t v = static_cast<std::int16_t>(
                    detail::read_u16(&bytes[body + 2 * i]));
                buf.samples(static_cast<Eigen::Index>(i)) = v / 32768.0;
            }
            return buf;
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    throw FormatError("read_wav: no 'data' chunk in " + path);
}

// Write 16-bit PCM mono; round-to-nearest with clamping.
inline void write_wav(const std::string& path, const AudioBuffer& buf) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("write_wav: cannot open " + path);
    const std::uint32_t n = static_cast<std::uint32_t>(buf.samples.size());
    const std::uint32_t rate = static_cast<std::uint32_t>(buf.sample_rate);
    os.write("RIFF", 4);
    detail::write_u32(os, 36 + 2 * n);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::write_u32(os, 16);
    detail::write_u16(os, 1); // PCM
    detail::write_u16(os, 1); // mono
    detail::write_u32(os, rate);
    detail::write_u32(os, rate * 2);
    detail::write_u16(os, 2);
    detail::write_u16(os, 16);
    os.write("data", 4);
    detail::write_u32(os, 2 * n);
    for (Eigen::Index i = 0; i < buf.samples.size(); ++i) {
        double v = std::round(buf.samples(i) * 32768.0);
        v = std::min(std::max(v, -32768.0), 32767.0);
        detail::write_u16(os, static_cast<std::uint16_t>(
                                  static_cast<std::int16_t>(v)));
    }
}

// Per-sample observation mask, true = observed.
struct MissingMask {
    std::vector<bool> observed;

    Eigen::Index missing_count() const {
        Eigen::Index c = 0;
        for (bool o : observed)
            if (!o) ++c;
        return c;
    }
};

inline MissingMask full_mask(Eigen::Index t) {
    return {std::vector<bool>(static_cast<std::size_t>(t), true)};
}

// Mask file: CSV rows "start_sample,end_sample" of missing ranges,
// start inclusive, end exclusive.
inline MissingMask read_mask(const std::string& path, Eigen::Index t) {
    MissingMask mask = full_mask(t);
    std::ifstream is(path);
    if (!is) throw FormatError("read_mask: cannot open " + path);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long start = 0, end = 0;
        char comma = 0;
        if (!(ss >> start >> comma >> end) || comma != ',')
            throw FormatError("read_mask: bad row '" + line + "'");
        for (long k = std::max(0L, start);
             k < std::min(end, static_cast<long>(t)); ++k)
            mask.observed[static_cast<std::size_t>(k)] = false;
    }
    return mask;
}

struct Metrics {
    double snr_db = 0.0; // +inf sentinel on exact match
    double rmse = 0.0;
};

// SNR = 10 log10(sum clean^2 / sum (clean - est)^2), RMSE over all samples.
inline Metrics metrics(const VectorXd& clean, const VectorXd& estimate) {
    if (clean.size() != estimate.size())
        throw ConfigError("metrics: length mismatch");
    const double energy = clean.squaredNorm();
    if (energy == 0.0)
        throw DegenerateInputError("metrics: zero-energy reference");
    const double err = (clean - estimate).squaredNorm();
    Metrics m;
    m.rmse = std::sqrt(err / static_cast<double>(clean.size()));
    m.snr_db = err == 0.0 ? std::numeric_limits<double>::infinity()
                          : 10.0 * std::log10(energy / err);
    return m;
}

// Restricted to the samples where selected[k] is true.
inline Metrics metrics_where(const VectorXd& clean, const VectorXd& estimate,
                             const std::vector<bool>& selected) {
    std::vector<double> c, e;
    for (Eigen::Index k = 0; k < clean.size(); ++k) {
        if (selected[static_cast<std::size_t>(k)]) {
            c.push_back(clean(k));
            e.push_back(estimate(k));
        }
    }
    VectorXd cv = Eigen::Map<VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    VectorXd ev = Eigen::Map<VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
    return metrics(cv, ev);
}

// UTF-8 CSV with a header row; one time step per row, 15 significant
// digits so a round trip recovers values well below 1e-9.
inline void export_csv(const std::string& path,
                       const std::vector<std::string>& columns,
                       const MatrixXd& rows) {
    if (static_cast<Eigen::Index>(columns.size()) != rows.cols())
        throw ConfigError("export_csv: header/column mismatch");
    std::ofstream os(path);
    if (!os) throw FormatError("export_csv: cannot open " + path);
    for (std::size_t i = 0; i < columns.size(); ++i)
        os << (i ? "," : "") << columns[i];
    os << "\n";
    char buf[64];
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.15g", rows(r, c));
            os << (c ? "," : "") << buf;
        }
        os << "\n";
    }
}

inline MatrixXd import_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("import_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("import_csv: empty file " + path);
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return {};
    MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                rows[r][c];
    return out;
}

} // namespace gtfnmf
