#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "partforge/feature_io.hpp"
#include "partforge/model.hpp"
#include "partforge/whitening.hpp"

namespace partforge {

/// On-disk model container: part bank, optional part weights, pooling grid,
/// and provenance (pipeline stage, config/whitening hashes, seed).
struct ModelFile {
    PartBank bank;
    std::optional<PartWeights> weights;
    PoolingGrid grid;
    std::vector<std::string> class_names;
    std::string stage;  // "init", "select" or "joint"
    std::uint64_t config_hash = 0;
    std::uint64_t whitening_hash = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_i32(std::ofstream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_string(std::ofstream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace detail

inline void write_model(const ModelFile& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write("PBMD", 4);
    detail::write_u32(out, 1u);
    detail::write_string(out, m.stage);
    detail::write_u64(out, m.config_hash);
    detail::write_u64(out, m.whitening_hash);
    detail::write_u64(out, m.seed);

    m.bank.validate();
    detail::write_u32(out, static_cast<std::uint32_t>(m.bank.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(m.bank.window().rows));
    detail::write_u32(out, static_cast<std::uint32_t>(m.bank.window().cols));
    detail::write_u32(out, static_cast<std::uint32_t>(m.bank.channel_dim()));
    for (const PartFilter& p : m.bank.parts)
        for (Eigen::Index t = 0; t < p.weights.size(); ++t)
            detail::write_f32(out, static_cast<float>(p.weights[t]));

    if (m.weights) {
        m.weights->validate();
        detail::write_u32(out, static_cast<std::uint32_t>(m.weights->classes()));
        detail::write_u32(out, static_cast<std::uint32_t>(m.weights->parts));
        detail::write_u32(out, static_cast<std::uint32_t>(m.weights->regions));
        for (int y = 0; y < m.weights->classes(); ++y)
            for (Eigen::Index s = 0; s < m.weights->cols(); ++s)
                detail::write_f32(out, static_cast<float>(m.weights->matrix(y, s)));
    } else {
        detail::write_u32(out, 0u);
    }

    detail::write_u32(out, static_cast<std::uint32_t>(m.grid.size()));
    for (const PoolingRect& r : m.grid.regions) {
        detail::write_f32(out, static_cast<float>(r.x0));
        detail::write_f32(out, static_cast<float>(r.y0));
        detail::write_f32(out, static_cast<float>(r.x1));
        detail::write_f32(out, static_cast<float>(r.y1));
        detail::write_i32(out, r.group);
    }

    detail::write_u32(out, static_cast<std::uint32_t>(m.class_names.size()));
    for (const std::string& s : m.class_names) detail::write_string(out, s);
    if (!out) throw Error("short write: " + path);
}

inline ModelFile read_model(const std::string& path) {
    detail::ByteReader rd(path);
    char magic[4];
    rd.read_raw(magic, 4, "magic");
    if (std::memcmp(magic, "PBMD", 4) != 0)
        throw ParseError(path + ": bad magic, expected PBMD", 0);
    std::uint32_t version = rd.read_u32("version");
    if (version != 1u)
        throw ParseError(path + ": unsupported version " + std::to_string(version), 4);

    auto read_string = [&rd]() {
        std::uint32_t len = rd.read_u32("string length");
        std::string s(len, '\0');
        if (len) rd.read_raw(s.data(), len, "string payload");
        return s;
    };

    ModelFile m;
    m.stage = read_string();
    rd.read_raw(&m.config_hash, sizeof(m.config_hash), "config hash");
    rd.read_raw(&m.whitening_hash, sizeof(m.whitening_hash), "whitening hash");
    rd.read_raw(&m.seed, sizeof(m.seed), "seed");

    std::uint32_t parts = rd.read_u32("part count");
    std::uint32_t win_r = rd.read_u32("window rows");
    std::uint32_t win_c = rd.read_u32("window cols");
    std::uint32_t channels = rd.read_u32("channel dim");
    if (parts == 0 || win_r == 0 || win_c == 0 || channels == 0)
        throw ParseError(path + ": degenerate bank header", rd.offset());
    const Eigen::Index d_part = static_cast<Eigen::Index>(win_r) * win_c * channels;
    m.bank.parts.resize(parts);
    for (std::uint32_t j = 0; j < parts; ++j) {
        PartFilter& f = m.bank.parts[j];
        f.window = {static_cast<int>(win_r), static_cast<int>(win_c)};
        f.part_id = static_cast<int>(j);
        f.weights.resize(d_part);
        for (Eigen::Index t = 0; t < d_part; ++t) f.weights[t] = rd.read_f32("filter weight");
    }

    std::uint32_t n = rd.read_u32("class count");
    std::uint32_t u_parts = 0, u_regions = 0;
    if (n > 0) {
        u_parts = rd.read_u32("weight parts");
        u_regions = rd.read_u32("weight regions");
        PartWeights u;
        u.parts = static_cast<int>(u_parts);
        u.regions = static_cast<int>(u_regions);
        u.matrix.resize(n, static_cast<Eigen::Index>(u_parts) * u_regions);
        for (std::uint32_t y = 0; y < n; ++y)
            for (Eigen::Index s = 0; s < u.matrix.cols(); ++s)
                u.matrix(static_cast<Eigen::Index>(y), s) = rd.read_f32("weight entry");
        m.weights = std::move(u);
    }

    std::uint32_t regions = rd.read_u32("region count");
    m.grid.regions.resize(regions);
    for (std::uint32_t t = 0; t < regions; ++t) {
        PoolingRect& r = m.grid.regions[t];
        r.x0 = rd.read_f32("region x0");
        r.y0 = rd.read_f32("region y0");
        r.x1 = rd.read_f32("region x1");
        r.y1 = rd.read_f32("region y1");
        std::int32_t g;
        rd.read_raw(&g, sizeof(g), "region group");
        r.group = g;
    }

    std::uint32_t names = rd.read_u32("class name count");
    for (std::uint32_t t = 0; t < names; ++t) m.class_names.push_back(read_string());
    if (m.weights && m.weights->parts != m.bank.size())
        throw ParseError(path + ": weight matrix does not match the bank", rd.offset());
    return m;
}

// Whitening statistics container: magic "PBWH", u32 version, u32 d,
// f64 shrinkage, d f64 means, d*d f64 covariance entries.

inline void write_whitening(const WhiteningModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write("PBWH", 4);
    detail::write_u32(out, 1u);
    detail::write_u32(out, static_cast<std::uint32_t>(m.dim()));
    double shrink = m.shrinkage();
    out.write(reinterpret_cast<const char*>(&shrink), sizeof(shrink));
    out.write(reinterpret_cast<const char*>(m.mean().data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.dim())));
    out.write(reinterpret_cast<const char*>(m.covariance().data()),
              static_cast<std::streamsize>(sizeof(double) *
                                           static_cast<std::size_t>(m.dim() * m.dim())));
    if (!out) throw Error("short write: " + path);
}

inline WhiteningModel read_whitening(const std::string& path) {
    detail::ByteReader rd(path);
    char magic[4];
    rd.read_raw(magic, 4, "magic");
    if (std::memcmp(magic, "PBWH", 4) != 0)
        throw ParseError(path + ": bad magic, expected PBWH", 0);
    if (rd.read_u32("version") != 1u) throw ParseError(path + ": unsupported version", 4);
    std::uint32_t d = rd.read_u32("dimension");
    double shrink;
    rd.read_raw(&shrink, sizeof(shrink), "shrinkage");
    Eigen::VectorXd mean(d);
    rd.read_raw(mean.data(), sizeof(double) * d, "mean");
    Eigen::MatrixXd cov(d, d);
    rd.read_raw(cov.data(), sizeof(double) * d * d, "covariance");
    return WhiteningModel(std::move(mean), std::move(cov), shrink);
}

/// Part weight matrix as CSV: one row per class, one column per part-region
/// slot.
inline void export_weights_csv(const PartWeights& u, const std::vector<std::string>& class_names,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << "class";
    for (int j = 0; j < u.parts; ++j)
        for (int r = 0; r < u.regions; ++r) out << ",part" << j << "_region" << r;
    out << "\n";
    char buf[64];
    for (int y = 0; y < u.classes(); ++y) {
        out << (y < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(y)]
                                                         : "class_" + std::to_string(y));
        for (Eigen::Index s = 0; s < u.cols(); ++s) {
            std::snprintf(buf, sizeof(buf), "%.17g", u.matrix(y, s));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw Error("short write: " + path);
}

}  // namespace partforge
