#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "partforge/pyramid.hpp"

namespace partforge {

// Feature grid container: magic "PBFP", u32 version=1, u32 level count, then
// per level u32 rows, u32 cols, u32 d, f32 scale followed by rows*cols*d
// little-endian f32 values in row-major order.

namespace detail {

class ByteReader {
  public:
    explicit ByteReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw Error("cannot open: " + path);
    }

    std::size_t offset() const { return offset_; }

    void read_raw(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw ParseError(path_ + ": truncated payload while reading " + std::string(what),
                             offset_);
        offset_ += n;
    }

    std::uint32_t read_u32(const char* what) {
        std::uint32_t v;
        read_raw(&v, sizeof(v), what);
        return v;
    }

    float read_f32(const char* what) {
        float v;
        read_raw(&v, sizeof(v), what);
        return v;
    }

  private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

inline void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f32(std::ofstream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

}  // namespace detail

inline void write_feature_grid(const FeaturePyramid& pyr, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out.write("PBFP", 4);
    detail::write_u32(out, 1u);
    detail::write_u32(out, static_cast<std::uint32_t>(pyr.levels.size()));
    for (const Level& lv : pyr.levels) {
        detail::write_u32(out, static_cast<std::uint32_t>(lv.rows));
        detail::write_u32(out, static_cast<std::uint32_t>(lv.cols));
        detail::write_u32(out, static_cast<std::uint32_t>(lv.dim));
        detail::write_f32(out, lv.scale);
        out.write(reinterpret_cast<const char*>(lv.data.data()),
                  static_cast<std::streamsize>(lv.data.size() * sizeof(float)));
    }
    if (!out) throw Error("short write: " + path);
}

inline FeaturePyramid ingest_external_features(const std::string& path,
                                               const std::string& source_id = "") {
    detail::ByteReader rd(path);
    char magic[4];
    rd.read_raw(magic, 4, "magic");
    if (std::memcmp(magic, "PBFP", 4) != 0)
        throw ParseError(path + ": bad magic, expected PBFP", 0);
    std::uint32_t version = rd.read_u32("version");
    if (version != 1u)
        throw ParseError(path + ": unsupported version " + std::to_string(version), 4);
    std::uint32_t n_levels = rd.read_u32("level count");

    FeaturePyramid pyr;
    pyr.source_id = source_id;
    pyr.levels.reserve(n_levels);
    int dim = -1;
    for (std::uint32_t l = 0; l < n_levels; ++l) {
        std::size_t header_at = rd.offset();
        Level lv;
        lv.rows = static_cast<int>(rd.read_u32("rows"));
        lv.cols = static_cast<int>(rd.read_u32("cols"));
        lv.dim = static_cast<int>(rd.read_u32("descriptor dimension"));
        lv.scale = rd.read_f32("scale");
        if (lv.rows <= 0 || lv.cols <= 0 || lv.dim <= 0)
            throw ParseError(path + ": degenerate grid in level " + std::to_string(l),
                             header_at);
        if (dim < 0)
            dim = lv.dim;
        else if (lv.dim != dim)
            throw ParseError(path + ": descriptor dimension mismatch in level " +
                                 std::to_string(l) + " (" + std::to_string(lv.dim) +
                                 " vs " + std::to_string(dim) + ")",
                             header_at);
        lv.data.resize(static_cast<std::size_t>(lv.rows) * lv.cols * lv.dim);
        rd.read_raw(lv.data.data(), lv.data.size() * sizeof(float), "level payload");
        pyr.levels.push_back(std::move(lv));
    }
    return pyr;
}

}  // namespace partforge
