#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "partforge/common.hpp"

namespace partforge {

/// Placement of a part window inside a pyramid: the anchor cell of the
/// window's top-left corner.
struct LatentLocation {
    int level = 0;
    int row = 0;
    int col = 0;

    auto operator<=>(const LatentLocation&) const = default;
};

/// Packed (level,row,col) for compact keys and provenance records; -1 marks
/// "no location".
inline std::int32_t pack_location(const LatentLocation& z) {
    if (z.level < 0 || z.level > 127 || z.row < 0 || z.row >= (1 << 12) || z.col < 0 ||
        z.col >= (1 << 12))
        throw Error("pack_location: location exceeds packing bounds");
    return (z.level << 24) | (z.row << 12) | z.col;
}

inline LatentLocation unpack_location(std::int32_t packed) {
    return {packed >> 24, (packed >> 12) & 0xfff, packed & 0xfff};
}

/// Cell extent of a part window, in pyramid grid cells.
struct WindowExtent {
    int rows = 1;
    int cols = 1;

    bool operator==(const WindowExtent&) const = default;
    int cell_count() const { return rows * cols; }
};

/// One pyramid level: a rows x cols grid of d-dimensional cell descriptors,
/// stored row-major as float32 so file round-trips are bit-exact.
struct Level {
    int rows = 0;
    int cols = 0;
    int dim = 0;
    float scale = 1.0f;
    std::vector<float> data;  // rows*cols*dim, row-major, channels innermost

    const float* cell(int r, int c) const {
        return data.data() + (static_cast<std::size_t>(r) * cols + c) * dim;
    }
    float* cell(int r, int c) {
        return data.data() + (static_cast<std::size_t>(r) * cols + c) * dim;
    }
};

/// Multi-scale grid of patch descriptors. The set of in-bounds window
/// anchors across all levels is the latent space of part placements.
struct FeaturePyramid {
    std::vector<Level> levels;
    int scales_per_octave = 3;
    std::string source_id;

    int dim() const { return levels.empty() ? 0 : levels.front().dim; }

    bool in_bounds(const LatentLocation& z, const WindowExtent& w) const {
        if (z.level < 0 || z.level >= static_cast<int>(levels.size())) return false;
        const Level& lv = levels[static_cast<std::size_t>(z.level)];
        return z.row >= 0 && z.col >= 0 && z.row + w.rows <= lv.rows &&
               z.col + w.cols <= lv.cols;
    }

    /// Mirrors the pyramid about the vertical axis by reversing each level's
    /// column order. Correct for descriptors without orientation semantics
    /// (synthetic or externally ingested grids); HOG pyramids of mirrored
    /// images are built from the mirrored raster instead.
    FeaturePyramid mirrored() const {
        FeaturePyramid out;
        out.scales_per_octave = scales_per_octave;
        out.source_id = source_id + "#flip";
        out.levels.reserve(levels.size());
        for (const Level& lv : levels) {
            Level m;
            m.rows = lv.rows;
            m.cols = lv.cols;
            m.dim = lv.dim;
            m.scale = lv.scale;
            m.data.resize(lv.data.size());
            for (int r = 0; r < lv.rows; ++r)
                for (int c = 0; c < lv.cols; ++c)
                    std::memcpy(m.cell(r, lv.cols - 1 - c), lv.cell(r, c),
                                sizeof(float) * static_cast<std::size_t>(lv.dim));
            out.levels.push_back(std::move(m));
        }
        return out;
    }
};

/// All anchors at which `window` fits, in (level,row,col) lexicographic order.
inline std::vector<LatentLocation> valid_locations(const FeaturePyramid& pyr,
                                                   const WindowExtent& window) {
    std::vector<LatentLocation> out;
    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
        const Level& lv = pyr.levels[static_cast<std::size_t>(l)];
        for (int r = 0; r + window.rows <= lv.rows; ++r)
            for (int c = 0; c + window.cols <= lv.cols; ++c)
                out.push_back({l, r, c});
    }
    return out;
}

/// Concatenated descriptor of the window cells in row-major order;
/// length rows*cols*dim.
inline Eigen::VectorXd extract_patch_feature(const FeaturePyramid& pyr,
                                             const LatentLocation& z,
                                             const WindowExtent& window) {
    if (!pyr.in_bounds(z, window))
        throw Error("patch window out of bounds at level " + std::to_string(z.level) +
                    " row " + std::to_string(z.row) + " col " + std::to_string(z.col) +
                    " for window " + std::to_string(window.rows) + "x" +
                    std::to_string(window.cols));
    const Level& lv = pyr.levels[static_cast<std::size_t>(z.level)];
    Eigen::VectorXd f(static_cast<Eigen::Index>(window.cell_count()) * lv.dim);
    Eigen::Index at = 0;
    for (int r = 0; r < window.rows; ++r)
        for (int c = 0; c < window.cols; ++c) {
            const float* cell = lv.cell(z.row + r, z.col + c);
            for (int t = 0; t < lv.dim; ++t) f[at++] = cell[t];
        }
    return f;
}

}  // namespace partforge
