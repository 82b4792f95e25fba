#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "partforge/pyramid.hpp"
#include "partforge/raster.hpp"

namespace partforge {

/// 32 channels per cell: 18 contrast-sensitive orientation sums,
/// 9 contrast-insensitive sums, 4 normalization-energy features, and one
/// all-zero truncation slot.
inline constexpr int kHogChannels = 32;

struct PyramidConfig {
    int cell_size = 8;
    int scales_per_octave = 3;
    /// A level is kept only if its cell grid is at least this large in both
    /// dimensions; level 0 failing this is a sizing error.
    int min_level_cells = 6;
    int max_levels = 0;  // 0 = until the grid shrinks below min_level_cells
};

namespace detail {

inline void hog_cells(const Raster& im, int cell, std::vector<float>& out,
                      int& grid_rows, int& grid_cols) {
    grid_rows = im.rows / cell;
    grid_cols = im.cols / cell;
    const int gr = grid_rows, gc = grid_cols;
    out.assign(static_cast<std::size_t>(gr) * gc * kHogChannels, 0.0f);
    if (gr == 0 || gc == 0) return;

    // orientation snap tables for 9 directions over [0, pi)
    std::array<double, 9> uu{}, vv{};
    for (int o = 0; o < 9; ++o) {
        uu[static_cast<std::size_t>(o)] = std::cos(o * 3.141592653589793 / 9.0);
        vv[static_cast<std::size_t>(o)] = std::sin(o * 3.141592653589793 / 9.0);
    }

    std::vector<double> hist(static_cast<std::size_t>(gr) * gc * 18, 0.0);
    auto hist_at = [&](int r, int c) { return hist.data() + (static_cast<std::size_t>(r) * gc + c) * 18; };

    const int vis_r = gr * cell;
    const int vis_c = gc * cell;
    for (int y = 0; y < vis_r; ++y) {
        int ym = std::max(y - 1, 0), yp = std::min(y + 1, im.rows - 1);
        for (int x = 0; x < vis_c; ++x) {
            int xm = std::max(x - 1, 0), xp = std::min(x + 1, im.cols - 1);
            double dx = im.at(y, xp) - im.at(y, xm);
            double dy = im.at(yp, x) - im.at(ym, x);
            double v = std::sqrt(dx * dx + dy * dy);

            // snap to the best of 18 contrast-sensitive orientations
            double best = 0.0;
            int best_o = 0;
            for (int o = 0; o < 9; ++o) {
                double dot = uu[static_cast<std::size_t>(o)] * dx + vv[static_cast<std::size_t>(o)] * dy;
                if (dot > best) {
                    best = dot;
                    best_o = o;
                } else if (-dot > best) {
                    best = -dot;
                    best_o = o + 9;
                }
            }

            // bilinear vote into the four surrounding cells
            double cr = (y + 0.5) / cell - 0.5;
            double cc = (x + 0.5) / cell - 0.5;
            int r0 = static_cast<int>(std::floor(cr));
            int c0 = static_cast<int>(std::floor(cc));
            double wr = cr - r0, wc = cc - c0;
            const double w[4] = {(1 - wr) * (1 - wc), (1 - wr) * wc, wr * (1 - wc), wr * wc};
            const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
            const int ccx[4] = {c0, c0 + 1, c0, c0 + 1};
            for (int t = 0; t < 4; ++t) {
                if (rr[t] < 0 || rr[t] >= gr || ccx[t] < 0 || ccx[t] >= gc) continue;
                hist_at(rr[t], ccx[t])[best_o] += w[t] * v;
            }
        }
    }

    // per-cell gradient energy over insensitive orientations
    std::vector<double> energy(static_cast<std::size_t>(gr) * gc, 0.0);
    for (int r = 0; r < gr; ++r)
        for (int c = 0; c < gc; ++c) {
            const double* h = hist_at(r, c);
            double e = 0.0;
            for (int o = 0; o < 9; ++o) {
                double s = h[o] + h[o + 9];
                e += s * s;
            }
            energy[static_cast<std::size_t>(r) * gc + c] = e;
        }
    auto eat = [&](int r, int c) {
        r = std::clamp(r, 0, gr - 1);
        c = std::clamp(c, 0, gc - 1);
        return energy[static_cast<std::size_t>(r) * gc + c];
    };

    const double eps = 1e-4;
    const double trunc = 0.2;
    for (int r = 0; r < gr; ++r)
        for (int c = 0; c < gc; ++c) {
            double n[4];
            n[0] = 1.0 / std::sqrt(eat(r, c) + eat(r, c + 1) + eat(r + 1, c) + eat(r + 1, c + 1) + eps);
            n[1] = 1.0 / std::sqrt(eat(r, c) + eat(r, c - 1) + eat(r + 1, c) + eat(r + 1, c - 1) + eps);
            n[2] = 1.0 / std::sqrt(eat(r, c) + eat(r, c + 1) + eat(r - 1, c) + eat(r - 1, c + 1) + eps);
            n[3] = 1.0 / std::sqrt(eat(r, c) + eat(r, c - 1) + eat(r - 1, c) + eat(r - 1, c - 1) + eps);

            const double* h = hist_at(r, c);
            float* f = out.data() + (static_cast<std::size_t>(r) * gc + c) * kHogChannels;
            double t[4] = {0, 0, 0, 0};
            for (int o = 0; o < 18; ++o) {
                double sum = 0.0;
                for (int i = 0; i < 4; ++i) {
                    double hi = std::min(h[o] * n[i], trunc);
                    sum += hi;
                    t[i] += hi;
                }
                f[o] = static_cast<float>(0.5 * sum);
            }
            for (int o = 0; o < 9; ++o) {
                double s = h[o] + h[o + 9];
                double sum = 0.0;
                for (int i = 0; i < 4; ++i) sum += std::min(s * n[i], trunc);
                f[18 + o] = static_cast<float>(0.5 * sum);
            }
            for (int i = 0; i < 4; ++i) f[27 + i] = static_cast<float>(0.2357 * t[i]);
            f[31] = 0.0f;
        }
}

}  // namespace detail

/// Gradient-orientation pyramid. Level l is computed on the input resampled
/// by 2^(-l / scales_per_octave); level 0 is the raster itself.
inline FeaturePyramid build_hog_pyramid(const Raster& im, const PyramidConfig& cfg,
                                        const std::string& source_id = "") {
    if (cfg.cell_size < 1 || cfg.scales_per_octave < 1 || cfg.min_level_cells < 1)
        throw Error("invalid pyramid config");
    const int min_px = cfg.min_level_cells * cfg.cell_size;
    if (im.rows < min_px || im.cols < min_px)
        throw Error("image too small: " + std::to_string(im.rows) + "x" +
                    std::to_string(im.cols) + ", need at least " + std::to_string(min_px) +
                    "px on each side");

    FeaturePyramid pyr;
    pyr.scales_per_octave = cfg.scales_per_octave;
    pyr.source_id = source_id;
    for (int l = 0;; ++l) {
        if (cfg.max_levels > 0 && l >= cfg.max_levels) break;
        double scale = std::pow(2.0, -static_cast<double>(l) / cfg.scales_per_octave);
        Raster scaled = (l == 0) ? im : resample(im, scale);
        if (scaled.rows / cfg.cell_size < cfg.min_level_cells ||
            scaled.cols / cfg.cell_size < cfg.min_level_cells)
            break;
        Level lv;
        lv.scale = static_cast<float>(scale);
        lv.dim = kHogChannels;
        detail::hog_cells(scaled, cfg.cell_size, lv.data, lv.rows, lv.cols);
        pyr.levels.push_back(std::move(lv));
    }
    return pyr;
}

}  // namespace partforge
