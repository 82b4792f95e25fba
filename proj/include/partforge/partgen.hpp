#pragma once

#include <set>
#include <string>
#include <vector>

#include "partforge/model.hpp"
#include "partforge/whitening.hpp"

namespace partforge {

struct PartPoolConfig {
    int pool_size = 1;
    WindowExtent window;
    double keep_fraction = 0.5;
    std::uint64_t rng_seed = 0;
    int max_retries = 10;

    void validate() const {
        if (pool_size < 1) throw Error("PartPoolConfig: pool_size must be >= 1");
        if (!(keep_fraction > 0) || keep_fraction > 1)
            throw Error("PartPoolConfig: keep_fraction must be in (0,1]");
    }
};

/// Where a pooled filter came from; the filter equals whiten(psi(x,z)) and is
/// re-derivable from this record.
struct PartProvenance {
    int image_index = 0;
    std::string source_id;
    LatentLocation location;
};

struct PartPoolResult {
    PartBank bank;
    std::vector<PartProvenance> provenance;
};

/// Fits window-level whitening statistics from random window features drawn
/// uniformly over images, then uniformly over anchors.
inline WhiteningModel fit_window_whitening(const Dataset& dataset, const WindowExtent& window,
                                           std::size_t max_samples, double shrinkage,
                                           std::uint64_t seed) {
    std::vector<std::vector<LatentLocation>> anchors(dataset.size());
    std::vector<std::size_t> usable;
    std::size_t total = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        anchors[i] = valid_locations(dataset[i].pyramid, window);
        if (!anchors[i].empty()) {
            usable.push_back(i);
            total += anchors[i].size();
        }
    }
    if (usable.empty()) throw Error("fit_window_whitening: no image admits the window");

    std::vector<Eigen::VectorXd> samples;
    Rng rng(seed);
    if (total <= max_samples) {
        for (std::size_t i : usable)
            for (const LatentLocation& z : anchors[i])
                samples.push_back(extract_patch_feature(dataset[i].pyramid, z, window));
    } else {
        samples.reserve(max_samples);
        for (std::size_t s = 0; s < max_samples; ++s) {
            std::size_t i = usable[rng.uniform_index(usable.size())];
            const auto& locs = anchors[i];
            samples.push_back(extract_patch_feature(
                dataset[i].pyramid, locs[rng.uniform_index(locs.size())], window));
        }
    }
    if (samples.size() < 2) throw Error("fit_window_whitening: not enough window samples");
    return fit_whitening(samples, shrinkage);
}

namespace detail {

struct RetainedLocations {
    std::vector<std::vector<LatentLocation>> per_image;
    std::vector<std::size_t> eligible;  // images with at least one retained anchor
};

inline RetainedLocations retained_locations(const Dataset& dataset,
                                            const WhiteningModel& whitening,
                                            const PartPoolConfig& cfg) {
    RetainedLocations out;
    out.per_image.resize(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        if (valid_locations(dataset[i].pyramid, cfg.window).empty()) return;
        out.per_image[i] =
            discriminability_filter(dataset[i].pyramid, whitening, cfg.window,
                                    cfg.keep_fraction);
    });
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!out.per_image[i].empty()) out.eligible.push_back(i);
    if (out.eligible.empty())
        throw Error("part sampling: no retained locations in any training image");
    return out;
}

inline PartFilter make_filter(const Dataset& dataset, const WhiteningModel& whitening,
                              const WindowExtent& window, std::size_t image,
                              const LatentLocation& z, int part_id) {
    Eigen::VectorXd psi = extract_patch_feature(dataset[image].pyramid, z, window);
    PartFilter f;
    f.weights = whitening.whiten(psi);
    f.window = window;
    f.part_id = part_id;
    return f;
}

}  // namespace detail

/// Draws one part: a uniform image regardless of its label, a uniform
/// retained location, then the whitened window feature as the filter.
inline PartFilter sample_random_part(const Dataset& dataset, const WhiteningModel& whitening,
                                     const PartPoolConfig& cfg, Rng& rng,
                                     PartProvenance* provenance = nullptr) {
    cfg.validate();
    detail::RetainedLocations ret = detail::retained_locations(dataset, whitening, cfg);
    std::size_t img = ret.eligible[rng.uniform_index(ret.eligible.size())];
    const auto& locs = ret.per_image[img];
    LatentLocation z = locs[rng.uniform_index(locs.size())];
    if (provenance)
        *provenance = {static_cast<int>(img), dataset[img].pyramid.source_id, z};
    return detail::make_filter(dataset, whitening, cfg.window, img, z, 0);
}

/// Pool of whitened random parts. Each pool slot draws from its own seeded
/// stream, so the pool is a pure function of (dataset, whitening, config);
/// duplicate (image, location) draws are re-drawn up to max_retries.
inline PartPoolResult build_part_pool(const Dataset& dataset, const WhiteningModel& whitening,
                                      const PartPoolConfig& cfg) {
    cfg.validate();
    detail::RetainedLocations ret = detail::retained_locations(dataset, whitening, cfg);
    Rng root(cfg.rng_seed);
    std::set<std::pair<std::size_t, std::int32_t>> taken;

    PartPoolResult out;
    out.bank.parts.reserve(static_cast<std::size_t>(cfg.pool_size));
    out.provenance.reserve(static_cast<std::size_t>(cfg.pool_size));
    for (int slot = 0; slot < cfg.pool_size; ++slot) {
        Rng stream = root.split(static_cast<std::uint64_t>(slot));
        std::size_t img = 0;
        LatentLocation z{};
        for (int attempt = 0;; ++attempt) {
            img = ret.eligible[stream.uniform_index(ret.eligible.size())];
            const auto& locs = ret.per_image[img];
            z = locs[stream.uniform_index(locs.size())];
            if (taken.insert({img, pack_location(z)}).second || attempt >= cfg.max_retries)
                break;
        }
        PartFilter f = detail::make_filter(dataset, whitening, cfg.window, img, z, slot);
        out.bank.parts.push_back(std::move(f));
        out.provenance.push_back({static_cast<int>(img), dataset[img].pyramid.source_id, z});
    }
    return out;
}

}  // namespace partforge
