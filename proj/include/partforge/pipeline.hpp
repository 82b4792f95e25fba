#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <json.hpp>

#include "partforge/feature_io.hpp"
#include "partforge/hog.hpp"
#include "partforge/model_io.hpp"
#include "partforge/partgen.hpp"
#include "partforge/select.hpp"

namespace partforge {

using json = nlohmann::json;

// ------------------------------ configuration ------------------------------

struct SynthConfig {
    int classes = 4;
    int parts_planted = 4;
    int grid = 8;
    int channels = 8;
    int window = 2;  // planted pattern extent, in cells
    double noise = 0.1;
    int train_per_class = 30;
    int test_per_class = 20;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    PyramidConfig pyramid;
    /// Rasters larger than this many pixels are downscaled (aspect preserved)
    /// before feature extraction; 0 keeps them as given.
    long max_pixels = 0;
    int pca_k = 0;  // 0 = keep raw descriptors
    int pool_size = 64;
    int part_window = 2;
    double keep_fraction = 0.5;
    double whitening_shrinkage = 1e-2;
    std::size_t whitening_samples = 20000;
    bool use_flips = true;
    GroupLassoConfig lasso;
    int target_parts = 8;
    JointObjectiveConfig joint;
    SynthConfig synth;
};

inline json to_json(const PipelineConfig& c) {
    return json{
        {"seed", c.seed},
        {"features",
         {{"cell_size", c.pyramid.cell_size},
          {"scales_per_octave", c.pyramid.scales_per_octave},
          {"min_level_cells", c.pyramid.min_level_cells},
          {"max_levels", c.pyramid.max_levels},
          {"max_pixels", c.max_pixels},
          {"pca_k", c.pca_k}}},
        {"parts",
         {{"pool_size", c.pool_size},
          {"window", c.part_window},
          {"keep_fraction", c.keep_fraction},
          {"whitening_shrinkage", c.whitening_shrinkage},
          {"whitening_samples", c.whitening_samples}}},
        {"select",
         {{"lambda", c.lasso.lambda},
          {"epsilon_round", c.lasso.epsilon_round},
          {"eta0", c.lasso.eta0},
          {"t0", c.lasso.t0},
          {"epochs", c.lasso.epochs},
          {"batch_size", c.lasso.batch_size},
          {"zero_threshold", c.lasso.zero_threshold},
          {"target_parts", c.target_parts},
          {"use_flips", c.use_flips}}},
        {"joint",
         {{"lambda_w", c.joint.lambda_w},
          {"lambda_u", c.joint.lambda_u},
          {"outer_max_iters", c.joint.outer_max_iters},
          {"cccp_max_iters", c.joint.cccp_max_iters},
          {"rel_tol", c.joint.rel_tol},
          {"qp_epsilon_scale", c.joint.qp_epsilon_scale},
          {"prune_patience", c.joint.prune_patience}}},
        {"synth",
         {{"classes", c.synth.classes},
          {"parts_planted", c.synth.parts_planted},
          {"grid", c.synth.grid},
          {"channels", c.synth.channels},
          {"window", c.synth.window},
          {"noise", c.synth.noise},
          {"train_per_class", c.synth.train_per_class},
          {"test_per_class", c.synth.test_per_class}}}};
}

namespace detail {

inline void validate_schema(const json& expected, const json& given, const std::string& path) {
    if (!given.is_object()) throw Error("config: expected an object at " + path);
    for (auto it = given.begin(); it != given.end(); ++it) {
        if (!expected.contains(it.key()))
            throw Error("config: unknown key '" + path + it.key() + "'");
        const json& exp = expected.at(it.key());
        const json& got = it.value();
        if (exp.is_object()) {
            validate_schema(exp, got, path + it.key() + ".");
        } else if (exp.is_number() && !got.is_number()) {
            throw Error("config: '" + path + it.key() + "' must be a number");
        } else if (exp.is_boolean() && !got.is_boolean()) {
            throw Error("config: '" + path + it.key() + "' must be a boolean");
        }
    }
}

template <typename T>
inline void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses a config JSON, rejecting unknown keys and mistyped values before
/// any stage runs.
inline PipelineConfig parse_pipeline_config(const json& j) {
    PipelineConfig c;
    detail::validate_schema(to_json(c), j, "");
    detail::maybe(j, "seed", c.seed);
    if (j.contains("features")) {
        const json& f = j.at("features");
        detail::maybe(f, "cell_size", c.pyramid.cell_size);
        detail::maybe(f, "scales_per_octave", c.pyramid.scales_per_octave);
        detail::maybe(f, "min_level_cells", c.pyramid.min_level_cells);
        detail::maybe(f, "max_levels", c.pyramid.max_levels);
        detail::maybe(f, "max_pixels", c.max_pixels);
        detail::maybe(f, "pca_k", c.pca_k);
    }
    if (j.contains("parts")) {
        const json& p = j.at("parts");
        detail::maybe(p, "pool_size", c.pool_size);
        detail::maybe(p, "window", c.part_window);
        detail::maybe(p, "keep_fraction", c.keep_fraction);
        detail::maybe(p, "whitening_shrinkage", c.whitening_shrinkage);
        detail::maybe(p, "whitening_samples", c.whitening_samples);
    }
    if (j.contains("select")) {
        const json& s = j.at("select");
        detail::maybe(s, "lambda", c.lasso.lambda);
        detail::maybe(s, "epsilon_round", c.lasso.epsilon_round);
        detail::maybe(s, "eta0", c.lasso.eta0);
        detail::maybe(s, "t0", c.lasso.t0);
        detail::maybe(s, "epochs", c.lasso.epochs);
        detail::maybe(s, "batch_size", c.lasso.batch_size);
        detail::maybe(s, "zero_threshold", c.lasso.zero_threshold);
        detail::maybe(s, "target_parts", c.target_parts);
        detail::maybe(s, "use_flips", c.use_flips);
    }
    if (j.contains("joint")) {
        const json& jt = j.at("joint");
        detail::maybe(jt, "lambda_w", c.joint.lambda_w);
        detail::maybe(jt, "lambda_u", c.joint.lambda_u);
        detail::maybe(jt, "outer_max_iters", c.joint.outer_max_iters);
        detail::maybe(jt, "cccp_max_iters", c.joint.cccp_max_iters);
        detail::maybe(jt, "rel_tol", c.joint.rel_tol);
        detail::maybe(jt, "qp_epsilon_scale", c.joint.qp_epsilon_scale);
        detail::maybe(jt, "prune_patience", c.joint.prune_patience);
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        detail::maybe(s, "classes", c.synth.classes);
        detail::maybe(s, "parts_planted", c.synth.parts_planted);
        detail::maybe(s, "grid", c.synth.grid);
        detail::maybe(s, "channels", c.synth.channels);
        detail::maybe(s, "window", c.synth.window);
        detail::maybe(s, "noise", c.synth.noise);
        detail::maybe(s, "train_per_class", c.synth.train_per_class);
        detail::maybe(s, "test_per_class", c.synth.test_per_class);
    }
    return c;
}

inline std::uint64_t config_hash(const PipelineConfig& c) { return fnv1a64(to_json(c).dump()); }

// ------------------------------ corpora on disk ----------------------------

struct Corpus {
    Dataset dataset;
    std::vector<std::string> class_names;
    std::vector<std::string> image_ids;
};

/// Mirroring conventions a corpus can declare: mirrored twins stored as
/// <id>_flip.pbfp files, synthesized by grid column reversal, or absent.
enum class MirrorMode { Files, ColumnReverse, None };

inline std::string mirror_mode_name(MirrorMode m) {
    switch (m) {
        case MirrorMode::Files: return "files";
        case MirrorMode::ColumnReverse: return "column-reverse";
        default: return "none";
    }
}

inline MirrorMode mirror_mode_from(const std::string& s) {
    if (s == "files") return MirrorMode::Files;
    if (s == "column-reverse") return MirrorMode::ColumnReverse;
    if (s == "none") return MirrorMode::None;
    throw Error("unknown mirror mode: " + s);
}

inline void write_corpus(const Corpus& corpus, const std::string& dir, MirrorMode mirror,
                         std::uint64_t cfg_hash, std::uint64_t seed,
                         const json& extra_meta = json::object()) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json images = json::array();
    for (std::size_t i = 0; i < corpus.dataset.size(); ++i) {
        const std::string& id = corpus.image_ids[i];
        write_feature_grid(corpus.dataset[i].pyramid, dir + "/" + id + ".pbfp");
        if (mirror == MirrorMode::Files && corpus.dataset[i].mirrored)
            write_feature_grid(*corpus.dataset[i].mirrored, dir + "/" + id + "_flip.pbfp");
        images.push_back({{"id", id}, {"class", corpus.dataset[i].label}});
    }
    json meta{{"classes", corpus.class_names},
              {"images", images},
              {"mirror", mirror_mode_name(mirror)},
              {"config_hash", cfg_hash},
              {"seed", seed}};
    if (!extra_meta.empty()) meta["meta"] = extra_meta;
    std::ofstream out(dir + "/labels.json");
    if (!out) throw Error("cannot open for writing: " + dir + "/labels.json");
    out << meta.dump(2) << "\n";
}

inline Corpus load_corpus(const std::string& dir, bool use_flips) {
    std::ifstream in(dir + "/labels.json");
    if (!in) throw Error("cannot open: " + dir + "/labels.json (not a corpus directory?)");
    json meta = json::parse(in);
    MirrorMode mirror = mirror_mode_from(meta.value("mirror", "none"));

    Corpus corpus;
    corpus.class_names = meta.at("classes").get<std::vector<std::string>>();
    for (const json& rec : meta.at("images")) {
        std::string id = rec.at("id").get<std::string>();
        int label = rec.at("class").get<int>();
        if (label < 0 || label >= static_cast<int>(corpus.class_names.size()))
            throw Error(dir + ": image " + id + " has out-of-range class " +
                        std::to_string(label));
        LabeledExample ex;
        ex.pyramid = ingest_external_features(dir + "/" + id + ".pbfp", id);
        ex.label = label;
        if (use_flips) {
            std::string flip_path = dir + "/" + id + "_flip.pbfp";
            if (mirror == MirrorMode::Files && std::filesystem::exists(flip_path))
                ex.mirrored = ingest_external_features(flip_path, id + "#flip");
            else if (mirror == MirrorMode::ColumnReverse)
                ex.mirrored = ex.pyramid.mirrored();
        }
        corpus.dataset.push_back(std::move(ex));
        corpus.image_ids.push_back(std::move(id));
    }
    return corpus;
}

// ------------------------------ synthetic data -----------------------------

struct SynthResult {
    Corpus train;
    Corpus test;
    /// Planted patterns, one column per pattern, orthonormal in window space.
    Eigen::MatrixXd patterns;
    json plant_log;  // per image: pattern ids and locations
};

namespace detail {

inline FeaturePyramid synth_grid(int grid, int channels, Rng& rng, double noise) {
    FeaturePyramid pyr;
    pyr.scales_per_octave = 1;
    Level lv;
    lv.rows = grid;
    lv.cols = grid;
    lv.dim = channels;
    lv.scale = 1.0f;
    lv.data.resize(static_cast<std::size_t>(grid) * grid * channels);
    for (float& v : lv.data) v = static_cast<float>(noise * rng.normal());
    pyr.levels.push_back(std::move(lv));
    return pyr;
}

}  // namespace detail

/// Plants one distinctive orthonormal pattern per class (pattern t belongs to
/// class t mod n) at a random window of an otherwise Gaussian-noise grid.
/// With zero noise the patterns are exactly recoverable, so the best
/// achievable parts are known by construction.
inline SynthResult synth_dataset(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 1 || cfg.parts_planted < 1) throw Error("synth_dataset: bad config");
    if (cfg.window > cfg.grid) throw Error("synth_dataset: window exceeds grid");
    const Eigen::Index pat_dim =
        static_cast<Eigen::Index>(cfg.window) * cfg.window * cfg.channels;
    if (cfg.parts_planted > pat_dim)
        throw Error("synth_dataset: more planted parts than pattern dimensions");

    Rng root(seed);
    // orthonormal pattern set from a seeded Gaussian matrix
    Rng pat_rng = root.split(1);
    Eigen::MatrixXd g(pat_dim, cfg.parts_planted);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = pat_rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(pat_dim, cfg.parts_planted);

    SynthResult out;
    out.patterns = q;
    out.plant_log = json::array();

    auto make_split = [&](int per_class, Rng rng, const std::string& prefix, Corpus& corpus) {
        for (int c = 0; c < cfg.classes; ++c)
            corpus.class_names.push_back("class_" + std::to_string(c));
        int counter = 0;
        for (int c = 0; c < cfg.classes; ++c) {
            for (int t = 0; t < per_class; ++t) {
                Rng img_rng = rng.split(static_cast<std::uint64_t>(counter));
                LabeledExample ex;
                ex.pyramid = detail::synth_grid(cfg.grid, cfg.channels, img_rng, cfg.noise);
                ex.label = c;
                std::string id = prefix + "_" + std::to_string(counter);
                ex.pyramid.source_id = id;
                json plants = json::array();
                for (int p = c; p < cfg.parts_planted; p += cfg.classes) {
                    int max_anchor = cfg.grid - cfg.window;
                    int pr = static_cast<int>(img_rng.uniform_index(
                        static_cast<std::uint64_t>(max_anchor + 1)));
                    int pc = static_cast<int>(img_rng.uniform_index(
                        static_cast<std::uint64_t>(max_anchor + 1)));
                    Level& lv = ex.pyramid.levels[0];
                    Eigen::Index at = 0;
                    for (int wr = 0; wr < cfg.window; ++wr)
                        for (int wc = 0; wc < cfg.window; ++wc) {
                            float* cell = lv.cell(pr + wr, pc + wc);
                            for (int ch = 0; ch < cfg.channels; ++ch)
                                cell[ch] += static_cast<float>(out.patterns(at++, p));
                        }
                    plants.push_back({{"pattern", p}, {"row", pr}, {"col", pc}});
                }
                ex.mirrored = ex.pyramid.mirrored();
                out.plant_log.push_back({{"id", id}, {"class", c}, {"plants", plants}});
                corpus.dataset.push_back(std::move(ex));
                corpus.image_ids.push_back(id);
                ++counter;
            }
        }
    };
    make_split(cfg.train_per_class, root.split(2), "train", out.train);
    make_split(cfg.test_per_class, root.split(3), "test", out.test);
    return out;
}

// -------------------------------- evaluation --------------------------------

/// Per-class and mean accuracies with the confusion matrix and per-part
/// usage statistics.
struct EvalReport {
    std::vector<double> per_class_accuracy;
    double mean_class_accuracy = 0.0;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    std::vector<double> part_response_mean;
    std::vector<double> part_weight_norm;
};

inline EvalReport evaluate(const ModelFile& model, const Dataset& dataset) {
    if (!model.weights) throw Error("evaluate: model has no part weights");
    const PartWeights& u = *model.weights;
    const int n = u.classes();
    ResponseSet rs = compute_response_set(dataset, model.bank, model.grid, n);

    EvalReport rep;
    rep.confusion.assign(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
    std::vector<int> totals(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd response_sum = Eigen::VectorXd::Zero(u.parts);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        int pred = predict(rs.responses[i], u);
        rep.confusion[static_cast<std::size_t>(rs.labels[i])][static_cast<std::size_t>(pred)]++;
        totals[static_cast<std::size_t>(rs.labels[i])]++;
        for (int j = 0; j < u.parts; ++j)
            response_sum[j] += rs.responses[i]
                                   .segment(static_cast<Eigen::Index>(j) * u.regions, u.regions)
                                   .mean();
    }
    double mean = 0.0;
    int seen = 0;
    for (int c = 0; c < n; ++c) {
        double acc = totals[static_cast<std::size_t>(c)]
                         ? static_cast<double>(rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                               totals[static_cast<std::size_t>(c)]
                         : 0.0;
        rep.per_class_accuracy.push_back(acc);
        if (totals[static_cast<std::size_t>(c)]) {
            mean += acc;
            ++seen;
        }
    }
    rep.mean_class_accuracy = seen ? mean / seen : 0.0;
    if (rs.size()) response_sum /= static_cast<double>(rs.size());
    rep.part_response_mean.assign(response_sum.data(), response_sum.data() + response_sum.size());
    Eigen::VectorXd norms = group_norms(u);
    rep.part_weight_norm.assign(norms.data(), norms.data() + norms.size());
    return rep;
}

inline json eval_report_json(const EvalReport& rep, std::uint64_t cfg_hash, std::uint64_t seed) {
    return json{{"mean_class_accuracy", rep.mean_class_accuracy},
                {"per_class_accuracy", rep.per_class_accuracy},
                {"confusion", rep.confusion},
                {"part_response_mean", rep.part_response_mean},
                {"part_weight_norm", rep.part_weight_norm},
                {"config_hash", cfg_hash},
                {"seed", seed}};
}

// ----------------------------- visualization data ---------------------------

/// Raw data behind the weight-matrix and top-detection figures: the u matrix
/// as CSV plus, per part, the top_k scoring (image, location, score) records.
inline json export_detections(const ModelFile& model, const Corpus& corpus, int top_k) {
    struct Det {
        double score;
        std::size_t image;
        LatentLocation loc;
    };
    const PartBank& bank = model.bank;
    std::vector<std::vector<Det>> per_part(static_cast<std::size_t>(bank.size()));
    std::vector<ResponseVector> responses(corpus.dataset.size());
    parallel_for(corpus.dataset.size(), [&](std::size_t i) {
        responses[i] = response_vector(corpus.dataset[i].pyramid, bank, model.grid);
    });
    for (std::size_t i = 0; i < corpus.dataset.size(); ++i)
        for (int j = 0; j < bank.size(); ++j) {
            auto slot = responses[i].slot(j, 0);  // whole-image region
            const auto& loc = responses[i].argmax[static_cast<std::size_t>(slot)];
            if (loc) per_part[static_cast<std::size_t>(j)].push_back(
                {responses[i].values[slot], i, *loc});
        }
    json parts = json::array();
    for (int j = 0; j < bank.size(); ++j) {
        auto& dets = per_part[static_cast<std::size_t>(j)];
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Det& a, const Det& b) { return a.score > b.score; });
        if (static_cast<int>(dets.size()) > top_k) dets.resize(static_cast<std::size_t>(top_k));
        json list = json::array();
        for (const Det& d : dets)
            list.push_back({{"image", corpus.image_ids[d.image]},
                            {"level", d.loc.level},
                            {"row", d.loc.row},
                            {"col", d.loc.col},
                            {"score", d.score}});
        parts.push_back({{"part", j}, {"detections", list}});
    }
    return parts;
}

}  // namespace partforge
