// partforge: trains part-based multi-class image classifiers end to end:
// synthetic data generation, feature pyramids, random part pools, group-lasso
// part selection, joint training, evaluation and plot-data export.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "partforge/jointtrain.hpp"
#include "partforge/partforge.hpp"

namespace fs = std::filesystem;
using namespace partforge;

namespace {

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    std::ifstream in(path);
    if (!in) throw Error("cannot open config: " + path);
    return parse_pipeline_config(json::parse(in));
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

WindowExtent part_window(const PipelineConfig& cfg) {
    return {cfg.part_window, cfg.part_window};
}

struct CorpusPair {
    Corpus train;
    Corpus test;
};

// ------------------------------- synth-data --------------------------------

void cmd_synth_data(const PipelineConfig& cfg, const std::string& out_dir,
                    const std::string& mode) {
    std::uint64_t hash = config_hash(cfg);
    if (mode == "features") {
        SynthResult s = synth_dataset(cfg.synth, cfg.seed);
        write_corpus(s.train, out_dir + "/train", MirrorMode::ColumnReverse, hash, cfg.seed);
        write_corpus(s.test, out_dir + "/test", MirrorMode::ColumnReverse, hash, cfg.seed);
        json planted{{"plants", s.plant_log}, {"config_hash", hash}, {"seed", cfg.seed}};
        json patterns = json::array();
        for (Eigen::Index c = 0; c < s.patterns.cols(); ++c) {
            json col = json::array();
            for (Eigen::Index r = 0; r < s.patterns.rows(); ++r)
                col.push_back(s.patterns(r, c));
            patterns.push_back(col);
        }
        planted["patterns"] = patterns;
        write_json_file(planted, out_dir + "/planted.json");
    } else if (mode == "rasters") {
        // pixel-space variant for exercising the featurize stage: a bright
        // class-specific texture block over uniform noise
        const SynthConfig& sc = cfg.synth;
        Rng root(cfg.seed);
        const int side = std::max(96, sc.grid * 16);
        const int patch = side / 4;
        for (const char* split : {"train", "test"}) {
            int per_class = std::string(split) == "train" ? sc.train_per_class
                                                          : sc.test_per_class;
            fs::create_directories(out_dir + "/" + split);
            json images = json::array();
            int counter = 0;
            Rng split_rng = root.split(std::string(split) == "train" ? 2 : 3);
            for (int c = 0; c < sc.classes; ++c)
                for (int t = 0; t < per_class; ++t) {
                    Rng rng = split_rng.split(static_cast<std::uint64_t>(counter));
                    Raster im = Raster::zeros(side, side);
                    for (auto& p : im.pixels)
                        p = static_cast<float>(
                            std::clamp(0.5 + sc.noise * rng.normal(), 0.0, 1.0));
                    int r0 = static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(side - patch)));
                    int c0 = static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(side - patch)));
                    Rng pat(cfg.seed ^ (0x51ed270b + static_cast<std::uint64_t>(c)));
                    for (int rr = 0; rr < patch; ++rr)
                        for (int cc = 0; cc < patch; ++cc)
                            if (((rr / 4) + (cc / 4)) % 2 ==
                                static_cast<int>(pat.uniform_index(2)))
                                im.at(r0 + rr, c0 + cc) = 1.0f;
                    std::string id = std::string(split) + "_" + std::to_string(counter);
                    write_pgm(im, out_dir + "/" + split + "/" + id + ".pgm");
                    images.push_back({{"id", id}, {"class", c}});
                    ++counter;
                }
            json meta{{"classes", json::array()},
                      {"images", images},
                      {"mirror", "none"},
                      {"config_hash", hash},
                      {"seed", cfg.seed}};
            for (int c = 0; c < sc.classes; ++c)
                meta["classes"].push_back("class_" + std::to_string(c));
            write_json_file(meta, out_dir + "/" + split + "/labels.json");
        }
    } else {
        throw Error("synth-data: unknown mode '" + mode + "' (features|rasters)");
    }
    std::cout << "synth-data: wrote " << out_dir << " (mode " << mode << ", seed "
              << cfg.seed << ")\n";
}

// -------------------------------- featurize --------------------------------

void cmd_featurize(const PipelineConfig& cfg, const std::string& images_dir,
                   const std::string& out_dir, bool flips) {
    std::ifstream in(images_dir + "/labels.json");
    if (!in) throw Error("cannot open: " + images_dir + "/labels.json");
    json meta = json::parse(in);
    fs::create_directories(out_dir);

    struct Item {
        std::string id;
        int label;
    };
    std::vector<Item> items;
    for (const json& rec : meta.at("images"))
        items.push_back({rec.at("id").get<std::string>(), rec.at("class").get<int>()});

    std::vector<FeaturePyramid> pyramids(items.size());
    std::vector<FeaturePyramid> flipped(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        Raster im = read_pgm(images_dir + "/" + items[i].id + ".pgm");
        if (cfg.max_pixels > 0 &&
            static_cast<long>(im.rows) * im.cols > cfg.max_pixels)
            im = resample(im, std::sqrt(static_cast<double>(cfg.max_pixels) /
                                        (static_cast<double>(im.rows) * im.cols)));
        pyramids[i] = build_hog_pyramid(im, cfg.pyramid, items[i].id);
        if (flips)
            flipped[i] =
                build_hog_pyramid(mirror_raster(im), cfg.pyramid, items[i].id + "#flip");
    });

    if (cfg.pca_k > 0) {
        // reduce cell descriptors with PCA fit on a sample of cells
        std::vector<Eigen::VectorXd> sample;
        Rng rng(cfg.seed ^ 0x9CA0ULL);
        for (const auto& pyr : pyramids)
            for (const Level& lv : pyr.levels)
                for (int r = 0; r < lv.rows; ++r)
                    for (int c = 0; c < lv.cols; ++c) {
                        if (sample.size() >= cfg.whitening_samples) break;
                        Eigen::VectorXd v(lv.dim);
                        const float* cell = lv.cell(r, c);
                        for (int t = 0; t < lv.dim; ++t) v[t] = cell[t];
                        sample.push_back(std::move(v));
                    }
        PcaModel pca = fit_pca(sample, cfg.pca_k);
        auto reduce = [&](FeaturePyramid& pyr) {
            for (Level& lv : pyr.levels) {
                std::vector<float> out(static_cast<std::size_t>(lv.rows) * lv.cols *
                                       static_cast<std::size_t>(cfg.pca_k));
                for (int r = 0; r < lv.rows; ++r)
                    for (int c = 0; c < lv.cols; ++c) {
                        Eigen::VectorXd v(lv.dim);
                        const float* cell = lv.cell(r, c);
                        for (int t = 0; t < lv.dim; ++t) v[t] = cell[t];
                        Eigen::VectorXd red = apply_pca(pca, v);
                        float* dst = out.data() +
                                     (static_cast<std::size_t>(r) * lv.cols + c) * cfg.pca_k;
                        for (int t = 0; t < cfg.pca_k; ++t)
                            dst[t] = static_cast<float>(red[t]);
                    }
                lv.data = std::move(out);
                lv.dim = cfg.pca_k;
            }
        };
        for (auto& p : pyramids) reduce(p);
        if (flips)
            for (auto& p : flipped) reduce(p);
    }

    json images = json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
        write_feature_grid(pyramids[i], out_dir + "/" + items[i].id + ".pbfp");
        if (flips)
            write_feature_grid(flipped[i], out_dir + "/" + items[i].id + "_flip.pbfp");
        images.push_back({{"id", items[i].id}, {"class", items[i].label}});
    }
    json out_meta{{"classes", meta.at("classes")},
                  {"images", images},
                  {"mirror", flips ? "files" : "none"},
                  {"config_hash", config_hash(cfg)},
                  {"seed", cfg.seed}};
    write_json_file(out_meta, out_dir + "/labels.json");
    std::cout << "featurize: wrote " << items.size() << " feature grids to " << out_dir
              << "\n";
}

// -------------------------------- init-parts -------------------------------

void cmd_init_parts(const PipelineConfig& cfg, const std::string& corpus_dir,
                    const std::string& out_dir) {
    Corpus corpus = load_corpus(corpus_dir, cfg.use_flips);
    fs::create_directories(out_dir);
    WindowExtent win = part_window(cfg);
    WhiteningModel whitening = fit_window_whitening(
        corpus.dataset, win, cfg.whitening_samples, cfg.whitening_shrinkage, cfg.seed);
    PartPoolConfig pool_cfg;
    pool_cfg.pool_size = cfg.pool_size;
    pool_cfg.window = win;
    pool_cfg.keep_fraction = cfg.keep_fraction;
    pool_cfg.rng_seed = cfg.seed;
    PartPoolResult pool = build_part_pool(corpus.dataset, whitening, pool_cfg);

    write_whitening(whitening, out_dir + "/whitening.pbw");
    ModelFile m;
    m.bank = pool.bank;
    m.grid = PoolingGrid::standard_1x1_2x2();
    m.class_names = corpus.class_names;
    m.stage = "init";
    m.config_hash = config_hash(cfg);
    m.whitening_hash = whitening.content_hash();
    m.seed = cfg.seed;
    write_model(m, out_dir + "/parts.pbm");

    json prov = json::array();
    for (const PartProvenance& p : pool.provenance)
        prov.push_back({{"image", p.source_id},
                        {"image_index", p.image_index},
                        {"level", p.location.level},
                        {"row", p.location.row},
                        {"col", p.location.col}});
    write_json_file(json{{"parts", prov},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed}},
                    out_dir + "/provenance.json");
    std::cout << "init-parts: pool of " << pool.bank.size() << " parts written to "
              << out_dir << "\n";
}

// ------------------------------- select-parts ------------------------------

void cmd_select_parts(const PipelineConfig& cfg, const std::string& corpus_dir,
                      const std::string& parts_file, const std::string& out_dir,
                      const std::string& lambda_grid) {
    Corpus corpus = load_corpus(corpus_dir, cfg.use_flips);
    ModelFile parts = read_model(parts_file);
    if (parts.stage != "init")
        throw Error("select-parts: expected an init-stage part pool, got stage '" +
                    parts.stage + "'");
    fs::create_directories(out_dir);
    const int n = static_cast<int>(corpus.class_names.size());
    ResponseSet rs = compute_response_set(corpus.dataset, parts.bank, parts.grid, n);

    GroupLassoConfig lasso = cfg.lasso;
    lasso.rng_seed = cfg.seed;
    LambdaSweepResult sweep;
    if (lambda_grid == "auto") {
        sweep = lambda_sweep(rs, cfg.target_parts, lasso);
    } else {
        // explicit grid: keep the result whose count lands closest to target
        std::stringstream ss(lambda_grid);
        std::string tok;
        int best_gap = std::numeric_limits<int>::max();
        while (std::getline(ss, tok, ',')) {
            double lambda = std::stod(tok);
            TrainSelectionResult r = train_selection(rs, lasso.with_lambda(lambda));
            std::vector<int> sel = select_parts(r.u, r.zero_threshold);
            Eigen::VectorXd rho = group_norms(r.u);
            std::sort(rho.data(), rho.data() + rho.size(), std::greater<double>());
            sweep.profiles.emplace_back(lambda, rho);
            int gap = std::abs(static_cast<int>(sel.size()) - cfg.target_parts);
            if (gap < best_gap) {
                best_gap = gap;
                sweep.lambda = lambda;
                sweep.selected = sel;
                sweep.u = r.u;
                sweep.epsilon = r.epsilon;
                sweep.zero_threshold = r.zero_threshold;
                sweep.hit_target = static_cast<int>(sel.size()) == cfg.target_parts;
            }
        }
    }
    if (sweep.selected.empty())
        throw Error("select-parts: selection came back empty; lower lambda or the target");
    if (!sweep.hit_target)
        std::cerr << "select-parts: warning: settled for " << sweep.selected.size()
                  << " parts (target " << cfg.target_parts << ")\n";

    PartWeights retrained = retrain_l2(rs, sweep.selected, cfg.joint.lambda_u);

    ModelFile out;
    for (std::size_t t = 0; t < sweep.selected.size(); ++t) {
        PartFilter f = parts.bank.parts[static_cast<std::size_t>(sweep.selected[t])];
        f.part_id = static_cast<int>(t);
        out.bank.parts.push_back(std::move(f));
    }
    out.weights = retrained;
    out.grid = parts.grid;
    out.class_names = corpus.class_names;
    out.stage = "select";
    out.config_hash = config_hash(cfg);
    out.whitening_hash = parts.whitening_hash;
    out.seed = cfg.seed;
    write_model(out, out_dir + "/selected.pbm");

    write_json_file(json{{"lambda", sweep.lambda},
                         {"selected", sweep.selected},
                         {"epsilon", sweep.epsilon},
                         {"zero_threshold", sweep.zero_threshold},
                         {"hit_target", sweep.hit_target},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed}},
                    out_dir + "/selected_indices.json");

    std::ofstream csv(out_dir + "/rho_curves.csv");
    csv << "lambda,rank,rho\n";
    char buf[96];
    for (const auto& [lambda, rho] : sweep.profiles)
        for (Eigen::Index r = 0; r < rho.size(); ++r) {
            std::snprintf(buf, sizeof(buf), "%.17g,%lld,%.17g", lambda,
                          static_cast<long long>(r), rho[r]);
            csv << buf << "\n";
        }
    std::cout << "select-parts: kept " << sweep.selected.size() << " of "
              << parts.bank.size() << " parts (lambda " << sweep.lambda << ")\n";
}

// -------------------------------- train-joint ------------------------------

void cmd_train_joint(const PipelineConfig& cfg, const std::string& corpus_dir,
                     const std::string& model_file, const std::string& out_dir,
                     bool from_init) {
    Corpus corpus = load_corpus(corpus_dir, cfg.use_flips);
    ModelFile start = read_model(model_file);
    if (start.stage == "init" && !from_init)
        throw Error("train-joint: input is an unselected pool; run select-parts first or "
                    "pass --from-init to train on the raw pool");
    if (start.stage != "init" && start.stage != "select")
        throw Error("train-joint: expected an init or select stage model, got '" +
                    start.stage + "'");
    fs::create_directories(out_dir);
    const int n = static_cast<int>(corpus.class_names.size());

    std::vector<CacheRoundStats> cache_stats;
    std::vector<QpRoundStats> qp_stats;
    auto checkpoint = [&](int iter, const PartWeights& u, const PartBank& bank) {
        ModelFile snap;
        snap.bank = bank;
        snap.weights = u;
        snap.grid = start.grid;
        snap.class_names = corpus.class_names;
        snap.stage = "joint";
        snap.config_hash = config_hash(cfg);
        snap.whitening_hash = start.whitening_hash;
        snap.seed = cfg.seed;
        write_model(snap, out_dir + "/model_iter_" + std::to_string(iter) + ".pbm");
    };
    JointTrainResult res = joint_train(corpus.dataset, start.bank, start.grid, n, cfg.joint,
                                       &cache_stats, &qp_stats, checkpoint);

    ModelFile out;
    out.bank = res.bank;
    out.weights = res.u;
    out.grid = start.grid;
    out.class_names = corpus.class_names;
    out.stage = "joint";
    out.config_hash = config_hash(cfg);
    out.whitening_hash = start.whitening_hash;
    out.seed = cfg.seed;
    write_model(out, out_dir + "/model.pbm");

    json trace = json::array();
    for (const TraceEntry& e : res.trace) {
        trace.push_back({{"iter", e.iter},
                         {"stage", e.stage},
                         {"objective", e.objective},
                         {"train_accuracy", e.train_accuracy}});
    }
    write_json_file(json{{"trace", trace},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed}},
                    out_dir + "/trace.json");

    std::ofstream diag(out_dir + "/cache_rounds.jsonl");
    for (const CacheRoundStats& st : cache_stats)
        diag << json{{"round", st.round},
                     {"cache_size", st.cache_size},
                     {"mined", st.mined},
                     {"evicted", st.evicted},
                     {"objective", st.objective}}
                    .dump()
             << "\n";
    std::ofstream qp_diag(out_dir + "/qp_rounds.jsonl");
    for (const QpRoundStats& st : qp_stats)
        qp_diag << json{{"round", st.round},
                        {"working_set", st.working_set},
                        {"dual_obj", st.dual_obj},
                        {"xi", st.xi},
                        {"violation", st.violation},
                        {"pruned", st.pruned}}
                       .dump()
                << "\n";
    std::cout << "train-joint: " << res.trace.size() << " stages, final objective "
              << res.trace.back().objective << ", train accuracy "
              << res.trace.back().train_accuracy << "\n";
}

// --------------------------------- evaluate --------------------------------

void cmd_evaluate(const PipelineConfig& cfg, const std::string& corpus_dir,
                  const std::string& model_file, const std::string& out_file) {
    Corpus corpus = load_corpus(corpus_dir, cfg.use_flips);
    ModelFile model = read_model(model_file);
    EvalReport rep = evaluate(model, corpus.dataset);
    json j = eval_report_json(rep, config_hash(cfg), cfg.seed);
    j["classes"] = corpus.class_names;
    write_json_file(j, out_file);
    std::cout << "evaluate: mean class accuracy " << rep.mean_class_accuracy << "\n";
}

// -------------------------------- export-viz -------------------------------

void cmd_export_viz(const PipelineConfig& cfg, const std::string& corpus_dir,
                    const std::string& model_file, const std::string& out_dir, int top_k) {
    Corpus corpus = load_corpus(corpus_dir, cfg.use_flips);
    ModelFile model = read_model(model_file);
    if (!model.weights) throw Error("export-viz: model has no part weights");
    fs::create_directories(out_dir);
    export_weights_csv(*model.weights, model.class_names, out_dir + "/weights.csv");
    write_json_file(json{{"parts", export_detections(model, corpus, top_k)},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed}},
                    out_dir + "/detections.json");
    std::cout << "export-viz: wrote weights.csv and detections.json to " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"part-based multi-class image classifier trainer"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "pipeline config JSON")->envname("PARTFORGE_CONFIG");

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a planted synthetic corpus");
    std::string synth_out, synth_mode = "features";
    std::uint64_t seed_override = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--mode", synth_mode, "features|rasters");
    auto* seed_opt = synth->add_option("--seed", seed_override, "rng seed");
    int classes_ov = -1, parts_ov = -1, train_ov = -1, test_ov = -1;
    double noise_ov = -1;
    synth->add_option("--classes", classes_ov, "number of classes");
    synth->add_option("--parts", parts_ov, "planted patterns");
    synth->add_option("--noise", noise_ov, "background noise level");
    synth->add_option("--train-per-class", train_ov, "training images per class");
    synth->add_option("--test-per-class", test_ov, "test images per class");

    // featurize
    auto* feat = app.add_subcommand("featurize", "build feature grids from PGM rasters");
    std::string feat_images, feat_out;
    bool feat_flips = true;
    feat->add_option("--images", feat_images, "directory with labels.json and .pgm files")
        ->required();
    feat->add_option("--out", feat_out, "output features directory")->required();
    bool feat_noflips = false;
    feat->add_flag("--no-flips", feat_noflips, "skip mirrored twins");
    int pca_ov = -1;
    feat->add_option("--pca-k", pca_ov, "reduce descriptors to k dimensions");
    long maxpix_ov = -1;
    feat->add_option("--max-pixels", maxpix_ov, "downscale larger rasters to this pixel count");

    // init-parts
    auto* init = app.add_subcommand("init-parts", "sample a whitened random part pool");
    std::string init_corpus, init_out;
    int pool_ov = -1;
    double keep_ov = -1;
    init->add_option("--corpus,--features-dir", init_corpus, "features directory")
        ->required();
    init->add_option("--out", init_out, "output directory")->required();
    init->add_option("--pool-size", pool_ov, "number of parts to draw");
    init->add_option("--keep-fraction", keep_ov, "discriminability keep fraction");
    auto* init_seed = init->add_option("--seed", seed_override, "rng seed");

    // select-parts
    auto* sel = app.add_subcommand("select-parts", "group-lasso part selection");
    std::string sel_corpus, sel_parts, sel_out, sel_grid = "auto";
    int target_ov = -1;
    bool sel_noflips = false;
    sel->add_option("--corpus,--features-dir", sel_corpus, "features directory")->required();
    sel->add_option("--parts", sel_parts, "init-parts output model")->required();
    sel->add_option("--out", sel_out, "output directory")->required();
    sel->add_option("--target-m", target_ov, "target number of selected parts");
    sel->add_option("--lambda-grid", sel_grid, "auto or comma-separated lambdas");
    sel->add_flag("--no-flips", sel_noflips, "score without mirrored twins");
    auto* sel_seed = sel->add_option("--seed", seed_override, "rng seed");

    // train-joint
    auto* joint = app.add_subcommand("train-joint", "block coordinate joint training");
    std::string joint_corpus, joint_model, joint_out;
    double lw_ov = -1, lu_ov = -1, tol_ov = -1;
    int outer_ov = -1;
    bool from_init = false;
    joint->add_option("--corpus,--features-dir", joint_corpus, "features directory")->required();
    joint->add_option("--model", joint_model, "select-parts output model")->required();
    joint->add_option("--out", joint_out, "output directory")->required();
    joint->add_option("--lambda-w", lw_ov, "filter regularizer");
    joint->add_option("--lambda-u", lu_ov, "weight regularizer");
    joint->add_option("--rel-tol", tol_ov, "relative convergence threshold");
    joint->add_option("--max-outer", outer_ov, "outer iteration cap");
    joint->add_flag("--from-init", from_init, "accept an unselected random pool");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score a model on a corpus");
    std::string ev_corpus, ev_model, ev_out;
    ev->add_option("--corpus,--features-dir", ev_corpus, "features directory")->required();
    ev->add_option("--model", ev_model, "model file")->required();
    ev->add_option("--out", ev_out, "report JSON path")->required();

    // export-viz
    auto* viz = app.add_subcommand("export-viz", "emit weight CSV and top detections");
    std::string viz_corpus, viz_model, viz_out;
    int top_k = 10;
    viz->add_option("--corpus,--features-dir", viz_corpus, "features directory")->required();
    viz->add_option("--model", viz_model, "model file")->required();
    viz->add_option("--out", viz_out, "output directory")->required();
    viz->add_option("--top-k", top_k, "detections per part");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = load_config(config_path);
        if (seed_opt->count() || init_seed->count() || sel_seed->count())
            cfg.seed = seed_override;
        if (classes_ov > 0) cfg.synth.classes = classes_ov;
        if (parts_ov > 0) cfg.synth.parts_planted = parts_ov;
        if (noise_ov >= 0) cfg.synth.noise = noise_ov;
        if (train_ov > 0) cfg.synth.train_per_class = train_ov;
        if (test_ov > 0) cfg.synth.test_per_class = test_ov;
        if (pca_ov >= 0) cfg.pca_k = pca_ov;
        if (maxpix_ov >= 0) cfg.max_pixels = maxpix_ov;
        if (pool_ov > 0) cfg.pool_size = pool_ov;
        if (keep_ov > 0) cfg.keep_fraction = keep_ov;
        if (target_ov >= 0) cfg.target_parts = target_ov;
        if (sel_noflips) cfg.use_flips = false;
        if (lw_ov > 0) cfg.joint.lambda_w = lw_ov;
        if (lu_ov > 0) cfg.joint.lambda_u = lu_ov;
        if (tol_ov > 0) cfg.joint.rel_tol = tol_ov;
        if (outer_ov >= 0) cfg.joint.outer_max_iters = outer_ov;

        if (synth->parsed()) cmd_synth_data(cfg, synth_out, synth_mode);
        if (feat->parsed()) cmd_featurize(cfg, feat_images, feat_out, feat_flips && !feat_noflips);
        if (init->parsed()) cmd_init_parts(cfg, init_corpus, init_out);
        if (sel->parsed()) cmd_select_parts(cfg, sel_corpus, sel_parts, sel_out, sel_grid);
        if (joint->parsed())
            cmd_train_joint(cfg, joint_corpus, joint_model, joint_out, from_init);
        if (ev->parsed()) cmd_evaluate(cfg, ev_corpus, ev_model, ev_out);
        if (viz->parsed()) cmd_export_viz(cfg, viz_corpus, viz_model, viz_out, top_k);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
