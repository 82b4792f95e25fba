#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace partforge;
namespace fs = std::filesystem;

TEST_CASE("synthetic corpus") {
    SynthConfig cfg;
    cfg.classes = 3;
    cfg.parts_planted = 3;
    cfg.grid = 6;
    cfg.channels = 6;
    cfg.window = 2;
    cfg.train_per_class = 4;
    cfg.test_per_class = 3;

    SECTION("same seed reproduces the corpora bit-exactly") {
        SynthResult a = synth_dataset(cfg, 99);
        SynthResult b = synth_dataset(cfg, 99);
        REQUIRE(a.train.dataset.size() == b.train.dataset.size());
        for (std::size_t i = 0; i < a.train.dataset.size(); ++i)
            REQUIRE(a.train.dataset[i].pyramid.levels[0].data ==
                    b.train.dataset[i].pyramid.levels[0].data);
        SynthResult c = synth_dataset(cfg, 100);
        bool all_same = true;
        for (std::size_t i = 0; i < a.train.dataset.size(); ++i)
            all_same = all_same && a.train.dataset[i].pyramid.levels[0].data ==
                                       c.train.dataset[i].pyramid.levels[0].data;
        REQUIRE(!all_same);
    }

    SECTION("zero noise plants are exactly recoverable and trivially separable") {
        SynthConfig quiet = cfg;
        quiet.noise = 0.0;
        SynthResult s = synth_dataset(quiet, 7);
        // the planted window of the first image equals its pattern
        const auto& rec = s.plant_log[0];
        const auto& plant = rec["plants"][0];
        int pr = plant["row"].get<int>(), pc = plant["col"].get<int>();
        int pat = plant["pattern"].get<int>();
        Eigen::VectorXd psi = extract_patch_feature(
            s.train.dataset[0].pyramid, {0, pr, pc}, {quiet.window, quiet.window});
        REQUIRE((psi - s.patterns.col(pat)).lpNorm<Eigen::Infinity>() < 1e-6);
        REQUIRE(testkit::matched_filter_accuracy(s, quiet, s.test) == 1.0);
    }

    SECTION("matched filter stays near-perfect at the default noise") {
        SynthResult s = synth_dataset(cfg, 11);
        REQUIRE(testkit::matched_filter_accuracy(s, cfg, s.test) >= 0.99);
    }

    SECTION("corpus write and load round trip with mirror synthesis") {
        SynthResult s = synth_dataset(cfg, 13);
        fs::path dir = fs::temp_directory_path() / "pf_corpus_test";
        fs::remove_all(dir);
        write_corpus(s.train, dir.string(), MirrorMode::ColumnReverse, 0xAB, 13);
        Corpus back = load_corpus(dir.string(), true);
        REQUIRE(back.dataset.size() == s.train.dataset.size());
        REQUIRE(back.class_names == s.train.class_names);
        for (std::size_t i = 0; i < back.dataset.size(); ++i) {
            REQUIRE(back.dataset[i].label == s.train.dataset[i].label);
            REQUIRE(back.dataset[i].pyramid.levels[0].data ==
                    s.train.dataset[i].pyramid.levels[0].data);
            REQUIRE(back.dataset[i].mirrored.has_value());
            REQUIRE(back.dataset[i].mirrored->levels[0].data ==
                    s.train.dataset[i].pyramid.mirrored().levels[0].data);
        }
        Corpus noflips = load_corpus(dir.string(), false);
        REQUIRE(!noflips.dataset[0].mirrored.has_value());
    }
}

TEST_CASE("pipeline config") {
    SECTION("defaults round trip through json") {
        PipelineConfig c;
        PipelineConfig back = parse_pipeline_config(to_json(c));
        REQUIRE(to_json(back) == to_json(c));
        REQUIRE(config_hash(back) == config_hash(c));
    }

    SECTION("unknown keys are rejected") {
        json j{{"seed", 3}, {"bogus", 1}};
        REQUIRE_THROWS_WITH(parse_pipeline_config(j),
                            Catch::Matchers::ContainsSubstring("bogus"));
        json nested{{"joint", {{"lambda_w", 0.1}, {"lambda_q", 0.1}}}};
        REQUIRE_THROWS_WITH(parse_pipeline_config(nested),
                            Catch::Matchers::ContainsSubstring("joint.lambda_q"));
    }

    SECTION("type mismatches are rejected") {
        json j{{"seed", "not-a-number"}};
        REQUIRE_THROWS_AS(parse_pipeline_config(j), Error);
    }

    SECTION("hash changes with content") {
        PipelineConfig a;
        PipelineConfig b;
        b.joint.lambda_w *= 2;
        REQUIRE(config_hash(a) != config_hash(b));
    }
}

TEST_CASE("evaluation") {
    SynthConfig cfg;
    cfg.classes = 3;
    cfg.parts_planted = 3;
    cfg.grid = 5;
    cfg.channels = 5;
    cfg.train_per_class = 3;
    cfg.test_per_class = 4;
    SynthResult s = synth_dataset(cfg, 21);

    SECTION("a constant-class predictor scores 1/n mean accuracy") {
        ModelFile m;
        Rng rng(5);
        m.bank = testkit::random_bank(rng, 2, {2, 2}, 5);
        m.grid = PoolingGrid::global_only();
        PartWeights u;
        u.parts = 2;
        u.regions = 1;
        u.matrix = Eigen::MatrixXd::Zero(3, 2);
        u.matrix(1, 0) = 0.0;  // all-equal scores: always predicts class 0
        m.weights = u;
        EvalReport rep = evaluate(m, s.test.dataset);
        REQUIRE(rep.mean_class_accuracy == Catch::Approx(1.0 / 3.0).margin(1e-12));
        // confusion rows sum to per-class counts
        for (const auto& row : rep.confusion) {
            int sum = 0;
            for (int v : row) sum += v;
            REQUIRE(sum == cfg.test_per_class);
        }
    }

    SECTION("matched filters as parts classify noiseless data perfectly") {
        SynthConfig quiet = cfg;
        quiet.noise = 0.0;
        SynthResult qs = synth_dataset(quiet, 23);
        ModelFile m;
        for (int p = 0; p < quiet.parts_planted; ++p) {
            PartFilter f;
            f.window = {quiet.window, quiet.window};
            f.part_id = p;
            f.weights = qs.patterns.col(p);
            m.bank.parts.push_back(std::move(f));
        }
        m.grid = PoolingGrid::global_only();
        PartWeights u;
        u.parts = quiet.parts_planted;
        u.regions = 1;
        u.matrix = Eigen::MatrixXd::Zero(quiet.classes, quiet.parts_planted);
        for (int p = 0; p < quiet.parts_planted; ++p)
            u.matrix(p % quiet.classes, p) = 1.0;
        m.weights = u;
        EvalReport rep = evaluate(m, qs.test.dataset);
        REQUIRE(rep.mean_class_accuracy == 1.0);
    }

    SECTION("reports serialize deterministically") {
        Rng rng(31);
        ModelFile m;
        m.bank = testkit::random_bank(rng, 2, {2, 2}, 5);
        m.grid = PoolingGrid::standard_1x1_2x2();
        PartWeights u = testkit::random_weights(rng, 3, 2, 5);
        m.weights = u;
        EvalReport a = evaluate(m, s.test.dataset);
        EvalReport b = evaluate(m, s.test.dataset);
        REQUIRE(eval_report_json(a, 1, 2).dump() == eval_report_json(b, 1, 2).dump());
    }
}

TEST_CASE("visualization export") {
    SynthConfig cfg;
    cfg.classes = 2;
    cfg.parts_planted = 2;
    cfg.grid = 5;
    cfg.channels = 4;
    cfg.train_per_class = 4;
    SynthResult s = synth_dataset(cfg, 41);
    Rng rng(43);
    ModelFile m;
    m.bank = testkit::random_bank(rng, 3, {2, 2}, 4);
    m.grid = PoolingGrid::standard_1x1_2x2();
    PartWeights u = testkit::random_weights(rng, 2, 3, 5);
    m.weights = u;
    m.class_names = s.train.class_names;

    SECTION("weight CSV has one row per class and a column per slot") {
        fs::path path = fs::temp_directory_path() / "u.csv";
        export_weights_csv(u, m.class_names, path.string());
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        REQUIRE(line.rfind("class,part0_region0,", 0) == 0);
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == 2);
    }

    SECTION("top-1 detections re-score exactly through part_score") {
        json dets = export_detections(m, s.train, 1);
        REQUIRE(dets.size() == 3);
        for (const json& part : dets) {
            REQUIRE(part["detections"].size() <= 1);
            for (const json& d : part["detections"]) {
                std::string image = d["image"].get<std::string>();
                std::size_t idx = 0;
                for (; idx < s.train.image_ids.size(); ++idx)
                    if (s.train.image_ids[idx] == image) break;
                REQUIRE(idx < s.train.image_ids.size());
                LatentLocation z{d["level"].get<int>(), d["row"].get<int>(),
                                 d["col"].get<int>()};
                double re = part_score(s.train.dataset[idx].pyramid, z,
                                       m.bank.parts[part["part"].get<std::size_t>()]);
                REQUIRE(std::abs(re - d["score"].get<double>()) <= 1e-10);
                // and it is that image's whole-image maximum for the part
                auto rv = response_vector(s.train.dataset[idx].pyramid, m.bank, m.grid);
                REQUIRE(d["score"].get<double>() ==
                        rv.values[rv.slot(part["part"].get<int>(), 0)]);
            }
        }
    }
}
