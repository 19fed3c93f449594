#include "distnet/errors.hpp"
#include "distnet/models.hpp"
#include "distnet/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace distnet;
using namespace distnet::models;
using features::SampleWindow;

namespace {

struct Fixture {
    synth::SynthResult synth;
    std::shared_ptr<const features::PreparedSeries> series;
    features::WindowSet windows;
};

features::PrepareOptions prepare_options(const synth::SynthResult& r) {
    features::PrepareOptions o;
    o.train_cutoff = r.train_cutoff;
    return o;
}

Fixture make_fixture(std::size_t T = 6, std::size_t tau = 4, std::uint64_t seed = 3,
                     const data::Dataset* override_dataset = nullptr, double radius_km = 10.0) {
    Fixture f;
    auto cfg = synth::preset("tiny", seed);
    cfg.hours = 120;
    f.synth = synth::generate(cfg);
    auto opts = prepare_options(f.synth);
    opts.neighbor_radius_km = radius_km;
    f.series = features::PreparedSeries::prepare(override_dataset ? *override_dataset : f.synth.dataset,
                                                 data::Pollutant::pm25, opts);
    features::WindowOptions w;
    w.encoder_length = T;
    w.horizon = tau;
    w.train_cutoff = f.synth.train_cutoff;
    f.windows = features::build_windows(f.series, w);
    return f;
}

ModelConfig small_config(std::size_t T = 6, std::size_t tau = 4) {
    ModelConfig c;
    c.encoder_length = T;
    c.horizon = tau;
    c.conv_layers = 2;
    c.conv_channels = 3;
    c.hidden = 8;
    c.mlp_step_units = 4;
    c.mlp_temporal_units = {6, 5};
    return c;
}

const features::FeatureRange kTarget{"pm25", 5.0, 85.0};

void zero_all(Model& m) {
    for (auto& [name, p] : m.parameters().entries()) {
        for (auto& v : p.mutable_values()) v = 0.0;
    }
}

Tensor weights_for(std::size_t n, std::uint64_t seed) {
    nn::Rng rng(seed);
    std::vector<double> w(n);
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    return Tensor::vector(std::move(w));
}

} // namespace

TEST(Models, KindNamesRoundTrip) {
    for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq,
                   ModelKind::persistence}) {
        EXPECT_EQ(parse_kind(kind_name(k)), k);
    }
    EXPECT_THROW(parse_kind("transformer"), ConfigError);
}

TEST(Models, OutputShapesAndEncoderWidths) {
    const auto f = make_fixture();
    const auto cfg = small_config();
    const auto& w = f.windows.train.front();
    for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq,
                   ModelKind::persistence}) {
        const auto m = Model::create(k, cfg, kTarget, 1);
        const auto y = m.forward(w);
        ASSERT_EQ(y.shape(), Shape({cfg.horizon})) << kind_name(k);
        if (k != ModelKind::persistence) {
            const auto g = m.encoder_input(w);
            EXPECT_EQ(g.shape(), Shape({cfg.encoder_length, cfg.encoder_input(k)})) << kind_name(k);
        }
    }
    EXPECT_EQ(cfg.encoder_input(ModelKind::distnet), 3u + 9u);
    EXPECT_EQ(cfg.encoder_input(ModelKind::neighbor_seq2seq), 8u * 11u + 11u + 9u);
}

TEST(Models, ZeroParametersGiveAffineOfSeluBias) {
    const auto f = make_fixture();
    for (auto k : {ModelKind::distnet, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq}) {
        auto m = Model::create(k, small_config(), kTarget, 2);
        zero_all(m);
        const double c = 0.3;
        m.parameters().get("output.bias").mutable_values()[0] = c;
        const double expected = distnet::selu(Tensor::scalar(c)).item() * (kTarget.max - kTarget.min) + kTarget.min;
        const auto y = m.forward(f.windows.train[3]);
        for (double v : y.values()) EXPECT_NEAR(v, expected, 1e-12) << kind_name(k);
    }
    auto mlp = Model::create(ModelKind::mlp, small_config(), kTarget, 2);
    zero_all(mlp);
    const auto y = mlp.forward(f.windows.train[3]);
    for (double v : y.values()) EXPECT_EQ(v, kTarget.min);
}

TEST(Models, PredictFloorsAtZero) {
    const auto f = make_fixture();
    auto m = Model::create(ModelKind::mlp, small_config(), kTarget, 2);
    zero_all(m);
    for (auto& v : m.parameters().get("mlp.head.bias").mutable_values()) v = -10.0;
    const auto y = m.forward(f.windows.train[0]);
    for (double v : y.values()) EXPECT_LT(v, 0.0);
    for (double v : m.predict(f.windows.train[0])) EXPECT_EQ(v, 0.0);
}

TEST(Models, GradientsPassFiniteDifferences) {
    const auto f = make_fixture();
    const auto cfg = small_config();
    const auto& w = f.windows.train[5];
    const auto weights = weights_for(cfg.horizon, 9);
    for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq}) {
        auto m = Model::create(k, cfg, features::FeatureRange{"pm25", 0.0, 1.0}, 4);
        auto loss = [&] { return sum(m.forward(w) * weights); };
        for (auto& [name, p] : m.parameters().entries()) {
            EXPECT_LT(grad_check_in_place(loss, p), 1e-4) << kind_name(k) << " " << name;
        }
    }
}

// Valid convolutions over the zero-padded patch equal same-padded convolution
// of the whole grid followed by a read at the target cell.
TEST(Models, PatchConvolutionMatchesFullGrid) {
    const auto f = make_fixture();
    for (std::size_t K : {1u, 2u, 3u}) {
        for (std::size_t kernel : {3u, 5u}) {
            auto cfg = small_config();
            cfg.conv_layers = K;
            cfg.kernel = kernel;
            const auto m = Model::create(ModelKind::distnet, cfg, kTarget, 7 + K);
            std::vector<nn::ConvLayer> same;
            for (std::size_t l = 0; l < K; ++l) {
                const std::string p = "conv" + std::to_string(l);
                same.push_back({m.parameters().get(p + ".kernels"), m.parameters().get(p + ".bias"), Padding::same});
            }
            for (std::size_t s = 0; s < f.series->stations().size(); ++s) {
                const auto& w = f.windows.train[s * 7 % f.windows.train.size()];
                const auto full = slice_spot(nn::conv_stack_forward(w.encoder_frames(), same), w.cell().row, w.cell().col);
                const auto patch = m.spatial_features(w);
                ASSERT_EQ(full.shape(), patch.shape());
                for (std::size_t i = 0; i < full.size(); ++i) {
                    EXPECT_NEAR(full.values()[i], patch.values()[i], 1e-12) << "K=" << K << " kernel=" << kernel;
                }
            }
        }
    }
}

TEST(Models, PatchIsZeroOutsideGrid) {
    const auto f = make_fixture();
    const auto& w = f.windows.train.front();
    const auto patch = extract_patch(w, 7);
    EXPECT_EQ(patch.shape(), Shape({6, 15, 15, 11}));
    // 6×6 grid: any patch of radius 7 holds exactly 36 in-grid positions.
    std::size_t nonzero_pos = 0;
    for (std::size_t i = 0; i < 15; ++i) {
        for (std::size_t j = 0; j < 15; ++j) {
            bool any = false;
            for (std::size_t c = 0; c < 11; ++c) any |= patch.at({0, i, j, c}) != 0.0;
            nonzero_pos += any;
        }
    }
    EXPECT_LE(nonzero_pos, 36u);
    const auto c = w.cell();
    for (std::size_t k = 0; k < 11; ++k) EXPECT_EQ(patch.at({0, 7, 7, k}), f.series->value(w.start, c.row, c.col, k));
}

// Swapping the temperature of two cells keeps every normalization range, so
// only the receptive field decides whether the spatial features move.
TEST(Models, ReceptiveFieldBoundsSpatialDependence) {
    auto base = make_fixture();
    const auto& g = base.synth.config.grid;
    auto cfg = small_config();
    cfg.conv_layers = 1;
    const auto m = Model::create(ModelKind::distnet, cfg, kTarget, 5);
    const auto& w0 = base.windows.train[10];
    const auto c = w0.cell();
    auto cheb = [&](std::size_t r, std::size_t col) {
        return std::max(std::abs(static_cast<long>(r) - static_cast<long>(c.row)),
                        std::abs(static_cast<long>(col) - static_cast<long>(c.col)));
    };
    std::vector<std::size_t> far, near;
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t col = 0; col < g.cols; ++col) {
            const auto d = cheb(r, col);
            if (d > 1) far.push_back(r * g.cols + col);
            else if (d == 1) near.push_back(r * g.cols + col);
        }
    ASSERT_GE(far.size(), 2u);
    ASSERT_FALSE(near.empty());
    auto swapped = [&](std::size_t a, std::size_t b) {
        auto ds = base.synth.dataset;
        for (std::size_t h = 0; h < ds.hours; ++h) {
            std::swap(ds.weather[(h * g.cell_count() + a) * data::kWeatherFields],
                      ds.weather[(h * g.cell_count() + b) * data::kWeatherFields]);
        }
        auto opts = prepare_options(base.synth);
        auto s = features::PreparedSeries::prepare(ds, data::Pollutant::pm25, opts);
        SampleWindow w = w0;
        w.series = s;
        return m.spatial_features(w);
    };
    const auto ref = m.spatial_features(w0);
    const auto same = swapped(far[0], far[1]);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(ref.values()[i], same.values()[i]);
    const auto moved = swapped(near[0], far[0]);
    double diff = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) diff += std::fabs(ref.values()[i] - moved.values()[i]);
    EXPECT_GT(diff, 0.0);
}

TEST(Models, ZeroLayersFeedTargetCellChannels) {
    const auto f = make_fixture();
    auto cfg = small_config();
    cfg.conv_layers = 0;
    const auto m = Model::create(ModelKind::distnet, cfg, kTarget, 5);
    const auto local = Model::create(ModelKind::local_seq2seq, cfg, kTarget, 5);
    EXPECT_EQ(cfg.encoder_input(ModelKind::distnet), 11u + 9u);
    const auto& w = f.windows.train[2];
    const auto spatial = m.spatial_features(w);
    const auto spot = w.spot_features();
    ASSERT_EQ(spatial.shape(), spot.shape());
    for (std::size_t i = 0; i < spot.size(); ++i) EXPECT_EQ(spatial.values()[i], spot.values()[i]);
    // Same seed and same parameter layout: DIST-Net with K = 0 is the local model.
    const auto a = m.forward(w), b = local.forward(w);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
}

TEST(Models, NeighborFeaturesWithoutNeighborsRepeatTheCenter) {
    const auto f = make_fixture(6, 4, 3, nullptr, 1e-6);
    std::size_t checked = 0;
    for (const auto& w : f.windows.train) {
        const auto nf = neighbor_features(w, 8);
        ASSERT_EQ(nf.shape(), Shape({6, 88}));
        for (std::size_t t = 0; t < 6; ++t) {
            const std::size_t h = w.start + t;
            for (std::size_t s = 0; s < 8; ++s) {
                EXPECT_EQ(nf.at({t, s * 11}), f.series->station_series(h, w.station));
                for (std::size_t k = 1; k < 11; ++k) {
                    EXPECT_EQ(nf.at({t, s * 11 + k}), f.series->value(h, w.cell().row, w.cell().col, k));
                }
            }
        }
        if (++checked == 20) break;
    }
}

TEST(Models, RandomConfigurationsProduceFiniteHorizonVectors) {
    nn::Rng rng(21);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t T = 3 + rng.below(6);
        const std::size_t tau = 1 + rng.below(5);
        const auto f = make_fixture(T, tau, 30 + static_cast<std::uint64_t>(trial));
        ModelConfig cfg;
        cfg.encoder_length = T;
        cfg.horizon = tau;
        cfg.conv_layers = rng.below(4);
        cfg.kernel = 1 + 2 * rng.below(3);
        cfg.conv_channels = 1 + rng.below(5);
        cfg.hidden = 1 + rng.below(8);
        cfg.hour_embedding = 1 + rng.below(4);
        cfg.weekday_embedding = 1 + rng.below(3);
        cfg.mlp_step_units = 1 + rng.below(5);
        cfg.mlp_temporal_units = {1 + rng.below(6)};
        for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::local_seq2seq, ModelKind::neighbor_seq2seq}) {
            const auto m = Model::create(k, cfg, kTarget, static_cast<std::uint64_t>(trial));
            const auto y = m.forward(f.windows.train.back());
            ASSERT_EQ(y.size(), tau);
            for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
        }
    }
}

TEST(Models, MismatchedWindowNamesStage) {
    const auto f = make_fixture();
    auto cfg = small_config(8, 4);
    const auto m = Model::create(ModelKind::distnet, cfg, kTarget, 1);
    try {
        m.forward(f.windows.train.front());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("T = 6"), std::string::npos);
    }
    cfg = small_config();
    cfg.kernel = 4;
    EXPECT_THROW(Model::create(ModelKind::distnet, cfg, kTarget, 1), ConfigError);
}

TEST(Models, PersistenceRepeatsLastObservation) {
    const auto f = make_fixture();
    const auto m = Model::create(ModelKind::persistence, small_config(), kTarget, 1);
    EXPECT_FALSE(m.trainable());
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& w = f.windows.test[i];
        const double last = f.series->station_reading(w.target_begin() - 1, w.station);
        for (double v : m.predict(w)) EXPECT_EQ(v, last);
    }
}

TEST(Models, CheckpointRoundTripIsBitExact) {
    const auto f = make_fixture();
    const auto dir = std::filesystem::temp_directory_path() / "distnet_test_models";
    std::filesystem::remove_all(dir);
    for (auto k : {ModelKind::distnet, ModelKind::mlp, ModelKind::neighbor_seq2seq}) {
        const auto m = Model::create(k, small_config(), kTarget, 11);
        const auto path = dir / (kind_name(k) + ".json");
        save_checkpoint({m, f.series->normalization(), data::Pollutant::pm25, {{"note", "x"}}}, path);
        const auto cp = load_checkpoint(path);
        EXPECT_EQ(cp.model.kind(), k);
        EXPECT_EQ(cp.run_config.at("note"), "x");
        EXPECT_EQ(cp.normalization.get("pm25").max, f.series->normalization().get("pm25").max);
        const auto a = m.forward(f.windows.test[0]), b = cp.model.forward(f.windows.test[0]);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
    }
}

TEST(Models, CheckpointMismatchIsVersionError) {
    const auto dir = std::filesystem::temp_directory_path() / "distnet_test_models_bad";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto f = make_fixture();
    const auto m = Model::create(ModelKind::local_seq2seq, small_config(), kTarget, 11);
    save_checkpoint({m, f.series->normalization(), data::Pollutant::pm25, {}}, dir / "ok.json");
    nlohmann::json j;
    std::ifstream(dir / "ok.json") >> j;

    auto write = [&](const nlohmann::json& v, const char* name) {
        std::ofstream(dir / name) << v.dump();
        return dir / name;
    };
    auto bad_version = j;
    bad_version["version"] = 99;
    EXPECT_THROW(load_checkpoint(write(bad_version, "v.json")), VersionError);
    auto bad_shape = j;
    bad_shape["model"]["config"]["hidden"] = 9;
    EXPECT_THROW(load_checkpoint(write(bad_shape, "s.json")), VersionError);
    EXPECT_THROW(load_checkpoint(dir / "missing.json"), IoError);
}
