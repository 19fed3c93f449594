// Acceptance suite: runs the ten acceptance criteria and prints one PASS or
// FAIL line for each. Arguments select a subset by number ("acceptance 1 4").
// Artifacts go to $DISTNET_ACCEPTANCE_DIR, default ./acceptance_artifacts.
// The process exits with 1 when any selected criterion fails.

#include "distnet/errors.hpp"
#include "distnet/eval.hpp"
#include "distnet/interpolation.hpp"
#include "distnet/layers.hpp"
#include "distnet/run.hpp"
#include "distnet/synth.hpp"
#include "distnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace distnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::filesystem::path artifact_dir() {
    const char* env = std::getenv("DISTNET_ACCEPTANCE_DIR");
    std::filesystem::path dir = env != nullptr && *env != '\0' ? env : "acceptance_artifacts";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double mean_target(const std::vector<features::SampleWindow>& windows) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) {
        for (double v : w.target) {
            s += v;
            ++n;
        }
    }
    return s / static_cast<double>(n);
}

std::vector<features::SampleWindow> evenly(const std::vector<features::SampleWindow>& all, std::size_t count) {
    return run::subsample(all, count);
}

// ---- 1. gradient correctness -------------------------------------------------

Outcome gradient_correctness() {
    constexpr double kTolerance = 1e-4;
    nn::Rng rng(101);
    auto random = [&rng](Shape shape, bool grad = true) {
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        return Tensor::from(std::move(shape), std::move(v), grad);
    };
    std::map<std::string, double> worst;
    auto record = [&worst](const std::string& what, double err) {
        worst[what] = std::max(worst.count(what) ? worst[what] : 0.0, err);
    };

    // Layers on a 4×4 grid.
    for (auto padding : {Padding::same, Padding::valid}) {
        nn::ParameterSet ps;
        const auto conv = nn::ConvLayer::create(ps, "conv", 3, 5, 4, rng, padding);
        const Tensor x = random({2, 4, 4, 5});
        const Tensor w = random({2, padding == Padding::same ? 4u : 2u, padding == Padding::same ? 4u : 2u, 4}, false);
        auto loss = [&] { return sum(conv.forward(x) * w); };
        const std::string name = padding == Padding::same ? "conv (same)" : "conv (valid)";
        for (auto& [_, p] : ps.entries()) record(name, grad_check_in_place(loss, p));
        record(name, grad_check_in_place(loss, x));
    }
    for (auto act : {nn::Activation::identity, nn::Activation::selu}) {
        nn::ParameterSet ps;
        const auto dense = nn::DenseLayer::create(ps, "dense", 6, 4, act, rng);
        const Tensor x = random({3, 6});
        const Tensor w = random({3, 4}, false);
        auto loss = [&] { return sum(dense.forward(x) * w); };
        for (auto& [_, p] : ps.entries()) record("dense", grad_check_in_place(loss, p));
        record("dense", grad_check_in_place(loss, x));
    }
    {
        nn::ParameterSet ps;
        const auto gru = nn::GRUCell::create(ps, "gru", 5, 8, rng);
        const Tensor x = random({6, 5});
        const Tensor h0 = random({8});
        const Tensor w = random({6, 8}, false);
        auto loss = [&] { return sum(nn::gru_unroll(gru, x, h0) * w); };
        for (auto& [_, p] : ps.entries()) record("gru", grad_check_in_place(loss, p));
        record("gru", grad_check_in_place(loss, x));
        record("gru", grad_check_in_place(loss, h0));
    }
    {
        nn::ParameterSet ps;
        const auto emb = nn::Embedding::create(ps, "embedding", 24, 6, rng);
        const std::vector<std::size_t> ids{3, 7, 3, 23};
        const Tensor w = random({4, 6}, false);
        auto loss = [&] { return sum(emb.lookup(ids) * w); };
        record("embedding", grad_check_in_place(loss, ps.get("embedding.table")));
    }
    {
        const Tensor w = random({10}, false);
        record("selu", grad_check([&](const Tensor& x) { return sum(selu(x) * w); }, random({10})));
        const std::vector<double> y{4.0, 9.0, 0.3, 30.0};
        record("smape loss", grad_check([&](const Tensor& p) { return training::smape_loss(p, y); },
                                        Tensor::vector({5.0, 2.0, 0.5, 41.0})));
    }

    // Full DIST-Net SMAPE loss: 4×4 grid, T = 6, τ = 4, δ = 8.
    synth::SynthConfig cfg = synth::preset("tiny", 5);
    cfg.grid = {4, 4, 39.6, 115.9, 0.1};
    cfg.stations = 4;
    cfg.sources = {{1, 2, 30.0, 0.5, 8}, {3, 0, 20.0, 0.4, 18}};
    cfg.hours = 120;
    const auto r = synth::generate(cfg);
    features::PrepareOptions po;
    po.train_cutoff = r.train_cutoff;
    const auto series = features::PreparedSeries::prepare(r.dataset, data::Pollutant::pm25, po);
    features::WindowOptions wo;
    wo.encoder_length = 6;
    wo.horizon = 4;
    wo.train_cutoff = r.train_cutoff;
    const auto windows = features::build_windows(series, wo);
    models::ModelConfig mc;
    mc.encoder_length = 6;
    mc.horizon = 4;
    mc.hidden = 8;
    mc.conv_channels = 6;
    auto model = models::Model::create(models::ModelKind::distnet, mc, series->target_range(), 3);
    model.initialize_output(mean_target(windows.train));
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& w = windows.train[(k * 37) % windows.train.size()];
        auto loss = [&] { return training::smape_loss(model.forward(w), w.target); };
        for (auto& [_, p] : model.parameters().entries()) record("DIST-Net SMAPE", grad_check_in_place(loss, p));
    }

    double max_err = 0.0;
    std::string detail;
    for (const auto& [name, err] : worst) {
        max_err = std::max(max_err, err);
        detail += (detail.empty() ? "" : ", ") + name + " " + fmt(err, 2);
    }
    return {max_err <= kTolerance, "max relative error " + fmt(max_err, 3) + " (" + detail + ")"};
}

// ---- 2. metric exactness -----------------------------------------------------

Outcome metric_exactness() {
    struct Case {
        std::string what;
        double got;
        double expected;
    };
    const std::vector<Case> cases{
        {"SMAPE (3, 1)", eval::smape_metric(std::vector<double>{3.0}, std::vector<double>{1.0}), 1.0},
        {"RMSE ([0,0], [3,4])", eval::rmse_metric(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}),
         std::sqrt(12.5)},
        {"SMAPE exact forecast", eval::smape_metric(std::vector<double>{5.0, 7.0}, std::vector<double>{5.0, 7.0}), 0.0},
        {"SMAPE (0, 0)", eval::smape_metric(std::vector<double>{0.0}, std::vector<double>{0.0}), 0.0},
        {"SMAPE opposite", eval::smape_metric(std::vector<double>{0.0, 4.0}, std::vector<double>{4.0, 0.0}), 2.0},
        {"SMAPE (1, 3)", eval::smape_metric(std::vector<double>{1.0}, std::vector<double>{3.0}), 1.0},
        {"RMSE ([1,2,3], [1,2,3])",
         eval::rmse_metric(std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{1.0, 2.0, 3.0}), 0.0},
        {"RMSE ([2], [5])", eval::rmse_metric(std::vector<double>{2.0}, std::vector<double>{5.0}), 3.0},
    };
    std::string failures;
    for (const auto& c : cases) {
        if (c.got != c.expected) {
            failures += (failures.empty() ? "" : "; ") + c.what + " gave " + fmt(c.got, 17);
        }
    }
    return {failures.empty(),
            failures.empty() ? std::to_string(cases.size()) + " hand-computed values match exactly" : failures};
}

// ---- 3. interpolation properties ---------------------------------------------

// Independent point-in-hull test (monotone chain).
bool inside_hull(std::vector<grid::Point2> pts, grid::Point2 q) {
    std::sort(pts.begin(), pts.end(), [](auto a, auto b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    auto cross = [](grid::Point2 o, grid::Point2 a, grid::Point2 b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<grid::Point2> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    for (std::size_t i = 0; i < hull.size(); ++i) {
        if (cross(hull[i], hull[(i + 1) % hull.size()], q) < -1e-12) return false;
    }
    return true;
}

Outcome interpolation_properties() {
    const grid::GridSpec g{11, 12, 39.5, 115.9, 0.1};
    constexpr std::size_t kStations = 35;
    nn::Rng rng(35);
    double exact_err = 0.0, affine_err = 0.0, perm_err = 0.0, min_value = std::numeric_limits<double>::infinity();
    std::size_t hull_cells = 0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<grid::Point2> pts(kStations);
        for (auto& p : pts) p = {rng.uniform(0.0, 12.0), rng.uniform(0.0, 11.0)};

        // Spiky readings: exactness at stations and nonnegativity.
        std::vector<double> vals(kStations);
        for (std::size_t i = 0; i < kStations; ++i) vals[i] = i % 3 == 0 ? rng.uniform(0.0, 400.0) : 0.0;
        const auto out = grid::interpolate_grid({pts, vals}, g);
        for (double v : out.values()) min_value = std::min(min_value, v);
        for (std::size_t i = 0; i < kStations; ++i) {
            const auto row = static_cast<std::size_t>(pts[i].y), col = static_cast<std::size_t>(pts[i].x);
            double s = 0.0;
            int n = 0;
            for (std::size_t j = 0; j < kStations; ++j) {
                if (static_cast<std::size_t>(pts[j].y) == row && static_cast<std::size_t>(pts[j].x) == col) {
                    s += vals[j];
                    ++n;
                }
            }
            exact_err = std::max(exact_err, std::fabs(out.at({row, col}) - s / n));
        }

        // Permutation invariance.
        std::vector<std::size_t> perm(kStations);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = kStations; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        grid::ScatterField shuffled;
        for (auto i : perm) {
            shuffled.positions.push_back(pts[i]);
            shuffled.values.push_back(vals[i]);
        }
        const auto permuted = grid::interpolate_grid(shuffled, g);
        for (std::size_t k = 0; k < out.size(); ++k) {
            perm_err = std::max(perm_err, std::fabs(out.values()[k] - permuted.values()[k]));
        }

        // Affine field: hull cells without a station reproduce f at the center.
        auto f = [](grid::Point2 p) { return 5.0 + 2.0 * p.x + 3.0 * p.y; };
        std::vector<double> affine(kStations);
        for (std::size_t i = 0; i < kStations; ++i) affine[i] = f(pts[i]);
        const grid::InterpolationPlan plan(g, pts);
        const auto fitted = plan.evaluate(affine);
        for (std::size_t c = 0; c < g.cell_count(); ++c) {
            const grid::Point2 q = grid::cell_center({c / g.cols, c % g.cols});
            if (plan.rule(c) != grid::InterpolationPlan::CellRule::hull || !inside_hull(pts, q)) continue;
            ++hull_cells;
            affine_err = std::max(affine_err, std::fabs(fitted[c] - f(q)));
        }
    }
    const bool pass = exact_err <= 1e-10 && affine_err <= 1e-8 && min_value >= 0.0 && perm_err <= 1e-12 &&
                      hull_cells > 0;
    return {pass, "station error " + fmt(exact_err, 3) + ", affine error " + fmt(affine_err, 3) + " over " +
                      std::to_string(hull_cells) + " hull cells, min value " + fmt(min_value, 3) +
                      ", permutation error " + fmt(perm_err, 3)};
}

// ---- 4. overfit sanity (shared with 6 and 8) -----------------------------------

constexpr std::size_t kOverfitWindows = 200;
constexpr std::size_t kOverfitSteps = 2000;
constexpr std::size_t kOverfitBatch = 32;
// Early stopping watches an evenly spaced quarter of the training windows;
// the pass/fail loss is measured on all of them.
constexpr std::size_t kOverfitValWindows = 50;

struct OverfitRun {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    training::TrainReport report;
    std::vector<eval::Forecast> forecasts;
    std::vector<std::string> station_ids;
    double seconds = 0.0;
};

const OverfitRun& overfit_run() {
    static std::optional<OverfitRun> cached;
    if (cached) {
        return *cached;
    }
    const auto start = std::chrono::steady_clock::now();
    const auto r = synth::generate(synth::preset("tiny", 1));
    features::PrepareOptions po;
    po.train_cutoff = r.train_cutoff;
    const auto series = features::PreparedSeries::prepare(r.dataset, data::Pollutant::pm25, po);
    features::WindowOptions wo;
    wo.train_cutoff = r.train_cutoff;
    const auto windows = evenly(features::build_windows(series, wo).train, kOverfitWindows);
    if (windows.size() != kOverfitWindows) {
        throw DataError("tiny preset yields only " + std::to_string(windows.size()) + " training windows");
    }
    auto model = models::Model::create(models::ModelKind::distnet, models::ModelConfig{}, series->target_range(), 1);
    model.initialize_output(mean_target(windows));
    OverfitRun out;
    out.initial_loss = training::mean_loss(model, windows);
    training::TrainConfig tc;
    tc.batch_size = kOverfitBatch;
    tc.learning_rate = 1e-3;
    tc.max_steps = kOverfitSteps;
    tc.max_epochs = kOverfitSteps;
    tc.patience = kOverfitSteps;
    tc.target_loss = 0.05;
    out.report = training::train(model, windows, evenly(windows, kOverfitValWindows), tc);
    out.final_loss = training::mean_loss(model, windows);
    out.forecasts = eval::forecast_windows(model, windows);
    for (const auto& s : series->stations().stations()) out.station_ids.push_back(s.id);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cached = std::move(out);
    return *cached;
}

Outcome overfit_sanity() {
    const auto& run = overfit_run();
    const bool pass = run.final_loss < 0.05 && run.report.steps <= kOverfitSteps && run.seconds < 600.0;
    return {pass, "SMAPE loss " + fmt(run.initial_loss) + " -> " + fmt(run.final_loss) + " after " +
                      std::to_string(run.report.steps) + " steps (batch " + std::to_string(kOverfitBatch) +
                      ", lr 1e-3, " + run.report.stop_reason + ", " + fmt(run.seconds, 3) + " s)"};
}

// ---- 5. model ordering ---------------------------------------------------------

struct OrderingResult {
    std::string name;
    double smape = 0.0;
    double rmse = 0.0;
    std::size_t epochs = 0;
    double seconds = 0.0;
};

Outcome model_ordering() {
    const auto start = std::chrono::steady_clock::now();
    const auto r = synth::generate(synth::preset("beijing-like", 7));
    features::PrepareOptions po;
    po.train_cutoff = r.train_cutoff;
    const auto series = features::PreparedSeries::prepare(r.dataset, data::Pollutant::pm25, po);
    features::WindowOptions wo;
    wo.train_cutoff = r.train_cutoff;
    const auto all = features::build_windows(series, wo);
    const auto train_set = evenly(all.train, 40000);
    const auto val_set = evenly(all.validation, 3000);
    const auto test_set = evenly(all.test, 6000);

    training::TrainConfig tc;
    tc.batch_size = 32;
    tc.learning_rate = 1e-3;
    tc.max_epochs = 8;
    tc.patience = 2;
    std::vector<OrderingResult> results;
    std::vector<std::string> ids;
    for (const auto& s : series->stations().stations()) ids.push_back(s.id);
    for (auto kind : {models::ModelKind::distnet, models::ModelKind::local_seq2seq, models::ModelKind::mlp}) {
        const auto t0 = std::chrono::steady_clock::now();
        auto model = models::Model::create(kind, models::ModelConfig{}, series->target_range(), 11);
        model.initialize_output(mean_target(train_set));
        const auto report = training::train(model, train_set, val_set, tc);
        const auto forecasts = eval::forecast_windows(model, test_set);
        const auto result = eval::evaluate_forecasts("pm25", ids, forecasts);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        results.push_back({models::kind_name(kind), result.smape, result.rmse, report.epochs.size(), secs});
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    nlohmann::json summary = nlohmann::json::array();
    for (const auto& x : results) {
        summary.push_back({{"model", x.name}, {"smape", x.smape}, {"rmse", x.rmse}, {"epochs", x.epochs},
                           {"seconds", x.seconds}});
    }
    run::write_json(artifact_dir() / "model_ordering.json",
                    {{"results", summary},
                     {"train_windows", train_set.size()},
                     {"validation_windows", val_set.size()},
                     {"test_windows", test_set.size()},
                     {"train_config", tc.to_json()}});

    constexpr double kTie = 0.005;
    const bool ordered = results[0].smape <= results[1].smape + kTie && results[1].smape <= results[2].smape + kTie;
    std::string detail;
    for (const auto& x : results) {
        detail += (detail.empty() ? "" : ", ") + x.name + " " + fmt(x.smape);
    }
    return {ordered && total < 7200.0, "test SMAPE " + detail + " (" + fmt(total, 4) + " s)"};
}

// ---- 6. horizon stability --------------------------------------------------------

Outcome horizon_stability() {
    const auto& run = overfit_run();
    const auto result = eval::evaluate_forecasts("pm25", run.station_ids, run.forecasts);
    eval::emit_report(result, eval::band_aggregate(run.forecasts), run.station_ids, artifact_dir() / "overfit_report",
                      {{"run", "overfit"}, {"seed", 1}});
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& s : result.segments) {
        lo = std::min(lo, s.smape);
        hi = std::max(hi, s.smape);
    }
    const bool pass = result.segments.size() == 8 && hi <= 2.0 * lo;
    return {pass, std::to_string(result.segments.size()) + " segments, SMAPE min " + fmt(lo) + " max " + fmt(hi) +
                      " (ratio " + fmt(hi / lo, 3) + ")"};
}

// ---- 7. band coverage ------------------------------------------------------------

Outcome band_coverage() {
    // Readings are the true field plus N(0, σ); forecasts add independent
    // N(0, σ) noise to the same field, so truth and forecasts are exchangeable.
    constexpr double kSigma = 2.0;
    constexpr std::size_t kTau = 48;
    auto cfg = synth::preset("tiny", 13);
    cfg.hours = 24 * 120;
    cfg.noise_std = kSigma;
    const auto r = synth::generate(cfg);
    const auto& ds = r.dataset;
    const auto& field = r.truth[0];
    nn::Rng rng(1313);
    std::vector<eval::Forecast> forecasts;
    for (std::size_t s = 0; s < ds.stations.size(); ++s) {
        const auto cell = ds.stations[s].cell;
        const std::size_t idx = cell.row * cfg.grid.cols + cell.col;
        for (std::size_t start = 0; start + kTau <= ds.hours; ++start) {
            eval::Forecast f{s, ds.start + static_cast<data::Hour>(start), std::vector<double>(kTau),
                             std::vector<double>(kTau)};
            for (std::size_t t = 0; t < kTau; ++t) {
                const std::size_t h = start + t;
                f.prediction[t] = field[h * cfg.grid.cell_count() + idx] + kSigma * rng.normal();
                f.truth[t] = ds.reading(data::Pollutant::pm25, h, s);
            }
            forecasts.push_back(std::move(f));
        }
    }
    std::vector<eval::BandPoint> interior;
    for (const auto& p : eval::band_aggregate(forecasts)) {
        if (p.count == kTau) interior.push_back(p);
    }
    const double coverage = eval::band_coverage(interior);
    return {std::fabs(coverage - 0.95) <= 0.03,
            "coverage " + fmt(coverage) + " over " + std::to_string(interior.size()) + " station-hours"};
}

// ---- 8. segment/overall consistency ------------------------------------------------

double segment_gap(const eval::EvalResult& result) {
    double weighted = 0.0;
    std::size_t n = 0;
    for (const auto& s : result.segments) {
        weighted += s.smape * static_cast<double>(s.n);
        n += s.n;
    }
    return std::fabs(weighted / static_cast<double>(n) - result.smape);
}

Outcome segment_consistency() {
    const auto& run = overfit_run();
    double worst = segment_gap(eval::evaluate_forecasts("pm25", run.station_ids, run.forecasts));
    nn::Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<eval::Forecast> f;
        for (std::size_t i = 0; i < 40; ++i) {
            eval::Forecast x{i % 3, static_cast<data::Hour>(i), std::vector<double>(48), std::vector<double>(48)};
            for (std::size_t t = 0; t < 48; ++t) {
                x.prediction[t] = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 300.0);
                x.truth[t] = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 300.0);
            }
            f.push_back(std::move(x));
        }
        worst = std::max(worst, segment_gap(eval::evaluate_forecasts("pm25", {"a", "b", "c"}, f)));
    }
    return {worst <= 1e-12, "max |weighted segment mean - overall| = " + fmt(worst, 3)};
}

// ---- 9. determinism ------------------------------------------------------------------

Outcome determinism() {
    const auto base = artifact_dir() / "determinism";
    std::filesystem::remove_all(base);
    const auto manifest = synth::write_dataset(synth::generate(synth::preset("tiny", 9)), base / "data");
    std::vector<std::string> metrics;
    for (const char* name : {"a", "b"}) {
        run::RunConfig c;
        c.manifest = manifest;
        c.output_dir = base / name / "train";
        c.seed = 21;
        c.model_config.encoder_length = 24;
        c.model_config.horizon = 12;
        c.model_config.conv_channels = 8;
        c.model_config.hidden = 16;
        c.train.max_epochs = 3;
        c.train.batch_size = 16;
        c.stride = 4;
        c.validate();
        const auto trained = run::train_run(c);
        const auto checkpoint = models::load_checkpoint(trained.checkpoint_path);
        run::evaluate_run(checkpoint, {}, base / name / "eval");
        metrics.push_back(slurp(base / name / "eval" / "metrics.csv"));
    }
    const bool pass = !metrics[0].empty() && metrics[0] == metrics[1];
    return {pass, pass ? "metrics.csv byte-identical across two train+evaluate runs (" +
                             std::to_string(metrics[0].size()) + " bytes)"
                       : "metrics.csv differs between runs"};
}

// ---- 10. synthetic-generator physics ---------------------------------------------------

Outcome generator_physics() {
    nn::Rng rng(10);
    const std::size_t rows = 11, cols = 12;
    double worst_drift = 0.0, min_value = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> c(rows * cols);
        for (auto& x : c) x = rng.uniform(0.0, 100.0);
        const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0), d = rng.uniform(0.0, 0.25);
        const double dt = synth::stable_dt(u, v, d);
        const double m0 = std::accumulate(c.begin(), c.end(), 0.0);
        for (int i = 0; i < 1000; ++i) {
            synth::advect_diffuse_step(c, rows, cols, u, v, d, dt);
            min_value = std::min(min_value, *std::min_element(c.begin(), c.end()));
        }
        const double m1 = std::accumulate(c.begin(), c.end(), 0.0);
        worst_drift = std::max(worst_drift, std::fabs(m1 - m0) / m0);
    }
    // Whole generator with sources, decay and noise: fields and readings stay
    // nonnegative.
    for (const char* name : {"tiny", "beijing-like"}) {
        auto cfg = synth::preset(name, 4);
        cfg.hours = 24 * 30;
        const auto r = synth::generate(cfg);
        for (const auto& t : r.truth) {
            for (double x : t) min_value = std::min(min_value, x);
        }
        for (const auto& p : r.dataset.pollution) {
            for (double x : p) {
                if (!std::isnan(x)) min_value = std::min(min_value, x);
            }
        }
    }
    return {worst_drift <= 1e-9 && min_value >= 0.0,
            "relative mass drift per 1000 steps " + fmt(worst_drift, 3) + ", min value " + fmt(min_value, 3)};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"metric exactness", metric_exactness},
        {"interpolation properties", interpolation_properties},
        {"overfit sanity", overfit_sanity},
        {"model ordering", model_ordering},
        {"horizon stability", horizon_stability},
        {"band coverage", band_coverage},
        {"segment/overall consistency", segment_consistency},
        {"determinism", determinism},
        {"generator physics", generator_physics},
    };
    std::vector<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion '" << argv[i] << "'\n";
            return 2;
        }
        selected.push_back(static_cast<std::size_t>(k));
    }
    if (selected.empty()) {
        for (std::size_t k = 1; k <= criteria.size(); ++k) selected.push_back(k);
    }
    bool all = true;
    for (std::size_t k : selected) {
        const auto& [name, check] = criteria[k - 1];
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << k << " " << name << ": " << o.detail << " ["
                  << fmt(secs, 3) << " s]" << std::endl;
    }
    return all ? 0 : 1;
}
