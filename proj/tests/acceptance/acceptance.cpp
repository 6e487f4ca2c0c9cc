// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <stackpool/stackpool.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace stackpool;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool passed;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1 -------------------------------------------------------------------------

Outcome equivalence() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    auto rng = make_rng(1, "acceptance-equivalence");
    auto check = [&](std::vector<std::size_t> ks, std::vector<std::size_t> expect, std::size_t trials) {
        const auto multi = PoolSpec::multi_kernel(ks, 2);
        double fwd = 0, grad = 0;
        std::vector<std::size_t> got;
        for (std::size_t t = 0; t < trials; ++t) {
            Shape shape{static_cast<std::size_t>(uniform_int(rng, 1, 1)), static_cast<std::size_t>(uniform_int(rng, 1, 4)),
                        static_cast<std::size_t>(uniform_int(rng, 1, 64)), static_cast<std::size_t>(uniform_int(rng, 1, 64))};
            std::vector<double> v(numel(shape));
            for (auto& x : v) x = normal01(rng);
            auto r = verify_equivalence(Tensor<double>::from(shape, std::move(v)), multi);
            fwd = std::max(fwd, r.forward_max_abs_diff);
            grad = std::max(grad, r.gradient_max_abs_diff);
            got = r.stacked_kernels;
        }
        ok = ok && fwd == 0 && got == expect;
        detail += format_pool_spec(multi) + " -> " + format_pool_spec(PoolSpec::stacked(got, 2)) +
                  fmt(" fwd %g grad %g; ", fwd, grad);
    };
    check({2, 4, 8}, {2, 2, 3}, 100);
    check({2, 4}, {2, 2}, 100);
    check({2, 4, 8, 16}, {2, 2, 3, 5}, 100);
    const double secs = seconds_since(t0);
    ok = ok && secs < 10;
    return {ok, detail + fmt("%.2f s", secs)};
}

// 2 -------------------------------------------------------------------------

Outcome gradients() {
    const auto t0 = Clock::now();
    auto base = Network<double>::build(NetworkConfig::preset(Architecture::base_s), 2);
    auto image = detail::random_input<double>({1, 1, 32, 32}, derive_seed(2, "gradcheck-image"));
    auto target = detail::random_input<double>({1, 1, 8, 8}, derive_seed(2, "gradcheck-target"));
    bool ok = true;
    std::string detail;
    for (auto spec : {PoolSpec::vanilla(2, 2), PoolSpec::stacked({2, 2, 3}, 2), PoolSpec::multi_kernel({2, 4, 8}, 2)}) {
        auto net = base.with_pool(spec);
        GradcheckConfig cfg;
        cfg.seed = 2;
        auto r = gradcheck(net, image, target, cfg);
        ok = ok && r.passed(cfg.tolerance);
        detail += format_pool_spec(spec) + fmt(" %zu coords, %zu ties, max rel %.2e; ", r.checked, r.ties, r.max_rel_error);
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 60;
    return {ok, detail + fmt("%.2f s", secs)};
}

// 3 -------------------------------------------------------------------------

Outcome timing() {
    const auto t0 = Clock::now();
    const std::vector<PoolSpec> specs{PoolSpec::vanilla(2, 2), PoolSpec::stacked({2, 2, 3}, 2), PoolSpec::multi_kernel({2, 4, 8}, 2)};
    BenchOptions layer;
    layer.reps = 30;
    BenchOptions net;
    net.reps = 100;
    auto rep = merge(bench_pool_layer<double>(specs, 256, 256, layer), bench_network<double>(Architecture::deep, specs, 32, 32, net));
    bool ok = true;
    std::string detail;
    for (auto& c : ordering_checks(rep)) {
        ok = ok && c.evaluated && c.passed;
        detail += c.name + " [" + c.detail + (c.passed ? "] ok; " : "] FAILED; ");
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 300;
    return {ok, detail + fmt("%.1f s", secs)};
}

// 4 -------------------------------------------------------------------------

Outcome density_mass() {
    const auto t0 = Clock::now();
    auto rng = make_rng(4, "acceptance-heads");
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        // Interior: at least 4 sigma from every border.
        Head h{uniform(rng, 16, 112), uniform(rng, 16, 112)};
        auto d = density_map({h}, 128, 128, 4.0);
        double sum = 0;
        for (double v : d.data()) sum += v;
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    auto corner = density_map({Head{0, 0}}, 128, 128, 4.0);
    double corner_sum = 0;
    for (double v : corner.data()) corner_sum += v;
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-3 && corner_sum >= 0.24 && corner_sum <= 0.26 && secs < 30;
    return {ok, fmt("worst interior relative error %.3g, corner mass %.4f, %.2f s", worst, corner_sum, secs)};
}

// 5 -------------------------------------------------------------------------

Outcome metric_identities() {
    bool ok = true;
    auto e = mae_mse({{4, 4}, {7, 7}});
    ok = ok && e.mae == 0 && e.mse == 0;
    e = mae_mse({{3, 4}, {5, 4}});
    ok = ok && e.mae == 1 && e.mse == 1;
    e = mae_mse({{0, 4}, {8, 4}});
    ok = ok && e.mae == 4 && e.mse == 4;
    auto rng = make_rng(5, "acceptance-residuals");
    std::size_t violations = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<CountPair> pairs(static_cast<std::size_t>(uniform_int(rng, 1, 50)));
        for (auto& p : pairs) p = {uniform(rng, 0, 500), uniform(rng, 0, 500)};
        auto r = mae_mse(pairs);
        violations += r.mse * (1 + 1e-12) < r.mae;
    }
    ok = ok && violations == 0;
    return {ok, fmt("hand sets exact, %zu/1000 random sets with MSE < MAE", violations)};
}

// 6 -------------------------------------------------------------------------

Outcome variation_ratio_properties() {
    SceneParams p;
    auto scene = synthesize_scene(17, p).image.reshaped({1, 1, 64, 64});
    bool ok = true;
    double beta_one = 0;
    for (auto spec : {PoolSpec::vanilla(2, 2), PoolSpec::stacked({2, 2, 3}, 2), PoolSpec::multi_kernel({2, 4, 8}, 2)}) {
        auto net = Network<double>::build(NetworkConfig::preset(Architecture::base_m, spec), 6);
        for (auto g : variation_ratio(net, scene, 1.0)) {
            ok = ok && g.has_value();
            if (g) beta_one = std::max(beta_one, std::abs(*g));
        }
    }
    ok = ok && beta_one == 0;

    auto x = testutil::random_tensor({1, 8, 16, 16}, 6, 0.1, 1);
    std::vector<double> twice;
    for (double v : x.data()) twice.push_back(2 * v);
    const double doubled = *variation_ratio_maps(x, Tensor<double>::from(x.shape(), twice));
    ok = ok && doubled == 1.0;

    auto net = Network<double>::build(NetworkConfig::preset(Architecture::base_m), 17);
    auto lib = variation_ratio(net, scene, 2.0);
    auto ref = testutil::scripted_variation_ratio(net, scene, 2.0);
    double diff = 0;
    ok = ok && lib.size() == ref.size() && !lib.empty();
    for (std::size_t l = 0; l < std::min(lib.size(), ref.size()); ++l) {
        ok = ok && lib[l] && ref[l];
        if (lib[l] && ref[l]) diff = std::max(diff, std::abs(*lib[l] - *ref[l]));
    }
    ok = ok && diff <= 1e-10;
    return {ok, fmt("max |gamma| at beta=1: %g; 2X case: %.17g; scripted recomputation max diff %.3g", beta_one, doubled, diff)};
}

// 7 -------------------------------------------------------------------------

Outcome desk_scale_direction() {
    const auto t0 = Clock::now();
    const std::uint64_t seed = 11;
    auto ds = generate_dataset(300, 100, seed, SceneParams{});
    const auto& sp = *ds.splits;
    std::vector<CrowdSample> train_scenes;
    for (auto i : sp.train) train_scenes.push_back(ds.samples[i]);
    auto train_set = make_patch_pairs<double>(train_scenes, 9, seed, 4);
    std::vector<TrainingPair<double>> val_set, test_set;
    std::vector<LabelledImage<double>> test_images;
    for (auto i : sp.validation) val_set.push_back(to_training_pair<double>(ds.samples[i], 4));
    for (auto i : sp.test) {
        auto q = to_training_pair<double>(ds.samples[i], 4);
        test_images.push_back({q.image, q.count});
        test_set.push_back(std::move(q));
    }

    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.adam.lr = 1e-4;
    cfg.seed = seed;
    std::vector<Network<double>> best;
    std::vector<double> mae;
    for (auto spec : {PoolSpec::vanilla(2, 2), PoolSpec::stacked({2, 2, 3}, 2)}) {
        auto net = Network<double>::build(NetworkConfig::preset(Architecture::base_s, spec), seed);
        auto r = train(net, train_set, val_set, cfg);
        mae.push_back(count_mae(r.best, test_set));
        best.push_back(std::move(r.best));
    }
    auto rep = invariance_study(best[0], "vanilla", best[1], "stacked", test_images, 2.0);
    bool ok = true;
    std::string detail = fmt("test MAE vanilla %.4f stacked %.4f (reported only); ", mae[0], mae[1]);
    for (std::size_t layer = 0; layer < rep.layers.size(); ++layer) {
        const auto& v = rep.aggregate("vanilla", layer);
        const auto& s = rep.aggregate("stacked", layer);
        const bool lower = v.mean && s.mean && *s.mean < *v.mean;
        ok = ok && lower;
        detail += fmt("site %zu mean gamma vanilla %.5f stacked %.5f; ", layer, v.mean.value_or(NAN), s.mean.value_or(NAN));
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 1800;
    return {ok, detail + fmt("%.0f s", secs)};
}

// 8 -------------------------------------------------------------------------

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(STACKPOOL_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    const fs::path root = testutil::temp_dir("acceptance_determinism");
    const fs::path log = root / "log.txt";
    const std::string data = (root / "data").string();
    if (cli("gen-data --scenes 20 --test 5 --height 32 --width 32 --max-count 15 --seed 8 --out " + data, log))
        return {false, "gen-data failed"};
    const std::string ck = (root / "train" / "best.ckpt").string();
    const std::vector<std::pair<std::string, std::string>> runs{
        {"gen-data", "gen-data --scenes 20 --test 5 --height 32 --width 32 --max-count 15 --seed 8"},
        {"train", "train --data " + data + " --net base_s --pool stacked:2,2,3:s2 --epochs 6 --patches 2 --seed 8 --quiet"},
        {"eval", "eval --checkpoint " + ck + " --data " + data},
        {"verify", "verify --pool multi:2,4,8:s2 --trials 10 --extents 1x2x24x24"},
        {"verify-gradcheck", "verify --gradcheck --size 16 --weight-samples 20 --input-samples 20"},
        {"invariance", "invariance --vanilla " + ck + " --stacked " + ck + " --data " + data}};
    std::size_t compared = 0;
    for (auto& [name, args] : runs) {
        const fs::path first = root / name, second = root / (name + "_rerun");
        if (cli(args + " --out " + first.string(), log)) return {false, name + " failed: " + detail::read_file(log.string())};
        const std::string sub = args.substr(0, args.find(' '));
        if (cli(sub + " --config " + (first / "run_config.toml").string() + " --out " + second.string(), log))
            return {false, name + " re-run failed: " + detail::read_file(log.string())};
        auto a = nlohmann::json::parse(detail::read_file((first / "run_manifest.json").string()))["artifacts"];
        auto b = nlohmann::json::parse(detail::read_file((second / "run_manifest.json").string()))["artifacts"];
        if (a != b) return {false, name + " re-run produced different artifacts"};
        compared += a.size();
    }
    return {true, fmt("%zu artifacts identical across re-runs of gen-data, train, eval, verify (both modes), invariance", compared)};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"1 equivalence", equivalence},
        {"2 gradients", gradients},
        {"3 timing orderings", timing},
        {"4 density mass", density_mass},
        {"5 metric identities", metric_identities},
        {"6 variation ratio", variation_ratio_properties},
        {"7 desk-scale direction", desk_scale_direction},
        {"8 determinism", determinism},
    };
    bool all = true;
    for (auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.passed;
        std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
