// Command-line entry point: gen-data, train, eval, verify, bench, invariance.
//
// Every subcommand writes <out>/run_config.toml (the resolved options, minus
// --out/--force) and <out>/run_manifest.json (config, seed, FNV-1a hashes of
// every file written).  `stackpool <cmd> --config <out>/run_config.toml
// --out <dir>` repeats a run.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackpool/stackpool.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stackpool;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string out;
    std::uint64_t seed = 0;
    bool force = false;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
    auto* o = sub->add_option("--out", c.out, "output directory");
    if (out_required) o->required();
    sub->add_option("--seed", c.seed, "root random seed")->capture_default_str();
    sub->add_flag("--force", c.force, "allow writing into a non-empty output directory");
}

void prepare_out(const Common& c) {
    if (fs::exists(c.out)) {
        if (!fs::is_directory(c.out)) throw UsageError("--out '" + c.out + "' exists and is not a directory");
        if (!fs::is_empty(c.out) && !c.force)
            throw UsageError("output directory '" + c.out + "' is not empty (pass --force to overwrite)");
    }
    fs::create_directories(c.out);
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string resolved_config(const CLI::App& app, const std::string& sub) {
    std::istringstream in(app.config_to_str(true, false));
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.rfind(sub + ".", 0) != 0) continue;
        if (line.rfind(sub + ".out=", 0) == 0 || line.rfind(sub + ".force=", 0) == 0) continue;
        // Unset strings and lists: written as "" they would read back as one empty value.
        if (line.size() >= 3 && line.compare(line.size() - 3, 3, "=\"\"") == 0) continue;
        out += line + "\n";
    }
    return out;
}

void write_run_files(const CLI::App& app, const std::string& sub, const Common& c, const json& extra = json::object()) {
    const fs::path dir = c.out;
    const std::string config = resolved_config(app, sub);
    detail::write_file((dir / "run_config.toml").string(), config);

    std::vector<fs::path> files;
    for (auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(fs::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    json artifacts = json::object();
    for (auto& f : files) artifacts[f.generic_string()] = "fnv1a64:" + hex64(fnv1a64(detail::read_file((dir / f).string())));

    json m = extra;
    m["command"] = sub;
    m["seed"] = c.seed;
    m["config"] = config;
    m["artifacts"] = artifacts;
    m["rerun"] = "stackpool " + sub + " --config run_config.toml --out <dir>";
    detail::write_file((dir / "run_manifest.json").string(), m.dump(2) + "\n");
}

std::vector<std::size_t> parse_extents(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string piece;
    while (std::getline(ss, piece, 'x')) {
        std::size_t pos = 0;
        const auto v = std::stoul(piece, &pos);
        if (pos != piece.size() || v == 0) throw UsageError("bad extents '" + s + "' (expected e.g. 1x4x64x64)");
        out.push_back(v);
    }
    return out;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------

struct GenData {
    Common c;
    std::size_t scenes = 300;
    std::size_t test = 100;
    SceneParams params;
};

int run_gen_data(const CLI::App& app, GenData& g) {
    prepare_out(g.c);
    if (g.c.force) {
        fs::remove_all(fs::path(g.c.out) / "images");
        fs::remove_all(fs::path(g.c.out) / "annotations");
    }
    auto ds = generate_dataset(g.scenes, g.test, g.c.seed, g.params);
    json extra{{"seed", g.c.seed}, {"params", to_json(g.params)}, {"scenes", g.scenes}, {"test_scenes", g.test}};
    write_dataset(g.c.out, ds, extra);
    std::size_t total = 0;
    for (auto& s : ds.samples) total += s.count();
    std::cout << "wrote " << ds.samples.size() << " scenes (" << total << " heads) to " << g.c.out << "\n";
    write_run_files(app, "gen-data", g.c, {{"total_heads", total}});
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
    Common c;
    std::string data;
    std::string net = "base_s";
    std::string pool = "vanilla:2:s2";
    bool output_relu = false;
    TrainConfig cfg;
    std::size_t patches = 9;
    std::size_t max_train_images = 0;
    double assert_loss_ratio = 0;
    bool quiet = false;
};

std::vector<CrowdSample> pick(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<CrowdSample> out;
    for (auto i : idx) out.push_back(ds.samples.at(i));
    return out;
}

DatasetSplit resolve_split(const Dataset& ds, std::uint64_t seed) {
    if (ds.splits && !ds.splits->train.empty() && !ds.splits->validation.empty()) return *ds.splits;
    auto s = split(ds.samples.size(), seed);
    if (ds.splits) s.test = ds.splits->test;
    return s;
}

int run_train(const CLI::App& app, TrainOpts& t) {
    if (!fs::is_directory(t.data)) throw UsageError("dataset directory '" + t.data + "' not found (create one with gen-data)");
    t.cfg.seed = t.c.seed;
    t.cfg.validate();
    auto config = NetworkConfig::preset(parse_architecture(t.net), parse_pool_spec(t.pool));
    config.output_relu = t.output_relu;
    prepare_out(t.c);

    const auto ds = load_dataset(t.data);
    const auto sp = resolve_split(ds, t.c.seed);
    auto train_idx = sp.train;
    if (t.max_train_images && train_idx.size() > t.max_train_images) train_idx.resize(t.max_train_images);
    const std::size_t f = config.downsample();
    const auto train_set = make_patch_pairs<double>(pick(ds, train_idx), t.patches, t.c.seed, f);
    std::vector<TrainingPair<double>> val_set;
    for (auto i : sp.validation) val_set.push_back(to_training_pair<double>(ds.samples[i], f));

    auto net = Network<double>::build(config, t.c.seed);
    const fs::path out = t.c.out;
    std::cout << "training " << t.net << " with " << t.pool << " on " << train_set.size() << " patches, "
              << val_set.size() << " validation images\n";
    try {
        auto result = train(net, train_set, val_set, t.cfg, [&](const EpochRecord& e) {
            if (t.quiet) return;
            std::cout << "epoch " << e.epoch << " loss " << pct(e.train_loss) << " train_mae " << pct(e.train_mae);
            if (e.val_mae) std::cout << " val_mae " << pct(*e.val_mae);
            std::cout << "\n";
        });
        CheckpointInfo info;
        info.seed = t.c.seed;
        info.epoch = result.log.best_epoch.value_or(0);
        info.val_mae = result.log.best_val_mae;
        save_checkpoint((out / "best.ckpt").string(), result.best, info);
        detail::write_file((out / "train_log.csv").string(), train_log_csv(result.log));
        auto summary = train_log_summary(result.log);
        summary["network"] = t.net;
        summary["pool"] = t.pool;
        summary["train_patches"] = train_set.size();
        summary["validation_images"] = val_set.size();
        summary["config"] = to_json(t.cfg);
        detail::write_file((out / "train_summary.json").string(), summary.dump(2) + "\n");
        write_run_files(app, "train", t.c);

        const double first = result.log.epochs.front().train_loss, last = result.log.epochs.back().train_loss;
        std::cout << "best epoch " << info.epoch << " val_mae " << pct(info.val_mae.value_or(0)) << "; train loss " << pct(first)
                  << " -> " << pct(last) << "\n";
        if (t.assert_loss_ratio > 0 && !(last < t.assert_loss_ratio * first)) {
            std::cerr << "assertion failed: final train loss " << last << " is not below " << t.assert_loss_ratio
                      << " x initial " << first << "\n";
            return 1;
        }
    } catch (const TrainingDiverged& e) {
        detail::write_file((out / "train_log.csv").string(), train_log_csv(e.log));
        std::cerr << e.what() << " (partial log written)\n";
        return 2;
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalOpts {
    Common c;
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::size_t buckets = 4;
    bool clamp = false;
};

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& name, std::uint64_t seed) {
    if (name == "all") {
        std::vector<std::size_t> all(ds.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    if (name == "test") {
        if (!ds.splits) throw UsageError("dataset has no split information; use --split all");
        return ds.splits->test;
    }
    const auto sp = resolve_split(ds, seed);
    if (name == "train") return sp.train;
    if (name == "validation") return sp.validation;
    throw UsageError("unknown split '" + name + "' (train, validation, test or all)");
}

int run_eval(const CLI::App& app, EvalOpts& e) {
    if (!fs::exists(e.checkpoint)) throw UsageError("checkpoint '" + e.checkpoint + "' not found");
    if (!fs::is_directory(e.data)) throw UsageError("dataset directory '" + e.data + "' not found");
    auto ck = load_checkpoint<double>(e.checkpoint);
    const auto ds = load_dataset(e.data);
    const auto idx = split_indices(ds, e.split, e.c.seed);
    if (idx.empty()) throw UsageError("the '" + e.split + "' split is empty; nothing to evaluate");
    prepare_out(e.c);

    const std::size_t f = ck.net.config().downsample();
    std::vector<CountPair> pairs;
    std::vector<std::string> ids;
    {
        NoGradGuard guard;
        for (auto i : idx) {
            auto p = to_training_pair<double>(ds.samples[i], f);
            auto y = ck.net.forward(p.image);
            if (e.clamp)
                for (auto& v : y.mutable_data()) v = std::max(v, 0.0);
            pairs.push_back({predicted_count(y)[0], p.count});
            ids.push_back(ds.ids[i]);
        }
    }
    const auto err = mae_mse(pairs);
    json groups = json::array();
    for (auto& g : group_by_density(pairs, e.buckets))
        groups.push_back({{"size", g.size}, {"min_gt", g.min_gt}, {"max_gt", g.max_gt},
                          {"mae", g.mae ? json(*g.mae) : json(nullptr)}});
    const fs::path out = e.c.out;
    detail::write_file((out / "counts.csv").string(), count_results_csv(pairs, ids));
    json metrics{{"split", e.split}, {"images", pairs.size()}, {"mae", err.mae}, {"mse", err.mse}, {"groups", groups},
                 {"checkpoint", {{"network", ck.info.network}, {"pool", ck.info.pool}, {"epoch", ck.info.epoch}}}};
    detail::write_file((out / "metrics.json").string(), metrics.dump(2) + "\n");
    write_run_files(app, "eval", e.c);
    std::cout << e.split << ": " << pairs.size() << " images, MAE " << pct(err.mae) << ", MSE " << pct(err.mse) << "\n";
    if (err.mse + 1e-12 < err.mae) {
        std::cerr << "assertion failed: MSE < MAE\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct VerifyOpts {
    Common c;
    std::string pool = "multi:2,4,8:s2";
    std::size_t trials = 100;
    std::string extents = "1x4x64x64";
    bool gradcheck = false;
    std::string net = "base_s";
    std::size_t size = 32;
    std::vector<std::string> pools{"vanilla:2:s2", "stacked:2,2,3:s2", "multi:2,4,8:s2"};
    GradcheckConfig gc;
};

int run_verify(const CLI::App& app, VerifyOpts& v) {
    json report;
    bool ok = true;
    if (!v.gradcheck) {
        const auto multi = parse_pool_spec(v.pool);
        if (multi.variant != PoolVariant::multi_kernel) throw UsageError("--pool must be a multi-kernel spec, e.g. multi:2,4,8:s2");
        const auto stacked = stacked_equivalent(multi);  // throws on non-divisible kernel sets
        const auto maxe = parse_extents(v.extents);
        if (maxe.size() != 4) throw UsageError("--extents needs four values (batch x channels x h x w)");
        prepare_out(v.c);
        auto rng = make_rng(v.c.seed, "verify");
        double fwd = 0, grad = 0;
        for (std::size_t t = 0; t < v.trials; ++t) {
            Shape shape(4);
            for (std::size_t d = 0; d < 4; ++d) shape[d] = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(maxe[d])));
            std::vector<double> vals(numel(shape));
            for (auto& x : vals) x = normal01(rng);
            auto r = verify_equivalence(Tensor<double>::from(shape, std::move(vals)), multi);
            fwd = std::max(fwd, r.forward_max_abs_diff);
            grad = std::max(grad, r.gradient_max_abs_diff);
        }
        ok = fwd == 0 && grad == 0;
        report = {{"mode", "equivalence"},     {"multi", format_pool_spec(multi)}, {"stacked", format_pool_spec(stacked)},
                  {"trials", v.trials},        {"max_extents", maxe},             {"forward_max_abs_diff", fwd},
                  {"gradient_max_abs_diff", grad}, {"passed", ok}};
        std::cout << format_pool_spec(multi) << " vs " << format_pool_spec(stacked) << ": forward max diff " << fwd
                  << ", gradient max diff " << grad << " over " << v.trials << " trials\n";
    } else {
        const auto arch = parse_architecture(v.net);
        std::vector<PoolSpec> specs;
        for (auto& p : v.pools) specs.push_back(parse_pool_spec(p));
        prepare_out(v.c);
        auto base = Network<double>::build(NetworkConfig::preset(arch, specs.at(0)), v.c.seed);
        const std::size_t f = base.config().downsample();
        if (v.size % f) throw UsageError("--size must be divisible by " + std::to_string(f));
        auto image = detail::random_input<double>({1, 1, v.size, v.size}, derive_seed(v.c.seed, "gradcheck-image"));
        auto target = detail::random_input<double>({1, 1, v.size / f, v.size / f}, derive_seed(v.c.seed, "gradcheck-target"));
        v.gc.seed = v.c.seed;
        json rows = json::array();
        for (auto& s : specs) {
            auto net = base.with_pool(s);
            auto r = gradcheck(net, image, target, v.gc);
            const bool pass = r.passed(v.gc.tolerance);
            ok = ok && pass;
            rows.push_back({{"pool", format_pool_spec(s)}, {"checked", r.checked}, {"ties", r.ties},
                            {"max_rel_error", r.max_rel_error}, {"worst", r.worst}, {"passed", pass}});
            std::cout << format_pool_spec(s) << ": " << r.checked << " coordinates, " << r.ties << " ties skipped, max rel error "
                      << r.max_rel_error << (pass ? " ok" : " FAIL") << "\n";
        }
        report = {{"mode", "gradcheck"}, {"network", v.net}, {"size", v.size}, {"step", v.gc.step},
                  {"tolerance", v.gc.tolerance}, {"results", rows}, {"passed", ok}};
    }
    detail::write_file((fs::path(v.c.out) / "verify.json").string(), report.dump(2) + "\n");
    write_run_files(app, "verify", v.c);
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct BenchOpts {
    Common c;
    std::vector<std::string> pools{"vanilla:2:s2", "stacked:2,2,3:s2", "multi:2,4,8:s2"};
    std::size_t layer_size = 256;
    std::string net = "deep";
    std::size_t net_size = 32;
    std::size_t reps = 30;
    std::size_t net_reps = 100;
    std::size_t warmups = 5;
    double min_sample_ms = 2.0;
    bool skip_layer = false;
    bool skip_network = false;
    std::string baseline;
};

int run_bench(const CLI::App& app, BenchOpts& b) {
    std::vector<PoolSpec> specs;
    for (auto& p : b.pools) specs.push_back(parse_pool_spec(p));
    const auto arch = parse_architecture(b.net);
    std::optional<BenchReport> baseline;
    if (!b.baseline.empty()) {
        if (!fs::exists(b.baseline)) throw UsageError("baseline report '" + b.baseline + "' not found");
        baseline = bench_report_from_json(json::parse(detail::read_file(b.baseline)));
    }
    prepare_out(b.c);
    BenchOptions lo{b.reps, b.warmups, b.min_sample_ms, b.c.seed};
    BenchOptions no{b.net_reps, b.warmups, b.min_sample_ms, b.c.seed};
    BenchReport rep;
    rep.options = lo;
    if (!b.skip_layer) rep = merge(rep, bench_pool_layer<double>(specs, b.layer_size, b.layer_size, lo));
    if (!b.skip_network) rep = merge(rep, bench_network<double>(arch, specs, b.net_size, b.net_size, no));

    bool ok = true;
    for (auto& c : rep.cases)
        std::cout << scenario_name(c.scenario) << " " << c.spec << ": median " << pct(c.median_ms) << " ms, IQR "
                  << pct(c.iqr_ms) << " ms\n";
    for (auto& c : ordering_checks(rep)) {
        if (!c.evaluated) continue;
        ok = ok && c.passed;
        std::cout << (c.passed ? "ok   " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    }
    json j = to_json(rep);
    if (baseline) {
        auto reg = ordering_regressions(rep, *baseline);
        j["baseline"] = b.baseline;
        j["regressions"] = reg;
        for (auto& r : reg) std::cout << "REGRESSION " << r << "\n";
        ok = ok && reg.empty();
    }
    const fs::path out = b.c.out;
    detail::write_file((out / "bench.json").string(), j.dump(2) + "\n");
    detail::write_file((out / "bench.csv").string(), bench_csv(rep));
    write_run_files(app, "bench", b.c);
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct InvarianceOpts {
    Common c;
    std::string vanilla;
    std::string stacked;
    std::string data;
    std::string split = "test";
    double beta = 2.0;
    double threshold = 2.0;
    std::vector<std::size_t> layers;
    bool assert_direction = false;
};

int run_invariance(const CLI::App& app, InvarianceOpts& o) {
    for (auto* p : {&o.vanilla, &o.stacked})
        if (!fs::exists(*p)) throw UsageError("checkpoint '" + *p + "' not found");
    if (!fs::is_directory(o.data)) throw UsageError("dataset directory '" + o.data + "' not found");
    auto a = load_checkpoint<double>(o.vanilla);
    auto b = load_checkpoint<double>(o.stacked);
    const auto ds = load_dataset(o.data);
    const auto idx = split_indices(ds, o.split, o.c.seed);
    if (idx.empty()) throw UsageError("the '" + o.split + "' split is empty");
    prepare_out(o.c);
    std::vector<LabelledImage<double>> images;
    for (auto i : idx) {
        auto p = to_training_pair<double>(ds.samples[i], a.net.config().downsample());
        images.push_back({p.image, p.count});
    }
    auto rep = invariance_study(a.net, "vanilla", b.net, "stacked", images, o.beta, o.threshold, o.layers);
    bool direction = true;
    json j = to_json(rep);
    json diffs = json::array();
    for (auto l : rep.layers) {
        const auto& ga = rep.aggregate("vanilla", l);
        const auto& gb = rep.aggregate("stacked", l);
        const bool lower = ga.mean && gb.mean && *gb.mean < *ga.mean;
        direction = direction && lower;
        diffs.push_back({{"layer", l},
                         {"mean_vanilla", ga.mean ? json(*ga.mean) : json(nullptr)},
                         {"mean_stacked", gb.mean ? json(*gb.mean) : json(nullptr)},
                         {"difference", ga.mean && gb.mean ? json(*gb.mean - *ga.mean) : json(nullptr)},
                         {"stacked_lower", lower}});
        std::cout << "layer " << l << ": mean gamma vanilla " << (ga.mean ? pct(*ga.mean) : "n/a") << ", stacked "
                  << (gb.mean ? pct(*gb.mean) : "n/a") << "\n";
    }
    j["per_layer"] = diffs;
    j["checkpoints"] = {{"vanilla", a.info.pool}, {"stacked", b.info.pool}};
    const fs::path out = o.c.out;
    detail::write_file((out / "invariance.csv").string(), invariance_csv(rep));
    detail::write_file((out / "invariance.json").string(), j.dump(2) + "\n");
    write_run_files(app, "invariance", o.c);
    if (o.assert_direction && !direction) {
        std::cerr << "assertion failed: stacked mean gamma is not below vanilla at every probed layer\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stacked and multi-kernel pooling: data, training, verification and benchmarks"};
    app.set_config("--config", "", "read options from a TOML file (command-line flags take precedence)");
    app.fallthrough();
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenData g;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic crowd dataset");
    add_common(gen, g.c);
    gen->add_option("--scenes", g.scenes, "number of scenes")->capture_default_str();
    gen->add_option("--test", g.test, "scenes reserved for the test split")->capture_default_str();
    gen->add_option("--height", g.params.height)->capture_default_str();
    gen->add_option("--width", g.params.width)->capture_default_str();
    gen->add_option("--min-count", g.params.min_count)->capture_default_str();
    gen->add_option("--max-count", g.params.max_count)->capture_default_str();
    gen->add_option("--min-head-radius", g.params.min_head_radius)->capture_default_str();
    gen->add_option("--max-head-radius", g.params.max_head_radius)->capture_default_str();
    gen->add_option("--sigma", g.params.sigma, "Gaussian sigma of the density maps")->capture_default_str();

    TrainOpts t;
    auto* tr = app.add_subcommand("train", "train a network and keep the best-validation checkpoint");
    add_common(tr, t.c);
    tr->add_option("--data", t.data, "dataset directory")->required();
    tr->add_option("--net", t.net, "base_s, base_m, base_l, wide or deep")->capture_default_str();
    tr->add_option("--pool", t.pool, "pool spec, e.g. stacked:2,2,3:s2")->capture_default_str();
    tr->add_flag("--output-relu", t.output_relu, "apply ReLU to the density output");
    tr->add_option("--epochs", t.cfg.epochs)->capture_default_str();
    tr->add_option("--batch-size", t.cfg.batch_size)->capture_default_str();
    tr->add_option("--validate-every", t.cfg.validate_every)->capture_default_str();
    tr->add_option("--lr", t.cfg.adam.lr)->capture_default_str();
    tr->add_option("--beta1", t.cfg.adam.beta1)->capture_default_str();
    tr->add_option("--beta2", t.cfg.adam.beta2)->capture_default_str();
    tr->add_option("--eps", t.cfg.adam.eps)->capture_default_str();
    tr->add_option("--patches", t.patches, "random half-size patches per training image")->capture_default_str();
    tr->add_option("--max-train-images", t.max_train_images, "use only the first N training images (0 = all)")->capture_default_str();
    tr->add_option("--assert-loss-ratio", t.assert_loss_ratio, "fail unless final/initial train loss is below this (0 = off)")
        ->capture_default_str();
    tr->add_flag("--quiet", t.quiet, "no per-epoch output");

    EvalOpts e;
    auto* ev = app.add_subcommand("eval", "count MAE/MSE of a checkpoint on a dataset split");
    add_common(ev, e.c);
    ev->add_option("--checkpoint", e.checkpoint)->required();
    ev->add_option("--data", e.data)->required();
    ev->add_option("--split", e.split, "train, validation, test or all")->capture_default_str();
    ev->add_option("--buckets", e.buckets, "density groups")->capture_default_str();
    ev->add_flag("--clamp", e.clamp, "clamp negative density to 0 before counting");

    VerifyOpts v;
    auto* ve = app.add_subcommand("verify", "check stacked/multi-kernel equivalence or network gradients");
    add_common(ve, v.c);
    ve->add_option("--pool", v.pool, "multi-kernel spec to compare with its stacked form")->capture_default_str();
    ve->add_option("--trials", v.trials)->capture_default_str();
    ve->add_option("--extents", v.extents, "largest random input, batch x channels x h x w")->capture_default_str();
    ve->add_flag("--gradcheck", v.gradcheck, "finite-difference check of a whole network instead");
    ve->add_option("--net", v.net)->capture_default_str();
    ve->add_option("--size", v.size, "gradcheck input extent")->capture_default_str();
    auto* ve_pools = ve->add_option("--pools", v.pools, "pool specs for gradcheck")->capture_default_str()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    ve->add_option("--step", v.gc.step)->capture_default_str();
    ve->add_option("--tolerance", v.gc.tolerance)->capture_default_str();
    ve->add_option("--weight-samples", v.gc.weight_samples)->capture_default_str();
    ve->add_option("--input-samples", v.gc.input_samples)->capture_default_str();

    BenchOpts b;
    auto* be = app.add_subcommand("bench", "time pooling layers and whole networks per pooling variant");
    add_common(be, b.c);
    auto* be_pools = be->add_option("--pools", b.pools)->capture_default_str()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    be->add_option("--layer-size", b.layer_size)->capture_default_str();
    be->add_option("--net", b.net)->capture_default_str();
    be->add_option("--net-size", b.net_size)->capture_default_str();
    be->add_option("--reps", b.reps, "timed rounds for the layer benchmark")->capture_default_str();
    be->add_option("--net-reps", b.net_reps, "timed rounds for the network benchmark")->capture_default_str();
    be->add_option("--warmups", b.warmups)->capture_default_str();
    be->add_option("--min-sample-ms", b.min_sample_ms)->capture_default_str();
    be->add_flag("--skip-layer", b.skip_layer);
    be->add_flag("--skip-network", b.skip_network);
    be->add_option("--baseline", b.baseline, "earlier bench.json; fail on ordering regressions");

    InvarianceOpts o;
    auto* in = app.add_subcommand("invariance", "variation ratio of a vanilla and a stacked checkpoint");
    add_common(in, o.c);
    in->add_option("--vanilla", o.vanilla, "checkpoint for the first slot")->required();
    in->add_option("--stacked", o.stacked, "checkpoint for the second slot")->required();
    in->add_option("--data", o.data)->required();
    in->add_option("--split", o.split)->capture_default_str();
    in->add_option("--beta", o.beta)->capture_default_str();
    in->add_option("--threshold", o.threshold, "outlier cut for the means")->capture_default_str();
    in->add_option("--layers", o.layers, "pooling sites to probe (default all)")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    in->add_flag("--assert-direction", o.assert_direction, "fail unless stacked has the lower mean at every layer");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }
    // A defaulted list would be written to run_config.toml as one "[a,b]"
    // string, which splits wrongly on the commas inside pool specs.  Record
    // the defaults as explicit results so they come out as a TOML array.
    for (auto [opt, vals] : {std::pair{ve_pools, &v.pools}, std::pair{be_pools, &b.pools}})
        if (opt->count() == 0) opt->add_result(*vals);

    try {
        if (gen->parsed()) return run_gen_data(app, g);
        if (tr->parsed()) return run_train(app, t);
        if (ev->parsed()) return run_eval(app, e);
        if (ve->parsed()) return run_verify(app, v);
        if (be->parsed()) return run_bench(app, b);
        if (in->parsed()) return run_invariance(app, o);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 2;
}
