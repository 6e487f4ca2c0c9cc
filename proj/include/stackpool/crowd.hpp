#pragma once

// Synthetic crowd scenes, Gaussian ground-truth density maps, patch
// cropping, train/validation splitting and the on-disk dataset layout:
//
//   <dir>/images/NNNN.pgm        16-bit (or 8-bit) binary PGM, or NNNN.pstn
//   <dir>/annotations/NNNN.txt   one "x y" head position per line
//   <dir>/manifest.json          seed, generator parameters, split membership

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "random.hpp"
#include "serialize.hpp"
#include "tensor.hpp"

namespace stackpool {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Head position in pixel coordinates; pixel (r, c) covers [c, c+1) x [r, r+1).
struct Head {
    double x = 0;
    double y = 0;
    bool operator==(const Head&) const = default;
};

constexpr double kDefaultSigma = 4.0;

/// Sum of unit-mass Gaussians, one per head.  Each kernel is sampled at pixel
/// centres over a square window of radius ceil(4 sigma) around the head's
/// pixel and normalized over that whole window; the part falling outside the
/// image is dropped without renormalization.
inline Tensor<double> density_map(const std::vector<Head>& heads, std::size_t h, std::size_t w,
                                  double sigma = kDefaultSigma) {
    if (!(sigma > 0)) throw std::invalid_argument("density_map: sigma must be positive");
    if (h == 0 || w == 0) throw ShapeError("density_map: extents must be positive");
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4 * sigma));
    const std::size_t win = 2 * static_cast<std::size_t>(radius) + 1;
    std::vector<double> map(h * w, 0.0), gx(win), gy(win);

    auto taps = [&](double pos, std::ptrdiff_t centre, std::vector<double>& g) {
        double total = 0;
        for (std::size_t i = 0; i < win; ++i) {
            const double d = static_cast<double>(centre - radius + static_cast<std::ptrdiff_t>(i)) + 0.5 - pos;
            g[i] = std::exp(-d * d / (2 * sigma * sigma));
            total += g[i];
        }
        for (auto& v : g) v /= total;
    };

    for (const auto& hd : heads) {
        const auto cx = static_cast<std::ptrdiff_t>(std::floor(hd.x));
        const auto cy = static_cast<std::ptrdiff_t>(std::floor(hd.y));
        taps(hd.x, cx, gx);
        taps(hd.y, cy, gy);
        for (std::size_t i = 0; i < win; ++i) {
            const std::ptrdiff_t r = cy - radius + static_cast<std::ptrdiff_t>(i);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < win; ++j) {
                const std::ptrdiff_t c = cx - radius + static_cast<std::ptrdiff_t>(j);
                if (c < 0 || c >= static_cast<std::ptrdiff_t>(w)) continue;
                map[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] += gy[i] * gx[j];
            }
        }
    }
    return Tensor<double>::from({1, h, w}, std::move(map));
}

/// Sums non-overlapping factor x factor blocks of a (1, H, W) map, preserving
/// its mass.  Result is (1, 1, H/factor, W/factor), ready as a network target.
template <typename T>
Tensor<T> block_sum(const Tensor<double>& map, std::size_t factor) {
    if (map.rank() != 3 || map.dim(0) != 1) throw ShapeError("block_sum expects a (1, h, w) map, got " + to_string(map.shape()));
    const std::size_t h = map.dim(1), w = map.dim(2);
    if (factor == 0 || h % factor || w % factor)
        throw ShapeError("block_sum: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                         std::to_string(factor));
    const std::size_t oh = h / factor, ow = w / factor;
    std::vector<T> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) s += map[(y * factor + dy) * w + x * factor + dx];
            out[y * ow + x] = static_cast<T>(s);
        }
    return Tensor<T>::from({1, 1, oh, ow}, std::move(out));
}

struct CrowdSample {
    Tensor<double> image;  // (1, H, W), values in [0, 1]
    std::vector<Head> heads;
    double sigma = kDefaultSigma;

    std::size_t height() const { return image.dim(1); }
    std::size_t width() const { return image.dim(2); }
    std::size_t count() const { return heads.size(); }

    const Tensor<double>& density() const {
        if (!density_) density_ = density_map(heads, height(), width(), sigma);
        return *density_;
    }

private:
    mutable std::optional<Tensor<double>> density_;
};

inline CrowdSample make_sample(Tensor<double> image, std::vector<Head> heads, double sigma = kDefaultSigma) {
    if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("crowd image must be (1, h, w), got " + to_string(image.shape()));
    const double h = static_cast<double>(image.dim(1)), w = static_cast<double>(image.dim(2));
    for (auto& hd : heads)
        if (!(hd.x >= 0 && hd.x < w && hd.y >= 0 && hd.y < h))
            throw DatasetError("head (" + std::to_string(hd.x) + ", " + std::to_string(hd.y) + ") lies outside the " +
                               std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)) + " image");
    CrowdSample s;
    s.image = std::move(image);
    s.heads = std::move(heads);
    s.sigma = sigma;
    return s;
}

struct SceneParams {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t min_count = 5;
    std::size_t max_count = 50;
    double min_head_radius = 1.0;  // at the top row
    double max_head_radius = 4.0;  // at the bottom row
    double sigma = kDefaultSigma;

    void validate() const {
        if (height < 1 || width < 1) throw std::invalid_argument("scene extents must be positive");
        if (min_count > max_count) throw std::invalid_argument("scene count range is empty");
        if (!(min_head_radius > 0) || min_head_radius > max_head_radius)
            throw std::invalid_argument("head radius range must satisfy 0 < min <= max");
        if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
        if (max_count > 0 && (static_cast<double>(height) <= 4 * sigma || static_cast<double>(width) <= 4 * sigma))
            throw std::invalid_argument("scene is too small to keep heads 2 sigma away from the border");
    }
};

inline nlohmann::json to_json(const SceneParams& p) {
    return {{"height", p.height},           {"width", p.width},
            {"min_count", p.min_count},     {"max_count", p.max_count},
            {"min_head_radius", p.min_head_radius}, {"max_head_radius", p.max_head_radius},
            {"sigma", p.sigma}};
}

inline SceneParams scene_params_from_json(const nlohmann::json& j) {
    SceneParams p;
    p.height = j.value("height", p.height);
    p.width = j.value("width", p.width);
    p.min_count = j.value("min_count", p.min_count);
    p.max_count = j.value("max_count", p.max_count);
    p.min_head_radius = j.value("min_head_radius", p.min_head_radius);
    p.max_head_radius = j.value("max_head_radius", p.max_head_radius);
    p.sigma = j.value("sigma", p.sigma);
    return p;
}

/// Image values are quantized to 16-bit levels so a PGM round trip is exact.
inline double quantize16(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

/// Heads are drawn as bright discs with a dark body below them on a smooth
/// textured background.  Head size grows linearly from top to bottom to mimic
/// a camera looking down a crowd.
inline CrowdSample synthesize_scene(std::uint64_t seed, const SceneParams& p) {
    p.validate();
    const std::size_t h = p.height, w = p.width;
    auto rng = make_rng(seed, "scene");
    std::vector<double> img(h * w);

    // Background: a few random low-frequency waves plus fine grain.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves(4);
    for (auto& wv : waves) {
        wv.fx = uniform(rng, 0.5, 4.0) / static_cast<double>(w);
        wv.fy = uniform(rng, 0.5, 4.0) / static_cast<double>(h);
        wv.phase = uniform(rng, 0.0, 6.283185307179586);
        wv.amp = uniform(rng, 0.02, 0.08);
    }
    const double base = uniform(rng, 0.25, 0.45);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double v = base;
            for (auto& wv : waves)
                v += wv.amp * std::sin(6.283185307179586 * (wv.fx * static_cast<double>(x) + wv.fy * static_cast<double>(y)) + wv.phase);
            img[y * w + x] = v + 0.03 * normal01(rng);
        }

    const auto n = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(p.min_count), static_cast<std::int64_t>(p.max_count)));
    const double margin = 2 * p.sigma;
    std::vector<Head> heads(n);
    for (auto& hd : heads) {
        hd.x = uniform(rng, margin, static_cast<double>(w) - margin);
        hd.y = uniform(rng, margin, static_cast<double>(h) - margin);
    }
    // Far (top) people first so nearer ones are painted over them.
    std::stable_sort(heads.begin(), heads.end(), [](const Head& a, const Head& b) { return a.y < b.y; });

    for (const auto& hd : heads) {
        const double t = h > 1 ? hd.y / static_cast<double>(h - 1) : 0.0;
        const double r = p.min_head_radius + (p.max_head_radius - p.min_head_radius) * t;
        const double head_tone = uniform(rng, 0.7, 0.95);
        const double body_tone = uniform(rng, 0.05, 0.2);
        const double reach = 4 * r;
        const auto y0 = static_cast<std::ptrdiff_t>(std::floor(hd.y - 2 * r));
        const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(hd.y + reach));
        const auto x0 = static_cast<std::ptrdiff_t>(std::floor(hd.x - 2 * r));
        const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(hd.x + 2 * r));
        for (auto y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(h) - 1); ++y)
            for (auto x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(w) - 1); ++x) {
                const double dx = static_cast<double>(x) + 0.5 - hd.x;
                const double dy = static_cast<double>(y) + 0.5 - hd.y;
                double& px = img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
                // Body: a vertical ellipse hanging below the head.
                const double by = (dy - 2.5 * r) / (1.6 * r), bx = dx / (1.2 * r);
                const double body = std::exp(-2 * (bx * bx + by * by));
                px += (body_tone - px) * body;
                const double head = std::exp(-(dx * dx + dy * dy) / (0.5 * r * r));
                px += (head_tone - px) * head;
            }
    }
    for (auto& v : img) v = quantize16(v);
    return make_sample(Tensor<double>::from({1, h, w}, std::move(img)), std::move(heads), p.sigma);
}

/// Sub-window of a sample.  Heads inside the window are kept and shifted;
/// the density is regenerated for the crop rather than cut from the parent.
inline CrowdSample crop(const CrowdSample& s, std::size_t y0, std::size_t x0, std::size_t ch, std::size_t cw) {
    if (ch == 0 || cw == 0 || y0 + ch > s.height() || x0 + cw > s.width())
        throw ShapeError("crop window exceeds the " + std::to_string(s.height()) + "x" + std::to_string(s.width()) + " image");
    std::vector<double> img(ch * cw);
    const auto src = s.image.data();
    for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x) img[y * cw + x] = src[(y0 + y) * s.width() + x0 + x];
    std::vector<Head> heads;
    const double fy = static_cast<double>(y0), fx = static_cast<double>(x0);
    for (auto& hd : s.heads)
        if (hd.y >= fy && hd.y < fy + static_cast<double>(ch) && hd.x >= fx && hd.x < fx + static_cast<double>(cw))
            heads.push_back({hd.x - fx, hd.y - fy});
    return make_sample(Tensor<double>::from({1, ch, cw}, std::move(img)), std::move(heads), s.sigma);
}

/// n random half-size patches, extents rounded down to a multiple of
/// `multiple` (the network's down-sampling factor).
inline std::vector<CrowdSample> crop_patches(const CrowdSample& s, std::size_t n, std::uint64_t seed,
                                             std::size_t multiple = 1) {
    if (n < 1) throw std::invalid_argument("crop_patches: n must be >= 1");
    if (multiple < 1) throw std::invalid_argument("crop_patches: multiple must be >= 1");
    const std::size_t ph = s.height() / 2 / multiple * multiple;
    const std::size_t pw = s.width() / 2 / multiple * multiple;
    if (ph == 0 || pw == 0)
        throw ShapeError("image " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                         " is smaller than twice the minimum patch extent " + std::to_string(multiple));
    auto rng = make_rng(seed, "crop");
    std::vector<CrowdSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(s.height() - ph)));
        const auto x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(s.width() - pw)));
        out.push_back(crop(s, y0, x0, ph, pw));
    }
    return out;
}

/// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

/// Index lists into a sample collection.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Shuffles indices 0..n-1 and splits them 9:1 (train gets floor(9n/10)).
inline DatasetSplit split(std::size_t n, std::uint64_t seed) {
    if (n < 10) throw DatasetError("split needs at least 10 samples, got " + std::to_string(n));
    auto rng = make_rng(seed, "split");
    auto idx = permutation(n, rng);
    const std::size_t n_train = 9 * n / 10;
    DatasetSplit s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return s;
}

// ---------------------------------------------------------------------------
// Files

inline std::string write_pgm16(const Tensor<double>& image) {
    if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("PGM export expects a (1, h, w) image");
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
    buf.reserve(buf.size() + 2 * h * w);
    for (double v : image.data()) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
        buf.push_back(static_cast<char>(q >> 8));
        buf.push_back(static_cast<char>(q & 0xff));
    }
    return buf;
}

/// Binary PGM (P5) with maxval up to 65535; values scaled to [0, 1].
inline Tensor<double> read_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            else if (std::isspace(static_cast<unsigned char>(bytes[pos])))
                ++pos;
            else
                break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw FormatError("truncated PGM header");
        return bytes.substr(start, pos - start);
    };
    auto number = [&]() {
        auto t = token();
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc{} || p != t.data() + t.size()) throw FormatError("bad PGM header field '" + t + "'");
        return v;
    };
    if (token() != "P5") throw FormatError("not a binary PGM (expected P5)");
    const std::size_t w = number(), h = number(), maxval = number();
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError("bad PGM extents or maxval");
    ++pos;  // single whitespace before the raster
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    if (bytes.size() < pos + bpp * w * h) throw FormatError("truncated PGM raster");
    std::vector<double> img(w * h);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const unsigned v = bpp == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
        img[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return Tensor<double>::from({1, h, w}, std::move(img));
}

inline std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string write_annotations(const std::vector<Head>& heads) {
    std::string out;
    for (auto& hd : heads) out += format_double(hd.x) + " " + format_double(hd.y) + "\n";
    return out;
}

inline std::vector<Head> read_annotations(const std::string& text, const std::string& origin = "annotations") {
    std::vector<Head> heads;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        Head hd;
        std::string rest;
        if (!(ls >> hd.x >> hd.y) || (ls >> rest))
            throw DatasetError(origin + ":" + std::to_string(lineno) + ": expected \"x y\", got \"" + line + "\"");
        heads.push_back(hd);
    }
    return heads;
}

struct Dataset {
    std::vector<std::string> ids;
    std::vector<CrowdSample> samples;
    std::optional<DatasetSplit> splits;  // absent when no manifest lists them
    nlohmann::json manifest;             // null when the directory has none
};

inline nlohmann::json split_to_json(const DatasetSplit& s, const std::vector<std::string>& ids) {
    auto names = [&](const std::vector<std::size_t>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (auto i : v) a.push_back(ids.at(i));
        return a;
    };
    return {{"train", names(s.train)}, {"validation", names(s.validation)}, {"test", names(s.test)}};
}

/// Writes images, annotations and manifest.json.  `extra` is merged into the
/// manifest (generation seed and parameters, for instance).
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const nlohmann::json& extra = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "annotations");
    nlohmann::json samples = nlohmann::json::array();
    std::size_t total = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& id = ds.ids.at(i);
        const auto& s = ds.samples[i];
        detail::write_file((dir / "images" / (id + ".pgm")).string(), write_pgm16(s.image));
        detail::write_file((dir / "annotations" / (id + ".txt")).string(), write_annotations(s.heads));
        samples.push_back({{"id", id}, {"image", "images/" + id + ".pgm"}, {"annotations", "annotations/" + id + ".txt"},
                           {"count", s.count()}});
        total += s.count();
    }
    nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
    m["format"] = "stackpool-dataset";
    m["version"] = 1;
    m["samples"] = samples;
    m["total_heads"] = total;
    if (ds.splits) m["splits"] = split_to_json(*ds.splits, ds.ids);
    detail::write_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

/// Loads a dataset directory.  With a manifest, samples and splits follow
/// it; without one, every image in images/ with a matching annotation file is
/// loaded in name order and no split is set.
inline Dataset load_dataset(const std::filesystem::path& dir, double sigma = kDefaultSigma) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DatasetError("dataset directory '" + dir.string() + "' does not exist");
    Dataset ds;
    std::vector<std::pair<fs::path, fs::path>> files;
    const auto manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            ds.manifest = nlohmann::json::parse(detail::read_file(manifest_path.string()));
        } catch (const nlohmann::json::exception& e) {
            throw DatasetError("cannot parse " + manifest_path.string() + ": " + e.what());
        }
        if (ds.manifest.contains("params")) sigma = ds.manifest["params"].value("sigma", sigma);
        for (auto& s : ds.manifest.at("samples")) {
            ds.ids.push_back(s.at("id").get<std::string>());
            files.emplace_back(dir / s.at("image").get<std::string>(), dir / s.at("annotations").get<std::string>());
        }
    } else {
        if (!fs::is_directory(dir / "images"))
            throw DatasetError("'" + dir.string() + "' has neither manifest.json nor an images/ directory");
        std::vector<fs::path> images;
        for (auto& e : fs::directory_iterator(dir / "images"))
            if (e.path().extension() == ".pgm" || e.path().extension() == ".pstn") images.push_back(e.path());
        std::sort(images.begin(), images.end());
        for (auto& p : images) {
            auto ann = dir / "annotations" / (p.stem().string() + ".txt");
            if (!fs::exists(ann)) continue;
            ds.ids.push_back(p.stem().string());
            files.emplace_back(p, ann);
        }
    }
    for (auto& [img_path, ann_path] : files) {
        if (!fs::exists(img_path)) throw DatasetError("missing image " + img_path.string());
        if (!fs::exists(ann_path)) throw DatasetError("missing annotation file " + ann_path.string());
        Tensor<double> img;
        if (img_path.extension() == ".pstn") {
            img = load_tensor<double>(img_path.string());
            if (img.rank() == 2) img = img.reshaped({1, img.dim(0), img.dim(1)});
        } else {
            img = read_pgm(detail::read_file(img_path.string()));
        }
        ds.samples.push_back(make_sample(std::move(img), read_annotations(detail::read_file(ann_path.string()), ann_path.string()), sigma));
    }
    if (!ds.manifest.is_null() && ds.manifest.contains("splits")) {
        auto lookup = [&](const nlohmann::json& names) {
            std::vector<std::size_t> out;
            for (auto& n : names) {
                auto it = std::find(ds.ids.begin(), ds.ids.end(), n.get<std::string>());
                if (it == ds.ids.end()) throw DatasetError("split lists unknown sample '" + n.get<std::string>() + "'");
                out.push_back(static_cast<std::size_t>(it - ds.ids.begin()));
            }
            return out;
        };
        const auto& sp = ds.manifest["splits"];
        DatasetSplit s;
        s.train = lookup(sp.value("train", nlohmann::json::array()));
        s.validation = lookup(sp.value("validation", nlohmann::json::array()));
        s.test = lookup(sp.value("test", nlohmann::json::array()));
        ds.splits = std::move(s);
    }
    return ds;
}

inline std::string sample_id(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

/// Generates n scenes; the last n_test form the test split and the rest are
/// split 9:1 into train and validation.
inline Dataset generate_dataset(std::size_t n, std::size_t n_test, std::uint64_t seed, const SceneParams& params) {
    if (n_test > n) throw std::invalid_argument("test split is larger than the dataset");
    Dataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        ds.ids.push_back(sample_id(i));
        ds.samples.push_back(synthesize_scene(derive_seed(seed, "scene", i), params));
    }
    const std::size_t n_trainval = n - n_test;
    if (n_trainval >= 10) {
        DatasetSplit s = split(n_trainval, seed);
        for (std::size_t i = n_trainval; i < n; ++i) s.test.push_back(i);
        ds.splits = std::move(s);
    } else if (n_trainval == 0) {
        DatasetSplit s;
        for (std::size_t i = 0; i < n; ++i) s.test.push_back(i);
        ds.splits = std::move(s);
    } else {
        throw DatasetError("need at least 10 non-test scenes for a 9:1 split, got " + std::to_string(n_trainval));
    }
    return ds;
}

}  // namespace stackpool
