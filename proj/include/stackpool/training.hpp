#pragma once

// Adam optimizer and the training loop: per-epoch reshuffle, periodic
// validation on full images, best-validation-MAE model selection.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowd.hpp"
#include "network.hpp"
#include "ops.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace stackpool {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 500;
    std::size_t batch_size = 1;
    std::size_t validate_every = 2;
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (validate_every < 1) throw std::invalid_argument("validate_every must be >= 1");
        if (!(adam.lr > 0)) throw std::invalid_argument("learning rate must be positive");
        if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
            throw std::invalid_argument("Adam betas must lie in [0, 1)");
        if (!(adam.eps > 0)) throw std::invalid_argument("Adam eps must be positive");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"validate_every", c.validate_every},
            {"seed", c.seed},
            {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

struct NonFiniteGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<T>> m, v;
};

/// One bias-corrected Adam update.  grads[i] may be empty (no gradient
/// reached parameter i), which counts as zero.
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, const std::vector<std::span<const T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: one gradient per parameter expected");
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.emplace_back(p.value.size(), T{0});
            state.v.emplace_back(p.value.size(), T{0});
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].value.size()) throw ShapeError("adam_step: moment shape mismatch for " + params[i].name);
        if (!grads[i].empty() && grads[i].size() != params[i].value.size())
            throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
        for (T g : grads[i])
            if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter '" + params[i].name + "'");
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].value.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][j]);
            const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1 - cfg.beta1) * g;
            const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1 - cfg.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / c1, vhat = vj / c2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

/// Uses each parameter's accumulated grad().
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
    std::vector<std::span<const T>> grads;
    for (auto& p : params) grads.push_back(p.value.grad());
    adam_step(params, grads, state, cfg);
}

/// Network-ready pair: (1, 1, H, W) image and block-summed target at the
/// output resolution.  `count` is the annotated head count.
template <typename T>
struct TrainingPair {
    Tensor<T> image;
    Tensor<T> target;
    double count = 0;
};

template <typename T>
TrainingPair<T> to_training_pair(const CrowdSample& s, std::size_t downsample) {
    std::vector<T> img(s.image.size());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<T>(s.image[i]);
    return {Tensor<T>::from({1, 1, s.height(), s.width()}, std::move(img)), block_sum<T>(s.density(), downsample),
            static_cast<double>(s.count())};
}

/// Nine (or n) patches per training image, the input side of training.
template <typename T>
std::vector<TrainingPair<T>> make_patch_pairs(const std::vector<CrowdSample>& images, std::size_t patches_per_image,
                                              std::uint64_t seed, std::size_t downsample) {
    std::vector<TrainingPair<T>> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (auto& p : crop_patches(images[i], patches_per_image, derive_seed(seed, "patches", i), downsample))
            out.push_back(to_training_pair<T>(p, downsample));
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double train_mae = 0;
    std::optional<double> val_mae;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch;
    std::optional<double> best_val_mae;

    std::vector<double> column(double EpochRecord::*field) const {
        std::vector<double> out;
        for (auto& e : epochs) out.push_back(e.*field);
        return out;
    }
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, TrainLog partial) : std::runtime_error(what), log(std::move(partial)) {}
    TrainLog log;
};

/// y_0 = x_0, y_t = alpha x_t + (1 - alpha) y_{t-1}.
inline std::vector<double> ema_smooth(const std::vector<double>& series, double alpha) {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("ema_smooth: alpha must lie in (0, 1]");
    std::vector<double> out;
    out.reserve(series.size());
    for (double x : series) out.push_back(out.empty() ? x : alpha * x + (1 - alpha) * out.back());
    return out;
}

inline std::string format_csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string train_log_csv(const TrainLog& log) {
    std::string out = "epoch,train_loss,train_mae,val_mae\n";
    for (auto& e : log.epochs) {
        out += std::to_string(e.epoch) + "," + format_csv_number(e.train_loss) + "," + format_csv_number(e.train_mae) + ",";
        if (e.val_mae) out += format_csv_number(*e.val_mae);
        out += "\n";
    }
    return out;
}

inline nlohmann::json train_log_summary(const TrainLog& log, double ema_alpha = 0.1) {
    nlohmann::json j;
    j["epochs"] = log.epochs.size();
    j["best_epoch"] = log.best_epoch ? nlohmann::json(*log.best_epoch) : nlohmann::json(nullptr);
    j["best_val_mae"] = log.best_val_mae ? nlohmann::json(*log.best_val_mae) : nlohmann::json(nullptr);
    if (!log.epochs.empty()) {
        j["initial_train_loss"] = log.epochs.front().train_loss;
        j["final_train_loss"] = log.epochs.back().train_loss;
    }
    j["ema_alpha"] = ema_alpha;
    j["train_mae_ema"] = ema_smooth(log.column(&EpochRecord::train_mae), ema_alpha);
    std::vector<double> val_epochs, val_mae;
    for (auto& e : log.epochs)
        if (e.val_mae) {
            val_epochs.push_back(static_cast<double>(e.epoch));
            val_mae.push_back(*e.val_mae);
        }
    j["val_epochs"] = val_epochs;
    j["val_mae_ema"] = ema_smooth(val_mae, ema_alpha);
    return j;
}

/// Mean absolute count error of a network over full images.
template <typename T>
double count_mae(const Network<T>& net, const std::vector<TrainingPair<T>>& data) {
    if (data.empty()) throw std::invalid_argument("count_mae: empty data set");
    NoGradGuard guard;
    double total = 0;
    for (auto& d : data) total += std::abs(predicted_count(net.forward(d.image))[0] - d.count);
    return total / static_cast<double>(data.size());
}

template <typename T>
struct TrainResult {
    Network<T> best;  // parameters at the best validation point
    TrainLog log;
};

/// Trains `net` in place.  Validation runs every validate_every epochs and
/// after the final epoch; the snapshot with the lowest validation MAE (first
/// one on ties) is returned.
template <typename T>
TrainResult<T> train(Network<T>& net, const std::vector<TrainingPair<T>>& train_set,
                     const std::vector<TrainingPair<T>>& val_set, const TrainConfig& cfg,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
    net.set_requires_grad(true);
    AdamState<T> state;
    TrainLog log;
    TrainResult<T> result;
    const T inv_batch = T{1} / static_cast<T>(cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, "shuffle", epoch);
        const auto order = permutation(train_set.size(), rng);
        double loss_sum = 0, abs_err_sum = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            net.zero_grad();
            for (std::size_t i = b0; i < b1; ++i) {
                const auto& d = train_set[order[i]];
                auto pred = net.forward(d.image);
                auto loss = mse_loss(pred, d.target);
                const double lv = static_cast<double>(loss.item());
                if (!std::isfinite(lv)) {
                    std::ostringstream os;
                    os << "training diverged: non-finite loss at epoch " << epoch << ", step " << i;
                    throw TrainingDiverged(os.str(), log);
                }
                loss_sum += lv;
                abs_err_sum += std::abs(predicted_count(pred)[0] - d.count);
                backward(cfg.batch_size == 1 ? loss : scale(loss, inv_batch));
            }
            adam_step(net.parameters(), state, cfg.adam);
        }
        net.zero_grad();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_mae = abs_err_sum / static_cast<double>(order.size());
        if (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
            rec.val_mae = count_mae(net, val_set);
            if (!log.best_val_mae || *rec.val_mae < *log.best_val_mae) {
                log.best_val_mae = rec.val_mae;
                log.best_epoch = epoch;
                result.best = net.snapshot();
            }
        }
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    result.log = std::move(log);
    return result;
}

}  // namespace stackpool
