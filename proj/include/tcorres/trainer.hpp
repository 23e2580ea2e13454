#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace tcorres {

struct TrainConfig {
    double base_lr = 1e-4;
    double min_lr_ratio = 0.01;  // min_lr = base_lr * min_lr_ratio
    int64_t total_steps = 2000;
    int64_t batch_size = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    int64_t checkpoint_every = 0;  // 0: only the final checkpoint
    int64_t eval_every = 0;        // 0: no mid-training evaluation sweeps
    uint64_t seed = 0;
    bool log_timings = false;  // off keeps logs bitwise reproducible
    bool track_dead_params = false;

    double min_lr() const { return base_lr * min_lr_ratio; }

    void validate() const {
        if (!(base_lr > 0)) throw std::invalid_argument("train config: base_lr must be positive");
        if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1))
            throw std::invalid_argument("train config: min_lr_ratio must be in [0,1]");
        if (total_steps < 1) throw std::invalid_argument("train config: total_steps must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (checkpoint_every < 0)
            throw std::invalid_argument("train config: checkpoint_every must be >= 0");
        if (eval_every < 0) throw std::invalid_argument("train config: eval_every must be >= 0");
    }
};

struct TrainLogEntry {
    int64_t step = 0;  // 1-based, the step just completed
    double lr = 0;
    double l0 = 0;
    double l1 = 0;
    int64_t wall_ms = 0;
};

struct FitResult {
    std::vector<TrainLogEntry> log;
    std::vector<std::pair<int64_t, MetricsReport>> eval_log;
    int64_t steps_run = 0;
    double final_loss = 0;
    std::vector<std::string> dead_params;  // only filled when tracking is on
};

namespace detail {

inline std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    Rng rng(derive_seed(derive_seed(seed, "data"), std::to_string(epoch)));
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
    return order;
}

inline void write_log_entry(std::ostream& os, const TrainLogEntry& e) {
    nlohmann::json row{{"record", "train"}, {"step", e.step}, {"lr", e.lr},
                       {"l0", e.l0},        {"l1", e.l1},     {"wall_ms", e.wall_ms}};
    os << row.dump() << "\n";
}

inline void write_eval_entry(std::ostream& os, int64_t step, const MetricsReport& rep) {
    nlohmann::json row{{"record", "eval"},
                       {"step", step},
                       {"cd_l1", rep.cd_l1},
                       {"cd_l2", rep.cd_l2},
                       {"fscore", rep.fscore}};
    os << row.dump() << "\n";
}

}  // namespace detail

// Metrics over already-computed predictions, one ground truth per prediction.
template <class T>
MetricsReport evaluate_predictions(const std::vector<PointCloud<T>>& preds,
                                   const std::vector<PointCloud<T>>& gts,
                                   const std::vector<std::string>& categories,
                                   double tau = 0.01) {
    if (preds.empty() || preds.size() != gts.size() || preds.size() != categories.size())
        throw std::invalid_argument("evaluate_predictions: size mismatch or empty input");
    MetricsReport rep;
    struct Acc {
        double cd = 0, f = 0;
        int64_t n = 0;
    };
    std::map<std::string, Acc> by_cat;
    for (size_t i = 0; i < preds.size(); ++i) {
        double c1 = chamfer(preds[i], gts[i], ChamferNorm::l1);
        double c2 = chamfer(preds[i], gts[i], ChamferNorm::l2);
        double f = fscore(preds[i], gts[i], tau);
        rep.cd_l1 += c1;
        rep.cd_l2 += c2;
        rep.fscore += f;
        auto& acc = by_cat[categories[i]];
        acc.cd += c1;
        acc.f += f;
        acc.n += 1;
    }
    const double inv = 1.0 / static_cast<double>(preds.size());
    rep.cd_l1 *= inv;
    rep.cd_l2 *= inv;
    rep.fscore *= inv;
    for (const auto& [name, acc] : by_cat)
        rep.per_category[name] = {acc.cd / static_cast<double>(acc.n),
                                  acc.f / static_cast<double>(acc.n)};
    rep.validate();
    return rep;
}

// Runs the model over every pair with evaluation-stream sphere seeds (fixed
// by `seed` and sample index, independent of training history).
template <class T>
MetricsReport evaluate(const TCorresNet<T>& model, const std::vector<SamplePair<T>>& data,
                       uint64_t seed, double tau = 0.01) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const uint64_t tbase = derive_seed(seed, "eval-sphere");
    const uint64_t vbase = derive_seed(seed, "eval-value");
    std::vector<PointCloud<T>> preds, gts;
    std::vector<std::string> cats;
    for (size_t i = 0; i < data.size(); ++i) {
        auto label = std::to_string(i);
        auto out = model.forward(data[i].partial, derive_seed(tbase, label),
                                 derive_seed(vbase, label));
        preds.push_back(out.dense.to_cloud());
        gts.push_back(data[i].complete);
        cats.push_back(data[i].category);
    }
    return evaluate_predictions(preds, gts, cats, tau);
}

// Training loop: per step, average training_loss over the batch, backward,
// clipped Adam update at the cosine-annealed rate. Sample order reshuffles
// every epoch from the data stream; sphere seeds are derived statelessly
// from (run seed, step, batch slot) so a resumed run replays the exact
// schedule.
template <class T>
FitResult fit(TCorresNet<T>& model, const std::vector<SamplePair<T>>& data,
              const TrainConfig& cfg, const std::string& out_dir = "",
              std::ostream* log_stream = nullptr, const std::string& resume_path = "") {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("fit: empty dataset");

    auto& params = model.params();
    for (auto& [name, p] : params) p.set_requires_grad(true);
    Adam<T> opt(params, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm);

    int64_t start_step = 0;
    if (!resume_path.empty()) {
        TrainState st = load_checkpoint(resume_path, model.config(), params);
        opt.import_state(st);
        start_step = static_cast<int64_t>(st.step);
        if (start_step > cfg.total_steps)
            throw std::invalid_argument("resume checkpoint is past total_steps");
    }

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    auto save = [&](const std::string& name, int64_t completed) {
        if (out_dir.empty()) return;
        TrainState st;
        st.step = static_cast<uint64_t>(completed);
        st.rng_states["run"] = cfg.seed;
        opt.export_state(st);
        save_checkpoint(out_dir + "/" + name, model.config(), params, st);
    };

    const uint64_t tbase = derive_seed(cfg.seed, "sphere");
    const uint64_t vbase = derive_seed(cfg.seed, "value-sphere");
    const int64_t n = static_cast<int64_t>(data.size());

    FitResult result;
    std::set<std::string> seen_nonzero;
    int64_t cached_epoch = -1;
    std::vector<int64_t> order;

    for (int64_t step = start_step; step < cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cosine_lr(step, cfg.total_steps, cfg.base_lr, cfg.min_lr());
        params.zero_grad();

        Tensor<T> total;
        double l0_sum = 0, l1_sum = 0;
        for (int64_t j = 0; j < cfg.batch_size; ++j) {
            const int64_t cursor = step * cfg.batch_size + j;
            const int64_t epoch = cursor / n;
            if (epoch != cached_epoch) {
                order = detail::epoch_order(n, cfg.seed, epoch);
                cached_epoch = epoch;
            }
            const auto& pair = data[static_cast<size_t>(order[static_cast<size_t>(cursor % n)])];

            const auto label = std::to_string(step) + "." + std::to_string(j);
            auto out = model.forward(pair.partial, derive_seed(tbase, label),
                                     derive_seed(vbase, label));
            auto gt = Tensor<T>::from_cloud(pair.complete);
            auto l0 = chamfer_grad(out.fine, gt, ChamferNorm::l1);
            auto l1 = chamfer_grad(out.dense, gt, ChamferNorm::l1);
            l0_sum += static_cast<double>(l0.item());
            l1_sum += static_cast<double>(l1.item());
            auto sample_loss = add(l0, l1);
            total = total.defined() ? add(total, sample_loss) : sample_loss;
        }
        auto loss = scale(total, T(1) / static_cast<T>(cfg.batch_size));
        const double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
            save("last-good.ckpt", step);
            throw std::runtime_error("non-finite loss at step " + std::to_string(step + 1) +
                                     "; last good state written");
        }

        loss.backward();
        try {
            opt.step(lr);
        } catch (const std::exception&) {
            save("last-good.ckpt", step);
            throw;
        }

        if (cfg.track_dead_params) {
            for (auto& [name, p] : params) {
                if (!p.has_grad() || seen_nonzero.count(name)) continue;
                for (T g : p.grad())
                    if (g != T(0)) {
                        seen_nonzero.insert(name);
                        break;
                    }
            }
        }

        TrainLogEntry entry;
        entry.step = step + 1;
        entry.lr = lr;
        entry.l0 = l0_sum / static_cast<double>(cfg.batch_size);
        entry.l1 = l1_sum / static_cast<double>(cfg.batch_size);
        if (cfg.log_timings) {
            auto dt = std::chrono::steady_clock::now() - t0;
            entry.wall_ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(dt).count();
        }
        result.log.push_back(entry);
        if (log_stream) detail::write_log_entry(*log_stream, entry);
        result.final_loss = loss_value;
        result.steps_run = step + 1 - start_step;

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.total_steps)
            save("step-" + std::to_string(step + 1) + ".ckpt", step + 1);

        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            auto rep = evaluate(model, data, cfg.seed);
            result.eval_log.emplace_back(step + 1, rep);
            if (log_stream) detail::write_eval_entry(*log_stream, step + 1, rep);
        }
    }

    save("last.ckpt", cfg.total_steps);

    if (cfg.track_dead_params)
        for (auto& [name, p] : params)
            if (!seen_nonzero.count(name)) result.dead_params.push_back(name);
    return result;
}

}  // namespace tcorres
