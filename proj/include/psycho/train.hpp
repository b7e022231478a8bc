#pragma once

#include <filesystem>

#include "psycho/checkpoint.hpp"
#include "psycho/data.hpp"

namespace psycho {

struct Recipe {
    int64_t epochs = 35;
    int64_t batch = 64;
    double lr = 1e-3;
    double wd = 0.05;
    uint64_t seed = 42;
    double warmup_frac = 0.3;
    double div_start = 25.0;
    double div_final = 1e4;
    bool augment = true;
};

inline Recipe parse_recipe(const json& j) {
    detail::expect_keys(
        j, {"epochs", "batch", "lr", "wd", "seed", "warmup_frac", "div_start", "div_final", "augment"}, "recipe");
    Recipe r;
    r.epochs = j.value("epochs", r.epochs);
    r.batch = j.value("batch", r.batch);
    r.lr = j.value("lr", r.lr);
    r.wd = j.value("wd", r.wd);
    r.seed = j.value("seed", r.seed);
    r.warmup_frac = j.value("warmup_frac", r.warmup_frac);
    r.div_start = j.value("div_start", r.div_start);
    r.div_final = j.value("div_final", r.div_final);
    r.augment = j.value("augment", r.augment);
    if (r.epochs < 1 || r.batch < 1 || r.lr <= 0) throw std::invalid_argument("recipe: invalid epochs/batch/lr");
    return r;
}

inline json recipe_to_json(const Recipe& r) {
    return {{"epochs", r.epochs},         {"batch", r.batch},         {"lr", r.lr},
            {"wd", r.wd},                 {"seed", r.seed},           {"warmup_frac", r.warmup_frac},
            {"div_start", r.div_start},   {"div_final", r.div_final}, {"augment", r.augment}};
}

/// Top-1 accuracy in eval mode (running statistics, no graph).
template <typename T>
double evaluate(Model<T>& model, const Tensor<T>& images, const std::vector<int>& labels, int64_t batch = 128) {
    model.set_training(false);
    NoGrad ng;
    const int64_t N = images.shape[0];
    int64_t correct = 0;
    for (int64_t b0 = 0; b0 < N; b0 += batch) {
        std::vector<int64_t> idx;
        for (int64_t i = b0; i < std::min(N, b0 + batch); ++i) idx.push_back(i);
        Var<T> logits = model.forward(leaf(gather_images(images, idx)));
        const int64_t K = logits->value.shape[1];
        for (size_t i = 0; i < idx.size(); ++i) {
            int64_t arg = 0;
            for (int64_t k = 1; k < K; ++k)
                if (logits->value[static_cast<int64_t>(i) * K + k] > logits->value[static_cast<int64_t>(i) * K + arg])
                    arg = k;
            if (arg == labels[static_cast<size_t>(idx[i])]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(N);
}

struct TrainResult {
    double best_acc = 0;
    double final_loss = 0;
    std::string best_path;
};

/// Deterministic epoch loop: one generator drives shuffling and augmentation,
/// metrics go out as one JSON record per epoch, checkpoints per epoch plus
/// best-so-far. A NaN loss aborts with the previous epoch checkpoint intact.
/// `resume_from` restarts from a saved epoch checkpoint.
template <typename T>
TrainResult train(Model<T>& model, const Dataset<T>& tr, const Dataset<T>& te, const Recipe& r,
                  const std::string& out_dir, std::ostream& metrics, const std::string& resume_from = "",
                  std::ostream* progress = nullptr) {
    std::filesystem::create_directories(out_dir);
    const int64_t N = tr.images.shape[0];
    const int64_t steps_per_epoch = (N + r.batch - 1) / r.batch;
    OneCycle sched{r.lr, r.epochs * steps_per_epoch, r.warmup_frac, r.div_start, r.div_final};

    ParamList<T> ps;
    model.collect(ps);
    AdamW<T> optim(ps, r.wd);
    Rng rng(r.seed);
    int64_t start_epoch = 0, global_step = 0;
    if (!resume_from.empty()) {
        CheckpointInfo info = load_checkpoint(resume_from, model, &optim);
        start_epoch = info.epoch;
        global_step = info.step;
        rng.set_state(info.rng_state);
    }

    TrainResult res;
    res.best_path = out_dir + "/best.ckpt";
    for (int64_t epoch = start_epoch; epoch < r.epochs; ++epoch) {
        model.set_training(true);
        // deterministic shuffle
        std::vector<int64_t> order(static_cast<size_t>(N));
        for (int64_t i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;
        for (int64_t i = N - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)],
                                                      order[static_cast<size_t>(rng.randint(i + 1))]);

        double loss_sum = 0;
        int64_t loss_count = 0;
        for (int64_t b0 = 0; b0 < N; b0 += r.batch) {
            std::vector<int64_t> idx(order.begin() + b0, order.begin() + std::min(N, b0 + r.batch));
            if (idx.size() < 2) {  // batch statistics need at least two samples
                ++global_step;
                continue;
            }
            Tensor<T> batch = gather_images(tr.images, idx);
            if (r.augment) augment(batch, rng);
            std::vector<int> labels;
            for (int64_t i : idx) labels.push_back(tr.labels[static_cast<size_t>(i)]);

            Var<T> loss = cross_entropy(model.forward(leaf(std::move(batch))), labels);
            const double lval = static_cast<double>(loss->value[0]);
            if (!std::isfinite(lval))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(global_step) + "; last epoch checkpoint retained in " +
                                         out_dir);
            loss_sum += lval;
            ++loss_count;
            optim.zero_grad();
            backward(loss);
            optim.step(sched.lr(global_step));
            ++global_step;
            if (progress && global_step % 50 == 0)
                *progress << "epoch " << epoch << " step " << global_step << " loss " << lval << "\n";
        }

        const double acc = evaluate(model, te.images, te.labels);
        json rec = {{"epoch", epoch + 1},
                    {"step", global_step},
                    {"train_loss", loss_sum / static_cast<double>(loss_count)},
                    {"test_acc", acc},
                    {"lr", sched.lr(global_step - 1)}};
        metrics << rec.dump() << "\n";
        metrics.flush();
        res.final_loss = loss_sum / static_cast<double>(loss_count);

        save_checkpoint(out_dir + "/epoch-" + std::to_string(epoch + 1) + ".ckpt", model, &optim, epoch + 1,
                        global_step, rng.state());
        if (acc >= res.best_acc) {
            res.best_acc = acc;
            save_checkpoint(res.best_path, model, &optim, epoch + 1, global_step, rng.state());
        }
    }
    return res;
}

}  // namespace psycho
