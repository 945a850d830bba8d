#include "astropretext/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>

namespace astropretext {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

void ImageStore::add(const RgbImage& image) {
    if (size_ == 0) {
        size_ = image.width;
    }
    if (image.width != size_ || image.height != size_) {
        throw std::invalid_argument("image is " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + ", expected " + std::to_string(size_) +
                                    "x" + std::to_string(size_));
    }
    pixels_.insert(pixels_.end(), image.pixels.begin(), image.pixels.end());
    ++count_;
}

std::vector<const std::uint8_t*> ImageStore::pointers(std::span<const std::size_t> indices) const {
    std::vector<const std::uint8_t*> out;
    out.reserve(indices.size());
    for (std::size_t k : indices) {
        out.push_back(image(k));
    }
    return out;
}

std::vector<std::size_t> TrainingSet::indices_of(std::span<const std::string> ids) const {
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        position.emplace(entries[k].id, k);
    }
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = position.find(id);
        if (it == position.end()) {
            throw std::invalid_argument("id '" + id + "' is not part of the training set");
        }
        out.push_back(it->second);
    }
    return out;
}

namespace {

void attach_targets(TrainingSet& set) {
    const auto n = static_cast<Eigen::Index>(set.entries.size());
    if (set.task == TaskKind::regression) {
        set.targets.resize(kBandCount, n);
        for (Eigen::Index k = 0; k < n; ++k) {
            set.targets.col(k) =
                scale_magnitudes(set.entries[static_cast<std::size_t>(k)].magnitudes.values).cast<float>().matrix();
        }
        return;
    }
    std::set<std::string> names;
    for (const auto& e : set.entries) {
        if (!e.labeled()) {
            throw std::invalid_argument("classification data contains unlabeled object '" + e.id + "'");
        }
        names.insert(e.label);
    }
    set.class_names.assign(names.begin(), names.end());
    set.labels.clear();
    for (const auto& e : set.entries) {
        set.labels.push_back(static_cast<int>(
            std::lower_bound(set.class_names.begin(), set.class_names.end(), e.label) - set.class_names.begin()));
    }
}

}  // namespace

TrainingSet make_training_set(TaskKind task, std::vector<CatalogEntry> entries,
                              std::span<const RgbImage> images) {
    if (entries.size() != images.size()) {
        throw std::invalid_argument("entry and image counts differ");
    }
    TrainingSet set;
    set.task = task;
    set.entries = std::move(entries);
    for (const auto& image : images) {
        set.images.add(image);
    }
    attach_targets(set);
    return set;
}

TrainingSet load_training_set(TaskKind task, std::vector<CatalogEntry> entries, const fs::path& image_dir) {
    TrainingSet set;
    set.task = task;
    set.entries = std::move(entries);
    for (const auto& e : set.entries) {
        set.images.add(read_png(image_dir / (e.id + ".png")));
    }
    attach_targets(set);
    return set;
}

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

std::string to_string(SchemeId id) {
    switch (id) {
    case SchemeId::scratch:
        return "scratch";
    case SchemeId::extract_imagenet:
        return "extract-imagenet";
    case SchemeId::extract_magnitudes:
        return "extract-magnitudes";
    case SchemeId::finetune_imagenet:
        return "finetune-imagenet";
    case SchemeId::finetune_magnitudes:
        return "finetune-magnitudes";
    }
    return "scratch";
}

SchemeId scheme_id_from_string(const std::string& name) {
    for (SchemeId id : kAllSchemes) {
        if (to_string(id) == name) {
            return id;
        }
    }
    throw std::invalid_argument("unknown scheme '" + name +
                                "' (expected scratch, extract-imagenet, extract-magnitudes, "
                                "finetune-imagenet or finetune-magnitudes)");
}

void SchemeConfig::validate() const {
    if (kind == SchemeKind::scratch && pretraining != Pretraining::none) {
        throw std::invalid_argument("training from scratch cannot use pretrained weights");
    }
    if (kind != SchemeKind::scratch && pretraining == Pretraining::none) {
        throw std::invalid_argument("feature extraction and fine-tuning need pretrained weights");
    }
    if (phases.empty()) {
        throw std::invalid_argument("scheme has no optimizer phases");
    }
    for (const auto& p : phases) {
        if (p.max_epochs < 0 || !(p.learning_rate > 0.0)) {
            throw std::invalid_argument("phase '" + p.name + "' needs epochs >= 0 and a positive learning rate");
        }
    }
    if (batch_size < 1) {
        throw std::invalid_argument("batch size must be positive");
    }
    if (early_stop.patience < 1) {
        throw std::invalid_argument("early-stopping patience must be at least 1");
    }
}

SchemeConfig scheme_preset(SchemeId id, std::uint64_t seed, bool low_data) {
    SchemeConfig c;
    c.id = id;
    c.seed = seed;
    const OptimizerPhase frozen_adam{"head-only", OptimizerKind::adam, kAdamDefaultLearningRate, 10, true};
    const OptimizerPhase all_sgd{"all-layers", OptimizerKind::sgd, 1e-4, 200, false};
    switch (id) {
    case SchemeId::scratch:
        c.kind = SchemeKind::scratch;
        c.pretraining = Pretraining::none;
        c.phases = {low_data ? OptimizerPhase{"all-layers", OptimizerKind::sgd, 1e-4, 200, false}
                             : OptimizerPhase{"all-layers", OptimizerKind::adam, kAdamDefaultLearningRate, 200, false}};
        break;
    case SchemeId::extract_imagenet:
    case SchemeId::extract_magnitudes:
        c.kind = SchemeKind::feature_extraction;
        c.pretraining = id == SchemeId::extract_imagenet ? Pretraining::imagenet : Pretraining::magnitudes;
        c.phases = {{"head-only", OptimizerKind::adam, kAdamDefaultLearningRate, 100, true}};
        break;
    case SchemeId::finetune_imagenet:
    case SchemeId::finetune_magnitudes:
        c.kind = SchemeKind::fine_tuning;
        c.pretraining = id == SchemeId::finetune_imagenet ? Pretraining::imagenet : Pretraining::magnitudes;
        c.phases = {frozen_adam, all_sgd};
        break;
    }
    return c;
}

EarlyStopDecision check_early_stop(std::span<const EpochLosses> history, const EarlyStopPolicy& policy) {
    EarlyStopDecision d;
    if (history.empty()) {
        return d;
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < history.size(); ++k) {
        if (history[k].validation_loss < history[best].validation_loss) {
            best = k;
        }
    }
    d.best_epoch = static_cast<int>(best) + 1;

    std::size_t monitored_best = best;
    if (policy.monitor == EarlyStopMonitor::train_validation_gap) {
        monitored_best = 0;
        auto gap = [&](std::size_t k) { return history[k].validation_loss - history[k].train_loss; };
        for (std::size_t k = 1; k < history.size(); ++k) {
            if (gap(k) < gap(monitored_best)) {
                monitored_best = k;
            }
        }
    }
    const auto since = static_cast<long>(history.size()) - static_cast<long>(monitored_best + 1);
    d.stop = since > policy.patience;
    return d;
}

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

namespace {

class Optimizer {
public:
    Optimizer(const OptimizerPhase& phase, std::vector<Parameter<float>*> params)
        : phase_(phase), params_(std::move(params)) {
        first_.resize(params_.size());
        second_.resize(params_.size());
    }

    void step() {
        ++steps_;
        const double lr = phase_.learning_rate;
        double adam_rate = 0.0;
        if (phase_.optimizer == OptimizerKind::adam) {
            adam_rate = lr * std::sqrt(1.0 - std::pow(kAdamBeta2, steps_)) / (1.0 - std::pow(kAdamBeta1, steps_));
        }
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Parameter<float>& p = *params_[k];
            if (p.frozen || p.grad.size() != p.value.size()) {
                continue;
            }
            if (phase_.optimizer == OptimizerKind::sgd) {
                if (phase_.momentum > 0.0) {
                    if (first_[k].size() == 0) {
                        first_[k] = Mat<float>::Zero(p.value.rows(), p.value.cols());
                    }
                    first_[k] = float(phase_.momentum) * first_[k] - float(lr) * p.grad;
                    p.value += first_[k];
                } else {
                    p.value -= float(lr) * p.grad;
                }
                continue;
            }
            if (first_[k].size() == 0) {
                first_[k] = Mat<float>::Zero(p.value.rows(), p.value.cols());
                second_[k] = Mat<float>::Zero(p.value.rows(), p.value.cols());
            }
            first_[k] = float(kAdamBeta1) * first_[k] + float(1.0 - kAdamBeta1) * p.grad;
            second_[k] = float(kAdamBeta2) * second_[k] + float(1.0 - kAdamBeta2) * p.grad.cwiseAbs2();
            p.value.array() -= float(adam_rate) * first_[k].array() /
                               (second_[k].array().sqrt() + float(kAdamEpsilon));
        }
    }

private:
    OptimizerPhase phase_;
    std::vector<Parameter<float>*> params_;
    std::vector<Mat<float>> first_;
    std::vector<Mat<float>> second_;
    int steps_ = 0;
};

LossKind loss_kind(TaskKind task) {
    return task == TaskKind::regression ? LossKind::mean_absolute_error : LossKind::cross_entropy;
}

Mat<float> batch_targets(const TrainingSet& data, std::span<const std::size_t> indices) {
    Mat<float> t;
    if (data.task == TaskKind::regression) {
        t.resize(kBandCount, static_cast<Eigen::Index>(indices.size()));
        for (std::size_t k = 0; k < indices.size(); ++k) {
            t.col(static_cast<Eigen::Index>(k)) = data.targets.col(static_cast<Eigen::Index>(indices[k]));
        }
    } else {
        t = Mat<float>::Zero(data.outputs(), static_cast<Eigen::Index>(indices.size()));
        for (std::size_t k = 0; k < indices.size(); ++k) {
            t(data.labels[indices[k]], static_cast<Eigen::Index>(k)) = 1.0f;
        }
    }
    return t;
}

std::vector<Mat<float>> snapshot(Model<float>& model) {
    std::vector<Mat<float>> values;
    for (const auto* p : model.parameters()) {
        values.push_back(p->value);
    }
    return values;
}

void restore(Model<float>& model, const std::vector<Mat<float>>& values) {
    auto params = model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        params[k]->value = values[k];
    }
}

}  // namespace

Evaluation evaluate(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> indices,
                    int batch_size) {
    if (indices.empty()) {
        throw std::invalid_argument("cannot evaluate on an empty index set");
    }
    const LossKind kind = loss_kind(data.task);
    double loss_sum = 0.0;
    double abs_error = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const auto chunk = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
        const auto pointers = data.images.pointers(chunk);
        const auto input = images_to_tensor<float>(pointers, data.images.image_size());
        const Mat<float> out = model.forward(input, false).data;
        const Mat<float> targets = batch_targets(data, chunk);
        loss_sum += static_cast<double>(loss(kind, out, targets)) * static_cast<double>(chunk.size());
        if (data.task == TaskKind::regression) {
            abs_error += (out - targets).cwiseAbs().cast<double>().sum();
        } else {
            const auto predicted = argmax_columns(out);
            for (std::size_t k = 0; k < chunk.size(); ++k) {
                hits += predicted[k] == data.labels[chunk[k]];
            }
        }
    }
    Evaluation e;
    e.loss = loss_sum / static_cast<double>(indices.size());
    e.metric = data.task == TaskKind::regression
                   ? abs_error / static_cast<double>(indices.size() * kBandCount)
                   : static_cast<double>(hits) / static_cast<double>(indices.size());
    return e;
}

RunResult fit(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> train,
              std::span<const std::size_t> validation, std::span<const OptimizerPhase> phases,
              const EarlyStopPolicy& policy, int batch_size, std::uint64_t seed, const EpochObserver& observer) {
    if (train.empty() || validation.empty()) {
        throw std::invalid_argument("training and validation sets must be non-empty");
    }
    if (model.head().outputs != data.outputs()) {
        throw std::invalid_argument("model head has " + std::to_string(model.head().outputs) +
                                    " outputs, the task needs " + std::to_string(data.outputs()));
    }
    const auto started = std::chrono::steady_clock::now();
    const LossKind kind = loss_kind(data.task);
    model.reseed_dropout(seed);

    RunResult result;
    result.task = data.task;
    result.seed = seed;
    result.preprocessing = model.input_transform().name;
    result.train_size = train.size();
    result.validation_size = validation.size();

    std::vector<std::size_t> order(train.begin(), train.end());
    int epoch = 0;
    for (std::size_t phase_index = 0; phase_index < phases.size(); ++phase_index) {
        const OptimizerPhase& phase = phases[phase_index];
        model.set_backbone_frozen(phase.freeze_backbone);
        Optimizer optimizer(phase, model.parameters());
        std::vector<EpochLosses> losses;
        std::vector<Mat<float>> best_weights;
        int phase_best = 0;

        for (int local = 1; local <= phase.max_epochs; ++local) {
            ++epoch;
            Rng shuffler(stream_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
            shuffler.shuffle(std::span(order));

            double train_loss = 0.0;
            for (std::size_t start = 0; start < order.size(); start += batch_size) {
                const auto chunk = std::span<const std::size_t>(order).subspan(
                    start, std::min<std::size_t>(batch_size, order.size() - start));
                const auto pointers = data.images.pointers(chunk);
                const auto input = images_to_tensor<float>(pointers, data.images.image_size());
                const Mat<float> targets = batch_targets(data, chunk);
                const Mat<float> out = model.forward(input, true).data;
                train_loss += static_cast<double>(loss(kind, out, targets)) * static_cast<double>(chunk.size());
                model.backward(loss_gradient(kind, out, targets));
                optimizer.step();
                model.constrain();
            }
            train_loss /= static_cast<double>(order.size());

            const Evaluation val = evaluate(model, data, validation);
            EpochRecord record{epoch,          static_cast<int>(phase_index), phase.name, phase.optimizer,
                               phase.learning_rate, phase.freeze_backbone,   train_loss, val.loss,
                               val.metric};
            result.history.push_back(record);
            losses.push_back({train_loss, val.loss});
            if (observer) {
                observer(record, model);
            }
            const EarlyStopDecision decision = check_early_stop(losses, policy);
            if (decision.best_epoch == local) {
                phase_best = local;
                if (policy.restore_best) {
                    best_weights = snapshot(model);
                }
            }
            if (decision.stop) {
                break;
            }
        }
        if (!losses.empty()) {
            result.best_epoch = epoch - static_cast<int>(losses.size()) + phase_best;
            if (policy.restore_best && !best_weights.empty()) {
                restore(model, best_weights);
            }
        }
    }
    model.set_backbone_frozen(false);

    const Evaluation final_eval = evaluate(model, data, validation);
    result.final_metric = final_eval.metric;
    result.final_validation_loss = final_eval.loss;
    if (data.task == TaskKind::regression) {
        result.raw_mae = kMagnitudeScale * result.final_metric;
    }
    result.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

double mean_predictor_mae(const TrainingSet& data, std::span<const std::size_t> train,
                          std::span<const std::size_t> validation) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kBandCount);
    for (std::size_t k : train) {
        mean += data.targets.col(static_cast<Eigen::Index>(k)).cast<double>();
    }
    mean /= static_cast<double>(train.size());
    double error = 0.0;
    for (std::size_t k : validation) {
        error += (data.targets.col(static_cast<Eigen::Index>(k)).cast<double>() - mean).cwiseAbs().sum();
    }
    return error / static_cast<double>(validation.size() * kBandCount);
}

double majority_class_accuracy(const TrainingSet& data, std::span<const std::size_t> train,
                               std::span<const std::size_t> validation) {
    std::vector<std::size_t> counts(data.class_names.size(), 0);
    for (std::size_t k : train) {
        ++counts[data.labels[k]];
    }
    const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t hits = 0;
    for (std::size_t k : validation) {
        hits += data.labels[k] == majority;
    }
    return static_cast<double>(hits) / static_cast<double>(validation.size());
}

RunResult train_pretext(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> train,
                        std::span<const std::size_t> validation, const PretextConfig& config,
                        const EpochObserver& observer) {
    if (data.task != TaskKind::regression) {
        throw std::invalid_argument("the pretext task needs magnitude targets");
    }
    if (model.head().outputs != kBandCount || model.head().activation != OutputActivation::saturating_relu) {
        throw std::invalid_argument("the pretext head must have 12 saturating-ReLU outputs");
    }
    for (auto indices : {train, validation}) {
        for (std::size_t k : indices) {
            const auto col = data.targets.col(static_cast<Eigen::Index>(k));
            if ((col.array() < 0.0f).any() || (col.array() > 1.0f).any()) {
                throw std::invalid_argument("magnitude target of '" + data.entries[k].id +
                                            "' lies outside [0, 1]; magnitudes must be divided by 30");
            }
        }
    }
    if (config.output_bias_from_targets && !train.empty()) {
        Vec<float> mean = Vec<float>::Zero(kBandCount);
        for (std::size_t k : train) {
            mean += data.targets.col(static_cast<Eigen::Index>(k));
        }
        model.output_layer().bias().value = mean / static_cast<float>(train.size());
    }
    const OptimizerPhase phases[] = {config.phase};
    RunResult result = fit(model, data, train, validation, phases, config.early_stop, config.batch_size,
                           config.seed, observer);
    result.scheme = "pretext";
    result.baseline_metric = mean_predictor_mae(data, train, validation);
    return result;
}

PretrainedBackbone load_pretrained(const fs::path& checkpoint_dir) {
    // only the backbone is reused, so head tensors may be absent (imported weights)
    const CheckpointInfo info = read_checkpoint_info(checkpoint_dir);
    Model<float> model(info.backbone, info.head, info.seed);
    load_backbone(checkpoint_dir, model);
    return {std::move(model), info.provenance};
}

SchemeRun train_scheme(const SchemeConfig& scheme, const TrainingSet& data, std::span<const std::size_t> train,
                       std::span<const std::size_t> validation, const BackboneSpec& backbone,
                       const PretrainedBackbone* pretrained, HeadSpec head, const EpochObserver& observer) {
    scheme.validate();
    if (data.task != TaskKind::classification) {
        throw std::invalid_argument("downstream schemes need a labeled classification dataset");
    }
    head.outputs = data.outputs();
    head.activation = OutputActivation::softmax;
    Model<float> model(backbone, head, scheme.seed);

    if (scheme.pretraining != Pretraining::none) {
        if (!pretrained) {
            throw std::runtime_error("scheme " + to_string(scheme.id) + " needs a checkpoint pretrained on " +
                                     to_string(scheme.pretraining) + ": run pretrain first or pass --checkpoint");
        }
        if (pretrained->provenance != scheme.pretraining) {
            throw std::runtime_error("scheme " + to_string(scheme.id) + " needs " + to_string(scheme.pretraining) +
                                     " weights but the checkpoint provenance is " +
                                     to_string(pretrained->provenance));
        }
        copy_backbone(pretrained->model, model);
    }

    std::vector<std::string> warnings;
    std::set<int> seen;
    for (std::size_t k : train) {
        seen.insert(data.labels[k]);
    }
    std::set<int> reported;
    for (std::size_t k : validation) {
        const int label = data.labels[k];
        if (!seen.contains(label) && reported.insert(label).second) {
            warnings.push_back("class '" + data.class_names[label] +
                               "' appears in validation but not in the training subsample");
        }
    }

    RunResult result = fit(model, data, train, validation, scheme.phases, scheme.early_stop, scheme.batch_size,
                           scheme.seed, observer);
    result.scheme = to_string(scheme.id);
    result.warnings = std::move(warnings);
    result.baseline_metric = majority_class_accuracy(data, train, validation);
    return {std::move(result), std::move(model)};
}

std::vector<std::size_t> low_data_schedule(std::size_t max_n) {
    if (max_n < 100) {
        throw std::invalid_argument("low-data schedule needs at least 100 training samples");
    }
    std::vector<std::size_t> full;
    for (std::size_t n = 100; n <= 1000; n += 100) {
        full.push_back(n);
    }
    for (std::size_t n = 1500; n <= 3000; n += 500) {
        full.push_back(n);
    }
    for (std::size_t n = 10000; n <= 40000; n += 10000) {
        full.push_back(n);
    }
    std::vector<std::size_t> out;
    std::copy_if(full.begin(), full.end(), std::back_inserter(out), [&](std::size_t n) { return n <= max_n; });
    return out;
}

std::vector<LearningCurve> run_low_data_experiment(const TrainingSet& data, const Split& split,
                                                   const LowDataConfig& config) {
    if (data.task != TaskKind::classification) {
        throw std::invalid_argument("the low-data experiment needs labeled data");
    }
    if (config.seeds.empty() || config.schemes.empty()) {
        throw std::invalid_argument("the low-data experiment needs at least one scheme and one seed");
    }
    const std::vector<std::size_t> sizes =
        config.sizes.empty() ? low_data_schedule(split.train.size()) : config.sizes;
    const auto validation = data.indices_of(split.validation);

    struct Job {
        SchemeId scheme;
        std::size_t size;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (SchemeId id : config.schemes) {
        for (std::size_t size : sizes) {
            for (std::uint64_t seed : config.seeds) {
                jobs.push_back({id, size, seed});
            }
        }
    }

    auto run_job = [&](const Job& job) {
        SchemeConfig scheme = scheme_preset(job.scheme, job.seed, true);
        if (config.adjust_scheme) {
            config.adjust_scheme(scheme);
        }
        const auto ids = subsample_training(split, data.entries, job.size, job.seed);
        const auto train = data.indices_of(ids);
        const PretrainedBackbone* pretrained = nullptr;
        if (scheme.pretraining != Pretraining::none) {
            const auto it = config.pretrained.find(static_cast<int>(scheme.pretraining));
            pretrained = it == config.pretrained.end() ? nullptr : &it->second;
        }
        SchemeRun run = train_scheme(scheme, data, train, validation, config.backbone, pretrained, config.head);
        if (!config.run_root.empty()) {
            write_run(config.run_root / to_string(job.scheme) / std::to_string(job.size) /
                          std::to_string(job.seed),
                      run.result);
        }
        return run.result;
    };

    std::vector<RunResult> results(jobs.size());
    const std::size_t parallel = static_cast<std::size_t>(std::max(1, config.jobs));
    for (std::size_t start = 0; start < jobs.size(); start += parallel) {
        const std::size_t end = std::min(jobs.size(), start + parallel);
        if (parallel == 1) {
            results[start] = run_job(jobs[start]);
        } else {
            std::vector<std::future<RunResult>> pending;
            for (std::size_t k = start; k < end; ++k) {
                pending.push_back(std::async(std::launch::async, run_job, jobs[k]));
            }
            for (std::size_t k = start; k < end; ++k) {
                results[k] = pending[k - start].get();
            }
        }
        for (std::size_t k = start; k < end; ++k) {
            if (config.on_run) {
                config.on_run(jobs[k].scheme, jobs[k].size, jobs[k].seed, results[k]);
            }
        }
    }

    std::vector<LearningCurve> curves;
    std::size_t k = 0;
    for (SchemeId id : config.schemes) {
        LearningCurve curve{to_string(id), {}};
        for (std::size_t size : sizes) {
            std::vector<double> metrics;
            for (std::size_t s = 0; s < config.seeds.size(); ++s, ++k) {
                metrics.push_back(results[k].final_metric);
            }
            curve.points.push_back({size, aggregate(metrics)});
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

namespace {

std::string number(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.9g", v);
    return buffer;
}

}  // namespace

std::string history_csv(const RunResult& result) {
    std::string out = "epoch,phase,phase_name,optimizer,learning_rate,backbone_frozen,train_loss,val_loss,val_acc,val_mae\n";
    for (const auto& r : result.history) {
        const std::string metric = number(r.validation_metric);
        out += std::to_string(r.epoch) + ',' + std::to_string(r.phase) + ',' + r.phase_name + ',' +
               to_string(r.optimizer) + ',' + number(r.learning_rate) + ',' + (r.backbone_frozen ? "1" : "0") +
               ',' + number(r.train_loss) + ',' + number(r.validation_loss) + ',' +
               (result.task == TaskKind::classification ? metric + "," : "," + metric) + '\n';
    }
    return out;
}

std::string result_json(const RunResult& r) {
    nlohmann::ordered_json j;
    j["scheme"] = r.scheme;
    j["task"] = r.task == TaskKind::regression ? "regression" : "classification";
    j["seed"] = r.seed;
    j["train_size"] = r.train_size;
    j["validation_size"] = r.validation_size;
    j["epochs_run"] = r.epochs_run();
    j["best_epoch"] = r.best_epoch;
    j["final_metric"] = r.final_metric;
    j["final_validation_loss"] = r.final_validation_loss;
    if (r.task == TaskKind::regression) {
        j["scaled_mae"] = r.final_metric;
        j["raw_mae"] = r.raw_mae;
    } else {
        j["accuracy"] = r.final_metric;
    }
    j["baseline_metric"] = r.baseline_metric;
    j["wall_clock_seconds"] = r.wall_clock_seconds;
    j["checkpoint"] = r.checkpoint;
    j["preprocessing"] = r.preprocessing;
    j["warnings"] = r.warnings;
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    for (const auto& e : r.history) {
        history.push_back({{"epoch", e.epoch},
                           {"phase", e.phase},
                           {"phase_name", e.phase_name},
                           {"optimizer", to_string(e.optimizer)},
                           {"learning_rate", e.learning_rate},
                           {"backbone_frozen", e.backbone_frozen},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.validation_loss},
                           {"val_metric", e.validation_metric}});
    }
    j["history"] = history;
    return j.dump(2);
}

RunResult result_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    RunResult r;
    r.scheme = j.at("scheme").get<std::string>();
    r.task = j.at("task").get<std::string>() == "regression" ? TaskKind::regression : TaskKind::classification;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.train_size = j.value("train_size", std::size_t{0});
    r.validation_size = j.value("validation_size", std::size_t{0});
    r.best_epoch = j.value("best_epoch", 0);
    r.final_metric = j.at("final_metric").get<double>();
    r.final_validation_loss = j.value("final_validation_loss", 0.0);
    r.raw_mae = j.value("raw_mae", 0.0);
    r.baseline_metric = j.value("baseline_metric", 0.0);
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.checkpoint = j.value("checkpoint", std::string{});
    r.preprocessing = j.value("preprocessing", std::string("unit"));
    r.warnings = j.value("warnings", std::vector<std::string>{});
    if (j.contains("history")) {
        for (const auto& e : j.at("history")) {
            EpochRecord rec;
            rec.epoch = e.at("epoch").get<int>();
            rec.phase = e.at("phase").get<int>();
            rec.phase_name = e.at("phase_name").get<std::string>();
            rec.optimizer = e.at("optimizer").get<std::string>() == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
            rec.learning_rate = e.at("learning_rate").get<double>();
            rec.backbone_frozen = e.at("backbone_frozen").get<bool>();
            rec.train_loss = e.at("train_loss").get<double>();
            rec.validation_loss = e.at("val_loss").get<double>();
            rec.validation_metric = e.at("val_metric").get<double>();
            r.history.push_back(rec);
        }
    }
    return r;
}

void write_run(const fs::path& directory, const RunResult& result) {
    fs::create_directories(directory);
    std::ofstream json(directory / "result.json", std::ios::binary);
    json << result_json(result) << '\n';
    std::ofstream csv(directory / "history.csv", std::ios::binary);
    csv << history_csv(result);
    if (!json || !csv) {
        throw std::runtime_error("cannot write run files in " + directory.string());
    }
}

RunResult read_run(const fs::path& directory) {
    std::ifstream in(directory / "result.json", std::ios::binary);
    if (!in) {
        throw std::runtime_error("missing result.json in " + directory.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return result_from_json(buffer.str());
}

fs::path run_directory(const fs::path& root, const std::string& experiment, const std::string& scheme,
                       const std::string& size, std::uint64_t seed) {
    return root / experiment / scheme / size / std::to_string(seed);
}

}  // namespace astropretext
