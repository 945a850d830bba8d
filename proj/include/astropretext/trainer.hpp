#ifndef ASTROPRETEXT_TRAINER_HPP
#define ASTROPRETEXT_TRAINER_HPP

#include "astropretext/catalog.hpp"
#include "astropretext/checkpoint.hpp"
#include "astropretext/image_io.hpp"
#include "astropretext/metrics.hpp"
#include "astropretext/netspec.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace astropretext {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Square 8-bit RGB images stored contiguously, addressed by position.
class ImageStore {
public:
    explicit ImageStore(int image_size = 0) : size_(image_size) {}

    int image_size() const { return size_; }
    std::size_t count() const { return count_; }
    std::size_t image_bytes() const { return static_cast<std::size_t>(size_) * size_ * 3; }

    void add(const RgbImage& image);
    const std::uint8_t* image(std::size_t k) const { return pixels_.data() + k * image_bytes(); }
    std::vector<const std::uint8_t*> pointers(std::span<const std::size_t> indices) const;

private:
    int size_;
    std::size_t count_ = 0;
    std::vector<std::uint8_t> pixels_;
};

/**
 * Catalog entries with their images and task targets. Regression targets are
 * scaled magnitudes (12 x N); classification labels index `class_names`.
 */
struct TrainingSet {
    TaskKind task = TaskKind::classification;
    std::vector<CatalogEntry> entries;
    ImageStore images;
    std::vector<std::string> class_names;
    std::vector<int> labels;
    Mat<float> targets;

    std::size_t size() const { return entries.size(); }
    int outputs() const {
        return task == TaskKind::regression ? kBandCount : static_cast<int>(class_names.size());
    }
    std::vector<std::size_t> indices_of(std::span<const std::string> ids) const;
};

/// Builds a training set from in-memory images (same order as `entries`).
TrainingSet make_training_set(TaskKind task, std::vector<CatalogEntry> entries,
                              std::span<const RgbImage> images);

/// Reads `<image_dir>/<id>.png` for every entry; all images must share one
/// square size.
TrainingSet load_training_set(TaskKind task, std::vector<CatalogEntry> entries,
                              const std::filesystem::path& image_dir);

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };
std::string to_string(OptimizerKind kind);

inline constexpr double kAdamDefaultLearningRate = 1e-3;
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-7;

struct OptimizerPhase {
    std::string name;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = kAdamDefaultLearningRate;
    int max_epochs = 1;
    bool freeze_backbone = false;
    double momentum = 0.0;  // SGD only
};

enum class EarlyStopMonitor { validation_loss, train_validation_gap };

struct EarlyStopPolicy {
    int patience = 10;
    EarlyStopMonitor monitor = EarlyStopMonitor::validation_loss;
    bool restore_best = true;
};

struct EpochLosses {
    double train_loss = 0.0;
    double validation_loss = 0.0;
};

struct EarlyStopDecision {
    bool stop = false;
    int best_epoch = 0;  // 1-based argmin of validation loss, ties to the earliest
};

/**
 * Stop once the monitored quantity has gone more than `patience` epochs
 * without a new minimum: validation loss, or with the gap monitor the
 * validation-minus-training loss.
 */
EarlyStopDecision check_early_stop(std::span<const EpochLosses> history, const EarlyStopPolicy& policy);

enum class SchemeKind { scratch, feature_extraction, fine_tuning };

enum class SchemeId { scratch, extract_imagenet, extract_magnitudes, finetune_imagenet, finetune_magnitudes };

inline constexpr SchemeId kAllSchemes[] = {SchemeId::scratch, SchemeId::extract_imagenet,
                                           SchemeId::extract_magnitudes, SchemeId::finetune_imagenet,
                                           SchemeId::finetune_magnitudes};

/// CLI / directory names: scratch, extract-imagenet, extract-magnitudes,
/// finetune-imagenet, finetune-magnitudes.
std::string to_string(SchemeId id);
SchemeId scheme_id_from_string(const std::string& name);

struct SchemeConfig {
    SchemeId id = SchemeId::scratch;
    SchemeKind kind = SchemeKind::scratch;
    Pretraining pretraining = Pretraining::none;
    std::vector<OptimizerPhase> phases;
    int batch_size = 32;
    std::uint64_t seed = 0;
    EarlyStopPolicy early_stop;

    void validate() const;
};

/**
 * The five comparison schemes. Scratch: Adam up to 200 epochs (SGD 1e-4 in
 * the low-data experiment). Feature extraction: frozen backbone, Adam up to
 * 100 epochs. Fine-tuning: 10 epochs of Adam with a frozen backbone, then
 * SGD 1e-4 on everything for up to 200 epochs.
 */
SchemeConfig scheme_preset(SchemeId id, std::uint64_t seed = 0, bool low_data = false);

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;  // 1-based across all phases
    int phase = 0;  // 0-based phase index
    std::string phase_name;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.0;
    bool backbone_frozen = false;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_metric = 0.0;  // accuracy or scaled MAE
};

struct RunResult {
    std::string scheme;
    TaskKind task = TaskKind::classification;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double final_metric = 0.0;  // validation accuracy or scaled MAE at the restored weights
    double final_validation_loss = 0.0;
    double raw_mae = 0.0;       // regression: 30 x scaled MAE
    double baseline_metric = 0.0;  // majority-class accuracy or mean-predictor scaled MAE
    double wall_clock_seconds = 0.0;
    std::uint64_t seed = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    std::string checkpoint;
    std::string preprocessing = "unit";  // input transform the model saw
    std::vector<std::string> warnings;

    int epochs_run() const { return static_cast<int>(history.size()); }
};

/// Called after every epoch; used for invariant checks and progress output.
using EpochObserver = std::function<void(const EpochRecord&, Model<float>&)>;

/**
 * Minibatch training over `phases`, each with a fresh optimizer and its own
 * early stopping; best weights of a phase are restored before the next one.
 * The head's max-norm constraint is enforced after every optimizer step.
 */
RunResult fit(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> train,
              std::span<const std::size_t> validation, std::span<const OptimizerPhase> phases,
              const EarlyStopPolicy& policy, int batch_size, std::uint64_t seed,
              const EpochObserver& observer = {});

struct Evaluation {
    double loss = 0.0;
    double metric = 0.0;
};

Evaluation evaluate(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> indices,
                    int batch_size = 64);

/// Per-band mean of the training targets; MAE of predicting it on `validation`.
double mean_predictor_mae(const TrainingSet& data, std::span<const std::size_t> train,
                          std::span<const std::size_t> validation);
double majority_class_accuracy(const TrainingSet& data, std::span<const std::size_t> train,
                               std::span<const std::size_t> validation);

struct PretextConfig {
    OptimizerPhase phase{"pretext", OptimizerKind::sgd, 1e-3, 200, false, 0.9};  // plain SGD barely moves in 20 epochs
    int batch_size = 32;
    std::uint64_t seed = 0;
    EarlyStopPolicy early_stop;
    bool output_bias_from_targets = true;  // start outputs at the training-mean magnitudes
};

/// Magnitude regression. Throws when a target lies outside [0, 1] (unscaled
/// magnitudes) or when the model head is not a 12-output saturating ReLU.
RunResult train_pretext(Model<float>& model, const TrainingSet& data, std::span<const std::size_t> train,
                        std::span<const std::size_t> validation, const PretextConfig& config,
                        const EpochObserver& observer = {});

struct PretrainedBackbone {
    Model<float> model;
    Pretraining provenance = Pretraining::none;
};

PretrainedBackbone load_pretrained(const std::filesystem::path& checkpoint_dir);

struct SchemeRun {
    RunResult result;
    Model<float> model;
};

/**
 * Builds a fresh model (head seeded from the scheme seed), copies the
 * pretrained backbone when the scheme needs one and runs the scheme's phase
 * sequence. Throws when a required checkpoint is missing or has the wrong
 * provenance.
 */
SchemeRun train_scheme(const SchemeConfig& scheme, const TrainingSet& data,
                       std::span<const std::size_t> train, std::span<const std::size_t> validation,
                       const BackboneSpec& backbone, const PretrainedBackbone* pretrained,
                       HeadSpec head = {}, const EpochObserver& observer = {});

/// 100..1000 by 100, 1500..3000 by 500, 10000..40000 by 10000, truncated to max_n.
std::vector<std::size_t> low_data_schedule(std::size_t max_n);

struct LowDataConfig {
    std::vector<SchemeId> schemes;
    std::vector<std::size_t> sizes;   // empty: low_data_schedule(|train|)
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    BackboneSpec backbone;
    HeadSpec head;
    std::unordered_map<int, PretrainedBackbone> pretrained;  // keyed by Pretraining
    std::filesystem::path run_root;   // runs/<experiment>; empty: nothing written
    int jobs = 1;
    std::function<void(SchemeConfig&)> adjust_scheme;  // e.g. epoch caps, applied after the preset
    std::function<void(SchemeId, std::size_t, std::uint64_t, const RunResult&)> on_run;
};

/// Trains every (scheme, size, seed) on nested stratified subsamples of the
/// training split; the validation split is shared by every run.
std::vector<LearningCurve> run_low_data_experiment(const TrainingSet& data, const Split& split,
                                                   const LowDataConfig& config);

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

std::string history_csv(const RunResult& result);
std::string result_json(const RunResult& result);
RunResult result_from_json(const std::string& text);

/// Writes result.json and history.csv into `directory`.
void write_run(const std::filesystem::path& directory, const RunResult& result);
RunResult read_run(const std::filesystem::path& directory);

std::filesystem::path run_directory(const std::filesystem::path& root, const std::string& experiment,
                                    const std::string& scheme, const std::string& size,
                                    std::uint64_t seed);

}  // namespace astropretext

#endif  // ASTROPRETEXT_TRAINER_HPP
