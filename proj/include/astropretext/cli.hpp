#ifndef ASTROPRETEXT_CLI_HPP
#define ASTROPRETEXT_CLI_HPP

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace astropretext::cli {

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad or missing arguments; maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);
/// Blob id of the sorted "<blob id> <relative path>\n" listing of every file.
std::string directory_hash(const std::filesystem::path& directory);

/**
 * Every setting of every subcommand. JSON keys equal the member names; a
 * `--config` file supplies values that command-line flags then override.
 */
struct ExperimentConfig {
    // global
    std::uint64_t seed = 0;
    std::string out;
    int jobs = 1;
    std::string backbone = "tiny";
    std::vector<int> widths = {4, 8, 16, 32};
    int hidden_units = 2048;
    bool verbose = false;

    // dataset
    std::string data;      // directory with catalog.csv and images/
    std::string dataset;   // experiment name; defaults to the data directory name
    std::uint64_t split_seed = 0;

    // synth
    std::string classes;
    int image_size = 64;
    double gain = 0.0;     // 0 renders noiseless images
    double sky_level = 1.0;
    double psf_sigma = 1.5;
    std::string id_prefix = "obj";
    bool unlabeled = false;
    nlohmann::json class_models = nlohmann::json::array();

    // pretrain
    std::vector<std::string> exclude;  // labeled catalogs whose ids are removed
    double threshold = 0.1;
    int epochs = 200;
    std::string optimizer = "sgd";
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int batch_size = 32;
    int patience = 10;

    // train / curve
    std::vector<std::string> schemes;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> checkpoints;
    std::size_t train_size = 0;  // 0: the whole training split
    bool low_data = false;
    int epoch_cap = 0;           // 0: preset epoch limits
    std::vector<std::size_t> sizes;

    // project
    std::size_t samples = 2000;
    double perplexity = 50.0;
};

int cmd_synth(const ExperimentConfig& config, std::ostream& log);
int cmd_pretrain(const ExperimentConfig& config, std::ostream& log);
int cmd_train(const ExperimentConfig& config, std::ostream& log);
int cmd_curve(const ExperimentConfig& config, std::ostream& log);
int cmd_project(const ExperimentConfig& config, std::ostream& log);
/// Exit code 1 when any report cell is missing.
int cmd_report(const ExperimentConfig& config, std::ostream& log);

/// Parses arguments, runs the subcommand and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace astropretext::cli

#endif  // ASTROPRETEXT_CLI_HPP
