#ifndef ASTROPRETEXT_CATALOG_HPP
#define ASTROPRETEXT_CATALOG_HPP

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace astropretext {

inline constexpr int kBandCount = 12;

/// Photometric passbands in wavelength order.
enum class Band : int { u, f378, f395, f410, f430, g, f515, r, f660, i, f861, z };

inline constexpr std::array<std::string_view, kBandCount> kBandNames = {
    "u", "f378", "f395", "f410", "f430", "g", "f515", "r", "f660", "i", "f861", "z"};

constexpr std::string_view band_name(Band band) { return kBandNames[static_cast<int>(band)]; }
std::optional<Band> band_from_name(std::string_view name);

inline constexpr double kMagnitudeScale = 30.0;
inline constexpr double kMagnitudeMin = 0.0;
inline constexpr double kMagnitudeMax = 40.0;
inline constexpr double kDefaultUncertaintyThreshold = 0.1;

using BandArray = Eigen::Array<double, kBandCount, 1>;

struct MagnitudeVector {
    BandArray values = BandArray::Zero();
    BandArray uncertainties = BandArray::Zero();

    double value(Band band) const { return values(static_cast<int>(band)); }
    double uncertainty(Band band) const { return uncertainties(static_cast<int>(band)); }
    bool valid() const;
};

struct CatalogEntry {
    std::string id;
    double ra = 0.0;
    double dec = 0.0;
    MagnitudeVector magnitudes;
    std::string label;  // empty = unlabeled

    bool labeled() const { return !label.empty(); }
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RowIssue {
    std::size_t line = 0;  // 1-based line in the CSV file
    std::string message;
};

struct CatalogLoad {
    std::vector<CatalogEntry> entries;
    std::vector<RowIssue> warnings;
};

/// CSV header expected by load_catalog / written by write_catalog.
std::vector<std::string> catalog_columns();

/**
 * Reads a catalog CSV (`id,ra,dec,u,u_err,...,z,z_err,label`).
 *
 * Malformed rows and rows whose `<id>.png` is missing from `image_dir` are
 * skipped and reported with their line number. An empty `image_dir` skips the
 * image check. Throws FormatError when a required column is missing or when
 * every data row was rejected.
 */
CatalogLoad load_catalog(const std::filesystem::path& path,
                         const std::filesystem::path& image_dir = {});
CatalogLoad parse_catalog(std::string_view csv_text,
                          const std::filesystem::path& image_dir = {});

std::string format_catalog(std::span<const CatalogEntry> entries);
void write_catalog(const std::filesystem::path& path, std::span<const CatalogEntry> entries);

std::vector<CatalogEntry> filter_by_uncertainty(std::span<const CatalogEntry> entries,
                                                double threshold = kDefaultUncertaintyThreshold);

std::vector<CatalogEntry> exclude_labeled(std::span<const CatalogEntry> entries,
                                          const std::unordered_set<std::string>& labeled_ids);

std::unordered_set<std::string> labeled_ids(std::span<const CatalogEntry> entries);

// Magnitude scaling to [0, 1].
inline BandArray scale_magnitudes(const BandArray& values) { return values / kMagnitudeScale; }
inline BandArray unscale_magnitudes(const BandArray& scaled) { return scaled * kMagnitudeScale; }

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct Split {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::uint64_t seed = 0;

    std::size_t size() const { return train.size() + validation.size() + test.size(); }
    bool operator==(const Split&) const = default;
};

/// Sizes for n items under floor rounding, remainder distributed train-first.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

Split make_split(std::span<const CatalogEntry> entries, std::uint64_t seed,
                 const SplitRatios& ratios = {});

std::string split_to_json(const Split& split);
Split split_from_json(std::string_view text);
void save_split(const std::filesystem::path& path, const Split& split);
Split load_split(const std::filesystem::path& path);

/// Largest-remainder apportionment of `n` over `counts`. Ties favour the
/// larger group, then the lower index.
std::vector<std::size_t> apportion(std::span<const std::size_t> counts, std::size_t n);

/**
 * Draws `n` ids from the training split only. Labeled catalogs are stratified
 * per class (largest remainder); otherwise draws are uniform. For a fixed
 * seed the per-class draw order is fixed, so growing `n` yields nested
 * subsets whenever the apportionment grows monotonically (always for two
 * classes). Returned ids keep training-split order.
 */
std::vector<std::string> subsample_training(const Split& split,
                                            std::span<const CatalogEntry> entries,
                                            std::size_t n, std::uint64_t seed);

enum class TaskKind { regression, classification };

struct ClassCount {
    std::string name;
    std::size_t count = 0;
};

struct DatasetDescriptor {
    std::string name;
    TaskKind task = TaskKind::classification;
    std::vector<ClassCount> classes;
    std::filesystem::path image_dir;
    std::filesystem::path catalog_path;

    std::size_t total() const;
    std::vector<std::string> class_names() const;
};

/// The six downstream presets: SG, SGQ, MG, EF-2, EF-4, EF-15.
std::vector<DatasetDescriptor> preset_descriptors();
std::optional<DatasetDescriptor> preset_descriptor(std::string_view name);

/// Human-readable mismatches between a labeled catalog and a preset's class
/// schema. Empty when the catalog matches exactly.
std::vector<std::string> validate_against_preset(const DatasetDescriptor& preset,
                                                 std::span<const CatalogEntry> entries);

}  // namespace astropretext

#endif  // ASTROPRETEXT_CATALOG_HPP
