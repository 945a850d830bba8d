#ifndef ASTROPRETEXT_EVALUATOR_HPP
#define ASTROPRETEXT_EVALUATOR_HPP

#include "astropretext/metrics.hpp"
#include "astropretext/trainer.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace astropretext {

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

struct Projection2D {
    Eigen::MatrixX2d points;
    double perplexity = 50.0;
    std::vector<std::string> labels;  // optional, one per point
    std::vector<std::string> ids;     // optional, one per point
};

struct ProjectionOptions {
    double perplexity = 50.0;
    std::uint64_t seed = 0;
    int iterations = 1000;
    int exaggeration_iterations = 250;
    double exaggeration = 12.0;
    double learning_rate = 0.0;  // 0: max(N / exaggeration / 4, 50)
};

/// Exact t-SNE of the rows of `features`. Throws unless N > 3 * perplexity
/// and D >= 2. Same inputs and seed give identical coordinates.
Projection2D project_features(const Eigen::MatrixXd& features, const ProjectionOptions& options = {});
Projection2D project_features(const Eigen::MatrixXd& features, double perplexity, std::uint64_t seed);

/// Mean silhouette coefficient of `points` under `labels` (Euclidean).
double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels);

/// Writes projection.csv (id,x,y,label) and projection.png.
void write_projection(const std::filesystem::path& directory, const Projection2D& projection,
                      const std::string& title = "");

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Column order of the report grid.
inline constexpr std::array<SchemeId, 5> kReportColumns = {
    SchemeId::scratch, SchemeId::extract_imagenet, SchemeId::extract_magnitudes, SchemeId::finetune_imagenet,
    SchemeId::finetune_magnitudes};

/// CSV headers of the five scheme columns.
inline constexpr std::array<const char*, 5> kReportColumnNames = {"scratch", "fe_imagenet", "fe_magnitudes",
                                                                  "ft_imagenet", "ft_magnitudes"};

struct ReportRow {
    std::string section;     // "full" (all training data) or "lowdata"
    std::string dataset;
    std::string train_size;  // "full" or a count
    std::array<std::optional<AggregateMetric>, 5> cells;
    std::optional<double> fe_diff;  // magnitudes - imagenet, means
    std::optional<double> ft_diff;
    std::vector<std::string> best;  // column names flagged best within their group
};

struct Report {
    std::vector<ReportRow> rows;
    bool incomplete = false;  // a cell is missing or has fewer runs than its peers
};

/// Groups runs stored as <root>/<dataset>/<scheme>/<size>/<seed>/result.json.
Report collect_report(const std::filesystem::path& root);

/// Builds a report from in-memory results: one entry per (section, dataset,
/// train size, scheme) with its runs.
struct ReportInput {
    std::string section;
    std::string dataset;
    std::string train_size;
    SchemeId scheme = SchemeId::scratch;
    std::vector<double> metrics;
};
Report build_report(std::span<const ReportInput> inputs);

/// "mean ± std" at 4 decimals, "—" when missing.
std::string format_cell(const std::optional<AggregateMetric>& cell);
std::string format_diff(const std::optional<double>& diff);

std::string report_csv(const Report& report);
std::string report_text(const Report& report);

/// Reads report.csv back; cells carry the 4-decimal values.
Report parse_report_csv(const std::string& text);

/// Writes report.csv and report.txt into `out_dir` (default: root).
Report render_report(const std::filesystem::path& root, const std::filesystem::path& out_dir = {});

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// Learning curves from <root>/<experiment>/<scheme>/<size>/<seed>/result.json.
std::vector<LearningCurve> collect_curves(const std::filesystem::path& experiment_dir);

std::string curves_csv(std::span<const LearningCurve> curves);

/// Writes curves.png (log-x accuracy plot; extraction dashed, fine-tuning
/// solid) and curves.csv. Throws on an empty curve list or an empty curve.
void render_curves(std::span<const LearningCurve> curves, const std::filesystem::path& out_dir,
                   const std::string& title = "");

}  // namespace astropretext

#endif  // ASTROPRETEXT_EVALUATOR_HPP
