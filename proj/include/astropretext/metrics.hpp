#ifndef ASTROPRETEXT_METRICS_HPP
#define ASTROPRETEXT_METRICS_HPP

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace astropretext {

/// Fraction of exact matches. Throws on length mismatch or empty input.
double accuracy(std::span<const int> predictions, std::span<const int> truth);

/// Index of the largest entry of each column; ties go to the lowest index.
template <typename Derived>
std::vector<int> argmax_columns(const Eigen::MatrixBase<Derived>& probabilities) {
    std::vector<int> out(static_cast<std::size_t>(probabilities.cols()));
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < probabilities.rows(); ++i) {
            if (probabilities(i, j) > probabilities(best, j)) {
                best = i;
            }
        }
        out[static_cast<std::size_t>(j)] = static_cast<int>(best);
    }
    return out;
}

/// Mean and population standard deviation over repeated runs.
struct AggregateMetric {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t runs = 0;
};

AggregateMetric aggregate(std::span<const double> values);

struct CurvePoint {
    std::size_t training_size = 0;
    AggregateMetric accuracy;
};

struct LearningCurve {
    std::string scheme;
    std::vector<CurvePoint> points;  // strictly increasing training_size
};

}  // namespace astropretext

#endif  // ASTROPRETEXT_METRICS_HPP
