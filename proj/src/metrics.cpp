#include "astropretext/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace astropretext {

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
    if (predictions.size() != truth.size()) {
        throw std::invalid_argument("accuracy: prediction and truth lengths differ");
    }
    if (predictions.empty()) {
        throw std::invalid_argument("accuracy: empty input");
    }
    std::size_t hits = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        hits += predictions[k] == truth[k];
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

AggregateMetric aggregate(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("aggregate needs at least one run");
    }
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
        return {values.front(), 0.0, values.size()};
    }
    double var = 0.0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var), values.size()};
}

}  // namespace astropretext
