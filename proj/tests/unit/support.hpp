// Shared fixtures for the unit tests.
#ifndef ASTROPRETEXT_TESTS_SUPPORT_HPP
#define ASTROPRETEXT_TESTS_SUPPORT_HPP

#include "astropretext/catalog.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline std::string catalog_header() {
    std::string h;
    for (const auto& c : astropretext::catalog_columns()) {
        h += (h.empty() ? "" : ",") + c;
    }
    return h + "\n";
}

/// The example object of the survey table, one CSV row.
inline std::string survey_example_row(const std::string& id = "splus-0001") {
    return id + ",10.5,-30.25,"
                "19.87,0.04,19.93,0.06,19.95,0.09,19.42,0.06,19.34,0.05,19.16,0.02,"
                "19.09,0.04,18.96,0.02,18.93,0.02,18.82,0.02,18.78,0.03,18.80,0.03,\n";
}

inline astropretext::CatalogEntry entry(const std::string& id, double max_err = 0.05,
                                        const std::string& label = {}) {
    astropretext::CatalogEntry e;
    e.id = id;
    e.magnitudes.values.setConstant(18.0);
    e.magnitudes.uncertainties.setConstant(0.01);
    e.magnitudes.uncertainties(3) = max_err;
    e.label = label;
    return e;
}

inline std::vector<astropretext::CatalogEntry> entries(std::size_t n, const std::string& prefix = "o") {
    std::vector<astropretext::CatalogEntry> out;
    for (std::size_t k = 0; k < n; ++k) {
        out.push_back(entry(prefix + std::to_string(k)));
    }
    return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("astropretext-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing

#endif
