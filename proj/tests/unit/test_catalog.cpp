#include "support.hpp"

#include "astropretext/catalog.hpp"
#include "astropretext/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

using namespace astropretext;

TEST_CASE("catalog: three well-formed rows load without warnings") {
    std::string csv = testing::catalog_header();
    for (int k = 0; k < 3; ++k) {
        csv += testing::survey_example_row("obj" + std::to_string(k));
    }
    const CatalogLoad load = parse_catalog(csv);
    CHECK(load.entries.size() == 3);
    CHECK(load.warnings.empty());
    CHECK_FALSE(load.entries[0].labeled());
}

TEST_CASE("catalog: a negative uncertainty rejects the row with a line number") {
    std::string csv = testing::catalog_header() + testing::survey_example_row("good");
    std::string bad = testing::survey_example_row("bad");
    bad.replace(bad.find("19.87,0.04"), 10, "19.87,-0.01");
    csv += bad;
    const CatalogLoad load = parse_catalog(csv);
    REQUIRE(load.entries.size() == 1);
    REQUIRE(load.warnings.size() == 1);
    CHECK(load.warnings[0].line == 3);
}

TEST_CASE("catalog: non-numeric magnitude is a row error, all rows failing is fatal") {
    std::string bad = testing::survey_example_row("x");
    bad.replace(bad.find("19.87"), 5, "abc");
    const CatalogLoad mixed = parse_catalog(testing::catalog_header() + testing::survey_example_row() + bad);
    CHECK(mixed.entries.size() == 1);
    CHECK(mixed.warnings.size() == 1);
    CHECK_THROWS_AS(parse_catalog(testing::catalog_header() + bad), FormatError);
}

TEST_CASE("catalog: missing column is a format error") {
    CHECK_THROWS_AS(parse_catalog("id,ra,dec,u,u_err\nx,1,2,3,0.1\n"), FormatError);
}

TEST_CASE("catalog: missing image files are skipped") {
    const auto dir = testing::scratch_dir("catalog-images");
    std::ofstream(dir / "present.png") << "x";
    const std::string csv = testing::catalog_header() + testing::survey_example_row("present") +
                            testing::survey_example_row("absent");
    const CatalogLoad load = parse_catalog(csv, dir);
    REQUIRE(load.entries.size() == 1);
    CHECK(load.entries[0].id == "present");
    CHECK(load.warnings.size() == 1);
}

TEST_CASE("catalog: survey example object parses to the published magnitudes") {
    const CatalogLoad load = parse_catalog(testing::catalog_header() + testing::survey_example_row());
    REQUIRE(load.entries.size() == 1);
    const auto& m = load.entries[0].magnitudes;
    CHECK(m.value(Band::u) == doctest::Approx(19.87).epsilon(1e-12));
    CHECK(m.uncertainty(Band::u) == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(m.value(Band::z) == doctest::Approx(18.80).epsilon(1e-12));
    CHECK(m.uncertainty(Band::z) == doctest::Approx(0.03).epsilon(1e-12));
    CHECK(m.uncertainty(Band::f395) == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("catalog: write then parse round-trips") {
    std::vector<CatalogEntry> in = {testing::entry("a", 0.05, "Star"), testing::entry("b", 0.02)};
    in[1].magnitudes.values(4) = 17.123456789;
    const CatalogLoad out = parse_catalog(format_catalog(in));
    REQUIRE(out.entries.size() == 2);
    CHECK(out.entries[0].label == "Star");
    CHECK(out.entries[1].label.empty());
    CHECK(out.entries[1].magnitudes.values(4) == doctest::Approx(17.123456789).epsilon(1e-12));
}

TEST_CASE("filter: survey example object is retained at 0.1") {
    const CatalogLoad load = parse_catalog(testing::catalog_header() + testing::survey_example_row());
    CHECK(filter_by_uncertainty(load.entries, 0.1).size() == 1);
}

TEST_CASE("filter: boundary, identity and zero threshold") {
    const std::vector<CatalogEntry> e = {testing::entry("ok", 0.10), testing::entry("over", 0.11)};
    const auto kept = filter_by_uncertainty(e, 0.1);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].id == "ok");
    CHECK(filter_by_uncertainty(e, std::numeric_limits<double>::infinity()).size() == 2);
    CHECK(filter_by_uncertainty(e, 0.0).empty());
    CHECK_THROWS(filter_by_uncertainty(e, -0.1));
}

TEST_CASE("filter: monotone in the threshold") {
    Rng rng(42);
    std::vector<CatalogEntry> pool;
    for (int k = 0; k < 300; ++k) {
        CatalogEntry e = testing::entry("r" + std::to_string(k));
        for (int b = 0; b < kBandCount; ++b) {
            e.magnitudes.uncertainties(b) = rng.uniform(0.0, 0.3);
        }
        pool.push_back(e);
    }
    for (int trial = 0; trial < 50; ++trial) {
        double a = rng.uniform(0.0, 0.35);
        double b = rng.uniform(0.0, 0.35);
        if (a > b) {
            std::swap(a, b);
        }
        const auto low = filter_by_uncertainty(pool, a);
        const auto high = filter_by_uncertainty(pool, b);
        std::set<std::string> high_ids;
        for (const auto& e : high) {
            high_ids.insert(e.id);
        }
        CHECK(low.size() <= high.size());
        for (const auto& e : low) {
            CHECK(high_ids.contains(e.id));
        }
    }
}

TEST_CASE("exclude_labeled: set difference, identity, annihilation") {
    const auto pool = testing::entries(10);
    const std::unordered_set<std::string> four = {"o0", "o3", "o5", "o9"};
    const auto rest = exclude_labeled(pool, four);
    CHECK(rest.size() == 6);
    for (const auto& e : rest) {
        CHECK_FALSE(four.contains(e.id));
    }
    CHECK(exclude_labeled(pool, {}).size() == 10);
    std::unordered_set<std::string> all;
    for (const auto& e : pool) {
        all.insert(e.id);
    }
    all.insert("unrelated");
    CHECK(exclude_labeled(pool, all).empty());
}

TEST_CASE("split: sizes for the survey count follow floor rounding") {
    // floor of each share, the leftover goes to training
    const std::size_t n = 205321;
    const std::size_t val = n / 10;
    const std::size_t test = n / 10;
    const std::size_t train = n - val - test;
    const auto sizes = split_sizes(n, {});
    CHECK(sizes[0] == train);
    CHECK(sizes[1] == val);
    CHECK(sizes[2] == test);
    CHECK(sizes[0] == 164257);
    CHECK(sizes[1] == 20532);
    CHECK(sizes[2] == 20532);
}

TEST_CASE("split: full-size split of the survey count") {
    const auto pool = testing::entries(205321);
    const Split s = make_split(pool, 0);
    CHECK(s.train.size() == 164257);
    CHECK(s.validation.size() == 20532);
    CHECK(s.test.size() == 20532);
}

TEST_CASE("split: ten entries give 8/1/1, fewer than three is an error") {
    const Split s = make_split(testing::entries(10), 3);
    CHECK(s.train.size() == 8);
    CHECK(s.validation.size() == 1);
    CHECK(s.test.size() == 1);
    CHECK_THROWS(make_split(testing::entries(2), 0));
}

TEST_CASE("split: disjoint, covering and deterministic for many sizes and seeds") {
    for (std::size_t n : {3u, 4u, 7u, 10u, 11u, 99u, 1000u, 1237u}) {
        const auto pool = testing::entries(n);
        for (std::uint64_t seed : {0u, 1u, 17u}) {
            const Split a = make_split(pool, seed);
            const Split b = make_split(pool, seed);
            CHECK(a == b);
            std::set<std::string> seen;
            for (const auto* part : {&a.train, &a.validation, &a.test}) {
                CHECK_FALSE(part->empty());
                for (const auto& id : *part) {
                    CHECK(seen.insert(id).second);
                }
            }
            CHECK(seen.size() == n);
        }
    }
    const auto pool = testing::entries(500);
    CHECK_FALSE(make_split(pool, 1).train == make_split(pool, 2).train);
}

TEST_CASE("split: does not depend on input order") {
    auto pool = testing::entries(200);
    const Split a = make_split(pool, 5);
    std::reverse(pool.begin(), pool.end());
    CHECK(make_split(pool, 5) == a);
}

TEST_CASE("split: json round-trip") {
    const Split s = make_split(testing::entries(37), 9);
    CHECK(split_from_json(split_to_json(s)) == s);
}

TEST_CASE("scale: survey u band, endpoints and round-trip") {
    BandArray v = BandArray::Constant(19.87);
    CHECK(scale_magnitudes(v)(0) == doctest::Approx(19.87 / 30.0).epsilon(1e-15));
    CHECK(scale_magnitudes(v)(0) == doctest::Approx(0.662333333).epsilon(1e-9));
    CHECK(scale_magnitudes(BandArray::Zero())(5) == 0.0);
    CHECK(scale_magnitudes(BandArray::Constant(30.0))(5) == 1.0);
    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
        BandArray x;
        for (int b = 0; b < kBandCount; ++b) {
            x(b) = rng.uniform(0.0, 40.0);
        }
        CHECK((unscale_magnitudes(scale_magnitudes(x)) - x).abs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("apportion: largest remainder") {
    const std::vector<std::size_t> counts = {27981, 22109};
    const auto a = apportion(counts, 100);
    CHECK(a[0] + a[1] == 100);
    CHECK(a[0] == 56);
    const std::vector<std::size_t> three = {1, 1, 1};
    const auto b = apportion(three, 2);
    CHECK(b == std::vector<std::size_t>{1, 1, 0});
}

namespace {

std::vector<CatalogEntry> labeled_pool(std::size_t stars, std::size_t galaxies) {
    std::vector<CatalogEntry> out;
    for (std::size_t k = 0; k < stars; ++k) {
        out.push_back(testing::entry("s" + std::to_string(k), 0.01, "Star"));
    }
    for (std::size_t k = 0; k < galaxies; ++k) {
        out.push_back(testing::entry("g" + std::to_string(k), 0.01, "Galaxy"));
    }
    return out;
}

std::map<std::string, std::size_t> class_counts(const std::vector<std::string>& ids,
                                                const std::vector<CatalogEntry>& pool) {
    std::map<std::string, std::string> label;
    for (const auto& e : pool) {
        label[e.id] = e.label;
    }
    std::map<std::string, std::size_t> out;
    for (const auto& id : ids) {
        ++out[label.at(id)];
    }
    return out;
}

}  // namespace

TEST_CASE("subsample: identity, determinism, train-only and size errors") {
    const auto pool = labeled_pool(300, 200);
    const Split s = make_split(pool, 0);
    auto whole = subsample_training(s, pool, s.train.size(), 4);
    auto train = s.train;
    std::sort(whole.begin(), whole.end());
    std::sort(train.begin(), train.end());
    CHECK(whole == train);
    CHECK(subsample_training(s, pool, 50, 1) == subsample_training(s, pool, 50, 1));
    const std::set<std::string> train_ids(s.train.begin(), s.train.end());
    for (const auto& id : subsample_training(s, pool, 77, 2)) {
        CHECK(train_ids.contains(id));
    }
    CHECK_THROWS(subsample_training(s, pool, s.train.size() + 1, 0));
}

TEST_CASE("subsample: per-class counts follow the training proportions within one") {
    // SG class counts scaled down; the split keeps them only approximately
    const auto pool = labeled_pool(2798, 2211);
    const Split s = make_split(pool, 0);
    const auto train_counts = class_counts(s.train, pool);
    for (std::size_t n : {100u, 250u, 1000u}) {
        const auto drawn = class_counts(subsample_training(s, pool, n, 0), pool);
        for (const auto& [name, count] : train_counts) {
            const double share = double(n) * double(count) / double(s.train.size());
            CHECK(std::abs(double(drawn.at(name)) - share) <= 1.0);
        }
    }
    const auto balanced = labeled_pool(500, 500);
    const Split b = make_split(balanced, 0);
    const auto drawn = class_counts(subsample_training(b, balanced, 100, 0), balanced);
    CHECK(std::abs(double(drawn.at("Star")) - 50.0) <= 1.0);
}

TEST_CASE("subsample: growing n gives nested subsets for two classes") {
    const auto pool = labeled_pool(400, 300);
    const Split s = make_split(pool, 1);
    std::set<std::string> previous;
    for (std::size_t n = 100; n <= 500; n += 100) {
        const auto ids = subsample_training(s, pool, n, 7);
        const std::set<std::string> now(ids.begin(), ids.end());
        CHECK(now.size() == n);
        CHECK(std::includes(now.begin(), now.end(), previous.begin(), previous.end()));
        previous = now;
    }
}

TEST_CASE("presets: six schemas and mismatch messages") {
    const auto presets = preset_descriptors();
    REQUIRE(presets.size() == 6);
    const auto sg = preset_descriptor("SG");
    REQUIRE(sg);
    CHECK(sg->classes.size() == 2);
    CHECK(preset_descriptor("EF-15")->classes.size() == 15);
    CHECK_FALSE(preset_descriptor("nope"));
    const auto pool = labeled_pool(10, 5);
    CHECK_FALSE(validate_against_preset(*sg, pool).empty());
}
