#include "support.hpp"

#include "astropretext/evaluator.hpp"
#include "astropretext/image_io.hpp"
#include "astropretext/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

using namespace astropretext;

namespace {

// Textbook silhouette, written independently of the library.
double silhouette_oracle(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    const int n = static_cast<int>(x.rows());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::map<int, std::pair<double, int>> per;
        for (int j = 0; j < n; ++j) {
            if (j != i) {
                auto& [sum, count] = per[labels[j]];
                sum += (x.row(i) - x.row(j)).norm();
                ++count;
            }
        }
        if (per[labels[i]].second == 0) {
            continue;
        }
        const double a = per[labels[i]].first / per[labels[i]].second;
        double b = 1e300;
        for (const auto& [label, sc] : per) {
            if (label != labels[i] && sc.second > 0) {
                b = std::min(b, sc.first / sc.second);
            }
        }
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("accuracy: examples, errors and permutation invariance") {
    const std::vector<int> t = {0, 1, 2, 1};
    CHECK(accuracy(t, t) == 1.0);
    const std::vector<int> p = {0, 1, 2, 0};
    CHECK(accuracy(p, t) == 0.75);
    CHECK_THROWS(accuracy(std::vector<int>{1}, t));
    CHECK_THROWS(accuracy(std::vector<int>{}, std::vector<int>{}));
    Rng rng(2);
    std::vector<int> a(200), b(200);
    for (int k = 0; k < 200; ++k) {
        a[k] = static_cast<int>(rng.below(3));
        b[k] = static_cast<int>(rng.below(3));
    }
    const double base = accuracy(a, b);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    std::vector<std::size_t> order(200);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    std::vector<int> pa, pb;
    for (auto k : order) {
        pa.push_back(a[k]);
        pb.push_back(b[k]);
    }
    CHECK(accuracy(pa, pb) == base);
}

TEST_CASE("argmax: ties go to the lowest class") {
    Eigen::MatrixXd probs(3, 2);
    probs << 0.4, 0.2, 0.4, 0.3, 0.2, 0.5;
    CHECK(argmax_columns(probs) == std::vector<int>{0, 2});
}

TEST_CASE("aggregate: examples and properties") {
    const std::vector<double> same = {0.5, 0.5, 0.5};
    CHECK(aggregate(same).mean == 0.5);
    CHECK(aggregate(same).stddev == 0.0);
    const std::vector<double> two = {0.4, 0.6};
    CHECK(aggregate(two).mean == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(aggregate(two).stddev == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(aggregate(two).runs == 2);
    CHECK_THROWS(aggregate(std::vector<double>{}));
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(1 + rng.below(6));
        for (auto& x : v) {
            x = rng.below(2) ? 0.25 : rng.uniform();
        }
        const auto a = aggregate(v);
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        CHECK(a.mean >= *lo - 1e-15);
        CHECK(a.mean <= *hi + 1e-15);
        CHECK(a.stddev >= 0.0);
        CHECK((a.stddev == 0.0) == (*lo == *hi));
    }
}

TEST_CASE("projection: separable classes give a positive silhouette") {
    Rng rng(1);
    const int n = 500;
    Eigen::MatrixXd x(n, 10);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = i % 2;
        for (int d = 0; d < 10; ++d) {
            x(i, d) = rng.normal() + (labels[i] ? 6.0 : 0.0);
        }
    }
    const Projection2D p = project_features(x, 50.0, 3);
    CHECK(p.points.rows() == n);
    CHECK(p.perplexity == 50.0);
    const Eigen::MatrixXd pts = p.points;
    const double s = silhouette_score(pts, labels);
    CHECK(s == doctest::Approx(silhouette_oracle(pts, labels)).epsilon(1e-9));
    CHECK(s > 0.0);
}

TEST_CASE("projection: preconditions and determinism") {
    CHECK_THROWS_AS(project_features(Eigen::MatrixXd::Random(10, 4), 50.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(project_features(Eigen::MatrixXd::Random(100, 1), 5.0, 0), std::invalid_argument);
    Rng rng(7);
    Eigen::MatrixXd x(60, 5);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        x(k) = rng.normal();
    }
    ProjectionOptions o;
    o.perplexity = 10.0;
    o.seed = 4;
    o.iterations = 300;
    o.exaggeration_iterations = 100;
    const auto a = project_features(x, o);
    const auto b = project_features(x, o);
    CHECK(a.points == b.points);
    o.seed = 5;
    CHECK_FALSE(project_features(x, o).points == a.points);
}

TEST_CASE("projection: duplicated rows land closer than the median distance") {
    Rng rng(9);
    const int base = 80;
    Eigen::MatrixXd x(base + 10, 6);
    for (int i = 0; i < base; ++i) {
        for (int d = 0; d < 6; ++d) {
            x(i, d) = rng.normal();
        }
    }
    for (int k = 0; k < 10; ++k) {
        x.row(base + k) = x.row(k * 7);
    }
    const auto p = project_features(x, 15.0, 1);
    std::vector<double> all;
    for (Eigen::Index i = 0; i < p.points.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < p.points.rows(); ++j) {
            all.push_back((p.points.row(i) - p.points.row(j)).norm());
        }
    }
    std::nth_element(all.begin(), all.begin() + all.size() / 2, all.end());
    const double median = all[all.size() / 2];
    for (int k = 0; k < 10; ++k) {
        CHECK((p.points.row(base + k) - p.points.row(k * 7)).norm() < median);
    }
}

TEST_CASE("projection: files") {
    Rng rng(3);
    Eigen::MatrixXd x(40, 3);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        x(k) = rng.normal();
    }
    auto p = project_features(x, 5.0, 0);
    for (int i = 0; i < 40; ++i) {
        p.ids.push_back("id" + std::to_string(i));
        p.labels.push_back(i < 20 ? "star" : "galaxy");
    }
    const auto dir = testing::scratch_dir("proj");
    write_projection(dir, p, "test");
    const std::string csv = slurp(dir / "projection.csv");
    CHECK(csv.rfind("id,x,y,label\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
    CHECK(read_png(dir / "projection.png").width > 0);
}

namespace {

std::vector<ReportInput> mock_grid() {
    std::vector<ReportInput> in;
    const std::vector<std::vector<double>> cells = {
        {0.9810, 0.9790, 0.9800}, {0.9500, 0.9600, 0.9700}, {0.9850, 0.9860, 0.9840},
        {0.9930, 0.9920, 0.9925}, {0.9928, 0.9924, 0.9932}};
    for (const char* dataset : {"SG", "SGQ"}) {
        for (std::size_t c = 0; c < 5; ++c) {
            in.push_back({"full", dataset, "full", kReportColumns[c], cells[c]});
        }
    }
    in.push_back({"lowdata", "SG", "100", SchemeId::extract_imagenet, {0.8702, 0.8702, 0.8702}});
    in.push_back({"lowdata", "SG", "100", SchemeId::extract_magnitudes, {0.9707, 0.9717, 0.9727}});
    return in;
}

}  // namespace

TEST_CASE("report: cells, diffs, best flags and CSV round trip") {
    const auto inputs = mock_grid();
    const Report r = build_report(inputs);
    REQUIRE(r.rows.size() == 3);
    const auto& sg = r.rows[0];
    CHECK(sg.dataset == "SG");
    CHECK(format_cell(sg.cells[4]) == "0.9928 ± 0.0003");
    CHECK(*sg.fe_diff == doctest::Approx(0.9850 - 0.9600).epsilon(1e-12));
    CHECK(std::find(sg.best.begin(), sg.best.end(), "fe_magnitudes") != sg.best.end());
    CHECK(std::find(sg.best.begin(), sg.best.end(), "ft_magnitudes") != sg.best.end());
    const auto& low = r.rows[2];
    CHECK(low.section == "lowdata");
    CHECK(format_diff(low.fe_diff) == "+0.1015");
    CHECK(format_cell(low.cells[1]) == "0.8702 ± 0.0000");

    const Report back = parse_report_csv(report_csv(r));
    REQUIRE(back.rows.size() == r.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        for (std::size_t c = 0; c < 5; ++c) {
            REQUIRE(back.rows[i].cells[c].has_value() == r.rows[i].cells[c].has_value());
            if (r.rows[i].cells[c]) {
                CHECK(back.rows[i].cells[c]->mean == round4(r.rows[i].cells[c]->mean));
                CHECK(back.rows[i].cells[c]->stddev == round4(r.rows[i].cells[c]->stddev));
            }
        }
        CHECK(back.rows[i].best == r.rows[i].best);
    }
    CHECK(r.incomplete);  // low-data row lacks three columns
}

TEST_CASE("report: a single scheme leaves the other columns empty") {
    const std::vector<ReportInput> one = {{"full", "MG", "full", SchemeId::scratch, {0.7, 0.7, 0.7}}};
    const Report r = build_report(one);
    REQUIRE(r.rows.size() == 1);
    CHECK(format_cell(r.rows[0].cells[0]) == "0.7000 ± 0.0000");
    for (std::size_t c = 1; c < 5; ++c) {
        CHECK(format_cell(r.rows[0].cells[c]) == "—");
    }
    CHECK(r.incomplete);
    const std::string text = report_text(r);
    CHECK(text.find("INCOMPLETE") != std::string::npos);
    CHECK(text.find("population") != std::string::npos);
}

TEST_CASE("report: collected from run directories") {
    const auto root = testing::scratch_dir("report");
    const char* datasets[] = {"SG", "SGQ", "MG", "EF-2", "EF-4", "EF-15"};
    for (const char* d : datasets) {
        for (SchemeId id : kReportColumns) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                RunResult r;
                r.scheme = to_string(id);
                r.final_metric = 0.5 + 0.01 * static_cast<int>(id) + 0.001 * seed;
                write_run(run_directory(root, d, to_string(id), "full", seed), r);
            }
        }
    }
    const Report r = render_report(root);
    CHECK_FALSE(r.incomplete);
    REQUIRE(r.rows.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(r.rows[k].dataset == datasets[k]);
    }
    const std::string csv = slurp(root / "report.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(std::filesystem::exists(root / "report.txt"));
    std::filesystem::remove_all(root / "MG" / "scratch" / "full" / "2");
    CHECK(collect_report(root).incomplete);
}

TEST_CASE("curves: counting, degenerate curves and errors") {
    std::vector<LearningCurve> curves(2);
    curves[0].scheme = "extract-magnitudes";
    curves[1].scheme = "finetune-magnitudes";
    const auto sizes = low_data_schedule(40000);
    for (auto& c : curves) {
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            c.points.push_back({sizes[k], {0.5 + 0.02 * k, 0.01, 3}});
        }
    }
    const auto dir = testing::scratch_dir("curves");
    render_curves(curves, dir, "SG");
    const std::string csv = slurp(dir / "curves.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 37);
    CHECK(read_png(dir / "curves.png").width > 0);

    std::vector<LearningCurve> single(1);
    single[0].scheme = "scratch";
    single[0].points.push_back({100, {0.7, 0.0, 3}});
    CHECK_NOTHROW(render_curves(single, dir));

    CHECK_THROWS(render_curves(std::vector<LearningCurve>{}, dir));
    std::vector<LearningCurve> empty(1);
    empty[0].scheme = "scratch";
    CHECK_THROWS(render_curves(empty, dir));
    single[0].points.push_back({100, {0.8, 0.0, 3}});
    CHECK_THROWS(render_curves(single, dir));
}
