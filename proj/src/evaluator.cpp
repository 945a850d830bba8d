#include "astropretext/evaluator.hpp"

#include "astropretext/random.hpp"
#include "plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace astropretext {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

namespace {

// Row-conditional affinities with the bandwidth found by bisection on beta
// so that each row's entropy matches log(perplexity).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& sq_dist, double perplexity) {
    const Eigen::Index n = sq_dist.rows();
    const double target = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd row(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0;
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double min_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) {
                min_d = std::min(min_d, sq_dist(i, j));
            }
        }
        for (int iter = 0; iter < 100; ++iter) {
            double sum = 0.0;
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                // shift by the nearest distance so the largest weight is 1
                row(j) = j == i ? 0.0 : std::exp(-beta * (sq_dist(i, j) - min_d));
                sum += row(j);
                weighted += row(j) * (sq_dist(i, j) - min_d);
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) {
                break;
            }
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        p.row(i) = row.transpose() / row.sum();
    }
    return p;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

}  // namespace

Projection2D project_features(const Eigen::MatrixXd& features, const ProjectionOptions& options) {
    const Eigen::Index n = features.rows();
    if (features.cols() < 2) {
        throw std::invalid_argument("projection needs at least 2 feature dimensions");
    }
    if (!(options.perplexity > 0.0) || static_cast<double>(n) <= 3.0 * options.perplexity) {
        char buffer[160];
        std::snprintf(buffer, sizeof(buffer),
                      "perplexity %g needs more than %g points, got %lld; lower the perplexity or project "
                      "more samples",
                      options.perplexity, 3.0 * options.perplexity, static_cast<long long>(n));
        throw std::invalid_argument(buffer);
    }
    if (!features.allFinite()) {
        throw std::invalid_argument("features contain non-finite values");
    }

    Eigen::MatrixXd p = conditional_affinities(squared_distances(features), options.perplexity);
    p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));  // eval: p aliases its transpose
    p = p.cwiseMax(1e-12);
    p.diagonal().setZero();

    Rng rng(stream_seed(options.seed, 0));
    Eigen::MatrixX2d y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i, 0) = 1e-4 * rng.normal();
        y(i, 1) = 1e-4 * rng.normal();
    }
    Eigen::MatrixX2d update = Eigen::MatrixX2d::Zero(n, 2);
    Eigen::MatrixX2d gains = Eigen::MatrixX2d::Ones(n, 2);
    Eigen::MatrixX2d grad(n, 2);
    Eigen::MatrixXd num(n, n);
    const double rate = options.learning_rate > 0.0
                            ? options.learning_rate
                            : std::max(static_cast<double>(n) / options.exaggeration / 4.0, 50.0);

    for (int iter = 0; iter < options.iterations; ++iter) {
        const bool early = iter < options.exaggeration_iterations;
        const double exaggeration = early ? options.exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;

        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dx = y(i, 0) - y(j, 0);
                const double dy = y(i, 1) - y(j, 1);
                num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + dx * dx + dy * dy);
                z += num(i, j);
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            double gx = 0.0;
            double gy = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double w = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
                gx += w * (y(i, 0) - y(j, 0));
                gy += w * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4.0 * gx;
            grad(i, 1) = 4.0 * gy;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int c = 0; c < 2; ++c) {
                const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
                gains(i, c) = std::max(same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
                update(i, c) = momentum * update(i, c) - rate * gains(i, c) * grad(i, c);
            }
        }
        y += update;
        y.rowwise() -= y.colwise().mean();
    }
    Projection2D out;
    out.points = y;
    out.perplexity = options.perplexity;
    return out;
}

Projection2D project_features(const Eigen::MatrixXd& features, double perplexity, std::uint64_t seed) {
    ProjectionOptions options;
    options.perplexity = perplexity;
    options.seed = seed;
    return project_features(features, options);
}

double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (labels.size() != n) {
        throw std::invalid_argument("silhouette: one label per point required");
    }
    std::map<int, std::size_t> sizes;
    for (int l : labels) {
        ++sizes[l];
    }
    if (sizes.size() < 2) {
        throw std::invalid_argument("silhouette needs at least two clusters");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<int, double> sums;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                sums[labels[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
            }
        }
        if (sizes[labels[i]] == 1) {
            continue;  // singleton clusters score 0
        }
        const double a = sums[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, sum] : sums) {
            if (label != labels[i]) {
                b = std::min(b, sum / static_cast<double>(sizes[label]));
            }
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

namespace {

struct Axis {
    double lo = 0.0;
    double hi = 1.0;
};

double nice_step(double range) {
    const double raw = range / 5.0;
    const double base = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0}) {
        if (m * base >= raw) {
            return m * base;
        }
    }
    return 10.0 * base;
}

std::string tick_label(double v) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buffer;
}

}  // namespace

void write_projection(const fs::path& directory, const Projection2D& projection, const std::string& title) {
    const Eigen::Index n = projection.points.rows();
    if (!projection.labels.empty() && projection.labels.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("projection labels do not match the point count");
    }
    fs::create_directories(directory);
    {
        std::ofstream csv(directory / "projection.csv", std::ios::binary);
        csv << "id,x,y,label\n";
        char buffer[64];
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            csv << (projection.ids.empty() ? std::to_string(i) : projection.ids[k]) << ',';
            std::snprintf(buffer, sizeof(buffer), "%.6f,%.6f", projection.points(i, 0), projection.points(i, 1));
            csv << buffer << ',' << (projection.labels.empty() ? "" : projection.labels[k]) << '\n';
        }
        if (!csv) {
            throw std::runtime_error("cannot write " + (directory / "projection.csv").string());
        }
    }

    std::vector<std::string> names;
    if (!projection.labels.empty()) {
        std::set<std::string> unique(projection.labels.begin(), projection.labels.end());
        names.assign(unique.begin(), unique.end());
    }
    const int size = 640;
    const int margin = 40;
    const int legend = names.empty() ? 0 : 160;
    plot::Canvas canvas(size + legend, size + (title.empty() ? 0 : 20));
    const int top = title.empty() ? 0 : 20;
    if (!title.empty()) {
        canvas.text(margin, 8, title, plot::kBlack, 1);
    }
    const Eigen::Vector2d lo = projection.points.colwise().minCoeff();
    const Eigen::Vector2d hi = projection.points.colwise().maxCoeff();
    const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-12});
    auto to_px = [&](double v, double low) { return margin + (v - low) / span * (size - 2 * margin); };
    canvas.line(margin - 5, top + margin - 5, size - margin + 5, top + margin - 5, plot::kGrey);
    canvas.line(margin - 5, top + size - margin + 5, size - margin + 5, top + size - margin + 5, plot::kGrey);
    canvas.line(margin - 5, top + margin - 5, margin - 5, top + size - margin + 5, plot::kGrey);
    canvas.line(size - margin + 5, top + margin - 5, size - margin + 5, top + size - margin + 5, plot::kGrey);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t colour = 0;
        if (!names.empty()) {
            colour = static_cast<std::size_t>(
                std::lower_bound(names.begin(), names.end(), projection.labels[static_cast<std::size_t>(i)]) -
                names.begin());
        }
        canvas.marker(to_px(projection.points(i, 0), lo(0)),
                      top + size - to_px(projection.points(i, 1), lo(1)), plot::palette(colour), 2);
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
        const int y = top + margin + static_cast<int>(k) * 16;
        canvas.marker(size + 10, y + 3, plot::palette(k), 4);
        canvas.text(size + 20, y, names[k], plot::kBlack);
    }
    write_png(directory / "projection.png", canvas.image());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

int dataset_rank(const std::string& name) {
    static const std::vector<std::string> order = {"SG", "SGQ", "MG", "EF-2", "EF-4", "EF-15"};
    const auto it = std::find(order.begin(), order.end(), name);
    return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

bool is_count(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

struct RowKey {
    std::string section;
    std::string dataset;
    std::string train_size;

    bool operator<(const RowKey& o) const {
        auto rank = [](const RowKey& k) {
            return std::make_tuple(k.section == "full" ? 0 : 1, dataset_rank(k.dataset), k.dataset,
                                   is_count(k.train_size) ? std::stoull(k.train_size) : 0ULL, k.train_size);
        };
        return rank(*this) < rank(o);
    }
};

std::size_t column_of(SchemeId id) {
    return static_cast<std::size_t>(std::find(kReportColumns.begin(), kReportColumns.end(), id) -
                                    kReportColumns.begin());
}

void flag_best(ReportRow& row) {
    auto group = [&](std::size_t a, std::size_t b) {
        if (!row.cells[a] || !row.cells[b]) {
            return;
        }
        const double ma = row.cells[a]->mean;
        const double mb = row.cells[b]->mean;
        if (ma >= mb) {
            row.best.push_back(kReportColumnNames[a]);
        }
        if (mb >= ma) {
            row.best.push_back(kReportColumnNames[b]);
        }
    };
    group(1, 2);
    group(3, 4);
    if (row.cells[1] && row.cells[2]) {
        row.fe_diff = row.cells[2]->mean - row.cells[1]->mean;
    }
    if (row.cells[3] && row.cells[4]) {
        row.ft_diff = row.cells[4]->mean - row.cells[3]->mean;
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

constexpr const char* kMissing = "—";
constexpr const char* kPlusMinus = " ± ";

double parse_number(const std::string& s) {
    double v = 0.0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    if (begin != end && *begin == '+') {
        ++begin;
    }
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw std::invalid_argument("report: cannot parse number '" + s + "'");
    }
    return v;
}

}  // namespace

Report build_report(std::span<const ReportInput> inputs) {
    std::map<RowKey, ReportRow> rows;
    for (const auto& in : inputs) {
        if (in.metrics.empty()) {
            continue;
        }
        RowKey key{in.section, in.dataset, in.train_size};
        ReportRow& row = rows[key];
        row.section = in.section;
        row.dataset = in.dataset;
        row.train_size = in.train_size;
        row.cells[column_of(in.scheme)] = aggregate(in.metrics);
    }
    Report report;
    std::size_t max_runs = 0;
    for (auto& [key, row] : rows) {
        flag_best(row);
        for (const auto& cell : row.cells) {
            if (cell) {
                max_runs = std::max(max_runs, cell->runs);
            }
        }
        report.rows.push_back(row);
    }
    for (const auto& row : report.rows) {
        for (const auto& cell : row.cells) {
            if (!cell || cell->runs < max_runs) {
                report.incomplete = true;
            }
        }
    }
    return report;
}

Report collect_report(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw std::runtime_error("experiment directory " + root.string() + " does not exist");
    }
    std::map<std::tuple<std::string, std::string, SchemeId>, std::vector<double>> runs;
    for (const auto& dataset : fs::directory_iterator(root)) {
        if (!dataset.is_directory()) {
            continue;
        }
        for (const auto& scheme_dir : fs::directory_iterator(dataset.path())) {
            SchemeId scheme;
            try {
                scheme = scheme_id_from_string(scheme_dir.path().filename().string());
            } catch (const std::invalid_argument&) {
                continue;  // pretext runs and other artefacts
            }
            for (const auto& size_dir : fs::directory_iterator(scheme_dir.path())) {
                const std::string size = size_dir.path().filename().string();
                if (!size_dir.is_directory() || (size != "full" && !is_count(size))) {
                    continue;
                }
                std::vector<fs::path> seeds;
                for (const auto& seed_dir : fs::directory_iterator(size_dir.path())) {
                    if (fs::exists(seed_dir.path() / "result.json")) {
                        seeds.push_back(seed_dir.path());
                    }
                }
                std::sort(seeds.begin(), seeds.end());
                auto& metrics = runs[{dataset.path().filename().string(), size, scheme}];
                for (const auto& dir : seeds) {
                    metrics.push_back(read_run(dir).final_metric);
                }
            }
        }
    }
    std::vector<ReportInput> inputs;
    for (const auto& [key, metrics] : runs) {
        const auto& [dataset, size, scheme] = key;
        inputs.push_back({size == "full" ? "full" : "lowdata", dataset, size, scheme, metrics});
    }
    return build_report(inputs);
}

std::string format_cell(const std::optional<AggregateMetric>& cell) {
    if (!cell) {
        return kMissing;
    }
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.4f%s%.4f", cell->mean, kPlusMinus, cell->stddev);
    return buffer;
}

std::string format_diff(const std::optional<double>& diff) {
    if (!diff) {
        return kMissing;
    }
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%+.4f", *diff);
    return buffer;
}

std::string report_csv(const Report& report) {
    std::string out = "section,dataset,train_size";
    for (const char* name : kReportColumnNames) {
        out += ',';
        out += name;
    }
    out += ",fe_diff,ft_diff,best\n";
    for (const auto& row : report.rows) {
        out += row.section + ',' + row.dataset + ',' + row.train_size;
        for (const auto& cell : row.cells) {
            out += ',' + format_cell(cell);
        }
        out += ',' + format_diff(row.fe_diff) + ',' + format_diff(row.ft_diff) + ',';
        for (std::size_t k = 0; k < row.best.size(); ++k) {
            out += (k ? ";" : "") + row.best[k];
        }
        out += '\n';
    }
    return out;
}

Report parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("report.csv is empty");
    }
    const auto header = split_csv_line(line);
    if (header.size() != 11 || header[0] != "section" || header[3] != "scratch" || header[10] != "best") {
        throw std::invalid_argument("report.csv has an unexpected header");
    }
    Report report;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 11) {
            throw std::invalid_argument("report.csv row has " + std::to_string(f.size()) + " fields: " + line);
        }
        ReportRow row;
        row.section = f[0];
        row.dataset = f[1];
        row.train_size = f[2];
        for (std::size_t k = 0; k < 5; ++k) {
            const std::string& cell = f[3 + k];
            if (cell == kMissing) {
                report.incomplete = true;
                continue;
            }
            const auto sep = cell.find(kPlusMinus);
            if (sep == std::string::npos) {
                throw std::invalid_argument("report cell '" + cell + "' is not 'mean ± std'");
            }
            AggregateMetric m;
            m.mean = parse_number(cell.substr(0, sep));
            m.stddev = parse_number(cell.substr(sep + std::string(kPlusMinus).size()));
            row.cells[k] = m;
        }
        if (f[8] != kMissing) {
            row.fe_diff = parse_number(f[8]);
        }
        if (f[9] != kMissing) {
            row.ft_diff = parse_number(f[9]);
        }
        std::string best = f[10];
        for (std::size_t start = 0; start < best.size();) {
            const auto end = std::min(best.find(';', start), best.size());
            row.best.push_back(best.substr(start, end - start));
            start = end + 1;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace {

// Display width of a UTF-8 string (code points).
std::size_t display_width(const std::string& s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return s + std::string(width > w ? width - w : 0, ' ');
}

std::string render_table(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> widths;
    for (const auto& row : cells) {
        widths.resize(std::max(widths.size(), row.size()), 0);
        for (std::size_t k = 0; k < row.size(); ++k) {
            widths[k] = std::max(widths[k], display_width(row[k]));
        }
    }
    std::string out;
    for (const auto& row : cells) {
        std::string line;
        for (std::size_t k = 0; k < row.size(); ++k) {
            line += pad(row[k], widths[k] + 2);
        }
        while (!line.empty() && line.back() == ' ') {
            line.pop_back();
        }
        out += line + '\n';
    }
    return out;
}

}  // namespace

std::string report_text(const Report& report) {
    std::string out;
    auto cell_text = [](const ReportRow& row, std::size_t k) {
        std::string s = format_cell(row.cells[k]);
        if (std::find(row.best.begin(), row.best.end(), kReportColumnNames[k]) != row.best.end()) {
            s += " *";
        }
        return s;
    };

    std::vector<std::vector<std::string>> full = {
        {"", "from scratch", "feature extraction", "", "fine-tuning", ""},
        {"dataset", "", "ImageNet", "magnitudes", "ImageNet", "magnitudes"}};
    for (const auto& row : report.rows) {
        if (row.section != "full") {
            continue;
        }
        std::vector<std::string> line = {row.dataset};
        for (std::size_t k = 0; k < 5; ++k) {
            line.push_back(cell_text(row, k));
        }
        full.push_back(line);
    }
    if (full.size() > 2) {
        out += "Validation accuracy, full training data\n\n" + render_table(full) + '\n';
    }

    std::vector<std::vector<std::string>> low = {{"dataset", "train size", "scheme", "ImageNet", "magnitudes", "diff."}};
    for (const auto& row : report.rows) {
        if (row.section != "lowdata") {
            continue;
        }
        low.push_back({row.dataset, row.train_size, "feature extraction", cell_text(row, 1), cell_text(row, 2),
                       format_diff(row.fe_diff)});
        low.push_back({"", "", "fine-tuning", cell_text(row, 3), cell_text(row, 4), format_diff(row.ft_diff)});
        low.push_back({"", "", "from scratch", cell_text(row, 0), "", ""});
    }
    if (low.size() > 1) {
        out += "Validation accuracy, reduced training data\n\n" + render_table(low) + '\n';
    }
    out += "Cells are mean ± population standard deviation over runs; * marks the better pretraining\n"
           "within feature extraction and within fine-tuning; diff. is magnitudes minus ImageNet.\n"
           "Reduced training sets are stratified per class with largest-remainder apportionment.\n";
    if (report.incomplete) {
        out += "INCOMPLETE: some cells are missing (—) or have fewer runs than the others.\n";
    }
    return out;
}

Report render_report(const fs::path& root, const fs::path& out_dir) {
    const Report report = collect_report(root);
    const fs::path dir = out_dir.empty() ? root : out_dir;
    fs::create_directories(dir);
    std::ofstream csv(dir / "report.csv", std::ios::binary);
    csv << report_csv(report);
    std::ofstream txt(dir / "report.txt", std::ios::binary);
    txt << report_text(report);
    if (!csv || !txt) {
        throw std::runtime_error("cannot write report files in " + dir.string());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

std::vector<LearningCurve> collect_curves(const fs::path& experiment_dir) {
    std::vector<LearningCurve> curves;
    for (SchemeId id : kAllSchemes) {
        const fs::path scheme_dir = experiment_dir / to_string(id);
        if (!fs::is_directory(scheme_dir)) {
            continue;
        }
        std::map<std::size_t, std::vector<double>> by_size;
        for (const auto& size_dir : fs::directory_iterator(scheme_dir)) {
            const std::string size = size_dir.path().filename().string();
            if (!is_count(size)) {
                continue;
            }
            std::vector<fs::path> seeds;
            for (const auto& seed_dir : fs::directory_iterator(size_dir.path())) {
                if (fs::exists(seed_dir.path() / "result.json")) {
                    seeds.push_back(seed_dir.path());
                }
            }
            std::sort(seeds.begin(), seeds.end());
            for (const auto& dir : seeds) {
                by_size[std::stoull(size)].push_back(read_run(dir).final_metric);
            }
        }
        LearningCurve curve{to_string(id), {}};
        for (const auto& [size, metrics] : by_size) {
            if (!metrics.empty()) {
                curve.points.push_back({size, aggregate(metrics)});
            }
        }
        if (!curve.points.empty()) {
            curves.push_back(std::move(curve));
        }
    }
    return curves;
}

std::string curves_csv(std::span<const LearningCurve> curves) {
    std::string out = "scheme,training_size,mean,std,runs\n";
    char buffer[96];
    for (const auto& curve : curves) {
        for (const auto& p : curve.points) {
            std::snprintf(buffer, sizeof(buffer), ",%zu,%.6f,%.6f,%zu\n", p.training_size, p.accuracy.mean,
                          p.accuracy.stddev, p.accuracy.runs);
            out += curve.scheme + buffer;
        }
    }
    return out;
}

void render_curves(std::span<const LearningCurve> curves, const fs::path& out_dir, const std::string& title) {
    if (curves.empty()) {
        throw std::invalid_argument("render_curves needs at least one curve");
    }
    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = 0.0;
    double y_lo = std::numeric_limits<double>::infinity();
    double y_hi = -std::numeric_limits<double>::infinity();
    for (const auto& curve : curves) {
        if (curve.points.empty()) {
            throw std::invalid_argument("curve '" + curve.scheme + "' has no points");
        }
        for (std::size_t k = 0; k < curve.points.size(); ++k) {
            const auto& p = curve.points[k];
            if (p.training_size == 0 || (k > 0 && p.training_size <= curve.points[k - 1].training_size)) {
                throw std::invalid_argument("curve '" + curve.scheme + "' sizes must be positive and increasing");
            }
            x_lo = std::min(x_lo, std::log10(static_cast<double>(p.training_size)));
            x_hi = std::max(x_hi, std::log10(static_cast<double>(p.training_size)));
            y_lo = std::min(y_lo, p.accuracy.mean - p.accuracy.stddev);
            y_hi = std::max(y_hi, p.accuracy.mean + p.accuracy.stddev);
        }
    }
    if (x_hi - x_lo < 0.2) {
        x_lo -= 0.1;
        x_hi += 0.1;
    }
    if (y_hi - y_lo < 0.02) {
        y_lo -= 0.01;
        y_hi += 0.01;
    }
    const double y_step = nice_step(y_hi - y_lo);
    const Axis xa{x_lo - 0.03 * (x_hi - x_lo), x_hi + 0.03 * (x_hi - x_lo)};
    const Axis ya{std::floor(y_lo / y_step) * y_step, std::ceil(y_hi / y_step) * y_step};

    const int left = 80;
    const int right = 240;
    const int top = 50;
    const int bottom = 70;
    const int width = 960;
    const int height = 560;
    plot::Canvas canvas(width, height);
    const int plot_w = width - left - right;
    const int plot_h = height - top - bottom;
    auto px = [&](double log_size) { return left + (log_size - xa.lo) / (xa.hi - xa.lo) * plot_w; };
    auto py = [&](double acc) { return top + plot_h - (acc - ya.lo) / (ya.hi - ya.lo) * plot_h; };

    for (double y = ya.lo; y <= ya.hi + 1e-9; y += y_step) {
        canvas.line(left, py(y), left + plot_w, py(y), plot::kGrey);
        const std::string label = tick_label(std::round(y / y_step) * y_step);
        canvas.text(left - 8 - plot::Canvas::text_width(label), static_cast<int>(py(y)) - 3, label, plot::kBlack);
    }
    for (int decade = static_cast<int>(std::floor(xa.lo)); decade <= static_cast<int>(std::ceil(xa.hi)); ++decade) {
        for (double m : {1.0, 2.0, 5.0}) {
            const double lx = decade + std::log10(m);
            if (lx < xa.lo || lx > xa.hi) {
                continue;
            }
            canvas.line(px(lx), top, px(lx), top + plot_h, plot::kGrey);
            const std::string label = tick_label(m * std::pow(10.0, decade));
            canvas.text(static_cast<int>(px(lx)) - plot::Canvas::text_width(label) / 2, top + plot_h + 8, label,
                        plot::kBlack);
        }
    }
    canvas.line(left, top, left, top + plot_h, plot::kBlack);
    canvas.line(left, top + plot_h, left + plot_w, top + plot_h, plot::kBlack);
    const std::string x_title = "training set size (log scale)";
    canvas.text(left + plot_w / 2 - plot::Canvas::text_width(x_title) / 2, height - 30, x_title, plot::kBlack);
    canvas.text_vertical(20, top + plot_h / 2 + plot::Canvas::text_width("validation accuracy") / 2,
                         "validation accuracy", plot::kBlack);
    if (!title.empty()) {
        canvas.text(left, 18, title, plot::kBlack, 2);
    }

    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& curve = curves[c];
        const plot::Colour colour = plot::palette(c);
        const bool dashed = curve.scheme.rfind("extract", 0) == 0;
        for (std::size_t k = 0; k < curve.points.size(); ++k) {
            const auto& p = curve.points[k];
            const double x = px(std::log10(static_cast<double>(p.training_size)));
            canvas.marker(x, py(p.accuracy.mean), colour, 3);
            if (p.accuracy.stddev > 0.0) {
                canvas.line(x, py(p.accuracy.mean - p.accuracy.stddev), x, py(p.accuracy.mean + p.accuracy.stddev),
                            colour);
            }
            if (k > 0) {
                const auto& q = curve.points[k - 1];
                canvas.line(px(std::log10(static_cast<double>(q.training_size))), py(q.accuracy.mean), x,
                            py(p.accuracy.mean), colour, 2, dashed ? 8 : 0);
            }
        }
        const int ly = top + 10 + static_cast<int>(c) * 22;
        const int lx = left + plot_w + 20;
        canvas.line(lx, ly + 3, lx + 36, ly + 3, colour, 2, dashed ? 6 : 0);
        canvas.text(lx + 44, ly, curve.scheme, plot::kBlack);
    }

    fs::create_directories(out_dir);
    write_png(out_dir / "curves.png", canvas.image());
    std::ofstream csv(out_dir / "curves.csv", std::ios::binary);
    csv << curves_csv(curves);
    if (!csv) {
        throw std::runtime_error("cannot write curves.csv in " + out_dir.string());
    }
}

}  // namespace astropretext
