#include "astropretext/catalog.hpp"

#include "astropretext/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace astropretext {

namespace fs = std::filesystem;

std::optional<Band> band_from_name(std::string_view name) {
    for (int i = 0; i < kBandCount; ++i) {
        if (kBandNames[i] == name) {
            return static_cast<Band>(i);
        }
    }
    return std::nullopt;
}

bool MagnitudeVector::valid() const {
    return values.allFinite() && uncertainties.allFinite() &&
           (values >= kMagnitudeMin).all() && (values <= kMagnitudeMax).all() &&
           (uncertainties >= 0.0).all();
}

std::vector<std::string> catalog_columns() {
    std::vector<std::string> columns = {"id", "ra", "dec"};
    for (auto name : kBandNames) {
        columns.emplace_back(name);
        columns.push_back(std::string(name) + "_err");
    }
    columns.emplace_back("label");
    return columns;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::optional<double> parse_number(std::string_view text) {
    text = trim(text);
    if (text.empty()) {
        return std::nullopt;
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

// shortest form that parses back to the same double
std::string number(double value) {
    char buffer[64];
    const auto r = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, r.ptr);
}

}  // namespace

CatalogLoad parse_catalog(std::string_view csv_text, const fs::path& image_dir) {
    CatalogLoad result;
    std::istringstream stream{std::string(csv_text)};
    std::string line;
    std::size_t line_number = 0;

    std::unordered_map<std::string, std::size_t> column_index;
    while (std::getline(stream, line)) {
        ++line_number;
        if (!trim(line).empty()) {
            break;
        }
    }
    if (trim(line).empty()) {
        throw FormatError("catalog is empty: missing header row");
    }
    {
        const auto header = split_csv_line(line);
        for (std::size_t i = 0; i < header.size(); ++i) {
            column_index.emplace(std::string(trim(header[i])), i);
        }
        for (const auto& required : catalog_columns()) {
            if (required == "label") {
                continue;  // optional: absent means unlabeled
            }
            if (!column_index.contains(required)) {
                throw FormatError("catalog is missing required column '" + required + "'");
            }
        }
    }
    const auto label_column = column_index.find("label");

    std::unordered_set<std::string> seen;
    std::size_t data_rows = 0;
    while (std::getline(stream, line)) {
        ++line_number;
        if (trim(line).empty()) {
            continue;
        }
        ++data_rows;
        const auto fields = split_csv_line(line);
        auto field = [&](const std::string& name) -> std::string_view {
            const std::size_t index = column_index.at(name);
            return index < fields.size() ? std::string_view(fields[index]) : std::string_view{};
        };
        auto reject = [&](std::string message) {
            result.warnings.push_back({line_number, std::move(message)});
        };

        CatalogEntry entry;
        entry.id = std::string(trim(field("id")));
        if (entry.id.empty()) {
            reject("empty id");
            continue;
        }
        const auto ra = parse_number(field("ra"));
        const auto dec = parse_number(field("dec"));
        if (!ra || !dec) {
            reject("non-numeric coordinate for '" + entry.id + "'");
            continue;
        }
        if (*ra < 0.0 || *ra >= 360.0 || *dec < -90.0 || *dec > 90.0) {
            reject("coordinates out of range for '" + entry.id + "'");
            continue;
        }
        entry.ra = *ra;
        entry.dec = *dec;

        std::string problem;
        for (int b = 0; b < kBandCount && problem.empty(); ++b) {
            const std::string name(kBandNames[b]);
            const auto value = parse_number(field(name));
            const auto error = parse_number(field(name + "_err"));
            if (!value || !error) {
                problem = "non-numeric magnitude in band " + name;
            } else if (!std::isfinite(*value) || *value < kMagnitudeMin || *value > kMagnitudeMax) {
                problem = "magnitude out of [0, 40] in band " + name;
            } else if (!std::isfinite(*error) || *error < 0.0) {
                problem = "negative uncertainty in band " + name;
            } else {
                entry.magnitudes.values(b) = *value;
                entry.magnitudes.uncertainties(b) = *error;
            }
        }
        if (!problem.empty()) {
            reject(problem + " for '" + entry.id + "'");
            continue;
        }
        if (label_column != column_index.end() && label_column->second < fields.size()) {
            entry.label = std::string(trim(fields[label_column->second]));
        }
        if (seen.contains(entry.id)) {
            reject("duplicate id '" + entry.id + "'");
            continue;
        }
        if (!image_dir.empty() && !fs::exists(image_dir / (entry.id + ".png"))) {
            reject("missing image " + (entry.id + ".png"));
            continue;
        }
        seen.insert(entry.id);
        result.entries.push_back(std::move(entry));
    }
    if (data_rows > 0 && result.entries.empty()) {
        throw FormatError("all " + std::to_string(data_rows) + " catalog rows were rejected; first: line " +
                          std::to_string(result.warnings.front().line) + ": " +
                          result.warnings.front().message);
    }
    return result;
}

CatalogLoad load_catalog(const fs::path& path, const fs::path& image_dir) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open catalog " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_catalog(buffer.str(), image_dir);
}

std::string format_catalog(std::span<const CatalogEntry> entries) {
    std::string out;
    const auto columns = catalog_columns();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out += (i ? "," : "") + columns[i];
    }
    out += '\n';
    for (const auto& e : entries) {
        out += csv_field(e.id) + ',' + number(e.ra) + ',' + number(e.dec);
        for (int b = 0; b < kBandCount; ++b) {
            out += ',' + number(e.magnitudes.values(b));
            out += ',' + number(e.magnitudes.uncertainties(b));
        }
        out += ',' + csv_field(e.label) + '\n';
    }
    return out;
}

void write_catalog(const fs::path& path, std::span<const CatalogEntry> entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write catalog " + path.string());
    }
    out << format_catalog(entries);
    if (!out) {
        throw std::runtime_error("failed writing catalog " + path.string());
    }
}

std::vector<CatalogEntry> filter_by_uncertainty(std::span<const CatalogEntry> entries,
                                                double threshold) {
    // 0 is allowed and keeps only exact photometry
    if (!(threshold >= 0.0)) {
        throw std::invalid_argument("uncertainty threshold must be non-negative");
    }
    std::vector<CatalogEntry> kept;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(kept), [&](const auto& e) {
        return (e.magnitudes.uncertainties <= threshold).all();
    });
    return kept;
}

std::vector<CatalogEntry> exclude_labeled(std::span<const CatalogEntry> entries,
                                          const std::unordered_set<std::string>& ids) {
    std::vector<CatalogEntry> kept;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(kept),
                 [&](const auto& e) { return !ids.contains(e.id); });
    return kept;
}

std::unordered_set<std::string> labeled_ids(std::span<const CatalogEntry> entries) {
    std::unordered_set<std::string> ids;
    for (const auto& e : entries) {
        if (e.labeled()) {
            ids.insert(e.id);
        }
    }
    return ids;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
    const std::array<double, 3> r = {ratios.train, ratios.validation, ratios.test};
    if (std::any_of(r.begin(), r.end(), [](double x) { return x < 0.0; }) ||
        std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must be non-negative and sum to 1");
    }
    std::array<std::size_t, 3> sizes{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        sizes[k] = static_cast<std::size_t>(std::floor(r[k] * static_cast<double>(n) + 1e-9));
        assigned += sizes[k];
    }
    for (int k = 0; assigned < n; k = (k + 1) % 3) {
        if (r[k] > 0.0) {
            ++sizes[k];
            ++assigned;
        }
    }
    // Every split with a positive ratio gets at least one element.
    for (int k = 0; k < 3; ++k) {
        if (r[k] > 0.0 && sizes[k] == 0) {
            auto largest = std::max_element(sizes.begin(), sizes.end());
            if (*largest > 1) {
                --*largest;
                ++sizes[k];
            }
        }
    }
    return sizes;
}

Split make_split(std::span<const CatalogEntry> entries, std::uint64_t seed,
                 const SplitRatios& ratios) {
    if (entries.size() < 3) {
        throw std::invalid_argument("need at least 3 entries to populate train/validation/test");
    }
    const auto sizes = split_sizes(entries.size(), ratios);
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) {
        ids.push_back(e.id);
    }
    std::sort(ids.begin(), ids.end());  // file order must not matter
    Rng rng(seed);
    rng.shuffle(std::span(ids));

    Split split;
    split.seed = seed;
    auto it = ids.begin();
    split.train.assign(it, it + sizes[0]);
    it += sizes[0];
    split.validation.assign(it, it + sizes[1]);
    it += sizes[1];
    split.test.assign(it, it + sizes[2]);
    return split;
}

std::string split_to_json(const Split& split) {
    nlohmann::ordered_json j;
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["val"] = split.validation;
    j["test"] = split.test;
    return j.dump();
}

Split split_from_json(std::string_view text) {
    const auto j = nlohmann::json::parse(text);
    Split split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.train = j.at("train").get<std::vector<std::string>>();
    split.validation = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
}

void save_split(const fs::path& path, const Split& split) {
    std::ofstream out(path, std::ios::binary);
    out << split_to_json(split) << '\n';
    if (!out) {
        throw std::runtime_error("cannot write split " + path.string());
    }
}

Split load_split(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read split " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return split_from_json(buffer.str());
}

std::vector<std::size_t> apportion(std::span<const std::size_t> counts, std::size_t n) {
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    std::vector<std::size_t> shares(counts.size(), 0);
    if (total == 0 || n == 0) {
        return shares;
    }
    std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, index)
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const auto exact = static_cast<unsigned __int128>(counts[k]) * n;
        shares[k] = static_cast<std::size_t>(exact / total);
        remainders.emplace_back(static_cast<std::size_t>(exact % total), k);
        assigned += shares[k];
    }
    std::stable_sort(remainders.begin(), remainders.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return counts[a.second] > counts[b.second];
    });
    for (std::size_t i = 0; assigned < n; ++i) {
        ++shares[remainders[i % remainders.size()].second];
        ++assigned;
    }
    return shares;
}

std::vector<std::string> subsample_training(const Split& split,
                                            std::span<const CatalogEntry> entries,
                                            std::size_t n, std::uint64_t seed) {
    if (n < 1 || n > split.train.size()) {
        throw std::invalid_argument("subsample size " + std::to_string(n) +
                                    " outside [1, " + std::to_string(split.train.size()) + "]");
    }
    std::unordered_map<std::string, std::string> label_of;
    bool any_label = false;
    for (const auto& e : entries) {
        label_of.emplace(e.id, e.label);
        any_label = any_label || e.labeled();
    }
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        position.emplace(split.train[i], i);
    }

    std::vector<std::string> chosen;
    if (!any_label) {
        std::vector<std::string> order = split.train;
        Rng rng(stream_seed(seed, 0));
        rng.shuffle(std::span(order));
        chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    } else {
        std::map<std::string, std::vector<std::string>> by_class;
        for (const auto& id : split.train) {
            const auto it = label_of.find(id);
            by_class[it == label_of.end() ? std::string{} : it->second].push_back(id);
        }
        std::vector<std::size_t> counts;
        for (const auto& [name, ids] : by_class) {
            counts.push_back(ids.size());
        }
        const auto shares = apportion(counts, n);
        std::size_t k = 0;
        for (auto& [name, ids] : by_class) {
            Rng rng(stream_seed(seed, k));
            rng.shuffle(std::span(ids));
            chosen.insert(chosen.end(), ids.begin(),
                          ids.begin() + static_cast<std::ptrdiff_t>(shares[k]));
            ++k;
        }
    }
    std::sort(chosen.begin(), chosen.end(),
              [&](const auto& a, const auto& b) { return position.at(a) < position.at(b); });
    return chosen;
}

std::size_t DatasetDescriptor::total() const {
    std::size_t sum = 0;
    for (const auto& c : classes) {
        sum += c.count;
    }
    return sum;
}

std::vector<std::string> DatasetDescriptor::class_names() const {
    std::vector<std::string> names;
    for (const auto& c : classes) {
        names.push_back(c.name);
    }
    return names;
}

std::vector<DatasetDescriptor> preset_descriptors() {
    auto make = [](std::string name, std::vector<ClassCount> classes) {
        DatasetDescriptor d;
        d.name = std::move(name);
        d.task = TaskKind::classification;
        d.classes = std::move(classes);
        return d;
    };
    return {
        make("SG", {{"Star", 27981}, {"Galaxy", 22109}}),
        make("SGQ", {{"Star", 18000}, {"Galaxy", 18000}, {"Quasar", 18000}}),
        make("MG", {{"Merging", 5778}, {"Non-interacting", 9988}}),
        make("EF-2", {{"Elliptical", 289}, {"Spiral", 3315}}),
        make("EF-4", {{"Elliptical", 289}, {"Spiral", 3315}, {"Lenticular", 537}, {"Irregular", 248}}),
        make("EF-15", {{"Elliptical:-5", 227},
                       {"Spiral:0", 196},
                       {"Spiral:1", 257},
                       {"Spiral:2", 219},
                       {"Spiral:3", 517},
                       {"Spiral:4", 472},
                       {"Spiral:5", 303},
                       {"Spiral:6", 448},
                       {"Spiral:7", 285},
                       {"Spiral:8", 355},
                       {"Spiral:9", 263},
                       {"Lenticular:-3", 189},
                       {"Lenticular:-2", 196},
                       {"Lenticular:-1", 152},
                       {"Irregular:10", 248}}),
    };
}

std::optional<DatasetDescriptor> preset_descriptor(std::string_view name) {
    for (auto& d : preset_descriptors()) {
        if (d.name == name) {
            return d;
        }
    }
    return std::nullopt;
}

std::vector<std::string> validate_against_preset(const DatasetDescriptor& preset,
                                                 std::span<const CatalogEntry> entries) {
    std::map<std::string, std::size_t> observed;
    for (const auto& e : entries) {
        if (e.labeled()) {
            ++observed[e.label];
        }
    }
    std::vector<std::string> issues;
    for (const auto& c : preset.classes) {
        const auto it = observed.find(c.name);
        const std::size_t got = it == observed.end() ? 0 : it->second;
        if (got != c.count) {
            issues.push_back(preset.name + ": class '" + c.name + "' has " + std::to_string(got) +
                             " objects, expected " + std::to_string(c.count));
        }
        if (it != observed.end()) {
            observed.erase(it);
        }
    }
    for (const auto& [name, count] : observed) {
        issues.push_back(preset.name + ": unexpected class '" + name + "' (" + std::to_string(count) +
                         " objects)");
    }
    return issues;
}

}  // namespace astropretext
