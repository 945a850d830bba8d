#include "astropretext/cli.hpp"

#include "astropretext/catalog.hpp"
#include "astropretext/checkpoint.hpp"
#include "astropretext/evaluator.hpp"
#include "astropretext/synthgen.hpp"
#include "astropretext/trainer.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>

namespace astropretext::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::string content_hash(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
        throw std::runtime_error("SHA-1 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < length; ++k) {
        out += hex[digest[k] >> 4];
        out += hex[digest[k] & 15];
    }
    return out;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

}  // namespace

std::string file_hash(const fs::path& path) { return content_hash(read_file(path)); }

std::string directory_hash(const fs::path& directory) {
    std::vector<std::string> lines;
    for (const auto& entry : fs::recursive_directory_iterator(directory)) {
        if (entry.is_regular_file()) {
            lines.push_back(file_hash(entry.path()) + ' ' +
                            fs::relative(entry.path(), directory).generic_string() + '\n');
        }
    }
    std::sort(lines.begin(), lines.end(), [](const std::string& a, const std::string& b) {
        return a.substr(41) < b.substr(41);
    });
    std::string listing;
    for (const auto& line : lines) {
        listing += line;
    }
    return content_hash(listing);
}

// ---------------------------------------------------------------------------
// Settings <-> JSON
// ---------------------------------------------------------------------------

namespace {

// One JSON key, the flags that can set it and how to read/write the field.
struct Binding {
    std::string key;
    std::vector<CLI::Option*> options;
    std::function<void(const nlohmann::json&)> load;
    std::function<json()> save;
    std::set<std::string> commands;  // empty: global
};

class Bindings {
public:
    template <typename T>
    void add(CLI::App* app, const std::string& flags, T& field, const std::string& help, const std::string& key,
             const std::string& command = {}) {
        CLI::Option* option = nullptr;
        if constexpr (std::is_same_v<T, bool>) {
            option = app->add_flag(flags, field, help);
        } else {
            option = app->add_option(flags, field, help);
            if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
                option->delimiter(',');
            }
        }
        Binding& b = find_or_add(key, field, command);
        b.options.push_back(option);
    }

    template <typename T>
    void add_file_only(T& field, const std::string& key, const std::string& command) {
        find_or_add(key, field, command);
    }

    bool known(const std::string& key) const { return index_.contains(key); }

    void load(const nlohmann::json& config) {
        for (auto it = config.begin(); it != config.end(); ++it) {
            if (it.key().starts_with('_')) {
                continue;  // snapshot metadata
            }
            if (!known(it.key())) {
                throw UsageError("unknown key '" + it.key() + "' in --config file");
            }
            Binding& b = bindings_[index_.at(it.key())];
            const bool from_flag =
                std::any_of(b.options.begin(), b.options.end(), [](CLI::Option* o) { return o->count() > 0; });
            if (!from_flag) {
                try {
                    b.load(it.value());
                } catch (const nlohmann::json::exception& e) {
                    throw UsageError("config key '" + it.key() + "': " + e.what());
                }
            }
        }
    }

    json save(const std::string& command) const {
        json out;
        for (const auto& b : bindings_) {
            if (b.commands.empty() || b.commands.contains(command)) {
                out[b.key] = b.save();
            }
        }
        return out;
    }

private:
    template <typename T>
    Binding& find_or_add(const std::string& key, T& field, const std::string& command) {
        auto it = index_.find(key);
        if (it == index_.end()) {
            Binding b;
            b.key = key;
            b.load = [&field](const nlohmann::json& v) { field = v.get<T>(); };
            b.save = [&field]() { return json(field); };
            index_[key] = bindings_.size();
            bindings_.push_back(std::move(b));
            it = index_.find(key);
        }
        Binding& b = bindings_[it->second];
        if (!command.empty()) {
            b.commands.insert(command);
        }
        return b;
    }

    std::vector<Binding> bindings_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fs::path data_root(const ExperimentConfig& c) {
    const char* env = std::getenv("ASTROPRETEXT_DATA");
    if (c.data.empty()) {
        if (env && *env) {
            return env;
        }
        throw UsageError("no dataset given: pass --data or set ASTROPRETEXT_DATA");
    }
    fs::path p = c.data;
    if (p.is_relative() && !fs::exists(p) && env && *env) {
        p = fs::path(env) / p;
    }
    if (!fs::is_directory(p)) {
        throw UsageError("data directory " + p.string() + " does not exist");
    }
    if (!fs::exists(p / "catalog.csv")) {
        throw UsageError("data directory " + p.string() + " has no catalog.csv");
    }
    return p;
}

std::string dataset_name(const ExperimentConfig& c, const fs::path& data) {
    if (!c.dataset.empty()) {
        return c.dataset;
    }
    const fs::path normal = fs::absolute(data).lexically_normal();
    const std::string name = (normal.has_filename() ? normal : normal.parent_path()).filename().string();
    return name.empty() ? "dataset" : name;
}

fs::path require_out(const ExperimentConfig& c, const std::string& command) {
    if (c.out.empty()) {
        throw UsageError(command + " needs --out");
    }
    return c.out;
}

BackboneSpec backbone_spec(const ExperimentConfig& c, int image_size) {
    BackboneSpec spec;
    try {
        spec.family = backbone_family_from_string(c.backbone);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    spec.input_size = image_size;
    if (spec.family == BackboneFamily::tiny) {
        spec.stage_widths = c.widths;
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return spec;
}

HeadSpec head_spec(const ExperimentConfig& c) {
    HeadSpec head;
    head.hidden_units = c.hidden_units;
    try {
        head.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return head;
}

void print_load_warnings(const CatalogLoad& load, std::ostream& log) {
    if (load.warnings.empty()) {
        return;
    }
    log << "skipped " << load.warnings.size() << " catalog row(s):\n";
    const std::size_t shown = std::min<std::size_t>(load.warnings.size(), 10);
    for (std::size_t k = 0; k < shown; ++k) {
        log << "  line " << load.warnings[k].line << ": " << load.warnings[k].message << '\n';
    }
    if (shown < load.warnings.size()) {
        log << "  ...\n";
    }
}

int image_size_of(const fs::path& images, const std::vector<CatalogEntry>& entries) {
    const RgbImage first = read_png(images / (entries.front().id + ".png"));
    if (first.width != first.height) {
        throw std::runtime_error("images must be square; " + entries.front().id + ".png is " +
                                 std::to_string(first.width) + "x" + std::to_string(first.height));
    }
    return first.width;
}

std::string format(const char* pattern, double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), pattern, v);
    return buffer;
}

/// Reads every checkpoint and keys it by provenance.
std::unordered_map<int, PretrainedBackbone> load_checkpoints(const ExperimentConfig& c,
                                                             std::map<int, std::string>& paths) {
    std::unordered_map<int, PretrainedBackbone> out;
    for (const auto& path : c.checkpoints) {
        fs::path dir = path;
        if (!fs::exists(dir / "model.json") && fs::exists(dir / "checkpoint" / "model.json")) {
            dir /= "checkpoint";  // a pretrain output directory
        }
        PretrainedBackbone p = load_pretrained(dir);
        const int key = static_cast<int>(p.provenance);
        if (out.contains(key)) {
            throw UsageError("two checkpoints with provenance " + to_string(p.provenance));
        }
        paths[key] = dir.string();
        out.emplace(key, std::move(p));
    }
    return out;
}

std::vector<SchemeId> parse_schemes(const std::vector<std::string>& names) {
    std::vector<SchemeId> out;
    for (const auto& n : names) {
        try {
            out.push_back(scheme_id_from_string(n));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) {
        out.assign(std::begin(kAllSchemes), std::end(kAllSchemes));
    }
    return out;
}

void require_checkpoints(const std::vector<SchemeId>& schemes,
                         const std::unordered_map<int, PretrainedBackbone>& pretrained) {
    for (SchemeId id : schemes) {
        const SchemeConfig s = scheme_preset(id);
        if (s.pretraining != Pretraining::none && !pretrained.contains(static_cast<int>(s.pretraining))) {
            throw std::runtime_error("scheme " + to_string(id) + " needs a checkpoint pretrained on " +
                                     to_string(s.pretraining) + ": run pretrain first or pass --checkpoint");
        }
    }
}

void cap_epochs(SchemeConfig& scheme, const ExperimentConfig& c) {
    scheme.batch_size = c.batch_size;
    scheme.early_stop.patience = c.patience;
    if (c.epoch_cap > 0) {
        for (auto& phase : scheme.phases) {
            phase.max_epochs = std::min(phase.max_epochs, c.epoch_cap);
        }
    }
}

ClassModel class_model_from_json(const nlohmann::json& j) {
    const std::string name = j.at("name").get<std::string>();
    ClassModel m;
    try {
        m = class_model(name);
    } catch (const std::invalid_argument&) {
        m.name = name;
    }
    auto range = [&](const char* key, double& lo, double& hi) {
        if (j.contains(key)) {
            const auto v = j.at(key).get<std::vector<double>>();
            if (v.size() != 2 || v[0] > v[1]) {
                throw UsageError(std::string("class model '") + name + "': " + key + " must be [min, max]");
            }
            lo = v[0];
            hi = v[1];
        }
    };
    m.point_source = j.value("point_source", m.point_source);
    m.spiral_fraction = j.value("spiral_fraction", m.spiral_fraction);
    range("r_magnitude_range", m.r_magnitude_min, m.r_magnitude_max);
    range("colour_scale_range", m.colour_scale_min, m.colour_scale_max);
    range("effective_radius_range", m.radius_min, m.radius_max);
    m.colour_jitter = j.value("colour_jitter", m.colour_jitter);
    m.axis_ratio_min = j.value("axis_ratio_min", m.axis_ratio_min);
    if (j.contains("colour_minus_r")) {
        const auto v = j.at("colour_minus_r").get<std::vector<double>>();
        if (v.size() != kBandCount) {
            throw UsageError("class model '" + name + "': colour_minus_r needs 12 values");
        }
        for (int b = 0; b < kBandCount; ++b) {
            m.colour(b) = v[static_cast<std::size_t>(b)];
        }
    }
    return m;
}

// Snapshot state shared by the subcommands.
struct Context {
    const Bindings* bindings = nullptr;
    std::string command;
    std::vector<std::string> argv;
};

Context& context() {
    static Context ctx;
    return ctx;
}

json inputs_json(const fs::path& data, const std::vector<std::string>& checkpoints,
                 const std::vector<std::string>& extra_files = {}) {
    json inputs;
    if (!data.empty()) {
        inputs["catalog.csv"] = file_hash(data / "catalog.csv");
        if (fs::is_directory(data / "images")) {
            inputs["images"] = directory_hash(data / "images");
        }
    }
    for (const auto& path : checkpoints) {
        fs::path dir = path;
        if (!fs::exists(dir / "weights") && fs::exists(dir / "checkpoint" / "weights")) {
            dir /= "checkpoint";
        }
        inputs["checkpoint:" + path] = file_hash(dir / "weights");
    }
    for (const auto& path : extra_files) {
        inputs["file:" + path] = file_hash(path);
    }
    return inputs;
}

/// config_snapshot.json: every setting of the command plus input hashes.
/// `overrides` replace settings (per-run seeds, schemes, sizes).
void write_snapshot(const fs::path& directory, const std::string& command, const json& inputs,
                    const json& overrides = json::object()) {
    const Context& ctx = context();
    json snapshot;
    snapshot["_command"] = command;
    snapshot["_invoked_as"] = ctx.argv;
    snapshot["_inputs"] = inputs;
    json settings = ctx.bindings ? ctx.bindings->save(command) : json::object();
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
        settings[it.key()] = it.value();
    }
    for (auto it = settings.begin(); it != settings.end(); ++it) {
        snapshot[it.key()] = it.value();
    }
    write_file(directory / "config_snapshot.json", snapshot.dump(2) + '\n');
}

struct LabeledData {
    fs::path root;
    std::string name;
    std::vector<CatalogEntry> entries;
    Split split;
    TrainingSet set;
};

LabeledData load_labeled(const ExperimentConfig& c, std::ostream& log) {
    LabeledData d;
    d.root = data_root(c);
    d.name = dataset_name(c, d.root);
    const CatalogLoad load = load_catalog(d.root / "catalog.csv", d.root / "images");
    print_load_warnings(load, log);
    std::size_t unlabeled = 0;
    for (const auto& e : load.entries) {
        if (e.labeled()) {
            d.entries.push_back(e);
        } else {
            ++unlabeled;
        }
    }
    if (unlabeled > 0) {
        log << "ignoring " << unlabeled << " unlabeled object(s)\n";
    }
    if (d.entries.size() < 3) {
        throw std::runtime_error("dataset " + d.root.string() + " has fewer than 3 labeled objects");
    }
    if (const auto preset = preset_descriptor(d.name)) {
        for (const auto& m : validate_against_preset(*preset, d.entries)) {
            log << "warning: " << m << '\n';
        }
    }
    d.split = make_split(d.entries, c.split_seed);
    d.set = load_training_set(TaskKind::classification, d.entries, d.root / "images");
    log << d.name << ": " << d.entries.size() << " labeled objects, " << d.set.class_names.size()
        << " classes, split " << d.split.train.size() << "/" << d.split.validation.size() << "/"
        << d.split.test.size() << '\n';
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = require_out(c, "synth");
    if (c.classes.empty()) {
        throw UsageError("synth needs --classes, e.g. star:500,galaxy:500");
    }
    GeneratorConfig g;
    try {
        g.classes = parse_class_requests(c.classes);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    for (const auto& m : c.class_models) {
        g.models.push_back(class_model_from_json(m));
    }
    g.image_size = c.image_size;
    g.seed = c.seed;
    g.psf_sigma = c.psf_sigma;
    g.noise.sky_level = c.sky_level;
    if (c.gain < 0.0) {
        throw UsageError("--gain must be >= 0 (0 renders noiseless images)");
    }
    g.noise.gain = c.gain > 0.0 ? c.gain : std::numeric_limits<double>::infinity();
    g.id_prefix = c.id_prefix;
    g.write_labels = !c.unlabeled;
    const GeneratedDataset dataset = generate_dataset(g);
    write_dataset(out, dataset, g);
    write_snapshot(out, "synth", json::object());
    log << "wrote " << dataset.images.size() << " images and catalog.csv to " << out.string() << '\n';
    return kExitSuccess;
}

int cmd_pretrain(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = require_out(c, "pretrain");
    const fs::path data = data_root(c);
    const CatalogLoad load = load_catalog(data / "catalog.csv", data / "images");
    print_load_warnings(load, log);

    const std::vector<CatalogEntry> kept = filter_by_uncertainty(load.entries, c.threshold);
    if (kept.empty()) {
        throw std::runtime_error("no objects retained: all " + std::to_string(load.entries.size()) +
                                 " objects have a magnitude uncertainty above " + format("%g", c.threshold) +
                                 "; raise --threshold");
    }
    std::unordered_set<std::string> leak = labeled_ids(kept);
    for (const auto& path : c.exclude) {
        const CatalogLoad labeled = load_catalog(path);
        for (const auto& e : labeled.entries) {
            leak.insert(e.id);
        }
    }
    const std::vector<CatalogEntry> unlabeled = exclude_labeled(kept, leak);
    log << "pretext data: " << load.entries.size() << " objects, " << kept.size() << " within uncertainty "
        << format("%g", c.threshold) << ", " << unlabeled.size() << " after removing labeled ids\n";
    if (unlabeled.size() < 3) {
        throw std::runtime_error("no objects retained for the pretext task after removing labeled ids");
    }

    const Split split = make_split(unlabeled, c.split_seed);
    fs::create_directories(out);
    save_split(out / "split.json", split);
    const TrainingSet set = load_training_set(TaskKind::regression, unlabeled, data / "images");

    Model<float> model(backbone_spec(c, set.images.image_size()), head_spec(c), c.seed);
    PretextConfig config;
    config.seed = c.seed;
    config.batch_size = c.batch_size;
    config.early_stop.patience = c.patience;
    config.phase.max_epochs = c.epochs;
    config.phase.learning_rate = c.learning_rate;
    config.phase.momentum = c.momentum;
    if (c.optimizer == "sgd") {
        config.phase.optimizer = OptimizerKind::sgd;
    } else if (c.optimizer == "adam") {
        config.phase.optimizer = OptimizerKind::adam;
    } else {
        throw UsageError("--optimizer must be sgd or adam");
    }
    const auto train = set.indices_of(split.train);
    const auto validation = set.indices_of(split.validation);
    RunResult result = train_pretext(model, set, train, validation, config, [&](const EpochRecord& r, Model<float>&) {
        log << "epoch " << r.epoch << "  train " << format("%.6f", r.train_loss) << "  val "
            << format("%.6f", r.validation_loss) << '\n';
    });
    save_checkpoint(out / "checkpoint", model, Pretraining::magnitudes, c.seed);
    result.checkpoint = "checkpoint";
    write_run(out, result);
    write_snapshot(out, "pretrain", inputs_json(data, {}, c.exclude));
    log << "validation MAE: scaled " << format("%.9g", result.final_metric) << ", raw "
        << format("%.9g", result.raw_mae) << " (mean-predictor baseline scaled "
        << format("%.9g", result.baseline_metric) << ")\n";
    log << "checkpoint written to " << (out / "checkpoint").string() << '\n';
    return kExitSuccess;
}

int cmd_train(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = require_out(c, "train");
    const std::vector<SchemeId> schemes = parse_schemes(c.schemes);
    std::map<int, std::string> checkpoint_paths;
    const auto pretrained = load_checkpoints(c, checkpoint_paths);
    require_checkpoints(schemes, pretrained);

    const LabeledData d = load_labeled(c, log);
    BackboneSpec backbone = backbone_spec(c, d.set.images.image_size());
    if (!pretrained.empty()) {
        backbone = pretrained.begin()->second.model.backbone();
    }
    const auto validation = d.set.indices_of(d.split.validation);
    const fs::path experiment = out / d.name;
    fs::create_directories(experiment);
    save_split(experiment / "split.json", d.split);
    const json inputs = inputs_json(d.root, c.checkpoints);
    const std::vector<std::uint64_t> seeds = c.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.seeds;
    const std::string size_label = c.train_size == 0 ? "full" : std::to_string(c.train_size);

    for (SchemeId id : schemes) {
        for (std::uint64_t seed : seeds) {
            SchemeConfig scheme = scheme_preset(id, seed, c.low_data);
            cap_epochs(scheme, c);
            std::vector<std::size_t> train;
            if (c.train_size == 0) {
                train = d.set.indices_of(d.split.train);
            } else {
                train = d.set.indices_of(subsample_training(d.split, d.entries, c.train_size, seed));
            }
            const PretrainedBackbone* source = nullptr;
            if (scheme.pretraining != Pretraining::none) {
                source = &pretrained.at(static_cast<int>(scheme.pretraining));
            }
            SchemeRun run = train_scheme(scheme, d.set, train, validation, backbone, source, head_spec(c),
                                         [&](const EpochRecord& r, Model<float>&) {
                                             if (c.verbose) {
                                                 log << "  epoch " << r.epoch << " " << r.phase_name << " val acc "
                                                     << format("%.4f", r.validation_metric) << '\n';
                                             }
                                         });
            if (source) {
                run.result.checkpoint = checkpoint_paths.at(static_cast<int>(scheme.pretraining));
            }
            const fs::path dir = run_directory(out, d.name, to_string(id), size_label, seed);
            write_run(dir, run.result);
            write_snapshot(dir, "train", inputs, {{"schemes", {to_string(id)}}, {"seeds", {seed}}});
            for (const auto& w : run.result.warnings) {
                log << "warning: " << w << '\n';
            }
            log << to_string(id) << " seed " << seed << ": accuracy " << format("%.4f", run.result.final_metric)
                << " after " << run.result.epochs_run() << " epochs (best " << run.result.best_epoch << ")\n";
        }
    }
    return kExitSuccess;
}

int cmd_curve(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = require_out(c, "curve");
    const std::vector<SchemeId> schemes = parse_schemes(c.schemes);
    std::map<int, std::string> checkpoint_paths;
    LowDataConfig config;
    config.pretrained = load_checkpoints(c, checkpoint_paths);
    require_checkpoints(schemes, config.pretrained);

    const LabeledData d = load_labeled(c, log);
    config.schemes = schemes;
    config.sizes = c.sizes;
    if (config.sizes.empty()) {
        if (d.split.train.size() < 100) {
            throw std::runtime_error("the low-data schedule starts at 100 samples but the training split has " +
                                     std::to_string(d.split.train.size()));
        }
        config.sizes = low_data_schedule(d.split.train.size());
    }
    for (std::size_t n : config.sizes) {
        if (n == 0 || n > d.split.train.size()) {
            throw UsageError("training size " + std::to_string(n) + " is outside 1.." +
                             std::to_string(d.split.train.size()));
        }
    }
    std::sort(config.sizes.begin(), config.sizes.end());
    config.sizes.erase(std::unique(config.sizes.begin(), config.sizes.end()), config.sizes.end());
    config.seeds = c.seeds.empty() ? std::vector<std::uint64_t>{0, 1, 2} : c.seeds;
    config.backbone = config.pretrained.empty() ? backbone_spec(c, d.set.images.image_size())
                                                : config.pretrained.begin()->second.model.backbone();
    config.head = head_spec(c);
    config.jobs = c.jobs;
    const fs::path experiment = out / d.name;
    config.run_root = experiment;
    config.adjust_scheme = [&](SchemeConfig& s) { cap_epochs(s, c); };
    fs::create_directories(experiment);
    save_split(experiment / "split.json", d.split);
    const json inputs = inputs_json(d.root, c.checkpoints);
    config.on_run = [&](SchemeId id, std::size_t size, std::uint64_t seed, const RunResult& r) {
        const fs::path dir = run_directory(out, d.name, to_string(id), std::to_string(size), seed);
        // re-running this snapshot with `train` reproduces the single run
        write_snapshot(dir, "train", inputs,
                       {{"schemes", {to_string(id)}}, {"seeds", {seed}}, {"train_size", size}, {"low_data", true}});
        log << to_string(id) << " n=" << size << " seed " << seed << ": accuracy " << format("%.4f", r.final_metric)
            << '\n';
    };
    const auto curves = run_low_data_experiment(d.set, d.split, config);
    render_curves(curves, experiment, d.name);
    write_snapshot(experiment, "curve", inputs);
    log << "curves written to " << (experiment / "curves.png").string() << '\n';
    return kExitSuccess;
}

int cmd_project(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = require_out(c, "project");
    if (c.checkpoints.size() != 1) {
        throw UsageError("project needs exactly one --checkpoint");
    }
    fs::path checkpoint = c.checkpoints.front();
    if (!fs::exists(checkpoint / "model.json") && fs::exists(checkpoint / "checkpoint" / "model.json")) {
        checkpoint /= "checkpoint";
    }
    CheckpointInfo info;
    Model<float> model = load_checkpoint<float>(checkpoint, &info);

    const fs::path data = data_root(c);
    const CatalogLoad load = load_catalog(data / "catalog.csv", data / "images");
    print_load_warnings(load, log);
    const Split split = make_split(load.entries, c.split_seed);
    std::vector<std::string> ids = split.validation;
    if (c.samples == 0) {
        throw UsageError("--samples must be positive");
    }
    if (ids.size() > c.samples) {
        Rng rng(stream_seed(c.seed, 7));
        rng.shuffle(std::span(ids));
        ids.resize(c.samples);
        std::sort(ids.begin(), ids.end());
    }
    std::unordered_map<std::string, const CatalogEntry*> by_id;
    for (const auto& e : load.entries) {
        by_id.emplace(e.id, &e);
    }
    std::vector<RgbImage> images;
    Projection2D projection;
    for (const auto& id : ids) {
        images.push_back(read_png(data / "images" / (id + ".png")));
        projection.ids.push_back(id);
        projection.labels.push_back(by_id.at(id)->label);
    }
    std::vector<const std::uint8_t*> pointers;
    for (const auto& image : images) {
        if (image.width != model.backbone().input_size || image.height != model.backbone().input_size) {
            throw std::runtime_error("image size " + std::to_string(image.width) + " does not match the checkpoint input " +
                                     std::to_string(model.backbone().input_size));
        }
        pointers.push_back(image.pixels.data());
    }
    const Eigen::MatrixXd features = extract_features(model, pointers).cast<double>();
    ProjectionOptions options;
    options.perplexity = c.perplexity;
    options.seed = c.seed;
    Projection2D p;
    try {
        p = project_features(features, options);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    p.ids = projection.ids;
    if (std::any_of(projection.labels.begin(), projection.labels.end(), [](const auto& l) { return !l.empty(); })) {
        p.labels = projection.labels;
    }
    write_projection(out, p, to_string(info.provenance) + " features");
    write_snapshot(out, "project", inputs_json(data, c.checkpoints));
    if (!p.labels.empty()) {
        std::map<std::string, int> codes;
        std::vector<int> labels;
        for (const auto& l : p.labels) {
            labels.push_back(codes.emplace(l, static_cast<int>(codes.size())).first->second);
        }
        if (codes.size() > 1) {
            log << "silhouette on labels: " << format("%.4f", silhouette_score(p.points, labels)) << '\n';
        }
    }
    log << "projection of " << ids.size() << " objects written to " << out.string() << '\n';
    return kExitSuccess;
}

int cmd_report(const ExperimentConfig& c, std::ostream& log) {
    const fs::path root = require_out(c, "report");
    const Report report = render_report(root);
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            const auto curves = collect_curves(entry.path());
            if (!curves.empty()) {
                render_curves(curves, entry.path(), entry.path().filename().string());
            }
        }
    }
    write_snapshot(root, "report", json::object());
    log << report_text(report);
    if (report.incomplete) {
        log << "report is incomplete\n";
        return kExitFailure;
    }
    return kExitSuccess;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    ExperimentConfig c;
    std::string config_path;
    std::string report_dir;
    Bindings b;

    CLI::App app{"Self-supervised pretraining on astronomical magnitudes: data synthesis, training and reports"};
    app.set_version_flag("--version", "astropretext 1.0");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", config_path, "JSON settings file; flags override its values")->check(CLI::ExistingFile);
    b.add(&app, "--seed", c.seed, "random seed", "seed");
    b.add(&app, "--out", c.out, "output directory", "out");
    b.add(&app, "--jobs", c.jobs, "concurrent runs for curve", "jobs");
    b.add(&app, "--backbone", c.backbone, "backbone family: vgg16 or tiny", "backbone");
    b.add(&app, "--widths", c.widths, "tiny backbone stage widths, e.g. 4,8,16,32", "widths");
    b.add(&app, "--hidden", c.hidden_units, "hidden units of the dense head", "hidden_units");
    b.add(&app, "--verbose", c.verbose, "print every epoch", "verbose");

    CLI::App* synth = app.add_subcommand("synth", "render a synthetic multi-band dataset");
    b.add(synth, "--classes", c.classes, "class counts, e.g. star:500,galaxy:500", "classes", "synth");
    b.add(synth, "--size", c.image_size, "image side in pixels", "image_size", "synth");
    b.add(synth, "--gain", c.gain, "detector gain for Poisson noise; 0 = noiseless", "gain", "synth");
    b.add(synth, "--sky", c.sky_level, "sky level per pixel", "sky_level", "synth");
    b.add(synth, "--psf", c.psf_sigma, "PSF sigma in pixels", "psf_sigma", "synth");
    b.add(synth, "--prefix", c.id_prefix, "object id prefix", "id_prefix", "synth");
    b.add(synth, "--unlabeled", c.unlabeled, "write an unlabeled catalog", "unlabeled", "synth");
    b.add_file_only(c.class_models, "class_models", "synth");

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the magnitude regression pretext task");
    CLI::App* train = app.add_subcommand("train", "train downstream classifiers with the five schemes");
    CLI::App* curve = app.add_subcommand("curve", "low-data experiment over increasing training sizes");
    CLI::App* project = app.add_subcommand("project", "2-D t-SNE projection of extracted features");
    CLI::App* report = app.add_subcommand("report", "aggregate run directories into report tables");

    for (CLI::App* sub : {pretrain, train, curve, project}) {
        const std::string name = sub->get_name();
        b.add(sub, "--data", c.data, "dataset directory (catalog.csv, images/); default $ASTROPRETEXT_DATA", "data",
              name);
        b.add(sub, "--split-seed", c.split_seed, "seed of the 80/10/10 split", "split_seed", name);
    }
    for (CLI::App* sub : {train, curve, project}) {
        b.add(sub, "--checkpoint", c.checkpoints, "pretrained checkpoint directory (repeatable)", "checkpoints",
              sub->get_name());
    }
    for (CLI::App* sub : {pretrain, train, curve}) {
        const std::string name = sub->get_name();
        b.add(sub, "--batch-size", c.batch_size, "minibatch size", "batch_size", name);
        b.add(sub, "--patience", c.patience, "early-stopping patience in epochs", "patience", name);
    }
    for (CLI::App* sub : {train, curve}) {
        const std::string name = sub->get_name();
        b.add(sub, "--dataset", c.dataset, "experiment name (default: data directory name)", "dataset", name);
        b.add(sub, "--scheme", c.schemes, "schemes to run (default: all five)", "schemes", name);
        b.add(sub, "--seeds", c.seeds, "run seeds", "seeds", name);
        b.add(sub, "--epoch-cap", c.epoch_cap, "cap every phase at this many epochs", "epoch_cap", name);
    }
    b.add(pretrain, "--exclude", c.exclude, "labeled catalogs whose ids are removed", "exclude", "pretrain");
    b.add(pretrain, "--threshold", c.threshold, "maximum magnitude uncertainty", "threshold", "pretrain");
    b.add(pretrain, "--epochs", c.epochs, "maximum epochs", "epochs", "pretrain");
    b.add(pretrain, "--optimizer", c.optimizer, "sgd or adam", "optimizer", "pretrain");
    b.add(pretrain, "--lr", c.learning_rate, "learning rate", "learning_rate", "pretrain");
    b.add(pretrain, "--momentum", c.momentum, "SGD momentum", "momentum", "pretrain");
    b.add(train, "--train-size", c.train_size, "stratified training subsample (0: full split)", "train_size", "train");
    b.add(train, "--low-data", c.low_data, "low-data presets (scratch uses SGD 1e-4)", "low_data", "train");
    b.add(curve, "--sizes", c.sizes, "training sizes (default: the 18-step schedule)", "sizes", "curve");
    b.add(project, "--samples", c.samples, "objects to project", "samples", "project");
    b.add(project, "--perplexity", c.perplexity, "t-SNE perplexity", "perplexity", "project");
    report->add_option("directory", report_dir, "runs root (same as --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitSuccess : kExitUsage;
    }

    Context& ctx = context();
    ctx.bindings = &b;
    ctx.argv.assign(argv, argv + argc);
    try {
        if (!config_path.empty()) {
            nlohmann::json file;
            try {
                file = nlohmann::json::parse(read_file(config_path));
            } catch (const nlohmann::json::exception& e) {
                throw UsageError("--config " + config_path + ": " + e.what());
            }
            if (!file.is_object()) {
                throw UsageError("--config must hold a JSON object");
            }
            b.load(file);
        }
        if (!report_dir.empty()) {
            c.out = report_dir;
        }
        if (c.jobs < 1) {
            throw UsageError("--jobs must be at least 1");
        }
        int code = kExitSuccess;
        if (synth->parsed()) {
            code = cmd_synth(c, out);
        } else if (pretrain->parsed()) {
            code = cmd_pretrain(c, out);
        } else if (train->parsed()) {
            code = cmd_train(c, out);
        } else if (curve->parsed()) {
            code = cmd_curve(c, out);
        } else if (project->parsed()) {
            code = cmd_project(c, out);
        } else if (report->parsed()) {
            code = cmd_report(c, out);
        }
        ctx = {};
        return code;
    } catch (const UsageError& e) {
        ctx = {};
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        ctx = {};
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace astropretext::cli
