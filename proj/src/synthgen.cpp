#include "astropretext/synthgen.hpp"

#include "astropretext/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace astropretext {

namespace fs = std::filesystem;

double flux_to_magnitude(double flux, double zero_point) {
    if (!(flux > 0.0)) {
        throw std::domain_error("flux must be positive to convert to a magnitude");
    }
    return zero_point - 2.5 * std::log10(flux);
}

double magnitude_to_flux(double magnitude, double zero_point) {
    return std::pow(10.0, (zero_point - magnitude) / 2.5);
}

double magnitude_uncertainty(double flux, double flux_error) {
    if (!(flux > 0.0)) {
        return std::numeric_limits<double>::infinity();
    }
    return 2.5 / std::numbers::ln10 * flux_error / flux;
}

BandImage::BandImage(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("band image dimensions must be positive");
    }
    for (auto& p : planes_) {
        p = Plane::Zero(height, width);
    }
}

BandArray BandImage::integrated_flux() const {
    BandArray total;
    for (int b = 0; b < kBandCount; ++b) {
        total(b) = empty() ? 0.0 : planes_[b].sum();
    }
    return total;
}

double sersic_b(double n) {
    // Ciotti & Bertin asymptotic expansion.
    return 2.0 * n - 1.0 / 3.0 + 4.0 / (405.0 * n) + 46.0 / (25515.0 * n * n);
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

void validate(const SourceParams& p, const BandImage& canvas) {
    if (canvas.empty()) {
        throw std::invalid_argument("cannot render onto an empty canvas");
    }
    if (!(p.flux > 0.0).all()) {
        throw std::invalid_argument("source fluxes must be positive");
    }
    if (p.center_x < 0.0 || p.center_x >= canvas.width() || p.center_y < 0.0 ||
        p.center_y >= canvas.height()) {
        throw std::invalid_argument("source centre lies outside the canvas");
    }
    if (p.kind == SourceKind::star) {
        if (!(p.psf_sigma > 0.0)) {
            throw std::invalid_argument("PSF sigma must be positive");
        }
    } else {
        if (!(p.effective_radius > 0.0)) {
            throw std::invalid_argument("effective radius must be positive");
        }
        if (!(p.axis_ratio > 0.0 && p.axis_ratio <= 1.0)) {
            throw std::invalid_argument("axis ratio must lie in (0, 1]");
        }
    }
}

void add_star(const SourceParams& p, BandImage& canvas) {
    const int w = canvas.width();
    const int h = canvas.height();
    Eigen::ArrayXd fx(w);
    Eigen::ArrayXd fy(h);
    for (int x = 0; x < w; ++x) {
        fx(x) = normal_cdf((x + 1 - p.center_x) / p.psf_sigma) -
                normal_cdf((x - p.center_x) / p.psf_sigma);
    }
    for (int y = 0; y < h; ++y) {
        fy(y) = normal_cdf((y + 1 - p.center_y) / p.psf_sigma) -
                normal_cdf((y - p.center_y) / p.psf_sigma);
    }
    const Eigen::ArrayXXd profile = (fy.matrix() * fx.matrix().transpose()).array();
    for (int b = 0; b < kBandCount; ++b) {
        canvas.plane(b) += p.flux(b) * profile;
    }
}

void add_galaxy(const SourceParams& p, BandImage& canvas) {
    constexpr int kSub = 5;  // sub-samples per pixel axis
    const bool spiral = p.kind == SourceKind::spiral_galaxy;
    const double n = spiral ? 1.0 : 4.0;
    const double bn = sersic_b(n);
    const double re = p.effective_radius;
    const double rmax = kGalaxyTruncation * re;
    const double cos_pa = std::cos(p.position_angle);
    const double sin_pa = std::sin(p.position_angle);

    // Pixel bounding box of the truncated support; may extend past the canvas.
    const int x0 = static_cast<int>(std::floor(p.center_x - rmax));
    const int x1 = static_cast<int>(std::ceil(p.center_x + rmax));
    const int y0 = static_cast<int>(std::floor(p.center_y - rmax));
    const int y1 = static_cast<int>(std::ceil(p.center_y + rmax));
    Eigen::ArrayXXd profile = Eigen::ArrayXXd::Zero(y1 - y0, x1 - x0);

    for (int py = y0; py < y1; ++py) {
        for (int px = x0; px < x1; ++px) {
            double sum = 0.0;
            for (int sy = 0; sy < kSub; ++sy) {
                for (int sx = 0; sx < kSub; ++sx) {
                    const double dx = px + (sx + 0.5) / kSub - p.center_x;
                    const double dy = py + (sy + 0.5) / kSub - p.center_y;
                    const double major = dx * cos_pa + dy * sin_pa;
                    const double minor = -dx * sin_pa + dy * cos_pa;
                    const double r = std::sqrt(major * major + (minor / p.axis_ratio) * (minor / p.axis_ratio));
                    if (r > rmax) {
                        continue;
                    }
                    double value = std::exp(-bn * (std::pow(r / re, 1.0 / n) - 1.0));
                    if (spiral) {
                        const double theta = std::atan2(minor / p.axis_ratio, major);
                        const double phase = p.arm_count * theta - p.arm_twist * std::log1p(r / re);
                        value *= 1.0 + p.arm_strength * std::cos(phase);
                    }
                    sum += value;
                }
            }
            profile(py - y0, px - x0) = sum;
        }
    }
    const double total = profile.sum();
    if (!(total > 0.0)) {
        return;
    }
    profile /= total;

    const int cx0 = std::max(x0, 0);
    const int cx1 = std::min(x1, canvas.width());
    const int cy0 = std::max(y0, 0);
    const int cy1 = std::min(y1, canvas.height());
    if (cx0 >= cx1 || cy0 >= cy1) {
        return;
    }
    const auto visible = profile.block(cy0 - y0, cx0 - x0, cy1 - cy0, cx1 - cx0);
    for (int b = 0; b < kBandCount; ++b) {
        canvas.plane(b).block(cy0, cx0, cy1 - cy0, cx1 - cx0) += p.flux(b) * visible;
    }
}

}  // namespace

void add_source(const SourceParams& params, BandImage& canvas) {
    validate(params, canvas);
    if (params.kind == SourceKind::star) {
        add_star(params, canvas);
    } else {
        add_galaxy(params, canvas);
    }
}

BandImage render_source(const SourceParams& params, BandImage canvas) {
    add_source(params, canvas);
    return canvas;
}

NoisyImage add_noise(const BandImage& image, const NoiseModel& noise, std::uint64_t seed) {
    if (!(noise.sky_level >= 0.0) || !(noise.gain > 0.0)) {
        throw std::invalid_argument("noise model needs sky >= 0 and gain > 0");
    }
    NoisyImage out{image, BandArray::Zero()};
    if (noise.noiseless() || image.empty()) {
        return out;
    }
    Rng rng(seed);
    for (int b = 0; b < kBandCount; ++b) {
        auto& plane = out.image.plane(b);
        const double signal = image.plane(b).sum();
        const double variance = (signal + noise.sky_level * plane.size()) / noise.gain;
        for (Eigen::Index k = 0; k < plane.size(); ++k) {
            const double sigma = std::sqrt((plane(k) + noise.sky_level) / noise.gain);
            plane(k) = std::max(0.0, plane(k) + sigma * rng.normal());
        }
        out.magnitude_uncertainty(b) = magnitude_uncertainty(signal, std::sqrt(variance));
    }
    return out;
}

ChannelMapping default_channel_mapping() {
    using enum Band;
    return {{{r, f660, i, f861, z}, {g, f515}, {u, f378, f395, f410, f430}}};
}

RgbPlanes compose_rgb(const std::array<Eigen::ArrayXXd, 3>& intensity, const Stretch& stretch) {
    if (!(stretch.stretch > 0.0) || !(stretch.q > 0.0)) {
        throw std::invalid_argument("stretch and Q must be positive");
    }
    const auto rows = intensity[0].rows();
    const auto cols = intensity[0].cols();
    RgbPlanes out;
    for (auto& c : out.channels) {
        c = Eigen::ArrayXXd::Zero(rows, cols);
    }
    for (Eigen::Index k = 0; k < rows * cols; ++k) {
        const double r = std::max(0.0, intensity[0](k));
        const double g = std::max(0.0, intensity[1](k));
        const double b = std::max(0.0, intensity[2](k));
        const double mean = (r + g + b) / 3.0;
        const double x = stretch.q * mean / stretch.stretch;
        const double scale = x < 1e-12 ? 1.0 / stretch.stretch : std::asinh(x) / (stretch.q * mean);
        double channel[3] = {r * scale, g * scale, b * scale};
        const double peak = std::max({channel[0], channel[1], channel[2]});
        for (int c = 0; c < 3; ++c) {
            if (peak > 1.0) {
                channel[c] /= peak;
            }
            out.channels[c](k) = std::clamp(channel[c], 0.0, 1.0);
        }
    }
    return out;
}

RgbPlanes compose_rgb(const BandImage& image, const ChannelMapping& mapping, const Stretch& stretch) {
    if (image.empty()) {
        throw std::invalid_argument("cannot compose an empty image");
    }
    std::array<Eigen::ArrayXXd, 3> intensity;
    for (int c = 0; c < 3; ++c) {
        if (mapping[c].empty()) {
            throw std::invalid_argument("channel mapping selects no bands");
        }
        intensity[c] = Eigen::ArrayXXd::Zero(image.height(), image.width());
        for (Band band : mapping[c]) {
            intensity[c] += image.plane(band);
        }
        intensity[c] /= static_cast<double>(mapping[c].size());
    }
    return compose_rgb(intensity, stretch);
}

RgbImage quantize(const RgbPlanes& planes) {
    const int h = static_cast<int>(planes.channels[0].rows());
    const int w = static_cast<int>(planes.channels[0].cols());
    RgbImage out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(planes.channels[c](y, x) * 255.0));
            }
        }
    }
    return out;
}

std::vector<ClassModel> builtin_class_models() {
    //                 u     f378  f395  f410  f430  g     f515  r    f660   i      f861   z
    BandArray star, elliptical, spiral, quasar;
    star << 1.60, 1.30, 1.10, 0.90, 0.75, 0.55, 0.35, 0.0, -0.05, -0.15, -0.20, -0.25;
    elliptical << 2.40, 2.00, 1.80, 1.50, 1.30, 0.90, 0.60, 0.0, -0.10, -0.35, -0.45, -0.55;
    spiral << 1.40, 1.20, 1.05, 0.90, 0.80, 0.50, 0.35, 0.0, -0.25, -0.20, -0.25, -0.30;
    quasar << 0.20, 0.15, 0.15, 0.10, 0.10, 0.15, 0.10, 0.0, 0.00, 0.05, 0.05, 0.00;

    ClassModel s{.name = "star", .point_source = true, .r_magnitude_min = 11.0,
                 .r_magnitude_max = 16.0, .colour = star};
    ClassModel e{.name = "elliptical", .point_source = false, .r_magnitude_min = 11.0,
                 .r_magnitude_max = 15.5, .colour = elliptical, .radius_min = 2.0,
                 .radius_max = 5.0, .axis_ratio_min = 0.6};
    ClassModel sp{.name = "spiral", .spiral_fraction = 1.0, .point_source = false,
                  .r_magnitude_min = 11.0, .r_magnitude_max = 15.5, .colour = spiral,
                  .radius_min = 2.5, .radius_max = 5.5, .axis_ratio_min = 0.35};
    ClassModel g = e;
    g.name = "galaxy";
    g.spiral_fraction = 0.5;
    g.colour = 0.5 * (elliptical + spiral);
    ClassModel q{.name = "quasar", .point_source = true, .r_magnitude_min = 13.0,
                 .r_magnitude_max = 16.0, .colour = quasar};
    return {s, g, e, sp, q};
}

ClassModel class_model(const std::string& name) {
    for (auto& m : builtin_class_models()) {
        if (m.name == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown synthetic class '" + name +
                                "' (expected star, galaxy, elliptical, spiral or quasar)");
}

ClassModel class_model(const std::string& name, std::span<const ClassModel> custom) {
    for (const auto& m : custom) {
        if (m.name == name) {
            return m;
        }
    }
    return class_model(name);
}

std::vector<ClassRequest> parse_class_requests(const std::string& text) {
    std::vector<ClassRequest> requests;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
            throw std::invalid_argument("class request '" + item + "' is not name:count");
        }
        ClassRequest r;
        r.name = item.substr(0, colon);
        std::size_t consumed = 0;
        const long long count = std::stoll(item.substr(colon + 1), &consumed);
        if (consumed != item.size() - colon - 1 || count < 1) {
            throw std::invalid_argument("class count in '" + item + "' must be a positive integer");
        }
        r.count = static_cast<std::size_t>(count);
        requests.push_back(r);
    }
    if (requests.empty()) {
        throw std::invalid_argument("no classes requested");
    }
    return requests;
}

namespace {

SourceParams draw_source(const ClassModel& model, const GeneratorConfig& config, Rng& rng,
                         double& r_magnitude) {
    const double size = config.image_size;
    SourceParams p;
    p.center_x = size / 2.0 + rng.uniform(-1.0, 1.0);
    p.center_y = size / 2.0 + rng.uniform(-1.0, 1.0);
    p.psf_sigma = config.psf_sigma;

    r_magnitude = rng.uniform(model.r_magnitude_min, model.r_magnitude_max);
    const double colour_scale = rng.uniform(model.colour_scale_min, model.colour_scale_max);
    for (int b = 0; b < kBandCount; ++b) {
        const double jitter = b == static_cast<int>(Band::r) ? 0.0 : rng.normal(0.0, model.colour_jitter);
        const double m = r_magnitude + colour_scale * model.colour(b) + jitter;
        p.flux(b) = magnitude_to_flux(m, config.zero_points(b));
    }
    if (model.point_source) {
        p.kind = SourceKind::star;
    } else {
        p.kind = rng.uniform() < model.spiral_fraction ? SourceKind::spiral_galaxy
                                                       : SourceKind::elliptical_galaxy;
        // Keep the truncated support inside the cutout.
        const double radius_cap = (size / 2.0 - 2.0) / kGalaxyTruncation;
        p.effective_radius =
            std::min(rng.uniform(model.radius_min, model.radius_max) * size / 64.0, radius_cap);
        p.axis_ratio = rng.uniform(model.axis_ratio_min, 1.0);
        p.position_angle = rng.uniform(0.0, std::numbers::pi);
        p.arm_count = 2;
        p.arm_twist = rng.uniform(1.5, 3.0);
        p.arm_strength = rng.uniform(0.3, 0.7);
    }
    return p;
}

}  // namespace

GeneratedDataset generate_dataset(const GeneratorConfig& config) {
    if (config.image_size < 16) {
        throw std::invalid_argument("image size must be at least 16 pixels");
    }
    if (config.classes.empty()) {
        throw std::invalid_argument("no classes requested");
    }
    std::vector<ClassModel> models;
    std::size_t total = 0;
    for (const auto& request : config.classes) {
        if (request.count < 1) {
            throw std::invalid_argument("class '" + request.name + "' needs at least one object");
        }
        models.push_back(class_model(request.name, config.models));
        total += request.count;
    }

    GeneratedDataset out;
    out.catalog.reserve(total);
    out.images.reserve(total);
    const int digits = std::max<int>(6, static_cast<int>(std::to_string(total).size()));
    std::size_t index = 0;
    for (std::size_t c = 0; c < models.size(); ++c) {
        for (std::size_t k = 0; k < config.classes[c].count; ++k, ++index) {
            Rng rng(stream_seed(config.seed, index));
            double r_magnitude = 0.0;
            const SourceParams params = draw_source(models[c], config, rng, r_magnitude);
            BandImage clean(config.image_size, config.image_size);
            add_source(params, clean);

            CatalogEntry entry;
            std::string number = std::to_string(index);
            entry.id = config.id_prefix + std::string(digits - number.size(), '0') + number;
            entry.ra = rng.uniform(0.0, 360.0);
            entry.dec = std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / std::numbers::pi;
            const BandArray flux = clean.integrated_flux();
            for (int b = 0; b < kBandCount; ++b) {
                entry.magnitudes.values(b) = flux_to_magnitude(flux(b), config.zero_points(b));
            }
            const NoisyImage noisy = add_noise(clean, config.noise, rng.next_u64());
            entry.magnitudes.uncertainties = noisy.magnitude_uncertainty;
            if (config.write_labels) {
                entry.label = config.classes[c].name;
            }
            out.images.push_back(quantize(compose_rgb(noisy.image, config.mapping, config.stretch)));
            if (config.keep_band_images) {
                out.band_images.push_back(std::move(clean));
            }
            out.catalog.push_back(std::move(entry));
        }
    }
    return out;
}

std::string manifest_json(const GeneratorConfig& config) {
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["image_size"] = config.image_size;
    j["id_prefix"] = config.id_prefix;
    j["labeled"] = config.write_labels;
    nlohmann::ordered_json zp;
    for (int b = 0; b < kBandCount; ++b) {
        zp[std::string(kBandNames[b])] = config.zero_points(b);
    }
    j["zero_points"] = zp;
    j["psf_sigma"] = config.psf_sigma;
    j["noise"] = {{"sky_level", config.noise.sky_level},
                  {"gain", config.noise.noiseless() ? nlohmann::ordered_json("inf")
                                                    : nlohmann::ordered_json(config.noise.gain)}};
    j["stretch"] = {{"stretch", config.stretch.stretch}, {"q", config.stretch.q}};
    nlohmann::ordered_json mapping = nlohmann::ordered_json::array();
    for (const auto& channel : config.mapping) {
        nlohmann::ordered_json names = nlohmann::ordered_json::array();
        for (Band b : channel) {
            names.push_back(std::string(band_name(b)));
        }
        mapping.push_back(names);
    }
    j["channel_mapping"] = mapping;
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (const auto& request : config.classes) {
        const ClassModel m = class_model(request.name, config.models);
        nlohmann::ordered_json c;
        c["name"] = m.name;
        c["count"] = request.count;
        c["point_source"] = m.point_source;
        c["spiral_fraction"] = m.spiral_fraction;
        c["r_magnitude_range"] = {m.r_magnitude_min, m.r_magnitude_max};
        std::vector<double> colour(m.colour.data(), m.colour.data() + kBandCount);
        c["colour_minus_r"] = colour;
        c["colour_scale_range"] = {m.colour_scale_min, m.colour_scale_max};
        c["colour_jitter"] = m.colour_jitter;
        if (!m.point_source) {
            c["effective_radius_range"] = {m.radius_min, m.radius_max};
            c["axis_ratio_min"] = m.axis_ratio_min;
        }
        classes.push_back(c);
    }
    j["classes"] = classes;
    return j.dump(2);
}

void write_dataset(const fs::path& directory, const GeneratedDataset& dataset,
                   const GeneratorConfig& config) {
    fs::create_directories(directory / "images");
    for (std::size_t k = 0; k < dataset.catalog.size(); ++k) {
        write_png(directory / "images" / (dataset.catalog[k].id + ".png"), dataset.images[k]);
    }
    write_catalog(directory / "catalog.csv", dataset.catalog);
    std::ofstream manifest(directory / "dataset_manifest.json", std::ios::binary);
    manifest << manifest_json(config) << '\n';
    if (!manifest) {
        throw std::runtime_error("cannot write dataset manifest in " + directory.string());
    }
}

double aperture_sum(const BandImage::Plane& plane, double cx, double cy, double radius) {
    double sum = 0.0;
    for (Eigen::Index y = 0; y < plane.rows(); ++y) {
        for (Eigen::Index x = 0; x < plane.cols(); ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                sum += plane(y, x);
            }
        }
    }
    return sum;
}

}  // namespace astropretext
