#ifndef ASTROPRETEXT_SYNTHGEN_HPP
#define ASTROPRETEXT_SYNTHGEN_HPP

#include "astropretext/catalog.hpp"
#include "astropretext/image_io.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace astropretext {

// ---------------------------------------------------------------------------
// Photometry
// ---------------------------------------------------------------------------

inline constexpr double kDefaultZeroPoint = 20.0;

/// m = zp - 2.5 log10(flux). Throws std::domain_error for flux <= 0.
double flux_to_magnitude(double flux, double zero_point = kDefaultZeroPoint);

/// flux = 10^((zp - m) / 2.5).
double magnitude_to_flux(double magnitude, double zero_point = kDefaultZeroPoint);

/// dm = (2.5 / ln 10) * (df / f).
double magnitude_uncertainty(double flux, double flux_error);

using ZeroPoints = BandArray;
inline ZeroPoints default_zero_points() { return ZeroPoints::Constant(kDefaultZeroPoint); }

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// One flux plane per band; plane(b)(y, x) holds linear counts.
class BandImage {
public:
    using Plane = Eigen::ArrayXXd;

    BandImage() = default;
    BandImage(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ <= 0 || height_ <= 0; }

    Plane& plane(int band) { return planes_[band]; }
    const Plane& plane(int band) const { return planes_[band]; }
    Plane& plane(Band band) { return planes_[static_cast<int>(band)]; }
    const Plane& plane(Band band) const { return planes_[static_cast<int>(band)]; }

    /// Sum over each plane.
    BandArray integrated_flux() const;

private:
    int width_ = 0;
    int height_ = 0;
    std::array<Plane, kBandCount> planes_;
};

enum class SourceKind { star, elliptical_galaxy, spiral_galaxy };

struct SourceParams {
    SourceKind kind = SourceKind::star;
    double center_x = 0.0;  // pixel (i, j) covers [i, i+1) x [j, j+1)
    double center_y = 0.0;
    BandArray flux = BandArray::Ones();

    double psf_sigma = 1.5;  // stars

    double effective_radius = 3.0;  // galaxies
    double axis_ratio = 1.0;
    double position_angle = 0.0;  // radians, major axis from +x
    int arm_count = 2;            // spirals
    double arm_twist = 2.0;
    double arm_strength = 0.5;
};

/// Sérsic b_n for the profiles used here (n = 1 and n = 4 are exact to 1e-4).
double sersic_b(double n);
inline constexpr double kGalaxyTruncation = 5.0;  // in effective radii

/**
 * Adds one source to every band plane of `canvas`.
 *
 * Stars are circular Gaussians integrated exactly over each pixel. Galaxies
 * use a Sérsic profile (n = 4 ellipticals, n = 1 spirals with logarithmic
 * arm modulation) truncated at five effective radii and normalised over the
 * full truncated support, so flux falling off the canvas is lost rather than
 * redistributed.
 */
void add_source(const SourceParams& params, BandImage& canvas);
BandImage render_source(const SourceParams& params, BandImage canvas);

struct NoiseModel {
    double sky_level = 1.0;  // counts per pixel
    double gain = std::numeric_limits<double>::infinity();

    bool noiseless() const { return !(gain < std::numeric_limits<double>::infinity()); }
};

struct NoisyImage {
    BandImage image;
    BandArray magnitude_uncertainty = BandArray::Zero();
};

/**
 * Adds Gaussian-approximated Poisson noise with per-pixel variance
 * (signal + sky) / gain, clamping to non-negative counts. The returned
 * uncertainties propagate the whole-image flux error of each band into
 * magnitudes. An infinite gain is the noiseless limit.
 */
NoisyImage add_noise(const BandImage& image, const NoiseModel& noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// RGB composition
// ---------------------------------------------------------------------------

/// Bands averaged into each of the r, g, b intensity planes.
using ChannelMapping = std::array<std::vector<Band>, 3>;
ChannelMapping default_channel_mapping();

struct RgbPlanes {
    std::array<Eigen::ArrayXXd, 3> channels;  // each (height, width), values in [0, 1]
};

struct Stretch {
    double stretch = 5.0;
    double q = 8.0;
};

/**
 * Arcsinh composition. With I = (r + g + b) / 3 each channel is multiplied by
 * asinh(Q I / stretch) / (Q I) (1 / stretch as I -> 0). Pixels whose largest
 * channel exceeds 1 are divided by that channel, preserving colour, and the
 * result is clipped to [0, 1].
 */
RgbPlanes compose_rgb(const BandImage& image, const ChannelMapping& mapping,
                      const Stretch& stretch = {});
RgbPlanes compose_rgb(const std::array<Eigen::ArrayXXd, 3>& intensity, const Stretch& stretch = {});
RgbImage quantize(const RgbPlanes& planes);

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Per-class synthetic population: brightness range, colour template and
/// morphology mix. Colours are band magnitudes relative to the r band.
struct ClassModel {
    std::string name;
    double spiral_fraction = 0.0;  // galaxies: share rendered as spirals
    bool point_source = true;
    double r_magnitude_min = 11.0;
    double r_magnitude_max = 16.0;
    BandArray colour = BandArray::Zero();
    double colour_scale_min = 0.7;  // multiplies the template
    double colour_scale_max = 1.3;
    double colour_jitter = 0.05;    // per-band Gaussian sigma, magnitudes
    double radius_min = 2.0;        // effective radius range, pixels
    double radius_max = 5.0;
    double axis_ratio_min = 0.5;
};

/// Built-in classes: star, galaxy, elliptical, spiral, quasar.
std::vector<ClassModel> builtin_class_models();
ClassModel class_model(const std::string& name);
/// Looks `name` up in `custom` first, then among the built-ins.
ClassModel class_model(const std::string& name, std::span<const ClassModel> custom);

struct ClassRequest {
    std::string name;
    std::size_t count = 0;
};

/// Parses "star:50,galaxy:50".
std::vector<ClassRequest> parse_class_requests(const std::string& text);

struct GeneratorConfig {
    std::vector<ClassRequest> classes;
    std::vector<ClassModel> models;  // custom classes; shadow built-ins of the same name
    int image_size = 64;
    std::uint64_t seed = 0;
    ZeroPoints zero_points = default_zero_points();
    double psf_sigma = 1.5;
    NoiseModel noise;
    ChannelMapping mapping = default_channel_mapping();
    Stretch stretch;
    std::string id_prefix = "obj";
    bool write_labels = true;        // false writes an unlabeled catalog
    bool keep_band_images = false;   // retain noiseless band planes (tests)
};

struct GeneratedDataset {
    std::vector<CatalogEntry> catalog;
    std::vector<RgbImage> images;
    std::vector<BandImage> band_images;  // noiseless, only if requested
};

/// Renders the requested population. Object k draws from its own stream
/// seeded by (seed, k), so output does not depend on generation order.
GeneratedDataset generate_dataset(const GeneratorConfig& config);

/// Writes `<id>.png` files, `catalog.csv` and `dataset_manifest.json`.
void write_dataset(const std::filesystem::path& directory, const GeneratedDataset& dataset,
                   const GeneratorConfig& config);

std::string manifest_json(const GeneratorConfig& config);

/// Sum inside a circular aperture centred at (cx, cy).
double aperture_sum(const BandImage::Plane& plane, double cx, double cy, double radius);

}  // namespace astropretext

#endif  // ASTROPRETEXT_SYNTHGEN_HPP
