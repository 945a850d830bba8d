// Compares backbone features from a converted Keras VGG16 checkpoint with the
// features Keras computed for the same images (reference.bin).

#include "astropretext/checkpoint.hpp"
#include "astropretext/trainer.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

using namespace astropretext;

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: keras_check <checkpoint dir>\n");
        return 2;
    }
    const std::filesystem::path dir = argv[1];
    std::ifstream in(dir / "reference.bin", std::ios::binary);
    std::uint32_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    const auto [count, size, dim] = std::tuple{header[0], header[1], header[2]};
    std::vector<std::uint8_t> images(std::size_t(count) * size * size * 3);
    in.read(reinterpret_cast<char*>(images.data()), static_cast<std::streamsize>(images.size()));
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> expected(count, dim);
    in.read(reinterpret_cast<char*>(expected.data()), static_cast<std::streamsize>(expected.size() * 4));
    if (!in) {
        std::fprintf(stderr, "truncated reference.bin\n");
        return 1;
    }

    PretrainedBackbone p = load_pretrained(dir);
    if (p.provenance != Pretraining::imagenet || p.model.input_transform().name != "caffe") {
        std::fprintf(stderr, "unexpected provenance or preprocessing\n");
        return 1;
    }
    std::vector<const std::uint8_t*> batch;
    for (std::uint32_t i = 0; i < count; ++i) {
        batch.push_back(images.data() + std::size_t(i) * size * size * 3);
    }
    const Mat<float> got = extract_features(p.model, std::span(batch), 4);
    if (got.rows() != expected.rows() || got.cols() != expected.cols()) {
        std::fprintf(stderr, "feature shape %ldx%ld, keras %ldx%ld\n", long(got.rows()), long(got.cols()),
                     long(expected.rows()), long(expected.cols()));
        return 1;
    }
    const double scale = expected.cwiseAbs().maxCoeff();
    const double err = (got - expected).cwiseAbs().maxCoeff() / scale;
    std::printf("%u images, %u features: max |diff| / max |keras| = %.2e\n", count, dim, err);
    return scale > 0.0 && err < 1e-4 ? 0 : 1;
}
