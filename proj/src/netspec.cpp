#include "astropretext/netspec.hpp"

namespace astropretext {

std::string to_string(BackboneFamily family) {
    return family == BackboneFamily::vgg16 ? "vgg16" : "tiny";
}

BackboneFamily backbone_family_from_string(const std::string& name) {
    if (name == "vgg16") {
        return BackboneFamily::vgg16;
    }
    if (name == "tiny") {
        return BackboneFamily::tiny;
    }
    throw std::invalid_argument("unknown backbone family '" + name + "' (expected vgg16 or tiny)");
}

std::string to_string(OutputActivation activation) {
    return activation == OutputActivation::softmax ? "softmax" : "saturating-relu";
}

OutputActivation output_activation_from_string(const std::string& name) {
    if (name == "softmax") {
        return OutputActivation::softmax;
    }
    if (name == "saturating-relu") {
        return OutputActivation::saturating_relu;
    }
    throw std::invalid_argument("unknown output activation '" + name + "'");
}

std::vector<int> BackboneSpec::layout() const {
    if (family == BackboneFamily::vgg16) {
        return vgg16_layout();
    }
    std::vector<int> out;
    for (int width : stage_widths) {
        out.push_back(width);
        out.push_back(0);
    }
    return out;
}

int BackboneSpec::downsampling() const {
    int factor = 1;
    for (int width : layout()) {
        if (width == 0) {
            factor *= 2;
        }
    }
    return factor;
}

int BackboneSpec::output_channels() const {
    int channels = 3;
    for (int width : layout()) {
        if (width > 0) {
            channels = width;
        }
    }
    return channels;
}

void BackboneSpec::validate() const {
    if (family == BackboneFamily::tiny) {
        if (stage_widths.size() < 2) {
            throw std::invalid_argument("tiny backbone needs at least 2 conv stages");
        }
        for (int width : stage_widths) {
            if (width < 1) {
                throw std::invalid_argument("tiny backbone stage widths must be positive");
            }
        }
    }
    if (input_size < 1) {
        throw std::invalid_argument("input size must be positive");
    }
    const int factor = downsampling();
    if (input_size % factor != 0) {
        throw std::invalid_argument("input size " + std::to_string(input_size) +
                                    " is not divisible by the backbone downsampling factor " +
                                    std::to_string(factor));
    }
}

void HeadSpec::validate() const {
    if (outputs < 1) {
        throw std::invalid_argument("head needs at least one output unit");
    }
    if (hidden_units < 1) {
        throw std::invalid_argument("head needs at least one hidden unit");
    }
    if (!(max_norm > 0.0)) {
        throw std::invalid_argument("max-norm gamma must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("dropout rate must lie in [0, 1)");
    }
    if (!(l2 >= 0.0)) {
        throw std::invalid_argument("L2 factor must be non-negative");
    }
}

std::int64_t parameter_count(const BackboneSpec& backbone, const HeadSpec& head) {
    backbone.validate();
    head.validate();
    std::int64_t total = 0;
    std::int64_t channels = 3;
    for (int width : backbone.layout()) {
        if (width > 0) {
            total += 9 * channels * width + width;
            channels = width;
        }
    }
    const std::int64_t features = backbone.feature_dimension();
    total += features * head.hidden_units + head.hidden_units;
    total += static_cast<std::int64_t>(head.hidden_units) * head.outputs + head.outputs;
    return total;
}

}  // namespace astropretext
