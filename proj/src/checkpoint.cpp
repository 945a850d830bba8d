#include "astropretext/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace astropretext {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'A', 'P', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

struct StoredTensor {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::vector<double> values;
};

void write_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) {
        throw CheckpointError("truncated weights archive");
    }
    return bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

nlohmann::ordered_json spec_json(const CheckpointInfo& info) {
    nlohmann::ordered_json j;
    j["backbone"] = {{"family", to_string(info.backbone.family)},
                     {"input_size", info.backbone.input_size},
                     {"stage_widths", info.backbone.stage_widths}};
    j["head"] = {{"hidden_units", info.head.hidden_units},
                 {"dropout", info.head.dropout},
                 {"outputs", info.head.outputs},
                 {"activation", to_string(info.head.activation)},
                 {"max_norm", info.head.max_norm},
                 {"l2", info.head.l2}};
    j["pretraining"] = to_string(info.provenance);
    j["seed"] = info.seed;
    j["preprocessing"] = {{"name", info.preprocessing.name},
                          {"channel_order", info.preprocessing.order},
                          {"mean", info.preprocessing.mean},
                          {"scale", info.preprocessing.scale}};
    return j;
}

std::map<std::string, StoredTensor> read_weights(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("missing weights archive " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
        throw CheckpointError(path.string() + " is not a weights archive");
    }
    if (read_u32(in) != kVersion) {
        throw CheckpointError("unsupported weights archive version in " + path.string());
    }
    std::map<std::string, StoredTensor> tensors;
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name(read_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        StoredTensor tensor;
        tensor.rows = read_u32(in);
        tensor.cols = read_u32(in);
        char width = 0;
        in.read(&width, 1);
        const std::size_t n = static_cast<std::size_t>(tensor.rows) * tensor.cols;
        tensor.values.resize(n);
        if (width == 4) {
            std::vector<float> buffer(n);
            in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(n * 4));
            std::copy(buffer.begin(), buffer.end(), tensor.values.begin());
        } else if (width == 8) {
            in.read(reinterpret_cast<char*>(tensor.values.data()), static_cast<std::streamsize>(n * 8));
        } else {
            throw CheckpointError("bad scalar width in " + path.string());
        }
        if (!in) {
            throw CheckpointError("truncated weights archive " + path.string());
        }
        tensors.emplace(std::move(name), std::move(tensor));
    }
    return tensors;
}

template <typename Scalar>
void assign(Parameter<Scalar>& p, const std::map<std::string, StoredTensor>& tensors) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end()) {
        throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    }
    if (it->second.rows != p.value.rows() || it->second.cols != p.value.cols()) {
        throw CheckpointError("tensor '" + p.name + "' has shape " + std::to_string(it->second.rows) + "x" +
                              std::to_string(it->second.cols) + ", model expects " +
                              std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = Eigen::Map<const Mat<double>>(it->second.values.data(), it->second.rows, it->second.cols)
                  .template cast<Scalar>();
}

}  // namespace

std::string to_string(Pretraining pretraining) {
    switch (pretraining) {
    case Pretraining::none:
        return "none";
    case Pretraining::imagenet:
        return "imagenet";
    case Pretraining::magnitudes:
        return "magnitudes";
    }
    return "none";
}

Pretraining pretraining_from_string(const std::string& name) {
    if (name == "none") {
        return Pretraining::none;
    }
    if (name == "imagenet") {
        return Pretraining::imagenet;
    }
    if (name == "magnitudes") {
        return Pretraining::magnitudes;
    }
    throw std::invalid_argument("unknown pretraining provenance '" + name + "'");
}

template <typename Scalar>
void save_checkpoint(const fs::path& directory, Model<Scalar>& model, Pretraining provenance,
                     std::uint64_t seed) {
    fs::create_directories(directory);
    {
        std::ofstream out(directory / "weights", std::ios::binary);
        out.write(kMagic, 4);
        write_u32(out, kVersion);
        const auto params = model.parameters();
        write_u32(out, static_cast<std::uint32_t>(params.size()));
        for (const auto* p : params) {
            write_u32(out, static_cast<std::uint32_t>(p->name.size()));
            out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
            write_u32(out, static_cast<std::uint32_t>(p->value.rows()));
            write_u32(out, static_cast<std::uint32_t>(p->value.cols()));
            const char width = sizeof(Scalar);
            out.write(&width, 1);
            out.write(reinterpret_cast<const char*>(p->value.data()),
                      static_cast<std::streamsize>(p->value.size() * sizeof(Scalar)));
        }
        if (!out) {
            throw CheckpointError("failed writing weights in " + directory.string());
        }
    }
    std::ofstream meta(directory / "model.json", std::ios::binary);
    meta << spec_json({model.backbone(), model.head(), provenance, seed, model.input_transform()}).dump(2) << '\n';
    if (!meta) {
        throw CheckpointError("failed writing model.json in " + directory.string());
    }
}

CheckpointInfo read_checkpoint_info(const fs::path& directory) {
    std::ifstream in(directory / "model.json", std::ios::binary);
    if (!in) {
        throw CheckpointError("missing model.json in " + directory.string());
    }
    try {
        const auto j = nlohmann::json::parse(in);
        CheckpointInfo info;
        const auto& b = j.at("backbone");
        info.backbone.family = backbone_family_from_string(b.at("family").get<std::string>());
        info.backbone.input_size = b.at("input_size").get<int>();
        info.backbone.stage_widths = b.at("stage_widths").get<std::vector<int>>();
        const auto& h = j.at("head");
        info.head.hidden_units = h.at("hidden_units").get<int>();
        info.head.dropout = h.at("dropout").get<double>();
        info.head.outputs = h.at("outputs").get<int>();
        info.head.activation = output_activation_from_string(h.at("activation").get<std::string>());
        info.head.max_norm = h.at("max_norm").get<double>();
        info.head.l2 = h.at("l2").get<double>();
        info.provenance = pretraining_from_string(j.at("pretraining").get<std::string>());
        info.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("preprocessing")) {
            const auto& p = j.at("preprocessing");
            info.preprocessing.name = p.value("name", std::string("custom"));
            info.preprocessing.order = p.value("channel_order", info.preprocessing.order);
            info.preprocessing.mean = p.value("mean", info.preprocessing.mean);
            info.preprocessing.scale = p.value("scale", info.preprocessing.scale);
            for (int c : info.preprocessing.order) {
                if (c < 0 || c > 2) {
                    throw CheckpointError("preprocessing channel_order must permute 0, 1, 2 in " +
                                          directory.string());
                }
            }
        }
        return info;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed model.json in " + directory.string() + ": " + e.what());
    }
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const fs::path& directory, CheckpointInfo* info_out) {
    const CheckpointInfo info = read_checkpoint_info(directory);
    Model<Scalar> model(info.backbone, info.head, info.seed);
    model.set_input_transform(info.preprocessing);
    const auto tensors = read_weights(directory / "weights");
    for (auto* p : model.parameters()) {
        assign(*p, tensors);
    }
    if (info_out) {
        *info_out = info;
    }
    return model;
}

template <typename Scalar>
CheckpointInfo load_backbone(const fs::path& directory, Model<Scalar>& model) {
    const CheckpointInfo info = read_checkpoint_info(directory);
    if (!(info.backbone == model.backbone())) {
        throw CheckpointError("checkpoint backbone (" + to_string(info.backbone.family) + ", input " +
                              std::to_string(info.backbone.input_size) +
                              ") does not match the requested backbone (" +
                              to_string(model.backbone().family) + ", input " +
                              std::to_string(model.backbone().input_size) + ")");
    }
    const auto tensors = read_weights(directory / "weights");
    for (auto* p : model.parameters()) {
        if (p->backbone) {
            assign(*p, tensors);
        }
    }
    model.set_input_transform(info.preprocessing);
    return info;
}

template void save_checkpoint<float>(const fs::path&, Model<float>&, Pretraining, std::uint64_t);
template void save_checkpoint<double>(const fs::path&, Model<double>&, Pretraining, std::uint64_t);
template Model<float> load_checkpoint<float>(const fs::path&, CheckpointInfo*);
template Model<double> load_checkpoint<double>(const fs::path&, CheckpointInfo*);
template CheckpointInfo load_backbone<float>(const fs::path&, Model<float>&);
template CheckpointInfo load_backbone<double>(const fs::path&, Model<double>&);

}  // namespace astropretext
