#ifndef ASTROPRETEXT_CHECKPOINT_HPP
#define ASTROPRETEXT_CHECKPOINT_HPP

#include "astropretext/netspec.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace astropretext {

enum class Pretraining { none, imagenet, magnitudes };

std::string to_string(Pretraining pretraining);
Pretraining pretraining_from_string(const std::string& name);

struct CheckpointInfo {
    BackboneSpec backbone;
    HeadSpec head;
    Pretraining provenance = Pretraining::none;
    std::uint64_t seed = 0;
    InputTransform preprocessing;  // absent in model.json: plain [0, 1] pixels
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * A checkpoint is a directory holding `model.json` (specs, provenance, seed,
 * input preprocessing)
 * and `weights`, a little-endian tensor archive:
 *
 *     "APTW" u32:version u32:count
 *     count x { u32:name_len name u32:rows u32:cols u8:scalar_bytes data }
 */
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& directory, Model<Scalar>& model,
                     Pretraining provenance, std::uint64_t seed);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& directory);

/// Rebuilds the model described by model.json and loads every tensor.
template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& directory, CheckpointInfo* info = nullptr);

/// Loads only the backbone tensors into `model`; throws CheckpointError
/// when the stored backbone spec or any tensor shape differs.
template <typename Scalar>
CheckpointInfo load_backbone(const std::filesystem::path& directory, Model<Scalar>& model);

}  // namespace astropretext

#endif  // ASTROPRETEXT_CHECKPOINT_HPP
