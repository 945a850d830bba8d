#ifndef ASTROPRETEXT_NETSPEC_HPP
#define ASTROPRETEXT_NETSPEC_HPP

#include "astropretext/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace astropretext {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Elementwise pieces
// ---------------------------------------------------------------------------

/// Clamp to [0, 1]: ReLU that saturates at 1.
template <typename Derived>
auto saturating_relu(const Eigen::ArrayBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    return x.max(Scalar(0)).min(Scalar(1));
}

inline double saturating_relu(double x) { return std::clamp(x, 0.0, 1.0); }

/// Column-wise softmax (one sample per column).
template <typename Derived>
Mat<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    Mat<Scalar> out = logits;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        auto col = out.col(j);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
    }
    return out;
}

/**
 * Max-norm constraint on a dense weight matrix laid out (outputs, inputs):
 * every row (one unit's incoming weights) with norm above `gamma` is rescaled
 * to norm `gamma`.
 */
template <typename Derived>
void apply_max_norm(Eigen::MatrixBase<Derived>& weights, double gamma) {
    using Scalar = typename Derived::Scalar;
    if (!(gamma > 0.0)) {
        throw std::invalid_argument("max-norm gamma must be positive");
    }
    // squared norms for all rows at once; column-major rows are strided
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = weights.rowwise().squaredNorm().cwiseSqrt();
    // a rescaled row can land a few ulps above gamma; leave those alone so a second pass is a no-op
    const Scalar limit = Scalar(gamma) * (Scalar(1) + 8 * Eigen::NumTraits<Scalar>::epsilon());
    if ((norms.array() <= limit).all()) {
        return;
    }
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scale =
        (norms.array() > limit).select(Scalar(gamma) / norms.array(), Scalar(1));
    weights = scale.asDiagonal() * weights;
}

template <typename Derived>
Mat<typename Derived::Scalar> max_norm(const Eigen::MatrixBase<Derived>& weights, double gamma) {
    Mat<typename Derived::Scalar> out = weights;
    apply_max_norm(out, gamma);
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind { cross_entropy, mean_absolute_error };

inline constexpr double kCrossEntropyEpsilon = 1e-7;

/**
 * Predictions and targets are (outputs, batch). Cross-entropy takes one-hot
 * targets and clamps probabilities below 1e-7; MAE averages over all elements.
 */
template <typename Scalar>
Scalar loss(LossKind kind, const Mat<Scalar>& predictions, const Mat<Scalar>& targets) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
        throw std::invalid_argument("loss: prediction/target shape mismatch");
    }
    if (predictions.size() == 0) {
        return Scalar(0);
    }
    if (kind == LossKind::mean_absolute_error) {
        return (predictions - targets).cwiseAbs().sum() / Scalar(predictions.size());
    }
    const Scalar eps(kCrossEntropyEpsilon);
    const auto logp = predictions.array().max(eps).log();
    return -(targets.array() * logp).sum() / Scalar(predictions.cols());
}

/// d loss / d predictions. Subgradient 0 where |p - t| == 0 (MAE) and where
/// the probability was clamped (cross-entropy).
template <typename Scalar>
Mat<Scalar> loss_gradient(LossKind kind, const Mat<Scalar>& predictions, const Mat<Scalar>& targets) {
    if (kind == LossKind::mean_absolute_error) {
        const Scalar scale = Scalar(1) / Scalar(predictions.size());
        return ((predictions - targets).array().sign() * scale).matrix();
    }
    const Scalar eps(kCrossEntropyEpsilon);
    const Scalar scale = Scalar(1) / Scalar(predictions.cols());
    return (predictions.array() > eps)
        .select(-targets.array() / predictions.array() * scale, Scalar(0))
        .matrix();
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

enum class BackboneFamily { vgg16, tiny };
enum class OutputActivation { softmax, saturating_relu };

std::string to_string(BackboneFamily family);
BackboneFamily backbone_family_from_string(const std::string& name);
std::string to_string(OutputActivation activation);
OutputActivation output_activation_from_string(const std::string& name);

/// Conv widths of the 13-layer VGG16 feature extractor; 0 marks a 2x2 max-pool.
inline const std::vector<int>& vgg16_layout() {
    static const std::vector<int> layout = {64,  64,  0,   128, 128, 0,   256, 256, 256,
                                            0,   512, 512, 512, 0,   512, 512, 512, 0};
    return layout;
}

/// Per-channel affine map on [0, 1] pixels, applied before the first layer:
/// out[c] = (in[order[c]] - mean[c]) * scale[c]. Travels with the backbone
/// weights so imported checkpoints see the inputs they were trained on.
struct InputTransform {
    std::string name = "unit";
    std::array<int, 3> order{0, 1, 2};
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> scale{1.0, 1.0, 1.0};

    bool identity() const {
        return order == std::array<int, 3>{0, 1, 2} && mean == std::array<double, 3>{0.0, 0.0, 0.0} &&
               scale == std::array<double, 3>{1.0, 1.0, 1.0};
    }
    bool operator==(const InputTransform&) const = default;

    /// Keras VGG16 ("caffe"): BGR order, ImageNet means subtracted on the 0..255 scale.
    static InputTransform caffe() {
        return {"caffe", {2, 1, 0}, {103.939 / 255.0, 116.779 / 255.0, 123.68 / 255.0}, {255.0, 255.0, 255.0}};
    }
};

struct BackboneSpec {
    BackboneFamily family = BackboneFamily::tiny;
    int input_size = 64;                 // square, 3 channels
    std::vector<int> stage_widths = {4, 8, 16, 32};  // tiny only: conv3x3 + ReLU + pool per stage

    /// conv widths with pools marked as 0.
    std::vector<int> layout() const;
    int downsampling() const;
    int output_channels() const;
    int output_size() const { return input_size / downsampling(); }
    int feature_dimension() const { return output_channels() * output_size() * output_size(); }
    void validate() const;
    // stage widths only describe tiny backbones
    bool operator==(const BackboneSpec& o) const {
        return family == o.family && input_size == o.input_size &&
               (family == BackboneFamily::vgg16 || stage_widths == o.stage_widths);
    }
};

struct HeadSpec {
    int hidden_units = 2048;
    double dropout = 0.5;
    int outputs = 12;
    OutputActivation activation = OutputActivation::saturating_relu;
    double max_norm = 2.0;
    double l2 = 0.0;

    void validate() const;
    bool operator==(const HeadSpec&) const = default;
};

/// Closed-form trainable parameter count.
std::int64_t parameter_count(const BackboneSpec& backbone, const HeadSpec& head);

// ---------------------------------------------------------------------------
// Tensors and layers
// ---------------------------------------------------------------------------

struct FeatureShape {
    int channels = 0;
    int height = 1;
    int width = 1;

    int pixels() const { return height * width; }
    int size() const { return channels * height * width; }
    bool operator==(const FeatureShape&) const = default;
};

/**
 * A batch of feature maps stored channels-first per pixel: `data` is
 * (channels, batch * height * width) with column b * H * W + y * W + x.
 * Flat features are the special case height = width = 1.
 */
template <typename Scalar>
struct Tensor {
    Mat<Scalar> data;
    FeatureShape shape;
    int batch = 0;
};

template <typename Scalar>
struct Parameter {
    std::string name;
    Mat<Scalar> value;
    Mat<Scalar> grad;
    bool backbone = false;
    bool frozen = false;
};

template <typename Scalar>
void he_initialize(Mat<Scalar>& weights, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / fan_in);
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
        weights(k) = static_cast<Scalar>(rng.normal(0.0, stddev));
    }
}

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
template <typename Scalar>
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels, std::string name)
        : in_channels_(in_channels), out_channels_(out_channels) {
        weight_.name = name + ".weight";
        weight_.value = Mat<Scalar>::Zero(out_channels, 9 * in_channels);
        weight_.backbone = true;
        bias_.name = name + ".bias";
        bias_.value = Mat<Scalar>::Zero(out_channels, 1);
        bias_.backbone = true;
    }

    void initialize(Rng& rng) {
        he_initialize(weight_.value, 9 * in_channels_, rng);
        bias_.value.setZero();
    }

    FeatureShape output_shape(const FeatureShape& in) const { return {out_channels_, in.height, in.width}; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool /*training*/, Rng& /*rng*/) {
        in_shape_ = in.shape;
        batch_ = in.batch;
        im2col(in);
        Tensor<Scalar> out{Mat<Scalar>(out_channels_, cols_.cols()), output_shape(in.shape), in.batch};
        out.data.noalias() = weight_.value * cols_;
        out.data.colwise() += bias_.value.col(0);
        return out;
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!weight_.frozen) {
            weight_.grad.noalias() = grad_out * cols_.transpose();
            bias_.grad = grad_out.rowwise().sum();
        }
        if (!need_input_grad) {
            return {};
        }
        Mat<Scalar> grad_cols(cols_.rows(), cols_.cols());
        grad_cols.noalias() = weight_.value.transpose() * grad_out;
        return col2im(grad_cols);
    }

    template <typename F>
    void for_each_parameter(F&& f) {
        f(weight_);
        f(bias_);
    }

private:
    using Strided = Eigen::Map<Mat<Scalar>, 0, Eigen::OuterStride<>>;
    using ConstStrided = Eigen::Map<const Mat<Scalar>, 0, Eigen::OuterStride<>>;

    // Calls f.template operator()<K>() with K = c for common channel counts so
    // the per-slot loops unroll; K = 0 means runtime c.
    template <typename F>
    void with_channels(F&& f) const {
        switch (in_channels_) {
        case 3:
            f.template operator()<3>();
            break;
        case 8:
            f.template operator()<8>();
            break;
        case 16:
            f.template operator()<16>();
            break;
        case 32:
            f.template operator()<32>();
            break;
        default:
            f.template operator()<0>();
        }
    }

    // cols row (ky * 3 + kx) * Cin + c holds input channel c at offset (ky - 1, kx - 1).
    void im2col(const Tensor<Scalar>& in) {
        const int h = in.shape.height;
        const int w = in.shape.width;
        cols_.resize(9 * in_channels_, static_cast<Eigen::Index>(in.batch) * h * w);
        const Scalar* src = in.data.data();
        Scalar* dst = cols_.data();
        with_channels([&]<int Kc>() {
            const int c = Kc > 0 ? Kc : in_channels_;
            const std::size_t k9 = 9 * static_cast<std::size_t>(c);
            for (int b = 0; b < in.batch; ++b) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        Scalar* column = dst + ((static_cast<std::size_t>(b) * h + y) * w + x) * k9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int sy = y + ky - 1;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sx = x + kx - 1;
                                Scalar* slot = column + (ky * 3 + kx) * c;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                                    for (int k = 0; k < c; ++k) {
                                        slot[k] = Scalar(0);
                                    }
                                } else {
                                    const Scalar* from = src + ((static_cast<std::size_t>(b) * h + sy) * w + sx) * c;
                                    for (int k = 0; k < c; ++k) {
                                        slot[k] = from[k];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    Mat<Scalar> col2im(const Mat<Scalar>& grad_cols) const {
        const int h = in_shape_.height;
        const int w = in_shape_.width;
        Mat<Scalar> grad_in = Mat<Scalar>::Zero(in_channels_, static_cast<Eigen::Index>(batch_) * h * w);
        const Scalar* src = grad_cols.data();
        Scalar* dst = grad_in.data();
        with_channels([&]<int Kc>() {
            const int c = Kc > 0 ? Kc : in_channels_;
            const std::size_t k9 = 9 * static_cast<std::size_t>(c);
            for (int b = 0; b < batch_; ++b) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        const Scalar* column = src + ((static_cast<std::size_t>(b) * h + y) * w + x) * k9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= h) {
                                continue;
                            }
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sx = x + kx - 1;
                                if (sx < 0 || sx >= w) {
                                    continue;
                                }
                                const Scalar* slot = column + (ky * 3 + kx) * c;
                                Scalar* target = dst + ((static_cast<std::size_t>(b) * h + sy) * w + sx) * c;
                                for (int k = 0; k < c; ++k) {
                                    target[k] += slot[k];
                                }
                            }
                        }
                    }
                }
            }
        });
        return grad_in;
    }

    int in_channels_;
    int out_channels_;
    Parameter<Scalar> weight_;
    Parameter<Scalar> bias_;
    Mat<Scalar> cols_;
    FeatureShape in_shape_;
    int batch_ = 0;
};

template <typename Scalar>
class Relu {
public:
    FeatureShape output_shape(const FeatureShape& in) const { return in; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        Tensor<Scalar> out{in.data.cwiseMax(Scalar(0)), in.shape, in.batch};
        output_ = out.data;
        return out;
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        return (output_.array() > Scalar(0)).select(grad_out, Scalar(0));
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    Mat<Scalar> output_;
};

/// 2x2 max-pool, stride 2. Ties route the gradient to the first maximum.
template <typename Scalar>
class MaxPool2 {
public:
    FeatureShape output_shape(const FeatureShape& in) const {
        return {in.channels, in.height / 2, in.width / 2};
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        in_shape_ = in.shape;
        batch_ = in.batch;
        const FeatureShape os = output_shape(in.shape);
        const int c = in.shape.channels;
        Tensor<Scalar> out{Mat<Scalar>(c, static_cast<Eigen::Index>(in.batch) * os.pixels()), os, in.batch};
        argmax_.resize(static_cast<std::size_t>(out.data.size()));
        const Scalar* src = in.data.data();
        Scalar* dst = out.data.data();
        for (int b = 0; b < in.batch; ++b) {
            for (int y = 0; y < os.height; ++y) {
                for (int x = 0; x < os.width; ++x) {
                    const std::size_t o = (static_cast<std::size_t>(b) * os.height + y) * os.width + x;
                    const Scalar* corners[4];
                    for (int k = 0; k < 4; ++k) {
                        const int sy = 2 * y + k / 2;
                        const int sx = 2 * x + k % 2;
                        corners[k] = src + ((static_cast<std::size_t>(b) * in.shape.height + sy) *
                                                in.shape.width + sx) * c;
                    }
                    // pairwise tournament, branch-free; strict > keeps the first maximum
                    for (int ch = 0; ch < c; ++ch) {
                        const Scalar v0 = corners[0][ch];
                        const Scalar v1 = corners[1][ch];
                        const Scalar v2 = corners[2][ch];
                        const Scalar v3 = corners[3][ch];
                        const bool m01 = v1 > v0;
                        const bool m23 = v3 > v2;
                        const Scalar b01 = m01 ? v1 : v0;
                        const Scalar b23 = m23 ? v3 : v2;
                        const bool upper = b23 > b01;
                        dst[o * c + ch] = upper ? b23 : b01;
                        argmax_[o * c + ch] = static_cast<std::uint8_t>(upper ? 2 + m23 : m01);
                    }
                }
            }
        }
        return out;
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        const int c = in_shape_.channels;
        const FeatureShape os = output_shape(in_shape_);
        Mat<Scalar> grad_in = Mat<Scalar>::Zero(c, static_cast<Eigen::Index>(batch_) * in_shape_.pixels());
        const Scalar* src = grad_out.data();
        Scalar* dst = grad_in.data();
        for (int b = 0; b < batch_; ++b) {
            for (int y = 0; y < os.height; ++y) {
                for (int x = 0; x < os.width; ++x) {
                    const std::size_t o = (static_cast<std::size_t>(b) * os.height + y) * os.width + x;
                    for (int ch = 0; ch < c; ++ch) {
                        const int k = argmax_[o * c + ch];
                        const int sy = 2 * y + k / 2;
                        const int sx = 2 * x + k % 2;
                        dst[((static_cast<std::size_t>(b) * in_shape_.height + sy) * in_shape_.width + sx) * c + ch] +=
                            src[o * c + ch];
                    }
                }
            }
        }
        return grad_in;
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    std::vector<std::uint8_t> argmax_;
    FeatureShape in_shape_;
    int batch_ = 0;
};

/// Reinterprets (C, B*H*W) as (C*H*W, B); each sample's block is contiguous.
template <typename Scalar>
class Flatten {
public:
    FeatureShape output_shape(const FeatureShape& in) const { return {in.size(), 1, 1}; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        in_shape_ = in.shape;
        const FeatureShape os = output_shape(in.shape);
        Tensor<Scalar> out{Eigen::Map<const Mat<Scalar>>(in.data.data(), os.channels, in.batch), os, in.batch};
        return out;
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        return Eigen::Map<const Mat<Scalar>>(grad_out.data(), in_shape_.channels,
                                             grad_out.cols() * in_shape_.pixels());
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    FeatureShape in_shape_;
};

template <typename Scalar>
class Dense {
public:
    Dense(int inputs, int outputs, std::string name) : inputs_(inputs) {
        weight_.name = name + ".weight";
        weight_.value = Mat<Scalar>::Zero(outputs, inputs);
        bias_.name = name + ".bias";
        bias_.value = Mat<Scalar>::Zero(outputs, 1);
    }

    void initialize(Rng& rng) {
        he_initialize(weight_.value, inputs_, rng);
        bias_.value.setZero();
    }

    FeatureShape output_shape(const FeatureShape&) const {
        return {static_cast<int>(weight_.value.rows()), 1, 1};
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        input_ = in.data;
        Tensor<Scalar> out{Mat<Scalar>(weight_.value.rows(), in.data.cols()), output_shape(in.shape), in.batch};
        out.data.noalias() = weight_.value * in.data;
        out.data.colwise() += bias_.value.col(0);
        return out;
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!weight_.frozen) {
            weight_.grad.noalias() = grad_out * input_.transpose();
            if (l2_ > 0.0) {
                weight_.grad += Scalar(2.0 * l2_) * weight_.value;
            }
            bias_.grad = grad_out.rowwise().sum();
        }
        if (!need_input_grad) {
            return {};
        }
        Mat<Scalar> grad_in(weight_.value.cols(), grad_out.cols());
        grad_in.noalias() = weight_.value.transpose() * grad_out;
        return grad_in;
    }

    template <typename F>
    void for_each_parameter(F&& f) {
        f(weight_);
        f(bias_);
    }

    Parameter<Scalar>& weight() { return weight_; }
    const Parameter<Scalar>& weight() const { return weight_; }
    Parameter<Scalar>& bias() { return bias_; }
    void set_l2(double l2) { l2_ = l2; }

private:
    int inputs_;
    double l2_ = 0.0;
    Parameter<Scalar> weight_;
    Parameter<Scalar> bias_;
    Mat<Scalar> input_;
};

/// Inverted dropout; identity outside training.
template <typename Scalar>
class Dropout {
public:
    explicit Dropout(double rate) : rate_(rate) {}

    FeatureShape output_shape(const FeatureShape& in) const { return in; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool training, Rng& rng) {
        active_ = training && rate_ > 0.0;
        if (!active_) {
            return in;
        }
        const Scalar keep_scale = Scalar(1.0 / (1.0 - rate_));
        mask_.resize(in.data.rows(), in.data.cols());
        for (Eigen::Index k = 0; k < mask_.size(); ++k) {
            mask_(k) = rng.uniform() < rate_ ? Scalar(0) : keep_scale;
        }
        return {(in.data.array() * mask_.array()).matrix(), in.shape, in.batch};
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        return active_ ? Mat<Scalar>((grad_out.array() * mask_.array()).matrix()) : grad_out;
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    double rate_;
    bool active_ = false;
    Mat<Scalar> mask_;
};

template <typename Scalar>
class Softmax {
public:
    FeatureShape output_shape(const FeatureShape& in) const { return in; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        output_ = softmax_columns(in.data);
        return {output_, in.shape, in.batch};
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        const auto dot = (grad_out.array() * output_.array()).colwise().sum();
        return (output_.array() * (grad_out.array().rowwise() - dot)).matrix();
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    Mat<Scalar> output_;
};

/// Output clamp to [0, 1]; gradient 0 outside (0, 1) and at the kinks.
template <typename Scalar>
class SaturatingRelu {
public:
    FeatureShape output_shape(const FeatureShape& in) const { return in; }

    Tensor<Scalar> forward(const Tensor<Scalar>& in, bool, Rng&) {
        mask_ = (in.data.array() > Scalar(0) && in.data.array() < Scalar(1)).template cast<Scalar>();
        return {saturating_relu(in.data.array()).matrix(), in.shape, in.batch};
    }

    Mat<Scalar> backward(const Mat<Scalar>& grad_out, bool need_input_grad) {
        if (!need_input_grad) {
            return {};
        }
        return (grad_out.array() * mask_.array()).matrix();
    }

    template <typename F>
    void for_each_parameter(F&&) {}

private:
    Mat<Scalar> mask_;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/**
 * Backbone (conv stages) + head (dense 2048 with max-norm, dropout, dense n,
 * output activation). Forward caches what backward needs, so a model is not
 * safe for concurrent use.
 */
template <typename Scalar>
class Model {
    static_assert(std::is_floating_point_v<Scalar>, "non floating-point scalar type");

public:
    using Layer = std::variant<Conv2d<Scalar>, Relu<Scalar>, MaxPool2<Scalar>, Flatten<Scalar>,
                               Dense<Scalar>, Dropout<Scalar>, Softmax<Scalar>, SaturatingRelu<Scalar>>;

    Model(BackboneSpec backbone, HeadSpec head, std::uint64_t seed)
        : backbone_(std::move(backbone)), head_(std::move(head)), dropout_rng_(stream_seed(seed, 1)) {
        backbone_.validate();
        head_.validate();
        int channels = 3;
        int conv = 0;
        for (int width : backbone_.layout()) {
            if (width == 0) {
                layers_.emplace_back(MaxPool2<Scalar>{});
            } else {
                layers_.emplace_back(Conv2d<Scalar>(channels, width, "conv" + std::to_string(++conv)));
                layers_.emplace_back(Relu<Scalar>{});
                channels = width;
            }
        }
        layers_.emplace_back(Flatten<Scalar>{});
        backbone_layers_ = layers_.size();
        hidden_index_ = layers_.size();
        layers_.emplace_back(Dense<Scalar>(backbone_.feature_dimension(), head_.hidden_units, "hidden"));
        std::get<Dense<Scalar>>(layers_.back()).set_l2(head_.l2);
        layers_.emplace_back(Relu<Scalar>{});
        layers_.emplace_back(Dropout<Scalar>(head_.dropout));
        layers_.emplace_back(Dense<Scalar>(head_.hidden_units, head_.outputs, "output"));
        if (head_.activation == OutputActivation::softmax) {
            layers_.emplace_back(Softmax<Scalar>{});
        } else {
            layers_.emplace_back(SaturatingRelu<Scalar>{});
        }
        initialize(seed);
    }

    /// He-normal weights, zero biases; backbone and head draw separate streams.
    void initialize(std::uint64_t seed) {
        Rng backbone_rng(stream_seed(seed, 2));
        Rng head_rng(stream_seed(seed, 3));
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Rng& rng = i < backbone_layers_ ? backbone_rng : head_rng;
            std::visit(
                [&](auto& layer) {
                    if constexpr (requires { layer.initialize(rng); }) {
                        layer.initialize(rng);
                    }
                },
                layers_[i]);
        }
    }

    void reinitialize_head(std::uint64_t seed) {
        Rng head_rng(stream_seed(seed, 3));
        for (std::size_t i = backbone_layers_; i < layers_.size(); ++i) {
            std::visit(
                [&](auto& layer) {
                    if constexpr (requires { layer.initialize(head_rng); }) {
                        layer.initialize(head_rng);
                    }
                },
                layers_[i]);
        }
    }

    void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(stream_seed(seed, 1)); }

    const BackboneSpec& backbone() const { return backbone_; }
    const HeadSpec& head() const { return head_; }
    FeatureShape input_shape() const { return {3, backbone_.input_size, backbone_.input_size}; }

    Tensor<Scalar> forward(const Tensor<Scalar>& input, bool training) {
        return run(input, training, layers_.size());
    }

    /// Flattened output of the last convolutional stage, inference mode.
    Tensor<Scalar> forward_features(const Tensor<Scalar>& input) {
        return run(input, false, backbone_layers_);
    }

    /// Fills parameter gradients from d loss / d output. Propagation stops at
    /// the lowest layer that still has trainable parameters.
    void backward(const Mat<Scalar>& grad_output) {
        std::size_t lowest = layers_.size();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            bool trainable = false;
            std::visit([&](auto& layer) {
                layer.for_each_parameter([&](Parameter<Scalar>& p) { trainable = trainable || !p.frozen; });
            }, layers_[i]);
            if (trainable) {
                lowest = i;
                break;
            }
        }
        Mat<Scalar> grad = grad_output;
        for (std::size_t i = layers_.size(); i-- > lowest;) {
            const bool need_input_grad = i > lowest;
            grad = std::visit([&](auto& layer) { return layer.backward(grad, need_input_grad); }, layers_[i]);
        }
    }

    template <typename F>
    void for_each_parameter(F&& f) {
        for (auto& layer : layers_) {
            std::visit([&](auto& l) { l.for_each_parameter(f); }, layer);
        }
    }

    std::vector<Parameter<Scalar>*> parameters() {
        std::vector<Parameter<Scalar>*> out;
        for_each_parameter([&](Parameter<Scalar>& p) { out.push_back(&p); });
        return out;
    }

    std::vector<const Parameter<Scalar>*> parameters() const {
        std::vector<const Parameter<Scalar>*> out;
        const_cast<Model*>(this)->for_each_parameter([&](Parameter<Scalar>& p) { out.push_back(&p); });
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t total = 0;
        for_each_parameter([&](Parameter<Scalar>& p) { total += p.value.size(); });
        return total;
    }

    void set_backbone_frozen(bool frozen) {
        for_each_parameter([&](Parameter<Scalar>& p) {
            if (p.backbone) {
                p.frozen = frozen;
            }
        });
    }

    Dense<Scalar>& hidden_layer() { return std::get<Dense<Scalar>>(layers_[hidden_index_]); }
    Dense<Scalar>& output_layer() { return std::get<Dense<Scalar>>(layers_[layers_.size() - 2]); }

    const InputTransform& input_transform() const { return input_transform_; }
    void set_input_transform(InputTransform t) { input_transform_ = std::move(t); }

    /// Enforces the head's max-norm constraint on the hidden dense layer.
    void constrain() { apply_max_norm(hidden_layer().weight().value, head_.max_norm); }

private:
    Tensor<Scalar> run(const Tensor<Scalar>& input, bool training, std::size_t end) {
        if (!(input.shape == input_shape())) {
            throw std::invalid_argument("input shape does not match the model's input size");
        }
        Tensor<Scalar> x = input;
        if (!input_transform_.identity()) {
            const auto& t = input_transform_;
            for (int c = 0; c < 3; ++c) {
                x.data.row(c) = (input.data.row(t.order[c]).array() - Scalar(t.mean[c])) * Scalar(t.scale[c]);
            }
        }
        for (std::size_t i = 0; i < end; ++i) {
            x = std::visit([&](auto& layer) { return layer.forward(x, training, dropout_rng_); }, layers_[i]);
        }
        return x;
    }

    BackboneSpec backbone_;
    HeadSpec head_;
    std::vector<Layer> layers_;
    std::size_t backbone_layers_ = 0;
    std::size_t hidden_index_ = 0;
    Rng dropout_rng_;
    InputTransform input_transform_;
};

template <typename Scalar = float>
Model<Scalar> build_model(const BackboneSpec& backbone, const HeadSpec& head, std::uint64_t seed = 0) {
    return Model<Scalar>(backbone, head, seed);
}

/// Copies backbone weights between models with identical backbones.
template <typename Scalar>
void copy_backbone(const Model<Scalar>& from, Model<Scalar>& to) {
    if (!(from.backbone() == to.backbone())) {
        throw std::invalid_argument("backbone specs differ; cannot transfer weights");
    }
    auto src = from.parameters();
    auto dst = to.parameters();
    for (std::size_t k = 0; k < src.size() && src[k]->backbone; ++k) {
        dst[k]->value = src[k]->value;
    }
    to.set_input_transform(from.input_transform());
}

/// Stacks 8-bit interleaved RGB images (all `size` x `size`) into a batch
/// with pixel values scaled to [0, 1].
template <typename Scalar>
Tensor<Scalar> images_to_tensor(std::span<const std::uint8_t* const> images, int size) {
    const Eigen::Index pixels = static_cast<Eigen::Index>(size) * size;
    Tensor<Scalar> t{Mat<Scalar>(3, pixels * static_cast<Eigen::Index>(images.size())), {3, size, size},
                     static_cast<int>(images.size())};
    const Scalar scale = Scalar(1) / Scalar(255);
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Eigen::Map<const Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic>> raw(images[b], 3, pixels);
        t.data.middleCols(static_cast<Eigen::Index>(b) * pixels, pixels) = raw.template cast<Scalar>() * scale;
    }
    return t;
}

/// Feature rows (one per image) from the frozen backbone.
template <typename Scalar>
Mat<Scalar> extract_features(Model<Scalar>& model, std::span<const std::uint8_t* const> images,
                             int batch_size = 64) {
    const int size = model.backbone().input_size;
    Mat<Scalar> features(static_cast<Eigen::Index>(images.size()), model.backbone().feature_dimension());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, images.size() - start);
        const auto batch = images_to_tensor<Scalar>(images.subspan(start, count), size);
        const auto out = model.forward_features(batch);
        features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
            out.data.transpose();
    }
    return features;
}

}  // namespace astropretext

#endif  // ASTROPRETEXT_NETSPEC_HPP
