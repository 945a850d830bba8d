#include "astropretext/checkpoint.hpp"
#include "astropretext/netspec.hpp"
#include "astropretext/random.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace astropretext;

namespace {

template <typename Scalar>
Tensor<Scalar> random_images(int batch, int size, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<Scalar> t;
    t.shape = {3, size, size};
    t.batch = batch;
    t.data.resize(3, static_cast<Eigen::Index>(batch) * size * size);
    for (Eigen::Index k = 0; k < t.data.size(); ++k) {
        t.data(k) = Scalar(rng.uniform());
    }
    return t;
}

Mat<double> one_hot(const std::vector<int>& labels, int classes) {
    Mat<double> t = Mat<double>::Zero(classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t k = 0; k < labels.size(); ++k) {
        t(labels[k], static_cast<Eigen::Index>(k)) = 1.0;
    }
    return t;
}

}  // namespace

TEST_CASE("saturating relu: truth table") {
    CHECK(saturating_relu(-0.5) == 0.0);
    CHECK(saturating_relu(0.37) == 0.37);
    CHECK(saturating_relu(1.7) == 1.0);
    Eigen::ArrayXd x(3);
    x << -0.5, 0.37, 1.7;
    const Eigen::ArrayXd y = saturating_relu(x);
    CHECK(y(0) == 0.0);
    CHECK(y(1) == 0.37);
    CHECK(y(2) == 1.0);
}

TEST_CASE("max-norm: examples") {
    Mat<double> unit(1, 3);
    unit << 0.6, 0.8, 0.0;
    CHECK(max_norm(unit, 2.0) == unit);
    Mat<double> big(1, 2);
    big << 6.0, 8.0;
    const Mat<double> c = max_norm(big, 2.0);
    CHECK(c.norm() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(c(0) / c(1) - 0.75) < 1e-12);
    CHECK(max_norm(Mat<double>::Zero(4, 5), 2.0).isZero());
    CHECK_THROWS(max_norm(unit, 0.0));
}

TEST_CASE("max-norm: rows bounded, idempotent, short rows untouched") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Mat<double> w(30, 17);
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            w(k) = rng.normal(0.0, rng.uniform(0.05, 1.5));
        }
        const Mat<double> once = max_norm(w, 2.0);
        const Mat<double> twice = max_norm(once, 2.0);
        CHECK((once - twice).cwiseAbs().maxCoeff() == 0.0);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            CHECK(once.row(r).norm() <= 2.0 + 1e-9);
            if (w.row(r).norm() <= 2.0) {
                CHECK(once.row(r) == w.row(r));
            }
        }
    }
}

TEST_CASE("softmax: columns sum to one, stable for large logits") {
    Mat<double> logits(3, 4);
    logits << 1, 1000, -5, 0, 2, 1001, -5, 0, 3, 999, 60, 0;
    const Mat<double> p = softmax_columns(logits);
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        CHECK(p.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(p.allFinite());
    CHECK(p(0, 3) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("loss: examples and epsilon clamp") {
    Mat<double> a(2, 2);
    a << 0.1, 0.2, 0.3, 0.4;
    CHECK(loss(LossKind::mean_absolute_error, a, a) == 0.0);
    Mat<double> p(1, 1), t(1, 1);
    p << 0.5;
    t << 0.6;
    CHECK(loss(LossKind::mean_absolute_error, p, t) == doctest::Approx(0.1).epsilon(1e-12));
    Mat<double> probs(3, 1);
    probs << 1.0, 0.0, 0.0;
    CHECK(loss(LossKind::cross_entropy, probs, one_hot({0}, 3)) == 0.0);
    const double clamped = loss(LossKind::cross_entropy, probs, one_hot({1}, 3));
    CHECK(clamped == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
    CHECK_THROWS(loss(LossKind::mean_absolute_error, a, Mat<double>(3, 2)));
}

TEST_CASE("model: tiny backbone shape and output range") {
    BackboneSpec b;
    b.stage_widths = {16, 32};
    HeadSpec h;
    h.hidden_units = 64;
    Model<float> m(b, h, 0);
    const auto in = random_images<float>(5, 64, 2);
    const auto out = m.forward(in, false);
    CHECK(out.data.rows() == 12);
    CHECK(out.data.cols() == 5);
    CHECK(out.data.minCoeff() >= 0.0f);
    CHECK(out.data.maxCoeff() <= 1.0f);
    CHECK(m.parameter_count() == parameter_count(b, h));
}

TEST_CASE("model: softmax head rows sum to one") {
    HeadSpec h;
    h.hidden_units = 32;
    h.outputs = 3;
    h.activation = OutputActivation::softmax;
    Model<float> m(BackboneSpec{}, h, 4);
    const auto out = m.forward(random_images<float>(7, 64, 3), true);
    for (Eigen::Index j = 0; j < out.data.cols(); ++j) {
        CHECK(std::abs(out.data.col(j).sum() - 1.0f) <= 1e-6f);
    }
}

TEST_CASE("model: vgg16 parameter count equals the closed form") {
    // 13 conv layers of 3x3 kernels
    const int widths[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
    std::int64_t conv = 0;
    std::int64_t in = 3;
    for (int w : widths) {
        conv += 9 * in * w + w;
        in = w;
    }
    CHECK(conv == 14714688);
    for (int size : {32, 224}) {
        BackboneSpec b;
        b.family = BackboneFamily::vgg16;
        b.input_size = size;
        HeadSpec h;
        h.outputs = 2;
        const std::int64_t features = 512LL * (size / 32) * (size / 32);
        const std::int64_t expected = conv + features * 2048 + 2048 + 2048 * 2 + 2;
        CHECK(parameter_count(b, h) == expected);
        if (size == 32) {
            Model<float> m(b, h, 0);
            CHECK(m.parameter_count() == expected);
        }
    }
    BackboneSpec b224;
    b224.family = BackboneFamily::vgg16;
    b224.input_size = 224;
    CHECK(parameter_count(b224, HeadSpec{.outputs = 2}) == 66101058);
}

TEST_CASE("model: incompatible input size is rejected") {
    BackboneSpec b;
    b.input_size = 60;
    CHECK_THROWS_AS(Model<float>(b, HeadSpec{}, 0), std::invalid_argument);
    b.family = BackboneFamily::vgg16;
    b.input_size = 48;
    CHECK_THROWS(b.validate());
}

TEST_CASE("model: same seed gives identical weights, different seeds differ") {
    Model<float> a(BackboneSpec{}, HeadSpec{.hidden_units = 16}, 9);
    Model<float> b(BackboneSpec{}, HeadSpec{.hidden_units = 16}, 9);
    Model<float> c(BackboneSpec{}, HeadSpec{.hidden_units = 16}, 10);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    const auto pc = c.parameters();
    CHECK(pa[0]->value == pb[0]->value);
    CHECK_FALSE(pa[0]->value == pc[0]->value);
}

namespace {

// Central differences against backprop for every parameter entry.
double worst_gradient_error(Model<double>& m, const Tensor<double>& in, const Mat<double>& targets,
                            LossKind kind) {
    const auto out = m.forward(in, true);
    m.backward(loss_gradient(kind, out.data, targets));
    double worst = 0.0;
    const double h = 1e-6;
    for (auto* p : m.parameters()) {
        for (Eigen::Index k = 0; k < p->value.size(); ++k) {
            const double keep = p->value(k);
            p->value(k) = keep + h;
            const double up = loss(kind, m.forward(in, false).data, targets);
            p->value(k) = keep - h;
            const double down = loss(kind, m.forward(in, false).data, targets);
            p->value(k) = keep;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad(k);
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("gradients: backprop matches finite differences (softmax, cross-entropy)") {
    BackboneSpec b;
    b.input_size = 8;
    b.stage_widths = {3, 4};
    HeadSpec h;
    h.hidden_units = 6;
    h.outputs = 3;
    h.dropout = 0.0;
    h.activation = OutputActivation::softmax;
    Model<double> m(b, h, 5);
    const auto in = random_images<double>(4, 8, 6);
    const double worst = worst_gradient_error(m, in, one_hot({0, 2, 1, 2}, 3), LossKind::cross_entropy);
    CHECK(worst < 1e-4);
}

TEST_CASE("gradients: backprop matches finite differences (saturating relu, MAE)") {
    BackboneSpec b;
    b.input_size = 8;
    b.stage_widths = {2, 3};
    HeadSpec h;
    h.hidden_units = 5;
    h.outputs = 12;
    h.dropout = 0.0;
    Model<double> m(b, h, 1);
    // lift outputs into the linear region, away from the kinks at 0 and 1
    m.output_layer().bias().value.setConstant(0.5);
    const auto in = random_images<double>(3, 8, 2);
    Mat<double> targets(12, 3);
    Rng rng(4);
    for (Eigen::Index k = 0; k < targets.size(); ++k) {
        targets(k) = rng.uniform() < 0.5 ? 0.05 : 0.95;
    }
    const double worst = worst_gradient_error(m, in, targets, LossKind::mean_absolute_error);
    CHECK(worst < 1e-4);
}

TEST_CASE("gradients: a small step lowers the batch loss") {
    BackboneSpec b;
    b.input_size = 16;
    b.stage_widths = {4, 8};
    HeadSpec h;
    h.hidden_units = 32;
    h.outputs = 2;
    h.dropout = 0.0;
    h.activation = OutputActivation::softmax;
    Model<double> m(b, h, 3);
    const auto in = random_images<double>(8, 16, 9);
    const Mat<double> t = one_hot({0, 1, 0, 1, 1, 0, 0, 1}, 2);
    const double before = loss(LossKind::cross_entropy, m.forward(in, true).data, t);
    m.backward(loss_gradient(LossKind::cross_entropy, m.forward(in, true).data, t));
    for (auto* p : m.parameters()) {
        p->value -= 1e-5 * p->grad;
    }
    const double after = loss(LossKind::cross_entropy, m.forward(in, false).data, t);
    CHECK(after < before);
}

TEST_CASE("gradients: frozen backbone receives no update signal") {
    Model<float> m(BackboneSpec{.input_size = 16, .stage_widths = {2, 4}}, HeadSpec{.hidden_units = 8}, 0);
    m.set_backbone_frozen(true);
    int frozen = 0;
    for (auto* p : m.parameters()) {
        frozen += p->frozen;
        CHECK(p->frozen == p->backbone);
    }
    CHECK(frozen == 4);
}

TEST_CASE("features: shape and determinism") {
    Model<float> m(BackboneSpec{}, HeadSpec{.hidden_units = 8}, 2);
    std::vector<std::uint8_t> img(64 * 64 * 3);
    Rng rng(1);
    for (auto& v : img) {
        v = static_cast<std::uint8_t>(rng.below(256));
    }
    std::vector<std::uint8_t> other(img.rbegin(), img.rend());
    const std::vector<const std::uint8_t*> batch = {img.data(), other.data(), img.data()};
    const Mat<float> f = extract_features(m, std::span(batch), 2);
    CHECK(f.rows() == 3);
    CHECK(f.cols() == m.backbone().feature_dimension());
    CHECK(f.row(0) == f.row(2));
    CHECK_FALSE(f.row(0) == f.row(1));
}

TEST_CASE("checkpoint: save and load restore every tensor exactly") {
    const auto dir = testing::scratch_dir("ckpt");
    Model<float> m(BackboneSpec{.input_size = 32}, HeadSpec{.hidden_units = 16}, 12);
    save_checkpoint(dir, m, Pretraining::magnitudes, 12);
    CheckpointInfo info;
    Model<float> back = load_checkpoint<float>(dir, &info);
    CHECK(info.provenance == Pretraining::magnitudes);
    CHECK(info.backbone == m.backbone());
    const auto a = m.parameters();
    const auto b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k]->value == b[k]->value);
    }
    Model<float> other(BackboneSpec{.input_size = 32, .stage_widths = {4, 8}}, HeadSpec{.hidden_units = 16}, 0);
    CHECK_THROWS_AS(load_backbone(dir, other), CheckpointError);
}

TEST_CASE("input transform: caffe reorders channels and subtracts means on the 0..255 scale") {
    BackboneSpec b{.input_size = 8, .stage_widths = {2, 3}};
    Model<double> plain(b, HeadSpec{.hidden_units = 4}, 1);
    Model<double> caffe(b, HeadSpec{.hidden_units = 4}, 1);
    caffe.set_input_transform(InputTransform::caffe());
    CHECK(plain.input_transform().identity());
    CHECK_FALSE(caffe.input_transform().identity());

    const auto in = random_images<double>(2, 8, 3);
    // hand-made BGR, mean-subtracted copy fed to the plain model must match
    Tensor<double> manual = in;
    const double means[] = {103.939, 116.779, 123.68};
    for (int c = 0; c < 3; ++c) {
        manual.data.row(c) = in.data.row(2 - c).array() * 255.0 - means[c];
    }
    const Mat<double> a = caffe.forward_features(in).data;
    const Mat<double> e = plain.forward_features(manual).data;
    CHECK((a - e).cwiseAbs().maxCoeff() <= 1e-9 * e.cwiseAbs().maxCoeff());
}

TEST_CASE("checkpoint: preprocessing is stored and travels with the backbone") {
    const auto dir = testing::scratch_dir("ckpt-pre");
    BackboneSpec b{.input_size = 16, .stage_widths = {2, 4}};
    Model<float> m(b, HeadSpec{.hidden_units = 8}, 3);
    m.set_input_transform(InputTransform::caffe());
    save_checkpoint(dir, m, Pretraining::imagenet, 3);
    CHECK(read_checkpoint_info(dir).preprocessing == InputTransform::caffe());
    Model<float> other(b, HeadSpec{.hidden_units = 16, .outputs = 2, .activation = OutputActivation::softmax}, 9);
    load_backbone(dir, other);
    CHECK(other.input_transform().name == "caffe");
    Model<float> target(b, HeadSpec{.hidden_units = 8}, 0);
    copy_backbone(other, target);
    CHECK(target.input_transform() == InputTransform::caffe());
}

TEST_CASE("backbone spec: stage widths only matter for tiny backbones") {
    BackboneSpec a{.family = BackboneFamily::vgg16, .input_size = 64, .stage_widths = {}};
    BackboneSpec b{.family = BackboneFamily::vgg16, .input_size = 64};
    CHECK(a == b);
    BackboneSpec c{.input_size = 64, .stage_widths = {4, 8}};
    BackboneSpec d{.input_size = 64, .stage_widths = {4, 16}};
    CHECK_FALSE(c == d);
}
