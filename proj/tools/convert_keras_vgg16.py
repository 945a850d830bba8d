#!/usr/bin/env python3
"""Convert Keras VGG16 convolution weights into an astropretext checkpoint.

    convert_keras_vgg16.py --out ckpt/imagenet --input-size 64
    convert_keras_vgg16.py --out ckpt/imagenet --weights vgg16_notop.h5

With no --weights, keras downloads the ImageNet weights. Only the 13 conv
layers are written; the head is rebuilt by each training scheme.

--random-seed replaces the weights with seeded random ones and --reference N
stores N random images with the Keras features for them, so the C++ side can
check that it computes the same thing.
"""

import argparse
import json
import os
import struct
import sys

import numpy as np


def build(input_size, weights):
    os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "2")
    from tensorflow import keras

    source = None if weights in (None, "none") else weights
    return keras.applications.VGG16(include_top=False, weights=source,
                                    input_shape=(input_size, input_size, 3))


def conv_layers(model):
    return [layer for layer in model.layers if layer.__class__.__name__ == "Conv2D"]


def randomize(model, seed):
    rng = np.random.default_rng(seed)
    for layer in conv_layers(model):
        kernel, bias = layer.get_weights()
        fan_in = kernel.shape[0] * kernel.shape[1] * kernel.shape[2]
        layer.set_weights([rng.normal(0.0, np.sqrt(2.0 / fan_in), kernel.shape).astype(np.float32),
                           rng.normal(0.0, 0.1, bias.shape).astype(np.float32)])


def write_weights(path, model):
    layers = conv_layers(model)
    if len(layers) != 13:
        sys.exit(f"expected 13 conv layers, found {len(layers)}")
    with open(path, "wb") as out:
        out.write(b"APTW")
        out.write(struct.pack("<II", 1, 2 * len(layers)))

        def tensor(name, rows, cols, values):
            out.write(struct.pack("<I", len(name)))
            out.write(name.encode())
            out.write(struct.pack("<IIB", rows, cols, 4))
            out.write(np.ascontiguousarray(values, dtype="<f4").tobytes())

        for k, layer in enumerate(layers, start=1):
            kernel, bias = layer.get_weights()  # (3, 3, in, out)
            cin, cout = kernel.shape[2], kernel.shape[3]
            # column-major (out, 9*in) with column (ky*3+kx)*in + c is the kernel in C order
            tensor(f"conv{k}.weight", cout, 9 * cin, kernel.reshape(-1))
            tensor(f"conv{k}.bias", cout, 1, bias)


def write_model_json(path, input_size, seed):
    spec = {
        "backbone": {"family": "vgg16", "input_size": input_size, "stage_widths": []},
        "head": {"hidden_units": 2048, "dropout": 0.5, "outputs": 12, "activation": "saturating-relu",
                 "max_norm": 2.0, "l2": 0.0},
        "pretraining": "imagenet",
        "seed": seed,
        # keras "caffe" preprocessing: BGR, ImageNet channel means on 0..255
        "preprocessing": {"name": "caffe", "channel_order": [2, 1, 0],
                          "mean": [103.939 / 255.0, 116.779 / 255.0, 123.68 / 255.0],
                          "scale": [255.0, 255.0, 255.0]},
    }
    with open(path, "w") as out:
        json.dump(spec, out, indent=2)
        out.write("\n")


def write_reference(path, model, input_size, count, seed):
    from tensorflow import keras

    rng = np.random.default_rng(seed + 1)
    images = rng.integers(0, 256, size=(count, input_size, input_size, 3), dtype=np.uint8)
    x = keras.applications.vgg16.preprocess_input(images.astype(np.float32))
    features = model.predict(x, verbose=0).reshape(count, -1).astype("<f4")
    with open(path, "wb") as out:
        out.write(struct.pack("<III", count, input_size, features.shape[1]))
        out.write(images.tobytes())
        out.write(features.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="checkpoint directory to create")
    parser.add_argument("--input-size", type=int, default=224, help="image side the backbone will see")
    parser.add_argument("--weights", default="imagenet", help="'imagenet', an .h5 file, or 'none'")
    parser.add_argument("--random-seed", type=int, help="use seeded random weights instead")
    parser.add_argument("--reference", type=int, default=0, help="also write N reference images and features")
    args = parser.parse_args()

    if args.input_size < 32 or args.input_size % 32:
        sys.exit("--input-size must be a multiple of 32")
    weights = "none" if args.random_seed is not None else args.weights
    model = build(args.input_size, weights)
    if args.random_seed is not None:
        randomize(model, args.random_seed)

    os.makedirs(args.out, exist_ok=True)
    write_weights(os.path.join(args.out, "weights"), model)
    write_model_json(os.path.join(args.out, "model.json"), args.input_size, args.random_seed or 0)
    if args.reference:
        write_reference(os.path.join(args.out, "reference.bin"), model, args.input_size, args.reference,
                        args.random_seed or 0)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
