#!/usr/bin/env python3
"""Convert torchvision ImageNet weights into sapnet weight archives.

    python3 tools/convert_torchvision.py resnet101 resnet101.sapnet
    python3 tools/convert_torchvision.py vgg16 vgg16.sapnet

ResNet-101 batch norms are folded into the preceding convolution (eval-mode statistics).
Use the result with seg.encoder=pretrained_resnet101, seg.encoder_blocks=3,4,23,3,
seg.encoder_width=64 and loss.extractor=pretrained, loss.vgg_width=64.
Requires torch and torchvision.
"""

import argparse
import struct
import sys

MAGIC = b"SAPNETAR"
VERSION = 1


def write_archive(path, tensors):
    """tensors: dict key -> (shape tuple, flat list of floats)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for key in sorted(tensors, key=lambda k: k.encode()):
            shape, values = tensors[key]
            kb = key.encode()
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(struct.pack("<BI", 0, len(shape)))
            f.write(struct.pack("<%di" % len(shape), *shape))
            f.write(struct.pack("<%dd" % len(values), *values))


def as_entry(t):
    t = t.detach().double().contiguous()
    return tuple(t.shape), t.flatten().tolist()


def fold(conv, bn):
    import torch

    scale = bn.weight / torch.sqrt(bn.running_var + bn.eps)
    weight = conv.weight * scale.reshape(-1, 1, 1, 1)
    bias = bn.bias - bn.running_mean * scale
    if conv.bias is not None:
        bias = bias + conv.bias * scale
    return weight, bias


def convert_resnet101(random_init=False):
    import torchvision

    weights = None if random_init else torchvision.models.ResNet101_Weights.IMAGENET1K_V1
    net = torchvision.models.resnet101(weights=weights).eval()
    out = {}

    def put(prefix, conv, bn):
        w, b = fold(conv, bn)
        out[prefix + ".weight"] = as_entry(w)
        out[prefix + ".bias"] = as_entry(b)

    put("encoder.stem", net.conv1, net.bn1)
    for s, layer in enumerate([net.layer1, net.layer2, net.layer3, net.layer4], start=1):
        for b, block in enumerate(layer):
            p = "encoder.layer%d.%d" % (s, b)
            put(p + ".conv1", block.conv1, block.bn1)
            put(p + ".conv2", block.conv2, block.bn2)
            put(p + ".conv3", block.conv3, block.bn3)
            if block.downsample is not None:
                put(p + ".downsample", block.downsample[0], block.downsample[1])
    return out


def convert_vgg16(random_init=False):
    import torch
    import torchvision

    weights = None if random_init else torchvision.models.VGG16_Weights.IMAGENET1K_V1
    net = torchvision.models.vgg16(weights=weights).eval()
    out = {}
    convs = [m for m in net.features if isinstance(m, torch.nn.Conv2d)]
    for i, conv in enumerate(convs, start=1):
        out["conv%d.weight" % i] = as_entry(conv.weight)
        out["conv%d.bias" % i] = as_entry(conv.bias)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("model", choices=["resnet101", "vgg16"])
    ap.add_argument("output")
    ap.add_argument("--random-init", action="store_true", help="skip the download (layout checks only)")
    args = ap.parse_args()
    try:
        convert = convert_resnet101 if args.model == "resnet101" else convert_vgg16
        tensors = convert(args.random_init)
    except ImportError as e:
        sys.exit("torch and torchvision are required: %s" % e)
    write_archive(args.output, tensors)
    print("wrote %d tensors to %s" % (len(tensors), args.output))


if __name__ == "__main__":
    main()
