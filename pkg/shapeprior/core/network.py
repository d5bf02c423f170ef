"""Encoder-decoder with skip connections and three output branches

The shared trunk is a U-Net: ``depth`` encoder stages (two 3x3 conv + relu,
then 2x2 max-pool, channels doubling), a bottleneck, and decoder stages that
up-convolve, concatenate the matching skip and apply two 3x3 conv + relu.
The conv block of the last decoder stage is shared by all tasks; three 1x1
convolutions branch from it:

    seg      L channels (softmax over organs + background)
    dist     1 channel  (regression, no output nonlinearity)
    contour  2 channels (softmax, contour vs. not)
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .errors import InvalidInputError, InvalidShapeError
from .targets import LabelMap


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyper-parameters"""

    depth: int = 3
    base_channels: int = 8
    num_classes: int = 5

    def validate(self) -> "NetConfig":
        if self.depth < 1:
            raise InvalidInputError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise InvalidInputError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        return self

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass
class Prediction:
    """Raw outputs of the three heads"""

    seg_logits: Tensor
    dist: Tensor
    contour_logits: Tensor


class MultiHeadUNet:
    """Parameters of the three-headed network in declaration order"""

    def __init__(self, config: NetConfig, parameters: Sequence[Parameter], seed: int):
        self.config = config
        self.parameters: List[Parameter] = list(parameters)
        self.seed = seed
        self._by_name = {p.name: p for p in self.parameters}

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters))

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    def snapshot(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.parameters]

    def restore(self, values: Sequence[np.ndarray]):
        for p, v in zip(self.parameters, values):
            p.data = np.array(v, dtype=np.float64, copy=True)

    def forward(self, image, tape: Optional[Tape] = None) -> Prediction:
        return forward(self, image, tape)


def layer_shapes(config: NetConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Names and shapes of every parameter, in declaration order"""
    shapes: List[Tuple[str, Tuple[int, ...]]] = []

    def conv(name: str, c_in: int, c_out: int, k: int = 3):
        shapes.append((f"{name}.w", (c_out, c_in, k, k)))
        shapes.append((f"{name}.b", (c_out,)))

    base = config.base_channels
    c_in = 1
    for s in range(config.depth):
        ch = base * 2 ** s
        conv(f"enc{s}.conv1", c_in, ch)
        conv(f"enc{s}.conv2", ch, ch)
        c_in = ch

    ch = base * 2 ** config.depth
    conv("bottleneck.conv1", c_in, ch)
    conv("bottleneck.conv2", ch, ch)
    c_in = ch

    for s in reversed(range(config.depth)):
        ch = base * 2 ** s
        shapes.append((f"dec{s}.up.w", (c_in, ch, 2, 2)))
        shapes.append((f"dec{s}.up.b", (ch,)))
        conv(f"dec{s}.conv1", 2 * ch, ch)
        conv(f"dec{s}.conv2", ch, ch)
        c_in = ch

    conv("head.seg", base, config.num_classes, k=1)
    conv("head.dist", base, 1, k=1)
    conv("head.contour", base, 2, k=1)
    return shapes


def build(config: NetConfig, seed: int) -> MultiHeadUNet:
    """
    Create a model with fan-in scaled normal weights and zero biases

    Args:
        config: Architecture
        seed: Seed of the initialization stream

    Returns:
        A freshly initialized MultiHeadUNet
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params = []
    for name, shape in layer_shapes(config):
        if name.endswith(".b"):
            value = np.zeros(shape)
        else:
            # up-conv weights are C_in x C_out x 2 x 2; fan-in is C_in * 4
            fan_in = shape[0] * 4 if ".up." in name else int(np.prod(shape[1:]))
            value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        params.append(Parameter(value, name=name))
    return MultiHeadUNet(config, params, seed)


def _double_conv(model: MultiHeadUNet, prefix: str, x: Tensor, tape: Optional[Tape]) -> Tensor:
    x = ad.relu(ad.conv2d(x, model[f"{prefix}.conv1.w"], model[f"{prefix}.conv1.b"], tape=tape), tape=tape)
    return ad.relu(ad.conv2d(x, model[f"{prefix}.conv2.w"], model[f"{prefix}.conv2.b"], tape=tape), tape=tape)


def forward(model: MultiHeadUNet, image, tape: Optional[Tape] = None) -> Prediction:
    """
    Run the network on one image (1 x H x W) or a batch (N x 1 x H x W)

    H and W must be divisible by 2**depth.
    """
    x = ad.as_tensor(image)
    if x.ndim not in (3, 4) or x.shape[-3] != 1:
        raise InvalidShapeError(f"Expected a 1 x H x W image or N x 1 x H x W batch, got {x.shape}")
    factor = 2 ** model.config.depth
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise InvalidShapeError(f"Image extents {h} x {w} are not divisible by {factor}")

    skips = []
    for s in range(model.config.depth):
        x = _double_conv(model, f"enc{s}", x, tape)
        skips.append(x)
        x = ad.max_pool2(x, tape=tape)

    x = _double_conv(model, "bottleneck", x, tape)

    for s in reversed(range(model.config.depth)):
        x = ad.up_conv2(x, model[f"dec{s}.up.w"], model[f"dec{s}.up.b"], tape=tape)
        x = ad.concat_channels([x, skips[s]], tape=tape)
        x = _double_conv(model, f"dec{s}", x, tape)

    return Prediction(
        seg_logits=ad.conv1x1(x, model["head.seg.w"], model["head.seg.b"], tape=tape),
        dist=ad.conv1x1(x, model["head.dist.w"], model["head.dist.b"], tape=tape),
        contour_logits=ad.conv1x1(x, model["head.contour.w"], model["head.contour.b"], tape=tape),
    )


def predict_labels(seg_logits, num_classes: Optional[int] = None) -> LabelMap:
    """Per-pixel argmax over classes; ties go to the smaller class id"""
    logits = ad.as_tensor(seg_logits).data
    if logits.ndim != 3 or logits.shape[0] < 2:
        raise InvalidShapeError(f"Expected L x H x W logits with L >= 2, got {logits.shape}")
    return LabelMap(np.argmax(logits, axis=0), num_classes or logits.shape[0])


def predict(model: MultiHeadUNet, images: np.ndarray, batch_size: int = 4) -> List[Prediction]:
    """Inference without a tape, one Prediction per image (1 x H x W each)"""
    images = np.asarray(images, dtype=np.float64)
    results = []
    for start in range(0, len(images), batch_size):
        batch = forward(model, images[start:start + batch_size])
        for i in range(batch.seg_logits.shape[0]):
            results.append(Prediction(
                seg_logits=Tensor(batch.seg_logits.data[i]),
                dist=Tensor(batch.dist.data[i]),
                contour_logits=Tensor(batch.contour_logits.data[i]),
            ))
    return results
