"""Multi-scale frequency separation network.

Layout, with c = base_channels and scale k holding 2**k * c channels at 1/2**k resolution:

    image -> 3x3 conv -> FSM@1 -> down -> FSM@1/2 -> down -> FSM@1/4      (encoder)
          -> RCAB x N -> FSM@1/4                                            (bottleneck)
          -> CSFFM(theta) -> FSM@1/2 -> CSFFM(gamma) -> FSM@1 -> 3x3 conv   (decoder)
          + image                                                           (global residual)

Each FSM exposes the (hf, lf) taps of its middle octave conv. Running the same
encoder over the restored image gives the "output" taps consumed by the
consistency and contrastive losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .blocks import DownParams, RCABParams, UpParams, downsample, rcab, upsample
from .errors import ContractError, DimensionError
from .layers import Conv, named_parameters
from .octconv import FrequencyPair, FSMParams, fsm
from .tensor import Tensor

SCALES = 3


@dataclass
class NetworkConfig:
    base_channels: int = 16
    scales: int = SCALES
    rcab_bottleneck_count: int = 4
    fsm_per_scale: int = 1
    attention_ratio: int = 4
    leaky_slope: float = T.DEFAULT_LEAKY_SLOPE
    in_channels: int = 3
    use_fsm: bool = True
    use_csffm: bool = True
    # zero the output conv so the untrained network is the identity map
    zero_head: bool = True

    def validate(self) -> None:
        if self.scales != SCALES:
            raise ContractError(f"scales must be {SCALES}, got {self.scales}")
        if self.base_channels < 4 or self.base_channels % 4:
            raise ContractError(f"base_channels must be a positive multiple of 4, got {self.base_channels}")
        if self.rcab_bottleneck_count < 0 or self.fsm_per_scale < 1:
            raise ContractError("rcab_bottleneck_count >= 0 and fsm_per_scale >= 1 required")
        if self.attention_ratio < 1:
            raise ContractError("attention_ratio must be >= 1")

    def width(self, k: int) -> int:
        return self.base_channels * 2 ** k

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class MixParams:
    """Unconstrained scalars; each is squashed with a sigmoid where it is used."""

    theta: Tensor
    gamma: Tensor

    @classmethod
    def init(cls) -> MixParams:
        dt = T.get_default_dtype()
        return cls(Tensor(np.zeros(1, dt), requires_grad=True), Tensor(np.zeros(1, dt), requires_grad=True))


@dataclass
class NetworkParams:
    shallow: Conv
    enc_fsm: list[list[FSMParams]]
    down: list[DownParams]
    bottleneck: list[RCABParams]
    dec_fsm: list[list[FSMParams]]
    ups: list[UpParams]
    mix: MixParams
    head: Conv

    @classmethod
    def init(cls, cfg: NetworkConfig, seed: int | np.random.Generator = 0) -> NetworkParams:
        cfg.validate()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        alpha = 0.5 if cfg.use_fsm else 0.0
        r, slope = cfg.attention_ratio, cfg.leaky_slope
        c = [cfg.width(k) for k in range(SCALES)]

        def fsm_stack(ch):
            return [FSMParams.init(rng, ch, alpha) for _ in range(cfg.fsm_per_scale)]

        shallow = Conv.init(rng, cfg.in_channels, c[0], 3)
        enc = [fsm_stack(c[k]) for k in range(SCALES)]
        down = [DownParams.init(rng, c[k], c[k + 1], slope) for k in range(SCALES - 1)]
        bottleneck = [RCABParams.init(rng, c[2], r, slope) for _ in range(cfg.rcab_bottleneck_count)]
        dec = [fsm_stack(c[k]) for k in range(SCALES)]
        fuse = 2 if cfg.use_csffm else 1
        # ups[0]: 1/4 -> 1/2, ups[1]: 1/2 -> 1
        ups = [UpParams.init(rng, fuse * c[k], c[k], c[k - 1], r, slope) for k in (2, 1)]
        head = Conv.init(rng, c[0], cfg.in_channels, 3)
        if cfg.zero_head:
            head.zero_()
        return cls(shallow, enc, down, bottleneck, dec, ups, MixParams.init(), head)

    def named_parameters(self):
        return named_parameters(self)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in named_parameters(self)]


@dataclass
class ScaleTaps:
    """Per-scale features feeding the losses; index k is the 1/2**k scale."""

    en_lf: list[Tensor | None] = field(default_factory=lambda: [None] * SCALES)
    en_hf: list[Tensor | None] = field(default_factory=lambda: [None] * SCALES)
    de_hf: list[Tensor | None] = field(default_factory=lambda: [None] * SCALES)
    out_lf: list[Tensor | None] = field(default_factory=lambda: [None] * SCALES)
    out_hf: list[Tensor | None] = field(default_factory=lambda: [None] * SCALES)

    def has_output_taps(self) -> bool:
        return all(t is not None for t in self.out_lf + self.out_hf)

    def validate(self) -> None:
        for k in range(SCALES):
            hf = [t.shape for t in (self.en_hf[k], self.de_hf[k], self.out_hf[k]) if t is not None]
            lf = [t.shape for t in (self.en_lf[k], self.out_lf[k]) if t is not None]
            if len(set(hf)) > 1 or len(set(lf)) > 1:
                raise ContractError(f"inconsistent tap shapes at scale {k}: hf={hf} lf={lf}")


def _fsm_stack(x: Tensor, stack: list[FSMParams]) -> tuple[Tensor, FrequencyPair]:
    taps = None
    for p in stack:
        x, taps = fsm(x, p)
    return x, taps


def _pad_to(x: Tensor, mult: int) -> Tensor:
    h, w = x.shape[2:]
    ph, pw = -h % mult, -w % mult
    return T.pad_edge(x, ph, pw) if ph or pw else x


def encode(image: Tensor, params: NetworkParams) -> tuple[list[Tensor], list[FrequencyPair]]:
    """Shared encoder: features and FSM taps at scales 1, 1/2, 1/4."""
    feats, taps = [], []
    f = params.shallow(image)
    for k in range(SCALES):
        if k:
            f = downsample(f, params.down[k - 1])
        f, tap = _fsm_stack(f, params.enc_fsm[k])
        feats.append(f)
        taps.append(tap)
    return feats, taps


def csffm_stage(f_en: Tensor, f_de: Tensor, weight: Tensor, up: UpParams) -> Tensor:
    """up([sigmoid(w) * f_en + (1 - sigmoid(w)) * f_de, f_en]) at double resolution."""
    if f_en.shape != f_de.shape:
        raise DimensionError(f"CSFFM: encoder {f_en.shape} and decoder {f_de.shape} features differ")
    g = T.sigmoid(weight)
    mixed = T.add(T.scale(f_en, g), T.scale(f_de, T.sub(1.0, g)))
    return upsample(T.concat_channels([mixed, f_en]), up)


def csffm(f_en_quarter: Tensor, f_de_quarter: Tensor, f_en_half: Tensor, f_de_half: Tensor,
          mix: MixParams, ups: list[UpParams]) -> tuple[Tensor, Tensor]:
    """Both fusion steps: (1/4 -> 1/2 decoder feature, 1/2 -> 1 decoder feature).

    Inside the network a decoder FSM runs between the two steps, so
    :func:`forward` calls :func:`csffm_stage` directly.
    """
    half = csffm_stage(f_en_quarter, f_de_quarter, mix.theta, ups[0])
    full = csffm_stage(f_en_half, f_de_half, mix.gamma, ups[1])
    return half, full


def _check_image(x: Tensor, cfg: NetworkConfig) -> None:
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected (n, {cfg.in_channels}, h, w) images, got {x.shape}")
    h, w = x.shape[2:]
    if h % 4 or w % 4:
        raise DimensionError(f"spatial extents must be divisible by 4, got {h}x{w}")


def forward(blurry: Tensor, params: NetworkParams, cfg: NetworkConfig) -> tuple[Tensor, ScaleTaps]:
    """Restore ``blurry`` (n, c, h, w) and collect encoder/decoder taps.

    Sizes that are multiples of 4 but not 8 are edge-padded internally so the
    1/4-scale FSM still has even extents; the output is cropped back.
    """
    _check_image(blurry, cfg)
    h, w = blurry.shape[2:]
    x = _pad_to(blurry, 8)
    feats, en_taps = encode(x, params)
    taps = ScaleTaps()
    for k, tap in enumerate(en_taps):
        taps.en_lf[k], taps.en_hf[k] = tap.lf, tap.hf

    f = feats[2]
    for blk in params.bottleneck:
        f = rcab(f, blk)
    f, tap = _fsm_stack(f, params.dec_fsm[2])
    taps.de_hf[2] = tap.hf
    for k, weight in ((1, params.mix.theta), (0, params.mix.gamma)):
        up = params.ups[1 - k]
        if cfg.use_csffm:
            f = csffm_stage(feats[k + 1], f, weight, up)
        else:
            f = upsample(f, up)
        f, tap = _fsm_stack(f, params.dec_fsm[k])
        taps.de_hf[k] = tap.hf

    out = T.add(params.head(f), x)
    if out.shape[2:] != (h, w):
        out = T.crop(out, h, w)
    return out, taps


def encode_output(sharp: Tensor, params: NetworkParams, taps: ScaleTaps) -> ScaleTaps:
    """Run the shared encoder over the restored image and fill the ``out_*`` taps in place."""
    if any(t is None for t in taps.en_lf + taps.en_hf):
        raise ContractError("encode_output needs the encoder taps from forward()")
    _, out_taps = encode(_pad_to(sharp, 8), params)
    for k, tap in enumerate(out_taps):
        if tap.hf.shape != taps.en_hf[k].shape or tap.lf.shape != taps.en_lf[k].shape:
            raise ContractError(f"output taps at scale {k} do not match the encoder taps")
        taps.out_lf[k], taps.out_hf[k] = tap.lf, tap.hf
    return taps


class MSFSNet:
    """Parameters plus configuration, with the forward passes as methods."""

    def __init__(self, cfg: NetworkConfig | None = None, seed: int = 0, params: NetworkParams | None = None):
        self.cfg = cfg or NetworkConfig()
        self.params = params if params is not None else NetworkParams.init(self.cfg, seed)

    def __call__(self, blurry: Tensor) -> tuple[Tensor, ScaleTaps]:
        return forward(blurry, self.params, self.cfg)

    def forward_with_taps(self, blurry: Tensor) -> tuple[Tensor, ScaleTaps]:
        sharp, taps = forward(blurry, self.params, self.cfg)
        encode_output(sharp, self.params, taps)
        return sharp, taps

    def restore(self, blurry: np.ndarray) -> np.ndarray:
        """Tape-free inference on an (n, c, h, w) array."""
        with T.no_grad():
            out, _ = forward(Tensor(blurry.astype(T.get_default_dtype(), copy=False)), self.params, self.cfg)
        return out.data

    def named_parameters(self):
        return self.params.named_parameters()

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()
