"""Learned reconstruction variants built on the numpy network engine.

* data correction: per-source trace-to-trace network mapping wave data toward
  Born-consistent data, applied before Born inversion;
* artifact correction: image-to-image network applied after Born inversion;
* dual correction: artifact correction trained on data-corrected reconstructions;
* direct inversion: all-source traces straight to an SOS image.

Every trained model is a :class:`TrainedNet`, which carries its own input and
output normalisation so callers work in physical units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import ImagingSystem
from .born import BornOperator
from .inversion import InversionConfig, born_reconstruct, fwi_reconstruct
from .nn import Network, TrainConfig, TrainLog, encoder_decoder, evaluate, train_network, unet

VARIANTS = ("uncorrected", "artifact", "data", "dual", "direct", "fwi")
# affine map of [1.3, 1.7] mm/us onto [-1, 1]
IMAGE_CENTER = 1.5
IMAGE_HALF_RANGE = 0.2


@dataclass
class TrainedNet:
    """A network with its parameters and affine input/output normalisation.

    ``y = net((x - in_offset) / in_scale) * out_scale + out_offset``
    """

    net: Network
    params: np.ndarray
    in_offset: float = 0.0
    in_scale: float = 1.0
    out_offset: float = 0.0
    out_scale: float = 1.0
    log: TrainLog | None = field(default=None, repr=False)
    kind: str = ""
    dtype: str = "float32"

    def __call__(self, x: np.ndarray, batch: int = 16) -> np.ndarray:
        xn = (np.asarray(x, dtype=float) - self.in_offset) / self.in_scale
        y = evaluate(self.net, self.params, xn.astype(self.dtype), batch)
        return y.astype(float) * self.out_scale + self.out_offset


def pooled_rms(arrays) -> float:
    total, count = 0.0, 0
    for a in arrays:
        total += float(np.sum(np.square(a)))
        count += np.size(a)
    rms = np.sqrt(total / max(count, 1))
    if rms == 0:
        raise ValueError("training traces are identically zero")
    return float(rms)


@dataclass
class DataCorrection:
    """Per-source residual network acting on scattered traces.

    The network sees ``(d - incident) / scattered_scale`` and
    ``incident / incident_scale`` as two channels and outputs the corrected
    scattered traces in units of ``scattered_scale``.
    """

    model: TrainedNet
    scattered_scale: float
    incident_scale: float

    @property
    def log(self) -> TrainLog | None:
        return self.model.log

    def inputs(self, data: np.ndarray, incident: np.ndarray) -> np.ndarray:
        return np.stack([(data - incident) / self.scattered_scale, incident / self.incident_scale], axis=1)


def train_data_correction(wave_data: list[np.ndarray], born_data: list[np.ndarray],
                          incident: np.ndarray, cfg: TrainConfig, width: int = 8,
                          levels: int = 2) -> DataCorrection:
    """Fit a per-source map from wave traces to Born traces (mean-square loss).

    Working on the scattered part matters: the wave/Born difference is a few
    percent of the total traces but a sizeable fraction of the scattered ones.
    """
    if len(wave_data) != len(born_data) or not wave_data:
        raise ValueError("need equally many (nonzero) wave and Born examples")
    scale = pooled_rms([d - incident for d in wave_data])
    psi = DataCorrection(TrainedNet(unet(2, 1, width, levels, residual=True), np.zeros(0), kind="data"),
                         scale, pooled_rms([incident]))
    X = np.concatenate([psi.inputs(d, incident) for d in wave_data])
    Y = np.concatenate([(b - incident)[:, None] for b in born_data]) / scale
    params, log = train_network(psi.model.net, X, Y, cfg)
    psi.model.params, psi.model.log = params, log
    return psi


def apply_data_correction(psi: DataCorrection, data: np.ndarray, incident: np.ndarray) -> np.ndarray:
    """Corrected total traces (I, K, J), source by source."""
    return incident + psi.model(psi.inputs(data, incident))[:, 0] * psi.scattered_scale


def identity_data_correction() -> DataCorrection:
    """A data correction whose network is the identity (all-zero residual)."""
    net = unet(2, 1, width=2, levels=1, residual=True)
    return DataCorrection(TrainedNet(net, np.zeros(net.n_params), kind="data", dtype="float64"), 1.0, 1.0)


def _images(stack) -> np.ndarray:
    return np.asarray(stack, dtype=float)[:, None]


def train_artifact_correction(recons: list[np.ndarray], truths: list[np.ndarray], cfg: TrainConfig,
                              width: int = 8, levels: int = 2) -> TrainedNet:
    """Image-to-image residual network from reconstructions to true SOS maps."""
    if len(recons) != len(truths) or not recons:
        raise ValueError("need equally many (nonzero) reconstructions and truths")
    X = (_images(recons) - IMAGE_CENTER) / IMAGE_HALF_RANGE
    Y = (_images(truths) - IMAGE_CENTER) / IMAGE_HALF_RANGE
    net = unet(1, 1, width, levels, residual=True)
    params, log = train_network(net, X, Y, cfg)
    return TrainedNet(net, params, IMAGE_CENTER, IMAGE_HALF_RANGE, IMAGE_CENTER, IMAGE_HALF_RANGE, log,
                      "artifact")


def apply_image_net(phi: TrainedNet, image: np.ndarray) -> np.ndarray:
    return phi(np.asarray(image, dtype=float)[None, None])[0, 0]


def direct_inverter_net(system: ImagingSystem, width: int = 8) -> Network:
    g = system.grid
    pools = []
    H, W = g.n_steps, system.n_receivers
    # shrink time by 4 and receivers by 2 per level until the bottleneck is small
    while H * W > 256 and H % 4 == 0 and W % 2 == 0 and len(pools) < 3:
        pools.append((4, 2))
        H, W = H // 4, W // 2
    base = g.n_fov
    while base % 2 == 0 and base > 8:
        base //= 2
    return encoder_decoder(system.n_sources, (g.n_steps, system.n_receivers), g.n_fov, width,
                           tuple(pools), base)


def train_direct_inverter(data: list[np.ndarray], truths: list[np.ndarray], incident: np.ndarray,
                          system: ImagingSystem, cfg: TrainConfig, width: int = 8) -> TrainedNet:
    """All-source traces (scattered part, sources as channels) to SOS images."""
    if len(data) != len(truths) or not data:
        raise ValueError("need equally many (nonzero) trace stacks and truths")
    scattered = [d - incident for d in data]
    scale = pooled_rms(scattered)
    X = np.stack(scattered) / scale
    Y = (_images(truths) - IMAGE_CENTER) / IMAGE_HALF_RANGE
    net = direct_inverter_net(system, width)
    # zero last layer: training starts from the all-water image
    params, log = train_network(net, X, Y, cfg, net.init_params(cfg.seed, zero_last=True))
    # inputs are shifted by the incident traces inside reconstruct_variant
    return TrainedNet(net, params, 0.0, scale, IMAGE_CENTER, IMAGE_HALF_RANGE, log, "direct")


def apply_direct(theta: TrainedNet, data: np.ndarray, incident: np.ndarray) -> np.ndarray:
    return theta((data - incident)[None])[0, 0]


_REQUIRED = {"artifact": ("artifact",), "data": ("data",), "dual": ("data", "dual"),
             "direct": ("direct",), "uncorrected": (), "fwi": ()}


def reconstruct_variant(variant: str, data: np.ndarray, models: dict, system: ImagingSystem,
                        born_config: InversionConfig, fwi_config: InversionConfig | None = None,
                        operator: BornOperator | None = None) -> np.ndarray:
    """SOS map (FOV) of one reconstruction variant from measured traces (I, K, J).

    ``models`` maps ``'data'``, ``'artifact'``, ``'dual'`` and ``'direct'`` to
    trained networks; only those the variant needs must be present.
    """
    if variant not in _REQUIRED:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    missing = [m for m in _REQUIRED[variant] if m not in models]
    if missing:
        raise KeyError(f"variant {variant!r} needs trained model(s) {missing}")
    op = operator if operator is not None else BornOperator(system)
    incident = op.cache.traces
    if variant == "fwi":
        return fwi_reconstruct(data, system, fwi_config or InversionConfig(method="fwi")).sos
    if variant == "direct":
        return apply_direct(models["direct"], data, incident)
    if variant in ("data", "dual"):
        data = apply_data_correction(models["data"], data, incident)
    recon = born_reconstruct(data, system, born_config, op).sos
    if variant == "artifact":
        return apply_image_net(models["artifact"], recon)
    if variant == "dual":
        return apply_image_net(models["dual"], recon)
    return recon
