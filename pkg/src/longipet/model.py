"""Image-to-image forecaster: ConvLSTM encoder, pooled batch-normalized
bottleneck, transposed-convolution decoder, nearest-neighbor upsample, and a
1x1x1 output projection.

The network consumes two volumes (the two most recent annual scans) as a
2-frame sequence and emits the next annual volume.  The output activation is
relu, so predictions are nonnegative.
"""

from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ParameterError, ShapeError
from .volume_io import Volume3D

_ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class I2IModelConfig:
    dims: Tuple[int, int, int] = (80, 96, 80)
    lstm_filters: int = 16
    decoder_filters: int = 32
    kernel_size: int = 3
    pool: int = 2
    decoder_activation: str = "relu"
    output_activation: str = "relu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or min(dims) < 2:
            raise ParameterError(f"dims must be 3 values >= 2, got {dims}")
        if any(d % self.pool for d in dims):
            raise ParameterError(
                f"dims {dims} must be divisible by the pooling factor {self.pool}"
            )
        if self.lstm_filters < 1 or self.decoder_filters < 1:
            raise ParameterError("filter counts must be positive")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ParameterError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.decoder_activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown decoder activation {self.decoder_activation!r}")
        if self.output_activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown output activation {self.output_activation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "I2IModelConfig":
        try:
            return cls(
                dims=tuple(d["dims"]),
                lstm_filters=int(d["lstm_filters"]),
                decoder_filters=int(d["decoder_filters"]),
                kernel_size=int(d.get("kernel_size", 3)),
                pool=int(d.get("pool", 2)),
                decoder_activation=d.get("decoder_activation", "relu"),
                output_activation=d.get("output_activation", "relu"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad model config: {exc}") from exc


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: I2IModelConfig, seed: int) -> ad.ParameterSet:
    """Glorot-uniform kernels, zero biases, unit batch-norm gain.

    Deterministic for a given seed: parameters are drawn in a fixed order.
    """
    rng = np.random.default_rng(seed)
    k = config.kernel_size
    f = config.lstm_filters
    dec = config.decoder_filters
    k3 = k ** 3
    ps = ad.ParameterSet()
    in_ch = 1 + f  # input frame channels + hidden channels, concatenated
    ps.add("convlstm.kernel", _glorot(rng, (k, k, k, in_ch, 4 * f), k3 * in_ch, k3 * 4 * f))
    ps.add("convlstm.bias", np.zeros(4 * f))
    ps.add("bn.gamma", np.ones(f))
    ps.add("bn.beta", np.zeros(f))
    ps.add("deconv.kernel", _glorot(rng, (k, k, k, dec, f), k3 * f, k3 * dec))
    ps.add("deconv.bias", np.zeros(dec))
    ps.add("head.kernel", _glorot(rng, (1, 1, 1, dec, 1), dec, 1))
    ps.add("head.bias", np.zeros(1))
    return ps


def _activate(t, name):
    return ad.relu(t) if name == "relu" else t


def forward_batch(
    params: ad.ParameterSet,
    frames0: np.ndarray,
    frames1: np.ndarray,
    config: I2IModelConfig,
    mode: str = "infer",
    trace: Optional[dict] = None,
):
    """Run the network on a batch.

    ``frames0`` and ``frames1`` are (n, x, y, z) arrays for the earlier and
    later input years.  Returns the prediction Tensor (n, x, y, z, 1).
    """
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    frames0 = np.asarray(frames0, dtype=np.float64)
    frames1 = np.asarray(frames1, dtype=np.float64)
    if frames0.shape != frames1.shape or frames0.ndim != 4:
        raise ShapeError(
            f"frames must share shape (n, x, y, z), got {frames0.shape} and {frames1.shape}"
        )
    if frames0.shape[1:] != config.dims:
        raise ShapeError(
            f"frames have spatial dims {frames0.shape[1:]}, model expects {config.dims}"
        )
    n = frames0.shape[0]
    f = config.lstm_filters
    spatial = frames0.shape[1:]

    x0 = ad.Tensor(frames0[..., None])
    x1 = ad.Tensor(frames1[..., None])
    h = ad.Tensor(np.zeros((n, *spatial, f)))
    c = ad.Tensor(np.zeros((n, *spatial, f)))
    kernel = params.params["convlstm.kernel"]
    bias = params.params["convlstm.bias"]
    h, c = ad.convlstm3d_step(x0, h, c, kernel, bias)
    h, c = ad.convlstm3d_step(x1, h, c, kernel, bias)
    if trace is not None:
        trace["lstm_hidden"] = h.shape
    pooled = ad.maxpool3d(h, config.pool)
    if trace is not None:
        trace["pooled"] = pooled.shape
    normed = ad.batchnorm(
        pooled,
        params.params["bn.gamma"],
        params.params["bn.beta"],
        params.stats,
        mode=mode,
        key="bn",
    )
    decoded = _activate(
        ad.conv_transpose3d(
            normed, params.params["deconv.kernel"], params.params["deconv.bias"]
        ),
        config.decoder_activation,
    )
    if trace is not None:
        trace["decoded"] = decoded.shape
    up = ad.upsample_nn(decoded, config.pool)
    if trace is not None:
        trace["upsampled"] = up.shape
    out = _activate(
        ad.conv3d(up, params.params["head.kernel"], params.params["head.bias"]),
        config.output_activation,
    )
    if trace is not None:
        trace["output"] = out.shape
    return out


def forward(
    params: ad.ParameterSet,
    baseline: Volume3D,
    year1: Volume3D,
    config: I2IModelConfig,
    mode: str = "infer",
) -> Volume3D:
    """Predict the next annual volume from two consecutive annual scans."""
    if baseline.dims != year1.dims:
        raise ShapeError(f"input dims differ: {baseline.dims} vs {year1.dims}")
    with ad.no_grad():
        pred = forward_batch(
            params,
            baseline.data[None, ...],
            year1.data[None, ...],
            config,
            mode=mode,
        )
    return Volume3D(pred.data[0, ..., 0], baseline.affine.copy())


def save_model(params: ad.ParameterSet, config: I2IModelConfig, path):
    """Serialize parameters, running statistics and the config."""
    return ad.save_params(params, path, meta={"model": "i2i", "config": config.to_dict()})


def load_model(path):
    """Load a model file; returns (ParameterSet, I2IModelConfig)."""
    params, meta = ad.load_params(path)
    if "config" not in meta:
        raise FormatError(f"{path} has no embedded model config")
    return params, I2IModelConfig.from_dict(meta["config"])
