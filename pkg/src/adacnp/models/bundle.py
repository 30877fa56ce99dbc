"""Parameter bundle shared by the CNP and AdaCNP predictors, plus checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from adacnp.core.checkpoint import ACTIVATION_TAGS, Reader, pack_mlp, unpack_mlp
from adacnp.core.mlp import MlpParams, init_mlp
from adacnp.errors import ContractError, DataError, DimensionError

NETWORKS = ("encoder", "embedding", "scorer", "decoder")
KINDS = ("adacnp", "cnp")
BUNDLE_MAGIC = b"ACNB"
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes. None of these are given by the method description;
    the defaults are sized to train in minutes on a CPU."""

    d_e: int = 32
    d_r: int = 128
    encoder_hidden: tuple = (128, 128)
    decoder_hidden: tuple = (128, 128)
    embedding_hidden: tuple = (64,)
    scorer_hidden: tuple = (64,)
    tau: float = 1.0
    activation: str = "relu"


@dataclass(frozen=True)
class ModelBundle:
    encoder: MlpParams
    embedding: MlpParams
    scorer: MlpParams
    decoder: MlpParams
    tau: float = 1.0
    kind: str = "adacnp"

    def __post_init__(self):
        if not self.tau > 0:
            raise ContractError(f"temperature must be positive, got {self.tau}")
        if self.kind not in KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")
        d_x, d_y, d_e, d_r = self.d_x, self.d_y, self.d_e, self.d_r
        checks = [
            ("encoder input", self.encoder.n_in, d_x + d_y),
            ("scorer input", self.scorer.n_in, 2 * d_e),
            ("scorer output", self.scorer.n_out, 1),
            ("decoder input", self.decoder.n_in, d_x + d_r),
            ("decoder output", self.decoder.n_out, 2 * d_y),
        ]
        for what, got, want in checks:
            if got != want:
                raise DimensionError(f"{what} size {got} but dimension chain needs {want}")

    @property
    def d_x(self):
        return self.embedding.n_in

    @property
    def d_y(self):
        return self.decoder.n_out // 2

    @property
    def d_e(self):
        return self.embedding.n_out

    @property
    def d_r(self):
        return self.encoder.n_out

    @property
    def activation(self):
        return self.encoder.activation

    def params(self):
        """All trainable arrays as one flat, ordered ``{name: array}`` dict."""
        out = {}
        for net in NETWORKS:
            out.update(getattr(self, net).named(net))
        return out

    def with_params(self, mapping):
        nets = {net: getattr(self, net).replace(mapping, net) for net in NETWORKS}
        return replace(self, **nets)

    def lift(self, tape):
        """Copy whose parameters are leaves of ``tape``."""
        return self.with_params({k: tape.leaf(v, k) for k, v in self.params().items()})

    def n_params(self):
        return int(sum(np.size(v) for v in self.params().values()))


def init_bundle(d_x, d_y, config=None, rng=None, kind="adacnp"):
    config = config or ModelConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    act = config.activation
    c = config
    return ModelBundle(
        encoder=init_mlp((d_x + d_y, *c.encoder_hidden, c.d_r), rng, act),
        embedding=init_mlp((d_x, *c.embedding_hidden, c.d_e), rng, act),
        scorer=init_mlp((2 * c.d_e, *c.scorer_hidden, 1), rng, act),
        decoder=init_mlp((d_x + c.d_r, *c.decoder_hidden, 2 * d_y), rng, act),
        tau=float(c.tau),
        kind=kind,
    )


# Bundle checkpoint layout (little-endian):
#   b"ACNB", u32 version, u32 kind tag (0 adacnp, 1 cnp),
#   u32 d_x, u32 d_y, u32 d_e, u32 d_r, f64 tau, u32 activation tag,
#   then the four MLP blocks in the order encoder, embedding, scorer, decoder.

def pack_bundle(bundle: ModelBundle) -> bytes:
    header = BUNDLE_MAGIC + struct.pack(
        "<IIIIIIdI",
        BUNDLE_VERSION,
        KINDS.index(bundle.kind),
        bundle.d_x, bundle.d_y, bundle.d_e, bundle.d_r,
        bundle.tau,
        ACTIVATION_TAGS[bundle.activation],
    )
    return header + b"".join(pack_mlp(getattr(bundle, n)) for n in NETWORKS)


def unpack_bundle(data: bytes) -> ModelBundle:
    reader = Reader(data)
    if reader.read(4) != BUNDLE_MAGIC:
        raise DataError("not a model bundle checkpoint")
    version, kind, d_x, d_y, d_e, d_r, tau, _act = reader.unpack("<IIIIIIdI")
    if version != BUNDLE_VERSION:
        raise DataError(f"unsupported bundle version {version}")
    if kind >= len(KINDS):
        raise DataError(f"unknown model kind tag {kind}")
    nets = {n: unpack_mlp(reader) for n in NETWORKS}
    if reader.pos != len(data):
        raise DataError("trailing bytes after bundle")
    bundle = ModelBundle(**nets, tau=tau, kind=KINDS[kind])
    if (bundle.d_x, bundle.d_y, bundle.d_e, bundle.d_r) != (d_x, d_y, d_e, d_r):
        raise DataError("bundle header dimensions disagree with network blocks")
    return bundle


def save_bundle(bundle, path, header=""):
    """Write a checkpoint, optionally preceded by ``#``-prefixed text lines."""
    lines = [line if line.startswith("#") else "# " + line for line in header.splitlines()]
    with open(path, "wb") as fh:
        fh.write("".join(line + "\n" for line in lines).encode())
        fh.write(pack_bundle(bundle))


def strip_header(data: bytes) -> bytes:
    while data.startswith(b"#"):
        data = data[data.index(b"\n") + 1:]
    return data


def load_bundle(path):
    with open(path, "rb") as fh:
        return unpack_bundle(strip_header(fh.read()))
