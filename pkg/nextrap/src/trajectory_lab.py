"""
Trajectory lab: checkpoint trajectories met bekende ground truth

Bevat:
- DynamicsSpec + gen_analytic_trajectory: W_t = W0 + f(t)·σ·u·vᵀ + ruis
- ToyTrainSpec + gen_toy_training_trajectory: klein tanh netwerk, full-batch GD (full of LoRA)
- analytic_ground_truth / load_lab_record voor vergelijking met W(c+k)

De drie analytische families (linear, saturating, logistic) zijn synthetische
stand-ins voor echte trainingsdynamiek, geen gefitte modellen.
"""

import logging
import math
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .checkpoint_store import (
    Checkpoint,
    LoraAdapter,
    ManifestEntry,
    PathLike,
    TrajectoryManifest,
    save_adapter,
    save_checkpoint,
    save_manifest,
    write_json_document,
)
from .errors import CheckpointIOError, DivergedTraining, FormatError
from .linalg_core import apply_sign_convention

logger = logging.getLogger(__name__)

Shape = Tuple[int, int]

MANIFEST_NAME = "manifest.json"
LAB_RECORD_NAME = "dynamics.json"
BASE_NAME = "base.safetensors"
DEFAULT_STEP_INTERVAL = 10


def weight_name(j: int) -> str:
    return f"layers.{j:03d}.weight"


def bias_name(j: int) -> str:
    return f"layers.{j:03d}.bias"


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:05d}.safetensors"


def adapter_name(step: int) -> str:
    return f"adapter_{step:05d}.safetensors"


# ---------------------------------------------------------------------------
# Analytische dynamiek
# ---------------------------------------------------------------------------

class DynamicsSpec(BaseModel):
    """f(t) per checkpoint index t; horizon T normaliseert linear en logistic"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["linear", "saturating", "logistic"]
    amplitude: float = 1.0
    timescale: float = Field(5.0, gt=0)
    noise_std: float = Field(0.0, ge=0)
    seed: int = 17
    horizon: Optional[float] = Field(None, gt=0)

    def resolved(self, n_checkpoints: int) -> "DynamicsSpec":
        if self.horizon is not None:
            return self
        return self.model_copy(update={"horizon": float(n_checkpoints)})

    def f(self, t: float) -> float:
        horizon = self.horizon if self.horizon is not None else 1.0
        if self.kind == "linear":
            return self.amplitude * t / horizon
        if self.kind == "saturating":
            return self.amplitude * (1.0 - math.exp(-t / self.timescale))
        return self.amplitude / (1.0 + math.exp(-(t - horizon / 2.0) / self.timescale))


def _planted(spec: DynamicsSpec, j: int, shape: Shape):
    """Deterministische (W0, bias, σ, u, v) voor parameter j"""
    m, n = shape
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, j]))
    w0 = rng.normal(0.0, 1.0 / math.sqrt(n), size=(m, n))
    bias = rng.normal(0.0, 0.1, size=m)
    u = rng.standard_normal(m)
    v = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    u, v = apply_sign_convention(u, v)
    sigma = math.sqrt(m * n) * rng.uniform(0.5, 1.5)
    return w0, bias, sigma, u, v


def _noise(spec: DynamicsSpec, j: int, t: int, shape: Shape) -> np.ndarray:
    # Philox is counter-based: (seed, parameter, checkpoint) bepaalt de stream
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, j, t])))
    return gen.normal(0.0, spec.noise_std, size=shape)


def _analytic_checkpoint(spec: DynamicsSpec, shapes: Sequence[Shape], t: int, step: int,
                         noisy: bool) -> Checkpoint:
    tensors, passthrough = {}, {}
    scale = spec.f(t) if t > 0 else 0.0
    for j, shape in enumerate(shapes):
        w0, bias, sigma, u, v = _planted(spec, j, shape)
        w = w0 + scale * sigma * np.outer(u, v)
        if noisy and t > 0 and spec.noise_std > 0:
            w = w + _noise(spec, j, t, shape)
        tensors[weight_name(j)] = w
        passthrough[bias_name(j)] = bias
    return Checkpoint(step, tensors, passthrough)


def analytic_ground_truth(spec: DynamicsSpec, shapes: Sequence[Shape], t: float,
                          step: Optional[int] = None) -> Checkpoint:
    """Ruisvrije W0 + f(t)·σ·u·vᵀ voor elke (ook toekomstige) index t"""
    tensors, passthrough = {}, {}
    for j, shape in enumerate(shapes):
        w0, bias, sigma, u, v = _planted(spec, j, shape)
        tensors[weight_name(j)] = w0 + spec.f(t) * sigma * np.outer(u, v)
        passthrough[bias_name(j)] = bias
    return Checkpoint(step if step is not None else int(round(t * DEFAULT_STEP_INTERVAL)),
                      tensors, passthrough)


def planted_direction(spec: DynamicsSpec, j: int, shape: Shape):
    """(σ, u, v) van de geplante rank-1 richting van parameter j"""
    _, _, sigma, u, v = _planted(spec, j, shape)
    return sigma, u, v


# ---------------------------------------------------------------------------
# Toy training
# ---------------------------------------------------------------------------

class ToyTrainSpec(BaseModel):
    """layer_shapes als (out, in) per laag, ketend: in van laag i+1 = out van laag i"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    layer_shapes: List[Tuple[int, int]] = Field(default_factory=lambda: [(32, 16), (32, 32), (8, 32)])
    task_seed: int = 17
    steps: int = Field(150, gt=0)
    save_interval: int = Field(DEFAULT_STEP_INTERVAL, gt=0)
    learning_rate: float = Field(0.05, gt=0)
    mode: Literal["full", "lora"] = "full"
    lora_rank: Optional[int] = Field(None, ge=1)
    lora_alpha: Optional[float] = Field(None, gt=0)
    n_samples: int = Field(256, gt=0)
    dtype: Literal["F32", "F64"] = "F32"

    @model_validator(mode="after")
    def _check(self) -> "ToyTrainSpec":
        if len(self.layer_shapes) < 2:
            raise ValueError("minimaal één hidden laag en een output laag")
        for (m, n) in self.layer_shapes:
            if m < 1 or n < 1:
                raise ValueError(f"ongeldige laag shape ({m}, {n})")
        for prev, curr in zip(self.layer_shapes, self.layer_shapes[1:]):
            if curr[1] != prev[0]:
                raise ValueError(f"laag shapes ketenen niet: {prev} -> {curr}")
        if self.steps % self.save_interval != 0:
            raise ValueError("steps moet deelbaar zijn door save_interval")
        if self.mode == "lora":
            if self.lora_rank is None:
                raise ValueError("lora mode vereist lora_rank")
            for (m, n) in self.layer_shapes:
                if self.lora_rank > min(m, n):
                    raise ValueError(f"lora_rank {self.lora_rank} > min({m}, {n})")
        elif self.lora_rank is not None or self.lora_alpha is not None:
            raise ValueError("lora_rank en lora_alpha horen alleen bij lora mode")
        return self

    @property
    def alpha(self) -> float:
        return self.lora_alpha if self.lora_alpha is not None else float(self.lora_rank or 1)

    @property
    def scale(self) -> float:
        return self.alpha / self.lora_rank


class _ToyNetwork:
    """tanh MLP met lineaire output; gewichten (out, in), y = x @ Wᵀ + b"""

    def __init__(self, spec: ToyTrainSpec):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence([spec.task_seed, 0]))
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for (m, n) in spec.layer_shapes:
            bound = 1.0 / math.sqrt(n)
            self.weights.append(rng.uniform(-bound, bound, size=(m, n)))
            self.biases.append(rng.uniform(-bound, bound, size=m))

        task = np.random.default_rng(np.random.SeedSequence([spec.task_seed, 1]))
        n_in = spec.layer_shapes[0][1]
        n_out = spec.layer_shapes[-1][0]
        self.x = task.standard_normal((spec.n_samples, n_in))
        mixing = task.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
        self.y = np.sin(self.x @ mixing)

        self.lora_a: List[np.ndarray] = []
        self.lora_b: List[np.ndarray] = []
        if spec.mode == "lora":
            lora_rng = np.random.default_rng(np.random.SeedSequence([spec.task_seed, 2]))
            r = spec.lora_rank
            for (m, n) in spec.layer_shapes:
                bound = 1.0 / math.sqrt(n)
                self.lora_a.append(lora_rng.uniform(-bound, bound, size=(r, n)))
                self.lora_b.append(np.zeros((m, r)))

    def effective_weights(self) -> List[np.ndarray]:
        if self.spec.mode == "full":
            return self.weights
        s = self.spec.scale
        return [w + s * (b @ a) for w, a, b in zip(self.weights, self.lora_a, self.lora_b)]

    def loss_and_grads(self):
        """L = mean_samples ½‖out − y‖²; handmatige backprop"""
        weights = self.effective_weights()
        acts = [self.x]
        h = self.x
        last = len(weights) - 1
        for idx, (w, b) in enumerate(zip(weights, self.biases)):
            z = h @ w.T + b
            h = z if idx == last else np.tanh(z)
            acts.append(h)
        resid = acts[-1] - self.y
        loss = 0.5 * float(np.sum(resid * resid)) / self.spec.n_samples

        grad_w: List[np.ndarray] = [None] * len(weights)
        grad_b: List[np.ndarray] = [None] * len(weights)
        delta = resid / self.spec.n_samples
        for idx in range(last, -1, -1):
            grad_w[idx] = delta.T @ acts[idx]
            grad_b[idx] = delta.sum(axis=0)
            if idx > 0:
                dh = delta @ weights[idx]
                delta = dh * (1.0 - acts[idx] ** 2)
        return loss, grad_w, grad_b

    def step(self, lr: float) -> float:
        loss, grad_w, grad_b = self.loss_and_grads()
        if not math.isfinite(loss):
            raise DivergedTraining(f"toy training loss werd niet-eindig ({loss})")
        if self.spec.mode == "full":
            for idx in range(len(self.weights)):
                self.weights[idx] = self.weights[idx] - lr * grad_w[idx]
                self.biases[idx] = self.biases[idx] - lr * grad_b[idx]
        else:
            s = self.spec.scale
            for idx, dw in enumerate(grad_w):
                a, b = self.lora_a[idx], self.lora_b[idx]
                grad_a = s * (b.T @ dw)
                grad_b_lora = s * (dw @ a.T)
                self.lora_a[idx] = a - lr * grad_a
                self.lora_b[idx] = b - lr * grad_b_lora
        return loss

    def checkpoint(self, step: int) -> Checkpoint:
        weights = self.effective_weights()
        tensors = {weight_name(j): w for j, w in enumerate(weights)}
        passthrough = {bias_name(j): b for j, b in enumerate(self.biases)}
        return Checkpoint(step, tensors, passthrough)

    def adapter(self, step: int) -> LoraAdapter:
        factors = {weight_name(j): (a, b) for j, (a, b) in enumerate(zip(self.lora_a, self.lora_b))}
        return LoraAdapter.from_factors(factors, self.spec.lora_rank, self.spec.alpha, step)


# ---------------------------------------------------------------------------
# Lab records
# ---------------------------------------------------------------------------

class LabRecord(BaseModel):
    """dynamics.json naast het manifest: genoeg om de trajectory te reconstrueren"""
    model_config = ConfigDict(extra="forbid")

    generator: Literal["analytic", "toy"]
    dynamics: Optional[DynamicsSpec] = None
    toy: Optional[ToyTrainSpec] = None
    shapes: List[Tuple[int, int]]
    n_checkpoints: int
    step_interval: int
    dtype: Literal["F32", "F64"]
    final_loss: Optional[float] = None

    def ground_truth(self, t: float) -> Checkpoint:
        if self.generator != "analytic" or self.dynamics is None:
            raise FormatError("ground truth is alleen beschikbaar voor analytische trajectories")
        return analytic_ground_truth(self.dynamics, self.shapes, t,
                                     step=int(round(t * self.step_interval)))


def load_lab_record(traj_dir: PathLike) -> Optional[LabRecord]:
    """LabRecord uit een trajectory map, of None als die ontbreekt"""
    path = Path(traj_dir) / LAB_RECORD_NAME
    if not path.exists():
        return None
    try:
        return LabRecord.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"{path}: ongeldig lab record ({e.error_count()} fouten)") from e
    except OSError as e:
        raise CheckpointIOError(f"{path}: {e}") from e


def _write_record(record: LabRecord, out_dir: Path) -> None:
    write_json_document(record.model_dump(mode="json"), out_dir / LAB_RECORD_NAME)


def load_spec_file(path: PathLike, model):
    """DynamicsSpec / ToyTrainSpec uit een JSON bestand"""
    path = Path(path)
    if not path.exists():
        raise CheckpointIOError(f"Spec bestand niet gevonden: {path}")
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"{path}: ongeldige {model.__name__}: {e}") from e


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_analytic_trajectory(spec: DynamicsSpec, shapes: Sequence[Shape], n_checkpoints: int,
                            out_dir: PathLike, step_interval: int = DEFAULT_STEP_INTERVAL,
                            dtype: str = "F32") -> TrajectoryManifest:
    """Schrijf base + n_checkpoints checkpoints, manifest en dynamics.json"""
    if n_checkpoints < 3:
        raise ValueError(f"n_checkpoints moet >= 3 zijn, kreeg {n_checkpoints}")
    if not shapes:
        raise ValueError("minimaal één parameter shape nodig")
    out_dir = Path(out_dir)
    spec = spec.resolved(n_checkpoints)
    shapes = [tuple(int(x) for x in s) for s in shapes]

    save_checkpoint(_analytic_checkpoint(spec, shapes, 0, 0, noisy=False), out_dir / BASE_NAME, dtype)
    entries = []
    for t in range(1, n_checkpoints + 1):
        step = t * step_interval
        ckpt = _analytic_checkpoint(spec, shapes, t, step, noisy=True)
        save_checkpoint(ckpt, out_dir / checkpoint_name(step), dtype)
        entries.append(ManifestEntry(step, checkpoint_name(step)))

    man = TrajectoryManifest(BASE_NAME, entries, None, out_dir)
    save_manifest(man, out_dir / MANIFEST_NAME)
    _write_record(LabRecord(generator="analytic", dynamics=spec, shapes=shapes,
                            n_checkpoints=n_checkpoints, step_interval=step_interval, dtype=dtype),
                  out_dir)
    logger.info("analytische trajectory (%s) geschreven: %d parameters, %d checkpoints in %s",
                spec.kind, len(shapes), n_checkpoints, out_dir)
    return man


def gen_toy_training_trajectory(spec: ToyTrainSpec, out_dir: PathLike) -> TrajectoryManifest:
    """Train het toy netwerk; bewaar checkpoints elke save_interval stappen

    In lora mode is de adapter vorm canoniek: base + adapters staan onder "lora" in het
    manifest, zodat read_trajectory W0 + s·B·A in float64 opbouwt en de rank-r grens exact
    blijft bij F32 opslag. De merged checkpoints worden er naast geschreven.
    """
    out_dir = Path(out_dir)
    net = _ToyNetwork(spec)
    save_checkpoint(net.checkpoint(0), out_dir / BASE_NAME, spec.dtype)

    entries, lora_paths = [], []
    loss = float("nan")
    for step in range(1, spec.steps + 1):
        loss = net.step(spec.learning_rate)
        if step % spec.save_interval == 0:
            save_checkpoint(net.checkpoint(step), out_dir / checkpoint_name(step), spec.dtype)
            entries.append(ManifestEntry(step, checkpoint_name(step)))
            if spec.mode == "lora":
                save_adapter(net.adapter(step), out_dir / adapter_name(step), spec.dtype)
                lora_paths.append(adapter_name(step))
            logger.info("toy step %d: loss %.6f", step, loss)

    man = TrajectoryManifest(BASE_NAME, entries, lora_paths if spec.mode == "lora" else None, out_dir)
    save_manifest(man, out_dir / MANIFEST_NAME)
    _write_record(LabRecord(generator="toy", toy=spec, shapes=list(spec.layer_shapes),
                            n_checkpoints=len(entries), step_interval=spec.save_interval,
                            dtype=spec.dtype, final_loss=loss),
                  out_dir)
    return man


def manifest_path(traj_dir: PathLike) -> Path:
    return Path(traj_dir) / MANIFEST_NAME
