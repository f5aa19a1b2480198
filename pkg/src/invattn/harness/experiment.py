"""Desk-scale reconstruction experiment: build blocks with fresh seeded
weights, roundtrip a batch of images through forward + fixed-point inverse,
and emit a summary table, per-image records, reconstructions, and block
files. Runs are deterministic given a fixed seed: per-image work items get
index-derived seeds and results are merged by input index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..attention import (
    KINDS,
    PHI_CHOICES,
    VARIANTS,
    AttentionBlock,
    build_block,
    save_block,
    squeeze,
    unsqueeze,
)
from ..errors import InvariantViolation
from ..inversion import InversionConfig, report_to_record, roundtrip, write_records
from ..logdet import LogDetConfig, brute_force_logdet, logdet_series
from .metrics import compute_ssim
from .ppm import load_ppm, save_ppm

SYNTHETIC_SOURCES = ("gradient", "checkerboard", "gaussian-noise")
_VSCORE_MSE_LIMIT = 10.0  # an image counts as reconstructed below this MSE
_MAX_IMAGE_SIZE = 64  # response maps are (H*W)^2; quadratic memory guard

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3
EXIT_IO = 4


@dataclass
class ExperimentConfig:
    """Everything a `run` needs; flat key=value config files map 1:1 here."""

    kinds: tuple[str, ...] = KINDS
    variant: str = "invertible"
    image_dir: str | None = None
    synthetic: str = "checkerboard"
    size: int = 16
    batch: int = 8
    c: float = 0.9
    phi: str = "softplus"
    iters: int = 100
    tol: float = 1e-10
    seed: int = 0
    precision: int = 64
    squeeze_levels: int = 1
    logdet: bool = False
    logdet_terms: int = 20
    logdet_samples: int = 64
    workers: int = 4
    vscore_floor: float = 0.0
    stress_weight_scale: float = 1.0
    stress_logit_scale: float = 1.0
    column_sum_target: float = 1.0
    global_sum: bool = False
    out_dir: str = "out"

    def validate(self) -> None:
        for kind in self.kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown kind {kind!r}")
        if not self.kinds:
            raise ValueError("at least one kind is required")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.phi not in PHI_CHOICES:
            raise ValueError(f"unknown phi {self.phi!r}")
        if self.image_dir is None and self.synthetic not in SYNTHETIC_SOURCES:
            raise ValueError(f"unknown synthetic source {self.synthetic!r}")
        if not (2 <= self.size <= _MAX_IMAGE_SIZE):
            raise ValueError(f"size must be in [2, {_MAX_IMAGE_SIZE}], got {self.size}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not (0.0 < self.c < 1.0):
            raise ValueError(f"c must be in (0, 1), got {self.c}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.tol < 0.0:
            raise ValueError("tol must be >= 0")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        if self.squeeze_levels < 0:
            raise ValueError("squeeze_levels must be >= 0")
        if self.size % (2**self.squeeze_levels) != 0:
            raise ValueError(
                f"size {self.size} is not divisible by 2^{self.squeeze_levels} for squeezing"
            )
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not (0.0 <= self.vscore_floor <= 1.0):
            raise ValueError("vscore_floor must be in [0, 1]")
        if self.logdet_terms < 1 or self.logdet_samples < 1:
            raise ValueError("logdet_terms and logdet_samples must be >= 1")

    @property
    def dtype(self) -> np.dtype:
        return np.float32 if self.precision == 32 else np.float64


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    """Build a config from string key=value pairs (file or CLI overrides)."""
    spec = {f.name: f.type for f in fields(ExperimentConfig)}
    kwargs: dict = {}
    for key, raw in mapping.items():
        if key not in spec:
            raise ValueError(f"unknown config key {key!r}")
        if key == "kinds":
            kwargs[key] = tuple(k.strip() for k in str(raw).split(",") if k.strip())
        elif key in ("logdet", "global_sum"):
            word = str(raw).strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"bad boolean for {key!r}: {raw!r}")
            kwargs[key] = _BOOL_WORDS[word]
        elif key in ("size", "batch", "iters", "seed", "precision", "squeeze_levels",
                     "logdet_terms", "logdet_samples", "workers"):
            kwargs[key] = int(raw)
        elif key in ("c", "tol", "vscore_floor", "stress_weight_scale",
                     "stress_logit_scale", "column_sum_target"):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = str(raw)
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and # comments ignored."""
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


# ---------------------------------------------------------------------------
# Image sources
# ---------------------------------------------------------------------------


def synthetic_batch(source: str, size: int, batch: int, seed: int, dtype=np.float64) -> list[np.ndarray]:
    """Deterministic batch of (3, size, size) grids with values in [0, 1]."""
    if source not in SYNTHETIC_SOURCES:
        raise ValueError(f"unknown synthetic source {source!r}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    images = []
    for _ in range(batch):
        if source == "gradient":
            angle = rng.uniform(0.0, 2.0 * np.pi)
            ramp = np.cos(angle) * xs + np.sin(angle) * ys
            span = ramp.max() - ramp.min()
            ramp = (ramp - ramp.min()) / (span if span > 0 else 1.0)
            phases = rng.uniform(0.0, 1.0, size=3)
            img = np.stack([(ramp + p) % 1.0 for p in phases])
        elif source == "checkerboard":
            cell = int(rng.choice([c for c in (1, 2, 4, 8) if c <= size // 2] or [1]))
            pattern = ((ys // cell + xs // cell) % 2).astype(np.float64)
            lo = rng.uniform(0.0, 0.4, size=3)
            hi = rng.uniform(0.6, 1.0, size=3)
            img = np.stack([lo[ch] + (hi[ch] - lo[ch]) * pattern for ch in range(3)])
        else:  # gaussian-noise
            img = np.clip(rng.normal(0.5, 0.2, size=(3, size, size)), 0.0, 1.0)
        images.append(img.astype(dtype))
    return images


def load_image_dir(path: str | Path, dtype=np.float64) -> list[np.ndarray]:
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise ValueError(f"no .ppm files in {path}")
    return [load_ppm(f, dtype=dtype) for f in files]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class KindSummary:
    """Aggregate metrics for one attention kind."""

    kind: str
    mean_mse: float
    mean_ssim: float
    v_score: float
    records: list[dict] = field(default_factory=list)


def _scale_weights_inplace(block: AttentionBlock, factor: float) -> None:
    # deliberately applied after normalization: this is the bound-breaking stress
    block.focus.weight = block.focus.weight * factor
    if block.last is not None:
        block.last.weight = block.last.weight * factor


def _squeeze_levels(x: np.ndarray, levels: int) -> np.ndarray:
    for _ in range(levels):
        x = squeeze(x)
    return x


def _unsqueeze_levels(x: np.ndarray, levels: int) -> np.ndarray:
    for _ in range(levels):
        x = unsqueeze(x)
    return x


def _run_one_image(
    index: int,
    image: np.ndarray,
    block: AttentionBlock,
    cfg: ExperimentConfig,
    out_dir: Path,
) -> dict:
    record: dict = {"index": index, "kind": block.kind}
    if cfg.variant != "invertible":
        record["note"] = "no invertibility contract"
    try:
        working = _squeeze_levels(image, cfg.squeeze_levels)
        inv_cfg = InversionConfig(max_iters=cfg.iters, early_stop_tol=cfg.tol)
        xhat, report = roundtrip(working, block, inv_cfg)
        ssim = None
        if xhat is not None:
            recon = np.clip(_unsqueeze_levels(xhat, cfg.squeeze_levels), 0.0, 1.0)
            window = min(8, image.shape[1], image.shape[2])
            ssim = compute_ssim(image, recon, window=window)
            save_ppm(recon, out_dir / f"recon_{block.kind}_{index:03d}.ppm")
        record = report_to_record(report, **record)
        record["ssim"] = ssim
        if cfg.logdet and cfg.variant == "invertible":
            _attach_logdet(record, working, block, cfg, index)
    except (InvariantViolation, FloatingPointError, ValueError) as err:
        record["error"] = f"{type(err).__name__}: {err}"
        record.setdefault("mse", float("inf"))
        record.setdefault("converged", False)
        record.setdefault("diverged", True)
    return record


def _attach_logdet(
    record: dict, working: np.ndarray, block: AttentionBlock, cfg: ExperimentConfig, index: int
) -> None:
    dim = working.size
    if dim > 256:
        record["logdet_note"] = f"d={dim} exceeds dense-oracle budget"
        return
    ld_cfg = LogDetConfig(
        series_terms=cfg.logdet_terms,
        hutchinson_samples=cfg.logdet_samples,
        seed=cfg.seed * 100003 + index,
    )
    estimate = logdet_series(block, working, ld_cfg)
    oracle = brute_force_logdet(block, working)
    record["logdet_estimate"] = estimate.value
    record["logdet_oracle"] = oracle
    denom = abs(oracle)
    record["logdet_rel_err"] = abs(estimate.value - oracle) / denom if denom > 0 else None
    if estimate.divergence_warning:
        record["logdet_warning"] = "per-term magnitudes not decaying"


def _aggregate(kind: str, records: list[dict]) -> KindSummary:
    mses = [r.get("mse") for r in records]
    mses = [np.inf if m is None else float(m) for m in mses]
    ssims = [r.get("ssim") for r in records if r.get("ssim") is not None]
    mean_mse = float(np.mean(mses)) if mses else np.inf
    mean_ssim = float(np.mean(ssims)) if ssims else float("nan")
    v_score = float(np.mean([m < _VSCORE_MSE_LIMIT for m in mses])) if mses else 0.0
    return KindSummary(kind=kind, mean_mse=mean_mse, mean_ssim=mean_ssim, v_score=v_score, records=records)


def format_summary(summaries: list[KindSummary]) -> str:
    """Aligned table (kind | MSE | SSIM | V-score); stable bytes for a fixed run."""
    header = f"{'kind':<12} | {'MSE':>14} | {'SSIM':>9} | {'V-score':>8}"
    rule = "-" * len(header)
    lines = [header, rule]
    for s in summaries:
        lines.append(
            f"{s.kind:<12} | {s.mean_mse:>14.6f} | {s.mean_ssim:>9.6f} | {100.0 * s.v_score:>7.3f}%"
        )
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig) -> int:
    """Execute the configured run; returns the process exit code."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = cfg.dtype
    if cfg.image_dir is not None:
        images = load_image_dir(cfg.image_dir, dtype=dtype)
    else:
        images = synthetic_batch(cfg.synthetic, cfg.size, cfg.batch, cfg.seed, dtype=dtype)
    for img in images:
        if img.shape[1] != img.shape[2] or img.shape[1] > _MAX_IMAGE_SIZE:
            raise ValueError(f"image shape {img.shape} outside the supported square sizes")

    channels = 3 * 4**cfg.squeeze_levels
    summaries: list[KindSummary] = []
    all_records: list[dict] = []
    for kind_index, kind in enumerate(cfg.kinds):
        block = build_block(
            kind,
            cfg.variant,
            channels,
            c=cfg.c,
            phi=cfg.phi,
            seed=cfg.seed * 1009 + kind_index,
            dtype=dtype,
            logit_scale=cfg.stress_logit_scale,
            column_sum_target=cfg.column_sum_target,
            global_sum=cfg.global_sum,
        )
        if cfg.stress_weight_scale != 1.0:
            _scale_weights_inplace(block, cfg.stress_weight_scale)
        save_block(block, out_dir / f"block_{kind}.json")
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(
                pool.map(
                    lambda pair: _run_one_image(pair[0], pair[1], block, cfg, out_dir),
                    enumerate(images),
                )
            )
        summaries.append(_aggregate(kind, records))
        all_records.extend(records)

    write_records(out_dir / "records.jsonl", all_records)
    table = format_summary(summaries)
    (out_dir / "summary.txt").write_text(table)
    print(table, end="")

    if cfg.variant == "invertible":
        failing = [s for s in summaries if s.v_score < cfg.vscore_floor]
        if failing:
            for s in failing:
                print(f"V-score floor violated: {s.kind} at {100 * s.v_score:.3f}%")
            return EXIT_INVARIANT
    return EXIT_OK
