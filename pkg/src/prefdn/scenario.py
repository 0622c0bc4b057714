"""Forced-choice study material: randomized candidate renderings per frame.

Every scenario shows Q variants of one frame, each denoised with
parameters drawn around configurable center values. Everything is keyed
by integer seeds so a session can be regenerated bitwise from its
manifest without storing any candidate pixels.

Also provides a simulated selector with hidden preferred parameters, so
the whole study loop can run without a human.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, MissingDataError
from .image import as_image, read_image
from .loss import ChoiceRecord
from .pyramid import DEFAULT_BOUNDS, ParamBounds, PyramidParams, denoise

DEFAULT_CENTER = PyramidParams(sigmas=(1.0, 2.0, 4.0), epsilons=(0.02, 0.05, 0.1))
DEFAULT_SPREAD = 0.75
DEFAULT_Q = 4

# seed-stream salts, so distinct draws never share an rng stream
_SALT_SCENARIO = 11
_SALT_CHOICE = 13


@dataclass(frozen=True)
class ParamSampler:
    """Uniform multiplicative jitter around center parameter values.

    Each component is drawn from [c*(1-spread), c*(1+spread)] and clamped
    to the bounds; the multiplicative form keeps sigmas positive.
    """

    center: PyramidParams = DEFAULT_CENTER
    spread: float = DEFAULT_SPREAD
    bounds: ParamBounds = DEFAULT_BOUNDS

    def __post_init__(self):
        if self.spread < 0:
            raise InputError(f"spread must be >= 0, got {self.spread}")


def sample_params(sampler: ParamSampler, seed) -> PyramidParams:
    """Draw one parameter vector; deterministic per seed."""
    rng = np.random.default_rng(seed)
    b = sampler.bounds
    values = []
    for c in sampler.center.sigmas + sampler.center.epsilons:
        lo = c * (1.0 - sampler.spread)
        hi = c * (1.0 + sampler.spread)
        values.append(rng.uniform(lo, hi))
    sigmas = tuple(min(max(v, b.sigma_min), b.sigma_max) for v in values[:3])
    epsilons = tuple(min(max(v, 0.0), b.eps_max) for v in values[3:])
    return PyramidParams(sigmas, epsilons)


@dataclass(frozen=True)
class CandidateSet:
    """One frame's Q rendered variants and the parameters that made them."""

    frame_id: str
    source: np.ndarray
    candidates: tuple[np.ndarray, ...]
    gen_params: tuple[PyramidParams, ...]
    seed: int

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)


def generate_candidate_set(
    img: np.ndarray,
    frame_id: str,
    sampler: ParamSampler,
    q: int = DEFAULT_Q,
    seed: int = 0,
) -> CandidateSet:
    """Render Q independently jittered variants of one frame."""
    if q < 2:
        raise InputError(f"need at least 2 candidates, got {q}")
    img = as_image(img)
    params = [
        sample_params(sampler, np.random.SeedSequence([seed, qi]))
        for qi in range(q)
    ]
    candidates = tuple(denoise(img, p, sampler.bounds) for p in params)
    return CandidateSet(
        frame_id=frame_id,
        source=img,
        candidates=candidates,
        gen_params=tuple(params),
        seed=seed,
    )


@dataclass(frozen=True)
class OracleUser:
    """Simulated selector with hidden preferred parameters.

    Picks the candidate closest (squared error) to its own ideal rendering
    of the frame; with probability decision_noise it picks uniformly at
    random instead.
    """

    hidden_params: PyramidParams
    decision_noise: float = 0.0
    user_id: str = "oracle"

    def __post_init__(self):
        if not 0.0 <= self.decision_noise <= 1.0:
            raise InputError(
                f"decision_noise must be in [0, 1], got {self.decision_noise}"
            )


def oracle_choose(
    cset: CandidateSet,
    oracle: OracleUser,
    seed,
    timestamp: float = 0.0,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> ChoiceRecord:
    """Answer one frame as the simulated user; ties break to the lowest index."""
    rng = np.random.default_rng(seed)
    roll = rng.random()
    if roll < oracle.decision_noise:
        selected = int(rng.integers(cset.num_candidates))
    else:
        target = denoise(cset.source, oracle.hidden_params, bounds)
        errors = [float(np.mean((target - c) ** 2)) for c in cset.candidates]
        selected = int(np.argmin(errors))
    return ChoiceRecord(
        frame_id=cset.frame_id,
        selected=selected,
        num_candidates=cset.num_candidates,
        timestamp=timestamp,
        user_id=oracle.user_id,
    )


def scenario_seed(master_seed: int, index: int) -> int:
    """Stable per-scenario seed fan-out from the master seed."""
    ss = np.random.SeedSequence([int(master_seed), _SALT_SCENARIO, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def choice_seed(master_seed: int, index: int) -> int:
    """Stable per-scenario seed for the simulated selector's randomness."""
    ss = np.random.SeedSequence([int(master_seed), _SALT_CHOICE, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_session(
    images,
    scenarios_per_image: int,
    sampler: ParamSampler,
    q: int = DEFAULT_Q,
    master_seed: int = 0,
    frame_prefix: str = "frame",
) -> list[CandidateSet]:
    """Fan one seed out into scenarios_per_image candidate sets per image."""
    images = list(images)
    if not images:
        raise InputError("image list is empty")
    if scenarios_per_image < 1:
        raise InputError(
            f"scenarios_per_image must be >= 1, got {scenarios_per_image}"
        )
    sets = []
    index = 0
    for img in images:
        for _ in range(scenarios_per_image):
            frame_id = f"{frame_prefix}-{index:04d}"
            sets.append(
                generate_candidate_set(
                    img, frame_id, sampler, q, scenario_seed(master_seed, index)
                )
            )
            index += 1
    return sets


@dataclass(frozen=True)
class ScenarioRef:
    """Manifest entry: everything needed to regenerate one candidate set."""

    frame_id: str
    image_path: str
    image_index: int
    seed: int


@dataclass
class SessionManifest:
    """On-disk description of a session; candidates are regenerated, not stored."""

    q: int
    master_seed: int
    sampler: ParamSampler
    scenarios: list[ScenarioRef] = field(default_factory=list)
    downsample: int = 1

    def frame_ids(self) -> list[str]:
        return [s.frame_id for s in self.scenarios]

    def to_json_dict(self) -> dict:
        b = self.sampler.bounds
        return {
            "format_version": 1,
            "q": self.q,
            "master_seed": self.master_seed,
            "downsample": self.downsample,
            "sampler": {
                "center_sigmas": list(self.sampler.center.sigmas),
                "center_epsilons": list(self.sampler.center.epsilons),
                "spread": self.sampler.spread,
                "bounds": {
                    "sigma_min": b.sigma_min,
                    "sigma_max": b.sigma_max,
                    "eps_max": b.eps_max,
                },
            },
            "scenarios": [
                {
                    "frame_id": s.frame_id,
                    "image_path": s.image_path,
                    "image_index": s.image_index,
                    "seed": s.seed,
                }
                for s in self.scenarios
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SessionManifest":
        smp = obj["sampler"]
        bounds = ParamBounds(**smp["bounds"])
        sampler = ParamSampler(
            center=PyramidParams(
                tuple(smp["center_sigmas"]), tuple(smp["center_epsilons"])
            ),
            spread=smp["spread"],
            bounds=bounds,
        )
        return cls(
            q=int(obj["q"]),
            master_seed=int(obj["master_seed"]),
            sampler=sampler,
            downsample=int(obj.get("downsample", 1)),
            scenarios=[
                ScenarioRef(
                    frame_id=s["frame_id"],
                    image_path=s["image_path"],
                    image_index=int(s["image_index"]),
                    seed=int(s["seed"]),
                )
                for s in obj["scenarios"]
            ],
        )


def save_manifest(manifest: SessionManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json_dict(), fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> SessionManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return SessionManifest.from_json_dict(json.load(fh))


def build_manifest(
    image_paths,
    scenarios_per_image: int,
    sampler: ParamSampler,
    q: int = DEFAULT_Q,
    master_seed: int = 0,
    frame_prefix: str = "frame",
) -> SessionManifest:
    """Lay out a session over image files, mirroring build_session's seeding."""
    image_paths = [str(p) for p in image_paths]
    if not image_paths:
        raise InputError("image path list is empty")
    if scenarios_per_image < 1:
        raise InputError(
            f"scenarios_per_image must be >= 1, got {scenarios_per_image}"
        )
    scenarios = []
    index = 0
    for i, path in enumerate(image_paths):
        for _ in range(scenarios_per_image):
            scenarios.append(
                ScenarioRef(
                    frame_id=f"{frame_prefix}-{index:04d}",
                    image_path=path,
                    image_index=i,
                    seed=scenario_seed(master_seed, index),
                )
            )
            index += 1
    return SessionManifest(
        q=q, master_seed=master_seed, sampler=sampler, scenarios=scenarios
    )


class ScenarioResolver:
    """Regenerates candidate sets from a manifest on demand, with caching.

    Image paths are resolved relative to `base_dir` when they are not
    absolute. Acts as the frame_id -> CandidateSet resolver consumed by
    the trainer and evaluator.
    """

    def __init__(self, manifest: SessionManifest, base_dir=None):
        self.manifest = manifest
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self._by_frame = {s.frame_id: s for s in manifest.scenarios}
        self._images: dict[str, np.ndarray] = {}
        self._sets: dict[str, CandidateSet] = {}

    def frame_ids(self) -> list[str]:
        return self.manifest.frame_ids()

    def _image(self, path: str) -> np.ndarray:
        if path not in self._images:
            p = Path(path)
            if not p.is_absolute() and self.base_dir is not None:
                p = self.base_dir / p
            self._images[path] = read_image(p)
        return self._images[path]

    def __contains__(self, frame_id: str) -> bool:
        return frame_id in self._by_frame

    def __call__(self, frame_id: str) -> CandidateSet:
        if frame_id not in self._by_frame:
            raise MissingDataError(f"unknown frame {frame_id!r}")
        if frame_id not in self._sets:
            ref = self._by_frame[frame_id]
            self._sets[frame_id] = generate_candidate_set(
                self._image(ref.image_path),
                ref.frame_id,
                self.manifest.sampler,
                self.manifest.q,
                ref.seed,
            )
        return self._sets[frame_id]


def simulate_choices(
    resolver,
    frame_ids,
    oracle: OracleUser,
    master_seed: int = 0,
) -> list[ChoiceRecord]:
    """Answer every listed frame with the simulated selector."""
    records = []
    for index, frame_id in enumerate(frame_ids):
        cset = resolver(frame_id)
        records.append(
            oracle_choose(cset, oracle, choice_seed(master_seed, index))
        )
    return records


def synthetic_phantom(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Structured test image: ramp, blobs, sharp disks, stripes.

    Mixes smooth regions with crisp edges and fine texture so blur widths
    and shrinkage thresholds have visibly different consequences.
    """
    if width < 1 or height < 1:
        raise InputError(f"phantom size must be >= 1x1, got {width}x{height}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    xx /= max(width - 1, 1)
    yy /= max(height - 1, 1)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    img = 0.45 + 0.22 * (np.cos(angle) * xx + np.sin(angle) * yy)
    for _ in range(3):  # soft blobs
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        radius = rng.uniform(0.08, 0.2)
        amp = rng.uniform(-0.2, 0.25)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        img += amp * np.exp(-d2 / (2.0 * radius * radius))
    for _ in range(2):  # hard-edged disks
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        radius = rng.uniform(0.06, 0.15)
        amp = rng.uniform(-0.25, 0.3)
        img += amp * (((xx - cx) ** 2 + (yy - cy) ** 2) < radius * radius)
    theta = rng.uniform(0.0, np.pi)
    freq = rng.uniform(5.0, 11.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    img += 0.05 * np.sin(
        2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
    )
    return np.clip(img, 0.02, 0.98)
