"""Synthetic backends with known ground truth, driving the real process.

A simulated generator emits a wrapped body whose first line records the
latent truth of its lineage::

    -- sim lineage=<hex> fv=<0|1> lp=<float> mc=<float> fq=<float>

Bodies that should fail the checker end in ``by sorry``, so the standard
placeholder blocklist plus a pass-by-default mock checker yields exactly
the latent FV bit.

All randomness comes from Philox streams keyed by
``SeedSequence(entropy=world.seed, spawn_key=<hashed call path>)``. A call
path names the purpose (generator sample, judge noise per dimension, ...)
plus the request identity, so results do not depend on call order or
thread scheduling.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Mapping, Sequence

import numpy as np

from .backends import ChatRequest
from .generators import GeneratorSpec
from .judges import ASPECTS, DELIMITER, JudgeAspect, SoftAssessment
from .model import (
    SOFT_DIMENSIONS,
    DimensionScores,
    Formalization,
    MarginConfig,
    NLTheorem,
    Role,
    RunTrace,
    SENTINEL_ESTIMATE,
    Verdict,
)
from .objective import composite_objective, lower_confidence_bound
from .process import MonotonicProcess, ProcessConfig, incumbent_from_records
from .prover import MockProver, ProverGate

_STD = NormalDist()
_HEADER = re.compile(
    r"-- sim lineage=(?P<lineage>[0-9a-f]+) fv=(?P<fv>[01]) "
    r"lp=(?P<lp>\S+) mc=(?P<mc>\S+) fq=(?P<fq>\S+)$",
    re.MULTILINE,
)


def _h32(part: Any) -> int:
    return int.from_bytes(hashlib.blake2b(str(part).encode(), digest_size=4).digest(), "big")


def stream(seed: int, *path: Any) -> np.random.Generator:
    """Independent Philox generator for a named call path."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(_h32(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def truncated_normal_ppf(u: float, mu: float, sigma: float) -> float:
    """Quantile ``u`` of N(mu, sigma^2) truncated to [0, 1]."""
    if sigma == 0:
        return mu
    lo = _STD.cdf((0.0 - mu) / sigma)
    hi = _STD.cdf((1.0 - mu) / sigma)
    p = lo + u * (hi - lo)
    p = min(max(p, 1e-300), 1.0 - 1e-16)
    x = mu + sigma * _STD.inv_cdf(p)
    return min(1.0, max(0.0, x))


def noise_quantile(
    sigma: float,
    delta: float,
    mu: float | None = None,
    mu_range: tuple[float, float] = (0.0, 1.0),
    grid: int = 2001,
) -> float:
    """One-sided ``1 - delta`` quantile of the judge error ``estimate - truth``.

    Truncation makes the error distribution depend on the truth ``mu``.
    With ``mu`` given the quantile is exact; otherwise the largest value
    over a grid on ``mu_range`` is returned, which bounds every ``mu``
    in the range up to grid resolution.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if sigma == 0:
        return 0.0
    if mu is not None:
        return truncated_normal_ppf(1.0 - delta, mu, sigma) - mu
    lo, hi = mu_range
    mus = [lo] if hi == lo else [lo + (hi - lo) * k / (grid - 1) for k in range(grid)]
    return max(truncated_normal_ppf(1.0 - delta, m, sigma) - m for m in mus)


@dataclass(frozen=True)
class GeneratorProfile:
    """Behaviour of one simulated generator.

    Children inherit the parent's latent scores plus ``drift`` plus
    Gaussian ``jitter``; a fresh (OOG) proposal draws its latent scores
    uniformly from the world's ``base_range``. ``resample`` False keeps an
    OOG's draw fixed across steps.
    """

    name: str
    role: Role
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    jitter: float = 0.0
    pass_prob: float = 1.0
    feedback_dims: tuple[str, ...] = ()
    resample: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.pass_prob <= 1.0:
            raise ValueError("pass_prob must lie in [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.role is Role.REG and not self.feedback_dims:
            object.__setattr__(self, "feedback_dims", ("ALL",))


@dataclass(frozen=True)
class SimWorld:
    seed: int
    generators: tuple[GeneratorProfile, ...]
    noise_sigma: tuple[float, float, float] = (0.05, 0.05, 0.05)
    base_range: tuple[float, float] = (0.2, 0.8)
    inject_perfect_at: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "generators", tuple(self.generators))
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if any(s < 0 for s in self.noise_sigma):
            raise ValueError("noise sigma must be >= 0")
        lo, hi = self.base_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("base_range must satisfy 0 <= lo <= hi <= 1")
        if not any(g.role is Role.OOG for g in self.generators):
            raise ValueError("a world needs at least one OOG profile")

    @classmethod
    def default(cls, seed: int, **overrides) -> SimWorld:
        gens = (
            GeneratorProfile("oog", Role.OOG, jitter=0.0, pass_prob=0.6),
            GeneratorProfile("fvr", Role.FVR, drift=(0.0, 0.0, -0.02), jitter=0.03, pass_prob=0.85),
            GeneratorProfile("reg-lp-a", Role.REG, (0.06, 0.02, 0.0), 0.05, 0.7, ("LP",)),
            GeneratorProfile("reg-lp-b", Role.REG, (0.04, 0.03, 0.0), 0.05, 0.7, ("LP",)),
            GeneratorProfile("reg-fq", Role.REG, (0.0, 0.01, 0.06), 0.05, 0.7, ("FQ",)),
        )
        return cls(seed, overrides.pop("generators", gens), **overrides)

    def profile(self, name: str) -> GeneratorProfile:
        for g in self.generators:
            if g.name == name:
                return g
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "noise_sigma": list(self.noise_sigma),
            "base_range": list(self.base_range),
            "inject_perfect_at": self.inject_perfect_at,
            "generators": [
                {"name": g.name, "role": g.role.value, "drift": list(g.drift), "jitter": g.jitter,
                 "pass_prob": g.pass_prob, "feedback_dims": list(g.feedback_dims),
                 "resample": g.resample}
                for g in self.generators
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SimWorld:
        kwargs: dict[str, Any] = {}
        if "noise_sigma" in d:
            s = d["noise_sigma"]
            kwargs["noise_sigma"] = tuple(s) if isinstance(s, (list, tuple)) else (float(s),) * 3
        if "base_range" in d:
            kwargs["base_range"] = tuple(d["base_range"])
        if d.get("inject_perfect_at") is not None:
            kwargs["inject_perfect_at"] = int(d["inject_perfect_at"])
        if "generators" in d:
            kwargs["generators"] = tuple(
                GeneratorProfile(
                    g["name"], Role(g["role"]), tuple(g.get("drift", (0.0, 0.0, 0.0))),
                    float(g.get("jitter", 0.0)), float(g.get("pass_prob", 1.0)),
                    tuple(g.get("feedback_dims", ())), bool(g.get("resample", True)),
                )
                for g in d["generators"]
            )
        return cls.default(int(d.get("seed", 0)), **kwargs)


@dataclass(frozen=True)
class Latent:
    fv: int
    lp: float
    mc: float
    fq: float

    @property
    def true_objective(self) -> float:
        return composite_objective(self.fv, self.lp, self.mc, self.fq)

    def soft(self) -> tuple[float, float, float]:
        return (self.lp, self.mc, self.fq)


def parse_latent(text: str) -> Latent | None:
    m = _HEADER.search(text)
    if m is None:
        return None
    return Latent(int(m["fv"]), float(m["lp"]), float(m["mc"]), float(m["fq"]))


def render_body(lineage: str, latent: Latent) -> str:
    proof = "trivial" if latent.fv else "by sorry"
    return (f"-- sim lineage={lineage} fv={latent.fv} lp={latent.lp!r} "
            f"mc={latent.mc!r} fq={latent.fq!r}\n"
            f"theorem sim_{lineage} : True := {proof}")


def _clip(v: float) -> float:
    return min(1.0, max(0.0, v))


def child_latent(profile: GeneratorProfile, parent: tuple[float, float, float],
                 rng: np.random.Generator) -> Latent:
    jit = rng.normal(0.0, 1.0, 3) * profile.jitter
    fv = int(rng.random() < profile.pass_prob)
    soft = [_clip(p + d + float(j)) for p, d, j in zip(parent, profile.drift, jit)]
    return Latent(fv, *soft)


class SimulatedChatBackend:
    """Generator backend for one profile; answers with a wrapped synthetic body."""

    def __init__(self, world: SimWorld, profile: GeneratorProfile):
        self.world = world
        self.profile = profile
        first_oog = next(g for g in world.generators if g.role is Role.OOG)
        self._injects = profile.name == first_oog.name

    def complete(self, request: ChatRequest) -> str:
        meta = dict(request.meta)
        step = int(meta.get("step", 0))
        sample = int(meta.get("sample", 0))
        if self.profile.role is Role.OOG and not self.profile.resample:
            path_meta = {"theorem": meta.get("theorem"), "generator": self.profile.name}
        else:
            path_meta = meta
        key = json.dumps(path_meta, sort_keys=True, default=str)
        rng = stream(self.world.seed, "generate", key)
        lineage = hashlib.blake2b(f"{self.world.seed}|{key}".encode(), digest_size=6).hexdigest()
        parent = parse_latent(request.user) if self.profile.role is not Role.OOG else None
        if self._injects and self.world.inject_perfect_at == step and sample == 0:
            latent = Latent(1, 1.0, 1.0, 1.0)
        elif parent is None:
            lo, hi = self.world.base_range
            soft = rng.uniform(lo, hi, 3)
            fv = int(rng.random() < self.profile.pass_prob)
            latent = Latent(fv, *(float(s) for s in soft))
        else:
            latent = child_latent(self.profile, parent.soft(), rng)
        return f"{DELIMITER}\n{render_body(lineage, latent)}\n{DELIMITER}"


class SimulatedJudge:
    """Soft judge reporting truncated-Gaussian noisy estimates of the latent scores.

    Noise is a deterministic function of (world seed, body, dimension), so
    identical bodies always receive identical estimates.
    """

    def __init__(self, world: SimWorld, registry: Sequence[JudgeAspect] = ASPECTS):
        self.world = world
        self.registry = tuple(registry)
        self.calls = 0

    def estimates(self, body: str) -> tuple[float, float, float]:
        latent = parse_latent(body)
        if latent is None:
            raise ValueError("body carries no simulation header")
        fp = hashlib.sha256(body.encode()).hexdigest()
        out = []
        for dim, mu, sigma in zip(SOFT_DIMENSIONS, latent.soft(), self.world.noise_sigma):
            u = float(stream(self.world.seed, "judge", dim.value, fp).random())
            out.append(truncated_normal_ppf(u, mu, sigma))
        return (out[0], out[1], out[2])

    def assess(self, theorem: NLTheorem, x: Formalization) -> SoftAssessment:
        self.calls += 1
        est = dict(zip(SOFT_DIMENSIONS, self.estimates(x.body)))
        verdicts = tuple(
            Verdict(a.dimension, a.aspect_id, int(est[a.dimension] >= 0.5),
                    f"Simulated {a.dimension.value} estimate {est[a.dimension]:.4f}.")
            for a in self.registry
        )
        return SoftAssessment(est[SOFT_DIMENSIONS[0]], est[SOFT_DIMENSIONS[1]],
                              est[SOFT_DIMENSIONS[2]], verdicts)


SIM_THEOREM = NLTheorem("sim-0", "A synthetic statement.", "A synthetic proof.")


@dataclass
class SimulationResult:
    trace: RunTrace
    true_objective: list[float]
    lcb: list[float] = field(default_factory=list)


def build_sim_process(
    world: SimWorld,
    max_steps: int = 6,
    epsilon: float = 0.0,
    margins: MarginConfig | None = None,
) -> MonotonicProcess:
    specs = {Role.OOG: [], Role.FVR: [], Role.REG: []}
    for g in world.generators:
        specs[g.role].append(GeneratorSpec(
            g.name, g.role, SimulatedChatBackend(world, g),
            g.feedback_dims if g.role is Role.REG else (), temperature=0.7,
        ))
    cfg = ProcessConfig(
        tuple(specs[Role.OOG]), tuple(specs[Role.FVR]), tuple(specs[Role.REG]),
        max_steps=max_steps, epsilon=epsilon, margins=margins or MarginConfig(), step_retries=0,
    )
    return MonotonicProcess(cfg, ProverGate(MockProver(default_pass=True)), SimulatedJudge(world))


def incumbent_truths(trace: RunTrace, margins: MarginConfig | None = None) -> tuple[list[float], list[float]]:
    """True objective and LCB of the incumbent after every step (sentinel: -1)."""
    margins = margins or MarginConfig()
    truths, lcbs = [], []
    for i in range(len(trace.records)):
        inc = incumbent_from_records(trace.records[: i + 1])
        if inc.candidate is None:
            truths.append(SENTINEL_ESTIMATE)
            lcbs.append(SENTINEL_ESTIMATE)
            continue
        latent = parse_latent(inc.body)
        truths.append(latent.true_objective)
        lcbs.append(lower_confidence_bound(inc.candidate.scores, margins))
    return truths, lcbs


def simulate_process(
    world: SimWorld,
    max_steps: int = 6,
    epsilon: float = 0.0,
    margins: MarginConfig | None = None,
    theorem: NLTheorem = SIM_THEOREM,
) -> SimulationResult:
    """Run the real process against simulated backends; also report ground truth."""
    process = build_sim_process(world, max_steps, epsilon, margins)
    trace = process.run_theorem(theorem)
    truths, lcbs = incumbent_truths(trace, margins)
    return SimulationResult(trace, truths, lcbs)


def simulate_children(
    world: SimWorld, generator: str, parent: Latent, n: int
) -> list[DimensionScores]:
    """``n`` independent children of ``parent`` under one profile, as true scores."""
    profile = world.profile(generator)
    out = []
    for i in range(n):
        lat = child_latent(profile, parent.soft(), stream(world.seed, "children", generator, i))
        out.append(DimensionScores(lat.fv, lat.lp, lat.mc, lat.fq))
    return out


def coverage_margins(world: SimWorld, delta: float = 0.05, exact_mu: float | None = None) -> MarginConfig:
    """Margins equal to the world's one-sided noise quantiles."""
    ms = [noise_quantile(s, delta, exact_mu, world.base_range) for s in world.noise_sigma]
    return MarginConfig(delta, delta, delta, *ms)


def monte_carlo_lcb_coverage(world: SimWorld, margins: MarginConfig, n: int) -> float:
    """Fraction of ``n`` judged FV=1 draws whose LCB does not exceed the true objective."""
    if n < 100:
        raise ValueError("n must be at least 100 for a meaningful coverage estimate")
    lo, hi = world.base_range
    truth = stream(world.seed, "coverage", "latent").uniform(lo, hi, (n, 3))
    noise_u = [stream(world.seed, "coverage", "noise", d.value).random(n) for d in SOFT_DIMENSIONS]
    ms = margins.margins
    covered = 0
    for k in range(n):
        total_est = 0.0
        for i in range(3):
            mu = float(truth[k, i])
            total_est += truncated_normal_ppf(float(noise_u[i][k]), mu, world.noise_sigma[i]) - ms[i]
        if total_est / 3.0 <= float(truth[k].sum()) / 3.0 + 1e-12:
            covered += 1
    return covered / n


def noise_correlations(world: SimWorld, n: int = 10_000, mu: float = 0.5) -> np.ndarray:
    """Correlation matrix of judge errors across LP/MC/FQ over ``n`` distinct bodies."""
    judge = SimulatedJudge(world)
    errs = np.empty((n, 3))
    for k in range(n):
        body = render_body(f"{k:012x}", Latent(1, mu, mu, mu))
        errs[k] = np.array(judge.estimates(body)) - mu
    return np.corrcoef(errs, rowvar=False)


__all__ = [
    "GeneratorProfile", "Latent", "SimWorld", "SimulatedChatBackend", "SimulatedJudge",
    "SimulationResult", "build_sim_process", "coverage_margins", "incumbent_truths",
    "monte_carlo_lcb_coverage", "noise_correlations", "noise_quantile", "parse_latent",
    "render_body", "simulate_children", "simulate_process", "stream", "truncated_normal_ppf",
]
