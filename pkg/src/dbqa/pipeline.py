"""Configuration-driven experiment runner.

One trial trains a warm-start circuit for a seed, conjugates the input
Hamiltonian by it, applies up to three refinement steps (exact DBI or GCI)
and records energies, fidelity certificates and gate ledgers per stage.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .ansatz import HEA, HWP, AnsatzKernel, adam_train, build_hea, build_hwp
from .circuit import CircuitIR, lower_rbs
from .compiling import TrotterPlan, compile_diagonal_ising, emit_qasm, lower_plan, trotterize
from .cost import CostLedger, count_cz
from .dbi import CostKind, DbiState, dbi_step, optimize_d
from .errors import ConfigError
from .gci import GciPlan, GciStepSpec, GciVariant, count_queries, gci_advance, optimize_gci_step
from .hamiltonians import IsingDiagonalSpec, J1J2Spec, XxzSpec, build_j1j2, build_xxz
from .metrics import SpectrumFixture, TrialRecord, exact_diag, fidelity_bound, median_mad, rel_diff
from .qcore import PauliSum, conserves_weight, pauli_to_sparse, run_circuit

log = logging.getLogger(__name__)

WORKERS_ENV = "DBQA_WORKERS"


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    L: int
    delta: float | None = None
    j1: float = 1.0
    j2: float = 0.2

    def hamiltonian(self) -> PauliSum:
        if self.kind == "xxz":
            return build_xxz(XxzSpec(self.L, self.delta))
        return build_j1j2(J1J2Spec(self.L, self.j1, self.j2))


@dataclass(frozen=True)
class AnsatzConfig:
    kind: str = "hwp"
    layers: int = 3
    epochs: int = 500
    lr: float = 0.05


@dataclass(frozen=True)
class TrotterConfig:
    order: int = 2
    M: int = 1


@dataclass(frozen=True)
class DbqaConfig:
    mode: str = "gci"
    variant: str = "RHOPF"
    steps: int = 1
    optimizer: str = "powell"
    budget: int = 2000
    cost: str = "energy"
    s_max: float = 0.05
    r_max: float = 0.5
    guess_scale: float = 0.1
    trotter: TrotterConfig = TrotterConfig()
    trotter_gap: bool = True


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/out"
    emit_qasm: bool = False
    figures: bool = True


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    ansatz: AnsatzConfig = AnsatzConfig()
    seeds: tuple[int, ...] | int = 10
    master_seed: int = 0
    checkpoints: tuple[int, ...] = ()
    dbqa: DbqaConfig = DbqaConfig()
    outputs: OutputConfig = OutputConfig()
    label: str = ""

    def trial_seeds(self) -> list[int]:
        """Explicit seed list, or seeds derived from the master seed and trial index."""
        if isinstance(self.seeds, tuple):
            return list(self.seeds)
        return [int(np.random.SeedSequence([self.master_seed, i]).generate_state(1)[0]) for i in range(self.seeds)]

    def train_epochs(self) -> list[int]:
        """Epochs at which refinement starts; the final epoch when no checkpoints are set."""
        return sorted(set(self.checkpoints)) if self.checkpoints else [self.ansatz.epochs]

    def describe(self) -> str:
        if self.label:
            return self.label
        m = self.model
        return f"{m.kind}-L{m.L}-{self.ansatz.kind}{self.ansatz.layers}-{self.dbqa.mode}"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SCHEMA: dict[str, Any] = {
    "model": {"kind": str, "L": int, "delta": float, "j1": float, "j2": float},
    "ansatz": {"kind": str, "layers": int, "epochs": int, "lr": float},
    "seeds": None,
    "master_seed": int,
    "checkpoints": list,
    "dbqa": {
        "mode": str, "variant": str, "steps": int, "optimizer": str, "budget": int, "cost": str,
        "s_max": float, "r_max": float, "guess_scale": float,
        "trotter": {"order": int, "M": int}, "trotter_gap": bool,
    },
    "outputs": {"dir": str, "emit_qasm": bool, "figures": bool},
    "label": str,
}


def _check_keys(node: dict, schema: dict, path: str) -> None:
    for key in node:
        if key not in schema:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"unknown key {where!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(node[key], dict):
                raise ConfigError(f"field {path + '.' if path else ''}{key} must be a mapping")
            _check_keys(node[key], sub, f"{path}.{key}" if path else key)


def _typed(node: dict, key: str, kind, path: str, default=None):
    if key not in node or node[key] is None:
        return default
    v = node[key]
    name = f"{path}.{key}"
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"field {name} must be an integer, got {v!r}")
    elif kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"field {name} must be a number, got {v!r}")
        v = float(v)
    elif kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"field {name} must be true or false, got {v!r}")
    elif kind is str:
        if not isinstance(v, str):
            raise ConfigError(f"field {name} must be a string, got {v!r}")
    return v


def validate_config(text: str) -> RunConfig:
    """Parse a YAML run configuration, apply defaults and range checks."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}{getattr(exc, 'problem', None) or exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    if isinstance(raw.get("ansatz"), str):
        raw["ansatz"] = {"kind": raw["ansatz"]}
    _check_keys(raw, _SCHEMA, "")
    if "model" not in raw:
        raise ConfigError("field model is required")

    m = raw["model"]
    kind = _typed(m, "kind", str, "model")
    if kind not in ("xxz", "j1j2"):
        raise ConfigError(f"field model.kind must be 'xxz' or 'j1j2', got {kind!r}")
    L = _typed(m, "L", int, "model")
    if L is None:
        raise ConfigError("field model.L is required")
    delta = _typed(m, "delta", float, "model")
    if kind == "xxz" and delta is None:
        raise ConfigError("field model.delta is required for the xxz model")
    model = ModelConfig(kind, L, delta, _typed(m, "j1", float, "model", 1.0), _typed(m, "j2", float, "model", 0.2))
    if L < 4 or L % 2:
        raise ConfigError(f"field model.L must be an even integer >= 4, got {L}")

    a = raw.get("ansatz") or {}
    ansatz = AnsatzConfig(
        _typed(a, "kind", str, "ansatz", "hwp").lower(),
        _typed(a, "layers", int, "ansatz", 3),
        _typed(a, "epochs", int, "ansatz", 500),
        _typed(a, "lr", float, "ansatz", 0.05),
    )
    if ansatz.kind not in ("hwp", "hea"):
        raise ConfigError(f"field ansatz.kind must be 'hwp' or 'hea', got {ansatz.kind!r}")
    if ansatz.layers < 1:
        raise ConfigError("field ansatz.layers must be >= 1")
    if ansatz.epochs < 0:
        raise ConfigError("field ansatz.epochs must be >= 0")
    if ansatz.lr < 0:
        raise ConfigError("field ansatz.lr must be >= 0")

    seeds_raw = raw.get("seeds", 10)
    if isinstance(seeds_raw, list):
        if not seeds_raw or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds_raw):
            raise ConfigError("field seeds must be a non-empty list of non-negative integers")
        seeds: tuple[int, ...] | int = tuple(seeds_raw)
    elif isinstance(seeds_raw, int) and not isinstance(seeds_raw, bool):
        if seeds_raw < 1:
            raise ConfigError("field seeds must be >= 1")
        seeds = seeds_raw
    else:
        raise ConfigError(f"field seeds must be a count or a list, got {seeds_raw!r}")

    cps = raw.get("checkpoints") or []
    if not all(isinstance(c, int) and not isinstance(c, bool) and 0 <= c <= ansatz.epochs for c in cps):
        raise ConfigError(f"field checkpoints must list epochs between 0 and ansatz.epochs={ansatz.epochs}")

    d = raw.get("dbqa") or {}
    t = d.get("trotter") or {}
    dbqa = DbqaConfig(
        _typed(d, "mode", str, "dbqa", "gci").lower(),
        _typed(d, "variant", str, "dbqa", "RHOPF").upper(),
        _typed(d, "steps", int, "dbqa", 1),
        _typed(d, "optimizer", str, "dbqa", "powell").lower(),
        _typed(d, "budget", int, "dbqa", 2000),
        _typed(d, "cost", str, "dbqa", "energy").lower(),
        _typed(d, "s_max", float, "dbqa", 0.05),
        _typed(d, "r_max", float, "dbqa", 0.5),
        _typed(d, "guess_scale", float, "dbqa", 0.1),
        TrotterConfig(_typed(t, "order", int, "dbqa.trotter", 2), _typed(t, "M", int, "dbqa.trotter", 1)),
        _typed(d, "trotter_gap", bool, "dbqa", True),
    )
    checks = [
        (dbqa.mode in ("dbi", "gci"), f"field dbqa.mode must be 'dbi' or 'gci', got {dbqa.mode!r}"),
        (dbqa.variant in GciVariant.__members__, f"field dbqa.variant must be one of {list(GciVariant.__members__)}"),
        (0 <= dbqa.steps <= 3, f"field dbqa.steps must be between 0 and 3, got {dbqa.steps}"),
        (dbqa.optimizer in ("powell", "cmaes"), "field dbqa.optimizer must be 'powell' or 'cmaes'"),
        (dbqa.budget >= 1, "field dbqa.budget must be >= 1"),
        (dbqa.cost in [c.value for c in CostKind], f"field dbqa.cost must be one of {[c.value for c in CostKind]}"),
        (dbqa.s_max > 0, "field dbqa.s_max must be > 0"),
        (dbqa.r_max > 0, "field dbqa.r_max must be > 0"),
        (dbqa.trotter.order in (1, 2), "field dbqa.trotter.order must be 1 or 2"),
        (dbqa.trotter.M >= 1, "field dbqa.trotter.M must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)

    o = raw.get("outputs") or {}
    outputs = OutputConfig(
        _typed(o, "dir", str, "outputs", "runs/out"),
        _typed(o, "emit_qasm", bool, "outputs", False),
        _typed(o, "figures", bool, "outputs", True),
    )
    master = _typed(raw, "master_seed", int, "", 0)
    return RunConfig(model, ansatz, seeds, master, tuple(cps), dbqa, outputs, _typed(raw, "label", str, "", ""))


def load_config(path: str | os.PathLike) -> RunConfig:
    text = Path(path).read_text()
    try:
        return validate_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ------------------------------------------------------------------ trials


@dataclass
class TrialResult:
    record: TrialRecord
    epoch: int
    training: list[float]
    warm_circuit: CircuitIR
    final_circuit: CircuitIR | None = None
    e0: float = math.nan


def _build_ansatz(cfg: RunConfig):
    L = cfg.model.L
    return build_hwp(L, cfg.ansatz.layers) if cfg.ansatz.kind == "hwp" else build_hea(L, cfg.ansatz.layers)


def nominal_counts(h0: PauliSum, L: int, trotter: TrotterConfig) -> tuple[int, int]:
    """CZ count of one lowered H0 query and of one full-ring diagonal evolution."""
    n_h0 = trotterize(h0, TrotterPlan(1.0, trotter.order, trotter.M)).n_two_qubit
    n_diag = compile_diagonal_ising(IsingDiagonalSpec(np.ones(L), np.ones(L)), 1.0).n_two_qubit
    return n_h0, n_diag


def run_trial(cfg: RunConfig, seed: int, fixture: SpectrumFixture | None = None) -> list[TrialResult]:
    """Train one seed and refine from every configured training epoch."""
    h0 = cfg.model.hamiltonian()
    L = cfg.model.L
    fixture = fixture or exact_diag(h0)
    c = _build_ansatz(cfg)
    use_sector = c.kind == HWP and conserves_weight(pauli_to_sparse(h0), L)
    kernel = AnsatzKernel(c, h0, None if use_sector else np.arange(2**L))
    epochs = cfg.train_epochs()
    log_ = adam_train(c, kernel, cfg.ansatz.epochs, cfg.ansatz.lr, seed, checkpoints=epochs)
    n_h0, n_diag = nominal_counts(h0, L, cfg.dbqa.trotter)
    out = []
    for ep in epochs:
        circ = c.with_thetas(log_.checkpoints[ep])
        res = _refine(cfg, circ, kernel, h0, fixture, seed, ep, n_h0, n_diag)
        res.training = [float(x) for x in log_.energies[: ep + 1]]
        res.e0 = fixture.E0
        out.append(res)
    return out


def _refine(cfg, circ, kernel, h0, fixture, seed, epoch, n_h0, n_diag) -> TrialResult:
    L = cfg.model.L
    d = cfg.dbqa
    u = kernel.unitary(circ.thetas)
    hu = kernel.h @ u
    a0 = u.conj().T @ hu
    state = DbiState.start(a0, reference=circ.initial_index, basis=kernel.basis, n_qubits=L)
    variant = GciVariant(d.variant)
    warm = circ.to_circuit()
    vqe = dict(k=circ.shift_multiplier, p=circ.n_params, e=epoch, n_cz_vqe=circ.n_cz)

    energies, rels, bounds, fids, ledgers, extras = [], [], [], [], [], []
    prior = 0
    final_circuit = None

    def record(stage_state: DbiState, n_cz: int, n_fval: int, extra: dict) -> None:
        e = stage_state.energy()
        psi = kernel.embed(u @ stage_state.prepared_vector())
        energies.append(e)
        rels.append(rel_diff(e, fixture.E0))
        bounds.append(fidelity_bound(e, fixture))
        fids.append(fixture.overlap(psi))
        ledgers.append(CostLedger(L, n_cz, n_fval=n_fval, n_cz_prior=prior, **vqe))
        extras.append({"epoch": epoch, **extra})

    record(state, circ.n_cz, 0, {"mode": d.mode})
    for j in range(d.steps):
        if d.mode == "dbi":
            r = optimize_d(state, d.cost, d.budget, d.s_max, d.optimizer, seed, guess_scale=d.guess_scale)
            state = dbi_step(state, r.d, r.s, d.cost, n_fval=r.n_fval)
            extra = {"mode": "dbi", "s": r.s}
        else:
            r = optimize_gci_step(state, variant, d.cost, d.budget, d.optimizer, seed, d.r_max, d.guess_scale)
            state = gci_advance(state, r.r, r.d, variant, d.cost, n_fval=r.n_fval)
            extra = {"mode": "gci", "r": r.r, "s": r.r**2}
        plan = GciPlan(L, warm, tuple(GciStepSpec(st.s**0.5 if st.r is None else st.r, st.d, variant)
                                      for st in state.steps), circ.initial_index)
        n_cz = count_cz(count_queries(plan), n_h0, n_diag, circ.n_cz)
        extra["variant"] = variant.value
        extra["n_fval"] = r.n_fval
        extra["n_cz_nominal"] = n_cz
        if d.mode == "gci":
            lowered = lower_plan(plan, h0, d.trotter.order, d.trotter.M)
            # pruned zero couplings make the emitted circuit cheaper than nominal
            n_cz = lowered.n_two_qubit
            extra["n_cz_lowered"] = n_cz
            if d.trotter_gap:
                e0 = np.zeros(2**L, dtype=complex)
                e0[0] = 1.0
                psi = run_circuit(lowered, e0)
                e_trot = float(np.vdot(psi, pauli_to_sparse(h0) @ psi).real)
                extra["trotter_energy"] = e_trot
                extra["trotter_rel_diff"] = rel_diff(e_trot, fixture.E0)
            final_circuit = lowered
        record(state, n_cz, r.n_fval, extra)
        prior += r.n_fval * n_cz

    rec = TrialRecord(seed, energies, rels, bounds, fids, ledgers, extras)
    return TrialResult(rec, epoch, [], circ.preparation(lowered=True), final_circuit)


# ----------------------------------------------------------------- summary


SUMMARY_FIELDS = [
    "label", "epoch", "stage", "n_trials", "rel_diff_median", "rel_diff_mad",
    "fidelity_bound_median", "fidelity_bound_mad", "depth", "cumulative_median",
]


@dataclass
class RunSummary:
    label: str
    rows: list[dict] = field(default_factory=list)

    @classmethod
    def from_trial_rows(cls, label: str, trial_rows: Sequence[dict]) -> "RunSummary":
        groups: dict[tuple[int, int], list[dict]] = {}
        for row in trial_rows:
            groups.setdefault((row["epoch"], row["stage"]), []).append(row)
        rows = []
        for (ep, stage), items in sorted(groups.items()):
            dm, dmad = median_mad(r["rel_diff"] for r in items)
            fm, fmad = median_mad(r["fidelity_bound"] for r in items)
            depths = sorted({r["ledger"]["depth_per_qubit"] for r in items})
            cum = float(np.median([r["ledger"]["cumulative"] for r in items]))
            rows.append({
                "label": label, "epoch": ep, "stage": stage, "n_trials": len(items),
                "rel_diff_median": dm, "rel_diff_mad": dmad,
                "fidelity_bound_median": fm, "fidelity_bound_mad": fmad,
                "depth": depths[0] if len(depths) == 1 else max(depths),
                "cumulative_median": cum,
            })
        return cls(label, rows)

    def stage(self, stage: int, epoch: int | None = None) -> dict:
        for r in self.rows:
            if r["stage"] == stage and (epoch is None or r["epoch"] == epoch):
                return r
        raise KeyError(f"no summary row for stage {stage}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "RunSummary":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                missing = set(SUMMARY_FIELDS) - set(r)
                if missing:
                    raise ConfigError(f"{path}: not a summary file (missing {sorted(missing)})")
                row: dict[str, Any] = {"label": r["label"]}
                for k in ("epoch", "stage", "n_trials"):
                    row[k] = int(r[k])
                for k in SUMMARY_FIELDS[4:]:
                    row[k] = float(r[k])
                rows.append(row)
        if not rows:
            raise ConfigError(f"{path}: summary file has no rows")
        return cls(rows[0]["label"], rows)


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_all_trials(cfg: RunConfig, workers: int | None = None) -> list[TrialResult]:
    h0 = cfg.model.hamiltonian()
    fixture = exact_diag(h0)
    seeds = cfg.trial_seeds()
    workers = _worker_count() if workers is None else workers
    if workers <= 1 or len(seeds) == 1:
        nested = [run_trial(cfg, s, fixture) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(run_trial, [cfg] * len(seeds), seeds, [fixture] * len(seeds)))
    return [r for group in nested for r in group]


def _jsonable(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    raise TypeError(f"not serializable: {type(v)}")


def trial_rows(results: Sequence[TrialResult]) -> list[dict]:
    return [row for res in results for row in res.record.rows()]


def run_pipeline(cfg: RunConfig, out_dir: str | os.PathLike | None = None, workers: int | None = None) -> RunSummary:
    """Run every trial, then write ``trials.jsonl``, ``summary.csv`` and optional artifacts."""
    out = Path(out_dir if out_dir is not None else cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_all_trials(cfg, workers)
    rows = trial_rows(results)
    with open(out / "trials.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, default=_jsonable, sort_keys=True) + "\n")
    summary = RunSummary.from_trial_rows(cfg.describe(), rows)
    (out / "summary.csv").write_text(summary.to_csv())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=list))
    if cfg.outputs.emit_qasm:
        _write_best_qasm(cfg, results, out)
    if cfg.outputs.figures:
        from .plotting import plot_run

        plot_run(results, summary, out / "figures")
    return summary


def _write_best_qasm(cfg: RunConfig, results: Sequence[TrialResult], out: Path) -> Path | None:
    """QASM of the lowest-energy trial: its refined circuit, or its warm start in DBI mode."""
    best = min(results, key=lambda r: r.record.energies[-1])
    if best.final_circuit is not None:
        circ, stage = lower_rbs(best.final_circuit), len(best.record.energies) - 1
    else:
        log.info("DBI rotations have no gate form; exporting the warm start instead")
        circ, stage = best.warm_circuit, 0
    path = out / f"best_seed{best.record.seed}_epoch{best.epoch}_stage{stage}.qasm"
    path.write_text(emit_qasm(circ))
    return path


# ------------------------------------------------------------------ tables


def emit_tables(summaries: Sequence[RunSummary], fmt: str = "markdown") -> str:
    """One row per summary (and training epoch) with per-stage columns."""
    if not summaries:
        raise ConfigError("need at least one summary")
    n_stages = 1 + max(r["stage"] for s in summaries for r in s.rows)
    header = ["run", "epoch"]
    for j in range(n_stages):
        name = "warm" if j == 0 else f"step{j}"
        header += [f"dE_{name}", f"F_{name}", f"depth_{name}", f"cost_{name}"]
    lines = []
    for s in summaries:
        for ep in sorted({r["epoch"] for r in s.rows}):
            cells = [s.label, str(ep)]
            for j in range(n_stages):
                try:
                    r = s.stage(j, ep)
                except KeyError:
                    cells += ["", "", "", ""]
                    continue
                cells += [
                    f"{r['rel_diff_median']:.2e}±{r['rel_diff_mad']:.1e}",
                    f"{r['fidelity_bound_median']:.3f}±{r['fidelity_bound_mad']:.3f}",
                    f"{r['depth']:g}",
                    f"{r['cumulative_median']:.3g}",
                ]
            lines.append(cells)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
        return buf.getvalue()
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(c) + " |" for c in lines]
    return "\n".join(out) + "\n"
