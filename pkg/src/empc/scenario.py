"""Scenario documents: one JSON file describing a full experiment.

A scenario bundles the plant (physical RC parameters or an explicit bilinear
model), the cost blocks, the terminal-ingredient synthesis inputs, one or more
controller blocks to run and compare, and the simulation settings.  Loading
validates everything with field-precise messages; the defaults reproduce the
reference two-zone experiment (Table-1 physics, unit tracking weights, horizon
5, beta 1, tau 0.6, start at (31, 30), 144 ten-minute steps).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .controller import ControllerConfig
from .costs import CostSuite, EconomicCostParams, PenaltySpec, TrackingWeights, econ_stage_cost
from .dynamics import (
    DEFAULT_STATE_BOX,
    AffineBilinearModel,
    SystemModel,
    TwoZoneHvacParams,
    hvac_input_set,
)
from .sqp import SolverOptions
from .terminal import TerminalIngredients, solve_steady_state, synthesize_terminal

logger = logging.getLogger(__name__)


class ScenarioError(Exception):
    """Validation failure with a field-precise message."""


def _expect(cond: bool, path: str, message: str):
    if not cond:
        raise ScenarioError(f"{path}: {message}")


def _matrix(doc, path, n=None):
    try:
        arr = np.asarray(doc, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a numeric matrix") from exc
    _expect(arr.ndim == 2 and arr.shape[0] == arr.shape[1], path, "must be a square matrix")
    if n is not None:
        _expect(arr.shape[0] == n, path, f"must be {n}x{n}")
    return arr


@dataclass(frozen=True)
class ControllerBlock:
    label: str
    scheme: str
    n_horizon: int = 5
    m: int = 8
    beta: float = 1.0
    tau: float = 0.6
    v_max: float | None = None

    def to_config(self, diff: str = "auto") -> ControllerConfig:
        return ControllerConfig(
            scheme=self.scheme,
            n_horizon=self.n_horizon,
            m=self.m,
            beta=self.beta,
            tau=self.tau,
            v_max=self.v_max,
            diff=diff,
        )


@dataclass
class Scenario:
    """Validated experiment description; `build` turns it into live objects."""

    doc: dict

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        doc = json.loads(json.dumps(doc))  # deep copy, JSON-normalized
        merged = _merged_with_defaults(doc)
        _validate(merged)
        return cls(doc=merged)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        except OSError as exc:
            raise ScenarioError(f"{path}: {exc.strerror}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.doc))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.doc, fh, indent=2)
            fh.write("\n")

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.doc == other.doc

    # -- accessors -----------------------------------------------------------

    @property
    def controllers(self) -> list[ControllerBlock]:
        return [
            ControllerBlock(
                label=b["label"],
                scheme=b["scheme"],
                n_horizon=b["n_horizon"],
                m=b["m"],
                beta=b["beta"],
                tau=b["tau"],
                v_max=b.get("v_max"),
            )
            for b in self.doc["controllers"]
        ]

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.doc["sim"]["x0"], dtype=float)

    @property
    def steps(self) -> int:
        return int(self.doc["sim"]["steps"])

    @property
    def seed(self) -> int:
        return int(self.doc["sim"]["seed"])

    @property
    def output_dir(self) -> str:
        return self.doc["output_dir"]

    def solver_options(self, feas_tol: float | None = None) -> SolverOptions:
        s = self.doc["solver"]
        return SolverOptions(
            feas_tol=feas_tol if feas_tol is not None else s["feas_tol"],
            opt_tol=s["opt_tol"],
            max_iter=s["max_iter"],
        )

    def with_kappa(self, kappa_bar: float) -> "Scenario":
        doc = self.to_dict()
        doc["costs"]["kappa_bar"] = float(kappa_bar)
        return Scenario.from_dict(doc)

    def with_seed(self, seed: int) -> "Scenario":
        doc = self.to_dict()
        doc["sim"]["seed"] = int(seed)
        return Scenario.from_dict(doc)

    # -- build ----------------------------------------------------------------

    def build(self) -> "BuiltScenario":
        mdoc = self.doc["model"]
        cdoc = self.doc["costs"]
        tdoc = self.doc["terminal"]
        if "hvac" in mdoc:
            params = TwoZoneHvacParams.from_dict(mdoc["hvac"])
            import warnings as _w

            with _w.catch_warnings():
                _w.simplefilter("ignore")
                from .dynamics import discretize_rc

                bilinear = discretize_rc(params, method=mdoc["discretization"])
            dt = params.dt_seconds
        else:
            b = mdoc["bilinear"]
            bilinear = AffineBilinearModel(
                a_matrix=np.asarray(b["a_matrix"], dtype=float),
                g_coeff=np.asarray(b["g_coeff"], dtype=float),
                d_vector=np.asarray(b["d_vector"], dtype=float),
                g_offset=np.asarray(b["g_offset"], dtype=float) if "g_offset" in b else None,
            )
            dt = float(b["dt"])
        lo, hi = mdoc["state_box"]
        n = bilinear.n_x
        model = bilinear.to_system(
            dt=dt,
            state_box=(np.full(n, float(lo)), np.full(n, float(hi))),
            input_set=hvac_input_set(mdoc["total_flow"]),
            asymptotic_set=(np.asarray(mdoc["set_points"], dtype=float),),
        )
        ts = np.asarray(cdoc["ts"], dtype=float)
        if "hvac" in mdoc:
            ts = np.array([mdoc["hvac"].get("ts1", 15.0), mdoc["hvac"].get("ts2", 15.0)])
        econ = EconomicCostParams(
            kappa_bar=cdoc["kappa_bar"],
            eta_c=cdoc["eta_c"],
            eta_h=cdoc["eta_h"],
            th=np.asarray(cdoc["th"], dtype=float),
            ts=ts,
            cp=cdoc["cp"],
        )
        steady = solve_steady_state(model, econ)
        weights = TrackingWeights(
            q=_matrix(cdoc["q"], "costs.q", n),
            r=_matrix(cdoc["r"], "costs.r", model.n_u),
            p=np.eye(n),
        )
        penalties = PenaltySpec(delta_coeff=cdoc["delta_coeff"], gamma_coeff=cdoc["gamma_coeff"])
        suite0 = CostSuite(weights=weights, penalties=penalties, econ=econ, xs=steady.xs, us=steady.us)
        k_gain = None if tdoc["k_gain"] == "synthesize" else _matrix(tdoc["k_gain"], "terminal.k_gain")
        n_horizon = max(b.n_horizon for b in self.controllers)
        ingredients = synthesize_terminal(
            model,
            suite0,
            n_horizon=n_horizon,
            k_gain=k_gain,
            inflation=tdoc["inflation"],
            n_samples=tdoc["n_samples"],
            seed=tdoc["seed"],
            safety=tdoc["safety"],
        )
        suite = suite0.with_terminal_weight(ingredients.p_matrix)
        return BuiltScenario(
            scenario=self,
            model=model,
            suite=suite,
            ingredients=ingredients,
            steady_cost=econ_stage_cost(econ, steady.xs, steady.us),
        )


@dataclass(frozen=True)
class BuiltScenario:
    scenario: Scenario
    model: SystemModel
    suite: CostSuite
    ingredients: TerminalIngredients
    steady_cost: float


# -- defaults & validation ------------------------------------------------------


def reference_doc() -> dict:
    """The reference experiment: default physics and controller settings."""
    return {
        "model": {
            "hvac": TwoZoneHvacParams().to_dict(),
            "state_box": list(DEFAULT_STATE_BOX),
            "set_points": [24.0, 25.0],
            "total_flow": 3.2,
            "discretization": "euler",
        },
        "costs": {
            "q": [[1.0, 0.0], [0.0, 1.0]],
            "r": [[1.0, 0.0], [0.0, 1.0]],
            "kappa_bar": 1.0,
            "eta_c": 4.0,
            "eta_h": 0.9,
            "th": [32.0, 32.0],
            "ts": [15.0, 15.0],
            "cp": 1.012,
            "delta_coeff": 1e-4,
            "gamma_coeff": 1e-4,
        },
        "terminal": {
            "k_gain": [[0.6947, 0.0059], [0.0061, 0.6818]],
            "inflation": 0.1,
            "n_samples": 4000,
            "seed": 0,
            "safety": 0.95,
        },
        "controllers": [
            {"label": "tracking", "scheme": "tracking", "n_horizon": 5, "m": 8, "beta": 1.0, "tau": 0.6},
            {"label": "m1", "scheme": "alg1", "n_horizon": 5, "m": 8, "beta": 1.0, "tau": 0.6},
            {"label": "m4", "scheme": "alg2", "n_horizon": 5, "m": 4, "beta": 1.0, "tau": 0.6},
            {"label": "m8", "scheme": "alg2", "n_horizon": 5, "m": 8, "beta": 1.0, "tau": 0.6},
        ],
        "sim": {"x0": [31.0, 30.0], "steps": 144, "seed": 0},
        "solver": {"feas_tol": 1e-8, "opt_tol": 1e-6, "max_iter": 200, "diff": "analytic"},
        "output_dir": "out",
    }


def reference_scenario() -> Scenario:
    return Scenario.from_dict(reference_doc())


_CONTROLLER_DEFAULTS = {"n_horizon": 5, "m": 8, "beta": 1.0, "tau": 0.6}


def _merged_with_defaults(doc: dict) -> dict:
    defaults = reference_doc()
    merged = {}
    _expect(isinstance(doc, dict), "scenario", "top level must be an object")
    unknown = set(doc) - set(defaults)
    _expect(not unknown, "scenario", f"unknown top-level fields: {sorted(unknown)}")
    for key, dval in defaults.items():
        if key not in doc:
            merged[key] = dval
            continue
        val = doc[key]
        if key == "controllers":
            merged[key] = val
        elif isinstance(dval, dict):
            _expect(isinstance(val, dict), key, "must be an object")
            if key == "model" and "bilinear" in val:
                merged[key] = {**{k: v for k, v in dval.items() if k != "hvac"}, **val}
                merged[key].pop("hvac", None)
            else:
                unknown = set(val) - set(dval) - ({"bilinear"} if key == "model" else set())
                _expect(not unknown, key, f"unknown fields: {sorted(unknown)}")
                merged[key] = {**dval, **val}
        else:
            merged[key] = val
    blocks = []
    _expect(isinstance(merged["controllers"], list) and merged["controllers"], "controllers",
            "must be a nonempty list")
    for i, block in enumerate(merged["controllers"]):
        path = f"controllers[{i}]"
        _expect(isinstance(block, dict), path, "must be an object")
        _expect("scheme" in block, path, "missing required field 'scheme'")
        out = dict(block)
        out.setdefault("label", out["scheme"] if out["scheme"] != "alg2" else f"m{out.get('m', 8)}")
        for fname, fval in _CONTROLLER_DEFAULTS.items():
            if fname not in out:
                if fname == "beta":
                    logger.info("%s: beta missing, defaulted to %s", path, fval)
                out[fname] = fval
        unknown = set(out) - {"label", "scheme", "n_horizon", "m", "beta", "tau", "v_max"}
        _expect(not unknown, path, f"unknown fields: {sorted(unknown)}")
        blocks.append(out)
    merged["controllers"] = blocks
    return merged


def _validate(doc: dict) -> None:
    m = doc["model"]
    if "hvac" in m:
        try:
            TwoZoneHvacParams.from_dict(m["hvac"])
        except ValueError as exc:
            raise ScenarioError(f"model.hvac: {exc}") from exc
    else:
        _expect("bilinear" in m, "model", "needs either an 'hvac' or a 'bilinear' block")
        b = m["bilinear"]
        for fname in ("a_matrix", "g_coeff", "d_vector", "dt"):
            _expect(fname in b, "model.bilinear", f"missing field '{fname}'")
    _expect(m["discretization"] in ("euler", "zoh"), "model.discretization",
            "must be 'euler' or 'zoh'")
    lo, hi = m["state_box"]
    _expect(lo < hi, "model.state_box", "lower bound must be below upper bound")
    _expect(m["total_flow"] > 0, "model.total_flow", "must be positive")

    c = doc["costs"]
    _expect(c["kappa_bar"] >= 0, "costs.kappa_bar", "must be nonnegative")
    _expect(c["eta_c"] > 0, "costs.eta_c", "must be positive")
    _expect(c["eta_h"] > 0, "costs.eta_h", "must be positive")
    _expect(c["delta_coeff"] > 0, "costs.delta_coeff",
            "must be strictly positive (the deviation penalty must be positive definite)")
    _expect(c["gamma_coeff"] > 0, "costs.gamma_coeff",
            "must be strictly positive (the terminal penalty must be positive definite)")
    for key in ("q", "r"):
        mat = _matrix(c[key], f"costs.{key}")
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise ScenarioError(f"costs.{key}: must be symmetric positive definite") from exc

    t = doc["terminal"]
    if t["k_gain"] != "synthesize":
        _matrix(t["k_gain"], "terminal.k_gain")
    _expect(t["inflation"] >= 0, "terminal.inflation", "must be nonnegative")
    _expect(0 < t["safety"] <= 1, "terminal.safety", "must lie in (0, 1]")
    _expect(t["n_samples"] >= 100, "terminal.n_samples", "must be >= 100")

    for i, b in enumerate(doc["controllers"]):
        path = f"controllers[{i}]"
        _expect(b["scheme"] in ("tracking", "alg1", "alg2"), f"{path}.scheme",
                "must be one of tracking|alg1|alg2")
        _expect(0 < b["beta"] <= 1, f"{path}.beta", "must lie in (0, 1]")
        _expect(0 <= b["tau"] < 1, f"{path}.tau", "must lie in [0, 1)")
        _expect(b["n_horizon"] >= 1, f"{path}.n_horizon", "must be >= 1")
        if b["scheme"] == "alg2":
            _expect(b["m"] >= 2, f"{path}.m", "must be >= 2 for the m-step scheme")
    labels = [b["label"] for b in doc["controllers"]]
    _expect(len(labels) == len(set(labels)), "controllers", f"duplicate labels: {labels}")

    s = doc["sim"]
    _expect(s["steps"] >= 1, "sim.steps", "must be >= 1")
    _expect(len(s["x0"]) == 2 if "hvac" in m else True, "sim.x0", "must match the state dimension")
    lo, hi = m["state_box"]
    _expect(all(lo <= xi <= hi for xi in s["x0"]), "sim.x0", "must lie inside the state box")

    sol = doc["solver"]
    _expect(sol["feas_tol"] > 0, "solver.feas_tol", "must be positive")
    _expect(sol["opt_tol"] > 0, "solver.opt_tol", "must be positive")
    _expect(sol["max_iter"] >= 1, "solver.max_iter", "must be >= 1")
    _expect(sol["diff"] in ("analytic", "fd"), "solver.diff", "must be 'analytic' or 'fd'")
