"""Monte-Carlo simulation of (R, Q) inventory chains on a weekly grid.

Each warehouse runs a continuous-review reorder-point policy checked once
per week: when end-of-week stock is at or below R and nothing is on order,
an order of Q units is placed.  Demand that cannot be met from stock is
lost.  A warehouse is replenished either by an external (infinite) source
or by another warehouse, in which case its orders become demand on that
supplier in the week they are placed.

Timing inside week t, per warehouse (downstream warehouses first):

1. receipts due in week t are added to stock;
2. external demand plus downstream orders placed this week are served;
3. the reorder rule is checked; an order placed now is received at the
   start of week ``t + L + 1``, i.e. after L full weeks of demand.

Replicate r draws its demand from ``default_rng([seed, r])``, so for a
fixed seed the whole simulation is a deterministic function of the
reorder points (common random numbers across optimizer evaluations).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, IngestionError, TopologyError
from .objective import Objective, ObjectiveSpec


# --- demand -----------------------------------------------------------------

@dataclass(frozen=True)
class NormalDemand:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be nonnegative")

    def sample(self, rng, size=None):
        # whole units, negative draws floored at zero
        return np.maximum(0.0, np.rint(rng.normal(self.mean, self.std, size)))


@dataclass(frozen=True)
class EmpiricalDemand:
    samples: tuple[float, ...]

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("empirical demand needs at least one sample")
        object.__setattr__(self, "samples", tuple(sorted(float(s) for s in self.samples)))

    def sample(self, rng, size=None):
        u = rng.random(size)
        return np.quantile(np.asarray(self.samples), u, method="inverted_cdf")


DemandModel = Union[NormalDemand, EmpiricalDemand]


def sample_demand(model: DemandModel, rng) -> float:
    """One weekly demand draw."""
    return float(model.sample(rng))


def load_consumption_csv(path) -> EmpiricalDemand:
    """Weekly consumption history, one nonnegative number per line.

    A non-numeric first line is taken as a header.  Blank lines are skipped.
    """
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                v = float(line)
            except ValueError:
                if lineno == 1:
                    continue
                raise IngestionError(f"{path}:{lineno}: cannot parse {line!r}") from None
            if not math.isfinite(v) or v < 0:
                raise IngestionError(f"{path}:{lineno}: consumption must be nonnegative, got {line!r}")
            values.append(v)
    if not values:
        raise IngestionError(f"{path}: no consumption values found")
    return EmpiricalDemand(tuple(values))


# --- classic single-warehouse relations -------------------------------------

def classic_kpis(Q: float, S: float, mean_lead_demand: Optional[float] = None) -> dict:
    """Average stock ``K = Q/2 + S`` and, given the mean lead-time demand,
    the matching reorder point ``R = d_L + S``."""
    if not Q > 0:
        raise ValueError("Q must be positive")
    if S < 0:
        raise ValueError("S must be nonnegative")
    out = {"K": Q / 2.0 + S}
    if mean_lead_demand is not None:
        out["R"] = mean_lead_demand + S
    return out


def analytic_service_level(R: float, Q: float, values: Sequence[float], probs: Sequence[float]) -> float:
    """Fill rate from the expected lead-time shortfall, ``1 - E[(d_L - R)+] / Q``."""
    if not Q > 0:
        raise ValueError("Q must be positive")
    d = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if d.shape != p.shape:
        raise ValueError("values and probs differ in length")
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise ValueError("probs must be a distribution")
    short = np.sum(p * np.maximum(d - R, 0.0))
    return float(min(1.0, max(0.0, 1.0 - short / Q)))


# --- chain description --------------------------------------------------------

@dataclass(frozen=True)
class WarehouseSpec:
    id: str
    R: float
    Q: float
    L: int
    HC: float
    initial_stock: float
    supplier: Optional[str] = None  # None: external source
    external_demand: Optional[DemandModel] = None
    order_cost: float = 0.0
    unit_price: float = 0.0

    def __post_init__(self):
        if self.R < 0 or not self.Q > 0 or self.L < 0 or self.HC < 0 or self.initial_stock < 0:
            raise ValueError(f"warehouse {self.id}: need R>=0, Q>0, L>=0, HC>=0, initial_stock>=0")
        if int(self.L) != self.L:
            raise ValueError(f"warehouse {self.id}: lead time must be whole weeks")


@dataclass(frozen=True)
class ChainSpec:
    warehouses: tuple[WarehouseSpec, ...]
    n_week: int = 50
    n_mc: int = 10
    sl_min: tuple[float, ...] = ()
    penalty_coeff: float = 1e6
    seed: int = 0
    search_bounds: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.n_week < 1 or self.n_mc < 1:
            raise ValueError("n_week and n_mc must be >= 1")
        ids = [w.id for w in self.warehouses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate warehouse ids")
        for w in self.warehouses:
            if w.supplier is not None and w.supplier not in ids:
                raise TopologyError(f"warehouse {w.id}: unknown supplier {w.supplier!r}")
        sl = tuple(self.sl_min) or (0.0,) * len(ids)
        if len(sl) != len(ids) or any(not 0 <= s <= 1 for s in sl):
            raise ValueError("sl_min needs one fraction in [0, 1] per warehouse")
        object.__setattr__(self, "sl_min", sl)

    @property
    def ids(self) -> list[str]:
        return [w.id for w in self.warehouses]

    @property
    def links(self) -> list[tuple[str, str]]:
        return [(w.id, w.supplier) for w in self.warehouses if w.supplier is not None]

    @property
    def reorder_points(self) -> np.ndarray:
        return np.array([w.R for w in self.warehouses], dtype=float)

    def with_reorder_points(self, R) -> "ChainSpec":
        ws = tuple(dataclasses.replace(w, R=float(r)) for w, r in zip(self.warehouses, R))
        return dataclasses.replace(self, warehouses=ws)

    def bounds(self) -> tuple[tuple[float, float], ...]:
        if self.search_bounds is not None:
            return self.search_bounds
        return tuple((0.0, 3.0 * w.Q) for w in self.warehouses)


def processing_order(chain: ChainSpec) -> list[int]:
    """Warehouse indices with every warehouse ahead of its supplier."""
    idx = {w.id: i for i, w in enumerate(chain.warehouses)}
    graph = {i: set() for i in range(len(chain.warehouses))}
    for w in chain.warehouses:
        if w.supplier is not None:
            graph[idx[w.supplier]].add(idx[w.id])
    try:
        return list(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise TopologyError(f"supply links contain a cycle: {exc.args[1]}") from None


# --- simulation -------------------------------------------------------------

@dataclass
class WarehouseState:
    stock: Union[float, np.ndarray]
    on_order: Union[bool, np.ndarray] = False


def step_week(state: WarehouseState, spec: WarehouseSpec, demand, arrivals):
    """One week for one warehouse; works elementwise on replicate arrays.

    Returns ``(new_state, shipped, lost, order_qty)``.  ``order_qty`` is Q
    where an order is placed this week and 0 elsewhere; the caller owns
    delivery and clears ``on_order`` when the order arrives.
    """
    avail = state.stock + arrivals
    shipped = np.minimum(avail, demand)
    lost = demand - shipped
    stock = avail - shipped
    place = (stock <= spec.R) & ~np.asarray(state.on_order, dtype=bool)
    order_qty = np.where(place, spec.Q, 0.0)
    on_order = np.asarray(state.on_order, dtype=bool) | place
    if np.ndim(stock) == 0:
        return (WarehouseState(float(stock), bool(on_order)), float(shipped), float(lost), float(order_qty))
    return WarehouseState(stock, on_order), shipped, lost, order_qty


@dataclass
class SimulationResult:
    ids: list[str]
    stock: np.ndarray  # (replicate, week, warehouse), end-of-week
    satisfied: np.ndarray  # per warehouse, pooled over replicates
    total_demand: np.ndarray
    received: np.ndarray  # (replicate, warehouse)
    shipped: np.ndarray  # (replicate, warehouse)
    initial_stock: np.ndarray
    orders: np.ndarray  # (replicate, warehouse) count of orders placed
    ordered_units: np.ndarray  # (replicate, warehouse)
    unsatisfied_events: int
    holding_cost: float = 0.0
    penalty: float = 0.0
    objective: float = 0.0

    @property
    def service_level(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            sl = np.where(self.total_demand > 0, self.satisfied / self.total_demand, 1.0)
        return sl

    @property
    def avg_stock(self) -> np.ndarray:
        return self.stock.mean(axis=(0, 1))

    @property
    def mean_stock_by_week(self) -> np.ndarray:
        return self.stock.mean(axis=0)

    def kpis(self) -> dict:
        return {
            "warehouses": self.ids,
            "service_level": [float(v) for v in self.service_level],
            "avg_stock": [float(v) for v in self.avg_stock],
            "satisfied": [float(v) for v in self.satisfied],
            "total_demand": [float(v) for v in self.total_demand],
            "unsatisfied_events": int(self.unsatisfied_events),
            "holding_cost": float(self.holding_cost),
            "penalty": float(self.penalty),
            "objective": float(self.objective),
        }

    def write_stocks_csv(self, path) -> None:
        n_rep, n_week, n_wh = self.stock.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "week", "warehouse", "stock"])
            for r in range(n_rep):
                for t in range(n_week):
                    for k in range(n_wh):
                        w.writerow([r, t + 1, self.ids[k], repr(float(self.stock[r, t, k]))])


def draw_demands(chain: ChainSpec, seed: int) -> np.ndarray:
    """External demand, shape (replicate, week, warehouse)."""
    out = np.zeros((chain.n_mc, chain.n_week, len(chain.warehouses)))
    for r in range(chain.n_mc):
        rng = np.random.default_rng([seed, r])
        for k, w in enumerate(chain.warehouses):
            if w.external_demand is not None:
                out[r, :, k] = w.external_demand.sample(rng, chain.n_week)
    return out


def simulate_chain(chain: ChainSpec, seed: Optional[int] = None, demands: Optional[np.ndarray] = None) -> SimulationResult:
    """Run all replicates (vectorised over replicates, sequential in weeks)."""
    seed = chain.seed if seed is None else seed
    order = processing_order(chain)
    if demands is None:
        demands = draw_demands(chain, seed)
    ws = chain.warehouses
    n_rep, n_week, n_wh = chain.n_mc, chain.n_week, len(ws)
    idx = {w.id: i for i, w in enumerate(ws)}
    downstream = {i: [idx[w.id] for w in ws if w.supplier == ws[i].id] for i in range(n_wh)}
    max_l = max(int(w.L) for w in ws)

    pipeline = np.zeros((n_wh, n_rep, n_week + max_l + 2))
    due = np.full((n_wh, n_rep), -1, dtype=np.int64)
    states = [WarehouseState(np.full(n_rep, float(w.initial_stock)), np.zeros(n_rep, dtype=bool)) for w in ws]
    stock = np.zeros((n_rep, n_week, n_wh))
    satisfied = np.zeros(n_wh)
    total = np.zeros(n_wh)
    received = np.zeros((n_rep, n_wh))
    shipped_tot = np.zeros((n_rep, n_wh))
    n_orders = np.zeros((n_rep, n_wh))
    ordered = np.zeros((n_rep, n_wh))
    events = 0
    reps = np.arange(n_rep)

    for t in range(n_week):
        placed = np.zeros((n_wh, n_rep))
        for k in order:
            w = ws[k]
            arrivals = pipeline[k, :, t]
            st = states[k]
            st.on_order = st.on_order & (due[k] > t)
            internal = sum((placed[d] for d in downstream[k]), np.zeros(n_rep))
            ext = demands[:, t, k]
            new, shipped, lost, q = step_week(st, w, ext + internal, arrivals)
            states[k] = new

            # external customers are served before downstream orders
            left = np.maximum(shipped - ext, 0.0)
            for d in downstream[k]:
                send = np.minimum(placed[d], left)
                left -= send
                pipeline[d, reps, t + int(ws[d].L) + 1] += send

            if w.supplier is None:
                pipeline[k, :, t + int(w.L) + 1] += q
            placed[k] = q
            new_order = q > 0
            due[k] = np.where(new_order, t + int(w.L) + 1, due[k])

            stock[:, t, k] = new.stock
            satisfied[k] += shipped.sum()
            total[k] += (ext + internal).sum()
            received[:, k] += arrivals
            shipped_tot[:, k] += shipped
            n_orders[:, k] += new_order
            ordered[:, k] += q
            events += int(np.count_nonzero(lost > 0))

    res = SimulationResult(
        ids=chain.ids,
        stock=stock,
        satisfied=satisfied,
        total_demand=total,
        received=received,
        shipped=shipped_tot,
        initial_stock=np.array([w.initial_stock for w in ws], dtype=float),
        orders=n_orders,
        ordered_units=ordered,
        unsatisfied_events=events,
    )
    hc = np.array([w.HC for w in ws])
    res.holding_cost = float(np.sum(stock.mean(axis=0) * hc))
    oc = np.array([w.order_cost for w in ws])
    up = np.array([w.unit_price for w in ws])
    res.holding_cost += float(np.sum(n_orders.mean(axis=0) * oc + ordered.mean(axis=0) * up))
    shortfall = np.maximum(0.0, np.asarray(chain.sl_min) - res.service_level)
    res.penalty = float(chain.penalty_coeff * shortfall.sum())
    res.objective = res.holding_cost + res.penalty
    return res


def _prepare_points(chain: ChainSpec, reorder_points) -> np.ndarray:
    R = np.asarray(reorder_points, dtype=float)
    if R.shape != (len(chain.warehouses),):
        raise ValueError(f"need {len(chain.warehouses)} reorder points, got shape {R.shape}")
    return np.rint(np.maximum(R, 0.0))


def chain_objective(chain: ChainSpec, reorder_points, seed: Optional[int] = None) -> float:
    """Holding cost summed over weeks plus the service-level penalty.

    Reorder points are clipped at zero and rounded to whole units.
    """
    R = _prepare_points(chain, reorder_points)
    return simulate_chain(chain.with_reorder_points(R), seed).objective


class ChainObjective:
    """Callable ``R -> objective`` that caches the demand draws of one seed."""

    def __init__(self, chain: ChainSpec, seed: Optional[int] = None):
        self.chain = chain
        self.seed = chain.seed if seed is None else seed
        self._demands = draw_demands(chain, self.seed)
        processing_order(chain)

    def simulate(self, reorder_points) -> SimulationResult:
        R = _prepare_points(self.chain, reorder_points)
        return simulate_chain(self.chain.with_reorder_points(R), self.seed, self._demands)

    def __call__(self, reorder_points) -> float:
        return self.simulate(reorder_points).objective


def make_chain_objective(chain: ChainSpec, seed: Optional[int] = None) -> Objective:
    func = ChainObjective(chain, seed)
    spec = ObjectiveSpec("inventory_chain", len(chain.warehouses), tuple(chain.bounds()))
    obj = Objective(func, spec)
    obj.chain_objective = func
    return obj


# --- JSON scenario files ----------------------------------------------------

_WAREHOUSE_KEYS = {"id", "R", "Q", "L", "HC", "initial_stock", "supplier", "demand", "order_cost", "unit_price"}
_CHAIN_KEYS = {"warehouses", "links", "n_week", "n_MC", "n_mc", "sl_min", "penalty_coeff", "seed", "search_bounds", "description"}


def _demand_from_dict(d, where: str, base_dir: Path) -> Optional[DemandModel]:
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = d.get("kind")
    if kind == "normal":
        extra = set(d) - {"kind", "mean", "std"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
        try:
            return NormalDemand(float(d["mean"]), float(d["std"]))
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}: missing") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if kind == "empirical":
        extra = set(d) - {"kind", "csv_path", "samples"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
        if "samples" in d:
            return EmpiricalDemand(tuple(float(v) for v in d["samples"]))
        if "csv_path" in d:
            path = Path(d["csv_path"])
            if not path.is_absolute():
                path = base_dir / path
            return load_consumption_csv(path)
        raise ConfigError(f"{where}: empirical demand needs 'samples' or 'csv_path'")
    raise ConfigError(f"{where}.kind: expected 'normal' or 'empirical', got {kind!r}")


def chain_from_dict(d: dict, base_dir: Union[str, Path] = ".") -> ChainSpec:
    base_dir = Path(base_dir)
    if not isinstance(d, dict):
        raise ConfigError("chain: expected an object")
    extra = set(d) - _CHAIN_KEYS
    if extra:
        raise ConfigError(f"chain.{sorted(extra)[0]}: unknown key")
    if "warehouses" not in d or not isinstance(d["warehouses"], list) or not d["warehouses"]:
        raise ConfigError("chain.warehouses: expected a nonempty list")
    ws = []
    for i, wd in enumerate(d["warehouses"]):
        where = f"chain.warehouses[{i}]"
        if not isinstance(wd, dict):
            raise ConfigError(f"{where}: expected an object")
        extra = set(wd) - _WAREHOUSE_KEYS
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
        try:
            kw = {k: wd[k] for k in ("id", "R", "Q", "L", "HC")}
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}: missing") from None
        for key in ("R", "Q", "L", "HC", "initial_stock", "order_cost", "unit_price"):
            if key in wd and not isinstance(wd[key], (int, float)):
                raise ConfigError(f"{where}.{key}: expected a number, got {wd[key]!r}")
        try:
            ws.append(
                WarehouseSpec(
                    id=str(kw["id"]),
                    R=float(kw["R"]),
                    Q=float(kw["Q"]),
                    L=int(kw["L"]),
                    HC=float(kw["HC"]),
                    initial_stock=float(wd.get("initial_stock", kw["R"])),
                    supplier=wd.get("supplier"),
                    external_demand=_demand_from_dict(wd.get("demand"), f"{where}.demand", base_dir),
                    order_cost=float(wd.get("order_cost", 0.0)),
                    unit_price=float(wd.get("unit_price", 0.0)),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: {exc}") from None
    supplier_of = {w.id: w.supplier for w in ws}
    for j, link in enumerate(d.get("links", [])):
        if not (isinstance(link, list) and len(link) == 2) or supplier_of.get(link[0], "?") != link[1]:
            raise ConfigError(f"chain.links[{j}]: {link!r} does not match the warehouses' supplier fields")
    sl = d.get("sl_min", [0.0] * len(ws))
    if isinstance(sl, (int, float)):
        sl = [sl] * len(ws)
    bounds = d.get("search_bounds")
    try:
        return ChainSpec(
            warehouses=tuple(ws),
            n_week=int(d.get("n_week", 50)),
            n_mc=int(d.get("n_MC", d.get("n_mc", 10))),
            sl_min=tuple(float(s) for s in sl),
            penalty_coeff=float(d.get("penalty_coeff", 1e6)),
            seed=int(d.get("seed", 0)),
            search_bounds=None if bounds is None else tuple((float(a), float(b)) for a, b in bounds),
        )
    except TopologyError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"chain: {exc}") from None


def load_chain(path) -> ChainSpec:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return chain_from_dict(d, path.parent)


def default_scenario_path() -> Path:
    return Path(__file__).with_name("scenarios") / "two_level.json"


def load_default_chain() -> ChainSpec:
    return load_chain(default_scenario_path())
