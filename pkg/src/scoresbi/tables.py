"""Reference-table construction.

A table holds parameter draws from a sampling law (prior or localized
proposal) alongside simulated observations, one generator seed per row so any
row can be regenerated independently and generation order never matters.
Three layouts share one container: single-observation rows, repeated-
observation rows for curvature/regression targets, and full-dataset rows for
the additive whole-dataset score model.  Tables persist as CSV (seed, theta
coordinates, flattened data) and as a compact binary blob.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError, DimensionError
from .seeds import derive_rng, derive_seed

__all__ = [
    "Table",
    "TableSet",
    "build_table",
    "build_reference_tables",
    "gaussian_smooth",
    "save_table_csv",
    "load_table_csv",
    "save_table",
    "load_table",
]


@dataclasses.dataclass(frozen=True)
class Table:
    """Rows of (seed, theta, simulated observations).

    ``theta`` is (rows, theta_dim), ``data`` is (rows, obs_per_row, data_dim),
    ``seeds`` is the per-row generator seed used for that row's latents.
    """

    theta: np.ndarray
    data: np.ndarray
    seeds: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        data = np.asarray(self.data, dtype=np.float64)
        seeds = np.asarray(self.seeds, dtype=np.uint64)
        if theta.ndim != 2 or data.ndim != 3 or seeds.ndim != 1:
            raise DimensionError(
                "table arrays need shapes (rows, d), (rows, m, p), (rows,)"
            )
        if not (theta.shape[0] == data.shape[0] == seeds.shape[0]):
            raise DimensionError("table row counts disagree")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "seeds", seeds)

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    @property
    def obs_per_row(self) -> int:
        return self.data.shape[1]

    @property
    def sim_rows(self) -> int:
        """Total simulated observations (rows x observations per row)."""
        return self.theta.shape[0] * self.data.shape[1]


def _row_seeds(seed: int, n_rows: int) -> np.ndarray:
    return np.array(
        [derive_seed(seed, f"row{i}") for i in range(n_rows)], dtype=np.uint64
    )


def build_table(model, law, n_rows: int, obs_per_row: int, seed: int) -> Table:
    """Simulate a table: theta from ``law``, per-row seeded latents.

    ``law`` is anything with ``sample(n, rng)`` returning points inside the
    prior support (the localized proposal rejection-samples into it).  With
    ``n_rows == 0`` no simulator call is made.
    """
    if n_rows < 0 or obs_per_row < 1:
        raise ConfigError("need n_rows >= 0 and obs_per_row >= 1")
    if n_rows == 0:
        return Table(
            np.zeros((0, model.theta_dim)),
            np.zeros((0, obs_per_row, model.data_dim)),
            np.zeros(0, dtype=np.uint64),
        )
    theta = np.asarray(
        law.sample(n_rows, derive_rng(seed, "theta")), dtype=np.float64
    ).reshape(n_rows, -1)
    seeds = _row_seeds(seed, n_rows)
    z = np.empty((n_rows, obs_per_row, model.latent_dim))
    for i in range(n_rows):
        z[i] = model.draw_latents(
            obs_per_row, np.random.default_rng(int(seeds[i]))
        )
    return Table(theta, model.simulate(theta, z), seeds)


@dataclasses.dataclass(frozen=True)
class TableSet:
    """The up-to-three tables one training run consumes."""

    single: Table
    repeated: Table
    full: Table

    @property
    def sim_rows(self) -> int:
        return self.single.sim_rows + self.repeated.sim_rows + self.full.sim_rows


def build_reference_tables(
    model,
    law,
    *,
    n_single: int = 0,
    n_repeated: int = 0,
    obs_repeated: int = 0,
    n_full: int = 0,
    obs_full: int = 0,
    seed: int = 0,
) -> TableSet:
    """Build the requested tables with independent derived seeds."""
    if n_repeated > 0 and obs_repeated < 2:
        raise ConfigError("repeated-observation rows need at least 2 observations")
    if n_full > 0 and obs_full < 1:
        raise ConfigError("full-data rows need the experiment's observation count")
    return TableSet(
        single=build_table(model, law, n_single, 1, derive_seed(seed, "table-single")),
        repeated=build_table(
            model, law, n_repeated, max(obs_repeated, 1), derive_seed(seed, "table-repeated")
        ),
        full=build_table(
            model, law, n_full, max(obs_full, 1), derive_seed(seed, "table-full")
        ),
    )


def gaussian_smooth(table: Table, sigma: float, rng: np.random.Generator) -> Table:
    """Add isotropic Gaussian noise to every observation; theta untouched.

    ``sigma == 0`` is an exact pass-through.
    """
    if sigma < 0:
        raise ConfigError("noise scale must be nonnegative")
    if sigma == 0:
        return table
    return Table(
        table.theta,
        table.data + rng.normal(scale=sigma, size=table.data.shape),
        table.seeds,
    )


# --- persistence ------------------------------------------------------------


def save_table_csv(table: Table, path) -> None:
    d = table.theta.shape[1]
    m, p = table.data.shape[1], table.data.shape[2]
    header = (
        ["seed"]
        + [f"theta_{j}" for j in range(d)]
        + [f"x{j}_{k}" for j in range(m) for k in range(p)]
    )
    flat = table.data.reshape(table.rows, m * p)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for s, th, row in zip(table.seeds, table.theta, flat):
            fields = [str(int(s))]
            fields += [repr(float(v)) for v in th]
            fields += [repr(float(v)) for v in row]
            fh.write(",".join(fields) + "\n")


def load_table_csv(path) -> Table:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "seed":
            raise ConfigError(f"{path}: not a table CSV (missing seed column)")
        d = sum(1 for c in header if c.startswith("theta_"))
        data_cols = [c for c in header if c.startswith("x")]
        if data_cols:
            m = 1 + max(int(c[1:].split("_")[0]) for c in data_cols)
            p = len(data_cols) // m
        else:
            m, p = 1, 0
        seeds, thetas, rows = [], [], []
        for line in fh:
            fields = line.strip().split(",")
            seeds.append(int(fields[0]))
            thetas.append([float(v) for v in fields[1 : 1 + d]])
            rows.append([float(v) for v in fields[1 + d :]])
    n = len(seeds)
    return Table(
        np.array(thetas, dtype=np.float64).reshape(n, d),
        np.array(rows, dtype=np.float64).reshape(n, m, p),
        np.array(seeds, dtype=np.uint64),
    )


_MAGIC = "scoresbi-table v1"


def save_table(table: Table, path) -> None:
    d = table.theta.shape[1]
    m, p = table.data.shape[1], table.data.shape[2]
    header = f"{_MAGIC} rows={table.rows} obs={m} theta_dim={d} data_dim={p}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(table.seeds, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(table.theta, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.data, dtype="<f8").tobytes())


def load_table(path) -> Table:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(_MAGIC):
            raise ConfigError(f"{path}: not a table blob")
        fields = dict(kv.split("=") for kv in header[len(_MAGIC) :].split())
        n = int(fields["rows"])
        m, d, p = int(fields["obs"]), int(fields["theta_dim"]), int(fields["data_dim"])
        body = fh.read()
    need = n * 8 + n * d * 8 + n * m * p * 8
    if len(body) != need:
        raise ConfigError(f"{path}: blob length {len(body)} != expected {need}")
    seeds = np.frombuffer(body, dtype="<u8", count=n)
    theta = np.frombuffer(body, dtype="<f8", count=n * d, offset=n * 8)
    data = np.frombuffer(body, dtype="<f8", count=n * m * p, offset=n * 8 + n * d * 8)
    return Table(theta.reshape(n, d).copy(), data.reshape(n, m, p).copy(), seeds.copy())
