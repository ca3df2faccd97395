"""Quality, diversity, and controllability metrics plus timing protocols."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LevelFlowError
from .games import Analysis, GameSpec, Level, normalize_vector
from .gmm import GmmModel, conditional_sample_gmm, sample_gmm


def tile_diversity(levels: list[Level]) -> float:
    """Mean pairwise hamming distance divided by the level area.

    Computed exactly from per-cell tile counts: for each cell, tiles that
    agree across n_a levels contribute n_a*(n_a-1)/2 agreeing pairs.
    """
    if len(levels) < 2:
        raise LevelFlowError("tile_diversity needs at least two levels")
    shape = levels[0].cells.shape
    if any(lv.cells.shape != shape for lv in levels):
        raise LevelFlowError("tile_diversity needs levels of identical size")
    n = len(levels)
    grids = np.stack([lv.cells.ravel() for lv in levels])  # (n, wh)
    wh = grids.shape[1]
    agreements = 0.0
    for cell in range(wh):
        counts = np.bincount(grids[:, cell])
        agreements += float((counts * (counts - 1) // 2).sum())
    pairs = n * (n - 1) / 2
    return 1.0 - agreements / (pairs * wh)


def request_from_gmm(model: GmmModel, game: GameSpec, w: int, h: int,
                     rng: np.random.Generator,
                     fixed: dict[str, int] | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """One condition draw: (snapped integer request, normalized vector).

    ``fixed`` pins controls by name (in property units); the rest are
    sampled conditionally from the model in normalized space.
    """
    specs = game.controls
    if not specs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    if fixed:
        index = {spec.name: i for i, spec in enumerate(specs)}
        pins = {index[name]: specs[index[name]].normalize(value, w, h)
                for name, value in fixed.items()}
        raw = conditional_sample_gmm(model, pins, rng)
    else:
        raw = sample_gmm(model, rng)
    request = np.zeros(len(specs), dtype=np.int64)
    for i, spec in enumerate(specs):
        if fixed and spec.name in fixed:
            request[i] = int(fixed[spec.name])
        else:
            request[i] = spec.snap(spec.unnormalize(raw[i], w, h), w, h)
    return request, normalize_vector(request, specs, w, h)


def analyze_levels(game: GameSpec, levels: list[Level], threads: int = 1) -> list[Analysis]:
    if threads <= 1 or len(levels) < 2 * threads:
        return [game.analyze(level) for level in levels]
    import multiprocessing as mp

    with mp.Pool(threads, initializer=_pool_init, initargs=(game.name,)) as pool:
        texts = [(lv.cells.tobytes(), lv.cells.shape) for lv in levels]
        return pool.map(_pool_analyze, texts, chunksize=64)


_POOL_GAME: GameSpec | None = None


def _pool_init(game_name: str) -> None:
    global _POOL_GAME
    from .games import get_game
    _POOL_GAME = get_game(game_name)


def _pool_analyze(item: tuple[bytes, tuple[int, int]]) -> Analysis:
    raw, shape = item
    cells = np.frombuffer(raw, dtype=np.uint8).reshape(shape)
    return _POOL_GAME.analyze(Level(_POOL_GAME.name, cells))


def generate_batch(policy, game: GameSpec, model: GmmModel, w: int, h: int,
              n: int, rng: np.random.Generator, chunk: int = 512,
              fixed: dict[str, int] | None = None
              ) -> tuple[list[Level], list[np.ndarray]]:
    levels: list[Level] = []
    requests: list[np.ndarray] = []
    done = 0
    while done < n:
        b = min(chunk, n - done)
        rows = np.zeros((b, len(game.controls)))
        for i in range(b):
            request, u = request_from_gmm(model, game, w, h, rng, fixed)
            requests.append(request)
            rows[i] = u
        batch = policy.run(None, rows, w, h, rng=rng)
        levels.extend(batch.levels(game.name))
        done += b
    return levels, requests


@dataclass
class QualityReport:
    size: tuple[int, int]
    n: int
    playable: float                 # fraction of generated levels
    tile_diversity: float           # over playable levels
    duplicates: float               # fraction of exact-grid repeats
    unique_signatures: float | None  # fraction of playable (Sokoban only)
    solution_length_mean: float
    solution_length_std: float


def quality_eval(policy, game: GameSpec, model: GmmModel,
                 size: tuple[int, int], n: int = 10_000,
                 rng: np.random.Generator | None = None,
                 threads: int = 1) -> QualityReport:
    """Unconditional generation quality: playability, diversity, duplicates."""
    rng = rng if rng is not None else np.random.default_rng()
    w, h = size
    levels, _ = generate_batch(policy, game, model, w, h, n, rng)
    analyses = analyze_levels(game, levels, threads)

    playable_levels = [lv for lv, an in zip(levels, analyses) if an.playable]
    playable_analyses = [an for an in analyses if an.playable]
    unique_grids = {lv.grid_key() for lv in levels}
    duplicates = 1.0 - len(unique_grids) / n if n else 0.0

    diversity = (tile_diversity(playable_levels)
                 if len(playable_levels) >= 2 else float("nan"))

    unique_sig = None
    if game.signature is not None:
        sigs = {game.signature(lv, an.solution)
                for lv, an in zip(playable_levels, playable_analyses)}
        unique_sig = (len(sigs) / len(playable_levels)) if playable_levels else 0.0

    lengths = []
    seen = set()
    for lv, an in zip(playable_levels, playable_analyses):
        key = lv.grid_key()
        if key in seen:
            continue
        seen.add(key)
        lengths.append(an.properties[game.primary_length])
    lengths = np.array(lengths, dtype=np.float64)
    return QualityReport(
        size=size,
        n=n,
        playable=len(playable_levels) / n if n else 0.0,
        tile_diversity=diversity,
        duplicates=duplicates,
        unique_signatures=unique_sig,
        solution_length_mean=float(lengths.mean()) if len(lengths) else float("nan"),
        solution_length_std=float(lengths.std()) if len(lengths) else float("nan"),
    )


@dataclass
class ControlReport:
    size: tuple[int, int]
    control: str
    n: int
    playable: float
    mae: float
    r2: float
    score: float


def control_eval(policy, game: GameSpec, model: GmmModel,
                 size: tuple[int, int], control: str,
                 rng: np.random.Generator | None = None,
                 n_test: int | None = None,
                 test_values: list[int] | None = None,
                 threads: int = 1) -> ControlReport:
    """Controllability of one property: fix it, sample the rest, measure."""
    rng = rng if rng is not None else np.random.default_rng()
    w, h = size
    spec = game.control(control)
    values = list(spec.test_values(w, h)) if test_values is None else list(test_values)
    if not values:
        raise LevelFlowError(f"empty test grid for control {control!r} at {w}x{h}")
    per_value = spec.n_test if n_test is None else n_test

    requested: list[float] = []
    measured: list[float] = []
    per_value_hits: list[float] = []
    total = 0
    total_playable = 0
    for c in values:
        levels, _ = generate_batch(policy, game, model, w, h, per_value, rng,
                              fixed={control: int(c)})
        analyses = analyze_levels(game, levels, threads)
        hits = 0
        for an in analyses:
            total += 1
            if not an.playable:
                continue
            total_playable += 1
            m = an.properties[spec.name]
            requested.append(float(c))
            measured.append(float(m))
            if abs(m - c) <= spec.tolerance:
                hits += 1
        per_value_hits.append(hits / per_value)

    requested_arr = np.array(requested)
    measured_arr = np.array(measured)
    if len(requested_arr):
        mae = float(np.abs(measured_arr - requested_arr).mean())
        ss_res = float(((measured_arr - requested_arr) ** 2).sum())
        ss_tot = float(((requested_arr - requested_arr.mean()) ** 2).sum())
        if ss_tot > 0:
            r2 = 1.0 - ss_res / ss_tot
        else:
            r2 = 1.0 if ss_res == 0 else float("nan")
    else:
        mae = float("nan")
        r2 = float("nan")
    return ControlReport(
        size=size,
        control=control,
        n=total,
        playable=total_playable / total if total else 0.0,
        mae=mae,
        r2=r2,
        score=float(np.mean(per_value_hits)),
    )


@dataclass
class RetryResult:
    level: Level
    analysis: Analysis
    trials: int
    requested: dict[str, int]
    error: float | None  # control error of the returned level, if controlled


def generate_with_retries(policy, game: GameSpec, model: GmmModel,
                          size: tuple[int, int],
                          controls: dict[str, int] | None = None,
                          trials: int = 10,
                          rng: np.random.Generator | None = None) -> RetryResult:
    """Retry protocol: uncontrolled mode stops at the first playable level;
    controlled mode keeps the playable level with the smallest control
    error (early exit at error 0)."""
    if trials < 1:
        raise LevelFlowError("trials must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    w, h = size
    best: RetryResult | None = None
    last: RetryResult | None = None
    for t in range(1, trials + 1):
        request, u = request_from_gmm(model, game, w, h, rng, controls)
        batch = policy.run(None, u.reshape(1, -1), w, h, rng=rng)
        level = batch.level(0, game.name)
        analysis = game.analyze(level)
        named = {spec.name: int(v) for spec, v in zip(game.controls, request)}
        result = RetryResult(level, analysis, t, named, None)
        last = result
        if not analysis.playable:
            continue
        if not controls:
            return result
        result.error = float(sum(
            abs(analysis.properties[name] - controls[name]) for name in controls))
        if best is None or result.error < best.error:
            best = result
        if result.error == 0:
            return best
    if best is not None:
        best.trials = trials
        return best
    return last


EXPRESSIVE_AXES = {
    "sokoban": ("solution_length", "pushed_crates"),
    "zelda": ("path_length", "nearest_enemy"),
    "dave": ("solution_length", "jumps"),
}


@dataclass
class ExpressiveRange:
    x_name: str
    y_name: str
    counts: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_csv(self) -> str:
        lines = [f"{self.x_name},{self.y_name},count"]
        for (x, y) in sorted(self.counts):
            lines.append(f"{x},{y},{self.counts[(x, y)]}")
        return "\n".join(lines) + "\n"

    def to_svg(self, cell: int = 12) -> str:
        if not self.counts:
            return ("<svg xmlns='http://www.w3.org/2000/svg' width='120' height='40'>"
                    "<text x='4' y='20' font-size='12'>no playable levels</text></svg>")
        xs = [x for x, _ in self.counts]
        ys = [y for _, y in self.counts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        peak = max(self.counts.values())
        margin = 42
        width = (x1 - x0 + 1) * cell + margin + 8
        height = (y1 - y0 + 1) * cell + margin + 8
        rows = [
            f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
            f"<rect width='{width}' height='{height}' fill='white'/>",
        ]
        for (x, y), count in sorted(self.counts.items()):
            px = margin + (x - x0) * cell
            py = 4 + (y1 - y) * cell
            rows.append(
                f"<rect x='{px}' y='{py}' width='{cell}' height='{cell}' "
                f"fill='{_heat_color(count / peak)}'/>")
        axis_y = 4 + (y1 - y0 + 1) * cell
        rows.append(
            f"<text x='{margin}' y='{axis_y + 14}' font-size='10'>"
            f"{self.x_name}: {x0}..{x1}</text>")
        rows.append(
            f"<text x='4' y='{axis_y + 28}' font-size='10'>"
            f"{self.y_name}: {y0}..{y1} (peak {peak})</text>")
        rows.append("</svg>")
        return "\n".join(rows)


def _heat_color(level: float) -> str:
    """Dark blue -> yellow ramp."""
    stops = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
    pos = min(max(level, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(pos), len(stops) - 2)
    frac = pos - i
    rgb = [round(a + (b - a) * frac) for a, b in zip(stops[i], stops[i + 1])]
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def expressive_range(levels: list[Level], analyses: list[Analysis],
                     game: GameSpec) -> ExpressiveRange:
    """2-D histogram of playable levels over the game's property pair."""
    x_name, y_name = EXPRESSIVE_AXES.get(
        game.name, (game.controls[0].name, game.controls[-1].name))
    er = ExpressiveRange(x_name, y_name)
    for _, an in zip(levels, analyses):
        if not an.playable:
            continue
        point = (int(an.properties[x_name]), int(an.properties[y_name]))
        er.counts[point] = er.counts.get(point, 0) + 1
    return er


@dataclass
class TimingReport:
    size: tuple[int, int]
    batches: int
    batch_size: int
    mean_seconds: float
    std_seconds: float
    min_seconds: float
    max_seconds: float


def timing_report(policy, game: GameSpec, model: GmmModel | dict,
                  sizes: list[tuple[int, int]], batches: int = 5,
                  batch_size: int = 100,
                  rng: np.random.Generator | None = None,
                  threads: int = 1) -> list[TimingReport]:
    """Wall-clock to generate and verify a batch at each size.

    ``model`` may be a single condition model or a per-size mapping.
    """
    rng = rng if rng is not None else np.random.default_rng()
    out = []
    for size in sizes:
        w, h = size
        size_model = model[size] if isinstance(model, dict) else model
        samples = []
        for _ in range(batches):
            t0 = time.perf_counter()
            levels, _ = generate_batch(policy, game, size_model, w, h, batch_size, rng)
            analyze_levels(game, levels, threads)
            samples.append(time.perf_counter() - t0)
        arr = np.array(samples)
        out.append(TimingReport(size, batches, batch_size,
                                float(arr.mean()), float(arr.std()),
                                float(arr.min()), float(arr.max())))
    return out


def model_call_times(policy, game: GameSpec, sizes: list[tuple[int, int]],
                     calls: int = 300, repeats: int = 1,
                     rng: np.random.Generator | None = None):
    """Per-level model-call time (batch of one) and its linear fit in w*h.

    Each size is timed ``repeats`` times and the fastest mean-per-call is
    kept (the minimum estimates the uncontended cost, suppressing
    scheduler noise). Returns (per-size seconds dict, slope, intercept,
    pearson r).
    """
    rng = rng if rng is not None else np.random.default_rng()
    d = len(game.controls)
    times: dict[tuple[int, int], float] = {}
    for w, h in sizes:
        u = np.zeros((1, d))
        policy.run(None, u, w, h, rng=rng)  # warm-up
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(calls):
                policy.run(None, u, w, h, rng=rng)
            samples.append((time.perf_counter() - t0) / calls)
        times[(w, h)] = float(min(samples))
    areas = np.array([w * h for w, h in sizes], dtype=np.float64)
    secs = np.array([times[s] for s in sizes])
    slope, intercept = np.polyfit(areas, secs, 1)
    r = float(np.corrcoef(areas, secs)[0, 1])
    return times, float(slope), float(intercept), r
