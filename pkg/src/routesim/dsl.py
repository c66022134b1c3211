"""A one-line rule language for scripted test personas.

Grammar (keywords case-insensitive)::

    PREFER <route>|NONE UNLESS <stat>(<window>) > <number> [STAY_BIAS <level>]

    route  := expressway | local1 | local2
    stat   := mean | max | last
    window := short | long
    level  := none | weak | strong
    number := 0..500

A rule reads: start from a base route (the explicit default; the previous
choice when the default is NONE and a stay bias is set; otherwise whichever
route has the lower recent mean time). If the chosen statistic of the base
route's experienced times inside the referenced memory window exceeds the
threshold, switch to the alternative; otherwise keep the base.

The whole language is deterministic and its rule space is finite for a fixed
threshold grid, so exhaustive search over it is a usable oracle.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_right
from dataclasses import dataclass, replace

ROUTES = ("expressway", "local1", "local2")
STATS = ("mean", "max", "last")
WINDOWS = ("short", "long")
BIASES = ("none", "weak", "strong")
THRESHOLD_MIN = 0.0
THRESHOLD_MAX = 500.0

# (route id, experienced minutes) as remembered by the agent
Trip = tuple[str, float]
# (route id, free-flow minutes) describing one admissible route
RouteOption = tuple[str, float]


class DslError(ValueError):
    """Rule text that does not parse, or an unknown mutation directive."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class RuleAst:
    default_route: str | None
    stat: str
    window: str
    threshold: float
    stay_bias: str = "none"

    def __post_init__(self) -> None:
        if self.default_route is not None and self.default_route not in ROUTES:
            raise DslError(f"unknown route {self.default_route!r}")
        if self.stat not in STATS:
            raise DslError(f"unknown statistic {self.stat!r}")
        if self.window not in WINDOWS:
            raise DslError(f"unknown window {self.window!r}")
        if self.stay_bias not in BIASES:
            raise DslError(f"unknown stay bias {self.stay_bias!r}")
        if not (THRESHOLD_MIN <= self.threshold <= THRESHOLD_MAX):
            raise DslError(f"threshold {self.threshold} outside [{THRESHOLD_MIN:g}, {THRESHOLD_MAX:g}]")


_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|\d+(?:\.\d+)?|[()>]|\S")


def _tokenize(text: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(text)]


def parse_rule(text: str) -> RuleAst:
    """Parse rule text into an AST; raises DslError with the failing column."""
    tokens = _tokenize(text)
    pos = 0

    def peek() -> tuple[str, int]:
        if pos < len(tokens):
            return tokens[pos]
        return ("", len(text) + 1)

    def take(expected: str | None = None, what: str = "") -> str:
        nonlocal pos
        token, col = peek()
        if not token:
            raise DslError(f"unexpected end of rule, expected {what or expected}", 1, col)
        if expected is not None and token.upper() != expected.upper():
            raise DslError(f"expected {what or expected!r}, found {token!r}", 1, col)
        pos += 1
        return token

    take("PREFER")
    route_token, route_col = peek()
    take(what="route name or NONE")
    if route_token.upper() == "NONE":
        default_route = None
    elif route_token.lower() in ROUTES:
        default_route = route_token.lower()
    else:
        raise DslError(f"unknown route {route_token!r}", 1, route_col)

    take("UNLESS")
    stat_token, stat_col = peek()
    take(what="statistic (mean/max/last)")
    if stat_token.lower() not in STATS:
        raise DslError(f"unknown statistic {stat_token!r}", 1, stat_col)
    take("(")
    window_token, window_col = peek()
    take(what="window (short/long)")
    if window_token.lower() not in WINDOWS:
        raise DslError(f"unknown window {window_token!r}", 1, window_col)
    take(")")
    take(">")
    number_token, number_col = peek()
    take(what="threshold number")
    try:
        threshold = float(number_token)
    except ValueError:
        raise DslError(f"expected a number, found {number_token!r}", 1, number_col) from None
    if not (THRESHOLD_MIN <= threshold <= THRESHOLD_MAX):
        raise DslError(f"threshold {threshold:g} outside [0, 500]", 1, number_col)

    stay_bias = "none"
    token, col = peek()
    if token:
        take("STAY_BIAS")
        bias_token, bias_col = peek()
        take(what="bias level (none/weak/strong)")
        if bias_token.lower() not in BIASES:
            raise DslError(f"unknown stay bias {bias_token!r}", 1, bias_col)
        stay_bias = bias_token.lower()
        trailing, tcol = peek()
        if trailing:
            raise DslError(f"unexpected trailing token {trailing!r}", 1, tcol)

    return RuleAst(default_route=default_route, stat=stat_token.lower(),
                   window=window_token.lower(), threshold=threshold, stay_bias=stay_bias)


def format_number(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def render_rule(ast: RuleAst) -> str:
    """Canonical one-line text form; parse_rule(render_rule(a)) == a."""
    default = ast.default_route if ast.default_route is not None else "NONE"
    text = f"PREFER {default} UNLESS {ast.stat}({ast.window}) > {format_number(ast.threshold)}"
    if ast.stay_bias != "none":
        text += f" STAY_BIAS {ast.stay_bias}"
    return text


def stat_value(stat: str, trips: list[Trip], route: str) -> float | None:
    times = [t for (action, t) in trips if action == route]
    if not times:
        return None
    if stat == "mean":
        return sum(times) / len(times)
    if stat == "max":
        return max(times)
    return times[-1]  # last; trips arrive ordered by period


def neutral_choice(short: list[Trip], options: tuple[RouteOption, RouteOption]) -> str:
    """Lower-recent-mean rule: mean experienced time per route over the short
    window, free-flow time where the window has no trips on that route."""
    def score(option: RouteOption) -> tuple[float, float]:
        route, free_flow = option
        times = [t for (action, t) in short if action == route]
        mean = sum(times) / len(times) if times else free_flow
        return (mean, free_flow)

    return min(options, key=score)[0]


def eval_rule(
    ast: RuleAst,
    short: list[Trip],
    long: list[Trip],
    prev_choice: str | None,
    options: tuple[RouteOption, RouteOption],
) -> str:
    """Apply a rule to the retrieved memory windows; fully deterministic.

    Empty windows (or no trips on the base route) mean the switch condition
    cannot fire, so the base route is returned.
    """
    option_ids = tuple(route for route, _ in options)
    if ast.default_route is not None:
        if ast.default_route not in option_ids:
            raise DslError(f"rule default {ast.default_route!r} not in choice set {option_ids}")
        base = ast.default_route
    elif ast.stay_bias != "none" and prev_choice is not None:
        base = prev_choice
    else:
        base = neutral_choice(short, options)
    alternative = option_ids[1] if base == option_ids[0] else option_ids[0]
    window = short if ast.window == "short" else long
    value = stat_value(ast.stat, window, base)
    if value is not None and value > ast.threshold:
        return alternative
    return base


MUTATION_CATALOG = ("THRESH+X", "THRESH-X", "FLIP_DEFAULT", "WINDOW_SWAP",
                    "BIAS_UP", "BIAS_DOWN", "NO-OP")
_THRESH_RE = re.compile(r"^THRESH([+-])(\d+(?:\.\d+)?)$")


def mutate_rule(ast: RuleAst, directive: str,
                options: tuple[str, str] = ("expressway", "local1")) -> RuleAst:
    """Apply a single-field edit from the directive catalog.

    FLIP_DEFAULT swaps the two route defaults; a NONE default becomes the
    second (local) option, whose stay-and-return behavior a neutral rule
    cannot express. Thresholds move on the stated grid, clamped to [0, 500];
    bias moves one level, saturating.
    """
    token = directive.strip().upper()
    match = _THRESH_RE.match(token)
    if match:
        sign = 1.0 if match.group(1) == "+" else -1.0
        delta = float(match.group(2))
        new = min(THRESHOLD_MAX, max(THRESHOLD_MIN, ast.threshold + sign * delta))
        return replace(ast, threshold=new)
    if token == "FLIP_DEFAULT":
        flip = {options[0]: options[1], options[1]: options[0], None: options[1]}
        if ast.default_route is not None and ast.default_route not in options:
            raise DslError(f"default {ast.default_route!r} not in options {options}")
        return replace(ast, default_route=flip[ast.default_route])
    if token == "WINDOW_SWAP":
        return replace(ast, window="long" if ast.window == "short" else "short")
    if token in ("BIAS_UP", "BIAS_DOWN"):
        step = 1 if token == "BIAS_UP" else -1
        idx = min(len(BIASES) - 1, max(0, BIASES.index(ast.stay_bias) + step))
        return replace(ast, stay_bias=BIASES[idx])
    if token == "NO-OP":
        return ast
    raise DslError(f"unknown mutation directive {directive!r}")


def threshold_to_fire(value: float) -> float:
    """Largest grid threshold strictly below `value` (so `value > threshold`)."""
    return max(THRESHOLD_MIN, float(math.ceil(value) - 1))


def threshold_to_hold(value: float) -> float:
    """Smallest grid threshold at or above `value` (so the condition stays off)."""
    return min(THRESHOLD_MAX, float(math.ceil(value)))


def fit_rule(
    history: list[tuple[int, str, float]],
    options: tuple[RouteOption, RouteOption],
    t_s: int,
    t_l: int,
) -> RuleAst:
    """Exhaustively fit the best rule to an observed (period, route, time) history.

    Every rule in the grammar is scored by 0-1 loss when predicting each trip
    from the trips before it (windows clamped to the available history). The
    integer threshold grid is reduced to the representatives that can change a
    comparison against the observed statistics, which preserves both the
    optimum and the smaller-threshold tie-break. Ties break on (loss,
    threshold, canonical text).
    """
    if not history:
        raise DslError("cannot fit a rule to an empty history")
    history = sorted(history, key=lambda row: row[0])
    option_ids = tuple(route for route, _ in options)

    periods = [row[0] for row in history]
    trips: list[Trip] = [(route, time) for (_, route, time) in history]
    # Prediction points: every trip after the first.
    points = []
    stat_values: dict[tuple[str, str, str], set[float]] = {}
    for idx in range(1, len(history)):
        t = periods[idx]
        short = [trips[j] for j in range(idx) if periods[j] >= max(1, t - t_s)]
        long = [trips[j] for j in range(idx) if periods[j] >= max(1, t - t_l)]
        prev = trips[idx - 1][0]
        truth = trips[idx][0]
        neutral = neutral_choice(short, options)
        per_combo: dict[tuple[str, str, str], float | None] = {}
        for stat in STATS:
            for window_name, window in (("short", short), ("long", long)):
                for route in option_ids:
                    value = stat_value(stat, window, route)
                    per_combo[(stat, window_name, route)] = value
                    if value is not None:
                        stat_values.setdefault((stat, window_name, route), set()).add(value)
        points.append((neutral, prev, truth, per_combo))

    def sweep_losses(default: str | None, bias: str, stat: str, window: str,
                     candidates: list[float]) -> list[int]:
        # The condition fires at a point whenever threshold < stat value, so the
        # loss is a step function of the threshold: accumulate per-point deltas
        # sorted by stat value and read them off with suffix sums.
        base_loss = 0
        events: list[tuple[float, int]] = []
        for neutral, prev, truth, per_combo in points:
            if default is not None:
                base = default
            elif bias != "none":
                base = prev
            else:
                base = neutral
            alternative = option_ids[1] if base == option_ids[0] else option_ids[0]
            base_loss += int(base != truth)
            value = per_combo[(stat, window, base)]
            if value is not None:
                events.append((value, int(alternative != truth) - int(base != truth)))
        events.sort()
        values = [v for v, _ in events]
        suffix = [0] * (len(events) + 1)
        for i in range(len(events) - 1, -1, -1):
            suffix[i] = suffix[i + 1] + events[i][1]
        return [base_loss + suffix[bisect_right(values, thr)] for thr in candidates]

    best: tuple[int, float, str, RuleAst] | None = None
    for stat in STATS:
        for window in WINDOWS:
            observed: set[float] = set()
            for route in option_ids:
                observed |= stat_values.get((stat, window, route), set())
            candidates = sorted({THRESHOLD_MIN, THRESHOLD_MAX}
                                | {threshold_to_hold(v) for v in observed})
            for default, bias_levels in ((None, BIASES), (option_ids[0], ("none",)),
                                         (option_ids[1], ("none",))):
                for bias in bias_levels:
                    losses = sweep_losses(default, bias, stat, window, candidates)
                    for threshold, loss in zip(candidates, losses):
                        ast = RuleAst(default_route=default, stat=stat, window=window,
                                      threshold=threshold, stay_bias=bias)
                        key = (loss, threshold, render_rule(ast))
                        if best is None or key < (best[0], best[1], best[2]):
                            best = (loss, threshold, render_rule(ast), ast)
    assert best is not None
    return best[3]


def merge_rules(candidate: RuleAst, baseline: RuleAst) -> RuleAst:
    """Blend two rules: candidate keeps its structure, thresholds are averaged."""
    return replace(candidate, threshold=(candidate.threshold + baseline.threshold) / 2.0)
