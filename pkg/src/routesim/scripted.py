"""Deterministic scripted provider: a drop-in language-model stand-in.

Every role is served by parsing the rendered prompt back into structured data
(trips, personas, choice sets) and running fixed, fully deterministic logic
over it:

- decide: evaluate the persona's rule on the memory windows embedded in the
  prompt. Perceived-state prompts choose the lowest perceived time; prompts
  without a persona fall back to the lower-recent-mean rule.
- gradient: empty text on a correct prediction; otherwise a critique quoting
  the persona rule and carrying a machine-readable correction hint.
- integrate: enumerate distinct rule tweaks (threshold jumps sized from the
  observed statistics, default flips, window swaps, bias moves).
- edit: apply one mutation directive to the rule.
- summarize: exhaustively fit the best rule to the trip history in the prompt.
- merge: keep the candidate rule's structure, average the thresholds.

Replies are pure functions of the request (the seed is carried only so runs
are explicit about their provenance).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from . import dsl
from .gateway import RoleRequest
from .prompts import (
    NO_HISTORY_TEXT,
    SECTION_BASELINE,
    SECTION_CANDIDATE,
    SECTION_CASE,
    SECTION_CHOICES,
    SECTION_CRITIQUES,
    SECTION_DIRECTIVE,
    SECTION_HISTORY,
    SECTION_LONG,
    SECTION_PERCEIVED,
    SECTION_PERSONA,
    SECTION_SHORT,
)


class ScriptedError(ValueError):
    """A scripted-mode prompt that cannot be interpreted (a test-fixture bug)."""


_TRIP_RE = re.compile(r"- period (\d+): chose (\w+), travel time ([\d.]+) min")
_OPTION_RE = re.compile(r"- (\w+) \(free-flow ([\d.]+) min\)")
_PERCEIVED_RE = re.compile(r"- (\w+): perceived ([\d.]+) min, explored (\d+) times")
_QUOTED_RULE_RE = re.compile(r'The persona rule "([^"]+)"')
_HINT_RE = re.compile(
    r"Suggested correction: (INCREASE|DECREASE) switch-threshold sensitivity "
    r"\(observed statistic ([\d.]+)\)")
_REVISIT_RE = re.compile(r"Suggested correction: REVISIT default-route preference")
_STAYED_RE = re.compile(r"The human (stayed with|switched to) ")
_COUNT_RE = re.compile(r"propose exactly (\d+) distinct")
_WINDOWS_RE = re.compile(r"Retrieval windows: short=(\d+) periods, long=(\d+) periods")
_DIRECTIVE_TOKEN_RE = re.compile(
    r"\b(THRESH[+-][\d.]+|FLIP_DEFAULT|WINDOW_SWAP|BIAS_UP|BIAS_DOWN|NO-OP)\b")
_FIELD_RE = re.compile(r"^(period|simulated choice|human choice): (.+)$", re.MULTILINE)


def split_sections(text: str) -> dict[str, str]:
    """Break a rendered prompt into its '## ' sections."""
    sections: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith("## "):
            if current is not None:
                sections[current] = "\n".join(lines).strip()
            current = line.strip()
            lines = []
        elif current is not None:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines).strip()
    return sections


def parse_trips(body: str) -> list[tuple[int, str, float]]:
    if body.strip() == NO_HISTORY_TEXT:
        return []
    return [(int(p), route, float(t)) for p, route, t in _TRIP_RE.findall(body)]


def parse_options(body: str) -> tuple[dsl.RouteOption, dsl.RouteOption]:
    options = tuple((route, float(t0)) for route, t0 in _OPTION_RE.findall(body))
    if len(options) != 2:
        raise ScriptedError(f"expected two routes in the choice set, found {len(options)}")
    return options


def _as_trips(rows: list[tuple[int, str, float]]) -> list[dsl.Trip]:
    return [(route, time) for _, route, time in rows]


def _prev_choice(rows: list[tuple[int, str, float]]) -> str | None:
    if not rows:
        return None
    return max(rows, key=lambda row: row[0])[1]


def _reply(choice: str, reason: str) -> str:
    return json.dumps({"choice": choice, "reason": reason})


@dataclass(frozen=True)
class ScriptedBackend:
    seed: int = 0

    def complete(self, request: RoleRequest) -> str:
        user_text = next((text for speaker, text in request.messages if speaker == "user"), None)
        if user_text is None:
            raise ScriptedError("request carries no user message")
        handler = getattr(self, f"_{request.role}")
        return handler(user_text)

    # -- decide ---------------------------------------------------------

    def _decide(self, user_text: str) -> str:
        sections = split_sections(user_text)
        options = parse_options(sections.get(SECTION_CHOICES, ""))
        if SECTION_PERCEIVED in sections:
            return self._decide_perceived(sections[SECTION_PERCEIVED], options)
        short_rows = parse_trips(sections.get(SECTION_SHORT, ""))
        long_rows = parse_trips(sections.get(SECTION_LONG, ""))
        short = _as_trips(short_rows)
        long = _as_trips(long_rows)
        prev = _prev_choice(long_rows or short_rows)
        if SECTION_PERSONA in sections:
            rule = dsl.parse_rule(sections[SECTION_PERSONA])
            choice = dsl.eval_rule(rule, short, long, prev, options)
            return _reply(choice, "Scripted evaluation of the persona rule.")
        choice = dsl.neutral_choice(short, options)
        return _reply(choice, "Scripted lower-recent-mean rule (no persona).")

    def _decide_perceived(self, body: str, options) -> str:
        perceived = {route: (float(p), int(n)) for route, p, n in _PERCEIVED_RE.findall(body)}
        free_flow = dict(options)

        def key(route: str) -> tuple[float, int, float]:
            p, n = perceived.get(route, (free_flow[route], 0))
            return (p, -n, free_flow[route])

        choice = min((route for route, _ in options), key=key)
        return _reply(choice, "Scripted minimum of perceived travel times.")

    # -- gradient ---------------------------------------------------------

    def _gradient(self, user_text: str) -> str:
        sections = split_sections(user_text)
        fields = dict(_FIELD_RE.findall(sections.get(SECTION_CASE, "")))
        simulated = fields["simulated choice"].strip()
        truth = fields["human choice"].strip()
        if simulated == truth:
            return ""
        period = fields["period"].strip()
        options = parse_options(sections.get(SECTION_CHOICES, ""))
        rule = dsl.parse_rule(sections[SECTION_PERSONA])
        short_rows = parse_trips(sections.get(SECTION_SHORT, ""))
        long_rows = parse_trips(sections.get(SECTION_LONG, ""))
        short = _as_trips(short_rows)
        long = _as_trips(long_rows)
        prev = _prev_choice(long_rows or short_rows)

        if rule.default_route is not None:
            base = rule.default_route
        elif rule.stay_bias != "none" and prev is not None:
            base = prev
        else:
            base = dsl.neutral_choice(short, options)
        window = short if rule.window == "short" else long
        value = dsl.stat_value(rule.stat, window, base)

        moved = "stayed with" if truth == prev else "switched to"
        lines = [
            f'The persona rule "{dsl.render_rule(rule)}" predicted {simulated} for period '
            f"{period}, but the human chose {truth}. The human {moved} {truth}.",
        ]
        if truth == base:
            lines.append(
                f"The switch condition {rule.stat}({rule.window}) > {dsl.format_number(rule.threshold)} "
                f"fired on base route {base} (statistic {value:.4f}) although the human kept it.")
            lines.append(
                f"Suggested correction: DECREASE switch-threshold sensitivity "
                f"(observed statistic {value:.4f}).")
        elif value is not None:
            lines.append(
                f"The switch condition {rule.stat}({rule.window}) > {dsl.format_number(rule.threshold)} "
                f"did not fire on base route {base} (statistic {value:.4f}) although the human left it.")
            lines.append(
                f"Suggested correction: INCREASE switch-threshold sensitivity "
                f"(observed statistic {value:.4f}).")
        else:
            lines.append(
                f"The rule kept base route {base} with no trips on it in the "
                f"{rule.window} window, yet the human chose {truth}.")
            lines.append("Suggested correction: REVISIT default-route preference.")
        return "\n".join(lines)

    # -- integrate --------------------------------------------------------

    def _integrate(self, user_text: str) -> str:
        sections = split_sections(user_text)
        body = sections.get(SECTION_CRITIQUES, "")
        count_match = _COUNT_RE.search(user_text)
        if not count_match:
            raise ScriptedError("integrate prompt does not state the direction count")
        j = int(count_match.group(1))
        rule_match = _QUOTED_RULE_RE.search(body)
        if not rule_match:
            raise ScriptedError("integrate prompt carries no quoted persona rule")
        rule = dsl.parse_rule(rule_match.group(1))

        inc_values = [float(v) for kind, v in _HINT_RE.findall(body) if kind == "INCREASE"]
        dec_values = [float(v) for kind, v in _HINT_RE.findall(body) if kind == "DECREASE"]
        n_revisit = len(_REVISIT_RE.findall(body))
        n_stay = sum(1 for verb in _STAYED_RE.findall(body) if verb == "stayed with")
        n_switch = sum(1 for verb in _STAYED_RE.findall(body) if verb == "switched to")

        proposals: list[str] = []
        seen: set[tuple[str, ...]] = set()

        def add(tokens: tuple[str, ...] | str, why: str) -> None:
            if isinstance(tokens, str):
                tokens = (tokens,)
            if tokens in seen:
                return
            seen.add(tokens)
            proposals.append(f"Apply {' then '.join(tokens)}: {why}")

        def with_disabled_condition(token: str) -> tuple[str, ...]:
            # Pair a structural edit with a threshold reset so a stale
            # threshold cannot misfire on the repaired base route.
            if rule.threshold >= dsl.THRESHOLD_MAX:
                return (token,)
            delta = dsl.format_number(dsl.THRESHOLD_MAX - rule.threshold)
            return (token, f"THRESH+{delta}")

        sticky = n_stay > n_switch
        inc_dominant = len(inc_values) >= len(dec_values)
        # Habit-driven travelers: anchor a neutral persona on the previous
        # choice; a persona stuck on the wrong default gets flipped first.
        if sticky and rule.default_route is None and rule.stay_bias == "none":
            add(with_disabled_condition("BIAS_UP"),
                "the traveler looks habit-driven; anchor on the previous choice.")
            add(with_disabled_condition("FLIP_DEFAULT"),
                "or the traveler may simply favor the other route outright.")
        elif sticky and rule.default_route is not None and inc_dominant and inc_values:
            add(with_disabled_condition("FLIP_DEFAULT"),
                "the traveler keeps leaving this default; prefer the other route.")
        if n_revisit:
            add("FLIP_DEFAULT", "no experience backs the current base route; reconsider it.")
        if inc_dominant and inc_values:
            for target in (dsl.threshold_to_fire(min(inc_values)),
                           dsl.threshold_to_fire(max(inc_values))):
                if target < rule.threshold:
                    delta = dsl.format_number(rule.threshold - target)
                    add(f"THRESH-{delta}", "lower the switch threshold below the delays "
                                           "the traveler reacted to.")
        elif dec_values:
            for target in (dsl.threshold_to_hold(max(dec_values)),
                           dsl.threshold_to_hold(min(dec_values))):
                if target > rule.threshold:
                    delta = dsl.format_number(target - rule.threshold)
                    add(f"THRESH+{delta}", "raise the switch threshold above the delays "
                                           "the traveler tolerated.")
        add("FLIP_DEFAULT", "reconsider which route is the standing preference.")
        add("WINDOW_SWAP", "judge the condition on the other memory window.")
        add("BIAS_UP" if n_stay >= n_switch else "BIAS_DOWN",
            "move the stay bias toward the observed inertia.")
        add("BIAS_DOWN" if n_stay >= n_switch else "BIAS_UP",
            "explore the opposite stay bias.")
        add("THRESH-1" if inc_dominant else "THRESH+1",
            "fine-tune the switch threshold.")
        add("THRESH+1" if inc_dominant else "THRESH-1",
            "fine-tune the switch threshold the other way.")
        add("NO-OP", "keep the persona as a control candidate.")

        lines = [f"{i + 1}. {p}" for i, p in enumerate(proposals[:j])]
        return "\n".join(lines)

    # -- edit -------------------------------------------------------------

    def _edit(self, user_text: str) -> str:
        sections = split_sections(user_text)
        rule = dsl.parse_rule(sections[SECTION_PERSONA])
        directive = sections.get(SECTION_DIRECTIVE, "")
        tokens = _DIRECTIVE_TOKEN_RE.findall(directive)
        if not tokens:
            raise ScriptedError(f"no mutation token found in directive {directive!r}")
        options = parse_options(sections.get(SECTION_CHOICES, ""))
        option_ids = tuple(route for route, _ in options)
        # a directive may chain several single-field edits; apply them in order
        for token in tokens:
            rule = dsl.mutate_rule(rule, token, options=option_ids)
        return dsl.render_rule(rule)

    # -- summarize ----------------------------------------------------------

    def _summarize(self, user_text: str) -> str:
        sections = split_sections(user_text)
        body = sections.get(SECTION_HISTORY, "")
        windows_match = _WINDOWS_RE.search(body)
        if not windows_match:
            raise ScriptedError("summarize prompt does not state the retrieval windows")
        t_s, t_l = int(windows_match.group(1)), int(windows_match.group(2))
        history = parse_trips(body)
        if not history:
            raise ScriptedError("summarize prompt carries no trips")
        options = parse_options(sections.get(SECTION_CHOICES, ""))
        fitted = dsl.fit_rule(history, options, t_s=t_s, t_l=t_l)
        return dsl.render_rule(fitted)

    # -- merge --------------------------------------------------------------

    def _merge(self, user_text: str) -> str:
        sections = split_sections(user_text)
        candidate = dsl.parse_rule(sections[SECTION_CANDIDATE])
        baseline = dsl.parse_rule(sections[SECTION_BASELINE])
        return dsl.render_rule(dsl.merge_rules(candidate, baseline))
