"""Navigation and ask-quality metrics computed from episode logs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .logs import EpisodeLog

SPLITS = ("BothSeen", "UnseenScenes", "UnseenObjects", "BothUnseen")
# column order of the printed tables
TABLE_SPLITS = ("BothSeen", "BothUnseen", "UnseenScenes", "UnseenObjects")
_SPLIT_TITLES = {"BothSeen": "Both Seen", "BothUnseen": "Both Unseen",
                 "UnseenScenes": "Unseen Scenes", "UnseenObjects": "Unseen Objects"}
EMPTY = "empty"


def success_rate(logs: Sequence[EpisodeLog]) -> float:
    if not logs:
        raise ValueError("success rate of an empty log set")
    return 100.0 * sum(1 for log in logs if log.success) / len(logs)


def spl_term(log: EpisodeLog) -> float:
    shortest = log.trailer["shortest_path_len"]
    if shortest is None:
        raise ValueError(f"episode in {log.trailer.get('scene_id')} has no reachable goal")
    if not log.success:
        return 0.0
    taken = log.path_len
    denom = max(taken, shortest)
    return 1.0 if denom == 0 else shortest / denom


def spl(logs: Sequence[EpisodeLog]) -> float:
    if not logs:
        raise ValueError("SPL of an empty log set")
    return 100.0 * sum(spl_term(log) for log in logs) / len(logs)


@dataclass
class AskTaxonomy:
    total_actions: int
    total_asks: int
    consecutive_asks: int
    vapid_asks: int
    insignificant_asks: int
    gamma: float = 2.0
    vapid_fraction: float = 0.10

    def _pct(self, n: int) -> float | None:
        return None if self.total_asks == 0 else 100.0 * n / self.total_asks

    @property
    def ask_rate(self) -> float | None:
        return None if self.total_actions == 0 else 100.0 * self.total_asks / self.total_actions

    @property
    def consecutive_pct(self):
        return self._pct(self.consecutive_asks)

    @property
    def vapid_pct(self):
        return self._pct(self.vapid_asks)

    @property
    def insignificant_pct(self):
        return self._pct(self.insignificant_asks)


def ask_stats(logs: Iterable[EpisodeLog], gamma: float = 2.0, vapid_fraction: float = 0.10) -> AskTaxonomy:
    """Count asks and classify them; one ask may fall in several classes.

    consecutive: the previous action in the same episode was also an ask.
    vapid: the uncertainty before the ask was below ``vapid_fraction`` of its
    starting value. insignificant: the ask lowered uncertainty by less than
    ``gamma``.
    """
    actions = asks = consecutive = vapid = insignificant = 0
    for log in logs:
        lam_prev = log.trailer["lambda_0"]
        threshold = vapid_fraction * log.trailer["lambda_0"]
        prev_ask = False
        for rec in log.steps:
            actions += 1
            if rec["asked"]:
                asks += 1
                consecutive += prev_ask
                vapid += lam_prev < threshold
                insignificant += rec["delta_lambda"] < gamma
            prev_ask = rec["asked"]
            lam_prev = rec["lambda"]
    return AskTaxonomy(actions, asks, consecutive, vapid, insignificant, gamma, vapid_fraction)


def delta_lambda_stats(logs: Iterable[EpisodeLog]) -> dict:
    """Mean uncertainty drop per Nav and per Ask step; None when a class never occurs."""
    sums = {"Nav": 0.0, "Ask": 0.0}
    counts = {"Nav": 0, "Ask": 0}
    for log in logs:
        for rec in log.steps:
            cls = rec["action_class"]
            if cls in sums:
                sums[cls] += rec["delta_lambda"]
                counts[cls] += 1
    return {k: (sums[k] / counts[k] if counts[k] else None) for k in sums}


@dataclass
class Report:
    split: str
    episodes: int
    sr: float | None = None
    spl: float | None = None
    ask_rate: float | None = None
    consecutive_pct: float | None = None
    vapid_pct: float | None = None
    insignificant_pct: float | None = None
    mean_delta_nav: float | None = None
    mean_delta_ask: float | None = None
    total_asks: int = 0
    gamma: float = 2.0
    vapid_fraction: float = 0.10

    @property
    def empty(self) -> bool:
        return self.episodes == 0


def log_split(log: EpisodeLog) -> str:
    t = log.trailer
    if "scene_seen" not in t or "object_seen" not in t:
        raise ValueError("episode is not tagged with scene_seen/object_seen")
    if t["scene_seen"]:
        return "BothSeen" if t["object_seen"] else "UnseenObjects"
    return "UnseenScenes" if t["object_seen"] else "BothUnseen"


def aggregate_report(logs: Sequence[EpisodeLog], split: str, gamma: float = 2.0,
                     vapid_fraction: float = 0.10) -> Report:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    chosen = [log for log in logs if log_split(log) == split]
    if not chosen:
        return Report(split, 0, gamma=gamma, vapid_fraction=vapid_fraction)
    tax = ask_stats(chosen, gamma, vapid_fraction)
    dl = delta_lambda_stats(chosen)
    return Report(
        split=split, episodes=len(chosen), sr=success_rate(chosen), spl=spl(chosen),
        ask_rate=tax.ask_rate, consecutive_pct=tax.consecutive_pct, vapid_pct=tax.vapid_pct,
        insignificant_pct=tax.insignificant_pct, mean_delta_nav=dl["Nav"], mean_delta_ask=dl["Ask"],
        total_asks=tax.total_asks, gamma=gamma, vapid_fraction=vapid_fraction)


# -- rendering ----------------------------------------------------------------

def group_logs(logs: Iterable[EpisodeLog]) -> dict:
    """Group by (teacher present during testing, method label)."""
    groups: dict = {}
    for log in logs:
        key = (bool(log.trailer["teacher_present"]), str(log.trailer.get("method", "policy")))
        groups.setdefault(key, []).append(log)
    return dict(sorted(groups.items()))


def _fmt(value, digits=1) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    out = ["  ".join(h.rjust(w) if i > 1 else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    out.append("  ".join("-" * w for w in widths))
    for r in rows:
        out.append("  ".join(c.rjust(w) if i > 1 else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return out


def build_reports(logs: Sequence[EpisodeLog], gamma: float = 2.0, vapid_fraction: float = 0.10) -> dict:
    return {key: {s: aggregate_report(group, s, gamma, vapid_fraction) for s in SPLITS}
            for key, group in group_logs(logs).items()}


def render_report(reports: dict, gamma: float = 2.0, vapid_fraction: float = 0.10,
                  provenance: str | None = None) -> str:
    cols = [_SPLIT_TITLES[s] for s in TABLE_SPLITS]
    lines = []
    if provenance:
        lines.append(f"# {provenance}")

    def cell(rep, attr, digits=1):
        return EMPTY if rep.empty else _fmt(getattr(rep, attr), digits)

    lines.append("Success rate and SPL (%)")
    rows = []
    for (teacher, method), by_split in reports.items():
        rows.append([str(teacher), method]
                    + [cell(by_split[s], "sr") for s in TABLE_SPLITS]
                    + [cell(by_split[s], "spl") for s in TABLE_SPLITS])
    lines += _table(["Teacher", "Method"] + [f"SR {c}" for c in cols] + [f"SPL {c}" for c in cols], rows)
    lines.append("")

    lines.append("Mean uncertainty drop per action")
    rows = []
    for (teacher, method), by_split in reports.items():
        rows.append([str(teacher), method]
                    + [cell(by_split[s], "mean_delta_nav", 2) for s in TABLE_SPLITS]
                    + [cell(by_split[s], "mean_delta_ask", 2) for s in TABLE_SPLITS])
    lines += _table(["Teacher", "Method"] + [f"Nav {c}" for c in cols] + [f"Ask {c}" for c in cols], rows)
    lines.append("")

    lines.append(f"Ask taxonomy (gamma={gamma!r}, vapid_fraction={vapid_fraction!r}; "
                 "class columns are % of asks)")
    rows = []
    for (teacher, method), by_split in reports.items():
        if not teacher:
            continue
        rows.append([str(teacher), method]
                    + [cell(by_split[s], attr) for attr in ("ask_rate", "consecutive_pct", "vapid_pct",
                                                             "insignificant_pct") for s in TABLE_SPLITS])
    header = ["Teacher", "Method"]
    for prefix in ("Ask%", "Consec", "Vapid", "Insig"):
        header += [f"{prefix} {c}" for c in cols]
    lines += _table(header, rows)
    return "\n".join(lines) + "\n"


def summary_json(reports: dict, provenance: str | None = None) -> str:
    out = {"provenance": provenance, "groups": []}
    for (teacher, method), by_split in reports.items():
        out["groups"].append({"teacher_present": teacher, "method": method,
                              "splits": {s: asdict(r) for s, r in by_split.items()}})
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
