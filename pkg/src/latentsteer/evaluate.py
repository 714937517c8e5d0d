"""Attack-success evaluation against a bank of target trajectories.

Success is judged in latent space: a latent sequence proxy-decodes to
the nearest bank command under the per-frame cosine loss, subject to a
rejection threshold tau calibrated so that no clean carrier ever
triggers. The text layer (normalization, alias matching) is applied on
top, and per-corpus success rates are macro-averaged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .attack import cosine_frame_loss, random_universal
from .features import NUM_SAMPLES, log_mel
from .model import EncoderParams, encode
from .signal import pad_or_trim
from .text import match_target, normalize_text

_TAU_SAFETY = 0.9


@dataclass(frozen=True)
class TargetBank:
    """Candidate commands with their fixed target embeddings.

    entries holds (normalized command, latent sequence) pairs; tau is
    the rejection threshold for proxy decoding.
    """

    entries: tuple[tuple[str, np.ndarray], ...]
    tau: float

    def __post_init__(self) -> None:
        commands = [normalize_text(c) for c, _ in self.entries]
        if len(set(commands)) != len(commands):
            raise ValueError("bank commands must be unique after normalization")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class EvalRow:
    corpus: str
    target: str
    n: int
    successes: int

    @property
    def asr_percent(self) -> float:
        return 100.0 * self.successes / self.n


@dataclass(frozen=True)
class BaselineRow:
    corpus: str
    mean_percent: float
    std_percent: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    macro_avg_percent: float
    baseline: tuple[BaselineRow, ...] = ()
    baseline_draws: int = 0


def _encode_carrier(params: EncoderParams, x, delta=None) -> np.ndarray:
    wav = np.asarray(pad_or_trim(x, NUM_SAMPLES), dtype=np.float64)
    if delta is not None:
        wav = wav + np.asarray(delta, dtype=np.float64)
    return encode(params, log_mel(wav))


def calibrate_tau(params: EncoderParams, bank: TargetBank, benign_corpus) -> float:
    """0.9 times the smallest benign-carrier loss against any bank entry.

    By construction every clean carrier then proxy-decodes to none.
    """
    if not benign_corpus:
        raise ValueError("benign corpus is empty")
    if not bank.entries:
        raise ValueError("target bank is empty")
    best = math.inf
    for x in benign_corpus:
        h = _encode_carrier(params, x)
        for _, h_ref in bank.entries:
            best = min(best, cosine_frame_loss(h, h_ref))
    return _TAU_SAFETY * best


def make_target_bank(params: EncoderParams, commands, benign_corpus=None, tau: float | None = None) -> TargetBank:
    """Build a bank from command strings; tau from a benign corpus or given.

    Each command's embedding comes from its synthesized signature audio.
    """
    from .attack import target_embedding
    from .signal import synth_target

    entries = tuple((normalize_text(c), target_embedding(params, synth_target(c))) for c in commands)
    if tau is None:
        if benign_corpus is None:
            raise ValueError("need a benign corpus or an explicit tau")
        tau = calibrate_tau(params, TargetBank(entries, tau=math.inf), benign_corpus)
    return TargetBank(entries, tau=tau)


def proxy_decode(h, bank: TargetBank) -> str | None:
    """Nearest bank command under the cosine loss, or none above tau.

    Ties break in bank order (strict-improvement scan).
    """
    if not bank.entries:
        raise ValueError("target bank is empty")
    best_cmd = None
    best_loss = math.inf
    for cmd, h_ref in bank.entries:
        loss = cosine_frame_loss(h, h_ref)
        if loss < best_loss:
            best_cmd, best_loss = cmd, loss
    return best_cmd if best_loss < bank.tau else None


def eval_asr(delta, corpus, target: str, bank: TargetBank, params: EncoderParams,
             aliases=frozenset(), name: str = "corpus") -> EvalRow:
    """Success fraction of one perturbation over one carrier corpus.

    A carrier succeeds when its perturbed latents proxy-decode to a
    command that matches the target (directly or via an alias).
    """
    if not corpus:
        raise ValueError("evaluation corpus is empty")
    successes = 0
    for x in corpus:
        decoded = proxy_decode(_encode_carrier(params, x, delta), bank)
        if decoded is not None and match_target(decoded, target, aliases):
            successes += 1
    return EvalRow(corpus=name, target=normalize_text(target), n=len(corpus), successes=successes)


def macro_average(percents) -> float:
    """Unweighted mean of per-corpus percentages."""
    percents = list(percents)
    if not percents:
        raise ValueError("no percentages to average")
    return float(sum(percents)) / len(percents)


def random_baseline(draws: int, epsilon: float, corpora, target: str, bank: TargetBank,
                    params: EncoderParams, seed0: int, aliases=frozenset()):
    """Mean and population std of the macro ASR over `draws` random deltas.

    Each draw k applies the single perturbation random_universal(seed0+k)
    unchanged to every utterance of every corpus.
    """
    rows = random_baseline_rows(draws, epsilon, corpora, target, bank, params, seed0, aliases)
    per_draw_macro = rows.pop("_macro")
    return float(np.mean(per_draw_macro)), float(np.std(per_draw_macro))


def random_baseline_rows(draws: int, epsilon: float, corpora, target: str, bank: TargetBank,
                         params: EncoderParams, seed0: int, aliases=frozenset()):
    """Per-corpus baseline statistics: {name: (mean, std)} plus the
    per-draw macro series under the key "_macro"."""
    if draws < 1:
        raise ValueError("need at least one draw")
    per_corpus: dict[str, list[float]] = {name: [] for name, _ in corpora}
    macro_series = []
    for k in range(draws):
        delta = random_universal(seed0 + k, epsilon, NUM_SAMPLES)
        draw_percents = []
        for name, corpus in corpora:
            row = eval_asr(delta, corpus, target, bank, params, aliases, name=name)
            per_corpus[name].append(row.asr_percent)
            draw_percents.append(row.asr_percent)
        macro_series.append(macro_average(draw_percents))
    out: dict = {
        name: (float(np.mean(vals)), float(np.std(vals))) for name, vals in per_corpus.items()
    }
    out["_macro"] = macro_series
    return out


# ---------------------------------------------------------------------------
# Report formatting
# ---------------------------------------------------------------------------

def round_half_away(x: float, digits: int = 1) -> float:
    """Round half away from zero at the given decimal place."""
    scale = 10.0**digits
    if x >= 0:
        return math.floor(x * scale + 0.5) / scale
    return -math.floor(-x * scale + 0.5) / scale


def _fmt(x: float) -> str:
    return f"{round_half_away(x):.1f}"


def report_records(report: EvalReport) -> str:
    """Line-delimited JSON records: one per corpus row, one macro, one
    per baseline row. Byte-identical for identical inputs."""
    lines = []
    for row in report.rows:
        lines.append(json.dumps({
            "type": "corpus", "corpus": row.corpus, "target": row.target,
            "n": row.n, "successes": row.successes, "asr_percent": row.asr_percent,
        }, sort_keys=True))
    lines.append(json.dumps({"type": "macro", "percent": report.macro_avg_percent}, sort_keys=True))
    for brow in report.baseline:
        lines.append(json.dumps({
            "type": "baseline", "corpus": brow.corpus, "draws": report.baseline_draws,
            "mean_percent": brow.mean_percent, "std_percent": brow.std_percent,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def render_report_table(report: EvalReport) -> str:
    """Aligned text table: one row per target, corpora as columns."""
    names = [row.corpus for row in report.rows]
    target = report.rows[0].target if report.rows else ""
    header = ["Target"] + names + ["Macro Avg."]
    body = [[target] + [_fmt(row.asr_percent) for row in report.rows] + [_fmt(report.macro_avg_percent)]]
    if report.baseline:
        by_name = {b.corpus: b for b in report.baseline}
        cells = [f"{_fmt(by_name[n].mean_percent)}+/-{_fmt(by_name[n].std_percent)}" for n in names]
        macro_mean = macro_average([by_name[n].mean_percent for n in names])
        body.append([f"Random Noise Baseline (K={report.baseline_draws})"] + cells + [_fmt(macro_mean)])
    widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        lines.append("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                               for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def build_report(rows, baseline_rows=(), baseline_draws: int = 0) -> EvalReport:
    macro = macro_average([r.asr_percent for r in rows])
    return EvalReport(
        rows=tuple(rows),
        macro_avg_percent=macro,
        baseline=tuple(baseline_rows),
        baseline_draws=baseline_draws,
    )
