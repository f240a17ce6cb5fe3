"""Training objective: estimate, margin, constraint and prediction losses.

All four terms exist per task. The constraint loss supervises intermediate
reasoning steps (estimate terms for t=0..T-1) and enforces step-over-step
improvement of the gold-class probability (margin terms for t=1..T, weighted
by gamma). The prediction loss is the cross entropy at the final step, and
the grand total sums both tasks. Cross entropies are negative log-likelihoods
summed over utterances, with probabilities clamped at 1e-12 before the log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_FLOOR = 1e-12


@dataclass
class TaskLossReport:
    estimate: list[float] = field(default_factory=list)   # t = 0..T-1
    margin: list[float] = field(default_factory=list)     # t = 1..T
    constraint: float = 0.0
    prediction: float = 0.0
    total: float = 0.0


@dataclass
class LossReport:
    sentiment: TaskLossReport
    act: TaskLossReport
    grand_total: float

    def to_line(self) -> str:
        """key=value pairs, one line, for the training log at debug verbosity."""
        parts = []
        for tag, task in (("s", self.sentiment), ("a", self.act)):
            for t, v in enumerate(task.estimate):
                parts.append(f"estimate_{tag}[{t}]={v:.6f}")
            for t, v in enumerate(task.margin, start=1):
                parts.append(f"margin_{tag}[{t}]={v:.6f}")
            parts.append(f"constraint_{tag}={task.constraint:.6f}")
            parts.append(f"prediction_{tag}={task.prediction:.6f}")
            parts.append(f"total_{tag}={task.total:.6f}")
        parts.append(f"grand_total={self.grand_total:.6f}")
        return " ".join(parts)


def _gold_probs(p: Tensor, gold) -> Tensor:
    gold = np.asarray(gold, dtype=np.int64)
    if p.data.ndim != 2 or gold.shape != (p.data.shape[0],):
        raise ValueError(f"distributions {p.data.shape} do not match {gold.shape} gold labels")
    return ad.pick_per_row(p, gold)


def estimate_loss(p: Tensor, gold) -> Tensor:
    """Negative log-likelihood of the gold labels, summed over utterances."""
    return ad.mul(ad.sum_all(ad.log_clamped(_gold_probs(p, gold), PROB_FLOOR)), -1.0)


def margin_loss(p_now: Tensor, p_prev: Tensor, gold) -> Tensor:
    """Hinge on the gold-class probability dropping between adjacent steps."""
    if p_now.data.shape != p_prev.data.shape:
        raise ValueError(f"step shapes differ: {p_now.data.shape} vs {p_prev.data.shape}")
    drop = ad.sub(_gold_probs(p_prev, gold), _gold_probs(p_now, gold))
    return ad.sum_all(ad.relu(drop))


def prediction_loss(p_final: Tensor, gold) -> Tensor:
    """Cross entropy at the final step; same formula as the estimate loss."""
    return estimate_loss(p_final, gold)


def _task_losses(distributions: list[Tensor], gold, gamma: float, use_constraint: bool):
    """Returns (loss tensor, TaskLossReport) for one task's step distributions."""
    steps = len(distributions) - 1
    report = TaskLossReport()
    pred = prediction_loss(distributions[steps], gold)
    report.prediction = pred.item()
    total = pred
    if use_constraint:
        constraint = None
        for t in range(steps):
            est = estimate_loss(distributions[t], gold)
            report.estimate.append(est.item())
            constraint = est if constraint is None else ad.add(constraint, est)
        for t in range(1, steps + 1):
            marg = margin_loss(distributions[t], distributions[t - 1], gold)
            report.margin.append(marg.item())
            weighted = ad.mul(marg, gamma)
            constraint = weighted if constraint is None else ad.add(constraint, weighted)
        if constraint is not None:
            report.constraint = constraint.item()
            total = ad.add(total, constraint)
    report.total = total.item()
    return total, report


def constraint_loss(distributions: list[Tensor], gold, gamma: float) -> Tensor:
    """Sum of estimate losses for t=0..T-1 plus gamma times the margin losses
    for t=1..T; exactly zero when T=0 (both summations are empty)."""
    steps = len(distributions) - 1
    total = Tensor(0.0)
    for t in range(steps):
        total = ad.add(total, estimate_loss(distributions[t], gold))
    for t in range(1, steps + 1):
        total = ad.add(
            total, ad.mul(margin_loss(distributions[t], distributions[t - 1], gold), gamma)
        )
    return total


def total_loss(trace, gold_sentiments, gold_acts, gamma: float, use_constraint: bool = True):
    """Grand training objective over a forward trace; returns (tensor, LossReport)."""
    sent_dists = [state.p_sentiment for state in trace.states]
    act_dists = [state.p_act for state in trace.states]
    loss_s, report_s = _task_losses(sent_dists, gold_sentiments, gamma, use_constraint)
    loss_a, report_a = _task_losses(act_dists, gold_acts, gamma, use_constraint)
    grand = ad.add(loss_s, loss_a)
    return grand, LossReport(report_s, report_a, grand.item())
