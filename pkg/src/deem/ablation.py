"""Seeded ablations: split vs pooled training, progressive vs direct voting,
and ensemble size.  Each returns a table of mean Top-1 accuracies shaped as
rows = conditions, columns = date groups + average."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial

import numpy as np

from .config import ExperimentConfig
from .dataset import TEST, DateGroup, generate_synthetic, make_sample, partition_by_date, reserve_validation
from .experts import train_expert
from .progressive import direct_vote_baseline, labels_accuracy, run_to_completion


def parallel_map(fn, items, jobs: int = 1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def seed_for(exp: ExperimentConfig, rep: int) -> int:
    return int(exp.seed) + rep


def _dataset_for(exp: ExperimentConfig, rep: int, dataset=None):
    if dataset is not None:
        return dataset
    return generate_synthetic(replace(exp.data, seed=exp.data.seed + rep))[0]


def _holdout(group: DateGroup, exp: ExperimentConfig, seed: int):
    n = max(1, int(round(exp.ablation.validation_fraction * len(group.train))))
    rest, val = reserve_validation(group.train, n, seed, exp.ablation.stratified)
    return rest, val


def _as_unlabeled(samples):
    return [make_sample(s.name, s.features, TEST) for s in samples]


def _accuracy(model, samples) -> float:
    X = np.stack([s.features for s in samples])
    y = np.array([s.true_label for s in samples])
    return float(np.mean(model.predict(X) == y))


def _split_rep(rep, exp, dataset):
    seed = seed_for(exp, rep)
    ds = _dataset_for(exp, rep, dataset)
    spec = replace(exp.pipeline.specs[0], seed=10 * seed)
    held = {g.date: _holdout(g, exp, seed) for g in partition_by_date(ds)}
    pooled = [s for rest, _ in held.values() for s in rest]
    whole = train_expert(spec, pooled, ds.num_classes, exp.pipeline.feature_noise)
    out = {"Whole model": {}, "Individual model": {}}
    for date, (rest, val) in held.items():
        single = train_expert(spec, rest, ds.num_classes, exp.pipeline.feature_noise)
        out["Whole model"][date] = _accuracy(whole, val)
        out["Individual model"][date] = _accuracy(single, val)
    return out


def _pl_dv_for_group(group, exp, run_config, seed, num_classes, with_dv=True):
    rest, val = _holdout(group, exp, seed)
    truth = {s.id: s.true_label for s in val}
    unlabeled = _as_unlabeled(val)
    pool = unlabeled + (list(group.test) if exp.ablation.include_test else [])
    result = run_to_completion(DateGroup(group.date, tuple(rest), tuple(pool)), run_config, num_classes)
    pl = labels_accuracy({i: result.labels[i] for i in truth}, truth)
    fallbacks = sum(h["fallback"] for h in result.history)
    dv = None
    if with_dv:
        ensemble = run_config.fit_ensemble(rest, num_classes)
        dv = labels_accuracy(direct_vote_baseline(ensemble, unlabeled), truth)
    return pl, dv, fallbacks, len(result.history)


def _progressive_rep(rep, exp, dataset):
    seed = seed_for(exp, rep)
    ds = _dataset_for(exp, rep, dataset)
    cfg = exp.reseeded(10 * seed).pipeline
    out = {"DV": {}, "PL": {}, "_fallbacks": 0}
    for g in partition_by_date(ds):
        pl, dv, fb, _ = _pl_dv_for_group(g, exp, cfg, seed, ds.num_classes)
        out["PL"][g.date] = pl
        out["DV"][g.date] = dv
        out["_fallbacks"] += fb
    return out


def _experts_rep(rep, exp, dataset):
    seed = seed_for(exp, rep)
    ds = _dataset_for(exp, rep, dataset)
    out = {"_fallbacks": 0}
    for n in exp.ablation.expert_counts:
        cfg = exp.pool_config(n, 10 * seed)
        row = out.setdefault(str(n), {})
        for g in partition_by_date(ds):
            pl, _, fb, _ = _pl_dv_for_group(g, exp, cfg, seed, ds.num_classes, with_dv=False)
            row[g.date] = pl
            out["_fallbacks"] += fb
    return out


def _table(name, title, conditions, reps, paired=None) -> dict:
    dates = sorted(reps[0][conditions[0]])
    rows = []
    per_seed = {}
    for cond in conditions:
        cells = {d: float(np.mean([r[cond][d] for r in reps])) for d in dates}
        rows.append({"condition": cond, "per_group": cells, "average": float(np.mean(list(cells.values())))})
        per_seed[cond] = [float(np.mean([r[cond][d] for d in dates])) for r in reps]
    table = {
        "name": name,
        "title": title,
        "columns": dates,
        "rows": rows,
        "seeds": len(reps),
        "per_seed_average": per_seed,
        "fallbacks": int(sum(r.get("_fallbacks", 0) for r in reps)),
    }
    if paired is not None:
        a, b = paired
        table["paired"] = paired_difference(per_seed[a], per_seed[b], a, b)
    return table


def paired_difference(a, b, name_a="a", name_b="b") -> dict:
    d = np.asarray(a) - np.asarray(b)
    se = float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else 0.0
    return {"minuend": name_a, "subtrahend": name_b, "mean_difference": float(d.mean()),
            "std_error": se, "n": int(len(d))}


def ablate_split(exp: ExperimentConfig, dataset=None, jobs: int = 1) -> dict:
    reps = parallel_map(partial(_split_rep, exp=exp, dataset=dataset), range(exp.ablation.seeds), jobs)
    return _table("split", "Top-1 accuracy: individual models vs whole model (validation)",
                  ["Whole model", "Individual model"], reps, ("Individual model", "Whole model"))


def ablate_progressive(exp: ExperimentConfig, dataset=None, jobs: int = 1) -> dict:
    reps = parallel_map(partial(_progressive_rep, exp=exp, dataset=dataset), range(exp.ablation.seeds), jobs)
    return _table("progressive", "Top-1 accuracy: direct voting (DV) vs progressive learning (PL)",
                  ["DV", "PL"], reps, ("PL", "DV"))


def ablate_experts(exp: ExperimentConfig, dataset=None, jobs: int = 1) -> dict:
    reps = parallel_map(partial(_experts_rep, exp=exp, dataset=dataset), range(exp.ablation.seeds), jobs)
    conds = [str(n) for n in exp.ablation.expert_counts]
    table = _table("experts", "Top-1 accuracy by ensemble size", conds, reps)
    avgs = [row["average"] for row in table["rows"]]
    table["steps"] = [b - a for a, b in zip(avgs, avgs[1:])]
    return table
