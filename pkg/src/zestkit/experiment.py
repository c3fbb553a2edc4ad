"""Experiment orchestration: correlation of distance vs. transfer, and the
end-to-end desk-scale campaign (train portfolio, shared plan, signatures,
selection, PGD, transfer, correlation).

Every run is driven by one declarative JSON config; all randomness flows
from its master_seed through labeled hashing, so identical configs yield
byte-identical artifacts. Each artifact carries the config hash.
"""

import csv
import io
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig, batch_summary_csv, pgd, save_batch, transfer_eval
from .errors import ConfigError, UndefinedCorrelationError
from .lime import LimeConfig, SegmentGrid, compute_signature, make_plan, save_plan, save_signature
from .nn import Dataset, TrainConfig, blob_centers, forward, sample_blobs, save_model, train
from .oracle import RemoteEndpoint, local_oracle, remote_oracle
from .util import atomic_write_text, config_hash, derived_seed
from .zest import DistanceMetric, SignatureStore, select_surrogate

log = logging.getLogger(__name__)


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ConfigError("pearson needs two equal-length vectors")
    if x.shape[0] < 2:
        raise ConfigError("pearson needs at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for zero-variance input")
    r = float(dx @ dy) / float(np.sqrt(sxx * syy))
    return float(min(1.0, max(-1.0, r)))


def _average_ranks(values) -> np.ndarray:
    """1-based ranks; equal values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(v.shape[0])
    base = np.arange(1.0, v.shape[0] + 1.0)
    i = 0
    while i < v.shape[0]:
        j = i
        while j + 1 < v.shape[0] and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = base[i:j + 1].mean()
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation (Pearson over average ranks)."""
    return pearson(_average_ranks(xs), _average_ranks(ys))


@dataclass(frozen=True)
class CorrelationRecord:
    victim_id: str
    metric: DistanceMetric
    n_references: int
    epsilon: float
    r: float
    sample_count: int


@dataclass(frozen=True)
class TransferMatrix:
    """rate[i][j]: transfer success from surrogate i to victim j."""

    model_ids: "tuple[str, ...]"
    rates: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rates, dtype=np.float64))
        n = len(self.model_ids)
        if r.shape != (n, n):
            raise ConfigError(f"rates must be {n}x{n}")
        if r.size and (r.min() < 0.0 or r.max() > 1.0):
            raise ConfigError("transfer rates must lie in [0,1]")
        r.flags.writeable = False
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "model_ids", tuple(self.model_ids))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["surrogate\\victim", *self.model_ids])
        for i, mid in enumerate(self.model_ids):
            w.writerow([mid, *[repr(float(v)) for v in self.rates[i]]])
        return buf.getvalue()


def select_attack_points(models, data: Dataset, count: int) -> Dataset:
    """First `count` points (dataset order) all models classify correctly."""
    ok = np.ones(len(data), dtype=bool)
    for model in models:
        ok &= forward(model, data.points).argmax(axis=1) == data.labels
    idx = np.flatnonzero(ok)
    if idx.size < count:
        raise ConfigError(
            f"only {idx.size} points are classified correctly by all models; "
            f"need {count}")
    return data.subset(idx[:count])


def compute_transfer_matrix(models, points_data: Dataset, cfg: AttackConfig) -> TransferMatrix:
    """All-pairs transfer among local models on a shared point set."""
    batches = [pgd(model, points_data, cfg) for model in models]
    n = len(models)
    rates = np.zeros((n, n))
    for j, victim_model in enumerate(models):
        victim = local_oracle(victim_model)
        for i in range(n):
            rates[i, j] = transfer_eval(victim, batches[i]).success_rate
    return TransferMatrix(tuple(m.model_id for m in models), rates)


# --- campaign -------------------------------------------------------------

_DEFAULT_TRAIN = {"batch_size": 32, "learning_rate": 0.1, "epochs": 40}


def _train_config(block: dict, seed: int) -> TrainConfig:
    merged = {**_DEFAULT_TRAIN, **{k: v for k, v in block.items()
                                   if k in ("hidden", "epochs", "batch_size", "learning_rate")}}
    return TrainConfig(hidden=tuple(merged["hidden"]), epochs=merged["epochs"],
                       batch_size=merged["batch_size"],
                       learning_rate=merged["learning_rate"], rng_seed=seed)


def _portfolio_dataset(data: Dataset, entry: dict, master: int) -> Dataset:
    """Per-surrogate training view: optional subset and label noise."""
    mid = entry["model_id"]
    out = data
    fraction = float(entry.get("train_fraction", 1.0))
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"{mid}: train_fraction must be in (0,1]")
    if fraction < 1.0:
        rng = np.random.default_rng(derived_seed(master, f"subset.{mid}"))
        take = max(1, int(round(fraction * len(data))))
        out = out.subset(np.sort(rng.choice(len(data), size=take, replace=False)))
    noise = float(entry.get("label_noise", 0.0))
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"{mid}: label_noise must be in [0,1]")
    if noise > 0.0:
        rng = np.random.default_rng(derived_seed(master, f"labelnoise.{mid}"))
        labels = out.labels.copy()
        flip = rng.random(len(out)) < noise
        labels[flip] = (labels[flip] + rng.integers(
            1, out.class_count, size=int(flip.sum()))) % out.class_count
        out = Dataset(out.points, labels, out.class_count)
    return out


@dataclass
class CampaignResult:
    config_hash: str
    out_dir: str
    victim_id: str
    selected: dict                      # metric -> proxy_id
    correlations: "list[CorrelationRecord]"
    distances: dict                     # metric -> {proxy_id: distance}
    transfer_rates: dict                # proxy_id -> TransferResult
    victim_ledger: dict
    manifest_path: str


def _write_manifest(out_dir, payload):
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(payload, sort_keys=True, indent=2) + "\n")


def run_campaign(config: dict, out_dir) -> CampaignResult:
    """Execute the full pipeline described by `config` into `out_dir`."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(config)
    stage = "parse"
    try:
        master = int(config["master_seed"])
        ds_cfg = config["dataset"]
        victim_cfg = config["victim"]
        portfolio_cfg = config["portfolio"]
        lime_cfg = config["lime"]
        attack_cfg_block = config["attack"]
        metrics = [DistanceMetric.parse(m) for m in config.get("metrics", ["cosine"])]
        if not portfolio_cfg:
            raise ConfigError("portfolio must list at least one surrogate")
        if ds_cfg.get("kind", "blobs") != "blobs":
            raise ConfigError(f"unknown dataset kind {ds_cfg.get('kind')!r}")

        stage = "dataset"
        centers = blob_centers(int(ds_cfg["classes"]), int(ds_cfg["features"]),
                               derived_seed(master, "data.centers"))
        noise = float(ds_cfg.get("noise", 0.08))
        train_data = sample_blobs(centers, int(ds_cfg["train_size"]), noise,
                                  derived_seed(master, "data.train"))
        test_data = sample_blobs(centers, int(ds_cfg["test_size"]), noise,
                                 derived_seed(master, "data.test"))

        stage = "train"
        models_dir = os.path.join(out_dir, "models")
        os.makedirs(models_dir, exist_ok=True)
        proxies = []
        for entry in portfolio_cfg:
            mid = entry["model_id"]
            view = _portfolio_dataset(train_data, entry, master)
            model = train(view, _train_config(entry, derived_seed(master, f"train.{mid}")),
                          model_id=mid)
            save_model(model, os.path.join(models_dir, f"{mid}.mlp"))
            proxies.append(model)
            log.info("trained %s: accuracy %.3f", mid, model.metadata["train_accuracy"])
        if victim_cfg.get("kind", "local") == "local":
            vid = victim_cfg.get("model_id", "victim")
            victim_model = train(
                train_data, _train_config(victim_cfg, derived_seed(master, f"train.{vid}")),
                model_id=vid)
            save_model(victim_model, os.path.join(models_dir, f"{vid}.mlp"))
            victim = local_oracle(victim_model)
        elif victim_cfg["kind"] == "remote":
            victim = remote_oracle(RemoteEndpoint(victim_cfg["url"]))
        else:
            raise ConfigError(f"unknown victim kind {victim_cfg['kind']!r}")

        stage = "plan"
        grid = SegmentGrid.uniform(int(ds_cfg["features"]), int(lime_cfg.get("segments", 16)))
        lcfg = LimeConfig(perturbations=int(lime_cfg["p"]),
                          kernel_width=lime_cfg.get("kernel_width"),
                          ridge=float(lime_cfg.get("ridge", 1.0)),
                          replacement=lime_cfg.get("replacement", "segment_mean"))
        plan = make_plan(train_data, int(lime_cfg["n"]), grid, lcfg,
                         derived_seed(master, "plan"), models=proxies)
        save_plan(plan, os.path.join(out_dir, "shared.plan"))

        stage = "signatures"
        store = SignatureStore(os.path.join(out_dir, "signatures"))
        for model in proxies:
            store.put_signature(compute_signature(local_oracle(model), plan))
        victim_sig = compute_signature(victim, plan)
        save_signature(victim_sig, os.path.join(out_dir, "victim.sig"))
        signature_cost = victim.ledger.breakdown()

        stage = "distances"
        selected = {}
        distances = {}
        for metric in metrics:
            proxy_id, report = select_surrogate(store, victim_sig, metric)
            selected[metric.value] = proxy_id
            distances[metric.value] = dict(report.entries)
            atomic_write_text(os.path.join(out_dir, f"distances_{metric.value}.csv"),
                              f"# config_hash: {chash}\n" + report.to_csv())

        stage = "attack"
        acfg = AttackConfig(
            epsilon=float(attack_cfg_block.get("epsilon", 0.1)),
            step_size=float(attack_cfg_block.get("step_size", 0.02)),
            steps=int(attack_cfg_block.get("steps", 40)),
            restarts=int(attack_cfg_block.get("restarts", 5)),
            rng_seed=derived_seed(master, "attack"),
            quantize_8bit=bool(attack_cfg_block.get("quantize_8bit", False)))
        points = select_attack_points(proxies, test_data,
                                      int(attack_cfg_block.get("points", 100)))
        batches = {}
        results = {}
        for model in proxies:
            per_proxy = AttackConfig(
                epsilon=acfg.epsilon, step_size=acfg.step_size, steps=acfg.steps,
                restarts=acfg.restarts,
                rng_seed=derived_seed(master, f"pgd.{model.model_id}"),
                quantize_8bit=acfg.quantize_8bit)
            batch = pgd(model, points, per_proxy)
            batches[model.model_id] = batch
            results[model.model_id] = transfer_eval(victim, batch)

        primary = metrics[0].value
        chosen = batches[selected[primary]]
        save_batch(chosen, os.path.join(out_dir, "selected.adv"))
        atomic_write_text(os.path.join(out_dir, "selected_batch.csv"),
                          f"# config_hash: {chash}\n" + batch_summary_csv(chosen))

        stage = "transfer-report"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["proxy_id", "local_success_rate", "valid_points",
                  "already_misclassified", "success_count", "success_rate",
                  "raw_success_rate"]
        header += [f"distance_{m.value}" for m in metrics]
        w.writerow(header)
        for entry in portfolio_cfg:
            mid = entry["model_id"]
            res = results[mid]
            row = [mid, repr(batches[mid].local_success_rate), res.valid_points,
                   res.already_misclassified, res.success_count,
                   repr(res.success_rate), repr(res.raw_success_rate)]
            row += [repr(distances[m.value][mid]) for m in metrics]
            w.writerow(row)
        atomic_write_text(os.path.join(out_dir, "transfer.csv"),
                          f"# config_hash: {chash}\n" + buf.getvalue())

        stage = "correlation"
        records = []
        plot_rows = []
        for metric in metrics:
            xs = [distances[metric.value][e["model_id"]] for e in portfolio_cfg]
            ys = [results[e["model_id"]].success_rate for e in portfolio_cfg]
            r = pearson(xs, ys)
            records.append(CorrelationRecord(
                victim_id=victim.oracle_id, metric=metric, n_references=plan.n,
                epsilon=acfg.epsilon, r=r, sample_count=len(xs)))
            plot_rows += [(metric.value, e["model_id"], x, y, acfg.epsilon)
                          for e, x, y in zip(portfolio_cfg, xs, ys)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["victim_id", "metric", "n_references", "epsilon", "pearson_r",
                    "sample_count"])
        for rec in records:
            w.writerow([rec.victim_id, rec.metric.value, rec.n_references,
                        repr(rec.epsilon), repr(rec.r), rec.sample_count])
        atomic_write_text(os.path.join(out_dir, "correlations.csv"),
                          f"# config_hash: {chash}\n" + buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "proxy_id", "distance", "transfer_rate", "epsilon"])
        for row in plot_rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4])])
        atomic_write_text(os.path.join(out_dir, "plotdata.csv"),
                          f"# config_hash: {chash}\n" + buf.getvalue())

        stage = "manifest"
        ledger = victim.ledger.snapshot()
        manifest = {
            "status": "ok",
            "config_hash": chash,
            "victim_id": victim.oracle_id,
            "selected_surrogate": selected,
            "plan_fingerprint": plan.fingerprint(),
            "signature_query_cost": signature_cost,
            "victim_ledger": ledger,
            "correlations": {rec.metric.value: rec.r for rec in records},
        }
        _write_manifest(out_dir, manifest)
    except Exception as e:
        _write_manifest(out_dir, {"status": "failed", "stage": stage,
                                  "error": f"{type(e).__name__}: {e}",
                                  "config_hash": chash})
        raise

    return CampaignResult(
        config_hash=chash,
        out_dir=out_dir,
        victim_id=victim.oracle_id,
        selected=selected,
        correlations=records,
        distances=distances,
        transfer_rates=results,
        victim_ledger=ledger,
        manifest_path=os.path.join(out_dir, "manifest.json"),
    )


def load_campaign_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def bundled_campaign_config() -> dict:
    """The desk-scale campaign shipped with the package: one victim, eight
    surrogates across three architectures plus quality degradations."""
    from importlib import resources
    text = resources.files("zestkit.data").joinpath("desk_campaign.json") \
        .read_text(encoding="utf-8")
    return json.loads(text)
