"""``cracknet`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""

import argparse
import configparser
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dataset import PatchGeometry, SamplingError, SamplingPolicy, build_training_set
from .evaluation import Tolerance, evaluate_corpus, format_table, write_csv
from .inference import binarize, normalize_votes, predict_image
from .io import (CheckpointError, DataError, load_checkpoint, load_corpus, load_image, load_mask,
                 match_channels, save_binary_mask, save_checkpoint, save_probability_map, write_corpus)
from .network import NetworkConfig, NumericAbort, TrainConfig, build_network, train
from .synthetic import SyntheticSpec, as_corpus, generate_synthetic_corpus

log = logging.getLogger("cracknet")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------

@dataclass
class DataSection:
    train_data: str = ""
    test_data: str = ""
    manifest: str = ""
    synthetic: bool = False


@dataclass
class GeometrySection:
    h: int = 13
    s: int = 5


@dataclass
class SamplingSection:
    R: str = "3"
    total_cap: int = 0  # 0 = no cap
    stratify: bool = False


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    batch_size: int = 256
    iterations: int = 30000
    beta: float = 0.0005
    dropout_p: float = 0.5
    checkpoint_every: int = 1000


@dataclass
class InferenceSection:
    norm_mode: str = "mean"
    threshold: float = 0.5
    batch_size: int = 1024


@dataclass
class EvaluationSection:
    tolerance: float = 2.0
    metric: str = "euclidean"
    aggregation: str = "both"


@dataclass
class SyntheticSection:
    n_train: int = 20
    n_test: int = 10
    seed: int = 1234
    height: int = 128
    width: int = 128
    channels: int = 3


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    data: DataSection = field(default_factory=DataSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    train: TrainSection = field(default_factory=TrainSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    # derived views
    @property
    def geometry_obj(self):
        return PatchGeometry(self.geometry.h, self.geometry.s)

    def policy(self, R=...):
        r = ex.parse_ratio(self.sampling.R) if R is ... else R
        cap = self.sampling.total_cap or None
        return SamplingPolicy(R=r, total_cap=cap, seed=self.seed, stratify=self.sampling.stratify)

    def train_config(self, iterations=None):
        t = self.train
        return TrainConfig(t.learning_rate, t.batch_size, t.iterations if iterations is None else iterations,
                           t.beta, t.dropout_p, self.seed, t.checkpoint_every)

    @property
    def tolerance(self):
        return Tolerance(self.evaluation.tolerance, self.evaluation.metric)

    def synthetic_spec(self):
        return SyntheticSpec(height=self.synthetic.height, width=self.synthetic.width,
                             channels=self.synthetic.channels)


_SECTIONS = ("data", "geometry", "sampling", "train", "inference", "evaluation", "synthetic")
_TOP = ("seed", "jobs", "out")


def _coerce(value: str, kind):
    if kind is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {kind.__name__}") from exc


def _field_types(obj):
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str) for f in fields(obj)}


def load_config(path=None) -> RunConfig:
    """Read an INI-style ``key = value`` file with ``[section]`` headings."""
    cfg = RunConfig()
    if not path:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "R" upper case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in parser.sections():
        if section == "run":
            target = cfg
            types = {k: int if k != "out" else str for k in _TOP}
        elif section in _SECTIONS:
            target = getattr(cfg, section)
            types = _field_types(target)
        else:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, key, _coerce(value, types[key]))
    return cfg


def dump_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {k: str(getattr(cfg, k)) for k in _TOP}
    for section in _SECTIONS:
        parser[section] = {k: str(v) for k, v in asdict(getattr(cfg, section)).items()}
    with open(path, "w") as fh:
        parser.write(fh)


# -- argument parsing --------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="key=value config file with [sections]")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker threads for inference/evaluation")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threshold", type=float)
    p.add_argument("--tolerance", type=float, help="accepted pixel distance d")
    p.add_argument("--metric", choices=("euclidean", "chebyshev"))
    p.add_argument("--norm-mode", choices=("mean", "global"))
    p.add_argument("--aggregation", choices=("micro", "macro", "both"))
    p.add_argument("--synthetic", action="store_true", help="use a generated corpus instead of --data")
    p.add_argument("--h", type=int, help="patch half-width")
    p.add_argument("--s", type=int, help="output structure size")
    p.add_argument("--ratio", "-R", help="negative:positive ratio, or 'natural'")
    p.add_argument("--total-cap", type=int, help="fixed total number of training samples")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--channels", type=int, choices=(1, 3), help="channels of generated synthetic images")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="cracknet", description="Structured-prediction crack detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic image/mask dataset directory")
    _common(p)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("build-dataset", help="sample training patches and print positive, negative and total counts")
    _common(p)
    p.add_argument("--data", help="dataset directory (images/, masks/, manifest.txt)")
    p.add_argument("--manifest")

    p = sub.add_parser("train", help="train a network and write checkpoint + trace")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int)

    p = sub.add_parser("predict", help="probability map and binary mask per image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raw", action="store_true", help="also dump float32 maps as .npy")
    p.add_argument("images", nargs="+")

    p = sub.add_parser("evaluate", help="tolerance-based Pr/Re/F1 of prediction masks")
    _common(p)
    p.add_argument("--pred", required=True, help="directory with <stem>.mask.png files")
    p.add_argument("--gt", required=True, help="directory with <stem>.png ground-truth masks")

    p = sub.add_parser("sweep-structure", help="train and evaluate one model per structure size")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--s-list", default="1,3,5,7")

    p = sub.add_parser("sweep-ratio", help="train and evaluate one model per negative:positive ratio")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--r-list", default="1,3,10,natural")
    p.add_argument("--total", type=int, help="fixed total training samples (default: total_cap)")

    p = sub.add_parser("cross-test", help="train on one corpus, evaluate on another")
    _common(p)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--hybrid", action="store_true",
                   help="train on the first half of both training splits, test on each test split")
    return parser


def resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    direct = {"seed": ("", "seed"), "jobs": ("", "jobs"), "out": ("", "out"),
              "threshold": ("inference", "threshold"), "tolerance": ("evaluation", "tolerance"),
              "metric": ("evaluation", "metric"), "norm_mode": ("inference", "norm_mode"),
              "aggregation": ("evaluation", "aggregation"), "h": ("geometry", "h"), "s": ("geometry", "s"),
              "ratio": ("sampling", "R"), "total_cap": ("sampling", "total_cap"),
              "iterations": ("train", "iterations"), "batch_size": ("train", "batch_size"),
              "checkpoint_every": ("train", "checkpoint_every"), "channels": ("synthetic", "channels"),
              "n_train": ("synthetic", "n_train"), "n_test": ("synthetic", "n_test"),
              "data": ("data", "train_data"), "manifest": ("data", "manifest")}
    for arg, (section, key) in direct.items():
        value = getattr(args, arg, None)
        if value is None:
            continue
        setattr(getattr(cfg, section) if section else cfg, key, value)
    if getattr(args, "synthetic", False):
        cfg.data.synthetic = True
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    try:
        cfg.geometry_obj
        cfg.policy()
        cfg.train_config()
        cfg.tolerance
        if not 0 <= cfg.inference.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if cfg.inference.norm_mode not in ("mean", "global"):
            raise ValueError("norm_mode must be mean or global")
        if cfg.evaluation.aggregation not in ("micro", "macro", "both"):
            raise ValueError("aggregation must be micro, macro or both")
        if cfg.jobs < 1:
            raise ValueError("jobs must be >= 1")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- helpers -----------------------------------------------------------------

def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved_config.ini")
    return out


def _synthetic_split(cfg, split):
    spec = cfg.synthetic_spec()
    n = cfg.synthetic.n_train if split == "train" else cfg.synthetic.n_test
    # train and test draw from disjoint child streams of the synthetic seed
    offset = 0 if split == "train" else 1
    gen = generate_synthetic_corpus(spec, n, seed=[cfg.synthetic.seed, offset], prefix=f"{split}")
    return as_corpus(gen)


def _corpus(cfg, split, root=None):
    if cfg.data.synthetic and root is None:
        return _synthetic_split(cfg, split)
    root = root or cfg.data.train_data
    if not root:
        raise ConfigError("no dataset given (use --data DIR or --synthetic)")
    manifest = cfg.data.manifest or None
    return load_corpus(root, split, manifest)


def _report_rows(reports, aggregation):
    if aggregation == "both":
        return reports
    return {aggregation: reports[aggregation]}


def _print_reports(title, reports, aggregation):
    print(title)
    for name, rep in _report_rows(reports, aggregation).items():
        print(f"  {name:<6} Pr={rep.precision:.4f}  Re={rep.recall:.4f}  F1={rep.f1:.4f}")


def _sweep_table(header, rows):
    lines = [f"{header:>10}  {'Pr':>7}  {'Re':>7}  {'F1':>7}  {'Pr(mac)':>7}  {'Re(mac)':>7}  {'F1(mac)':>7}"]
    for key, res in rows:
        mi, ma = res.reports["micro"], res.reports["macro"]
        lines.append(f"{key:>10}  {mi.precision:7.4f}  {mi.recall:7.4f}  {mi.f1:7.4f}  "
                     f"{ma.precision:7.4f}  {ma.recall:7.4f}  {ma.f1:7.4f}")
    return "\n".join(lines)


# -- commands ----------------------------------------------------------------

def cmd_gen_synthetic(cfg, args):
    out = Path(cfg.out)
    spec = cfg.synthetic_spec()
    train_items = generate_synthetic_corpus(spec, cfg.synthetic.n_train, seed=[cfg.synthetic.seed, 0], prefix="train")
    test_items = generate_synthetic_corpus(spec, cfg.synthetic.n_test, seed=[cfg.synthetic.seed, 1], prefix="test")
    write_corpus(out, train_items + test_items,
                 {"train": [s for s, _, _ in train_items], "test": [s for s, _, _ in test_items]})
    dump_config(cfg, out / "resolved_config.ini")
    census = sum(int(m.sum()) for _, _, m in train_items)
    print(f"wrote {len(train_items)} train and {len(test_items)} test images to {out} "
          f"({census} crack pixels in the train split)")


def sample_census(train_set, test_corpus):
    """Positive / negative / total patch counts per split, with the resulting ratio."""
    test_pos = sum(int(it.mask.sum()) for it in test_corpus) if test_corpus else 0
    test_total = sum(it.mask.size for it in test_corpus) if test_corpus else 0
    cols = [("Training", train_set.n_positive, train_set.n_negative)]
    if test_corpus:
        cols.append(("Testing", test_pos, test_total - test_pos))

    def ratio(p, n):
        r = n / p if p else float("inf")
        return f"1:{r:.3g}"

    lines = [f"{'':<20}" + "".join(f"{name:>14}" for name, _, _ in cols)]
    lines.append(f"{'Positive patches':<20}" + "".join(f"{p:>14,}" for _, p, _ in cols))
    lines.append(f"{'Negative patches':<20}" + "".join(f"{n:>14,}" for _, _, n in cols))
    lines.append(f"{'Total patches':<20}" + "".join(f"{p + n:>14,}" for _, p, n in cols))
    lines.append(f"{'Positive : Negative':<20}" + "".join(f"{ratio(p, n):>14}" for _, p, n in cols))
    return "\n".join(lines)


def cmd_build_dataset(cfg, args):
    out = _out_dir(cfg)
    corpus = _corpus(cfg, "train")
    try:
        test_corpus = _corpus(cfg, "test")
    except DataError:
        test_corpus = None
    samples = build_training_set(corpus, cfg.geometry_obj, cfg.policy())
    samples.write_sidecar(out / "samples.txt")
    print(sample_census(samples, test_corpus))


def cmd_train(cfg, args):
    out = _out_dir(cfg)
    corpus = _corpus(cfg, "train")
    channels = corpus[0].image.shape[2]
    geometry = cfg.geometry_obj
    samples = build_training_set(corpus, geometry, cfg.policy())
    if args.resume:
        model = load_checkpoint(args.resume, channels=channels, s=geometry.s, h=geometry.h)
        log.info("resuming at iteration %d", model.iterations_done)
    else:
        model = build_network(NetworkConfig(channels, geometry.h, geometry.s,
                                            cfg.train.dropout_p, cfg.train.beta), seed=cfg.seed)
    policy = cfg.policy()
    model.seed = cfg.seed
    model.ratio = float("nan") if policy.R is None else float(policy.R)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def on_checkpoint(m, it):
        save_checkpoint(m, ckpt_dir / f"iter_{it:07d}.crkn")

    model, trace = train(model, samples, cfg.train_config(), on_checkpoint=on_checkpoint,
                         progress_every=100 if args.verbose else 0)
    save_checkpoint(model, out / "model.crkn")
    trace.to_csv(out / "trace.csv")
    print(f"trained {len(trace)} iterations (now at {model.iterations_done}); "
          f"checkpoint {out / 'model.crkn'}")


def cmd_predict(cfg, args):
    out = _out_dir(cfg)
    model = load_checkpoint(args.checkpoint, h=cfg.geometry.h)
    images = []
    for path in args.images:
        img = load_image(path)
        if img.channels != model.config.input_channels:
            raise DataError(f"{path}: image has {img.channels} channels, checkpoint expects "
                            f"{model.config.input_channels}")
        images.append((Path(path).stem, img))

    def one(item):
        stem, img = item
        prob = normalize_votes(predict_image(model, img, batch_size=cfg.inference.batch_size),
                               cfg.inference.norm_mode)
        save_probability_map(prob.values, out / f"{stem}.prob.png", raw=args.raw)
        save_binary_mask(binarize(prob, cfg.inference.threshold).values, out / f"{stem}.mask.png")
        return stem

    if cfg.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            done = list(pool.map(one, images))
    else:
        done = [one(it) for it in images]
    print(f"wrote {len(done)} probability maps and masks to {out}")


def _find_prediction(pred_dir, stem):
    for name in (f"{stem}.mask.png", f"{stem}.png"):
        if (pred_dir / name).exists():
            return pred_dir / name
    return None


def cmd_evaluate(cfg, args):
    out = _out_dir(cfg)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    gt_files = sorted(gt_dir.glob("*.png"))
    if not gt_files:
        raise DataError(f"no ground-truth masks in {gt_dir}")
    pairs, missing = [], []
    for gt_path in gt_files:
        stem = gt_path.stem
        pred_path = _find_prediction(pred_dir, stem)
        if pred_path is None:
            missing.append(stem)
            continue
        pairs.append((stem, load_mask(pred_path), load_mask(gt_path)))
    if missing:
        raise DataError("no prediction for stem(s): " + ", ".join(missing))
    reports = evaluate_corpus(pairs, cfg.tolerance, "both")
    shown = _report_rows(reports, cfg.evaluation.aggregation)
    write_csv(shown, out / "report.csv")
    table = format_table(shown)
    (out / "report.txt").write_text(table + "\n")
    print(table)


def cmd_sweep_structure(cfg, args):
    out = _out_dir(cfg)
    try:
        s_list = [int(t) for t in args.s_list.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --s-list: {exc}") from exc
    if any(s < 1 or s % 2 == 0 for s in s_list):
        raise ConfigError(f"structure sizes must be odd: {s_list}")
    train_c, test_c = _corpus(cfg, "train"), _corpus(cfg, "test")
    results = ex.sweep_structure(train_c, test_c, s_list, cfg.geometry.h, cfg.policy(), cfg.train_config(),
                                 tol=cfg.tolerance, norm_mode=cfg.inference.norm_mode,
                                 threshold=cfg.inference.threshold, jobs=cfg.jobs)
    table = _sweep_table("s", [(str(s), r) for s, r in results.items()])
    (out / "sweep_structure.txt").write_text(table + "\n")
    print(table)
    return results


def cmd_sweep_ratio(cfg, args):
    out = _out_dir(cfg)
    try:
        r_list = [ex.parse_ratio(t) for t in args.r_list.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --r-list: {exc}") from exc
    total = args.total or cfg.sampling.total_cap
    if not total:
        raise ConfigError("sweep-ratio needs --total (or sampling.total_cap)")
    train_c, test_c = _corpus(cfg, "train"), _corpus(cfg, "test")
    results = ex.sweep_ratio(train_c, test_c, r_list, total, cfg.geometry_obj, cfg.train_config(),
                             seed=cfg.seed, tol=cfg.tolerance, norm_mode=cfg.inference.norm_mode,
                             threshold=cfg.inference.threshold, jobs=cfg.jobs)
    nat = ex.natural_ratio(train_c)
    rows = [(f"nat({nat:.1f})" if r is None else f"{r:g}", res) for r, res in results.items()]
    table = _sweep_table("R", rows)
    (out / "sweep_ratio.txt").write_text(table + "\n")
    print(table)
    return results


def cmd_cross_test(cfg, args):
    out = _out_dir(cfg)
    train_a = load_corpus(args.train_data, "train", None)
    test_b = load_corpus(args.test_data, "test", None)
    geometry = cfg.geometry_obj
    kw = dict(tol=cfg.tolerance, norm_mode=cfg.inference.norm_mode, threshold=cfg.inference.threshold,
              jobs=cfg.jobs)
    lines = []
    if args.hybrid:
        train_b = load_corpus(args.test_data, "train", None)
        test_a = load_corpus(args.train_data, "test", None)
        train_c = ex.hybrid_split(train_a, train_b)
        (out / "hybrid_stems.txt").write_text("\n".join(it.stem for it in train_c) + "\n")
        res = ex.run_experiment(train_c, test_a, geometry, cfg.policy(), cfg.train_config(), **kw)
        channels = res.model.config.input_channels
        test_b = ex.convert_corpus(test_b, channels)
        preds_b = ex.predict_corpus(res.model, test_b, cfg.inference.norm_mode, cfg.inference.threshold,
                                    jobs=cfg.jobs)
        reports = {"hybrid->" + Path(args.train_data).name: res.reports,
                   "hybrid->" + Path(args.test_data).name: ex.evaluate_predictions(preds_b, test_b,
                                                                                    cfg.tolerance)}
        save_checkpoint(res.model, out / "model.crkn")
    else:
        res = ex.run_experiment(train_a, test_b, geometry, cfg.policy(), cfg.train_config(), **kw)
        reports = {f"{Path(args.train_data).name}->{Path(args.test_data).name}": res.reports}
        save_checkpoint(res.model, out / "model.crkn")
    for name, rep in reports.items():
        _print_reports(name, rep, cfg.evaluation.aggregation)
        for agg, r in rep.items():
            lines.append(f"{name},{agg},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f}")
    (out / "cross_test.csv").write_text("run,aggregation,Pr,Re,F1\n" + "\n".join(lines) + "\n")
    return reports


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep-structure": cmd_sweep_structure,
    "sweep-ratio": cmd_sweep_ratio,
    "cross-test": cmd_cross_test,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SamplingError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericAbort, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
