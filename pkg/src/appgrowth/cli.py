"""Command-line entry point: ``appgrowth <command> [options]``.

Every subcommand takes ``--config`` (a flat JSON object), ``--seed`` and
``--out``.  Flags override config-file values; the resolved configuration is
written as ``run_config.json`` next to the outputs.  Failures print one line
``error code=<CODE> message=<text>`` on stderr and exit with 1 (computation),
2 (I/O) or 3 (configuration).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from ._format import dumps, fmt
from .errors import AppGrowthError, ConfigError, IngestError, InputError, MissingFileError
from .ingest import TableSchema, load_table
from .rng import DEFAULT_SEED

log = logging.getLogger("appgrowth")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Param:
    name: str
    type: type
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple = ()
    flag: str | None = None
    path: bool = False

    @property
    def option(self) -> str:
        return self.flag or "--" + self.name.replace("_", "-")


@dataclass(frozen=True)
class Command:
    name: str
    params: tuple[Param, ...]
    outputs: tuple[str, ...]
    run: object
    help: str = ""


def _check_type(p: Param, value):
    if value is None:
        return None
    if p.type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        value = float(value)
    elif p.type is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, p.type) or (p.type is not bool and isinstance(value, bool)):
        raise ConfigError(f"key {p.name!r} expects {p.type.__name__}, got {value!r}")
    if p.choices and value not in p.choices:
        raise ConfigError(f"key {p.name!r} must be one of {list(p.choices)}, got {value!r}")
    return value


def resolve_config(cmd: Command, flags: dict, config_path: str | None) -> dict:
    """Merge defaults, config file and flags; unknown or missing keys are errors.

    Relative input paths inside a config file are taken relative to the file.
    """
    known = {p.name: p for p in cmd.params}
    file_cfg: dict = {}
    base = None
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise MissingFileError(f"config file not found: {path}", path=path)
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        base = path.resolve().parent
        # an echoed run_config.json is itself a valid config for the same command
        if "command" in file_cfg:
            if file_cfg.pop("command") != cmd.name:
                raise ConfigError(f"config file is for another command, not {cmd.name}")
    for key in file_cfg:
        if key not in known and key not in ("seed", "out"):
            raise ConfigError(f"unknown config key {key!r} for {cmd.name}")
    cfg: dict = {"command": cmd.name}
    seed = flags.get("seed")
    if seed is None:
        seed = file_cfg.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    cfg["seed"] = seed
    out = flags.get("out")
    if out is None:
        out = file_cfg.get("out", ".")
    if not isinstance(out, str):
        raise ConfigError("out must be a string")
    cfg["out"] = out
    for p in cmd.params:
        if flags.get(p.name) is not None:
            value = flags[p.name]
        elif p.name in file_cfg:
            value = file_cfg[p.name]
            if p.path and isinstance(value, str) and not Path(value).is_absolute():
                value = str(base / value)
        else:
            value = p.default
        value = _check_type(p, value)
        if p.required and value is None:
            raise ConfigError(f"missing required key {p.name!r} (flag {p.option})")
        cfg[p.name] = value
    return cfg


def output_paths(cmd: Command, out: str) -> tuple[list[Path], Path]:
    """Output file paths and the directory that receives run_config.json.

    ``out`` is a directory (existing, trailing slash, or no file suffix) that
    receives the default file names, or a comma-separated list of file paths,
    one per output.
    """
    parts = [s for s in out.split(",") if s]
    if not parts:
        raise ConfigError("empty --out")
    if len(parts) == 1:
        p = Path(parts[0])
        if parts[0].endswith(("/", "\\")) or p.is_dir() or p.suffix == "":
            return [p / name for name in cmd.outputs], p
    if len(parts) != len(cmd.outputs):
        raise ConfigError(f"{cmd.name} writes {len(cmd.outputs)} file(s) "
                          f"({', '.join(cmd.outputs)}); --out lists {len(parts)}")
    paths = [Path(s) for s in parts]
    return paths, paths[0].parent


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj), encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommand runners
# ---------------------------------------------------------------------------

def run_risk_fit(cfg, outs):
    from .ingest import load_multiview
    from .multiview_risk import fit_irls
    data = load_multiview(cfg["data"], cfg["views"])
    if cfg["risk_class"] not in data.classes:
        raise InputError(f"risk class {cfg['risk_class']!r} is not a label in {cfg['data']}")
    model = fit_irls(data, cfg["alpha"], cfg["beta"], cfg["tol"], cfg["max_iter"], cfg["seed"],
                     risk_class=cfg["risk_class"])
    model.save(outs[0])


def run_risk_rank(cfg, outs):
    from .ingest import load_multiview
    from .multiview_risk import RiskModel, predict_and_rank
    model = RiskModel.load(_existing(cfg["model"]))
    data = load_multiview(cfg["data"], cfg["views"])
    r = predict_and_rank(model, data, cfg["risk_class"])
    write_csv(outs[0], ["app_id", "risk_score", "rank"],
              ([data.app_ids[i], float(r.scores[i]), int(r.rank[i])] for i in r.order))


def run_crowd_rank(cfg, outs):
    from .crowd_rank import aggregate_em, fit_rank, pair_matrix
    from .ingest import load_annotations, load_pairs
    from .multiview_risk import rank_by_score
    ann = load_annotations(cfg["annotations"])
    pairs = load_pairs(cfg["pairs"])
    post = aggregate_em(ann, cfg["max_iter"], cfg["tol"], cfg["seed"], init=cfg["init"])
    B = pair_matrix(pairs, app_ids=post.app_ids)
    fitted = fit_rank(post.Y, B, cfg["lambda"], cfg["C"])
    order = rank_by_score(fitted.scores)
    rows = []
    for r, i in enumerate(order, start=1):
        rows.append([post.app_ids[i], float(fitted.scores[i]), r,
                     *(float(v) for v in post.Y[i])])
    write_csv(outs[0], ["app_id", "score", "rank", *(f"posterior_{a}" for a in post.aspect_ids)],
              rows)


def run_retention(cfg, outs):
    from .ingest import load_events
    from .retention import build_cohorts, survival_curves
    events = load_events(cfg["events"])
    table = build_cohorts(events, cfg["period"], cfg["horizon"], cfg["observation_end"])
    ret = table.retention()
    rows = []
    for c, start in enumerate(table.cohort_start):
        for t in range(table.horizon + 1):
            rows.append([int(start), t, int(table.at_risk[c, t]), int(table.active[c, t]),
                         float(ret[c, t])])
    write_csv(outs[0], ["cohort_start", "t_index", "at_risk", "active", "retention"], rows)
    # period 0 is active by construction; the survival curves start at period 1
    h = table.hazards(pooled=True)[1:]
    curves = survival_curves(h)
    write_csv(outs[1], ["t_index", "value"],
              ([t, float(v)] for t, v in enumerate(curves.kaplan_meier, start=1)))
    write_csv(outs[2], ["t_index", "value"],
              ([t, float(v)] for t, v in enumerate(curves.nelson_aalen, start=1)))


def _propensity(cfg):
    from .causal_campaign import fit_propensity
    from .ingest import load_study
    study = load_study(cfg["study"])
    if cfg["segment"] is not None:
        column, sep, value = cfg["segment"].partition("=")
        if not sep:
            raise ConfigError(f"segment must look like column=value, got {cfg['segment']!r}")
        study = study.where(column, value)
        if len(study) == 0:
            raise InputError(f"segment {cfg['segment']!r} selects no rows")
    model = fit_propensity(study, cfg["link"], cfg["degree"], cfg["seed"])
    return study, model


def run_campaign_effects(cfg, outs):
    from .causal_campaign import difference_in_means, estimate_effects
    study, model = _propensity(cfg)
    scores = model.scores(study.X)
    est = estimate_effects(study, scores, cfg["estimator"], cfg["strata"])
    _write_json(outs[0], {
        **est.to_dict(),
        "naive_difference": difference_in_means(study),
        "n": len(study), "n_treated": int(study.treatment.sum()),
        "propensity": {"link": model.link, "degree": model.degree, "coef": model.coef,
                       "loglik": model.loglik, "iterations": model.iterations},
    })


def run_campaign_balance(cfg, outs):
    from .causal_campaign import check_balance
    study, model = _propensity(cfg)
    rep = check_balance(model.scores(study.X), study, cfg["strata"], cfg["threshold"])
    _write_json(outs[0], rep.to_dict())


def _capacity(text: str, path, row) -> float:
    try:
        v = float(text)
    except ValueError:
        raise IngestError("capacity must be a number or 'inf'", path=path, row=row,
                          column="capacity") from None
    if np.isnan(v) or v < 0:
        raise IngestError("capacity must be nonnegative", path=path, row=row, column="capacity")
    return v


def load_curves(path):
    """Channel curves from ``channel,cap,rate[,capacity]`` or fitted from
    ``channel,spend,users[,capacity]`` observations."""
    from .budget import ResponseCurve, fit_response_curve
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"input file not found: {p}", path=p)
    with open(p, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), [])
    cap_rule = ((r"capacity", "text"),)
    if header[:3] == ["channel", "cap", "rate"]:
        t = load_table(p, TableSchema.of(("channel", "identifier"), ("cap", "numeric"),
                                         ("rate", "numeric"), trailing=cap_rule))
        names = list(t["channel"])
        if len(set(names)) != len(names):
            raise IngestError("duplicate channel", path=p)
        try:
            curves = [ResponseCurve(float(c), float(r)) for c, r in zip(t["cap"], t["rate"])]
        except InputError as exc:
            raise IngestError(str(exc), path=p) from None
        caps = [_capacity(x, p, i) for i, x in enumerate(t["capacity"], 1)] \
            if "capacity" in t.data else [np.inf] * len(names)
        return names, curves, caps
    t = load_table(p, TableSchema.of(("channel", "identifier"), ("spend", "numeric"),
                                     ("users", "numeric"), trailing=cap_rule))
    names = sorted(set(t["channel"]))
    curves, caps = [], []
    for name in names:
        m = np.array([c == name for c in t["channel"]])
        curves.append(fit_response_curve(t["spend"][m], t["users"][m]))
        if "capacity" in t.data:
            vals = {_capacity(x, p, i) for i, x in enumerate(np.array(t["capacity"])[m], 1)}
            if len(vals) != 1:
                raise IngestError(f"channel {name!r} lists more than one capacity", path=p)
            caps.append(vals.pop())
        else:
            caps.append(np.inf)
    return names, curves, caps


def run_campaign_budget(cfg, outs):
    from .budget import allocate_budget
    names, curves, caps = load_curves(cfg["curves"])
    alloc = allocate_budget(curves, cfg["total"], caps, cfg["n_steps"])
    rows = [[n, float(s), float(u), float(c.cap), float(c.rate)]
            for n, s, u, c in zip(names, alloc.spend, alloc.users, curves)]
    write_csv(outs[0], ["channel", "spend", "users", "cap", "rate"], rows)
    if alloc.unspent > 0:
        log.warning("every channel reached capacity; %s left unspent", fmt(alloc.unspent))


def run_rec_fit(cfg, outs):
    from .ingest import load_context, load_privacy, load_ratings
    from .poisson_rec import fit
    if cfg["context"] is not None:
        if cfg["privacy"] is not None:
            raise ConfigError("--privacy and --context are mutually exclusive")
        data = load_context(cfg["context"])
        model = fit(data, "context", cfg["rank"], 0.0, cfg["iters"], cfg["tol"], cfg["seed"])
    else:
        if cfg["ratings"] is None:
            raise ConfigError("missing required key 'ratings' (flag --ratings)")
        data = load_ratings(cfg["ratings"])
        if cfg["privacy"] is not None:
            prof = load_privacy(cfg["privacy"], data.item_ids)
            model = fit(data, "privacy", cfg["rank"], cfg["lambda"], cfg["iters"], cfg["tol"],
                        cfg["seed"], privacy=prof)
        else:
            model = fit(data, "plain", cfg["rank"], 0.0, cfg["iters"], cfg["tol"], cfg["seed"])
    model.save(outs[0])


def _index_of(ids, value, what):
    try:
        return list(ids).index(value)
    except ValueError:
        raise InputError(f"unknown {what} {value!r}") from None


def run_rec_topk(cfg, outs):
    from .poisson_rec import FactorModel, top_k
    model = FactorModel.load(_existing(cfg["model"]))
    u = _index_of(model.user_ids, cfg["user"], "user")
    k = None
    if model.variant == "context":
        if cfg["context_id"] is None:
            raise ConfigError("context model needs --context-id")
        k = _index_of(model.context_ids, cfg["context_id"], "context")
    res = top_k(model, u, cfg["k"], context=k)
    if res.clamped:
        log.warning("k=%d exceeds the unseen catalog; returning %d items", cfg["k"], len(res.items))
    write_csv(outs[0], ["rank", "item_id", "rate"],
              ([r, model.item_ids[j], s] for r, (j, s) in enumerate(zip(res.items, res.scores), 1)))


def run_rec_eval(cfg, outs):
    from .ingest import RatingsTriples, load_ratings
    from .poisson_rec import FactorModel, precision_at_k
    model = FactorModel.load(_existing(cfg["model"]))
    held = load_ratings(cfg["heldout"])
    upos = {a: i for i, a in enumerate(model.user_ids)}
    ipos = {a: i for i, a in enumerate(model.item_ids)}
    keep = [r for r in range(len(held))
            if held.user_ids[held.user[r]] in upos and held.item_ids[held.item[r]] in ipos]
    if len(keep) < len(held):
        log.warning("%d held-out rows name users or items unknown to the model; dropped",
                    len(held) - len(keep))
    u = np.array([upos[held.user_ids[held.user[r]]] for r in keep], dtype=np.int64)
    i = np.array([ipos[held.item_ids[held.item[r]]] for r in keep], dtype=np.int64)
    mapped = RatingsTriples(model.user_ids, model.item_ids, u, i, held.count[keep])
    p = precision_at_k(model, mapped, cfg["k"], min_count=cfg["min_count"])
    _write_json(outs[0], {"k": cfg["k"], "precision_at_k": p, "n_heldout": len(keep)})


def run_embed_train(cfg, outs):
    from .embed_maturity import train_skipgram
    from .ingest import load_corpus
    corpus = load_corpus(cfg["corpus"])
    table = train_skipgram(corpus, cfg["dim"], cfg["window"], cfg["lr"], cfg["epochs"],
                           cfg["seed"])
    table.save(outs[0])


def _load_policy(path):
    p = _existing(path)
    try:
        policy = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON: {exc}", path=p) from None
    if not isinstance(policy, dict):
        raise IngestError("policy must map label -> level", path=p)
    return policy


def run_maturity_fit(cfg, outs):
    from .embed_maturity import EmbeddingTable, embed_documents, fit_maturity
    from .ingest import load_app_docs
    table = EmbeddingTable.load(_existing(cfg["emb"]))
    policy = _load_policy(cfg["policy"])
    docs = load_app_docs(cfg["docs"])
    E = embed_documents(docs.documents, table)
    model = fit_maturity(E, docs.labels, cfg["gamma"], cfg["reg"], policy=policy,
                         labels=tuple(sorted(policy)), embedding=table)
    model.save(outs[0])


def run_maturity_predict(cfg, outs):
    from .embed_maturity import MaturityModel, embed_documents
    from .ingest import load_app_docs
    model = MaturityModel.load(_existing(cfg["model"]))
    if model.embedding is None:
        raise InputError("maturity model carries no embedding table")
    docs = load_app_docs(cfg["docs"])
    E = embed_documents(docs.documents, model.embedding)
    preds = model.predict(E)
    write_csv(outs[0], ["app_id", "labels", "level"],
              ([a, ";".join(p), model.levels(E[i:i + 1])[0]]
               for i, (a, p) in enumerate(zip(docs.app_ids, preds))))


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"input file not found: {p}", path=p)
    return p


# ---------------------------------------------------------------------------
# command table
# ---------------------------------------------------------------------------

_STUDY = (
    Param("study", str, required=True, help="study.csv (outcome, treatment, x1..xd)", path=True),
    Param("link", str, "probit", choices=("probit", "logit")),
    Param("degree", int, 1, choices=(1, 2)),
    Param("strata", int, 5),
    Param("segment", str, None, help="analyze only rows whose metadata column=value"),
)

COMMANDS = {c.name: c for c in (
    Command("risk-fit", (
        Param("data", str, required=True, help="multiview.csv", path=True),
        Param("views", str, required=True, help="views.json", path=True),
        Param("alpha", float, 1.0, help="group (inter-view) penalty weight"),
        Param("beta", float, 0.1, help="exclusive (intra-view) penalty weight"),
        Param("tol", float, 1e-7),
        Param("max_iter", int, 500),
        Param("risk_class", str, "risky"),
    ), ("model.json",), run_risk_fit, "fit the multi-view sparse risk model"),
    Command("risk-rank", (
        Param("model", str, required=True, path=True),
        Param("data", str, required=True, path=True),
        Param("views", str, required=True, path=True),
        Param("risk_class", str, None),
    ), ("ranking.csv",), run_risk_rank, "rank apps by predicted risk"),
    Command("crowd-rank", (
        Param("annotations", str, required=True, help="ann.csv", path=True),
        Param("pairs", str, required=True, help="pairs.csv", path=True),
        Param("lambda", float, 1.0, flag="--lambda"),
        Param("C", float, 1.0, flag="--C"),
        Param("max_iter", int, 200),
        Param("tol", float, 1e-8),
        Param("init", str, "vote", choices=("vote", "random")),
    ), ("scores.csv",), run_crowd_rank, "aggregate crowd labels and learn a risk ranking"),
    Command("retention", (
        Param("events", str, required=True, path=True),
        Param("period", str, "week"),
        Param("horizon", int, 12),
        Param("observation_end", int, None, help="epoch seconds (default: last event)"),
    ), ("cohorts.csv", "km.csv", "na.csv"), run_retention, "cohort retention and survival"),
    Command("campaign effects", (*_STUDY, Param("estimator", str, "ipw",
                                                choices=("ipw", "stratified"))),
            ("effects.json",), run_campaign_effects, "propensity-score ATE / ATT"),
    Command("campaign balance", (*_STUDY, Param("threshold", float, 0.1)),
            ("balance.json",), run_campaign_balance, "covariate balance after stratification"),
    Command("campaign budget", (
        Param("curves", str, required=True, help="curves.csv", path=True),
        Param("total", float, required=True),
        Param("n_steps", int, 10_000),
    ), ("alloc.csv",), run_campaign_budget, "greedy budget allocation across channels"),
    Command("rec fit", (
        Param("ratings", str, None, path=True),
        Param("privacy", str, None, path=True),
        Param("context", str, None, path=True),
        Param("lambda", float, 0.0, flag="--lambda"),
        Param("rank", int, 10),
        Param("iters", int, 500),
        Param("tol", float, 1e-8),
    ), ("model.json",), run_rec_fit, "fit a Poisson factorization recommender"),
    Command("rec topk", (
        Param("model", str, required=True, path=True),
        Param("user", str, required=True),
        Param("k", int, 10),
        Param("context_id", str, None),
    ), ("topk.csv",), run_rec_topk, "top-k unseen items for one user"),
    Command("rec eval", (
        Param("model", str, required=True, path=True),
        Param("heldout", str, required=True, path=True),
        Param("k", int, 5),
        Param("min_count", int, 1),
    ), ("eval.json",), run_rec_eval, "precision@k on held-out ratings"),
    Command("embed train", (
        Param("corpus", str, required=True, path=True),
        Param("dim", int, 50),
        Param("window", int, 2),
        Param("lr", float, 0.025),
        Param("epochs", int, 5),
    ), ("emb.json",), run_embed_train, "train skip-gram word vectors"),
    Command("maturity fit", (
        Param("docs", str, required=True, path=True),
        Param("emb", str, required=True, path=True),
        Param("policy", str, required=True, path=True),
        Param("gamma", float, 0.2),
        Param("reg", float, 1e-2),
    ), ("mat.json",), run_maturity_fit, "fit the maturity-content classifier"),
    Command("maturity predict", (
        Param("model", str, required=True, path=True),
        Param("docs", str, required=True, path=True),
    ), ("pred.csv",), run_maturity_predict, "predict content labels and maturity levels"),
)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="appgrowth", description="App risk, retention and growth analytics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--seed", type=int, help=f"run seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output directory or comma-separated file list")
    common.add_argument("-v", "--verbose", action="store_true")
    top = parser.add_subparsers(dest="group", metavar="command", parser_class=_Parser)
    groups: dict = {}
    for name, cmd in COMMANDS.items():
        head, _, tail = name.partition(" ")
        if tail:
            if head not in groups:
                g = top.add_parser(head, help=f"{head} subcommands")
                groups[head] = g.add_subparsers(dest="sub", metavar="subcommand",
                                                parser_class=_Parser)
            sp = groups[head].add_parser(tail, parents=[common], help=cmd.help)
        else:
            sp = top.add_parser(head, parents=[common], help=cmd.help)
        for p in cmd.params:
            sp.add_argument(p.option, dest=p.name, type=p.type, default=None, help=p.help or None)
        sp.set_defaults(command=name)
    return parser


def _dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    name = getattr(args, "command", None)
    if name is None:
        if getattr(args, "group", None):
            raise ConfigError(f"{args.group} needs a subcommand")
        parser.print_help(sys.stderr)
        return 3
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = COMMANDS[name]
    cfg = resolve_config(cmd, vars(args), args.config)
    outs, run_dir = output_paths(cmd, cfg["out"])
    run_dir.mkdir(parents=True, exist_ok=True)
    for p in outs:
        p.parent.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "run_config.json", cfg)
    cmd.run(cfg, outs)
    return 0


def main(argv=None) -> int:
    try:
        return _dispatch(argv)
    except AppGrowthError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code={exc.code} message={msg}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code=E_IO message={msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
