"""Command-line entry point.

Every verb reads a TOML config (optional), applies ``--set section.key=value``
overrides, prints one JSON record on stdout and a short summary on stderr.
Without ``[graph]`` paths the graph is generated from ``[synth]``.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backends import HttpBackend, MockBackend
from .bench import (RUNTIME_MODES, SWEEP_PARAMETERS, bench_runtime, export_embeddings, format_table, sweep,
                    write_jsonl)
from .chain import ChainConfig, build_chain
from .encoder import EncoderSpec, encode_graph
from .graph import GraphError, load_graph, save_graph, split_edges, validate
from .metrics import evaluate_scores
from .reasoner import TraceStore, load_templates, reason_edges
from .student import forward_nodes, load_checkpoint, predict_edges, save_checkpoint
from .synthetic import SyntheticConfig, concept_of, generate_synthetic
from .trainer import TrainConfig, judgment_feature, trace_key, train

VERBS = ("validate", "chain", "reason", "train", "infer", "evaluate", "bench", "sweep", "gen-synth", "export-emb")
EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG = 1, 2, 3

log = logging.getLogger("miscite")


class ConfigError(ValueError):
    pass


def _train_defaults() -> dict:
    out = {}
    for f in fields(TrainConfig):
        value = f.default
        out[f.name] = [] if value is None else value
    return out


def _synth_defaults() -> dict:
    cfg = SyntheticConfig()
    return {f.name: (list(getattr(cfg, f.name)) if isinstance(getattr(cfg, f.name), (list, tuple))
                     else getattr(cfg, f.name)) for f in fields(SyntheticConfig)}


def default_config() -> dict:
    return {
        "graph": {"nodes": "", "edges": ""},
        "split": {"ratios": [0.7, 0.1, 0.2]},
        "encoder": {"kind": "hashing", "d_enc": 256, "normalization": "l2", "url": ""},
        "backend": {
            "kind": "mock", "labels": "train", "lexicon": "synthetic", "error_rate": 0.1,
            "low_conf_rate": 0.1, "noise": 0.2, "concept_weight": 2.0, "latency": 0.0, "d_T": 64,
            "url": "", "model": "", "temperature": 0.1, "retries": 2, "timeout": 60.0,
        },
        "train": _train_defaults(),
        "synth": _synth_defaults(),
        "run": {"checkpoint": "", "traces": "", "edges": [], "layer": 0, "max_edges": 0},
        "bench": {"modes": list(RUNTIME_MODES)},
        "sweep": {"parameter": "K", "values": [1, 2], "seeds": [0]},
    }


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
    else:
        owners = [s for s, body in cfg.items() if key in body]
        if len(owners) != 1:
            raise ConfigError(f"override key {key!r} is {'ambiguous' if owners else 'unknown'}; use section.key")
        section, name = owners[0], key
    if section not in cfg or name not in cfg[section]:
        raise ConfigError(f"unknown config key {key!r}")
    cfg[section][name] = _parse_value(raw.strip())


def load_config(path: str | None, overrides, seed: int | None) -> dict:
    cfg = default_config()
    if path:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section, body in user.items():
            if section not in cfg or not isinstance(body, dict):
                raise ConfigError(f"unknown config section [{section}]")
            for k, v in body.items():
                if k not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{k}")
                cfg[section][k] = v
    for item in overrides or []:
        apply_override(cfg, item)
    if seed is not None:
        cfg["train"]["seed"] = cfg["synth"]["seed"] = seed
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    body = dict(cfg["train"])
    body["lambdas"] = body["lambdas"] or None
    try:
        return TrainConfig(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from None


def synth_config(cfg: dict) -> SyntheticConfig:
    body = dict(cfg["synth"])
    body["type_mix"] = tuple(body["type_mix"])
    try:
        return SyntheticConfig(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[synth]: {exc}") from None


def encoder_spec(cfg: dict) -> EncoderSpec:
    body = {k: v for k, v in cfg["encoder"].items() if v != ""}
    try:
        return EncoderSpec(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[encoder]: {exc}") from None


class Session:
    """Lazily built graph, features, split and backend for one invocation."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self._graph = self._features = self._split = None

    @property
    def graph(self):
        if self._graph is None:
            g = self.cfg["graph"]
            if bool(g["nodes"]) != bool(g["edges"]):
                raise ConfigError("graph.nodes and graph.edges must be given together")
            self._graph = load_graph(g["nodes"], g["edges"]) if g["nodes"] else generate_synthetic(synth_config(self.cfg))
        return self._graph

    @property
    def features(self):
        if self._features is None:
            self._features = encode_graph(encoder_spec(self.cfg), self.graph)
        return self._features

    @property
    def split(self):
        if self._split is None:
            self._split = split_edges(self.graph, self.cfg["split"]["ratios"], self.cfg["train"]["seed"])
        return self._split

    def backend(self):
        b = self.cfg["backend"]
        if b["kind"] == "http":
            return HttpBackend(base_url=b["url"] or None, model=b["model"] or None, temperature=b["temperature"],
                               retries=b["retries"], timeout=b["timeout"], encoder_spec=encoder_spec(self.cfg))
        if b["kind"] != "mock":
            raise ConfigError(f"unknown backend kind {b['kind']!r}")
        labels = self.graph.labels()
        if b["labels"] == "train":
            labels = {e: labels[e] for e in self.split.train if e in labels}
        elif b["labels"] == "none":
            labels = {}
        elif b["labels"] != "all":
            raise ConfigError("backend.labels must be train, all or none")
        return MockBackend(seed=self.cfg["train"]["seed"], d_T=b["d_T"], labels=labels, error_rate=b["error_rate"],
                           low_conf_rate=b["low_conf_rate"], noise=b["noise"], latency=b["latency"],
                           lexicon=concept_of if b["lexicon"] == "synthetic" else None,
                           concept_weight=b["concept_weight"])

    def edges(self, default):
        run = self.cfg["run"]
        edges = list(run["edges"]) or list(default)
        for e in edges:
            self.graph.edge(e)
        if run["max_edges"]:
            edges = edges[: run["max_edges"]]
        return edges

    def checkpoint(self):
        path = self.cfg["run"]["checkpoint"]
        if not path:
            raise ConfigError("run.checkpoint is required for this verb")
        return load_checkpoint(path)

    def traces(self):
        return TraceStore(self.cfg["run"]["traces"] or None)


def _out_dir(args) -> Path:
    out = Path(args.out or "miscite-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _extra(model, edges, store: TraceStore, cfg: dict, fingerprint: str):
    if not model.dims.d_extra:
        return None
    t = cfg["train"]
    variant = "directed" if t["ablation"] == "no_ec" else t["chain_variant"]
    found = {}
    for e in edges:
        tr = store.get(trace_key(e, variant, t["K"], t["m"], fingerprint))
        if tr is not None:
            found[e] = tr
    return judgment_feature(edges, found)


def cmd_validate(s: Session, args):
    report = validate(s.graph)
    return report, f"{report['nodes']} nodes, {report['edges']} edges, {len(report['warnings'])} warning(s)"


def cmd_chain(s: Session, args):
    t = s.cfg["train"]
    cc = ChainConfig.for_variant(t["chain_variant"], t["K"], t["m"])
    chains = [build_chain(s.graph, e, cc, s.features).to_dict() for e in s.edges(s.split.test[:1])]
    return {"chains": chains}, f"{len(chains)} chain(s)"


def cmd_reason(s: Session, args):
    t = s.cfg["train"]
    variant = "directed" if t["ablation"] == "no_ec" else t["chain_variant"]
    cc = ChainConfig.for_variant(variant, t["K"], t["m"])
    backend = s.backend()
    edges = s.edges(s.split.test)
    out = _out_dir(args) / "traces.jsonl"
    store = TraceStore(s.cfg["run"]["traces"] or out)
    traces = reason_edges(backend, s.graph, edges, cc, load_templates(), s.features, t["max_in_flight"])
    for e in edges:
        store.put(trace_key(e, variant, cc.K, cc.m, backend.fingerprint), traces[e])
    judged = [{"edge": e, "level": traces[e].judgment.level, "confidence": traces[e].judgment.confidence}
              for e in edges]
    return {"traces": str(store.path), "judgments": judged}, f"reasoned {len(edges)} edge(s)"


def cmd_train(s: Session, args):
    cfg = train_config(s.cfg)
    out = _out_dir(args)
    backend = s.backend()
    store = s.traces()
    history = out / "history.jsonl"
    result = train(s.graph, s.features, s.split, backend, cfg, trace_store=store, history_path=history)
    ckpt = out / "checkpoint.json"
    save_checkpoint(result.model, ckpt, {"train": cfg.to_dict(), "backend": backend.fingerprint})
    best = next((h for h in result.history if h["epoch"] == result.best_epoch), {})
    rec = {"ablation": cfg.ablation, "history": str(history), "checkpoint": str(ckpt),
           "best_epoch": result.best_epoch, "epochs_run": len(result.history), "val_auc": best.get("val_auc"),
           "n_distill": len(result.distill_set), "backend_calls": result.backend_calls}
    return rec, f"trained {cfg.ablation}: best epoch {result.best_epoch}, val AUC {best.get('val_auc')}"


def cmd_infer(s: Session, args):
    model = s.checkpoint()
    edges = s.edges([e.id for e in s.graph.edges])
    fp = s.backend().fingerprint if model.dims.d_extra else ""
    states = forward_nodes(model, s.graph, s.features.node_matrix)
    final, _ = predict_edges(model, states, edges, s.features.edge_matrix, _extra(model, edges, s.traces(), s.cfg, fp))
    out = _out_dir(args) / "predictions.jsonl"
    write_jsonl([{"edge": e, "p_miscite": float(p)} for e, p in zip(edges, final[:, 1])], out)
    return {"predictions": str(out), "n": len(edges)}, f"scored {len(edges)} edge(s)"


def cmd_evaluate(s: Session, args):
    model = s.checkpoint()
    labels = s.graph.labels()
    edges = [e for e in s.edges(s.split.test) if e in labels]
    fp = s.backend().fingerprint if model.dims.d_extra else ""
    states = forward_nodes(model, s.graph, s.features.node_matrix)
    final, _ = predict_edges(model, states, edges, s.features.edge_matrix, _extra(model, edges, s.traces(), s.cfg, fp))
    report = evaluate_scores(final[:, 1], [labels[e] for e in edges], s.cfg["train"]["threshold"]).to_dict()
    return report, f"AUC {report['auc']:.4f}  F1 {report['f1']:.4f}  P {report['precision']:.4f}"


def cmd_bench(s: Session, args):
    model = s.checkpoint()
    modes = s.cfg["bench"]["modes"]
    t = s.cfg["train"]
    report = bench_runtime(s.graph, s.split, model, s.backend(), modes, s.features, K=t["K"], m=t["m"],
                           edges=s.edges(s.split.test))
    summary = ", ".join(f"{m_}: {r['total_s']:.3f}s" for m_, r in report.items())
    return {"runtime": report}, summary


def cmd_sweep(s: Session, args):
    sw = s.cfg["sweep"]
    if sw["parameter"] not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
    b = s.cfg["backend"]
    teacher = {"error_rate": b["error_rate"], "low_conf_rate": b["low_conf_rate"], "noise": b["noise"],
               "concept_weight": b["concept_weight"], "d_T": b["d_T"]}
    rows = sweep(train_config(s.cfg), sw["parameter"], sw["values"], sw["seeds"], synth_config(s.cfg), teacher)
    out = _out_dir(args)
    write_jsonl(rows, out / "sweep.jsonl")
    table = format_table(rows)
    (out / "sweep.txt").write_text(table + "\n", encoding="utf-8")
    return {"rows": rows, "jsonl": str(out / "sweep.jsonl"), "table": str(out / "sweep.txt")}, table


def cmd_gen_synth(s: Session, args):
    graph = generate_synthetic(synth_config(s.cfg))
    out = _out_dir(args)
    save_graph(graph, out / "nodes.jsonl", out / "edges.jsonl")
    rep = validate(graph)
    return {"nodes": str(out / "nodes.jsonl"), "edges": str(out / "edges.jsonl"), "counts": rep}, \
        f"wrote {rep['nodes']} papers and {rep['edges']} citations"


def cmd_export_emb(s: Session, args):
    model = s.checkpoint()
    layer = s.cfg["run"]["layer"] or model.K
    path = _out_dir(args) / f"embeddings_layer{layer}.csv"
    n = export_embeddings(model, s.graph, s.features, layer, path)
    return {"path": str(path), "rows": n, "layer": layer}, f"exported {n} rows"


COMMANDS = {
    "validate": cmd_validate, "chain": cmd_chain, "reason": cmd_reason, "train": cmd_train, "infer": cmd_infer,
    "evaluate": cmd_evaluate, "bench": cmd_bench, "sweep": cmd_sweep, "gen-synth": cmd_gen_synth,
    "export-emb": cmd_export_emb,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="miscite", description="Miscitation detection with an LLM-distilled GNN.")
    p.add_argument("verb", choices=VERBS, metavar="verb", help=" | ".join(VERBS))
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable); KEY is section.key or an unambiguous key")
    p.add_argument("--seed", type=int, help="seed for training, splitting and synthetic data")
    p.add_argument("--out", help="output directory (default miscite-out)")
    p.add_argument("--nodes", help="nodes JSONL (overrides graph.nodes)")
    p.add_argument("--edges", help="edges JSONL (overrides graph.edges)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        overrides = list(args.overrides)
        if args.nodes:
            overrides.append(f"graph.nodes={json.dumps(args.nodes)}")
        if args.edges:
            overrides.append(f"graph.edges={json.dumps(args.edges)}")
        cfg = load_config(args.config, overrides, args.seed)
        train_config(cfg)
        synth_config(cfg)
        effective = copy.deepcopy(cfg)
        record, summary = COMMANDS[args.verb](Session(cfg), args)
    except ConfigError as exc:
        print(f"miscite: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"miscite: {args.verb} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"verb": args.verb, "result": record, "config": effective}, sort_keys=True, default=str))
    print(summary, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
