"""``molddp`` command line: make-corpus, preprocess, inspect, train, bench-io, bench-scaling.

Option values resolve as: explicit flag > ``MOLDDP_<NAME>`` environment
variable > ``--config`` file (flat ``key = value`` lines) > built-in default.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import gpack
from .corpus import generate_corpus, write_corpus_csv
from .dataload import (Loader, SourceUnreadable, open_source, prepare_object_dir, shard_indices,
                       write_object_meta, write_object_records)
from .gcnn import Hyper, ModelConfig
from .graphenc import EDGE_FEATURES, build_vocab, encode_graph
from .smiles import SmilesError, parse_and_expand

log = logging.getLogger("molddp")

ENV_PREFIX = "MOLDDP_"
REPORT_SCHEMA = "molddp.metrics"
REPORT_VERSION = "1.0"
BENCH_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_THRESHOLD = 0, 1, 2


class CliError(Exception):
    """Reported on stderr; the command exits with ``code``."""

    def __init__(self, message: str, code: int = EXIT_FAIL):
        super().__init__(message)
        self.code = code


# -- option resolution --------------------------------------------------------------

def _flag(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


class _Options:
    """Collects (type, default) per destination so unset flags can fall back."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.specs: dict[str, tuple] = {}

    def add(self, *flags, type=str, default=None, choices=None, help=None, switch=False):
        dest = flags[0].lstrip("-").replace("-", "_")
        self.specs[dest] = (bool if switch else type, default, choices)
        if switch:
            self.parser.add_argument(*flags, dest=dest, action="store_const", const=True, default=None, help=help)
        else:
            self.parser.add_argument(*flags, dest=dest, type=type, choices=choices, default=None, help=help)


def read_config_file(path) -> dict[str, str]:
    cfg = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise CliError(f"cannot read config file {path}: {e}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value")
        k, v = (p.strip() for p in line.split("=", 1))
        cfg[k.replace("-", "_").lower()] = v
    return cfg


def resolve(args: argparse.Namespace, specs: dict, config: dict[str, str], env=os.environ) -> dict:
    """Fill every unset option from env, then config file, then default."""
    out = {}
    for dest, (typ, default, choices) in specs.items():
        value = getattr(args, dest, None)
        origin = None
        if value is None:
            for origin, raw in (("environment", env.get(ENV_PREFIX + dest.upper())), ("config file", config.get(dest))):
                if raw is not None:
                    try:
                        value = _flag(raw) if typ is bool else typ(raw)
                    except ValueError as e:
                        raise CliError(f"bad {origin} value for {dest}: {e}") from None
                    if choices and value not in choices:
                        raise CliError(f"{origin} value {value!r} for {dest} not in {list(choices)}")
                    break
        if value is None:
            value = default
        out[dest] = value
    return out


# -- preprocess -------------------------------------------------------------------------

def _read_table(path, smiles_col: str, target_col: str, delimiter: str) -> list[tuple[int, str, str]]:
    """(line number, smiles, raw target) for every data row."""
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f, delimiter=delimiter)
            header = next(reader)
            try:
                si, ti = header.index(smiles_col), header.index(target_col)
            except ValueError:
                raise CliError(f"{path}: header {header} lacks {smiles_col!r} or {target_col!r}") from None
            return [(reader.line_num, r[si] if si < len(r) else "", r[ti] if ti < len(r) else "") for r in reader]
    except StopIteration:
        raise CliError(f"{path} is empty") from None
    except (OSError, csv.Error, UnicodeDecodeError) as e:
        raise CliError(f"cannot read {path}: {e}") from None


def _parse_block(rows):
    """Pass one: elements used and failures; runs inside a worker process."""
    elements, failures = set(), []
    for line, smi, target in rows:
        try:
            float(target)
            elements.update(a.element for a in parse_and_expand(smi).atoms)
        except (SmilesError, ValueError) as e:
            failures.append((line, smi, f"{type(e).__name__}: {e}"))
    return elements, failures


def _write_block(job):
    """Pass two: encode good rows of one block and write them out."""
    fmt, out, rows, elements, writer_id, writers, subfiles, start = job
    vocab = build_vocab(elements)
    samples = []
    for row, smi, target in rows:
        samples.append(encode_graph(parse_and_expand(smi), vocab, float(target), row))
    nodes = sum(s.num_nodes for s in samples)
    edges = sum(s.num_edges for s in samples)
    if fmt == "gpack":
        schema = gpack.GpackSchema(vocab.node_features, EDGE_FEATURES, 1, vocab.elements)
        w = gpack.create_writer(out, schema, subfiles, writer_id, writers, overwrite=True)
        for s in samples:
            w.append(s)
        w.finalize()
    else:
        write_object_records(out, samples, start)
    return len(samples), nodes, edges


def _blocks(items: list, k: int) -> list[list]:
    bounds = np.linspace(0, len(items), k + 1).astype(int)
    return [items[bounds[i]:bounds[i + 1]] for i in range(k)]


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as ex:
        return list(ex.map(fn, jobs))


def cmd_preprocess(o: dict) -> int:
    workers = o["workers"]
    subfiles = o["subfiles"] or workers
    if workers < 1 or subfiles < workers:
        raise CliError("need workers >= 1 and subfiles >= workers")
    rows = _read_table(o["input"], o["smiles_col"], o["target_col"], o["delimiter"])
    out = Path(o["output"])
    if out.exists() and any(out.iterdir()) and not o["overwrite"]:
        raise CliError(f"{out} exists and is not empty (use --overwrite)")
    parsed = _map(_parse_block, _blocks(rows, workers), workers)
    elements = set().union(*(p[0] for p in parsed)) if parsed else set()
    failures = [f for p in parsed for f in p[1]]
    bad_lines = {f[0] for f in failures}
    for line, smi, msg in failures:
        log.error("line %d: %s (%r)", line, msg, smi)
    if failures:
        err_log = Path(o["error_log"] or f"{out}.errors.tsv")
        err_log.write_text("line\tsmiles\terror\n" + "".join(f"{ln}\t{s}\t{m}\n" for ln, s, m in failures))
        log.error("%d of %d records rejected; details in %s", len(failures), len(rows), err_log)
    rate = len(failures) / len(rows) if rows else 0.0
    if rate > o["max_failure_rate"]:
        log.error("failure rate %.4f exceeds threshold %.4f", rate, o["max_failure_rate"])
        return EXIT_THRESHOLD
    good = [(k, smi, t) for k, (line, smi, t) in enumerate(rows) if line not in bad_lines]
    if not good:
        if o["format"] == "gpack":
            raise CliError("no valid records; nothing to write")
        elements = elements or {"C"}
    fmt = o["format"]
    if fmt == "object":
        prepare_object_dir(out, o["overwrite"])
    elif o["overwrite"]:
        gpack.remove_container(out)
    blocks = _blocks(good, workers)
    starts = np.concatenate([[0], np.cumsum([len(b) for b in blocks])]).tolist()
    jobs = [(fmt, str(out), blocks[w], sorted(elements), w, workers, subfiles, starts[w]) for w in range(workers)]
    counts = _map(_write_block, jobs, workers)
    vocab = build_vocab(elements)
    if fmt == "gpack":
        ds = gpack.merge_index(out, workers)
        summ = ds.summary()
    else:
        write_object_meta(out, starts[-1], vocab)
        summ = gpack.DatasetSummary(sum(c[0] for c in counts), sum(c[1] for c in counts), sum(c[2] for c in counts))
    print(summ.line(out.name))
    print(f"vocab={','.join(vocab.elements)} rejected={len(failures)} format={fmt} writers={workers}")
    return EXIT_OK


# -- inspect ----------------------------------------------------------------------------

def _disk_bytes(path: Path) -> tuple[int, int]:
    """(apparent bytes, allocated bytes) of every regular file under ``path``."""
    apparent = allocated = 0
    for root, _, files in os.walk(path):
        for f in files:
            st = os.stat(os.path.join(root, f))
            apparent += st.st_size
            allocated += st.st_blocks * 512
    return apparent, allocated


def cmd_inspect(o: dict) -> int:
    path = Path(o["path"])
    if (path / "meta.idx").exists():
        try:
            reader = gpack.open_reader(path)
            if o["verify"]:
                reader.verify()
        except gpack.GpackError as e:
            raise CliError(f"{path}: {type(e).__name__}: {e}") from None
        sc = reader.schema
        summ = reader.summary()
        print(f"container: {path} (gpack v{gpack.VERSION})")
        print(f"schema: node_features={sc.node_feature_count} edge_features={sc.edge_feature_count} "
              f"targets={sc.target_count} codec={sc.codec}")
        print(f"vocab: {','.join(sc.vocab) or '-'}")
        print("subfiles: " + " ".join(f"data.{k}={b}" for k, b in enumerate(reader.subfile_bytes())))
        source = reader
    elif (path / "meta.json").exists():
        try:
            src = open_source("object", path)
        except SourceUnreadable as e:
            raise CliError(str(e)) from None
        print(f"container: {path} (object store v{src.meta['version']})")
        print(f"schema: node_features={src.meta['node_feature_count']} "
              f"edge_features={src.meta['edge_feature_count']} targets={src.meta['target_count']}")
        print(f"vocab: {','.join(src.vocab.elements)}")
        nodes = edges = 0
        for i in range(len(src)):
            g = src.get(i)
            nodes += g.num_nodes
            edges += g.num_edges
        summ = gpack.DatasetSummary(len(src), nodes, edges)
        source = src
    else:
        raise CliError(f"{path} is neither a gpack container nor an object store")
    apparent, allocated = _disk_bytes(path)
    print(f"graphs={summ.num_graphs} nodes={summ.total_nodes} edges={summ.total_edges}")
    print(f"{'dataset':<24}{'graphs':>12}{'nodes':>14}{'avg nodes':>11}{'bytes':>14}{'on disk':>14}")
    print(f"{path.name:<24}{summ.num_graphs:>12}{summ.total_nodes:>14}{summ.avg_nodes_per_graph:>11.1f}"
          f"{apparent:>14}{allocated:>14}")
    if o["graph"] is not None:
        gid = o["graph"]
        if not 0 <= gid < summ.num_graphs:
            raise CliError(f"graph {gid} out of range [0, {summ.num_graphs})")
        g = source.read_graph(gid) if hasattr(source, "read_graph") else source.get(gid)
        with np.printoptions(threshold=sys.maxsize, linewidth=160):
            print(f"graph {gid}: id={g.id} nodes={g.num_nodes} edges={g.num_edges} y={g.y.tolist()}")
            print("x =")
            print(g.x)
            print("edge_index =")
            print(g.edge_index)
            print("edge_attr =")
            print(g.edge_attr)
    return EXIT_OK


# -- train -------------------------------------------------------------------------------

def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_report(job, result, run_meta: dict, wall: float) -> dict:
    from .ddp import PHASES
    timings = [
        {"rank": t.rank, "epoch": t.epoch, **{p: float(getattr(t, p)) for p in PHASES}, "total": float(t.total),
         "steps": t.steps, "samples": t.samples}
        for per_rank in result.timings for t in per_rank
    ]
    history = [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in asdict(h).items()}
               for h in result.history]
    summary = {"total_steps": result.steps, "parameters": result.state.num_parameters(),
               "wall_seconds": float(wall), "ranks_consistent": len(set(result.param_digests)) == 1}
    if history:
        summary.update(final_train_loss=history[-1]["train_loss"], final_train_mae=history[-1]["train_mae"],
                       final_val_mse=history[-1]["val_mse"], final_val_mae=history[-1]["val_mae"])
    for split, (yt, yp) in result.parity.items():
        d = yp - yt
        summary[f"{split}_mae"] = float(np.mean(np.abs(d))) if d.size else float("nan")
        summary[f"{split}_mse"] = float(np.mean(d * d)) if d.size else float("nan")
    return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "run": run_meta, "timings": timings,
            "history": history, "summary": summary}


def cmd_train(o: dict, config_file: dict) -> int:
    from .ddp import TrainingAborted, TrainJob, run_training
    if o["world_size"] < 1 or o["batch_size"] < 1 or o["epochs"] < 1:
        raise CliError("world-size, batch-size and epochs must be positive")
    model = {"num_conv_layers": o["layers"], "hidden_width": o["hidden"], "fc_layers": o["fc_layers"]}
    try:
        hyper = Hyper(learning_rate=o["lr"], local_batch_size=o["batch_size"], max_epochs=o["epochs"],
                      weight_decay=o["weight_decay"])
        ModelConfig(node_features=1, **model)
    except ValueError as e:
        raise CliError(str(e)) from None
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    source_options = {"smiles_col": o["smiles_col"], "target_col": o["target_col"]}
    job = TrainJob(str(o["data"]), o["backend"], model, hyper, o["world_size"], o["seed"], o["split_seed"],
                   o["precision"], o["algorithm"], o["max_steps"], True, True, str(out), o["prefetch"],
                   source_options, o["timeout"], o["stop_val_mae"])
    launcher = o["launcher"] if o["world_size"] > 1 else "thread"
    t0 = time.perf_counter()
    try:
        result = run_training(job, launcher=launcher, rendezvous=o["rendezvous"])
    except TrainingAborted as e:
        for rank, tb in e.errors.items():
            log.error("rank %d failed:\n%s", rank, tb.rstrip())
        return EXIT_FAIL
    except (SourceUnreadable, gpack.GpackError, OSError, ValueError) as e:
        raise CliError(f"training failed: {type(e).__name__}: {e}") from None
    wall = time.perf_counter() - t0
    provenance = {"model": model, "hyper": asdict(hyper), "precision": o["precision"], "seed": o["seed"],
                  "split_seed": o["split_seed"], "algorithm": o["algorithm"], "backend": o["backend"],
                  "world_size": o["world_size"], "max_steps": o["max_steps"]}
    run_meta = {"dataset": str(o["data"]), "backend": o["backend"], "world_size": o["world_size"],
                "launcher": launcher, "precision": o["precision"], "algorithm": o["algorithm"],
                "config_hash": config_hash(provenance),
                "seeds": {"seed": o["seed"], "split_seed": o["seed"] if o["split_seed"] is None else o["split_seed"]},
                "model": {**result.state.config.to_dict()}, "hyper": asdict(hyper), "config_file": config_file}
    report = build_report(job, result, run_meta, wall)
    (out / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    with open(out / "parity.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["split", "true_eV", "predicted_eV"])
        for split in ("train", "val", "test"):
            yt, yp = result.parity.get(split, (np.zeros(0), np.zeros(0)))
            for a, b in zip(yt, yp):
                w.writerow([split, repr(float(a)), repr(float(b))])
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "train_mae", "val_mse", "val_mae"])
        for h in result.history:
            w.writerow([h.epoch, repr(h.train_loss), repr(h.train_mae), repr(h.val_mse), repr(h.val_mae)])
    s = report["summary"]
    print(f"steps={s['total_steps']} params={s['parameters']} "
          f"val_mae={s.get('final_val_mae', float('nan')):.4f} test_mae={s.get('test_mae', float('nan')):.4f} "
          f"wall={wall:.1f}s out={out}")
    return EXIT_OK


# -- bench-io ------------------------------------------------------------------------------

def drop_caches(paths) -> str:
    """Evict page cache: system-wide when permitted, else per-file advice."""
    os.sync()
    try:
        with open("/proc/sys/vm/drop_caches", "w") as f:
            f.write("1\n")
        return "drop_caches"
    except OSError:
        pass
    if not hasattr(os, "posix_fadvise"):
        return "none"
    for p in paths:
        p = Path(p)
        files = [p] if p.is_file() else [Path(r) / f for r, _, fs in os.walk(p) for f in fs]
        for f in files:
            try:
                fd = os.open(f, os.O_RDONLY)
            except OSError:
                continue
            try:
                os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
            finally:
                os.close(fd)
    return "fadvise"


def load_epoch(source, indices, batch_size: int, world_size: int, seed: int, epoch: int,
               digest: bool = False) -> tuple[float, str | None]:
    """Pure data-loading pass over every rank's shard (ranks run back to back)."""
    h = hashlib.sha256() if digest else None
    t0 = time.perf_counter()
    for rank in range(world_size):
        for batch in Loader(source, shard_indices(indices, rank, world_size, seed, epoch), batch_size):
            if h is not None:
                h.update(batch.digest().encode())
    return time.perf_counter() - t0, (h.hexdigest() if h else None)


def cmd_bench_io(o: dict) -> int:
    if o["repeats"] < 3:
        raise CliError("--repeats must be at least 3", code=EXIT_THRESHOLD)
    paths = {b: o[b] for b in ("inline", "object", "gpack") if o[b]}
    if len(paths) < 1:
        raise CliError("give at least one of --inline/--object/--gpack")
    sources = {}
    try:
        for b, p in paths.items():
            kw = {"smiles_col": o["smiles_col"], "target_col": o["target_col"]} if b == "inline" else {}
            sources[b] = open_source(b, p, **kw)
    except SourceUnreadable as e:
        raise CliError(str(e)) from None
    sizes = {b: len(s) for b, s in sources.items()}
    if len(set(sizes.values())) != 1:
        log.error("backends disagree on graph counts: %s", sizes)
        return EXIT_FAIL
    n = next(iter(sizes.values()))
    indices = np.arange(n if o["limit"] is None else min(n, o["limit"]), dtype=np.int64)
    checksums = {}
    for b, s in sources.items():
        _, checksums[b] = load_epoch(s, indices, o["batch_size"], o["world_size"], o["seed"], 0, digest=True)
    if len(set(checksums.values())) != 1:
        log.error("sample streams differ across backends: %s", checksums)
        return EXIT_FAIL
    times: dict[str, list[float]] = {b: [] for b in sources}
    method = "warm"
    for rep in range(o["repeats"]):
        for b, s in sources.items():
            if o["cold"]:
                method = drop_caches([paths[b]])
            sec, _ = load_epoch(s, indices, o["batch_size"], o["world_size"], o["seed"], rep + 1)
            times[b].append(sec)
            log.info("%s repeat %d: %.3fs", b, rep, sec)
    stats = {}
    for b, ts in times.items():
        stats[b] = {"seconds": ts, "median": statistics.median(ts), "min": min(ts), "max": max(ts),
                    "spread": max(ts) - min(ts),
                    "stdev": statistics.stdev(ts) if len(ts) > 1 else 0.0}
    speedups = {}
    for slow in ("inline", "object"):
        for fast in ("object", "gpack"):
            if slow != fast and slow in stats and fast in stats:
                speedups[f"{slow}_over_{fast}"] = stats[slow]["median"] / stats[fast]["median"]
    report = {"schema": "molddp.bench_io", "version": BENCH_VERSION, "graphs": int(len(indices)),
              "batch_size": o["batch_size"], "world_size": o["world_size"], "repeats": o["repeats"],
              "cold_cache": bool(o["cold"]), "cache_eviction": method, "checksum": next(iter(checksums.values())),
              "backends": stats, "speedups": speedups, "paths": {b: str(p) for b, p in paths.items()}}
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_io.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    with open(out / "bench_io.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["backend", "repeat", "seconds"])
        for b, ts in times.items():
            for k, t in enumerate(ts):
                w.writerow([b, k, repr(t)])
    for b, st in stats.items():
        print(f"{b:<8} median={st['median']:.3f}s spread={st['spread']:.3f}s")
    for k, v in speedups.items():
        print(f"{k}={v:.2f}")
    return EXIT_OK


# -- bench-scaling -------------------------------------------------------------------------

def cmd_bench_scaling(o: dict) -> int:
    from .ddp import PHASES, TrainingAborted, TrainJob, run_training
    try:
        sizes = [int(w) for w in str(o["world_sizes"]).split(",") if w.strip()]
    except ValueError:
        raise CliError(f"bad --world-sizes {o['world_sizes']!r}") from None
    if not sizes or min(sizes) < 1:
        raise CliError("world sizes must be positive integers")
    epoch_samples = o["samples"]
    rows = []
    base = None
    for w in sizes:
        local = o["batch_size"]
        per_worker = epoch_samples // (w * local)
        if per_worker < 1:
            raise CliError(f"world size {w}: {epoch_samples} samples cannot fill a batch of {local} per worker")
        job = TrainJob(str(o["data"]), o["backend"], {"num_conv_layers": o["layers"], "hidden_width": o["hidden"]},
                       Hyper(local_batch_size=local, max_epochs=1), w, o["seed"], None, o["precision"],
                       o["algorithm"], per_worker, False, False, None, 0, {}, o["timeout"])
        try:
            res = run_training(job, launcher=o["launcher"] if w > 1 else "thread")
        except TrainingAborted as e:
            for rank, tb in e.errors.items():
                log.error("rank %d failed:\n%s", rank, tb.rstrip())
            return EXIT_FAIL
        ep = [per[0] for per in res.timings]
        epoch_time = max(t.total for t in ep)
        base = base or epoch_time * sizes[0]  # speedup is relative to the first size, scaled by it
        row = {"world_size": w, "batches_per_worker": per_worker, "epoch_seconds": epoch_time,
               "speedup": base / epoch_time,
               **{p: float(np.mean([getattr(t, p) for t in ep])) for p in PHASES}}
        row["efficiency"] = row["speedup"] / w
        rows.append(row)
        print(f"W={w} batches/worker={per_worker} epoch={epoch_time:.2f}s speedup={row['speedup']:.2f}")
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema": "molddp.bench_scaling", "version": BENCH_VERSION, "epoch_samples": epoch_samples,
              "cpu_count": len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count(),
              "rows": rows}
    (out / "bench_scaling.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    with open(out / "bench_scaling.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


# -- make-corpus ---------------------------------------------------------------------------

def cmd_make_corpus(o: dict) -> int:
    recs = generate_corpus(o["n"], seed=o["seed"], min_heavy=o["min_heavy"], max_heavy=o["max_heavy"])
    write_corpus_csv(o["out"], recs)
    print(f"wrote {len(recs)} molecules to {o['out']}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, _Options]]:
    p = argparse.ArgumentParser(prog="molddp", description="Molecular graph preprocessing and data-parallel training.")
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    opts: dict[str, _Options] = {}

    s = sub.add_parser("make-corpus", help="write a synthetic SMILES corpus with gap-like targets")
    o = opts["make-corpus"] = _Options(s)
    s.add_argument("out", help="output CSV path")
    o.add("--n", type=int, default=1000, help="number of molecules")
    o.add("--seed", type=int, default=0)
    o.add("--min-heavy", type=int, default=6)
    o.add("--max-heavy", type=int, default=26)

    s = sub.add_parser("preprocess", help="SMILES table -> gpack container or object store")
    s.add_argument("input")
    s.add_argument("output")
    o = opts["preprocess"] = _Options(s)
    o.add("--format", default="gpack", choices=("gpack", "object"))
    o.add("--workers", type=int, default=1, help="parallel writer processes")
    o.add("--subfiles", type=int, default=None, help="gpack subfile count (default: workers)")
    o.add("--smiles-col", default="smiles")
    o.add("--target-col", default="gap")
    o.add("--delimiter", default=",")
    o.add("--max-failure-rate", type=float, default=0.05, help="reject the run above this fraction of bad records")
    o.add("--error-log", default=None)
    o.add("--overwrite", switch=True, default=False)

    s = sub.add_parser("inspect", help="describe a container")
    s.add_argument("path")
    o = opts["inspect"] = _Options(s)
    o.add("--graph", type=int, default=None, help="dump one decoded graph")
    o.add("--verify", switch=True, default=False, help="check data block checksums")

    s = sub.add_parser("train", help="data-parallel training run")
    s.add_argument("data")
    o = opts["train"] = _Options(s)
    _model_flags(o)
    o.add("--epochs", type=int, default=3)
    o.add("--lr", type=float, default=0.001)
    o.add("--weight-decay", type=float, default=0.01)
    o.add("--fc-layers", type=int, default=2)
    o.add("--split-seed", type=int, default=None)
    o.add("--max-steps", type=int, default=None)
    o.add("--prefetch", type=int, default=0)
    o.add("--rendezvous", default=None, help="host:port of rank 0 (process launcher)")
    o.add("--stop-val-mae", type=float, default=None, help="stop after the first epoch with validation MAE below this")
    o.add("--smiles-col", default="smiles")
    o.add("--target-col", default="gap")
    o.add("--out", default="run")

    s = sub.add_parser("bench-io", help="pure data-loading epoch time per backend")
    o = opts["bench-io"] = _Options(s)
    o.add("--inline", default=None, help="SMILES table")
    o.add("--object", default=None, help="object store directory")
    o.add("--gpack", default=None, help="gpack container")
    o.add("--batch-size", type=int, default=128)
    o.add("--repeats", type=int, default=5)
    o.add("--world-size", type=int, default=1)
    o.add("--seed", type=int, default=0)
    o.add("--limit", type=int, default=None, help="only the first N graphs")
    o.add("--cold", type=_flag, default=True, help="evict page cache before every timed epoch (true/false)")
    o.add("--smiles-col", default="smiles")
    o.add("--target-col", default="gap")
    o.add("--out", default="bench")

    s = sub.add_parser("bench-scaling", help="epoch time versus worker count")
    s.add_argument("data")
    o = opts["bench-scaling"] = _Options(s)
    _model_flags(o, batch=32)
    o.add("--world-sizes", default="1,2,4,8")
    o.add("--samples", type=int, default=12800, help="samples per epoch across all workers")
    o.add("--out", default="bench")
    return p, opts


def _model_flags(o: _Options, batch: int = 128) -> None:
    o.add("--backend", default="gpack", choices=("inline", "object", "gpack"))
    o.add("--world-size", type=int, default=1)
    o.add("--batch-size", type=int, default=batch, help="local (per-worker) batch size")
    o.add("--layers", type=int, default=6)
    o.add("--hidden", type=int, default=55)
    o.add("--seed", type=int, default=0)
    o.add("--precision", default="f32", choices=("f32", "f64"))
    o.add("--algorithm", default="ring", choices=("ring", "naive"))
    o.add("--launcher", default="process", choices=("thread", "process"))
    o.add("--timeout", type=float, default=300.0)


def main(argv=None) -> int:
    parser, opts = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        config = read_config_file(args.config) if args.config else {}
        o = resolve(args, opts[args.command].specs, config)
        for positional in ("out", "input", "output", "path", "data"):
            if positional not in o and hasattr(args, positional):
                o[positional] = getattr(args, positional)
        if args.command == "make-corpus":
            return cmd_make_corpus(o)
        if args.command == "preprocess":
            return cmd_preprocess(o)
        if args.command == "inspect":
            return cmd_inspect(o)
        if args.command == "train":
            return cmd_train(o, config)
        if args.command == "bench-io":
            return cmd_bench_io(o)
        return cmd_bench_scaling(o)
    except CliError as e:
        print(f"molddp {args.command}: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
