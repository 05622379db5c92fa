"""Command line entry point: ``ggopt run|sweep|stats|codec-selftest``.

Diagnostics go to stderr as one JSON object per failure; the exit code is
nonzero on any failure (2 config, 3 data, 4 diverged, 5 self-test, 1 other).
The output root defaults to ``./runs`` and is overridden by ``GGOPT_OUTPUT_ROOT``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .. import coding, metrics, nn
from ..training import TrainingDiverged
from . import runner
from .config import ConfigError, load_yaml, parse_run, parse_sweep
from .datasets import DatasetError

__all__ = ["main", "codec_selftest", "EXIT_CODES"]

log = logging.getLogger("ggopt")

EXIT_CODES = {"ok": 0, "other": 1, "config": 2, "data": 3, "diverged": 4, "selftest": 5}


def codec_selftest(max_value: int = 65535, orders=range(8)) -> dict:
    """Exhaustive EG round trip over ``[0, max_value]`` for every order, with length checks."""
    v = np.arange(max_value + 1, dtype=np.int64)
    out = {"max_value": max_value, "orders": list(orders), "failures": []}
    t0 = time.perf_counter()
    for k in orders:
        blob = coding.eg_encode(v, k)
        expected = 2 * np.floor(np.log2(v + 2.0**k)).astype(np.int64) - k + 1
        if blob.bit_length != int(expected.sum()):
            out["failures"].append({"k": k, "what": "bit_length", "got": blob.bit_length, "want": int(expected.sum())})
        if not np.array_equal(coding.eg_code_length(v, k), expected):
            out["failures"].append({"k": k, "what": "code_length"})
        back = coding.eg_decode(coding.EncodedBlob.from_bytes(blob.to_bytes()))
        if not np.array_equal(back, v):
            out["failures"].append({"k": k, "what": "round_trip", "first_bad": int(np.argmax(back != v))})
    out["seconds"] = time.perf_counter() - t0
    out["ok"] = not out["failures"]
    return out


def _fail(kind: str, exc: BaseException, **info) -> int:
    rec = {"error": type(exc).__name__, "kind": kind, "message": str(exc), **info}
    print(json.dumps(rec), file=sys.stderr)
    return EXIT_CODES[kind]


def _cmd_run(args) -> int:
    cfg = parse_run(load_yaml(args.config))
    summary = runner.run(cfg, args.output_root, args.overwrite)
    outdir = runner.resolve_outdir(cfg.outdir, args.output_root)
    print(json.dumps({"outdir": str(outdir), "final": summary["final"]}))
    return 0


def _cmd_sweep(args) -> int:
    spec = parse_sweep(load_yaml(args.config))
    rows = runner.sweep(spec, args.output_root, args.overwrite)
    outdir = runner.resolve_outdir(spec.outdir, args.output_root)
    failed = [r["index"] for r in rows if r["status"] != "ok"]
    print(json.dumps({"tradeoff": str(outdir / "tradeoff.csv"), "runs": len(rows), "failed": failed}))
    return 0


def _cmd_stats(args) -> int:
    ckpt = Path(args.checkpoint)
    try:
        model, header = nn.load_model(ckpt)
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot load checkpoint {ckpt}: {e}") from None
    spec = coding.QuantSpec(args.n, args.k)
    weights = np.concatenate([w.ravel() for w in model.weights])
    out = {"checkpoint": str(ckpt), "seed": header.get("seed"), "weights": metrics.tensor_stats(weights, spec).to_dict()}
    config = (header.get("extra") or {}).get("config")
    outdir = Path(args.outdir) if args.outdir else ckpt.parent / "stats"
    if config is not None:
        cfg = parse_run(config)
        _, data, _ = runner.build(cfg)
        rng = np.random.default_rng(cfg.seed)
        rep = metrics.fig1_report(model, data, rng, outdir)
        out["fig1"] = {name: r if "skipped" in r else {"gg_nu": r["gg"].params.nu, "gg_goodness": r["gg"].goodness,
                              "gaussian_goodness": r["gaussian"].goodness,
                              "gg_beats_gaussian": bool(r["gg_beats_gaussian"])} for name, r in rep.items()}
    else:
        log.warning("checkpoint has no config; skipping the activation and gradient fits")
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "stats.json").write_text(json.dumps(out, indent=2))
    print(json.dumps(out))
    return 0


def _cmd_selftest(args) -> int:
    res = codec_selftest(args.max_value, range(args.max_order + 1))
    print(json.dumps(res))
    if not res["ok"]:
        print(json.dumps({"error": "SelfTestFailure", "kind": "selftest", "failures": res["failures"]}),
              file=sys.stderr)
        return EXIT_CODES["selftest"]
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ggopt", description="Rate-constrained training experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    s = sub.add_parser("sweep", help="run a one-axis sweep and write tradeoff.csv")
    s.add_argument("config")
    for q in (r, s):
        q.add_argument("--output-root", type=Path, default=None,
                       help=f"output root (default ${runner.OUTPUT_ROOT_ENV} or ./runs)")
        q.add_argument("--overwrite", action="store_true", help="reuse a nonempty output directory")

    st = sub.add_parser("stats", help="tensor statistics and GG fits for a checkpoint")
    st.add_argument("checkpoint")
    st.add_argument("--outdir", default=None)
    st.add_argument("-n", type=int, default=8)
    st.add_argument("-k", type=int, default=0)

    c = sub.add_parser("codec-selftest", help="exhaustive EG round trip")
    c.add_argument("--max-value", type=int, default=65535)
    c.add_argument("--max-order", type=int, default=7)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "output_root", None) is None and args.command in ("run", "sweep"):
        args.output_root = runner.output_root()
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "stats": _cmd_stats, "codec-selftest": _cmd_selftest}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        return _fail("config", e, field=e.field)
    except runner.OutdirExists as e:
        return _fail("config", e)
    except DatasetError as e:
        return _fail("data", e)
    except TrainingDiverged as e:
        return _fail("diverged", e)
    except (ValueError, OSError) as e:
        return _fail("other", e)


if __name__ == "__main__":
    sys.exit(main())
