"""Command line entry point.

Subcommands: run a single experiment, sweep a preset set over seeds,
evaluate a checkpoint against a dataset file, and benchmark the kernel
backends against each other.

Exit codes: 0 success, 2 configuration or file errors, 3 non-finite loss.
"""

import argparse
import json
import sys
import time
from dataclasses import replace

import numpy as np

from . import evaluation, pipeline
from .backends import _kernels_np
from .data import NcdDataset
from .errors import ConfigError, NonFiniteLossError
from .model import load_checkpoint


def _add_run(sub):
    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--preset", default=None, choices=sorted(pipeline.PRESETS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--hng-debug", default=None,
                   help="write hard-negative provenance JSON lines here")


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="run a preset set over several seeds")
    p.add_argument("--preset-set", required=True, choices=sorted(pipeline.PRESET_SETS))
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--config", default=None,
                   help="optional config file; defaults to the built-in benchmark")
    p.add_argument("--out", default="sweep")


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)


def _add_bench(sub):
    p = sub.add_parser("bench", help="compare the compiled and numpy kernels")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--end-to-end", action="store_true",
                   help="also time a short training run under each backend")


def _cmd_run(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = pipeline.run_experiment(cfg, preset=args.preset, out_dir=args.out,
                                     hng_debug_path=args.hng_debug)
    print(json.dumps(result["summary"]))
    return 0


def _cmd_sweep(args) -> int:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.default_config()
    rows = []
    for preset in pipeline.PRESET_SETS[args.preset_set]:
        for i in range(args.seeds):
            run_cfg = replace(cfg, seed=cfg.seed + i)
            out = f"{args.out}/{preset}_seed{run_cfg.seed}"
            result = pipeline.run_experiment(run_cfg, preset=preset, out_dir=out)
            rows.append(result["summary"])
            print(json.dumps(result["summary"]))
    with open(f"{args.out}/sweep_summary.json", "w") as fh:
        json.dump(rows, fh)
    return 0


def _cmd_eval(args) -> int:
    ms, _ = load_checkpoint(args.checkpoint)
    ds = NcdDataset.from_json_file(args.dataset)
    preds = evaluation.assign_clusters(ms, ds.unlabeled_x)
    result = evaluation.clustering_acc(ds.unlabeled_hidden_y, preds,
                                       ds.num_unlabeled_classes)
    print(json.dumps({"acc": result.acc, "n": int(preds.shape[0])}))
    return 0


def _time(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def _cmd_bench(args) -> int:
    from . import backends
    impls = [("numpy", _kernels_np)]
    try:
        from .backends import _kernels_cy
        impls.append(("compiled", _kernels_cy))
    except ImportError:
        print("compiled backend not built; benchmarking numpy only")

    rng = np.random.default_rng(0)
    queue = rng.standard_normal((2000, 32))
    queue /= np.linalg.norm(queue, axis=1, keepdims=True)
    z = queue[0].copy()
    easy = queue[:400].copy()
    labeled = queue[400:1400].copy()
    partner_idx = rng.integers(0, 1000, size=(5, 400))
    mus = np.array([1.0 / 3.0, 2.0 / 3.0])

    print(f"active backend: {backends.BACKEND}")
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name, _ in impls))
    for label, call in (
        ("queue_sims 2000x32", lambda impl: impl.queue_sims(queue, z)),
        ("mix_pool_sims 400x5x2x32",
         lambda impl: impl.mix_pool_sims(easy, labeled, partner_idx, mus, z)),
    ):
        times = [_time(lambda impl=impl: call(impl), args.repeats)
                 for _, impl in impls]
        cells = "".join(f"{t * 1e6:>12.1f}us" for t in times)
        print(f"{label:<28}{cells}")
        if len(times) == 2 and times[1] > 0:
            print(f"{'':<28}{'speedup':>14}{times[0] / times[1]:>13.1f}x")

    if args.end_to_end:
        _bench_end_to_end([name for name, _ in impls])
    return 0


def _bench_end_to_end(backend_names):
    """Time a short full training run in a subprocess per backend."""
    import os
    import subprocess

    snippet = (
        "import time, warnings; warnings.filterwarnings('ignore');"
        "from dataclasses import replace;"
        "from ncdlab import pipeline, backends;"
        "cfg = replace(pipeline.default_config(), per_class=60, batch_size=32,"
        "  queue_capacity=300, easy_negative_count=60, mix_iterations=2,"
        "  pretext_epochs=1, supervised_epochs=2, discovery_epochs=8,"
        "  hng_start_epoch=2);"
        "t0 = time.perf_counter();"
        "pipeline.run_experiment(cfg, preset='ncl_hng');"
        "print(f'{backends.BACKEND}: {time.perf_counter() - t0:.2f}s')"
    )
    print("end-to-end short run (ncl_hng preset):")
    for name in backend_names:
        env = dict(os.environ, NCDLAB_BACKEND=name)
        subprocess.run([sys.executable, "-c", snippet], env=env, check=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ncdlab")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_sweep(sub)
    _add_eval(sub)
    _add_bench(sub)
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "eval": _cmd_eval,
                "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
