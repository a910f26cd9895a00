"""``catcache`` command line: serve, simulate, economics."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .cache import SemanticCache
from .docstore import BackendLatencyModel, FileDocStore, SimulatedDocStore
from .errors import CatCacheError, ValidationError
from .index import IndexParams
from .kernels import BACKEND
from .policy import PolicyRegistry, load_configs

logger = logging.getLogger("catcache")


def _setup_logging() -> None:
    level = os.environ.get("CATCACHE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _serve(args) -> int:
    from .service import CacheService, make_server, parse_listen

    registry = PolicyRegistry(load_configs(args.config) if args.config else ())
    store = FileDocStore(args.store) if args.store else SimulatedDocStore(BackendLatencyModel(0.0, 0.0))
    cache = SemanticCache(registry, store, capacity=args.capacity,
                          index_params=IndexParams(dimension=args.dimension))
    host, port = parse_listen(args.listen)
    server = make_server(CacheService(cache), host, port)
    print(f"catcache listening on http://{server.server_address[0]}:{server.server_address[1]}",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        store.close()
    return 0


def _simulate(args) -> int:
    from .simulate import load_scenario, run_scenario

    summary = run_scenario(load_scenario(args.scenario), args.out)
    json.dump(summary, sys.stdout, indent=2)
    print()
    return 0


def _economics(args) -> int:
    from .economics import run_workload_file

    for row in run_workload_file(args.workload, args.out):
        print(f"{row.category:24s} h={row.hit_rate:.3f} be_vdb={row.be_vdb:.4f} "
              f"be_hybrid={row.be_hybrid:.4f} vdb={'yes' if row.vdb_viable else 'no':3s} "
              f"hybrid={'yes' if row.hybrid_viable else 'no'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="catcache", description="Category-aware semantic cache")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--config", help="JSON array of category configs")
    s.add_argument("--listen", default="127.0.0.1:8080", help="host:port (default %(default)s)")
    s.add_argument("--dimension", type=int, default=384, help="embedding dimension")
    s.add_argument("--capacity", type=int, default=100_000, help="maximum cached entries")
    s.add_argument("--store", help="document log file (default: in-memory)")
    s.set_defaults(func=_serve)

    s = sub.add_parser("simulate", help="run a workload scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON file")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_simulate)

    s = sub.add_parser("economics", help="break-even and viability table")
    s.add_argument("--workload", required=True, help="workload JSON file")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=_economics)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    logger.debug("catcache %s, HNSW kernels: %s", __version__, BACKEND)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"catcache: invalid input: {exc.constraint}: {exc}", file=sys.stderr)
        return 2
    except (CatCacheError, OSError) as exc:
        print(f"catcache: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
