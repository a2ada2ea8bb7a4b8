"""Command-line client for the pipeline.

Each subcommand builds the same request model the HTTP service accepts.
By default the request runs in-process (single deterministic process);
with --server it is posted to a running service instead. Machine-readable
output is JSON on stdout, logs go to stderr. Exit codes: 0 success,
1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.error
import urllib.request

import pydantic

from .errors import MsvladError, ValidationError
from .service import handlers, schemas

logger = logging.getLogger("msvlad")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _resolutions(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list '{text}'")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"bad resolution list '{text}'")
    return values


def _post(server: str, route: str, request: pydantic.BaseModel) -> dict:
    url = server.rstrip("/") + route
    data = request.model_dump_json().encode("utf-8")
    http_req = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(http_req) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        body = exc.read().decode("utf-8", errors="replace")
        try:
            payload = json.loads(body)
            detail = payload.get("detail", body)
        except json.JSONDecodeError:
            detail = body
        if exc.code in (400, 422):
            raise ValidationError(f"server rejected request: {detail}")
        raise MsvladError(f"server error {exc.code}: {detail}")


def _run(args, route: str, request: pydantic.BaseModel, handler) -> dict:
    if args.server:
        return _post(args.server, route, request)
    return handler(request).model_dump()


def cmd_kmeans_init(args) -> int:
    request = schemas.KmeansInitRequest(
        manifest=args.manifest,
        checkpoint_out=args.checkpoint,
        k=args.k,
        sample_columns=args.sample_columns,
        pooling=args.pooling,
        seed=args.seed,
        max_iters=args.max_iters,
    )
    result = _run(args, "/kmeans-init", request, handlers.handle_kmeans_init)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    settings = schemas.TrainSettings(
        iterations=args.iterations,
        margin=args.margin,
        lr_initial=args.lr_initial,
        lr_final=args.lr_final,
        lr_drop_epoch=args.lr_drop_epoch,
        mining_interval=args.mining_interval,
        checkpoint_interval=args.checkpoint_interval,
        pooling=args.pooling,
        seed=args.seed,
        mining_batch_size=args.mining_batch_size,
        num_classes=args.num_classes,
        rank_gap_threshold=args.rank_gap_threshold,
        semi_hard_probability=args.semi_hard_probability,
        mini_batch_size=args.mini_batch_size,
    )
    request = schemas.TrainRequest(
        manifest=args.manifest,
        checkpoint_in=args.checkpoint,
        checkpoint_out=args.checkpoint_out,
        settings=settings,
        log_path=args.log,
    )
    if args.server:
        if not args.log:
            raise ValidationError("--server training requires --log PATH on the server host")
        result = _post(args.server, "/train", request)
    else:
        # Without --log the CSV training log streams to stdout.
        stream = None if args.log else sys.stdout
        result = handlers.handle_train(request, log_stream=stream).model_dump()
    if args.log or args.server:
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    request = schemas.EvaluateRequest(
        manifest=args.manifest,
        checkpoint=args.checkpoint,
        pooling=args.pooling,
        resolutions=args.resolutions,
        power_norm=args.power_norm,
        threads=args.threads,
    )
    result = _run(args, "/evaluate", request, handlers.handle_evaluate)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_query(args) -> int:
    request = schemas.QueryRequest(
        manifest=args.manifest,
        checkpoint=args.checkpoint,
        features=args.features,
        pooling=args.pooling,
        resolutions=args.resolutions,
        power_norm=args.power_norm,
        top_k=args.top_k,
        threads=args.threads,
    )
    result = _run(args, "/query", request, handlers.handle_query)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    request = schemas.GradcheckRequest(
        seed=args.seed,
        netvlad_instances=args.netvlad_instances,
        triplet_instances=args.triplet_instances,
        pooling_instances=args.pooling_instances,
    )
    result = _run(args, "/gradcheck", request, handlers.handle_gradcheck)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK if result["ok"] else EXIT_RUNTIME


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msvlad",
        description="Multi-scale pooled column features with a trainable VLAD head.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True, checkpoint=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest (JSON lines)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
        p.add_argument("--server", default=None, help="base URL of a running service")

    p = sub.add_parser("kmeans-init", help="cluster sample columns into initial parameters")
    common(p)
    p.add_argument("--k", type=int, default=64, help="number of clusters")
    p.add_argument("--sample-columns", type=int, default=20000, dest="sample_columns")
    p.add_argument("--pooling", choices=["2x2", "3x3", "both"], default="both")
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.set_defaults(func=cmd_kmeans_init)

    p = sub.add_parser("train", help="run the training loop from a checkpoint")
    common(p)
    p.add_argument("--checkpoint-out", required=True, dest="checkpoint_out")
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--lr-initial", type=float, default=1e-5, dest="lr_initial")
    p.add_argument("--lr-final", type=float, default=1e-6, dest="lr_final")
    p.add_argument("--lr-drop-epoch", type=int, default=3, dest="lr_drop_epoch")
    p.add_argument("--mining-interval", type=int, default=8, dest="mining_interval")
    p.add_argument("--checkpoint-interval", type=int, default=100, dest="checkpoint_interval")
    p.add_argument("--pooling", choices=["2x2", "3x3", "both"], default="both")
    p.add_argument("--mining-batch-size", type=int, default=2048, dest="mining_batch_size")
    p.add_argument("--num-classes", type=int, default=512, dest="num_classes")
    p.add_argument("--rank-gap-threshold", type=int, default=10, dest="rank_gap_threshold")
    p.add_argument("--semi-hard-probability", type=float, default=0.5,
                   dest="semi_hard_probability")
    p.add_argument("--mini-batch-size", type=int, default=24, dest="mini_batch_size")
    p.add_argument("--log", default=None, help="write the CSV training log here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="build a gallery index and report mAP")
    common(p)
    p.add_argument("--pooling", choices=["2x2", "3x3", "both"], default=None)
    p.add_argument("--resolutions", type=_resolutions, default=None,
                   help="comma-separated, e.g. 224,336,504")
    p.add_argument("--power-norm", action="store_true", dest="power_norm")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("query", help="rank the gallery for one query image")
    common(p)
    p.add_argument("features", nargs="+", help="query feature files (one per resolution)")
    p.add_argument("--pooling", choices=["2x2", "3x3", "both"], default=None)
    p.add_argument("--resolutions", type=_resolutions, default=None)
    p.add_argument("--power-norm", action="store_true", dest="power_norm")
    p.add_argument("--top-k", type=int, default=None, dest="top_k")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p, manifest=False, checkpoint=False)
    p.add_argument("--netvlad-instances", type=int, default=20, dest="netvlad_instances")
    p.add_argument("--triplet-instances", type=int, default=20, dest="triplet_instances")
    p.add_argument("--pooling-instances", type=int, default=6, dest="pooling_instances")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pydantic.ValidationError as exc:
        logger.error("invalid request: %s", exc)
        return EXIT_USAGE
    except (ValidationError, FileNotFoundError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_USAGE
    except MsvladError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
