"""Command-line client for the training service.

The CLI never trains anything itself: it submits work to the HTTP API and
polls.  By default it mounts the service in-process (no server or socket
required); point it at a running instance with ``--server`` or the
``PULSE_SERVER`` environment variable.

Exit codes: 0 success, 2 configuration/input error, 3 numeric failure
during training, 1 anything else.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
import time

import httpx
import yaml

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SERVER_ENV = "PULSE_SERVER"

_ERROR_EXIT = {"config": EXIT_CONFIG, "data": EXIT_CONFIG, "numeric": EXIT_NUMERIC}


class _InProcessTransport(httpx.BaseTransport):
    """Sync bridge onto the ASGI app, so no server process is needed.

    Each request runs on a private event loop; the service's job threads
    outlive the loop, so polling across requests works as over the network.
    """

    def __init__(self, app):
        self._transport = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        return asyncio.run(self._roundtrip(request))

    async def _roundtrip(self, request):
        response = await self._transport.handle_async_request(request)
        content = b"".join([chunk async for chunk in response.stream])
        await response.aclose()
        return httpx.Response(
            status_code=response.status_code, headers=response.headers, content=content
        )


def _client(args) -> httpx.Client:
    server = getattr(args, "server", None) or os.environ.get(SERVER_ENV)
    if server:
        return httpx.Client(base_url=server, timeout=30.0)
    from .service import create_app

    transport = _InProcessTransport(create_app())
    return httpx.Client(transport=transport, base_url="http://pulse.internal", timeout=30.0)


def _load_config_file(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return None
    try:
        raw = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"error: {path} is not valid YAML/JSON: {exc}", file=sys.stderr)
        return None
    if not isinstance(raw, dict):
        print(f"error: config root must be a mapping, got {type(raw).__name__}", file=sys.stderr)
        return None
    return raw


def _print_http_error(resp) -> int:
    try:
        detail = resp.json().get("detail", resp.text)
    except ValueError:
        detail = resp.text
    print(f"error ({resp.status_code}): {detail}", file=sys.stderr)
    # 4xx means the request was bad (config); anything else is on the server
    return EXIT_CONFIG if 400 <= resp.status_code < 500 else EXIT_INTERNAL


def _poll_job(client, job_id, interval) -> dict:
    last_state = None
    while True:
        info = client.get(f"/jobs/{job_id}").json()
        if info["state"] != last_state:
            print(f"job {job_id}: {info['state']}")
            last_state = info["state"]
        if info["state"] in ("succeeded", "failed"):
            return info
        time.sleep(interval)


def _finish_job(client, info) -> int:
    if info["state"] == "failed":
        print(f"error: {info['error']}", file=sys.stderr)
        return _ERROR_EXIT.get(info["error_kind"], EXIT_INTERNAL)
    result = client.get(f"/jobs/{info['job_id']}/result").json()
    print(json.dumps(result.get("aggregate", result), indent=2, sort_keys=True))
    out = result.get("output_dir")
    if out:
        print(f"artifacts: {out}")
    return EXIT_OK


def _submit_and_wait(client, endpoint, payload, interval) -> int:
    resp = client.post(endpoint, json=payload)
    if resp.status_code not in (200, 202):
        return _print_http_error(resp)
    info = resp.json()
    info = _poll_job(client, info["job_id"], interval)
    return _finish_job(client, info)


def cmd_train(args) -> int:
    raw = _load_config_file(args.config)
    if raw is None:
        return EXIT_CONFIG
    payload = {
        "config": raw,
        "seed": args.seed,
        "jobs": args.jobs,
        "resume": args.resume,
        "output_dir": args.output_dir,
    }
    with _client(args) as client:
        return _submit_and_wait(client, "/jobs/train", payload, args.poll_interval)


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def cmd_sweep(args) -> int:
    raw = _load_config_file(args.config)
    if raw is None:
        return EXIT_CONFIG
    values = [_parse_value(v) for v in args.values.split(",") if v != ""]
    if not values:
        print("error: --values must list at least one value", file=sys.stderr)
        return EXIT_CONFIG
    payload = {
        "config": raw,
        "param": args.param,
        "values": values,
        "jobs": args.jobs,
        "output_dir": args.output_dir,
    }
    with _client(args) as client:
        return _submit_and_wait(client, "/jobs/sweep", payload, args.poll_interval)


def cmd_eval(args) -> int:
    payload = {
        "snapshot_path": args.snapshot,
        "csv_path": args.data,
        "images_path": args.images,
        "labels_path": args.labels,
        "positive_classes": (
            [int(c) for c in args.positive_classes.split(",")]
            if args.positive_classes
            else None
        ),
    }
    with _client(args) as client:
        resp = client.post("/eval", json=payload)
        if resp.status_code != 200:
            return _print_http_error(resp)
        print(json.dumps(resp.json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    raw = _load_config_file(args.config)
    if raw is None:
        return EXIT_CONFIG
    with _client(args) as client:
        resp = client.post("/config/validate", json=raw)
        if resp.status_code != 200:
            return _print_http_error(resp)
        verdict = resp.json()
    if verdict["valid"]:
        print("config ok")
        return EXIT_OK
    print(f"invalid config: {verdict['detail']}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulse",
        description="Positive-unlabeled learning with uncertainty-aware self-training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--server", default=None,
                       help=f"service URL (default: in-process; env {SERVER_ENV})")

    p_train = sub.add_parser("train", help="run an experiment from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="run only this seed instead of the config's list")
    p_train.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from per-seed checkpoints if present")
    p_train.add_argument("--output-dir", default=None)
    p_train.add_argument("--poll-interval", type=float, default=0.5)
    add_common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="re-run the experiment over one varied parameter")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, help="dotted key, e.g. loss.prior")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--output-dir", default=None)
    p_sweep.add_argument("--poll-interval", type=float, default=0.5)
    add_common(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_eval = sub.add_parser("eval", help="score a saved model snapshot on labeled data")
    p_eval.add_argument("--snapshot", required=True)
    p_eval.add_argument("--data", default=None, help="CSV file with header f0,...,fK,label")
    p_eval.add_argument("--images", default=None, help="IDX image file (with --labels)")
    p_eval.add_argument("--labels", default=None, help="IDX label file (with --images)")
    p_eval.add_argument("--positive-classes", default=None,
                        help="comma-separated class ids to treat as positive")
    add_common(p_eval)
    p_eval.set_defaults(fn=cmd_eval)

    p_val = sub.add_parser("validate", help="check a config file without running it")
    p_val.add_argument("--config", required=True)
    add_common(p_val)
    p_val.set_defaults(fn=cmd_validate)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
