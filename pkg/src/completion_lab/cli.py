"""Command-line client of the completion-lab service.

The CLI validates the JSON configuration locally (schema violations are
reported with file:line anchors), sends the request to the service, and
renders or writes the response.  By default the service runs in-process over
an ASGI transport; ``--server URL`` targets a remote instance instead.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric or model
validation error, 3 work-cap refusal.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any

import httpx
from pydantic import ValidationError

from . import __version__
from .errors import EXIT_CODES, LabError, UsageError
from .harness import emit_report
from .schemas import (
    CapacityRequest,
    CapacityResponse,
    EstimateRequest,
    OracleRequest,
    SimulateRequest,
    SweepRequest,
    SweepResponse,
)


# ---------------------------------------------------------------------------
# line-anchored configuration errors
# ---------------------------------------------------------------------------


def _json_tokens(text: str):
    i, line = 0, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
        elif c in " \t\r":
            i += 1
        elif c in "{}[]:,":
            yield (c, None, line)
            i += 1
        elif c == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    break
                if text[j] == "\n":
                    line += 1
                j += 1
            yield ("str", text[i + 1 : j], line)
            i = j + 1
        else:
            j = i
            while j < n and text[j] not in ' \t\r\n{}[]:,"':
                j += 1
            yield ("lit", text[i:j], line)
            i = max(j, i + 1)


def locate_json_line(text: str, loc: tuple) -> int | None:
    """Best-effort line number of the value at a pydantic error location.

    Union discriminator tags in ``loc`` have no textual counterpart, so the
    match allows skipping unmatched tokens and returns the deepest anchored
    value (or key) line.
    """
    target = [str(tok) for tok in loc]
    best: list[tuple[int, int]] = [(0, 1)]  # (#matched real-path tokens, line)

    def visit(path: list[str], line: int) -> None:
        ti = 0
        for tok in path:
            while ti < len(target) and target[ti] != tok:
                ti += 1
            if ti == len(target):
                return
            ti += 1
        best.append((len(path), line))

    tokens = _json_tokens(text)

    def parse_value(tok, path) -> None:
        kind, _, line = tok
        visit(path, line)
        if kind == "{":
            while True:
                t = next(tokens, None)
                if t is None or t[0] == "}":
                    return
                if t[0] == ",":
                    continue
                if t[0] == "str":
                    colon = next(tokens, None)
                    if colon is None:
                        return
                    if colon[0] == ":":
                        val = next(tokens, None)
                        if val is None:
                            return
                        parse_value(val, path + [t[1]])
        elif kind == "[":
            idx = 0
            while True:
                t = next(tokens, None)
                if t is None or t[0] == "]":
                    return
                if t[0] == ",":
                    continue
                parse_value(t, path + [str(idx)])
                idx += 1

    first = next(tokens, None)
    if first is not None:
        try:
            parse_value(first, [])
        except RuntimeError:
            pass
    return max(best)[1]


def load_config(path: str) -> tuple[dict, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}:1: config must be a JSON object")
    return data, text


def validate_config(model_cls, data: dict, path: str, text: str):
    try:
        return model_cls.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            line = locate_json_line(text, err["loc"])
            where = ".".join(str(t) for t in err["loc"])
            msgs.append(f"{path}:{line}: {where}: {err['msg']}")
        raise UsageError("\n".join(msgs)) from exc


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


def _request(server: str | None, path: str, payload: dict) -> tuple[int, Any]:
    async def go():
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=3600.0) as client:
                r = await client.post(path, json=payload)
                return r.status_code, r.json()
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://lab.internal", timeout=None
        ) as client:
            r = await client.post(path, json=payload)
            return r.status_code, r.json()

    try:
        return asyncio.run(go())
    except httpx.HTTPError as exc:
        raise UsageError(f"service request failed: {exc}") from exc


def _raise_for_error(status: int, body: Any) -> None:
    if status < 400:
        return
    if isinstance(body, dict) and "category" in body:
        category = body["category"]
        message = body.get("message", "service error")
    elif status == 422:
        category, message = "usage", f"request rejected by service: {body}"
    else:
        category, message = "usage", f"service error {status}: {body}"
    err = LabError(message)
    err.category = category
    raise err


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _write_out(out_dir: str, name: str, text: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _grid_text(grid: list[list[int]]) -> str:
    return "\n".join(" ".join(f"{v:>2d}" for v in row) for row in grid)


def _cmd_capacity(args) -> int:
    data, text = load_config(args.config)
    payload = {
        "model": data.get("model"),
        "dmc": data.get("dmc"),
        "estimator": data.get("estimator") or {},
        "region_p": data.get("p"),
    }
    req = validate_config(CapacityRequest, payload, args.config, text)
    status, body = _request(args.server, "/v1/capacity", req.model_dump(mode="json"))
    _raise_for_error(status, body)
    resp = CapacityResponse.model_validate(body)
    report_text = resp.report.to_report().to_text()
    print(report_text, end="")
    if resp.region is not None:
        print(f"region_feasible[p={resp.region.p!r}]: {str(resp.region.feasible).lower()}")
        for m in resp.region.margins:
            print(f"region_margin{m.rows}: {m.margin!r}")
    if args.out:
        _write_out(args.out, "capacity.txt", report_text)
        if args.format in ("csv", "both"):
            rows = resp.report.to_report().to_csv_rows()
            csv_text = "quantity,row_index,value\n" + "\n".join(
                f"{q},{i},{v!r}" for q, i, v in rows
            ) + "\n"
            _write_out(args.out, "capacity.csv", csv_text)
    return 0


def _cmd_simulate(args) -> int:
    data, text = load_config(args.config)
    if args.p is not None:
        data = {**data, "p": args.p, "grid": None}
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    data = {**data, "trial_index": args.trial}
    req = validate_config(SimulateRequest, data, args.config, text)
    status, body = _request(args.server, "/v1/simulate", req.model_dump(mode="json"))
    _raise_for_error(status, body)
    trial = body["trial"]
    print(
        f"trial {trial['index']} @ p={trial['p']!r}: "
        f"{'success' if trial['success'] else 'error'} "
        f"(status={trial['status']}, tied={str(trial['tied']).lower()}, "
        f"observed={trial['observed_cells']})"
    )
    if trial.get("skip_reason"):
        print(f"skipped: {trial['skip_reason']}")
    print("truth:")
    print(_grid_text(body["truth"]))
    print("observed (-1 = erased):")
    print(_grid_text(body["observed"]))
    if body.get("estimate") is not None:
        print("estimate:")
        print(_grid_text(body["estimate"]))
        print(f"score: {body['score']!r}")
    return 0


def _cmd_sweep(args) -> int:
    data, text = load_config(args.config)
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    if args.jobs is not None:
        data = {**data, "jobs": args.jobs}
    req = validate_config(SweepRequest, data, args.config, text)
    status, body = _request(args.server, "/v1/sweep", req.model_dump(mode="json"))
    _raise_for_error(status, body)
    resp = SweepResponse.model_validate(body)
    report = resp.to_report()
    paths = emit_report(report, args.out or "out", args.format)
    if report.prediction is not None:
        print(f"predicted p* = {report.prediction.p_star!r}")
    if report.bound_threshold is not None:
        print(f"upper-bound threshold = {report.bound_threshold!r}")
    if report.transition is not None:
        print(
            f"empirical transition p_hat = {report.transition.p_hat!r} "
            f"band [{report.transition.band[0]!r}, {report.transition.band[1]!r}]"
        )
    elif report.transition_error:
        print(f"transition: {report.transition_error}")
    for kind, path in sorted(paths.items()):
        print(f"wrote {kind}: {path}")
    return 0


def _cmd_estimate(args) -> int:
    data, text = load_config(args.config)
    est = data.get("estimator") or {}
    horizon = int(est.get("horizon", 8))
    payload = {
        "model": data.get("model"),
        "dmc": data.get("dmc"),
        "p": data.get("p", 0.5),
        "n": est.get("n", 4),
        "horizons": sorted({2, 4, horizon} | {h for h in (6, 8) if h <= horizon}),
        "trials": est.get("trials", 400),
        "smb_n": data.get("n", 1000),
        "seed": args.seed if args.seed is not None else data.get("seed", 0),
        "cell_cap": est.get("cell_cap", 20_000_000),
    }
    req = validate_config(EstimateRequest, payload, args.config, text)
    status, body = _request(args.server, "/v1/estimate", req.model_dump(mode="json"))
    _raise_for_error(status, body)
    if body.get("markov_rate") is not None:
        print(f"joint_entropy_rate: {body['markov_rate']!r}")
    for b in body["rate_bounds"]:
        print(
            f"row_rate_bounds[row={b['row']}, m={b['horizon']}]: "
            f"[{b['lower']!r}, {b['upper']!r}]"
        )
    smb = body["smb"]
    print(f"smb_joint: {smb['joint_mean']!r} +- {smb['joint_stderr']!r} (n={smb['n']}, trials={smb['trials']})")
    for ell, (m, s) in enumerate(zip(smb["row_means"], smb["row_stderrs"])):
        print(f"smb_row[{ell}]: {m!r} +- {s!r}")
    fin = body["finite_n"]
    for key in ("a_row", "b_row", "c_row"):
        print(f"{key}[n={fin['n']}, p={fin['p']!r}]: {fin[key]}")
    for name, val in fin["residuals"].items():
        print(f"identity_residual.{name}: {val!r}")
    if args.out:
        _write_out(args.out, "finite_n.csv", fin["csv"])
        print(f"wrote finite-n table: {Path(args.out) / 'finite_n.csv'}")
    return 0


def _cmd_oracle(args) -> int:
    data, text = load_config(args.config)
    est = data.get("estimator") or {}
    caps = data.get("caps") or {}
    p_points = data.get("p")
    if p_points is None and data.get("grid"):
        p_points = data["grid"].get("p_min")
    payload = {
        "model": data.get("model"),
        "dmc": data.get("dmc"),
        "p": p_points if p_points is not None else 0.5,
        "n": data.get("n", est.get("n", 3)),
        "oracle_outcomes": caps.get("oracle_outcomes", 2_000_000),
        "cell_cap": caps.get("enumeration_cells", 20_000_000),
    }
    req = validate_config(OracleRequest, payload, args.config, text)
    status, body = _request(args.server, "/v1/oracle", req.model_dump(mode="json"))
    _raise_for_error(status, body)
    print(f"exact_map_error[p={body['p']!r}, n={body['n']}]: {body['exact_error']!r}")
    for name, val in body["finite_n"]["residuals"].items():
        print(f"identity_residual.{name}: {val!r}")
    if args.out:
        _write_out(args.out, "finite_n.csv", body["finite_n"]["csv"])
        oracle_text = f"exact_map_error: {body['exact_error']!r}\n" + "".join(
            f"identity_residual.{k}: {v!r}\n" for k, v in body["finite_n"]["residuals"].items()
        )
        _write_out(args.out, "oracle.txt", oracle_text)
        print(f"wrote oracle report: {Path(args.out) / 'oracle.txt'}")
    return 0


def _cmd_serve(args) -> int:
    try:
        import uvicorn
    except ImportError as exc:  # pragma: no cover
        raise UsageError(
            "serving needs uvicorn; install the 'serve' extra (pip install completion-lab[serve])"
        ) from exc
    uvicorn.run("completion_lab.service:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="completion-lab",
        description="Completion-capacity laboratory for stochastic matrix sources",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--format", choices=("csv", "report", "both"), default="both", help="which files to write"
        )
        p.add_argument("--jobs", type=int, default=None, help="parallel workers for sweeps")
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")

    common(sub.add_parser("capacity", help="print the capacity report for a config"))
    sim = sub.add_parser("simulate", help="run one verbose trial")
    common(sim)
    sim.add_argument("--p", type=float, default=None, help="observation rate override")
    sim.add_argument("--trial", type=int, default=0, help="trial index")
    common(sub.add_parser("sweep", help="full observation-rate sweep with report emission"))
    common(sub.add_parser("estimate", help="entropy-rate bounds, SMB, and finite-n tables"))
    common(sub.add_parser("oracle", help="exact error probability and identity checks"))
    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return parser


_COMMANDS = {
    "capacity": _cmd_capacity,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "estimate": _cmd_estimate,
    "oracle": _cmd_oracle,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["usage"]
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]


if __name__ == "__main__":
    sys.exit(main())
