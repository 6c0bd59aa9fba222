"""Command-line entry points.

Exit codes: 0 converged, 1 usage/configuration error, 2 iteration limit
reached, 3 protocol (transport) error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading

from dwmarket.coordinator import CONVERGED, run_dw
from dwmarket.core import DomainError, ProtocolError
from dwmarket.oracle import joint_enumerate, nash_certificate
from dwmarket.report import write_report
from dwmarket.scenario import (
    ScenarioError,
    bundled_scenario_path,
    dump_scenario,
    generate_scenario,
    load_device,
    load_scenario,
)
from dwmarket.transport import DeviceAgent, TcpHub, default_listen, run_tcp_agent

EXIT_OK, EXIT_CONFIG, EXIT_LIMIT, EXIT_PROTOCOL = 0, 1, 2, 3

log = logging.getLogger("dwmarket")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _scenario(arg: str | None, seed: int | None):
    """A path, ``random:N`` for a generated N-household scenario, or the bundled default."""
    if arg is None:
        return load_scenario(bundled_scenario_path())
    if arg.startswith("random:"):
        try:
            n = int(arg.split(":", 1)[1])
        except ValueError:
            raise ScenarioError([f"<arg>: bad household count in {arg!r}"]) from None
        return generate_scenario(n, 0 if seed is None else seed)
    return load_scenario(arg)


def _finish(result, scenario, args) -> int:
    cert = nash_certificate(result.allocation, scenario) if result.status == CONVERGED else None
    out = write_report(result, args.out, svg=args.svg, certificate=cert)
    last = result.records[-1]
    print(f"{result.status} after {len(result.records)} iteration(s); "
          f"objective {last.master.objective:.6g}, gap {last.gap:.3g}; wrote {out}")
    return EXIT_OK if result.status == CONVERGED else EXIT_LIMIT


def _run_tcp_inline(scenario, args):
    """Coordinator plus one loopback TCP agent thread per device, all in this process."""
    hub = TcpHub([i for i, _ in scenario.devices], scenario.horizon, args.listen or "127.0.0.1:0")
    address = "{}:{}".format(*hub.address)
    errors = []

    def agent_main(device_id, spec):
        try:
            run_tcp_agent(DeviceAgent(device_id, spec), address, timeout=args.timeout)
        except ProtocolError as exc:
            errors.append(exc)

    threads = [threading.Thread(target=agent_main, args=dev, daemon=True)
               for dev in scenario.devices]
    for t in threads:
        t.start()
    try:
        hub.wait_for_agents(args.timeout)
        result = run_dw(scenario, args.iters, args.gap_tol, hub=hub, timeout=args.timeout)
    finally:
        hub.close()
        for t in threads:
            t.join(timeout=5.0)
    if errors:
        raise errors[0]
    return result


def cmd_run(args) -> int:
    scenario = _scenario(args.scenario, args.seed)
    if args.transport == "tcp":
        result = _run_tcp_inline(scenario, args)
    else:
        result = run_dw(scenario, args.iters, args.gap_tol, timeout=args.timeout)
    return _finish(result, scenario, args)


def cmd_serve(args) -> int:
    scenario = _scenario(args.scenario, args.seed)
    listen = default_listen(args.listen)
    with TcpHub([i for i, _ in scenario.devices], scenario.horizon, listen) as hub:
        print("listening on {}:{}".format(*hub.address), flush=True)
        hub.wait_for_agents(args.register_timeout)
        result = run_dw(scenario, args.iters, args.gap_tol, hub=hub, timeout=args.timeout)
    return _finish(result, scenario, args)


def cmd_agent(args) -> int:
    if args.device:
        device_id, spec, _ = load_device(args.device)
    elif args.scenario and args.device_id:
        scenario = _scenario(args.scenario, args.seed)
        try:
            device_id, spec = args.device_id, scenario.device(args.device_id)
        except KeyError:
            raise ScenarioError([f"<arg>: scenario has no device {args.device_id!r}"]) from None
    else:
        raise ScenarioError(["<arg>: give --device FILE, or --scenario FILE with --device-id ID"])
    final = run_tcp_agent(DeviceAgent(device_id, spec), args.connect, timeout=args.timeout,
                          connect_timeout=args.connect_timeout)
    if final is not None:
        print(json.dumps({"device_id": device_id, "demand": list(final.demand)}))
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = generate_scenario(args.households, args.seed)
    dump_scenario(cfg, args.output)
    print(f"wrote {args.output}: {args.households} households, {len(cfg.devices)} devices")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _scenario(args.scenario, args.seed)
    print(f"ok: horizon {cfg.horizon}, {len(cfg.households)} households, "
          f"{len(cfg.devices)} devices, a={cfg.supply.a}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    cfg = _scenario(args.scenario, args.seed)
    res = joint_enumerate(cfg, args.step)
    print(json.dumps({"net_cost": res.net_cost, "demand": list(res.demand),
                      "plans": {i: list(p) for i, p in res.plans.items()}}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dwmarket",
                     description="Day-ahead price coordination of EVs and water heaters.",
                     epilog="exit codes: 0 converged, 1 usage/config error, "
                            "2 iteration limit, 3 protocol error")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser,
                                metavar="{run,serve,agent,generate,validate}")

    def common(p, scenario_required=False):
        p.add_argument("scenario", nargs=None if scenario_required else "?",
                       help="scenario JSON, 'random:N', or omitted for the bundled 8-household day")
        p.add_argument("--seed", type=int, default=None, help="seed for random:N scenarios")

    def dw_flags(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--iters", type=int, default=None, help="iteration budget")
        p.add_argument("--gap-tol", type=float, default=None)
        p.add_argument("--svg", action="store_true", help="also write SVG charts")
        p.add_argument("--timeout", type=float, default=30.0, help="per-round bid timeout, s")

    p = sub.add_parser("run", help="simulate a day-ahead coordination")
    common(p)
    dw_flags(p)
    p.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    p.add_argument("--listen", default=None, help="loopback address for --transport tcp")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="coordinator waiting for TCP agents")
    common(p)
    dw_flags(p)
    p.add_argument("--listen", default=None, help="host:port (else $DWMARKET_LISTEN)")
    p.add_argument("--register-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("agent", help="serve one device to a coordinator")
    p.add_argument("--connect", required=True, help="coordinator host:port")
    p.add_argument("--device", help="device JSON file")
    p.add_argument("--scenario", help="scenario to take the device from")
    p.add_argument("--device-id")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--connect-timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("generate", help="write a random scenario")
    p.add_argument("--households", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a scenario file")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("enumerate")  # hidden: brute-force oracle for tiny scenarios
    common(p, scenario_required=True)
    p.add_argument("--step", type=float, default=0.25)
    p.set_defaults(func=cmd_enumerate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
