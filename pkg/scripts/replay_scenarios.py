"""Replay the three reference scenarios offline and print what each finds.

Every target is a local fixture server; the onion scenario goes through the
in-process mock SOCKS5 proxy, so nothing leaves the machine.

    python scripts/replay_scenarios.py [--delay 0.02] [--pool-size 8] [--keep DIR]
"""
import argparse
import tempfile
import time
from pathlib import Path

from reconwatch import testkit
from reconwatch.pipeline import RuntimeConfig, run_session
from reconwatch.session import TypedKeyword, build_spec


def _show(label, outcome, elapsed):
    s = outcome.summary
    print(f"{label}: scanned {s.pages_scanned}, matched {s.pages_matched}, errored {s.pages_errored} "
          f"({elapsed:.1f}s)")
    for f in s.findings:
        print(f"    {f.source:<5} {f.id:<16} {f.name}")
    print(f"    report: {outcome.report_path}")


def _run(label, spec, config):
    t0 = time.monotonic()
    out = run_session(spec, config)
    _show(label, out, time.monotonic() - t0)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delay", type=float, default=0.02, help="per-host delay in seconds")
    ap.add_argument("--pool-size", type=int, default=8)
    ap.add_argument("--keep", type=Path, help="write session output here instead of a temp dir")
    args = ap.parse_args()

    home = args.keep or Path(tempfile.mkdtemp(prefix="reconwatch-replay-"))

    def config(**kw):
        return RuntimeConfig(home=home, per_host_delay=args.delay, pool_size=args.pool_size, **kw)

    onion = f"http://{testkit.QUERY_ONION}/"

    corpus = testkit.build_scenario1_corpus()
    with testkit.serve(corpus) as srv, testkit.mock_socks5((srv.host, srv.port)) as proxy:
        spec = build_spec([TypedKeyword("name", testkit.SCENARIO1_NAME),
                           TypedKeyword("email", testkit.SCENARIO1_EMAIL)], "and", [onion])
        _run("scenario 1 (onion forum, name AND email)", spec, config(proxy=proxy.address))
        print(f"    proxy CONNECTs: {len(proxy.accepted)}, all by name: "
              f"{all(r.atyp == 0x03 for r in proxy.accepted)}")

    with testkit.serve(testkit.build_scenario2_corpus()) as srv:
        spec = build_spec([TypedKeyword("email", testkit.SCENARIO2_EMAIL)], "or", [srv.url])
        _run("scenario 2 (paste site, email)", spec, config())

    with testkit.serve(testkit.build_scenario3_corpus()) as srv:
        phrase = TypedKeyword("text", testkit.SCENARIO3_PHRASE)
        body = TypedKeyword("text", testkit.SCENARIO3_BODY_TERM)
        flagged = _run("scenario 3 (onion link forum, phrase)", build_spec([phrase], "or", [srv.url]), config())
        real = _run("scenario 3 (phrase AND body term)", build_spec([phrase, body], "and", [srv.url]), config())
    n, k = flagged.summary.pages_matched, real.summary.pages_matched
    if n:
        print(f"false positives: {n - k}/{n} = {(n - k) / n:.2%}")
    print(f"session output under {home}")


if __name__ == "__main__":
    main()
