"""Seeded generator of NSL-KDD-shaped records.

Produces 43-field lines (41 features, raw label, difficulty) with the class
frequencies of the KDDTrain+ file and per-class feature profiles loosely
modelled on each attack's traffic signature. It exists so the pipeline and
its tests can run where the real dataset is not available; it is not a
substitute for it.

A small share of ``nmap`` records imitate ``ipsweep``/``satan`` probes, which
keeps the minority class genuinely hard to recall.
"""
from __future__ import annotations

import numpy as np

from .ingest import load_schema

# label counts of KDDTrain+ (125,973 rows)
TRAIN_COUNTS = {
    "normal": 67343, "neptune": 41214, "satan": 3633, "ipsweep": 3599,
    "portsweep": 2931, "smurf": 2646, "nmap": 1493, "back": 956, "teardrop": 892,
    "warezclient": 890, "pod": 201, "guess_passwd": 53, "buffer_overflow": 30,
    "warezmaster": 20, "land": 18, "imap": 11, "rootkit": 10, "loadmodule": 9,
    "ftp_write": 8, "multihop": 7, "phf": 4, "perl": 3, "spy": 2,
}

SERVICES = (
    "auth", "bgp", "courier", "csnet_ns", "ctf", "daytime", "discard", "domain",
    "domain_u", "echo", "eco_i", "ecr_i", "efs", "exec", "finger", "ftp", "ftp_data",
    "gopher", "hostnames", "http", "http_443", "imap4", "iso_tsap", "klogin",
    "kshell", "ldap", "link", "login", "mtp", "name", "netbios_dgm", "netbios_ns",
    "netbios_ssn", "netstat", "nnsp", "nntp", "ntp_u", "other", "pop_2", "pop_3",
    "printer", "private", "remote_job", "rje", "shell", "smtp", "sql_net", "ssh",
    "sunrpc", "supdup", "systat", "telnet", "tim_i", "time", "urp_i", "uucp",
    "uucp_path", "vmnet", "whois", "X11", "Z39_50",
)
FLAGS = ("OTH", "REJ", "RSTO", "RSTOS0", "RSTR", "S0", "S1", "S2", "S3", "SF", "SH")

RATE_COLUMNS = frozenset(
    n for n in (c.name for c in load_schema()) if n.endswith("_rate")
)


def _spread(names, rng_weights=None):
    """Uniform choice over many services."""
    return ("choice", {n: 1.0 for n in names})


NORMAL = {
    "protocol_type": ("choice", {"tcp": 0.82, "udp": 0.12, "icmp": 0.06}),
    "service": ("choice", {
        "http": 0.5, "private": 0.03, "domain_u": 0.08, "smtp": 0.1, "ftp_data": 0.08,
        "other": 0.05, "ecr_i": 0.03, "eco_i": 0.01, "telnet": 0.02, "ftp": 0.03,
        "urp_i": 0.02, "ntp_u": 0.02, "pop_3": 0.01, "finger": 0.01, "IRC_like": 0.0,
    }),
    "flag": ("choice", {"SF": 0.95, "S1": 0.01, "REJ": 0.02, "RSTO": 0.01, "S0": 0.005, "RSTR": 0.005}),
    "duration": ("lognorm", 1.0, 2.0, 0.9),
    "src_bytes": ("lognorm", 5.5, 1.5, 0.02),
    "dst_bytes": ("lognorm", 7.0, 2.0, 0.25),
    "logged_in": ("choice", {1: 0.7, 0: 0.3}),
    "hot": ("pois", 0.2),
    "num_compromised": ("pois", 0.01),
    "count": ("int", 1, 30),
    "srv_count": ("int", 1, 40),
    "serror_rate": ("rate", 0.2, 20),
    "srv_serror_rate": ("rate", 0.2, 20),
    "rerror_rate": ("rate", 0.3, 15),
    "srv_rerror_rate": ("rate", 0.3, 15),
    "same_srv_rate": ("rate", 20, 1),
    "diff_srv_rate": ("rate", 1, 20),
    "srv_diff_host_rate": ("rate", 1, 5),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 255),
    "dst_host_same_srv_rate": ("rate", 5, 1),
    "dst_host_diff_srv_rate": ("rate", 0.5, 15),
    "dst_host_same_src_port_rate": ("rate", 1, 5),
    "dst_host_srv_diff_host_rate": ("rate", 1, 10),
    "dst_host_serror_rate": ("rate", 0.2, 20),
    "dst_host_srv_serror_rate": ("rate", 0.2, 20),
    "dst_host_rerror_rate": ("rate", 0.3, 15),
    "dst_host_srv_rerror_rate": ("rate", 0.3, 15),
}
NORMAL["service"][1].pop("IRC_like")

NEPTUNE = {
    "protocol_type": ("const", "tcp"),
    "service": ("choice", {"private": 8.0, **{s: 0.15 for s in SERVICES[:40]}}),
    "flag": ("choice", {"S0": 0.85, "REJ": 0.13, "SF": 0.01, "RSTO": 0.01}),
    "count": ("int", 100, 511),
    "srv_count": ("int", 1, 30),
    "serror_rate": ("rate", 20, 0.5),
    "srv_serror_rate": ("rate", 20, 0.5),
    "rerror_rate": ("rate", 0.5, 10),
    "same_srv_rate": ("rate", 1, 10),
    "diff_srv_rate": ("rate", 1, 10),
    "dst_host_count": ("const", 255),
    "dst_host_srv_count": ("int", 1, 30),
    "dst_host_same_srv_rate": ("rate", 1, 15),
    "dst_host_diff_srv_rate": ("rate", 1, 10),
    "dst_host_serror_rate": ("rate", 20, 0.5),
    "dst_host_srv_serror_rate": ("rate", 20, 0.5),
}

SMURF = {
    "protocol_type": ("const", "icmp"),
    "service": ("const", "ecr_i"),
    "flag": ("const", "SF"),
    "src_bytes": ("choice", {1032: 0.7, 520: 0.3}),
    "count": ("int", 200, 511),
    "srv_count": ("int", 200, 511),
    "same_srv_rate": ("const", 1.0),
    "dst_host_count": ("const", 255),
    "dst_host_srv_count": ("const", 255),
    "dst_host_same_srv_rate": ("const", 1.0),
    "dst_host_same_src_port_rate": ("rate", 10, 1),
}

SATAN = {
    "protocol_type": ("choice", {"tcp": 0.85, "udp": 0.1, "icmp": 0.05}),
    "service": _spread(SERVICES),
    "flag": ("choice", {"REJ": 0.5, "S0": 0.2, "SF": 0.15, "RSTO": 0.1, "RSTR": 0.05}),
    "count": ("int", 1, 20),
    "srv_count": ("int", 1, 5),
    "rerror_rate": ("rate", 5, 2),
    "srv_rerror_rate": ("rate", 5, 2),
    "same_srv_rate": ("rate", 2, 5),
    "diff_srv_rate": ("rate", 5, 5),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 10),
    "dst_host_same_srv_rate": ("rate", 1, 10),
    "dst_host_diff_srv_rate": ("rate", 5, 3),
    "dst_host_same_src_port_rate": ("rate", 1, 5),
    "dst_host_rerror_rate": ("rate", 5, 3),
    "dst_host_srv_rerror_rate": ("rate", 5, 3),
}

IPSWEEP = {
    "protocol_type": ("choice", {"icmp": 0.97, "tcp": 0.03}),
    "service": ("choice", {"eco_i": 0.9, "ecr_i": 0.05, "private": 0.05}),
    "flag": ("const", "SF"),
    "src_bytes": ("choice", {8: 0.6, 18: 0.4}),
    "count": ("int", 1, 5),
    "srv_count": ("int", 1, 10),
    "same_srv_rate": ("const", 1.0),
    "srv_diff_host_rate": ("rate", 10, 1),
    "dst_host_count": ("int", 1, 100),
    "dst_host_srv_count": ("int", 1, 100),
    "dst_host_same_srv_rate": ("rate", 10, 1),
    "dst_host_same_src_port_rate": ("rate", 10, 1),
    "dst_host_srv_diff_host_rate": ("rate", 5, 5),
}

NMAP_ICMP = {
    **IPSWEEP,
    "service": ("choice", {"eco_i": 0.8, "ecr_i": 0.1, "urp_i": 0.1}),
    "src_bytes": ("choice", {8: 0.7, 18: 0.3}),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 60),
    "dst_host_srv_diff_host_rate": ("rate", 3, 5),
}
NMAP_TCP = {
    "protocol_type": ("const", "tcp"),
    "service": ("choice", {"private": 0.6, "other": 0.2, "http": 0.1, "ftp": 0.1}),
    "flag": ("choice", {"S0": 0.4, "REJ": 0.3, "RSTO": 0.1, "SH": 0.1, "OTH": 0.1}),
    "count": ("int", 1, 10),
    "srv_count": ("int", 1, 10),
    "serror_rate": ("rate", 3, 3),
    "rerror_rate": ("rate", 3, 3),
    "same_srv_rate": ("rate", 3, 2),
    "diff_srv_rate": ("rate", 2, 5),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 20),
    "dst_host_same_srv_rate": ("rate", 2, 5),
    "dst_host_diff_srv_rate": ("rate", 3, 5),
    "dst_host_same_src_port_rate": ("rate", 3, 3),
    "dst_host_rerror_rate": ("rate", 3, 5),
    "dst_host_serror_rate": ("rate", 3, 5),
}
NMAP_UDP = {
    "protocol_type": ("const", "udp"),
    "service": ("choice", {"private": 0.9, "other": 0.1}),
    "flag": ("const", "SF"),
    "src_bytes": ("int", 1, 60),
    "count": ("int", 1, 10),
    "srv_count": ("int", 1, 10),
    "same_srv_rate": ("rate", 5, 2),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 40),
    "dst_host_same_src_port_rate": ("rate", 5, 2),
}

PORTSWEEP = {
    "protocol_type": ("choice", {"tcp": 0.95, "icmp": 0.05}),
    "service": ("choice", {"private": 0.8, "other": 0.1, "ftp_data": 0.05, "telnet": 0.05}),
    "flag": ("choice", {"REJ": 0.4, "RSTR": 0.4, "S0": 0.1, "SF": 0.1}),
    "duration": ("lognorm", 8.0, 2.0, 0.7),
    "count": ("int", 1, 5),
    "srv_count": ("int", 1, 5),
    "srv_rerror_rate": ("rate", 10, 1),
    "rerror_rate": ("rate", 5, 2),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 5),
    "dst_host_diff_srv_rate": ("rate", 2, 5),
    "dst_host_same_src_port_rate": ("rate", 10, 1),
    "dst_host_srv_rerror_rate": ("rate", 10, 1),
    "dst_host_rerror_rate": ("rate", 5, 5),
}

BACK = {
    "protocol_type": ("const", "tcp"),
    "service": ("const", "http"),
    "flag": ("choice", {"SF": 0.9, "RSTR": 0.1}),
    "src_bytes": ("const", 54540),
    "dst_bytes": ("lognorm", 8.9, 0.1, 0.0),
    "hot": ("pois", 2.0),
    "num_compromised": ("pois", 1.0),
    "logged_in": ("const", 1),
    "count": ("int", 1, 10),
    "srv_count": ("int", 1, 10),
    "same_srv_rate": ("const", 1.0),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 255),
    "dst_host_same_srv_rate": ("rate", 10, 1),
}
TEARDROP = {
    "protocol_type": ("const", "udp"),
    "service": ("const", "private"),
    "flag": ("const", "SF"),
    "src_bytes": ("const", 28),
    "wrong_fragment": ("const", 3),
    "count": ("int", 50, 150),
    "srv_count": ("int", 50, 150),
    "same_srv_rate": ("const", 1.0),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 255),
}
POD = {
    "protocol_type": ("const", "icmp"),
    "service": ("choice", {"ecr_i": 0.9, "tim_i": 0.1}),
    "flag": ("const", "SF"),
    "src_bytes": ("const", 1480),
    "wrong_fragment": ("const", 1),
    "count": ("int", 1, 5),
    "srv_count": ("int", 1, 5),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 255),
}
LAND = {
    "protocol_type": ("const", "tcp"),
    "service": ("choice", {"finger": 0.3, "telnet": 0.3, "http": 0.4}),
    "flag": ("const", "S0"),
    "land": ("const", 1),
    "count": ("const", 1),
    "srv_count": ("const", 1),
    "serror_rate": ("const", 1.0),
    "srv_serror_rate": ("const", 1.0),
    "same_srv_rate": ("const", 1.0),
}
R2L = {
    "protocol_type": ("const", "tcp"),
    "service": ("choice", {"ftp_data": 0.5, "ftp": 0.3, "telnet": 0.2}),
    "flag": ("choice", {"SF": 0.9, "RSTO": 0.1}),
    "duration": ("lognorm", 3.0, 2.0, 0.4),
    "src_bytes": ("lognorm", 6.0, 2.0, 0.0),
    "dst_bytes": ("lognorm", 5.0, 2.5, 0.3),
    "hot": ("pois", 3.0),
    "num_failed_logins": ("pois", 0.3),
    "logged_in": ("choice", {1: 0.8, 0: 0.2}),
    "is_guest_login": ("choice", {1: 0.4, 0: 0.6}),
    "root_shell": ("choice", {1: 0.1, 0: 0.9}),
    "num_file_creations": ("pois", 0.3),
    "count": ("int", 1, 5),
    "srv_count": ("int", 1, 5),
    "same_srv_rate": ("const", 1.0),
    "dst_host_count": ("int", 1, 255),
    "dst_host_srv_count": ("int", 1, 255),
    "dst_host_same_srv_rate": ("rate", 3, 2),
}

# label -> list of (weight, profile)
PROFILES = {
    "normal": [(1.0, NORMAL)],
    "neptune": [(1.0, NEPTUNE)],
    "smurf": [(1.0, SMURF)],
    "satan": [(1.0, SATAN)],
    "ipsweep": [(1.0, IPSWEEP)],
    "nmap": [(0.45, NMAP_ICMP), (0.4, NMAP_TCP), (0.15, NMAP_UDP)],
    "portsweep": [(1.0, PORTSWEEP)],
    "back": [(1.0, BACK)],
    "teardrop": [(1.0, TEARDROP)],
    "pod": [(1.0, POD)],
    "land": [(1.0, LAND)],
}


def _draw(spec, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = spec[0]
    if kind == "const":
        return np.full(n, spec[1], dtype=object)
    if kind == "choice":
        values = list(spec[1])
        p = np.array([spec[1][v] for v in values], dtype=np.float64)
        idx = rng.choice(len(values), size=n, p=p / p.sum())
        return np.array(values, dtype=object)[idx]
    if kind == "int":
        return rng.integers(spec[1], spec[2] + 1, size=n)
    if kind == "pois":
        return rng.poisson(spec[1], size=n)
    if kind == "lognorm":
        _, mu, sigma, p_zero = spec
        v = np.rint(rng.lognormal(mu, sigma, size=n)).astype(np.int64)
        v[rng.random(n) < p_zero] = 0
        return v
    if kind == "rate":
        return np.round(rng.beta(spec[1], spec[2], size=n), 2)
    raise ValueError(f"unknown generator {kind!r}")


def _format(col: np.ndarray, is_rate: bool) -> list[str]:
    if is_rate:
        return [f"{float(v):.2f}" for v in col]
    return [v if isinstance(v, str) else str(int(v)) if float(v).is_integer() else f"{float(v):.2f}" for v in col]


def generate_records(
    scale: float = 1.0,
    seed: int = 0,
    missing_rate: float = 0.001,
    sentinel_rate: float = 0.0005,
    counts: dict[str, int] | None = None,
) -> str:
    """Return NSL-KDD-format text (43 fields per line, no header).

    ``scale`` multiplies the KDDTrain+ class counts. ``missing_rate`` empties
    one numeric cell in that share of rows; ``sentinel_rate`` writes ``*`` or
    ``99999`` into one numeric cell.
    """
    rng = np.random.default_rng(seed)
    schema = [c for c in load_schema() if c.kind != "label"]
    names = [c.name for c in schema]
    counts = counts or {k: int(round(v * scale)) for k, v in TRAIN_COUNTS.items()}
    blocks: list[list[list[str]]] = []
    labels: list[str] = []
    for label, n in counts.items():
        if n <= 0:
            continue
        components = PROFILES.get(label, [(1.0, R2L)])
        weights = np.array([w for w, _ in components])
        assign = rng.choice(len(components), size=n, p=weights / weights.sum())
        for k, (_, profile) in enumerate(components):
            m = int((assign == k).sum())
            if m == 0:
                continue
            cols = []
            for name in names:
                spec = profile.get(name, ("const", 0))
                cols.append(_format(_draw(spec, m, rng), name in RATE_COLUMNS))
            blocks.append(cols)
            labels += [label] * m
    rows = [list(r) for cols in blocks for r in zip(*cols)]
    difficulty = rng.integers(10, 22, size=len(rows))
    numeric = [j for j, c in enumerate(schema) if c.kind == "continuous"]
    for i in np.flatnonzero(rng.random(len(rows)) < missing_rate):
        rows[i][numeric[rng.integers(len(numeric))]] = ""
    for i in np.flatnonzero(rng.random(len(rows)) < sentinel_rate):
        rows[i][numeric[rng.integers(len(numeric))]] = "*" if rng.random() < 0.5 else "99999"
    order = rng.permutation(len(rows))
    lines = [",".join(rows[i] + [labels[i], str(difficulty[i])]) for i in order]
    return "\n".join(lines) + "\n"
