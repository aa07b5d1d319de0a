"""Seeded UNSW-NB15-shaped flows for demos and tests.

Attacks and benign flows differ only through how often each flag-driving
pattern is switched on, so flags carry label signal without separating the
classes perfectly.
"""

from __future__ import annotations

import numpy as np

from .dataset import CORE_COLUMNS, UNSW_COLUMNS, FlowRecord

COMMON_SERVICES = ("-", "http", "dns", "ftp", "smtp")
COMMON_STATES = ("FIN", "CON", "INT", "REQ")
EXTRA_COLUMNS = tuple(c for c in UNSW_COLUMNS if c not in CORE_COLUMNS)


def synthetic_records(
    n: int,
    seed: int = 0,
    attack_fraction: float = 0.5,
    attack_rate: float = 0.6,
    benign_rate: float = 0.1,
    start_id: int = 1,
) -> list[FlowRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        label = int(rng.random() < attack_fraction)
        on = rng.random(6) < (attack_rate if label else benign_rate)
        asym, rate_high, ttl_bad, timer_bad, rare, burst = on

        if burst:
            pkts = int(rng.integers(25, 60))
            dur = float(rng.uniform(0.002, 0.015)) if rate_high else float(rng.uniform(0.06, 0.1))
        elif rate_high:
            pkts = int(rng.integers(6, 16))
            dur = float(rng.uniform(0.0005, 0.004))
        else:
            pkts = int(rng.integers(4, 40))
            dur = float(rng.uniform(0.5, 8.0))
        if asym:
            spkts, dpkts = pkts, 0
            sbytes, dbytes = int(rng.integers(20_000, 200_000)), int(rng.integers(0, 100))
        else:
            spkts = max(1, pkts // 2)
            dpkts = pkts - spkts
            sbytes, dbytes = int(rng.integers(200, 4_000)), int(rng.integers(200, 8_000))

        sttl = int(rng.choice([0, 10, 20])) if ttl_bad else int(rng.choice([31, 62, 254]))
        dttl = int(rng.choice([29, 252])) if dpkts else 0
        if timer_bad:
            tcprtt = float(rng.uniform(1e-6, 9e-5))
            synack, ackdat = tcprtt * 0.4, tcprtt * 0.6
        elif rng.random() < 0.7:
            tcprtt = float(rng.uniform(0.01, 0.2))
            synack, ackdat = tcprtt * 0.45, tcprtt * 0.55
        else:
            tcprtt = synack = ackdat = 0.0
        if rare:
            # unseen names are rare by construction
            service, state = f"svc{int(rng.integers(10**9))}", str(rng.choice(COMMON_STATES))
        else:
            service, state = str(rng.choice(COMMON_SERVICES)), str(rng.choice(COMMON_STATES))
        proto = "tcp" if tcprtt > 0 else str(rng.choice(["udp", "tcp", "arp"]))

        extras = {name: float(rng.integers(0, 50)) for name in EXTRA_COLUMNS}
        extras["rate"] = (spkts + dpkts) / max(dur, 1e-6)
        extras["sload"] = sbytes * 8 / max(dur, 1e-6)
        extras["dload"] = dbytes * 8 / max(dur, 1e-6)
        out.append(
            FlowRecord(
                id=start_id + k,
                dur=round(dur, 6),
                proto=proto,
                service=service,
                state=state,
                spkts=spkts,
                dpkts=dpkts,
                sbytes=sbytes,
                dbytes=dbytes,
                sttl=sttl,
                dttl=dttl,
                tcprtt=round(tcprtt, 6),
                synack=round(synack, 6),
                ackdat=round(ackdat, 6),
                ct_state_ttl=int(rng.integers(0, 7)),
                label=label,
                extra_names=EXTRA_COLUMNS,
                extra_values=tuple(round(extras[name], 6) for name in EXTRA_COLUMNS),
            )
        )
    return out
