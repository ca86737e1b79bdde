"""Random CDR fixtures shared by tests."""

import random

from cdrtarget.data_model import CdrEvent

TOWERS = {
    "T0": (36.70, 67.10),
    "T1": (36.75, 67.12),
    "T2": (36.69, 67.20),
    "T3": (36.80, 67.05),
    "T4": (36.70, 67.10),  # same place as T0, different id
    "T5": None,            # tower with unknown coordinates
}


def random_events(rng: random.Random, max_events: int = 50, sub: str = "S") -> list:
    """Events for one subscriber, mixing kinds, ties and repeated contacts."""
    n = rng.randint(0, max_events)
    base = 1_450_000_000 + rng.randint(0, 10) * 86400
    contacts = [f"C{i}" for i in range(rng.randint(1, 6))]
    towers = list(TOWERS)[: rng.randint(1, len(TOWERS))]
    events = []
    t = float(base)
    for _ in range(n):
        # small gaps create conversations, occasional exact ties
        step = rng.choice([0, 30, 600, 3599, 3600, 5000, 40000, 90000])
        t += step + (rng.random() * 100 if rng.random() < 0.5 else 0)
        kind = rng.choices(["call", "text", "recharge"], weights=[4, 5, 1])[0]
        if kind == "recharge":
            events.append(CdrEvent(sub, "recharge", "n/a", t,
                                   amount=rng.choice([50.0, 100.0, 12.5, rng.random() * 80 + 1])))
            continue
        direction = rng.choice(["incoming", "outgoing"])
        cp = rng.choice(contacts)
        if kind == "call":
            tower = rng.choice(towers + [None])
            loc = TOWERS.get(tower) if tower else None
            events.append(CdrEvent(sub, "call", direction, t, counterpart_id=cp,
                                   duration_s=float(rng.choice([0, 5, 60, rng.randint(1, 900)]))
                                   + (rng.random() if rng.random() < 0.3 else 0.0),
                                   tower_id=tower,
                                   tower_lat=None if loc is None else loc[0],
                                   tower_lon=None if loc is None else loc[1]))
        else:
            events.append(CdrEvent(sub, "text", direction, t, counterpart_id=cp))
    rng.shuffle(events)
    return events
