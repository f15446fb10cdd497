"""CSV/JSON readers and writers for contacts, symptoms, covariates and results."""

import csv
import json
import math
from collections import defaultdict

import numpy as np

from .data import MISSING, Covariates, DynamicNetwork, PersonIndex
from .errors import ConflictError, DomainError, ParseError


def _as_people(people):
    if isinstance(people, PersonIndex):
        return people
    if isinstance(people, int):
        return PersonIndex.from_count(people)
    return PersonIndex(people)


def _rows(path):
    """Yield ``(line_number, cells)`` for non-blank rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            yield lineno, cells


def _is_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def _parse_int(text, path, lineno, what):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", path, lineno) from None


def load_network(path, people, num_days, duration_threshold=10.0, max_degree=None):
    """Read a day-stamped contact list into a :class:`DynamicNetwork`.

    Rows are ``day,node_i,node_j[,duration_minutes]``. Durations of the same
    pair on the same day accumulate; the pair becomes an edge when the total
    reaches ``duration_threshold``. A row without a duration always counts.
    """
    if duration_threshold < 0:
        raise DomainError("duration threshold must be non-negative")
    people = _as_people(people)
    total = defaultdict(float)
    first = True
    for lineno, cells in _rows(path):
        if first:
            first = False
            if not _is_int(cells[0]):
                continue  # header
        if len(cells) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(cells)}", path, lineno)
        day = _parse_int(cells[0], path, lineno, "day")
        if not 1 <= day <= num_days:
            raise DomainError(f"{path}:{lineno}: day {day} outside [1, {num_days}]")
        i = people.index(cells[1])
        j = people.index(cells[2])
        if i == j:
            raise ParseError("self-contact", path, lineno)
        if len(cells) == 4 and cells[3] not in ("", "NA"):
            try:
                dur = float(cells[3])
            except ValueError:
                raise ParseError(f"duration {cells[3]!r} is not numeric", path, lineno) from None
            if not dur >= 0:
                raise ParseError("negative duration", path, lineno)
        else:
            dur = math.inf
        total[(day, min(i, j), max(i, j))] += dur
    edges = [[] for _ in range(num_days)]
    for (day, i, j), dur in sorted(total.items()):
        if dur >= duration_threshold:
            edges[day - 1].append((i, j))
    return DynamicNetwork(len(people), edges, max_degree=max_degree)


def load_symptoms(path, people, num_days, num_symptoms):
    """Read ``node,day,symptom,value`` rows; unlisted cells stay MISSING."""
    people = _as_people(people)
    Y = np.full((len(people), num_days, num_symptoms), MISSING, dtype=np.int8)
    seen = set()
    first = True
    for lineno, cells in _rows(path):
        if first:
            first = False
            if not _is_int(cells[1] if len(cells) > 1 else cells[0]):
                continue
        if len(cells) != 4:
            raise ParseError(f"expected 4 fields, got {len(cells)}", path, lineno)
        n = people.index(cells[0])
        t = _parse_int(cells[1], path, lineno, "day")
        s = _parse_int(cells[2], path, lineno, "symptom")
        if not 1 <= t <= num_days:
            raise DomainError(f"{path}:{lineno}: day {t} outside [1, {num_days}]")
        if not 1 <= s <= num_symptoms:
            raise DomainError(f"{path}:{lineno}: symptom {s} outside [1, {num_symptoms}]")
        key = (n, t, s)
        if key in seen:
            raise ConflictError(f"{path}:{lineno}: duplicate entry for node {cells[0]}, day {t}, symptom {s}")
        seen.add(key)
        value = cells[3].upper()
        if value == "NA":
            continue
        if value not in ("0", "1"):
            raise ParseError(f"value {cells[3]!r} not in {{0, 1, NA}}", path, lineno)
        Y[n, t - 1, s - 1] = int(value)
    return Y


def load_covariates(path, people=None):
    """Read ``node,f1,...`` rows; returns ``(Covariates, PersonIndex)``.

    When ``people`` is given, rows are reordered to it and every person must
    appear exactly once.
    """
    rows = list(_rows(path))
    if not rows:
        raise ParseError("empty covariate file (header required)", path, 1)
    header_line, header = rows[0]
    if header[0].lower() != "node":
        raise ParseError("header row starting with 'node' required", path, header_line)
    names = tuple(header[1:])
    ids, feats = [], []
    for lineno, cells in rows[1:]:
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", path, lineno)
        try:
            feats.append([float(c) for c in cells[1:]])
        except ValueError:
            raise ParseError("non-numeric feature", path, lineno) from None
        ids.append(cells[0])
    if len(set(ids)) != len(ids):
        raise DomainError(f"{path}: duplicate person rows")
    F = np.asarray(feats, dtype=float).reshape(len(ids), len(names))
    if people is None:
        people = PersonIndex(ids)
    else:
        people = _as_people(people)
        if len(ids) != len(people):
            raise DomainError(f"{path}: {len(ids)} rows for {len(people)} people")
        pos = {pid: k for k, pid in enumerate(ids)}
        missing = [pid for pid in people.ids if pid not in pos]
        if missing:
            raise DomainError(f"{path}: no row for person {missing[0]!r}")
        F = F[[pos[pid] for pid in people.ids]]
    return Covariates.from_features(F, names), people


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_network(path, G, people):
    people = _as_people(people)
    fh, w = _writer(path)
    with fh:
        w.writerow(["day", "node_i", "node_j"])
        for t in range(1, G.num_days + 1):
            for i, j in G.edges(t):
                w.writerow([t, people.ids[i], people.ids[j]])


def write_states(path, X, people):
    people = _as_people(people)
    fh, w = _writer(path)
    with fh:
        w.writerow(["node", "day", "state"])
        for n in range(X.shape[0]):
            for t in range(X.shape[1]):
                w.writerow([people.ids[n], t, int(X[n, t])])


def read_states(path, people, num_days):
    people = _as_people(people)
    X = np.full((len(people), num_days + 1), -1, dtype=np.int8)
    first = True
    for lineno, cells in _rows(path):
        if first:
            first = False
            if not _is_int(cells[1]):
                continue
        if len(cells) != 3 or cells[2] not in ("0", "1"):
            raise ParseError("expected node,day,state with binary state", path, lineno)
        t = _parse_int(cells[1], path, lineno, "day")
        if not 0 <= t <= num_days:
            raise DomainError(f"{path}:{lineno}: day {t} outside [0, {num_days}]")
        X[people.index(cells[0]), t] = int(cells[2])
    if np.any(X < 0):
        raise DomainError(f"{path}: state matrix incomplete")
    return X


def write_symptoms(path, Y, people):
    people = _as_people(people)
    fh, w = _writer(path)
    with fh:
        w.writerow(["node", "day", "symptom", "value"])
        N, T, S = Y.shape
        for n in range(N):
            for t in range(T):
                for s in range(S):
                    v = Y[n, t, s]
                    w.writerow([people.ids[n], t + 1, s + 1, "NA" if v == MISSING else int(v)])


def write_covariates(path, cov, people):
    people = _as_people(people)
    fh, w = _writer(path)
    with fh:
        w.writerow(["node", *cov.names[1:]])
        for n, row in enumerate(cov.values):
            w.writerow([people.ids[n], *(repr(float(v)) for v in row[1:])])


def write_marginals(path, P, people):
    """Write an ``(N, T+1)`` grid of infection probabilities."""
    people = _as_people(people)
    fh, w = _writer(path)
    with fh:
        w.writerow(["node", "day", "p_infected"])
        for n in range(P.shape[0]):
            for t in range(P.shape[1]):
                w.writerow([people.ids[n], t, repr(float(P[n, t]))])


def read_marginals(path, people, num_days):
    people = _as_people(people)
    P = np.full((len(people), num_days + 1), np.nan)
    first = True
    for lineno, cells in _rows(path):
        if first:
            first = False
            if not _is_int(cells[1]):
                continue
        if len(cells) != 3:
            raise ParseError("expected node,day,p_infected", path, lineno)
        t = _parse_int(cells[1], path, lineno, "day")
        try:
            P[people.index(cells[0]), t] = float(cells[2])
        except ValueError:
            raise ParseError("non-numeric probability", path, lineno) from None
    if np.any(np.isnan(P)):
        raise DomainError(f"{path}: marginal grid incomplete")
    return P


def write_people(path, people):
    fh, w = _writer(path)
    with fh:
        w.writerow(["index", "node"])
        for k, pid in enumerate(people.ids):
            w.writerow([k, pid])


def read_people(path):
    """Read an ``index,node`` table written by :func:`write_people`."""
    ids = []
    for lineno, cells in _rows(path):
        if lineno == 1 and cells[0] == "index":
            continue
        if len(cells) != 2 or _parse_int(cells[0], path, lineno, "index") != len(ids):
            raise ParseError("expected consecutive index,node rows", path, lineno)
        ids.append(cells[1])
    return PersonIndex(ids)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path, exc.lineno) from None
