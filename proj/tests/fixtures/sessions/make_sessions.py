#!/usr/bin/env python3
"""Writes the table fixture sessions: 48 targets, behavior tallies per kind.

Run from this directory. Output is deterministic."""

import json
import random

TARGETS = [f"app{n:02d}.example" for n in range(1, 49)]

# kind -> list of (behavior, count); the remainder of the 48 targets are normal_load.
TABLES = {
    "table3": {
        "malformed_response": [("force_close", 2)],
        "empty_response": [("force_close", 1)],
        "field_removal": [("force_close", 10)],
        "type_change": [("force_close", 3)],
    },
    "table4": {
        "malformed_response": [("error_message", 14), ("silent_failure", 34)],
        "empty_response": [("error_message", 11), ("silent_failure", 37)],
        "field_removal": [("error_message", 6), ("silent_failure", 42)],
        "type_change": [("error_message", 5), ("silent_failure", 43)],
    },
    "table5": {
        "malformed_response": [("graceful_timeout", 40), ("indefinite_loading", 8)],
        "empty_response": [("graceful_timeout", 39), ("indefinite_loading", 9)],
    },
}

TARGET_PATHS = {"field_removal": ["/items/0/title"], "type_change": ["/items/0/id"]}

CACHING = ["none", "time_based", "hash_based", "session_scoped", "unknown"]


def spec(kind, level=0):
    return {
        "kind": kind,
        "targets": TARGET_PATHS.get(kind, []),
        "escalation_level": level,
        "added_count": 1,
        "status_override": None,
        "seed": 0,
    }


def exchange(eid, target, rule_id, mutation, body):
    return {
        "type": "exchange",
        "id": eid,
        "wall_ms": 1700000000000 + eid * 1000,
        "mono_ns": eid * 1_000_000_000,
        "request": {
            "method": "GET",
            "url": f"http://{target}/api/items",
            "version": "HTTP/1.1",
            "headers": [["Host", target]],
            "body": "",
        },
        "response": {
            "status": 200,
            "reason": "OK",
            "version": "HTTP/1.1",
            "headers": [["Content-Type", "application/json"], ["Content-Length", str(len(body))]],
            "body": body,
        },
        "origin": "mutated_local" if mutation else "upstream",
        "rule_id": rule_id,
        "mutation": mutation,
        "client_aborted": False,
    }


def observation(eid, target, mutation, behavior, note=""):
    return {
        "type": "observation",
        "exchange_id": eid,
        "target_name": target,
        "mutation": mutation,
        "behavior": behavior,
        "note": note,
        "auto_signals": {"retry_count": 0, "seconds_to_next_request": None, "client_aborted": False},
    }


def build(name, table, seed):
    rng = random.Random(seed)
    records = [{"type": "header", "format_version": 1}]
    observations = []
    eid = 0
    baseline = '{"items":[{"id":1,"title":"a"}]}'
    for t_index, target in enumerate(TARGETS, start=1):
        eid += 1
        records.append(exchange(eid, target, t_index, None, baseline))
    rules = {}
    for kind, groups in table.items():
        behaviors = []
        for behavior, count in groups:
            behaviors += [behavior] * count
        behaviors += ["normal_load"] * (len(TARGETS) - len(behaviors))
        rng.shuffle(behaviors)
        escalate_left = 4 if (kind == "field_removal" and name == "table3") else 0
        for t_index, (target, behavior) in enumerate(zip(TARGETS, behaviors), start=1):
            rules[t_index] = target
            if behavior == "force_close" and escalate_left:
                # A milder reaction first, then a crash one escalation level up.
                escalate_left -= 1
                eid += 1
                m = spec(kind, 1)
                records.append(exchange(eid, target, t_index, m, "{}"))
                observations.append(observation(eid, target, m, "error_message", "first removal"))
                eid += 1
                m = spec(kind, 2)
                records.append(exchange(eid, target, t_index, m, "{}"))
                observations.append(observation(eid, target, m, "force_close", "escalated removal"))
                continue
            eid += 1
            m = spec(kind)
            records.append(exchange(eid, target, t_index, m, "" if kind == "empty_response" else "{}"))
            observations.append(observation(eid, target, m, behavior))
    for t_index, target in sorted(rules.items()):
        records.append({
            "type": "rule",
            "rule_id": t_index,
            "target_name": target,
            "matcher": {"host": target, "path": "/api/items", "include_query_keys": {}, "method": None},
            "baseline_id": t_index,
            "spec": None,
            "enabled": False,
            "mode": "pass_through",
            "rewrite_after_capture": False,
            "forward_and_discard": False,
            "marker": None,
        })
    records += observations
    for t_index, target in enumerate(TARGETS, start=1):
        versioning = {"scheme": "url_path", "token": "v1"} if t_index % 3 == 0 else {"scheme": "none_detected", "token": ""}
        records.append({
            "type": "profile",
            "target_name": target,
            "caching": CACHING[t_index % len(CACHING)],
            "versioning": versioning,
            "notes": "",
        })
    with open(f"{name}.jsonl", "w", encoding="utf-8", newline="\n") as out:
        for r in records:
            out.write(json.dumps(r, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    for seed, (name, table) in enumerate(TABLES.items(), start=1):
        build(name, table, seed)
