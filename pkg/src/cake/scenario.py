"""End-to-end scenario harness: actors, documents, and an access matrix.

A scenario script names the actors with their certified attributes and the
documents to exchange, each with a sender, an access policy, and a payload.
Running it provisions a fresh deployment, certifies every actor through the
user directory, stores every document through the data manager (as its
sender), then has every actor request a key and attempt to read every
document. The realized access matrix, the notarized ids and locators, and
the chain verification result land in the report.

With a seeded run the whole exchange is reproducible: identical seeds give
byte-identical ledgers and identical message ids and locators.

The built-in ``brie_script()`` models the import-export exchange the
project was driven by: an Economic Operator, a Courier, and Customs trading
four documents under per-document policies bound to process instance 29837.

Script file format (see ``parse_script``)::

    [scenario]
    instance_attribute = 29837

    [actor courier]
    attributes = 29837 courier

    [document transport_order]
    sender = economic_operator
    policy = (29837 and ((economic_operator) or (courier)))
    payload = Transport order: pick up at warehouse 12.
    expect = economic_operator:allow courier:allow customs:deny
"""

from __future__ import annotations

import configparser
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from . import abe, cas, ledger
from . import policy as policy_mod
from . import protocol
from .errors import CakeError

# Fixed certification timestamp so seeded runs are byte-reproducible.
SCENARIO_EPOCH = 1_700_000_000


class ScenarioError(CakeError):
    """A scenario step failed; the message names the step."""

    def __init__(self, step: str, message: str) -> None:
        super().__init__(f"[{step}] {message}")
        self.step = step


@dataclass(frozen=True)
class ScenarioDocument:
    name: str
    sender: str
    policy: str
    payload: bytes


@dataclass(frozen=True)
class ScenarioScript:
    actors: tuple[tuple[str, frozenset[str]], ...]
    documents: tuple[ScenarioDocument, ...]
    expected_access: dict[tuple[str, str], bool]  # (document, actor) -> allow
    instance_attribute: Optional[str] = None

    def validate(self) -> None:
        actor_names = [name for name, _ in self.actors]
        if len(set(actor_names)) != len(actor_names):
            raise ScenarioError("validate", "duplicate actor name")
        doc_names = [d.name for d in self.documents]
        if len(set(doc_names)) != len(doc_names):
            raise ScenarioError("validate", "duplicate document name")
        held = frozenset().union(*(attrs for _, attrs in self.actors)) \
            if self.actors else frozenset()
        for doc in self.documents:
            if doc.sender not in actor_names:
                raise ScenarioError("validate",
                                    f"document {doc.name} sender {doc.sender!r} "
                                    "is not an actor")
            try:
                mentioned = policy_mod.attributes_of(policy_mod.parse_policy(doc.policy))
            except policy_mod.PolicyError as exc:
                raise ScenarioError("validate",
                                    f"document {doc.name} policy: {exc}")
            stray = mentioned - held - {self.instance_attribute}
            if stray:
                raise ScenarioError("validate",
                                    f"document {doc.name} policy mentions "
                                    f"attributes no actor holds: {sorted(stray)}")
        expected_cells = {(d, a) for d in doc_names for a in actor_names}
        if set(self.expected_access) != expected_cells:
            raise ScenarioError("validate",
                                "expected_access must cover documents x actors")


@dataclass
class ScenarioReport:
    matrix: dict[str, dict[str, bool]]
    expected: dict[str, dict[str, bool]]
    message_ids: dict[str, str]  # document -> hex id
    locators: dict[str, str]
    ledger_height: int
    chain_ok: bool
    ledger_bytes: bytes = field(repr=False)

    @property
    def matrix_ok(self) -> bool:
        return self.matrix == self.expected

    def mismatches(self) -> list[tuple[str, str]]:
        return [(doc, actor)
                for doc, row in self.expected.items()
                for actor, want in row.items()
                if self.matrix[doc][actor] != want]

    def format_table(self) -> str:
        actors = list(next(iter(self.matrix.values()), {}))
        width = max([len("document")] + [len(d) for d in self.matrix])
        lines = ["  ".join(["document".ljust(width)] + actors)]
        for doc, row in self.matrix.items():
            cells = [("allow" if row[a] else "deny").ljust(len(a)) for a in actors]
            lines.append("  ".join([doc.ljust(width)] + cells))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "matrix": self.matrix,
            "expected": self.expected,
            "matrix_ok": self.matrix_ok,
            "message_ids": self.message_ids,
            "locators": self.locators,
            "ledger_height": self.ledger_height,
            "chain_ok": self.chain_ok,
        }, indent=2, sort_keys=True)


def brie_script() -> ScenarioScript:
    """The import-export exchange: three actors, four documents."""
    instance = "29837"
    actors = (
        ("economic_operator", frozenset({instance, "economic_operator"})),
        ("courier", frozenset({instance, "courier"})),
        ("customs", frozenset({instance, "customs"})),
    )
    documents = (
        ScenarioDocument(
            "transport_order", "economic_operator",
            "(29837 and ((economic_operator) or (courier)))",
            b"Transport order: collect consignment 29837 at warehouse 12.",
        ),
        ScenarioDocument(
            "import_declaration", "economic_operator",
            "(29837 and ((economic_operator) or (customs)))",
            b"Import declaration: goods, destination country, buyer, courier.",
        ),
        ScenarioDocument(
            "declaration_of_conformity", "customs",
            "(29837 and ((customs) or (economic_operator) or (courier)))",
            b"Declaration of conformity: import declaration 29837 verified.",
        ),
        ScenarioDocument(
            "transport_document", "economic_operator",
            "(29837 and ((economic_operator) or (customs) or (courier)))",
            b"Transport document: mode, courier, collection and delivery data.",
        ),
    )
    allow = {
        "transport_order": {"economic_operator", "courier"},
        "import_declaration": {"economic_operator", "customs"},
        "declaration_of_conformity": {"economic_operator", "courier", "customs"},
        "transport_document": {"economic_operator", "courier", "customs"},
    }
    expected = {(doc.name, actor): actor in allow[doc.name]
                for doc in documents for actor, _ in actors}
    return ScenarioScript(actors, documents, expected, instance)


def run_scenario(script: ScenarioScript, seed: Optional[int] = None,
                 store: Optional[cas.BlobStore] = None) -> ScenarioReport:
    """Drive the full exchange and report the realized access matrix."""
    script.validate()
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    deployment = protocol.provision(rng, store, clock=lambda: SCENARIO_EPOCH)

    identities: dict[str, protocol.Identity] = {}
    for name, _ in script.actors:
        identities[name] = protocol.Identity.generate(rng)
        deployment.register(identities[name])

    def step(label: str, fn):
        try:
            return fn()
        except CakeError as exc:
            raise ScenarioError(label, str(exc)) from exc

    ud_client = step("certify/connect", lambda: deployment.connect_ud(
        deployment.certifier, rng))
    for name, attrs in script.actors:
        step(f"certify/{name}", lambda n=name, a=attrs: ud_client.certify(
            identities[n].address, a))
    ud_client.close()

    message_ids: dict[str, str] = {}
    locators: dict[str, str] = {}
    raw_ids: dict[str, bytes] = {}
    for doc in script.documents:
        sdm_client = step(f"store/{doc.name}/connect", lambda d=doc:
                          deployment.connect_sdm(identities[d.sender], rng))
        message_id, locator = step(f"store/{doc.name}", lambda d=doc, c=sdm_client:
                                   c.store([(d.name, d.policy, d.payload)]))
        sdm_client.close()
        raw_ids[doc.name] = message_id
        message_ids[doc.name] = message_id.hex()
        locators[doc.name] = locator

    matrix: dict[str, dict[str, bool]] = {doc.name: {} for doc in script.documents}
    for name, _ in script.actors:
        skm_client = step(f"key/{name}/connect", lambda n=name:
                          deployment.connect_skm(identities[n], rng))
        user_key = step(f"key/{name}", skm_client.request_key)
        skm_client.close()
        for doc in script.documents:
            def attempt(d=doc, k=user_key):
                results = protocol.client_read(
                    deployment.chain, deployment.store, raw_ids[d.name], k)
                return all(body is not None for _, body in results)
            matrix[doc.name][name] = step(f"read/{doc.name}/{name}", attempt)

    expected = {doc.name: {actor: script.expected_access[(doc.name, actor)]
                           for actor, _ in script.actors}
                for doc in script.documents}
    return ScenarioReport(
        matrix=matrix,
        expected=expected,
        message_ids=message_ids,
        locators=locators,
        ledger_height=deployment.chain.height,
        chain_ok=bool(deployment.chain.verify()),
        ledger_bytes=deployment.chain.serialize(),
    )


# --- script files ----------------------------------------------------------------

def parse_script(text: str) -> ScenarioScript:
    """Parse the declarative scenario file format shown in the module docs."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError("parse", f"bad script file: {exc}")

    instance: Optional[str] = None
    actors: list[tuple[str, frozenset[str]]] = []
    documents: list[ScenarioDocument] = []
    expectations: dict[str, dict[str, bool]] = {}

    for section in parser.sections():
        body = parser[section]
        if section == "scenario":
            instance = body.get("instance_attribute") or None
            continue
        kind, _, name = section.partition(" ")
        name = name.strip()
        if kind == "actor" and name:
            attrs = frozenset(body.get("attributes", "").split())
            if not attrs:
                raise ScenarioError("parse", f"actor {name} has no attributes")
            actors.append((name, attrs))
        elif kind == "document" and name:
            for key in ("sender", "policy", "payload", "expect"):
                if key not in body:
                    raise ScenarioError("parse", f"document {name} misses {key!r}")
            documents.append(ScenarioDocument(
                name, body["sender"].strip(), body["policy"].strip(),
                body["payload"].strip().encode("utf-8")))
            expectations[name] = _parse_expectations(name, body["expect"])
        else:
            raise ScenarioError("parse", f"unknown section [{section}]")

    expected_access = {(doc, actor): allowed
                       for doc, row in expectations.items()
                       for actor, allowed in row.items()}
    script = ScenarioScript(tuple(actors), tuple(documents), expected_access, instance)
    script.validate()
    return script


def _parse_expectations(doc: str, text: str) -> dict[str, bool]:
    row: dict[str, bool] = {}
    for pair in text.split():
        actor, _, verdict = pair.partition(":")
        if verdict not in ("allow", "deny"):
            raise ScenarioError(
                "parse", f"document {doc}: expectation {pair!r} is not "
                "actor:allow or actor:deny")
        row[actor] = verdict == "allow"
    return row
