"""Feature grammars, model composition, and whole-run decoding.

A grammar is a directed graph whose nodes name per-feature models.
Composition merges those models into one block-structured model: within
a block the source parameters are kept; between blocks, mass leaves a
node's last state toward the first state of each successor, scaled by
the edge probability.  Cross-boundary steps carry no second-order
context, the row for a boundary transition is the same for every
predecessor state, and the first step after entering a block follows the
block's own first-step row.  The exit state's leftover self-loop mass is
a composition parameter, since a standalone model's final state is
purely absorbing and carries no trained signal about when to leave.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import GrammarError, ValidationError
from .inference import viterbi_decode
from .model import Hmm2Model, ObservationSequence
from .training import TrainingConfig, accumulate_corpus

DEFAULT_EXIT_SELF_LOOP = 0.5


class Segment(NamedTuple):
    """A labeled frame range; end is exclusive."""

    label: str
    start: int
    end: int


@dataclass(frozen=True)
class FeatureSequence:
    """Ordered feature segments covering one run, with the decode score."""

    segments: tuple
    log_joint: float

    def __post_init__(self):
        segments = tuple(Segment(*s) for s in self.segments)
        if not segments:
            raise ValidationError("a feature sequence needs at least one segment")
        if segments[0].start != 0:
            raise ValidationError("segments must start at frame 0")
        for prev, cur in zip(segments, segments[1:]):
            if cur.start != prev.end:
                raise ValidationError("segments must be contiguous")
        for seg in segments:
            if seg.end <= seg.start:
                raise ValidationError("segments must be nonempty")
        object.__setattr__(self, "segments", segments)

    @property
    def num_frames(self) -> int:
        return self.segments[-1].end

    @property
    def labels(self) -> tuple:
        return tuple(seg.label for seg in self.segments)


@dataclass(frozen=True)
class Grammar:
    """Validated node/edge graph over named feature models.

    nodes maps each node name to its model reference (a file name, or
    None when models are resolved elsewhere).  Edge probabilities out of
    each node sum to 1, as do the start probabilities, and every end
    node is reachable from some start node.
    """

    nodes: dict
    edges: tuple
    start_probs: dict
    end_nodes: tuple

    def __post_init__(self):
        nodes = dict(self.nodes)
        edges = tuple((str(a), str(b), float(p)) for a, b, p in self.edges)
        starts = {str(k): float(v) for k, v in self.start_probs.items()}
        ends = tuple(dict.fromkeys(str(e) for e in self.end_nodes))
        if not nodes:
            raise GrammarError("grammar has no nodes")
        for a, b, p in edges:
            for name in (a, b):
                if name not in nodes:
                    raise GrammarError(f"edge references undeclared node {name!r}")
            if p < 0.0:
                raise GrammarError(f"edge {a}->{b} has negative probability")
        seen_pairs = set()
        for a, b, _ in edges:
            if (a, b) in seen_pairs:
                raise GrammarError(f"duplicate edge {a}->{b}")
            seen_pairs.add((a, b))
        if not starts:
            raise GrammarError("grammar needs at least one start node")
        if not ends:
            raise GrammarError("grammar needs at least one end node")
        for name in list(starts) + list(ends):
            if name not in nodes:
                raise GrammarError(f"start/end references undeclared node {name!r}")
        total = sum(starts.values())
        if abs(total - 1.0) > 1e-9:
            raise GrammarError(f"start probabilities sum to {total:.12g}, expected 1")
        for name in nodes:
            out = [p for a, _, p in edges if a == name]
            if out and abs(sum(out) - 1.0) > 1e-9:
                raise GrammarError(
                    f"outgoing probabilities of {name!r} sum to {sum(out):.12g}, "
                    "expected 1"
                )
        reachable = set(starts)
        frontier = list(starts)
        outgoing = {}
        for a, b, _ in edges:
            outgoing.setdefault(a, []).append(b)
        while frontier:
            node = frontier.pop()
            for nxt in outgoing.get(node, []):
                if nxt not in reachable:
                    reachable.add(nxt)
                    frontier.append(nxt)
        for end in ends:
            if end not in reachable:
                raise GrammarError(f"end node {end!r} is unreachable from the starts")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "start_probs", starts)
        object.__setattr__(self, "end_nodes", ends)

    def outgoing(self, name: str) -> tuple:
        return tuple((b, p) for a, b, p in self.edges if a == name)

    def with_edge_probs(self, probs: dict) -> "Grammar":
        """Copy of this grammar with edge probabilities replaced by (from, to) key."""
        edges = tuple((a, b, probs.get((a, b), p)) for a, b, p in self.edges)
        return Grammar(
            nodes=self.nodes,
            edges=edges,
            start_probs=self.start_probs,
            end_nodes=self.end_nodes,
        )


def parse_grammar(text: str) -> Grammar:
    """Parse the line-oriented grammar format.

    Lines: `NODE <name> [model-file]`, `START <name> [prob]`,
    `END <name>`, `EDGE <from> <to> [prob]`, `#` comments.  Omitted
    probabilities spread uniformly; mixing explicit and omitted values
    within one node's edges, or among the starts, is rejected.
    """
    nodes = {}
    edges = []
    starts = {}
    ends = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        keyword = parts[0].upper()
        if keyword == "NODE":
            if len(parts) not in (2, 3):
                raise GrammarError(f"line {lineno}: NODE takes a name and optional file")
            name = parts[1]
            if name in nodes:
                raise GrammarError(f"line {lineno}: duplicate node {name!r}")
            nodes[name] = parts[2] if len(parts) == 3 else None
        elif keyword == "START":
            if len(parts) not in (2, 3):
                raise GrammarError(f"line {lineno}: START takes a name and optional prob")
            starts[parts[1]] = _parse_prob(parts, 2, lineno)
        elif keyword == "END":
            if len(parts) != 2:
                raise GrammarError(f"line {lineno}: END takes exactly one name")
            ends.append(parts[1])
        elif keyword == "EDGE":
            if len(parts) not in (3, 4):
                raise GrammarError(
                    f"line {lineno}: EDGE takes from, to, and optional prob"
                )
            edges.append((parts[1], parts[2], _parse_prob(parts, 3, lineno)))
        else:
            raise GrammarError(f"line {lineno}: unknown directive {parts[0]!r}")
    starts = _fill_uniform(starts, "start probabilities")
    by_node = {}
    for a, b, p in edges:
        by_node.setdefault(a, []).append((b, p))
    resolved_edges = []
    for a, out in by_node.items():
        filled = _fill_uniform(dict(out), f"edges out of {a!r}")
        for b, _ in out:
            resolved_edges.append((a, b, filled[b]))
    return Grammar(
        nodes=nodes, edges=tuple(resolved_edges), start_probs=starts, end_nodes=tuple(ends)
    )


def _parse_prob(parts, index, lineno):
    if len(parts) <= index:
        return None
    try:
        return float(parts[index])
    except ValueError as exc:
        raise GrammarError(f"line {lineno}: bad probability {parts[index]!r}") from exc


def _fill_uniform(values: dict, what: str) -> dict:
    missing = [k for k, v in values.items() if v is None]
    if not missing:
        return values
    if len(missing) != len(values):
        raise GrammarError(f"{what} mix explicit and omitted values")
    share = 1.0 / len(values)
    return {k: share for k in values}


def format_grammar(grammar: Grammar) -> str:
    """Render a grammar back into its document form, stable ordering."""
    lines = []
    for name, ref in grammar.nodes.items():
        lines.append(f"NODE {name} {ref}" if ref else f"NODE {name}")
    for name, prob in grammar.start_probs.items():
        lines.append(f"START {name} {prob!r}")
    for name in grammar.end_nodes:
        lines.append(f"END {name}")
    for a, b, p in grammar.edges:
        lines.append(f"EDGE {a} {b} {p!r}")
    return "\n".join(lines) + "\n"


def grammar_to_doc(grammar: Grammar) -> dict:
    return {
        "nodes": dict(grammar.nodes),
        "start": dict(grammar.start_probs),
        "end": list(grammar.end_nodes),
        "edges": [[a, b, p] for a, b, p in grammar.edges],
    }


def grammar_from_doc(doc: dict) -> Grammar:
    try:
        nodes = doc.get("nodes")
        if nodes is None:
            names = set(doc["start"]) | set(doc["end"])
            for a, b, _ in doc["edges"]:
                names.add(a)
                names.add(b)
            nodes = {name: None for name in sorted(names)}
        return Grammar(
            nodes=nodes,
            edges=tuple(tuple(e) for e in doc["edges"]),
            start_probs=dict(doc["start"]),
            end_nodes=tuple(doc["end"]),
        )
    except (KeyError, TypeError) as exc:
        raise GrammarError(f"malformed grammar document: {exc}") from exc


@dataclass(frozen=True)
class CompositeModel:
    """One merged model over all grammar nodes.

    state_to_feature maps each global state to (node name, local state);
    offsets maps each node name to its first global state index.  The
    unmodified per-node models are kept so recomposition with new edge
    weights never has to reverse the boundary rewrites.
    """

    merged: Hmm2Model
    state_to_feature: tuple
    offsets: dict
    grammar: Grammar
    exit_self_loop: float
    source_models: dict

    def feature_of(self, state: int) -> str:
        return self.state_to_feature[state][0]


def compose(
    grammar: Grammar,
    models: dict,
    exit_self_loop: float = DEFAULT_EXIT_SELF_LOOP,
) -> CompositeModel:
    """Merge per-feature models into one decodable run model."""
    if not 0.0 < exit_self_loop < 1.0:
        raise ValidationError("exit_self_loop must lie strictly between 0 and 1")
    for name in grammar.nodes:
        if name not in models:
            raise GrammarError(f"no model provided for grammar node {name!r}")
    names = list(grammar.nodes)
    obs_dim = models[names[0]].obs_dim
    for name in names:
        if models[name].obs_dim != obs_dim:
            raise ValidationError(
                f"model {name!r} has obs_dim {models[name].obs_dim}, expected {obs_dim}"
            )
    offsets = {}
    total = 0
    for name in names:
        offsets[name] = total
        total += models[name].num_states

    mask = np.zeros((total, total, total), dtype=bool)
    tensor = np.zeros((total, total, total))
    first = np.zeros((total, total))
    initial = np.zeros(total)
    state_to_feature = []
    emissions = []

    for name in names:
        src = models[name]
        o = offsets[name]
        block = slice(o, o + src.num_states)
        mask[block, block, block] = src.topology_mask
        tensor[block, block, block] = src.transitions
        first[block, block] = src.first_transitions
        state_to_feature.extend((name, local) for local in range(src.num_states))
        emissions.extend(src.emissions)
        prob = grammar.start_probs.get(name, 0.0)
        if prob > 0.0:
            initial[block] = prob * src.initial

    for name in names:
        out = grammar.outgoing(name)
        if not out:
            continue
        # leaving is possible only from the block's last state; that state
        # is purely absorbing in the standalone model, so its row is
        # rebuilt here and shared by every predecessor state
        exit_state = offsets[name] + models[name].num_states - 1
        mask[:, exit_state, :] = False
        tensor[:, exit_state, :] = 0.0
        mask[:, exit_state, exit_state] = True
        tensor[:, exit_state, exit_state] = exit_self_loop
        first[exit_state, :] = 0.0
        first[exit_state, exit_state] = exit_self_loop
        for target, prob in out:
            entry = offsets[target]
            mass = (1.0 - exit_self_loop) * prob
            mask[:, exit_state, entry] = True
            tensor[:, exit_state, entry] = mass
            first[exit_state, entry] = mass

    for name in names:
        # the step after entering a block carries no cross-block context,
        # every outside predecessor shares the block's own first-step row
        dst = models[name]
        entry = offsets[name]
        n = dst.num_states
        entry_row = dst.first_transitions[0]
        entry_row_mask = dst.first_step_mask()[0]
        outside = np.ones(total, dtype=bool)
        outside[entry : entry + n] = False
        for i in np.nonzero(outside)[0]:
            mask[i, entry, entry : entry + n] = entry_row_mask
            tensor[i, entry, entry : entry + n] = entry_row

    final_states = []
    for name in grammar.end_nodes:
        o = offsets[name]
        final_states.extend(o + f for f in models[name].final_states)

    merged = Hmm2Model(
        num_states=total,
        initial=initial,
        first_transitions=first,
        transitions=tensor,
        emissions=tuple(emissions),
        topology_mask=mask,
        final_states=tuple(sorted(final_states)),
    )
    return CompositeModel(
        merged=merged,
        state_to_feature=tuple(state_to_feature),
        offsets=dict(offsets),
        grammar=grammar,
        exit_self_loop=exit_self_loop,
        source_models={name: models[name] for name in names},
    )


def decode_run(composite: CompositeModel, seq: ObservationSequence) -> FeatureSequence:
    """Viterbi-decode a run and collapse states into feature segments."""
    path = viterbi_decode(composite.merged, seq)
    labels = [composite.feature_of(int(s)) for s in path.states]
    segments = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            segments.append(Segment(labels[start], start, t))
            start = t
    return FeatureSequence(segments=tuple(segments), log_joint=path.log_joint)


def learn_grammar_weights(
    composite: CompositeModel, runs, config: TrainingConfig = None
) -> Grammar:
    """Re-estimate edge probabilities from whole unsegmented runs.

    All within-block parameters stay frozen; each iteration accumulates
    boundary-transition posteriors on the current composite and
    renormalizes them into fresh edge weights.  Edges never traversed
    keep a min_count floor so no legal path vanishes.
    """
    if config is None:
        config = TrainingConfig()
    runs = list(runs)
    if not runs:
        raise ValidationError("learn_grammar_weights needs at least one run")
    grammar = composite.grammar
    models = composite.source_models
    current = composite
    previous_ll = None
    for _ in range(config.max_iterations):
        stats = accumulate_corpus(current.merged, runs)
        boundary = stats.xi_sum + stats.xi_first_sum
        updates = {}
        for name in grammar.nodes:
            out = grammar.outgoing(name)
            if not out:
                continue
            src_model = models[name]
            exit_state = current.offsets[name] + src_model.num_states - 1
            counts = {}
            for target, _ in out:
                entry = current.offsets[target]
                counts[target] = max(boundary[exit_state, entry], config.min_count)
            total = sum(counts.values())
            for target, _ in out:
                updates[(name, target)] = counts[target] / total
        grammar = grammar.with_edge_probs(updates)
        current = compose(grammar, models, current.exit_self_loop)
        ll = stats.total_log_likelihood
        if previous_ll is not None:
            if ll - previous_ll < config.rel_ll_tolerance * max(abs(previous_ll), 1.0):
                break
        previous_ll = ll
    return grammar
