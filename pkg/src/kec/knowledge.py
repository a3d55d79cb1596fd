"""Hierarchical concept-attribute knowledge construction.

Pipeline: fuse visual/textual centroid similarities, threshold the fused
matrix into an adjacency graph, merge clusters through connected components,
abstract each merged noun set into a named concept via the LLM, then mine
per-concept and per-similar-pair attributes.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .errors import InvariantError, LLMError, LLMParseError
from .llmclient import PromptRequest
from .tensorio import EmbeddingMatrix


@dataclass
class ConceptMergeGraph:
    r_vis: np.ndarray
    r_text: np.ndarray
    r_fused: np.ndarray
    alpha: float
    merge_threshold: float = 0.8
    adjacency: np.ndarray = None
    components: list = None


@dataclass
class Concept:
    id: int
    member_clusters: list
    merged_nouns: list
    name: str = ""
    description: str = ""
    name_emb: np.ndarray = None
    desc_emb: np.ndarray = None


@dataclass
class AttributeRecord:
    text: str
    kind: str  # "uni" | "bi"
    owner_concepts: tuple  # (id,) for uni, (id_a, id_b) sorted for bi
    embedding: np.ndarray = None


@dataclass
class NeighborSelection:
    concept_id: int
    normalized_sims: dict  # other concept id -> softmax mass
    neighbor_ids: list
    cumulative_threshold: float
    max_neighbors: int


@dataclass
class KnowledgeBase:
    concepts: list
    attributes: list
    neighbor_pairs: list  # sorted (a, b) tuples
    config: dict = field(default_factory=dict)
    provenance: list = field(default_factory=list)

    @property
    def num_concepts(self):
        return len(self.concepts)

    def attributes_for(self, concept_id):
        """A_q: uni records of q plus every bi record whose pair touches q."""
        out = []
        for record in self.attributes:
            if concept_id in record.owner_concepts:
                out.append(record)
        return out

    def to_json_dict(self):
        return {
            "config": self.config,
            "concepts": [
                {
                    "id": c.id,
                    "member_clusters": list(c.member_clusters),
                    "merged_nouns": list(c.merged_nouns),
                    "name": c.name,
                    "description": c.description,
                    "name_emb": _vec_list(c.name_emb),
                    "desc_emb": _vec_list(c.desc_emb),
                }
                for c in self.concepts
            ],
            "attributes": [
                {
                    "text": a.text,
                    "kind": a.kind,
                    "owners": list(a.owner_concepts),
                    "embedding": _vec_list(a.embedding),
                }
                for a in self.attributes
            ],
            "neighbor_pairs": [list(p) for p in self.neighbor_pairs],
            "provenance": self.provenance,
        }

    def dumps(self):
        return json.dumps(self.to_json_dict(), ensure_ascii=False, indent=1)

    @classmethod
    def from_json_dict(cls, data):
        concepts = [
            Concept(
                id=c["id"],
                member_clusters=list(c["member_clusters"]),
                merged_nouns=list(c["merged_nouns"]),
                name=c["name"],
                description=c["description"],
                name_emb=_vec_array(c["name_emb"]),
                desc_emb=_vec_array(c["desc_emb"]),
            )
            for c in data["concepts"]
        ]
        attributes = [
            AttributeRecord(
                text=a["text"],
                kind=a["kind"],
                owner_concepts=tuple(a["owners"]),
                embedding=_vec_array(a["embedding"]),
            )
            for a in data["attributes"]
        ]
        kb = cls(
            concepts=concepts,
            attributes=attributes,
            neighbor_pairs=[tuple(p) for p in data["neighbor_pairs"]],
            config=data.get("config", {}),
            provenance=data.get("provenance", []),
        )
        kb.validate()
        return kb

    @classmethod
    def loads(cls, text):
        return cls.from_json_dict(json.loads(text))

    def validate(self):
        if not self.concepts:
            raise InvariantError("knowledge base has no concepts")
        ids = {c.id for c in self.concepts}
        for record in self.attributes:
            for owner in record.owner_concepts:
                if owner not in ids:
                    raise InvariantError(
                        f"attribute {record.text!r} references missing "
                        f"concept {owner}"
                    )
        return self


def _vec_list(vec):
    if vec is None:
        return None
    return [float(v) for v in np.asarray(vec).ravel()]


def _vec_array(values):
    if values is None:
        return None
    return np.asarray(values, dtype=np.float32)


def fuse_similarity(mapping, alpha):
    """Weighted blend of visual and textual centroid cosine matrices."""
    if not 0.0 <= alpha <= 1.0:
        raise InvariantError(f"alpha must be in [0, 1], got {alpha}")
    mu = np.asarray(mapping.centroids.values, dtype=np.float64)
    nu = np.asarray(mapping.text_centroids.values, dtype=np.float64)
    r_vis = mu @ mu.T
    r_text = nu @ nu.T
    for r in (r_vis, r_text):
        np.fill_diagonal(r, 1.0)
        r += r.T
        r *= 0.5
    r_fused = alpha * r_vis + (1.0 - alpha) * r_text
    return ConceptMergeGraph(
        r_vis=r_vis, r_text=r_text, r_fused=r_fused, alpha=alpha
    )


def merge_clusters(graph, merge_threshold):
    """Threshold the fused matrix and take connected components (DFS).

    Components are ordered by their smallest member cluster id.
    """
    r = graph.r_fused
    k = r.shape[0]
    adjacency = (r > merge_threshold)
    np.fill_diagonal(adjacency, False)
    visited = np.zeros(k, dtype=bool)
    components = []
    for start in range(k):
        if visited[start]:
            continue
        stack = [start]
        visited[start] = True
        comp = []
        while stack:
            node = stack.pop()
            comp.append(node)
            for nb in np.flatnonzero(adjacency[node]):
                if not visited[nb]:
                    visited[nb] = True
                    stack.append(int(nb))
        components.append(sorted(comp))
    components.sort(key=lambda c: c[0])
    graph.adjacency = adjacency
    graph.merge_threshold = merge_threshold
    graph.components = components
    return components


def merged_noun_set(mapping, component):
    """Union of member clusters' nouns, deduped case-insensitively, sorted."""
    nouns = []
    for p in component:
        nouns.extend(mapping.noun_sets[p])
    seen = set()
    out = []
    for noun in sorted(nouns, key=lambda s: (s.lower(), s)):
        key = noun.lower()
        if key not in seen:
            seen.add(key)
            out.append(noun)
    return out


def abstract_concepts(components, mapping, client, model="gpt-4o",
                      temperature=0.1, domain_hint=None, provenance=None):
    """One LLM call per merged component -> named concept + description."""
    requests = []
    concepts = []
    for cid, component in enumerate(components):
        nouns = merged_noun_set(mapping, component)
        if not nouns:
            raise InvariantError(f"component {cid} has no nouns")
        concepts.append(
            Concept(id=cid, member_clusters=list(component), merged_nouns=nouns)
        )
        requests.append(
            PromptRequest(
                template_id=prompts.TEMPLATE_CONCEPT,
                rendered_prompt=prompts.render_concept_prompt(
                    nouns, domain_hint
                ),
                model=model,
                temperature=temperature,
            )
        )
    responses = client.complete_batch(requests)
    for concept, request, response in zip(concepts, requests, responses):
        try:
            name, description = prompts.parse_concept_response(response.text)
        except LLMParseError as exc:
            raise LLMError(
                f"concept parse failed for component {concept.id}: {exc}"
            ) from exc
        concept.name = name
        concept.description = description
        if provenance is not None:
            provenance.append(
                {"template": request.template_id, "hash": request.cache_key()}
            )
    return concepts


def embed_concepts(concepts, embedder):
    """Attach unit-norm name/description embeddings from the provider."""
    for concept in concepts:
        concept.name_emb = _unit(embedder.embed(concept.name))
        concept.desc_emb = _unit(embedder.embed(concept.description))
    return concepts


def _unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise InvariantError("zero embedding vector")
    return (vec / norm).astype(np.float32)


def mine_uni_attributes(concepts, client, lambda1=2, model="gpt-4o",
                        temperature=0.1, domain_hint=None, provenance=None):
    """Exactly lambda1 distinguishing attributes per concept."""
    if lambda1 < 1:
        raise InvariantError("lambda1 must be >= 1")
    requests = [
        PromptRequest(
            template_id=prompts.TEMPLATE_UNI_ATTR,
            rendered_prompt=prompts.render_uni_attr_prompt(
                c.name, lambda1, domain_hint
            ),
            model=model,
            temperature=temperature,
        )
        for c in concepts
    ]
    responses = client.complete_batch(requests)
    records = []
    for concept, request, response in zip(concepts, requests, responses):
        texts = prompts.parse_attribute_response(response.text, lambda1)
        for text in texts:
            records.append(
                AttributeRecord(
                    text=text, kind="uni", owner_concepts=(concept.id,)
                )
            )
        if provenance is not None:
            provenance.append(
                {"template": request.template_id, "hash": request.cache_key()}
            )
    return records


def select_neighbors(concepts, cumulative_threshold=0.8, max_neighbors=10):
    """Similar-concept selection via softmax over name-embedding dots.

    Neighbors are the shortest descending-sorted prefix whose cumulative
    softmax mass reaches the threshold (inclusive), capped at max_neighbors.
    With fewer than two concepts no bi-attributes are possible and the
    selection list is empty.
    """
    m = len(concepts)
    if m < 2:
        return []
    phis = np.stack(
        [np.asarray(c.name_emb, dtype=np.float64) for c in concepts]
    )
    sims = phis @ phis.T
    selections = []
    for qi, concept in enumerate(concepts):
        others = [i for i in range(m) if i != qi]
        logits = sims[qi, others]
        shifted = np.exp(logits - logits.max())
        probs = shifted / shifted.sum()
        # sort descending; ties broken toward the lower concept id
        order = sorted(
            range(len(others)), key=lambda i: (-probs[i], concepts[others[i]].id)
        )
        cap = len(others) if max_neighbors is None else min(
            max_neighbors, len(others)
        )
        cum = 0.0
        chosen = []
        for rank in order:
            if len(chosen) >= cap:
                break
            cum += probs[rank]
            chosen.append(concepts[others[rank]].id)
            if cum >= cumulative_threshold:
                break
        selections.append(
            NeighborSelection(
                concept_id=concept.id,
                normalized_sims={
                    concepts[others[i]].id: float(probs[i])
                    for i in range(len(others))
                },
                neighbor_ids=chosen,
                cumulative_threshold=cumulative_threshold,
                max_neighbors=cap,
            )
        )
    return selections


def neighbor_pairs(selections):
    """Globally deduplicated unordered pairs, sorted for determinism."""
    pairs = set()
    for sel in selections:
        for other in sel.neighbor_ids:
            pairs.add(tuple(sorted((sel.concept_id, other))))
    return sorted(pairs)


def mine_bi_attributes(selections, concepts, client, lambda2=1,
                       model="gpt-4o", temperature=0.1, domain_hint=None,
                       provenance=None):
    """lambda2 contrastive attributes per deduplicated concept pair."""
    if lambda2 < 1:
        raise InvariantError("lambda2 must be >= 1")
    by_id = {c.id: c for c in concepts}
    pairs = neighbor_pairs(selections)
    requests = [
        PromptRequest(
            template_id=prompts.TEMPLATE_BI_ATTR,
            rendered_prompt=prompts.render_bi_attr_prompt(
                by_id[a].name, by_id[b].name, lambda2, domain_hint
            ),
            model=model,
            temperature=temperature,
        )
        for a, b in pairs
    ]
    responses = client.complete_batch(requests)
    records = []
    for (a, b), request, response in zip(pairs, requests, responses):
        texts = prompts.parse_attribute_response(response.text, lambda2)
        for text in texts:
            records.append(
                AttributeRecord(text=text, kind="bi", owner_concepts=(a, b))
            )
        if provenance is not None:
            provenance.append(
                {"template": request.template_id, "hash": request.cache_key()}
            )
    return records, pairs


def embed_attributes(records, embedder):
    for record in records:
        record.embedding = _unit(embedder.embed(record.text))
    return records


def assemble_knowledge_base(concepts, uni_records, bi_records, pairs,
                            config=None, provenance=None):
    kb = KnowledgeBase(
        concepts=concepts,
        attributes=list(uni_records) + list(bi_records),
        neighbor_pairs=list(pairs),
        config=dict(config or {}),
        provenance=list(provenance or []),
    )
    return kb.validate()
