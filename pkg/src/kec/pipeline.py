"""Stage orchestration: configuration, persistence, manifests, resume.

Stages (map -> concepts -> attributes -> ground -> cluster -> eval) each
read persisted artifacts from the previous stage and write their own
atomically, so any stage can be rerun from disk. A run manifest records the
config snapshot, stage timings, LLM call counts, and content hashes of all
inputs and outputs.
"""

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evalmetrics, grounding, kmeans, knowledge, mapping, tensorio
from .embedders import HashEmbedder, SidecarEmbedder
from .errors import (
    InvariantError,
    MissingPrerequisiteError,
    StageError,
)
from .llmclient import (
    BackendConfig,
    HTTPBackend,
    LLMClient,
    MockBackend,
)
from .tensorio import EmbeddingMatrix

STAGES = ("map", "concepts", "attributes", "ground", "cluster", "eval")

MAPPING_FILE = "mapping.json"
CONCEPTS_FILE = "concepts.json"
KNOWLEDGE_FILE = "knowledge.json"
KAPPA_FILE = "kappa.kec"
CONCAT_FILE = "concat.kec"
PRED_FILE = "pred_labels.txt"
EVAL_FILE = "eval.json"
MANIFEST_FILE = "manifest.json"
STRINGS_FILE = "llm_strings.txt"


@dataclass
class PipelineConfig:
    image_embeddings: str = ""
    noun_embeddings: str = ""
    noun_list: str = ""
    labels: str = ""
    sidecar_strings: str = ""
    sidecar_embeddings: str = ""
    output_dir: str = ""
    ratio: int = 300
    top_k: int = 5
    alpha: float = 0.8
    merge_threshold: float = 0.8
    neighbor_cumulative_threshold: float = 0.8
    max_neighbors: int = 10
    lambda1: int = 2
    lambda2: int = 1
    tau: float = 1.0
    renormalize_kappa: bool = True
    seed: int = 0
    use_concept_name: bool = True
    use_description: bool = True
    use_uni_attr: bool = True
    use_bi_attr: bool = True
    llm_model: str = "gpt-4o"
    llm_temperature: float = 0.1
    llm_base_url: str = "https://api.openai.com"
    llm_api_key_env: str = "KEC_LLM_API_KEY"
    llm_max_concurrent: int = 20
    llm_retry_limit: int = 3
    llm_cache_dir: str = ""
    mock_llm: bool = False
    domain_hint: str = ""
    final_k: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvariantError("alpha must be in [0, 1]")
        for name in ("merge_threshold", "neighbor_cumulative_threshold"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise InvariantError(f"{name} must be in (0, 1]")
        if self.use_uni_attr and self.lambda1 < 1:
            raise InvariantError("lambda1 must be >= 1 when uni attributes on")
        if self.use_bi_attr and self.lambda2 < 1:
            raise InvariantError("lambda2 must be >= 1 when bi attributes on")

    @property
    def knowledge_enabled(self):
        return self.use_concept_name or self.use_description

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvariantError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunManifest:
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    llm: dict = field(default_factory=lambda: {"live_calls": 0, "cache_hits": 0})

    def to_dict(self):
        return {
            "config": self.config,
            "inputs": self.inputs,
            "stages": self.stages,
            "llm": self.llm,
        }


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_text(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_json(path, obj):
    _atomic_write_text(path, json.dumps(obj, ensure_ascii=False, indent=1))


class PipelineRun:
    """One pipeline over one output directory."""

    def __init__(self, config):
        self.config = config
        if not config.output_dir:
            raise InvariantError("output_dir is required")
        os.makedirs(config.output_dir, exist_ok=True)
        self._manifest = self._load_manifest()
        self._client = None

    # ---- infrastructure -------------------------------------------------

    def path(self, name):
        return os.path.join(self.config.output_dir, name)

    def _load_manifest(self):
        path = self.path(MANIFEST_FILE)
        manifest = RunManifest(config=self.config.to_dict())
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            manifest.inputs = data.get("inputs", {})
            manifest.stages = data.get("stages", {})
            manifest.llm = data.get("llm", manifest.llm)
            manifest.config = self.config.to_dict()
        return manifest

    def _save_manifest(self):
        _atomic_write_json(self.path(MANIFEST_FILE), self._manifest.to_dict())

    @contextmanager
    def _lock(self):
        lock_path = self.path(".lock")
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError(
                "lock",
                f"output dir is locked by another run ({lock_path})",
            ) from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            os.unlink(lock_path)

    @contextmanager
    def _stage(self, name):
        start = time.perf_counter()
        outputs = []
        yield outputs
        duration = time.perf_counter() - start
        self._manifest.stages[name] = {
            "duration_s": duration,
            "outputs": {
                os.path.basename(p): _sha256_file(p) for p in outputs
            },
        }
        if self._client is not None:
            self._manifest.llm = {
                "live_calls": self._client.live_calls,
                "cache_hits": self._client.cache_hits,
            }
        self._save_manifest()

    def _record_input(self, path):
        if path and os.path.exists(path):
            self._manifest.inputs[os.path.basename(path)] = _sha256_file(path)

    def _require(self, stage, required_stage, filename):
        path = self.path(filename)
        if not os.path.exists(path):
            raise MissingPrerequisiteError(stage, required_stage, filename)
        return path

    def client(self):
        if self._client is None:
            cache_dir = self.config.llm_cache_dir or self.path("llm_cache")
            backend_config = BackendConfig(
                base_url=self.config.llm_base_url,
                api_key_env_name=self.config.llm_api_key_env,
                max_concurrent=self.config.llm_max_concurrent,
                retry_limit=self.config.llm_retry_limit,
                cache_dir=cache_dir,
            )
            backend = (
                MockBackend()
                if self.config.mock_llm
                else HTTPBackend(backend_config)
            )
            self._client = LLMClient(backend, backend_config)
        return self._client

    def embedder(self, dim):
        if self.config.sidecar_strings or self.config.sidecar_embeddings:
            if not (
                self.config.sidecar_strings and self.config.sidecar_embeddings
            ):
                raise InvariantError(
                    "sidecar_strings and sidecar_embeddings go together"
                )
            return SidecarEmbedder(
                self.config.sidecar_strings, self.config.sidecar_embeddings
            )
        return HashEmbedder(dim)

    # ---- inputs ----------------------------------------------------------

    def load_images(self):
        matrix = tensorio.read_embeddings(self.config.image_embeddings)
        self._record_input(self.config.image_embeddings)
        if not matrix.normalized:
            matrix = tensorio.l2_normalize_rows(matrix)
        return matrix

    def load_nouns(self):
        vocab = tensorio.read_nouns(self.config.noun_list)
        matrix = tensorio.read_embeddings(self.config.noun_embeddings)
        self._record_input(self.config.noun_list)
        self._record_input(self.config.noun_embeddings)
        if not matrix.normalized:
            matrix = tensorio.l2_normalize_rows(matrix)
        return vocab, matrix

    def load_labels(self):
        if not self.config.labels:
            return None
        self._record_input(self.config.labels)
        return tensorio.read_labels(self.config.labels)

    def _final_k(self):
        if self.config.final_k:
            return self.config.final_k
        labels = self.load_labels()
        if labels is None:
            raise StageError(
                "cluster", "final_k is required when no labels are provided"
            )
        return labels.num_classes

    # ---- stages ----------------------------------------------------------

    def run_stage(self, stage):
        if stage not in STAGES:
            raise StageError(stage, f"unknown stage; expected one of {STAGES}")
        with self._lock():
            return getattr(self, "_stage_" + stage)()

    def run_all(self):
        with self._lock():
            if self.config.knowledge_enabled:
                self._stage_map()
                self._stage_concepts()
                self._stage_attributes()
                self._stage_ground()
            self._stage_cluster()
            report = None
            if self.config.labels:
                report = self._stage_eval()
            return report, self._manifest

    def _stage_map(self):
        with self._stage("map") as outputs:
            images = self.load_images()
            vocab, noun_embs = self.load_nouns()
            result = mapping.build_mapping(
                images,
                vocab,
                noun_embs,
                ratio=self.config.ratio,
                top_k=self.config.top_k,
                seed=self.config.seed,
            )
            payload = {
                "k": result.k,
                "centroids": _matrix_lists(result.centroids),
                "image_assignments": result.image_assignments.tolist(),
                "noun_indices": result.noun_indices,
                "noun_sets": result.noun_sets,
                "text_centroids": _matrix_lists(result.text_centroids),
            }
            path = self.path(MAPPING_FILE)
            _atomic_write_json(path, payload)
            outputs.append(path)
            return result

    def _load_mapping(self, stage):
        path = self._require(stage, "map", MAPPING_FILE)
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return mapping.MappingResult(
            k=data["k"],
            centroids=_matrix_from_lists(data["centroids"], normalized=True),
            image_assignments=np.asarray(
                data["image_assignments"], dtype=np.int64
            ),
            noun_indices=data["noun_indices"],
            noun_sets=data["noun_sets"],
            text_centroids=_matrix_from_lists(
                data["text_centroids"], normalized=True
            ),
        )

    def _stage_concepts(self):
        with self._stage("concepts") as outputs:
            mapping_result = self._load_mapping("concepts")
            graph = knowledge.fuse_similarity(mapping_result, self.config.alpha)
            components = knowledge.merge_clusters(
                graph, self.config.merge_threshold
            )
            provenance = []
            concepts = knowledge.abstract_concepts(
                components,
                mapping_result,
                self.client(),
                model=self.config.llm_model,
                temperature=self.config.llm_temperature,
                domain_hint=self.config.domain_hint or None,
                provenance=provenance,
            )
            self._write_strings(concepts, [])
            embedder = self.embedder(mapping_result.centroids.dim)
            knowledge.embed_concepts(concepts, embedder)
            payload = {
                "components": components,
                "concepts": [
                    {
                        "id": c.id,
                        "member_clusters": c.member_clusters,
                        "merged_nouns": c.merged_nouns,
                        "name": c.name,
                        "description": c.description,
                        "name_emb": [float(v) for v in c.name_emb],
                        "desc_emb": [float(v) for v in c.desc_emb],
                    }
                    for c in concepts
                ],
                "provenance": provenance,
            }
            path = self.path(CONCEPTS_FILE)
            _atomic_write_json(path, payload)
            outputs.append(path)
            return concepts

    def _load_concepts(self, stage):
        path = self._require(stage, "concepts", CONCEPTS_FILE)
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        concepts = [
            knowledge.Concept(
                id=c["id"],
                member_clusters=c["member_clusters"],
                merged_nouns=c["merged_nouns"],
                name=c["name"],
                description=c["description"],
                name_emb=np.asarray(c["name_emb"], dtype=np.float32),
                desc_emb=np.asarray(c["desc_emb"], dtype=np.float32),
            )
            for c in data["concepts"]
        ]
        return concepts, data.get("provenance", [])

    def _stage_attributes(self):
        with self._stage("attributes") as outputs:
            concepts, provenance = self._load_concepts("attributes")
            client = self.client()
            uni_records = []
            bi_records = []
            pairs = []
            if self.config.use_uni_attr:
                uni_records = knowledge.mine_uni_attributes(
                    concepts,
                    client,
                    lambda1=self.config.lambda1,
                    model=self.config.llm_model,
                    temperature=self.config.llm_temperature,
                    domain_hint=self.config.domain_hint or None,
                    provenance=provenance,
                )
            if self.config.use_bi_attr:
                selections = knowledge.select_neighbors(
                    concepts,
                    cumulative_threshold=(
                        self.config.neighbor_cumulative_threshold
                    ),
                    max_neighbors=self.config.max_neighbors,
                )
                bi_records, pairs = knowledge.mine_bi_attributes(
                    selections,
                    concepts,
                    client,
                    lambda2=self.config.lambda2,
                    model=self.config.llm_model,
                    temperature=self.config.llm_temperature,
                    domain_hint=self.config.domain_hint or None,
                    provenance=provenance,
                )
            self._write_strings(concepts, uni_records + bi_records)
            embedder = self.embedder(len(concepts[0].name_emb))
            knowledge.embed_attributes(uni_records + bi_records, embedder)
            kb = knowledge.assemble_knowledge_base(
                concepts,
                uni_records,
                bi_records,
                pairs,
                config=self._kb_config(),
                provenance=provenance,
            )
            path = self.path(KNOWLEDGE_FILE)
            _atomic_write_text(path, kb.dumps())
            outputs.append(path)
            return kb

    def _kb_config(self):
        return {
            "alpha": self.config.alpha,
            "merge_threshold": self.config.merge_threshold,
            "neighbor_cumulative_threshold": (
                self.config.neighbor_cumulative_threshold
            ),
            "max_neighbors": self.config.max_neighbors,
            "lambda1": self.config.lambda1,
            "lambda2": self.config.lambda2,
            "model": self.config.llm_model,
            "temperature": self.config.llm_temperature,
            "domain_hint": self.config.domain_hint,
        }

    def _write_strings(self, concepts, records):
        """Every string the embedder must resolve, in deterministic order."""
        lines = []
        for c in concepts:
            lines.append(c.name)
            lines.append(c.description)
        for r in records:
            lines.append(r.text)
        seen = set()
        unique = [s for s in lines if not (s in seen or seen.add(s))]
        _atomic_write_text(self.path(STRINGS_FILE), "".join(
            s + "\n" for s in unique
        ))

    def _load_knowledge(self, stage):
        path = self._require(stage, "attributes", KNOWLEDGE_FILE)
        with open(path, "r", encoding="utf-8") as fh:
            return knowledge.KnowledgeBase.loads(fh.read())

    def _stage_ground(self):
        with self._stage("ground") as outputs:
            images = self.load_images()
            kb = self._load_knowledge("ground")
            grounded = grounding.ground(
                images,
                kb,
                use_name=self.config.use_concept_name,
                use_desc=self.config.use_description,
                use_attributes=(
                    self.config.use_uni_attr or self.config.use_bi_attr
                ),
                tau=self.config.tau,
                renormalize_kappa=self.config.renormalize_kappa,
            )
            kappa_path = self.path(KAPPA_FILE)
            concat_path = self.path(CONCAT_FILE)
            tensorio.write_embeddings(
                EmbeddingMatrix(
                    grounded.kappa.astype(np.float32),
                    normalized=self.config.renormalize_kappa,
                ),
                kappa_path,
            )
            tensorio.write_embeddings(
                EmbeddingMatrix(grounded.concat, normalized=False),
                concat_path,
            )
            outputs.extend([kappa_path, concat_path])
            return grounded

    def _stage_cluster(self):
        with self._stage("cluster") as outputs:
            if self.config.knowledge_enabled:
                path = self._require("cluster", "ground", CONCAT_FILE)
                features = tensorio.read_embeddings(path)
                features = tensorio.l2_normalize_rows(features)
            else:
                features = self.load_images()
            config = kmeans.KMeansConfig(
                k=self._final_k(), seed=self.config.seed
            )
            result = kmeans.fit(features, config)
            pred_path = self.path(PRED_FILE)
            tensorio.write_labels(result.assignments, pred_path)
            outputs.append(pred_path)
            return result

    def _stage_eval(self):
        with self._stage("eval") as outputs:
            pred_path = self._require("eval", "cluster", PRED_FILE)
            labels = self.load_labels()
            if labels is None:
                raise StageError("eval", "labels file is required for eval")
            pred = tensorio.read_labels(pred_path)
            report = evalmetrics.evaluate(pred, labels)
            path = self.path(EVAL_FILE)
            _atomic_write_json(path, report.as_dict(precise=True))
            outputs.append(path)
            return report


def _matrix_lists(matrix):
    return [[float(v) for v in row] for row in matrix.values]


def _matrix_from_lists(rows, normalized):
    return EmbeddingMatrix(
        np.asarray(rows, dtype=np.float32), normalized=normalized
    )
