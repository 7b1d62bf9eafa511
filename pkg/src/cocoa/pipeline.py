"""Two-stage pipeline orchestration and every run variant.

The full pipeline retrieves top-k passages, runs the internal and
external induction branches (concurrently when configured), then has the
decision stage reason over all five components. Ablations drop a branch
or the reasoning line; the single-call variants (zero_shot, standard_rag,
cot, merge, unified) answer in one or two generator calls.

A failed stage aborts only its own query: the batch driver keeps going
and the partial record is flagged instead of raised.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .generation import (
    DEFAULT_MAX_TOKENS,
    UNIFIED_MAX_TOKENS,
    GenerationError,
    GenerationRequest,
    GeneratorBackend,
)
from .prompts import (
    PARSE_FALLBACK,
    ParseError,
    PromptBindings,
    PromptError,
    StageId,
    parse_stage_output,
    render_prompt,
)
from .retrieval import RankedPassages, RemoteRetrievalError, RetrievalError
from .types import (
    BranchResult,
    CandidateAnswer,
    Decision,
    InducedKnowledge,
    Passage,
    PipelineRecord,
    Query,
    RecordMeta,
    Transcript,
    VariantId,
)

#: generator calls made per query, by variant
EXPECTED_TRANSCRIPT_COUNTS: dict[VariantId, int] = {
    VariantId.COCOA_ZERO: 5,
    VariantId.NO_INTERNAL: 3,
    VariantId.NO_EXTERNAL: 3,
    VariantId.NO_THINK: 5,
    VariantId.ZERO_SHOT: 1,
    VariantId.STANDARD_RAG: 1,
    VariantId.COT: 1,
    VariantId.MERGE: 2,
    VariantId.UNIFIED: 1,
}

#: variants that call the retriever
RETRIEVAL_VARIANTS = frozenset(
    {
        VariantId.COCOA_ZERO,
        VariantId.NO_INTERNAL,
        VariantId.NO_THINK,
        VariantId.STANDARD_RAG,
        VariantId.MERGE,
        VariantId.UNIFIED,
    }
)

_INDUCTION_WORD_LIMIT = 200


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 5
    variant: VariantId = VariantId.COCOA_ZERO
    concurrency_limit: int = 4
    stage_branches_concurrent: bool = True
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    unified_max_tokens: int = UNIFIED_MAX_TOKENS
    model_name: str = "default"
    task_instruction: Optional[str] = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.concurrency_limit < 1:
            raise ValueError(f"concurrency_limit must be >= 1, got {self.concurrency_limit}")


@dataclass
class _Session:
    """Mutable per-query accumulator; one owner per query."""

    transcripts: list[Transcript] = field(default_factory=list)
    parse_modes: list[tuple[str, str]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    prompt_tokens: int = 0
    completion_tokens: int = 0
    retrieved: tuple[Passage, ...] = ()
    internal: Optional[BranchResult] = None
    external: Optional[BranchResult] = None
    decision: Optional[Decision] = None

    def absorb(self, other: "_Session") -> None:
        self.transcripts.extend(other.transcripts)
        self.parse_modes.extend(other.parse_modes)
        self.flags.extend(other.flags)
        self.prompt_tokens += other.prompt_tokens
        self.completion_tokens += other.completion_tokens
        if other.internal is not None:
            self.internal = other.internal
        if other.external is not None:
            self.external = other.external

    def build(
        self, query: Query, variant: VariantId, elapsed_s: float, failed: bool, error: Optional[str]
    ) -> PipelineRecord:
        return PipelineRecord(
            query=query,
            variant=variant,
            retrieved=self.retrieved,
            internal=self.internal,
            external=self.external,
            decision=self.decision,
            transcripts=tuple(self.transcripts),
            meta=RecordMeta(
                elapsed_s=elapsed_s,
                prompt_tokens=self.prompt_tokens,
                completion_tokens=self.completion_tokens,
                failed=failed,
                error=error,
                flags=tuple(self.flags),
                parse_modes=tuple(self.parse_modes),
            ),
        )


class Pipeline:
    """Binds a generator backend, an optional retriever, and a config.

    All roles share one backend by default; `role_backends` overrides the
    backend per role tag (internal_agent, external_agent, decision_agent,
    unified) for setups where the agents are served by different models.
    """

    def __init__(
        self,
        generator: GeneratorBackend,
        retriever=None,
        config: PipelineConfig = PipelineConfig(),
        role_backends: Optional[dict[str, GeneratorBackend]] = None,
    ):
        self.generator = generator
        self.retriever = retriever
        self.config = config
        self.role_backends = dict(role_backends or {})

    # -- plumbing -----------------------------------------------------------

    def _generate(
        self, session: _Session, stage: str, prompt: str, role_tag: str, max_tokens: Optional[int] = None
    ) -> str:
        request = GenerationRequest(
            prompt=prompt,
            temperature=self.config.temperature,
            max_tokens=max_tokens or self.config.max_tokens,
            model_name=self.config.model_name,
            role_tag=role_tag,
        )
        backend = self.role_backends.get(role_tag, self.generator)
        try:
            result = backend.generate(request)
        except GenerationError as e:
            session.transcripts.append(Transcript(stage=stage, prompt=prompt, output=""))
            raise StageError(stage, str(e)) from e
        session.transcripts.append(Transcript(stage=stage, prompt=prompt, output=result.text))
        session.prompt_tokens += result.prompt_tokens
        session.completion_tokens += result.completion_tokens
        return result.text

    def _parse(self, session: _Session, stage: StageId, tag: str, raw: str):
        try:
            parsed = parse_stage_output(stage, raw)
        except ParseError as e:
            raise StageError(tag, str(e)) from e
        session.parse_modes.append((tag, parsed.parse_mode))
        return parsed

    def _retrieve(self, session: _Session, q: Query) -> RankedPassages:
        if self.retriever is None:
            raise StageError("retrieve", "no retriever configured but variant needs one")
        try:
            ranked = self.retriever.search(q.text, self.config.k)
        except (RetrievalError, RemoteRetrievalError) as e:
            raise StageError("retrieve", str(e)) from e
        session.retrieved = ranked.passages()
        return ranked

    def _bindings(self, q: Query, **kw) -> PromptBindings:
        return PromptBindings(question=q.text, task_instruction=self.config.task_instruction, **kw)

    @staticmethod
    def _flag_overlength(session: _Session, tag: str, text: str) -> None:
        if len(text.split()) > _INDUCTION_WORD_LIMIT:
            session.flags.append(f"{tag}_over_{_INDUCTION_WORD_LIMIT}_words")

    # -- Stage I ------------------------------------------------------------

    def run_internal_branch(self, q: Query, session: Optional[_Session] = None) -> BranchResult:
        session = session if session is not None else _Session()
        prompt = render_prompt(StageId.INTERNAL_CANDIDATE, self._bindings(q))
        raw = self._generate(session, "internal_candidate", prompt, "internal_agent")
        parsed = self._parse(session, StageId.INTERNAL_CANDIDATE, "internal_candidate", raw)
        if not parsed.answer:
            raise StageError("internal_candidate", "empty parsed answer")
        candidate = CandidateAnswer(text=parsed.answer, source="internal")

        prompt = render_prompt(
            StageId.INTERNAL_INDUCTION, self._bindings(q, candidate_internal=candidate.text)
        )
        raw = self._generate(session, "internal_induction", prompt, "internal_agent")
        parsed = self._parse(session, StageId.INTERNAL_INDUCTION, "internal_induction", raw)
        if not parsed.background:
            raise StageError("internal_induction", "empty induced knowledge")
        self._flag_overlength(session, "internal_induction", parsed.background)
        branch = BranchResult(candidate=candidate, induction=InducedKnowledge(parsed.background, "internal"))
        session.internal = branch
        return branch

    def run_external_branch(
        self, q: Query, ranked: RankedPassages, session: Optional[_Session] = None
    ) -> BranchResult:
        session = session if session is not None else _Session()
        if len(ranked) < 1:
            raise StageError("external_candidate", "at least one retrieved passage required")
        passages = ranked.passages()
        prompt = render_prompt(StageId.EXTERNAL_CANDIDATE, self._bindings(q, passages=passages))
        raw = self._generate(session, "external_candidate", prompt, "external_agent")
        parsed = self._parse(session, StageId.EXTERNAL_CANDIDATE, "external_candidate", raw)
        if not parsed.answer:
            raise StageError("external_candidate", "empty parsed answer")
        candidate = CandidateAnswer(text=parsed.answer, source="external")

        prompt = render_prompt(
            StageId.EXTERNAL_INDUCTION,
            self._bindings(q, passages=passages, candidate_external=candidate.text),
        )
        raw = self._generate(session, "external_induction", prompt, "external_agent")
        parsed = self._parse(session, StageId.EXTERNAL_INDUCTION, "external_induction", raw)
        if not parsed.summary:
            raise StageError("external_induction", "empty induced knowledge")
        self._flag_overlength(session, "external_induction", parsed.summary)
        branch = BranchResult(candidate=candidate, induction=InducedKnowledge(parsed.summary, "external"))
        session.external = branch
        return branch

    # -- Stage II -----------------------------------------------------------

    def run_decision(
        self,
        q: Query,
        internal: Optional[BranchResult],
        external: Optional[BranchResult],
        session: Optional[_Session] = None,
        include_thinking: bool = True,
    ) -> Decision:
        session = session if session is not None else _Session()
        if internal is None and external is None:
            raise StageError("decision", "at least one branch required")
        kw: dict = {}
        if internal is not None:
            kw["induction_internal"] = internal.induction.text
            kw["candidate_internal"] = internal.candidate.text
        if external is not None:
            kw["induction_external"] = external.induction.text
            kw["candidate_external"] = external.candidate.text
        prompt = render_prompt(
            StageId.DECISION,
            self._bindings(q, **kw),
            include_internal=internal is not None,
            include_external=external is not None,
            include_thinking=include_thinking,
        )
        raw = self._generate(session, "decision", prompt, "decision_agent")
        parsed = self._parse(session, StageId.DECISION, "decision", raw)
        if not parsed.answer:
            raise StageError("decision", f"no answer parsed from output: {raw[:200]!r}")
        decision = Decision(cot=parsed.thinking or "", answer=parsed.answer)
        session.decision = decision
        return decision

    # -- full runs ----------------------------------------------------------

    def _run_branches(self, q: Query, ranked: RankedPassages, session: _Session):
        if not self.config.stage_branches_concurrent:
            internal = self.run_internal_branch(q, session)
            external = self.run_external_branch(q, ranked, session)
            return internal, external
        sub_in, sub_ex = _Session(), _Session()
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_in = pool.submit(self.run_internal_branch, q, sub_in)
            fut_ex = pool.submit(self.run_external_branch, q, ranked, sub_ex)
            error: Optional[Exception] = None
            internal = external = None
            try:
                internal = fut_in.result()
            except Exception as e:  # noqa: BLE001 - re-raised after merging traces
                error = e
            try:
                external = fut_ex.result()
            except Exception as e:  # noqa: BLE001
                error = error or e
        # Merge in canonical order so records do not depend on scheduling.
        session.absorb(sub_in)
        session.absorb(sub_ex)
        if error is not None:
            raise error
        return internal, external

    def _dispatch(self, q: Query, variant: VariantId, session: _Session) -> None:
        if variant in (VariantId.COCOA_ZERO, VariantId.NO_THINK):
            ranked = self._retrieve(session, q)
            internal, external = self._run_branches(q, ranked, session)
            self.run_decision(
                q, internal, external, session, include_thinking=variant is not VariantId.NO_THINK
            )
        elif variant is VariantId.NO_INTERNAL:
            ranked = self._retrieve(session, q)
            external = self.run_external_branch(q, ranked, session)
            self.run_decision(q, None, external, session)
        elif variant is VariantId.NO_EXTERNAL:
            internal = self.run_internal_branch(q, session)
            self.run_decision(q, internal, None, session)
        elif variant is VariantId.ZERO_SHOT:
            self._single_call(q, session, StageId.ZERO_SHOT, "zero_shot", "internal_agent")
        elif variant is VariantId.STANDARD_RAG:
            ranked = self._retrieve(session, q)
            self._single_call(
                q, session, StageId.STANDARD_RAG, "standard_rag", "external_agent", passages=ranked.passages()
            )
        elif variant is VariantId.COT:
            self._run_cot(q, session)
        elif variant is VariantId.MERGE:
            self._run_merge(q, session)
        elif variant is VariantId.UNIFIED:
            self._run_unified(q, session)
        else:  # pragma: no cover - VariantId is closed
            raise StageError("dispatch", f"unhandled variant {variant}")

    def _single_call(
        self,
        q: Query,
        session: _Session,
        stage: StageId,
        tag: str,
        role: str,
        passages: Optional[tuple[Passage, ...]] = None,
    ) -> str:
        kw = {"passages": passages} if passages is not None else {}
        prompt = render_prompt(stage, self._bindings(q, **kw))
        raw = self._generate(session, tag, prompt, role)
        parsed = self._parse(session, stage, tag, raw)
        if not parsed.answer:
            raise StageError(tag, "empty parsed answer")
        session.decision = Decision(cot="", answer=parsed.answer)
        return raw

    def _run_cot(self, q: Query, session: _Session) -> None:
        raw = self._single_call(q, session, StageId.COT, "cot", "internal_agent")
        answer = session.decision.answer
        # Treat everything before the extracted answer as the reasoning trace.
        cut = raw.rfind(answer)
        reasoning = raw[:cut].strip() if cut > 0 else ""
        session.decision = Decision(cot=reasoning, answer=answer)

    def _run_merge(self, q: Query, session: _Session) -> None:
        # One-call passage generation: the induction template with a blank
        # prediction slot, mirroring direct context generation.
        prompt = render_prompt(
            StageId.INTERNAL_INDUCTION, self._bindings(q, candidate_internal="")
        )
        raw = self._generate(session, "internal_induction", prompt, "internal_agent")
        parsed = self._parse(session, StageId.INTERNAL_INDUCTION, "internal_induction", raw)
        if not parsed.background:
            raise StageError("internal_induction", "empty generated passage")
        session.internal = BranchResult(
            candidate=None, induction=InducedKnowledge(parsed.background, "internal")
        )
        ranked = self._retrieve(session, q)
        generated = Passage(id=f"generated:{q.id}", title="", text=parsed.background)
        merged = ranked.passages() + (generated,)
        prompt = render_prompt(StageId.MERGE_CONTEXT, self._bindings(q, passages=merged))
        raw = self._generate(session, "merge_context", prompt, "external_agent")
        parsed = self._parse(session, StageId.MERGE_CONTEXT, "merge_context", raw)
        if not parsed.answer:
            raise StageError("merge_context", "empty parsed answer")
        session.decision = Decision(cot="", answer=parsed.answer)

    def _run_unified(self, q: Query, session: _Session) -> None:
        ranked = self._retrieve(session, q)
        prompt = render_prompt(StageId.UNIFIED, self._bindings(q, passages=ranked.passages()))
        raw = self._generate(
            session, "unified", prompt, "unified", max_tokens=self.config.unified_max_tokens
        )
        parsed = self._parse(session, StageId.UNIFIED, "unified", raw)
        if not parsed.answer:
            raise StageError("unified", "empty parsed answer")
        if parsed.parse_mode == PARSE_FALLBACK:
            session.flags.append("unified_fallback_answer")
        if not parsed.thinking:
            session.flags.append("unified_missing_thinking")
        if parsed.background:
            session.internal = BranchResult(
                candidate=None, induction=InducedKnowledge(parsed.background, "internal")
            )
        if parsed.summary:
            session.external = BranchResult(
                candidate=None, induction=InducedKnowledge(parsed.summary, "external")
            )
        session.decision = Decision(cot=parsed.thinking or "", answer=parsed.answer)

    # -- public entry points --------------------------------------------------

    def run_variant(self, q: Query, variant: Optional[VariantId] = None) -> PipelineRecord:
        """Run one query under a variant; stage failures yield a flagged record."""
        variant = variant or self.config.variant
        session = _Session()
        started = time.perf_counter()
        failed, error = False, None
        try:
            self._dispatch(q, variant, session)
        except (StageError, GenerationError, PromptError, ParseError, RetrievalError, RemoteRetrievalError) as e:
            failed, error = True, str(e)
        elapsed = time.perf_counter() - started
        return session.build(q, variant, elapsed_s=elapsed, failed=failed, error=error)

    def run_cocoa_zero(self, q: Query) -> PipelineRecord:
        return self.run_variant(q, VariantId.COCOA_ZERO)

    def run_unified(self, q: Query) -> PipelineRecord:
        return self.run_variant(q, VariantId.UNIFIED)

    def run_batch(self, queries: list[Query], variant: Optional[VariantId] = None) -> list[PipelineRecord]:
        """Run queries concurrently (bounded), preserving input order."""
        variant = variant or self.config.variant
        if self.config.concurrency_limit == 1 or len(queries) <= 1:
            return [self.run_variant(q, variant) for q in queries]
        workers = min(self.config.concurrency_limit, len(queries))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda q: self.run_variant(q, variant), queries))
