"""Batch construction of generation-based instructions.

Records are admitted against the budget in input order before their requests
are sent: each admission reserves an upper bound (estimated prompt cost plus
the completion cap), so the sum of actual receipt costs can never pass the
budget and the set of processed records is deterministic. Requests inside one
admission wave run concurrently; parsing, linting, the cost ledger, and the
checkpoint writer stay on the calling thread.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .backends import (
    CompletionBackend,
    CostRates,
    GenerationReceipt,
    RetryPolicy,
    complete,
    estimate_prompt_tokens,
)
from .corpus import Corpus, ImageTextRecord
from .errors import BackendError, BudgetExceededError, CloverError, ParseError
from .instructions import Instruction, Provenance, make_instruction
from .prompts import PromptEnvelope, build_prompt, envelope_digest, lint_qa, parse_qa

DEFAULT_MAX_COMPLETION_TOKENS = 512


@dataclass
class BudgetLedger:
    """Single-writer budget state: reservations are admissions' upper bounds."""

    budget_usd: Decimal
    reserved: Decimal = Decimal(0)
    spent: Decimal = Decimal(0)

    def admit(self, reservation: Decimal) -> None:
        committed = max(self.reserved, self.spent)
        if committed + reservation > self.budget_usd:
            raise BudgetExceededError(
                f"projected spend {committed + reservation} exceeds budget {self.budget_usd}"
            )
        self.reserved += reservation

    def record(self, actual: Decimal) -> None:
        self.spent += actual


@dataclass
class GenerationRun:
    instructions: list[Instruction] = field(default_factory=list)
    receipts: list[GenerationReceipt] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    halted: bool = False
    halt_reason: str = ""
    warnings: list[str] = field(default_factory=list)


def request_reservation(
    envelope: PromptEnvelope, rates: CostRates, max_completion_tokens: int
) -> Decimal:
    return rates.cost(estimate_prompt_tokens(envelope), max_completion_tokens)


def estimate_run_cost(
    corpus: Corpus,
    rates: CostRates,
    fewshot: list[tuple[str, str]] = (),
    max_completion_tokens: int = DEFAULT_MAX_COMPLETION_TOKENS,
    system_text: str | None = None,
) -> Decimal:
    """Projected worst-case spend for a full run; no backend is contacted."""
    total = Decimal(0)
    for record in corpus.records:
        envelope = build_prompt(record.merged_caption, fewshot, system_text)
        total += request_reservation(envelope, rates, max_completion_tokens)
    return total


def load_checkpoint(path: str | Path) -> tuple[set[str], list[GenerationReceipt]]:
    """Processed image ids and their receipts from a previous partial run."""
    path = Path(path)
    done: set[str] = set()
    receipts: list[GenerationReceipt] = []
    if not path.exists():
        return done, receipts
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            done.add(row["image_id"])
            receipts.append(
                GenerationReceipt(
                    image_id=row["image_id"],
                    prompt_tokens=row["prompt_tokens"],
                    completion_tokens=row["completion_tokens"],
                    estimated_cost_usd=Decimal(row["estimated_cost_usd"]),
                    backend_id=row["backend_id"],
                    retries=row["retries"],
                )
            )
    return done, receipts


def _receipt_row(receipt: GenerationReceipt) -> str:
    return json.dumps(
        {
            "image_id": receipt.image_id,
            "prompt_tokens": receipt.prompt_tokens,
            "completion_tokens": receipt.completion_tokens,
            "estimated_cost_usd": str(receipt.estimated_cost_usd),
            "backend_id": receipt.backend_id,
            "retries": receipt.retries,
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )


def generate_instructions(
    corpus: Corpus,
    backend: CompletionBackend,
    fewshot: list[tuple[str, str]] = (),
    budget_usd: Decimal = Decimal("8.00"),
    strict: bool = False,
    *,
    rates: CostRates,
    policy: RetryPolicy | None = None,
    system_text: str | None = None,
    max_completion_tokens: int = DEFAULT_MAX_COMPLETION_TOKENS,
    max_concurrency: int = 4,
    checkpoint_path: str | Path | None = None,
    skip_log_path: str | Path | None = None,
    created_at: str = "",
) -> GenerationRun:
    """Produce one generation-kind instruction per successfully processed record.

    Strict mode drops records whose completion fails parsing or linting;
    lenient mode keeps them and attaches warnings. A budget halt is clean: the
    checkpoint already holds every processed record, so the run can resume.
    """
    if budget_usd <= 0:
        raise ValueError(f"budget_usd must be positive, got {budget_usd}")
    if max_concurrency < 1:
        raise ValueError(f"max_concurrency must be >= 1, got {max_concurrency}")
    policy = policy or RetryPolicy()

    done, prior_receipts = (set(), [])
    if checkpoint_path is not None:
        done, prior_receipts = load_checkpoint(checkpoint_path)

    ledger = BudgetLedger(budget_usd=budget_usd)
    for receipt in prior_receipts:
        ledger.record(receipt.estimated_cost_usd)
    ledger.reserved = ledger.spent

    run = GenerationRun()
    model_name = getattr(backend, "model", None)

    checkpoint_fh = None
    skip_fh = None
    try:
        if checkpoint_path is not None:
            Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
            checkpoint_fh = open(checkpoint_path, "a", encoding="utf-8")
        if skip_log_path is not None:
            Path(skip_log_path).parent.mkdir(parents=True, exist_ok=True)
            skip_fh = open(skip_log_path, "a", encoding="utf-8")
    except OSError as exc:
        raise CloverError(f"cannot open run log: {exc}") from exc

    def log_skip(image_id: str, reason: str) -> None:
        run.skipped.append((image_id, reason))
        if skip_fh is not None:
            skip_fh.write(
                json.dumps({"image_id": image_id, "reason": reason}, ensure_ascii=False)
                + "\n"
            )
            skip_fh.flush()

    def run_one(item: tuple[ImageTextRecord, PromptEnvelope]):
        record, envelope = item
        try:
            text, receipt = complete(
                envelope, backend, policy, rates, max_completion_tokens, record.image_id
            )
            return record, envelope, text, receipt, None
        except BackendError as exc:
            return record, envelope, None, None, exc

    pending = [r for r in corpus.records if r.image_id not in done]
    try:
        while pending and not run.halted:
            wave: list[tuple[ImageTextRecord, PromptEnvelope]] = []
            while pending and len(wave) < max_concurrency:
                record = pending[0]
                envelope = build_prompt(record.merged_caption, fewshot, system_text)
                try:
                    ledger.admit(request_reservation(envelope, rates, max_completion_tokens))
                except BudgetExceededError as exc:
                    run.halted = True
                    run.halt_reason = str(exc)
                    break
                wave.append((record, envelope))
                pending.pop(0)
            if not wave:
                break
            if len(wave) == 1:
                results = [run_one(wave[0])]
            else:
                with ThreadPoolExecutor(max_workers=len(wave)) as pool:
                    results = list(pool.map(run_one, wave))
            for record, envelope, text, receipt, error in results:
                if error is not None:
                    log_skip(record.image_id, f"backend_error: {error}")
                    continue
                ledger.record(receipt.estimated_cost_usd)
                run.receipts.append(receipt)
                if checkpoint_fh is not None:
                    try:
                        checkpoint_fh.write(_receipt_row(receipt) + "\n")
                        checkpoint_fh.flush()
                    except OSError as exc:
                        err = CloverError(f"checkpoint write failed: {exc}")
                        err.partial = run
                        raise err from exc
                try:
                    parsed = parse_qa(text, strict=strict)
                except ParseError as exc:
                    log_skip(record.image_id, f"parse_error: {exc}")
                    continue
                report = lint_qa(parsed.pairs)
                if strict and not report.ok:
                    rules = sorted({v.rule_id for v in report.violations})
                    log_skip(
                        record.image_id,
                        f"lint_violations: {len(report.violations)} ({', '.join(rules)})",
                    )
                    continue
                run.warnings.extend(
                    f"{record.image_id}: {w}" for w in parsed.warnings
                )
                run.instructions.append(
                    make_instruction(
                        record.image_id,
                        "generation",
                        [(p.question, p.answer) for p in parsed.pairs],
                        Provenance(
                            method="chat-completion",
                            model=model_name,
                            prompt_hash=envelope_digest(envelope),
                            created_at=created_at,
                        ),
                    )
                )
    finally:
        if checkpoint_fh is not None:
            checkpoint_fh.close()
        if skip_fh is not None:
            skip_fh.close()
    return run
