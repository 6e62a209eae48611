"""Command-line entry points.

Report-producing commands write delimited or JSON output and, unless told
otherwise, render a companion figure next to it.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import figures
from .annotation import (
    GroundTruth,
    chebyshev_error_bound,
    chebyshev_budget,
    estimate_p,
    read_labels,
    read_vote_log,
    resolved_rows,
    sample_annotation_pairs,
    write_labels,
)
from .corpus import Corpus, identity_ground_truth, load_corpus, load_model
from .discovery import (
    build_suspects_per_model,
    cost_report,
    duplication_stats,
    overlap_matrix,
    overlap_table,
    read_suspects,
    union_dedupe,
    write_suspects,
)
from .errors import EdsError
from .metrics import ANNOTATED, ModelRanks, SampledNegativeConfig, evaluate_model
from .robustness import loo_report
from .service import AnnotationService, VoteStore, create_app


def _load_models(specs: tuple[str, ...]) -> list:
    models = []
    for spec in specs:
        name, sep, path = spec.partition("=")
        models.append(load_model(path, name) if sep else load_model(spec))
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise click.ClickException(f"duplicate model names: {names}")
    return models


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise click.ClickException(f"bad k list {text!r}; expected e.g. '5,9'")
    if not ks:
        raise click.ClickException("need at least one k")
    return ks


def _figure_path(out: str | None, figure: str | None, no_figure: bool) -> Path | None:
    if no_figure:
        return None
    if figure:
        return Path(figure)
    if out:
        return Path(out).with_suffix(".png")
    return None


def _emit(payload: dict | list, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@click.group()
def main() -> None:
    """Similarity-discovery workbench: propose suspect pairs with a model
    ensemble, collect expert votes, and evaluate models on the result."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_specs", multiple=True, required=True,
              help="Model file, optionally as name=path. Repeatable.")
@click.option("--k", default=6, show_default=True, help="Top-k nominations per model and query.")
@click.option("--out", required=True, type=click.Path(), help="Suspect-set JSONL output.")
def discover(corpus_path: str, model_specs: tuple[str, ...], k: int, out: str) -> None:
    """Build the deduplicated union of per-model top-k suspect pairs."""
    try:
        corpus = load_corpus(corpus_path)
        models = _load_models(model_specs)
        per_model = [build_suspects_per_model(m, corpus, k) for m in models]
        suspects = union_dedupe(per_model)
        write_suspects(suspects, out)
        stats = duplication_stats(suspects)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {out}: {len(suspects.pairs)} pairs over {suspects.num_queries} queries "
               f"from {len(suspects.models)} models (k={k})")
    click.echo(f"avg candidates/query {stats.avg_candidates_per_query:.1f} of cap "
               f"{len(suspects.models) * stats.per_query_cap}, duplication rate {stats.duplication_rate:.1%}")


@main.command()
@click.option("--suspects", "suspects_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=None, help="Override k when the file does not imply it.")
@click.option("--out", type=click.Path(), default=None, help="Write the table here instead of stdout.")
@click.option("--figure", type=click.Path(), default=None, help="Heatmap output path.")
@click.option("--no-figure", is_flag=True, default=False)
def overlap(suspects_path: str, k: int | None, out: str | None, figure: str | None, no_figure: bool) -> None:
    """Pairwise top-k overlap between proposer models, in percent."""
    try:
        suspects = read_suspects(suspects_path, k=k)
        table = overlap_table(suspects)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    if out:
        Path(out).write_text(table, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(table, nl=False)
    fig_path = _figure_path(out, figure, no_figure)
    if fig_path is not None:
        figures.save_overlap_heatmap(overlap_matrix(suspects), suspects.models, fig_path)
        click.echo(f"wrote {fig_path}")


@main.command()
@click.option("--suspects", "suspects_path", required=True, type=click.Path(exists=True))
@click.option("--p-hat", required=True, type=float, help="Estimated positive prevalence.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None)
@click.option("--items", "num_items", type=int, default=None, help="Pool size |D| when no manifest is at hand.")
@click.option("--queries", "num_queries", type=int, default=None, help="Query count |Q|; queries drawn from the pool.")
@click.option("--k", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def cost(suspects_path: str, p_hat: float, corpus_path: str | None, num_items: int | None,
         num_queries: int | None, k: int | None, out: str | None) -> None:
    """Annotation workload versus brute force and random sampling."""
    try:
        suspects = read_suspects(suspects_path, k=k)
        if corpus_path:
            corpus = load_corpus(corpus_path)
        elif num_items and num_queries:
            if num_queries > num_items:
                raise click.ClickException("--queries cannot exceed --items")
            ids = tuple(f"item{i:07d}" for i in range(num_items))
            corpus = Corpus(items=ids, queries=ids[:num_queries])
        else:
            raise click.ClickException("give either --corpus or both --items and --queries")
        report = cost_report(corpus, suspects, p_hat)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    _emit(report.to_dict(), out)


@main.command()
@click.option("--votes", "votes_path", required=True, type=click.Path(exists=True))
@click.option("--suspects", "suspects_path", required=True, type=click.Path(exists=True))
@click.option("--experts", required=True, help="Comma-separated expert roster.")
@click.option("--out", required=True, type=click.Path(), help="Resolved labels TSV.")
def resolve(votes_path: str, suspects_path: str, experts: str, out: str) -> None:
    """Replay a vote log and write majority-resolved labels."""
    roster = tuple(e.strip() for e in experts.split(",") if e.strip())
    try:
        suspects = read_suspects(suspects_path)
        gt = GroundTruth(experts=roster, valid_pairs=suspects.pair_keys())
        for vote in read_vote_log(votes_path):
            gt.record_vote(vote)
        rows = resolved_rows(gt)
        write_labels(rows, out)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    positives = sum(r[2] for r in rows)
    click.echo(f"wrote {out}: {len(rows)} labeled pairs, {positives} positive")
    if rows:
        click.echo(f"positive share of reviewed suspects: {positives / len(rows):.4f}")


@main.command("estimate-p")
@click.option("--a", required=True, type=int, help="Positives found in the random sample.")
@click.option("--b", required=True, type=int, help="Random sample size.")
@click.option("--p-lb", required=True, type=float, help="Prevalence floor from confirmed positives.")
@click.option("--epsilon", type=float, default=None)
@click.option("--q-prob", type=float, default=None)
@click.option("--out", type=click.Path(), default=None)
def estimate_p_cmd(a: int, b: int, p_lb: float, epsilon: float | None, q_prob: float | None,
                   out: str | None) -> None:
    """Estimate positive-pair prevalence from an annotated random sample."""
    try:
        est = estimate_p(a, b, p_lb, epsilon=epsilon, q_prob=q_prob)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    _emit(est.to_dict(), out)


@main.command()
@click.option("--epsilon", required=True, type=float)
@click.option("--q-prob", required=True, type=float)
@click.option("--p-hat", type=float, default=None, help="Attach the error bound at this prevalence.")
def budget(epsilon: float, q_prob: float, p_hat: float | None) -> None:
    """Random-sample size needed for the requested precision and confidence."""
    try:
        b = chebyshev_budget(epsilon, q_prob)
        payload: dict = {"epsilon": epsilon, "q_prob": q_prob, "budget": b}
        if p_hat is not None:
            bound = chebyshev_error_bound(p_hat, b, epsilon)
            payload["error_bound"] = bound
            payload["bound_vacuous"] = bound >= 1.0
    except EdsError as exc:
        raise click.ClickException(str(exc))
    _emit(payload, None)


@main.command("sample-pairs")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--suspects", "suspects_path", type=click.Path(exists=True), default=None,
              help="Exclude these pairs from the draw.")
@click.option("--count", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
def sample_pairs(corpus_path: str, suspects_path: str | None, count: int, seed: int, out: str) -> None:
    """Draw random pairs outside the suspect set for prevalence annotation."""
    try:
        corpus = load_corpus(corpus_path)
        exclude = read_suspects(suspects_path).pair_keys() if suspects_path else frozenset()
        pairs = sample_annotation_pairs(corpus, count, seed, exclude=exclude)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    with open(out, "w", encoding="utf-8") as fh:
        for q, c in pairs:
            fh.write(f"{q}\t{c}\n")
    click.echo(f"wrote {out}: {len(pairs)} pairs")


@main.command("identity-gt")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def identity_gt(corpus_path: str, out: str) -> None:
    """Derive labels from identity sidecar data: same identity means positive."""
    try:
        corpus = load_corpus(corpus_path)
        gt = identity_ground_truth(corpus)
        rows = resolved_rows(gt)
        write_labels(rows, out)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {out}: {len(rows)} pairs, {sum(r[2] for r in rows)} positive")


@main.command("eval")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_specs", multiple=True, required=True)
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--ks", default="5,9", show_default=True)
@click.option("--negatives", type=click.Choice(["annotated", "sampled"]), default="annotated", show_default=True)
@click.option("--neg-count", default=5, show_default=True)
@click.option("--neg-seed", default=0, show_default=True)
@click.option("--neg-window", default="100:500", show_default=True, help="Rank window lo:hi for sampled negatives.")
@click.option("--neg-pool", type=click.Choice(["model", "generators"]), default="model", show_default=True)
@click.option("--generator", "generator_specs", multiple=True,
              help="Generator model files for --neg-pool generators.")
@click.option("--hr-per-query", is_flag=True, default=False,
              help="Average HR and MRR within each query before averaging across queries.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--figure", type=click.Path(), default=None)
@click.option("--no-figure", is_flag=True, default=False)
def eval_cmd(corpus_path: str, model_specs: tuple[str, ...], labels_path: str, ks: str,
             negatives: str, neg_count: int, neg_seed: int, neg_window: str, neg_pool: str,
             generator_specs: tuple[str, ...], hr_per_query: bool, out: str | None,
             figure: str | None, no_figure: bool) -> None:
    """Score models against resolved labels."""
    k_list = _parse_ks(ks)
    try:
        corpus = load_corpus(corpus_path)
        models = _load_models(model_specs)
        labels = read_labels(labels_path)
        if negatives == "sampled":
            try:
                lo, hi = (int(x) for x in neg_window.split(":"))
            except ValueError:
                raise click.ClickException(f"bad window {neg_window!r}; expected lo:hi")
            source = SampledNegativeConfig(count=neg_count, seed=neg_seed, window_lo=lo,
                                           window_hi=hi, pool=neg_pool)
        else:
            source = ANNOTATED
        generator_ranks = None
        if generator_specs:
            generator_ranks = [ModelRanks(g, corpus) for g in _load_models(generator_specs)]
        reports = []
        for m in models:
            ranks = ModelRanks(m, corpus)
            reports.append(evaluate_model(ranks, labels, ks=k_list, negative_source=source,
                                          hr_per_query=hr_per_query, generator_ranks=generator_ranks))
    except EdsError as exc:
        raise click.ClickException(str(exc))
    _emit([r.to_dict() for r in reports], out)
    fig_path = _figure_path(out, figure, no_figure)
    if fig_path is not None:
        figures.save_eval_chart(reports, fig_path)
        click.echo(f"wrote {fig_path}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_specs", multiple=True, required=True)
@click.option("--suspects", "suspects_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--p-method", type=click.Choice(["auto", "exact", "mc"]), default="auto", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--draws", default=10000, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--figure", type=click.Path(), default=None)
@click.option("--no-figure", is_flag=True, default=False)
def loo(corpus_path: str, model_specs: tuple[str, ...], suspects_path: str, labels_path: str,
        p_method: str, seed: int, draws: int, out: str | None, figure: str | None,
        no_figure: bool) -> None:
    """Leave-one-generator-out robustness of the model ranking."""
    try:
        corpus = load_corpus(corpus_path)
        models = _load_models(model_specs)
        suspects = read_suspects(suspects_path)
        labels = read_labels(labels_path)
        report = loo_report(corpus, models, suspects, labels, p_method=p_method,
                            seed=seed, draws=draws)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    _emit(report.to_dict(), out)
    fig_path = _figure_path(out, figure, no_figure)
    if fig_path is not None:
        figures.save_loo_chart(report, fig_path)
        click.echo(f"wrote {fig_path}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--suspects", "suspects_path", required=True, type=click.Path(exists=True))
@click.option("--votes", "votes_path", required=True, type=click.Path(),
              help="Vote log; created when missing, replayed when present.")
@click.option("--experts", required=True, help="Comma-separated expert roster.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--image-root", type=click.Path(exists=True), default=None,
              help="Base directory for relative image paths; defaults to the manifest's directory.")
@click.option("--model", "model_specs", multiple=True, help="Models for the /api/metrics preview.")
@click.option("--static-ui", "static_ui", type=click.Path(exists=True), default=None,
              help="Directory of a built web UI to serve at /.")
def serve(corpus_path: str, suspects_path: str, votes_path: str, experts: str, host: str,
          port: int, image_root: str | None, model_specs: tuple[str, ...], static_ui: str | None) -> None:
    """Run the annotation HTTP service."""
    import uvicorn

    roster = tuple(e.strip() for e in experts.split(",") if e.strip())
    try:
        corpus = load_corpus(corpus_path)
        suspects = read_suspects(suspects_path)
        store = VoteStore(votes_path, experts=roster, valid_pairs=suspects.pair_keys())
        models = {m.name: m for m in _load_models(model_specs)} if model_specs else None
        service = AnnotationService(
            corpus, suspects, store,
            image_root=image_root or Path(corpus_path).parent,
            models=models,
        )
        app = create_app(service, static_dir=static_ui)
    except EdsError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"serving {len(service.pairs)} pairs for experts {', '.join(roster)} on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main(sys.argv[1:])
