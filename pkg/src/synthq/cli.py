"""synthq command line: generate, measure, weight, train, eval, correlate, report.

Every subcommand resolves its parameters (config file defaults, flag
overrides), embeds a hash of the resolved parameters in its outputs, and
exits 0 on success, 1 on runtime failure with a one-line cause, 2 on usage
errors.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
from pathlib import Path

import click

from . import corpus, eval_stats, qd_metrics, synth, trainer
from .backends import backend_from_spec
from .tokenization import TokenizerSpec, content_word_count, load_stopwords
from .weighting import WeightConfig

_TOKENIZER_STRATEGIES = {
    "regex": "unicode_regex",
    "presegmented": "external_presegmented",
    "sidecar": "sidecar_segmenter",
}

_CONFIG_SECTIONS = {"generate", "measure", "weight", "train", "eval", "correlate", "report"}


def _friendly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _params_hash(command: str, params: dict) -> str:
    payload = json.dumps({"command": command, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_report(data: dict, path: str | Path, fmt: str = "json") -> None:
    """Serialize a result payload with stable field ordering."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if "conditions" in data:
        writer.writerow(["condition", "r", "p", "n"])
        for row in data["conditions"]:
            writer.writerow([row["condition"], row["r"], row["p"], row["n"]])
    else:
        keys = sorted(k for k, v in data.items() if not isinstance(v, (dict, list)))
        writer.writerow(keys)
        writer.writerow([data[k] for k in keys])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _tokenizer_spec(lang: str, tokenizer: str, backend_spec: str | None = None) -> TokenizerSpec:
    strategy = _TOKENIZER_STRATEGIES[tokenizer]
    sidecar_url = None
    if strategy == "sidecar_segmenter":
        if not backend_spec or not backend_spec.startswith("sidecar:"):
            raise click.ClickException("--tokenizer sidecar requires --backend sidecar:<url>")
        sidecar_url = backend_spec.split(":", 1)[1]
    return TokenizerSpec(language=lang, strategy=strategy, sidecar_url=sidecar_url)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON config with per-subcommand defaults; flags override it.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Synthetic query pipeline: corpus -> queries -> metrics -> training -> stats."""
    if config_path:
        cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = set(cfg) - _CONFIG_SECTIONS
        if unknown:
            raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
        ctx.default_map = cfg


@main.command()
@click.option("--mode", type=click.Choice(["diverse", "paraphrase", "auto"]), default="diverse")
@click.option("--m", "m", type=int, default=5, help="Queries per document.")
@click.option("--target", type=click.Choice(["in_domain", "ood"]), default="ood",
              help="Diversity target used when --mode auto.")
@click.option("--model", required=True)
@click.option("--endpoint", required=True, help="OpenAI-compatible chat completions URL.")
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--limit", type=int, default=None)
@click.option("--cache-dir", default=".synthq-cache")
@click.option("--sample-n", type=int, default=100, help="Documents sampled for prompt tuning.")
@click.option("--backend", "backend_spec", default="stub", help="stub or sidecar:<url>.")
@click.option("--api-key-env", default="SYNTHQ_API_KEY")
@click.option("--temperature", type=float, default=0.0)
@click.option("--max-retries", type=int, default=2)
@click.option("--retry-backoff", type=float, default=1.0)
@click.option("--failure-ceiling", type=float, default=0.01)
@click.pass_context
@_friendly
def generate(ctx, mode, m, target, model, endpoint, docs_path, out_path, limit, cache_dir,
             sample_n, backend_spec, api_key_env, temperature, max_retries, retry_backoff,
             failure_ceiling):
    """Generate synthetic query sets for a document corpus."""
    run_hash = _params_hash("generate", ctx.params)
    docs = corpus.load_documents(docs_path, limit=limit)
    cfg = synth.GenerationConfig(
        model=model, M=m, temperature=temperature, max_retries=max_retries,
        endpoint_url=endpoint, api_key_env=api_key_env, retry_backoff=retry_backoff,
    )
    cache = corpus.ResponseCache(cache_dir)
    if mode == "auto":
        backend = backend_from_spec(backend_spec)
        selection = synth.tune_prompt(
            docs[:sample_n], list(synth.DEFAULT_TEMPLATES.values()), target, cfg, backend, cache
        )
        template = synth.DEFAULT_TEMPLATES[selection.chosen_mode]
        click.echo(
            f"selected {selection.chosen_mode} prompt "
            f"(CE={selection.sample_ce:.3f}, Self-BLEU={selection.sample_self_bleu:.3f})"
        )
    else:
        template = synth.DEFAULT_TEMPLATES[mode]
    sets = synth.build_dataset(docs, template, cfg, cache, failure_ceiling=failure_ceiling)
    corpus.save_query_sets(sets, out_path)
    write_report(
        {
            "config_hash": run_hash,
            "mode": template.mode,
            "m": m,
            "model": model,
            "prompt_hash": template.digest(),
            "n_documents": len(docs),
            "n_sets": len(sets),
        },
        str(out_path) + ".meta.json",
    )
    click.echo(f"wrote {len(sets)} query sets to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--human", "human_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", "backend_spec", default="stub", help="stub or sidecar:<url>.")
@click.option("--out", "out_path", default="qd_report.json", type=click.Path(dir_okay=False))
@click.option("--lang", default="en")
@click.option("--tokenizer", type=click.Choice(sorted(_TOKENIZER_STRATEGIES)), default="regex")
@click.option("--threshold", type=float, default=0.5, help="Paraphrase score threshold.")
@click.pass_context
@_friendly
def measure(ctx, in_path, human_path, backend_spec, out_path, lang, tokenizer, threshold):
    """Compute quality/diversity metrics for a synthetic corpus."""
    run_hash = _params_hash("measure", ctx.params)
    sets = corpus.load_query_sets(in_path)
    human = corpus.human_query_map(corpus.load_human_queries(human_path))
    backend = backend_from_spec(backend_spec)
    spec = _tokenizer_spec(lang, tokenizer, backend_spec)
    report = qd_metrics.measure(sets, human, backend, spec, threshold=threshold)
    payload = dict(report.to_dict())
    payload["backend"] = backend.describe()
    payload["config_hash"] = run_hash
    write_report(payload, out_path)
    click.echo(
        f"dist_sim={report.dist_sim:.4f} len_sim={report.len_sim:.4f} "
        f"ce={report.ce:.4f} self_bleu={report.self_bleu:.4f} "
        f"({report.n_queries} queries, {report.n_pairs} pairs)"
    )


@main.command()
@click.option("--scheme", type=click.Choice(["uniform", "cw", "ri", "ri_times_cw"]), default="cw")
@click.option("--kappa-cw", type=float, default=100.0)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--docs", "docs_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Optional corpus for referential checks.")
@click.option("--lang", default="en")
@click.option("--stopwords-dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.pass_context
@_friendly
def weight(ctx, scheme, kappa_cw, in_path, out_path, docs_path, lang, stopwords_dir):
    """Annotate pairs with content-word counts and preview batch weights.

    Training recomputes weights per mini-batch; this command only annotates
    raw counts and reports a whole-corpus preview of the weighting.
    """
    run_hash = _params_hash("weight", ctx.params)
    pairs = corpus.load_pairs(in_path)
    if not pairs:
        raise click.ClickException("no pairs to weight")
    table = load_stopwords(lang, stopwords_dir)
    spec = TokenizerSpec(language=lang)
    for pair in pairs:
        pair.raw_cw = content_word_count(pair.query, spec, table)
        pair.weight = 1.0
    doc_ids = None
    if docs_path:
        doc_ids = {d.id for d in corpus.load_documents(docs_path)}
    corpus.save_pairs(pairs, out_path, doc_ids=doc_ids)
    cws = [p.raw_cw for p in pairs]
    preview = {}
    if scheme in ("cw", "ri_times_cw"):
        from .weighting import cw_weights

        weights = cw_weights(cws, kappa_cw)
        preview = {
            "preview_weight_min": min(weights),
            "preview_weight_max": max(weights),
            "preview_weight_mean": sum(weights) / len(weights),
        }
    write_report(
        {
            "config_hash": run_hash,
            "scheme": scheme,
            "kappa_cw": kappa_cw,
            "n_pairs": len(pairs),
            "cw_min": min(cws),
            "cw_max": max(cws),
            "cw_mean": sum(cws) / len(cws),
            **preview,
        },
        str(out_path) + ".meta.json",
    )
    click.echo(f"annotated {len(pairs)} pairs -> {out_path} (cw mean {sum(cws)/len(cws):.2f})")


@main.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scheme", type=click.Choice(["uniform", "cw", "ri", "ri_times_cw"]),
              default="uniform")
@click.option("--kappa-cw", type=float, default=100.0)
@click.option("--kappa-ri", type=float, default=5.0)
@click.option("--epochs", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--lr", type=float, default=0.05)
@click.option("--batch-size", type=int, default=32)
@click.option("--lr-schedule", type=click.Choice(["constant", "cosine"]), default="constant")
@click.option("--eval-every", type=int, default=50)
@click.option("--val-fraction", type=float, default=0.1)
@click.option("--lang", default="en")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
@_friendly
def train(ctx, pairs_path, docs_path, scheme, kappa_cw, kappa_ri, epochs, seed, lr, batch_size,
          lr_schedule, eval_every, val_fraction, lang, out_path):
    """Train the desk-scale retriever on weighted pairs."""
    run_hash = _params_hash("train", ctx.params)
    pairs = corpus.load_pairs(pairs_path)
    docs = corpus.load_documents(docs_path)
    cfg = trainer.TrainConfig(
        lr=lr, batch_size=batch_size, epochs=epochs, seed=seed,
        weight_scheme=WeightConfig(scheme=scheme, kappa_cw=kappa_cw, kappa_ri=kappa_ri),
        lr_schedule=lr_schedule, eval_every=eval_every, val_fraction=val_fraction,
        language=lang,
    )
    result = trainer.train(pairs, docs, cfg)
    trainer.save_checkpoint(result.state, out_path)
    write_report(
        {
            "config_hash": run_hash,
            "train_config_hash": result.config_hash,
            "untrained_val_ndcg": result.untrained_val_ndcg,
            "best_val_ndcg": result.best_val_ndcg,
            "steps": result.state["step"],
            "metrics": result.metrics,
        },
        str(out_path) + ".meta.json",
    )
    click.echo(
        f"val NDCG@10 {result.untrained_val_ndcg:.4f} -> {result.best_val_ndcg:.4f} "
        f"({result.state['step']} steps), checkpoint at {out_path}"
    )


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON-Lines with query_id and text.")
@click.option("--k", type=int, default=10)
@click.option("--out", "out_path", default="eval_report.json", type=click.Path(dir_okay=False))
@click.pass_context
@_friendly
def eval_cmd(ctx, model_path, docs_path, qrels_path, queries_path, k, out_path):
    """Rank the corpus for each query and report NDCG@k."""
    run_hash = _params_hash("eval", ctx.params)
    encoder = trainer.load_encoder(model_path)
    docs = corpus.load_documents(docs_path)
    index = eval_stats.build_doc_index(docs, encoder)
    judgments = eval_stats.load_qrels(qrels_path)
    queries: dict[str, str] = {}
    with open(queries_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                queries[rec["query_id"]] = rec["text"]
    per_query = {}
    for qid, text in queries.items():
        per = judgments.get(qid, {})
        if sum(per.values()) == 0:
            continue
        ranking = eval_stats.rank_corpus(text, encoder, index)
        per_query[qid] = eval_stats.ndcg_at_k(ranking, per, k)
    if not per_query:
        raise click.ClickException("no queries with positive judgments")
    mean = sum(per_query.values()) / len(per_query)
    write_report(
        {"config_hash": run_hash, "k": k, "mean_ndcg": mean, "n_queries": len(per_query),
         "per_query": per_query},
        out_path,
    )
    click.echo(f"NDCG@{k} = {mean:.4f} over {len(per_query)} queries")


@main.command()
@click.option("--points", "points_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns cw,delta and optional condition.")
@click.option("--out", "out_path", default="cdp_report.json", type=click.Path(dir_okay=False))
@click.option("--bucket-lo", type=float, default=7.0)
@click.option("--bucket-hi", type=float, default=10.0)
@click.pass_context
@_friendly
def correlate(ctx, points_path, out_path, bucket_lo, bucket_hi):
    """Per-condition correlation plus the pooled complexity threshold fit."""
    run_hash = _params_hash("correlate", ctx.params)
    by_condition: dict[str, list[tuple[float, float]]] = {}
    order: list[str] = []
    with open(points_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"cw", "delta"} <= set(reader.fieldnames):
            raise click.ClickException("points CSV needs cw and delta columns")
        for row in reader:
            condition = row.get("condition") or "all"
            if condition not in by_condition:
                by_condition[condition] = []
                order.append(condition)
            by_condition[condition].append((float(row["cw"]), float(row["delta"])))
    all_points = [p for cond in order for p in by_condition[cond]]
    conditions = []
    for cond in order:
        pts = by_condition[cond]
        res = eval_stats.pearson_r_p([p[0] for p in pts], [p[1] for p in pts])
        conditions.append({"condition": cond, "r": res.r, "p": res.p, "n": res.n})
    fit = eval_stats.fit_cw_threshold(all_points)
    buckets = eval_stats.positive_rate_buckets(all_points, (bucket_lo, bucket_hi))
    write_report(
        {
            "config_hash": run_hash,
            "n_points": len(all_points),
            "conditions": conditions,
            "threshold": {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "zero_crossing": fit.zero_crossing,
                "r": fit.r,
                "n": fit.n,
            },
            "buckets": {name: list(counts) for name, counts in buckets.items()},
        },
        out_path,
    )
    click.echo(
        f"{len(conditions)} conditions; zero crossing at cw={fit.zero_crossing:.2f} "
        f"(pooled r={fit.r:.3f})"
    )


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
@_friendly
def report(ctx, in_path, fmt, out_path):
    """Re-emit a stage output as JSON or plotting-ready CSV."""
    data = json.loads(Path(in_path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise click.ClickException("report input must be a JSON object")
    write_report(data, out_path, fmt)
    click.echo(f"wrote {fmt} report to {out_path}")


if __name__ == "__main__":
    main()
