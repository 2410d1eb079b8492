"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration problems, 2 provider or
transport failures, 3 data problems (malformed stores or corpora, missing
files, refused re-ingestion).
"""

from __future__ import annotations

import logging
from pathlib import Path

import click

from .config import Settings, load_settings
from .errors import (
    ConfigError,
    HgmemError,
    ProviderError,
    SchemaParseError,
)
from .graph import MemoryHypergraph, file_digest
from .harness import (
    ExactMatchJudge,
    LlmJudge,
    ProviderBundle,
    SubstringJudge,
    ablation_matrix,
    format_report,
    load_corpus,
    run,
)
from .indexing import build_index, load_index_cache, save_index_cache
from .construction import MemoryBuilder
from .providers.base import ChatClient
from .providers.http import HttpChatTransport, HttpEmbedding, HttpReranker
from .providers.mocks import EchoChatTransport, HashEmbedding, OverlapReranker, ScriptedChatTransport
from .retrieval import ContextMode, answer, retrieve
from .synthetic import build_synthetic, load_script_file

logger = logging.getLogger(__name__)

META_DIGESTS = "ingested_digests"


class DataError(HgmemError):
    """A CLI-level data problem (missing store, refused re-ingestion)."""


def _index_path(store: str) -> str:
    return store + ".index"


def _load_graph(store: str) -> MemoryHypergraph:
    if not Path(store).exists():
        raise DataError(f"store {store} does not exist")
    return MemoryHypergraph.load(store)


def _chat_transport(settings: Settings, mock: bool, mock_script: str | None,
                    *, structured: bool):
    """Pick the chat transport for a command, or None when unconfigured.

    Construction templates demand structured payloads, which the echo
    transport cannot produce; commands that build memory therefore accept
    only a script or a real endpoint.
    """
    if mock_script:
        templates, echo = load_script_file(mock_script)
        return ScriptedChatTransport(templates, echo_templates=echo)
    if mock:
        if structured:
            raise ConfigError("this command needs structured chat output; "
                              "use --mock-script or configure llm_url")
        return EchoChatTransport()
    if settings.llm_url:
        if not settings.llm_model:
            raise ConfigError("llm_model is required when llm_url is set")
        return HttpChatTransport(settings.llm_url, settings.llm_model,
                                 api_key=settings.llm_key, timeout=settings.timeout)
    return None


def _embedder(settings: Settings, mock: bool, mock_script: str | None):
    if mock or mock_script:
        return HashEmbedding(dimension=settings.mock_dimension)
    if not settings.emb_url or not settings.emb_model:
        raise ConfigError("embeddings need emb_url and emb_model (or --mock)")
    return HttpEmbedding(settings.emb_url, settings.emb_model,
                         api_key=settings.emb_key, timeout=settings.timeout)


def _reranker(settings: Settings, mock: bool, mock_script: str | None):
    if mock or mock_script:
        return OverlapReranker()
    if settings.rerank_url:
        if not settings.rerank_model:
            raise ConfigError("rerank_model is required when rerank_url is set")
        return HttpReranker(settings.rerank_url, settings.rerank_model,
                            api_key=settings.rerank_key, timeout=settings.timeout)
    return None


def _settings(ctx: click.Context, **overrides) -> Settings:
    return load_settings(ctx.obj.get("config_path"), overrides=overrides)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              default=None, help="JSON config file (or set HYPERMEM_CONFIG).")
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug.")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None, verbose: int) -> None:
    """Hypergraph conversational memory: ingest, query, evaluate."""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if config_path is not None:
        load_settings(config_path)  # an explicitly named file fails fast
    ctx.obj = {"config_path": config_path}


@cli.command()
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--store", required=True, type=click.Path(dir_okay=False),
              help="Graph store to create or extend.")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False),
              help="Scripted chat responses (JSON) instead of a live model.")
@click.option("--mock", is_flag=True, help="Use local mock embedding/rerank providers.")
@click.option("--append", is_flag=True,
              help="Ingest even if this corpus was already ingested into the store.")
@click.pass_context
def ingest(ctx: click.Context, corpus: str, store: str, mock_script: str | None,
           mock: bool, append: bool) -> None:
    """Build or extend a memory store from a dialogue corpus."""
    settings = _settings(ctx)
    transport = _chat_transport(settings, mock, mock_script, structured=True)
    if transport is None:
        raise ConfigError("ingest needs a chat provider: --mock-script or llm_url")
    embedder = _embedder(settings, mock, mock_script)
    digest = file_digest(corpus)
    graph = MemoryHypergraph.load(store) if Path(store).exists() else MemoryHypergraph()
    digests = graph.meta.setdefault(META_DIGESTS, [])
    if digest in digests and not append:
        raise DataError(f"corpus {corpus} was already ingested into {store} "
                        "(pass --append to ingest it again)")
    builder = MemoryBuilder(
        graph, ChatClient(transport), embedder,
        candidate_limit=settings.candidate_limit,
        max_buffer_turns=settings.max_buffer_turns,
        candidate_pool=settings.candidate_pool, rrf_k=settings.rrf_k,
        lam=settings.lam, agg_mode=settings.agg_mode(),
        k1=settings.bm25_k1, b=settings.bm25_b)
    streams = load_corpus(corpus)
    ingested_turns = 0
    try:
        for stream in streams:
            summary = builder.ingest_stream(stream.turns)
            ingested_turns += len(stream.turns)
            click.echo(f"{stream.conversation_id}: {len(summary.episode_ids)} episodes, "
                       f"{len(summary.new_fact_ids)} new facts")
    except ProviderError:
        click.echo(f"provider failure after {ingested_turns} completed turns; "
                   f"{len(builder.buffer)} turns left buffered — store not written",
                   err=True)
        raise
    if digest not in digests:
        digests.append(digest)
    graph.save(store)
    state = build_index(graph, embedder, lam=settings.lam,
                        agg_mode=settings.agg_mode(),
                        k1=settings.bm25_k1, b=settings.bm25_b)
    save_index_cache(state, _index_path(store))
    counts = graph.counts()
    click.echo(f"store {store}: {counts['topics']} topics, {counts['episodes']} episodes, "
               f"{counts['facts']} facts, {counts['hyperedges']} hyperedges")


def _load_or_build_index(store: str, graph: MemoryHypergraph, settings: Settings,
                         embedder) -> object:
    path = Path(_index_path(store))
    if path.exists():
        try:
            return load_index_cache(path, graph)
        except HgmemError as exc:
            click.echo(f"index cache unusable ({exc}); rebuilding", err=True)
    state = build_index(graph, embedder, lam=settings.lam,
                        agg_mode=settings.agg_mode(),
                        k1=settings.bm25_k1, b=settings.bm25_b)
    save_index_cache(state, path)
    return state


@cli.command()
@click.argument("text")
@click.option("--store", required=True, type=click.Path(dir_okay=False))
@click.option("--mock", is_flag=True, help="Use local mock providers.")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False))
@click.option("--fact-only", is_flag=True, help="Context from facts alone.")
@click.option("--episode-only", is_flag=True, help="Context from episodes alone.")
@click.option("--no-topic", is_flag=True, help="Bypass the topic stage.")
@click.option("--no-episode", is_flag=True, help="Bypass the episode stage.")
@click.option("--k-topics", type=int, default=None)
@click.option("--k-episodes", type=int, default=None)
@click.option("--k-facts", type=int, default=None)
@click.option("--generate", is_flag=True, help="Also generate an answer with the chat model.")
@click.pass_context
def query(ctx: click.Context, text: str, store: str, mock: bool,
          mock_script: str | None, fact_only: bool, episode_only: bool,
          no_topic: bool, no_episode: bool, k_topics: int | None,
          k_episodes: int | None, k_facts: int | None, generate: bool) -> None:
    """Retrieve memories for a question."""
    if fact_only and episode_only:
        raise click.UsageError("--fact-only and --episode-only are mutually exclusive")
    settings = _settings(ctx, k_topics=k_topics, k_episodes=k_episodes, k_facts=k_facts)
    graph = _load_graph(store)
    embedder = _embedder(settings, mock, mock_script)
    reranker = _reranker(settings, mock, mock_script)
    state = _load_or_build_index(store, graph, settings, embedder)
    mode = ContextMode.EPISODE_PLUS_FACT
    if fact_only:
        mode = ContextMode.FACT_ONLY
    elif episode_only:
        mode = ContextMode.EPISODE_ONLY
    config = settings.retrieval_config(context_mode=mode, bypass_topic=no_topic,
                                       bypass_episode=no_episode)
    result = retrieve(text, graph, state, config, embedder, reranker)
    click.echo("topics:   " + (", ".join(str(s.node) for s in result.topics) or "(none)"))
    click.echo("episodes: " + (", ".join(str(s.node) for s in result.episodes) or "(none)"))
    click.echo("facts:    " + (", ".join(str(s.node) for s in result.facts) or "(none)"))
    click.echo("")
    click.echo(result.context if result.context else "(no context)")
    click.echo("")
    if generate:
        transport = _chat_transport(settings, mock, mock_script, structured=False)
        if transport is None:
            raise ConfigError("--generate needs a chat provider (llm_url, --mock, "
                              "or --mock-script)")
        click.echo("answer: " + answer(text, result.context, ChatClient(transport)))
    else:
        click.echo("(generation skipped)")


@cli.command(name="eval")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--mock", is_flag=True, help="Use local mock embedding/rerank providers.")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False))
@click.option("--judge", "judge_name",
              type=click.Choice(["substring", "exact", "llm"]), default="substring")
@click.option("--ablations", is_flag=True, help="Run the six ablations too.")
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--k-topics", type=int, default=None)
@click.option("--k-episodes", type=int, default=None)
@click.option("--k-facts", type=int, default=None)
@click.pass_context
def eval_command(ctx: click.Context, corpus: str, mock: bool,
                 mock_script: str | None, judge_name: str, ablations: bool,
                 repeats: int, k_topics: int | None, k_episodes: int | None,
                 k_facts: int | None) -> None:
    """Evaluate question answering over a corpus end to end."""
    if repeats < 1:
        raise click.UsageError("--repeats must be >= 1")
    settings = _settings(ctx, k_topics=k_topics, k_episodes=k_episodes, k_facts=k_facts)
    transport = _chat_transport(settings, mock, mock_script, structured=True)
    if transport is None:
        raise ConfigError("eval needs a chat provider: --mock-script or llm_url")
    embedder = _embedder(settings, mock, mock_script)
    reranker = _reranker(settings, mock, mock_script)
    if judge_name == "substring":
        judge = SubstringJudge()
    elif judge_name == "exact":
        judge = ExactMatchJudge()
    else:
        judge = LlmJudge(ChatClient(transport))
    bundle = ProviderBundle(chat_transport=transport, embedder=embedder,
                            judge=judge, reranker=reranker)
    streams = load_corpus(corpus)
    config = settings.retrieval_config()
    if ablations:
        reports = ablation_matrix(streams, bundle, config, repeats=repeats,
                                  lam=settings.lam, agg_mode=settings.agg_mode())
    else:
        reports = [run(streams, bundle, config, repeats=repeats,
                       lam=settings.lam, agg_mode=settings.agg_mode())]
    click.echo(format_report(reports))
    if repeats > 1:
        for report in reports:
            runs = ", ".join(f"{v:.3f}" for v in report.per_run_overall)
            click.echo(f"{report.label}: per-run overall [{runs}]")


@cli.command()
@click.option("--store", required=True, type=click.Path(dir_okay=False))
def stats(store: str) -> None:
    """Describe a memory store."""
    graph = _load_graph(store)
    counts = graph.counts()
    click.echo(f"store:      {store}")
    click.echo(f"revision:   {graph.revision}")
    click.echo(f"topics:     {counts['topics']}")
    click.echo(f"episodes:   {counts['episodes']}")
    click.echo(f"facts:      {counts['facts']}")
    click.echo(f"hyperedges: {counts['hyperedges']}")
    histogram = graph.edge_size_histogram()
    if histogram:
        parts = ", ".join(f"{size}: {n}" for size, n in sorted(histogram.items()))
        click.echo(f"edge sizes: {parts}")
    digests = graph.meta.get(META_DIGESTS, [])
    if digests:
        click.echo("ingested corpora: " + ", ".join(d[:12] for d in digests))


@cli.command()
@click.option("--store", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def export(store: str, out: str) -> None:
    """Validate a store and write a clean copy."""
    graph = _load_graph(store)
    graph.save(out)
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for corpus.jsonl and script.json.")
@click.option("--topics", type=int, default=10, show_default=True)
@click.option("--episodes", type=int, default=3, show_default=True)
@click.option("--facts", type=int, default=4, show_default=True)
@click.option("--decoys", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out: str, topics: int, episodes: int, facts: int, decoys: int,
          seed: int) -> None:
    """Generate a synthetic corpus plus a matching chat script."""
    try:
        corpus = build_synthetic(topics=topics, episodes_per_topic=episodes,
                                 facts_per_episode=facts, decoys=decoys, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    corpus_path, script_path = corpus.write(out)
    click.echo(f"wrote {corpus_path} ({len(corpus.turn_records)} turns, "
               f"{len(corpus.qa_records)} questions)")
    click.echo(f"wrote {script_path}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, prog_name="hgmem", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 1
    except (ProviderError, SchemaParseError) as exc:
        click.echo(f"provider error: {exc}", err=True)
        return 2
    except HgmemError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
