//! Command implementations shared by the binary, the service and the tests.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use pkg_core::embedding::EmbeddingProviderConfig;
use pkg_core::eval::{default_settings, evaluate, generate_synthetic, load_records, save_records, EvalRecord};
use pkg_core::llm::HttpLlm;
use pkg_core::metapath::MetaPathConfig;
use pkg_core::prompts::PromptConfig;
use pkg_core::retriever::items_to_json;
use pkg_core::{
    assemble_context, Channel, Corpus, EmbeddingProvider, HashEmbedder, LlmClient, MockLlm, MockScript, Pkg, PkgHeader,
    Retrieval, Retriever, RetrieverConfig,
};
use serde_json::{json, Value};

use crate::{BuildArgs, EvalArgs, LlmArgs, QueryArgs, Switch, ValidateArgs};

/// Environment variable naming the endpoint of the `http-v1` embedding provider.
pub const ENV_EMBED_ENDPOINT: &str = "PKG_EMBED_ENDPOINT";

pub fn prompts(args: &LlmArgs) -> anyhow::Result<PromptConfig> {
    match &args.prompts {
        Some(dir) => PromptConfig::from_dir(dir).with_context(|| format!("reading prompts from {}", dir.display())),
        None => Ok(PromptConfig::default()),
    }
}

/// The model client selected by `--llm` and `--mock-script`.
pub fn llm_client(args: &LlmArgs) -> anyhow::Result<Option<Arc<dyn LlmClient>>> {
    if args.llm == Switch::Off {
        if args.mock_script.is_some() {
            log::warn!("--mock-script is ignored without --llm on");
        }
        return Ok(None);
    }
    if let Some(path) = &args.mock_script {
        let script = MockScript::load(path).with_context(|| format!("loading mock script {}", path.display()))?;
        return Ok(Some(Arc::new(MockLlm::new(script))));
    }
    let client = HttpLlm::from_env().context("--llm on needs a model endpoint")?;
    Ok(Some(Arc::new(client)))
}

/// The embedding provider recorded in a graph header.
pub fn provider_for(header: &PkgHeader) -> anyhow::Result<Arc<dyn EmbeddingProvider>> {
    let config = EmbeddingProviderConfig {
        provider_id: header.embed_provider.clone(),
        dim: header.embed_dim,
        http_endpoint: std::env::var(ENV_EMBED_ENDPOINT).ok(),
        ..EmbeddingProviderConfig::default()
    };
    Ok(Arc::from(config.build()?))
}

pub fn load_graph(path: &Path) -> anyhow::Result<Pkg> {
    Pkg::load(path).with_context(|| format!("loading graph {}", path.display()))
}

/// The one retrieval engine behind `query`, `eval` and `serve`.
pub fn retriever_for(pkg: Pkg, llm: Option<(Arc<dyn LlmClient>, PromptConfig)>, config: RetrieverConfig) -> anyhow::Result<Retriever> {
    let provider = provider_for(pkg.header())?;
    let retriever = Retriever::new(Arc::new(pkg), provider, config)?;
    Ok(match llm {
        Some((client, prompts)) => retriever.with_llm(client, prompts),
        None => retriever,
    })
}

/// Retrieval as the service and `query --json` report it: `{"flags", "items"}`.
pub fn retrieval_json(retrieval: &Retrieval) -> Value {
    let flags: serde_json::Map<String, Value> = retrieval
        .flags
        .iter()
        .map(|(c, f)| (c.name().to_string(), json!(f)))
        .collect();
    json!({ "flags": flags, "items": items_to_json(&retrieval.items) })
}

pub fn build(args: &BuildArgs) -> anyhow::Result<()> {
    let corpus = Corpus::load(&args.input)?;
    let client = llm_client(&args.llm)?;
    let config = pkg_core::BuilderConfig {
        chunk_target_chars: args.chunk_size,
        chunk_overlap_chars: args.overlap,
        llm_enabled: client.is_some(),
        max_glean_rounds: args.glean_rounds,
        prompts: prompts(&args.llm)?,
        ..Default::default()
    };
    let mp = MetaPathConfig {
        max_len: args.max_path_len,
        per_node_template_cap: args.path_cap,
        ..Default::default()
    };
    let provider = HashEmbedder::new(args.embed_dim);
    let (graph, report) = pkg_core::build(&corpus, &config, &provider, &mp, client.as_deref())?;
    for (doc, reason) in &report.failed_documents {
        eprintln!("warning: skipped document {doc}: {reason}");
    }
    if let Some(reason) = &report.llm_fallback {
        eprintln!("warning: model unavailable, continued with rule extraction: {reason}");
    }
    let bytes = graph.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("documents: {}", report.documents);
    println!("chunks: {}", report.chunks);
    println!("entities: {}", report.entities);
    println!("edges: {}", report.edges);
    println!("templates: {}", report.templates);
    println!("metapath_instances: {}", report.metapath_instances);
    if client.is_some() {
        println!("llm_extraction_calls: {}", report.llm_extraction_calls);
    }
    println!("wrote {} ({bytes} bytes)", args.out.display());
    Ok(())
}

pub fn query(args: &QueryArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        bail!("-k must be at least 1");
    }
    let channels = Channel::parse_list(&args.channels)?;
    let client = llm_client(&args.llm)?;
    if args.rerank && client.is_none() {
        bail!("--rerank needs --llm on");
    }
    let mut config = RetrieverConfig::default();
    config.fusion.llm_rerank = args.rerank;
    let llm = match client {
        Some(c) => Some((c, prompts(&args.llm)?)),
        None => None,
    };
    let retriever = retriever_for(load_graph(&args.graph)?, llm, config)?;
    let retrieval = retriever.retrieve(&args.query, &channels, args.k)?;
    for (channel, flags) in &retrieval.flags {
        for flag in flags {
            eprintln!("note: {channel}: {flag}");
        }
    }
    let mut out = std::io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&items_to_json(&retrieval.items))?)?;
    } else {
        let package = assemble_context(&retrieval.items, args.budget.unwrap_or(usize::MAX))?;
        if package.blocks.is_empty() {
            writeln!(out, "(no context)")?;
        } else {
            writeln!(out, "{}", package.render())?;
        }
    }
    Ok(())
}

fn write_jsonl_corpus(path: &Path, corpus: &Corpus) -> anyhow::Result<()> {
    let mut text = String::new();
    for d in &corpus.documents {
        text.push_str(&serde_json::to_string(&json!({ "doc_id": d.doc_id, "text": d.text }))?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Builds the graph for a generated corpus with default settings.
pub fn generated_setup(n: usize, seed: u64) -> anyhow::Result<(Corpus, Vec<EvalRecord>, Pkg)> {
    let (corpus, records) = generate_synthetic(n, seed);
    let (graph, _) = pkg_core::build(
        &corpus,
        &Default::default(),
        &HashEmbedder::default(),
        &MetaPathConfig::default(),
        None,
    )?;
    Ok((corpus, records, graph))
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        bail!("-k must be at least 1");
    }
    let settings = if args.channels.is_empty() {
        default_settings()
    } else {
        args.channels.iter().map(|s| Channel::parse_list(s)).collect::<Result<_, _>>()?
    };
    let (records, graph) = match args.generate {
        Some(n) => {
            let (corpus, records, graph) = generated_setup(n, args.seed)?;
            if let Some(dir) = &args.out {
                fs::create_dir_all(dir)?;
                write_jsonl_corpus(&dir.join("corpus.jsonl"), &corpus)?;
                save_records(dir.join("qa.jsonl"), &records)?;
                graph.save(dir.join("graph.pkg"))?;
            }
            (records, graph)
        }
        None => {
            let (Some(g), Some(qa)) = (&args.graph, &args.qa) else {
                bail!("eval needs -g and --qa, or --generate");
            };
            (load_records(qa)?, load_graph(g)?)
        }
    };
    let retriever = retriever_for(graph, None, RetrieverConfig::default())?;
    let report = evaluate(&retriever, &records, &settings, args.k)?;
    let json = serde_json::to_string_pretty(&report.to_json())?;
    if let Some(path) = &args.report {
        fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.graph).with_context(|| format!("reading {}", args.graph.display()))?;
    let graph = Pkg::from_jsonl_unchecked(&text)?;
    let violations = graph.validate();
    for v in &violations {
        println!("{v}");
    }
    if !violations.is_empty() {
        bail!("{} violations", violations.len());
    }
    println!(
        "ok: {} chunks, {} entities, {} edges, {} templates",
        graph.chunks().len(),
        graph.entities().len(),
        graph.edges().len(),
        graph.metapaths().catalog().len()
    );
    Ok(())
}
