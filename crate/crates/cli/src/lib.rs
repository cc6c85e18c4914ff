//! `carbon-tables`: client for the consolidation service, plus an offline
//! runner that drives the same library code without a server.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use carbon_tables::ingest::IngestReport;
use carbon_tables::{
    parse_upload, query_records, AnnotatedDocument, ConsolidationOptions, KnowledgeGraph, MaterialBase, PipelineOutput,
    RecordFilter,
};
use clap::{Args, Parser, Subcommand};
use reqwest::blocking::{multipart, Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(
    name = "carbon-tables",
    version,
    about = "Consolidate figure-of-merit tables into a knowledge graph"
)]
pub struct Cli {
    /// Service base URL.
    #[arg(
        long,
        global = true,
        env = "CARBON_TABLES_SERVER",
        default_value = "http://127.0.0.1:8080"
    )]
    pub server: String,
    /// Directory for files written by offline runs.
    #[arg(long, global = true, default_value = ".")]
    pub output: PathBuf,
    /// Delay between status polls, e.g. `500ms`, `2s` or plain seconds.
    #[arg(long, global = true, default_value = "1s", value_parser = parse_interval)]
    pub poll_interval: Duration,
    /// Poll until the job reaches a terminal state.
    #[arg(long, global = true)]
    pub wait: bool,
    /// Run locally instead of talking to a server.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Material base for offline runs; the bundled one when omitted.
    #[arg(long, global = true)]
    pub mb: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upload a document JSON file or a zip of them. Offline, only validates.
    Upload {
        path: PathBuf,
        /// Replace documents whose doc_id already exists.
        #[arg(long)]
        overwrite: bool,
    },
    /// Start a consolidation job. Offline, the arguments are corpus paths.
    Consolidate {
        ids: Vec<String>,
        /// Consolidate every uploaded document.
        #[arg(long, conflicts_with = "ids")]
        all: bool,
        #[command(flatten)]
        options: OptionArgs,
    },
    /// Show a job's status.
    Status { job_id: String },
    /// Save a finished job's graph.json, features.json and features.csv into <out>.
    Download { job_id: String, out: PathBuf },
    /// Search consolidated records.
    Query {
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        material: Option<String>,
        #[arg(long)]
        fom: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        min_value: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        max_value: Option<String>,
        /// Extra `key=value` filters; repeatable.
        #[arg(long = "filter", value_parser = parse_pair)]
        filters: Vec<(String, String)>,
        /// Graph file to search offline; defaults to <output>/graph.json.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Offline ingest, consolidate and encode: writes graph.json,
    /// features.json and features.csv into <out>.
    Run {
        corpus: PathBuf,
        mb: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        options: OptionArgs,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct OptionArgs {
    /// Also extract tables whose materials are all reference entries.
    #[arg(long)]
    pub process_known_materials: bool,
}

impl From<OptionArgs> for ConsolidationOptions {
    fn from(args: OptionArgs) -> Self {
        ConsolidationOptions {
            process_known_materials: args.process_known_materials,
        }
    }
}

fn parse_interval(raw: &str) -> Result<Duration, String> {
    let raw = raw.trim();
    let (number, scale) = if let Some(ms) = raw.strip_suffix("ms") {
        (ms, 1e-3)
    } else if let Some(s) = raw.strip_suffix('s') {
        (s, 1.0)
    } else {
        (raw, 1.0)
    };
    let seconds = number
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad interval {raw:?}: {e}"))?
        * scale;
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(format!("interval must be positive, got {raw:?}"));
    }
    Ok(Duration::from_secs_f64(seconds))
}

fn parse_pair(raw: &str) -> Result<(String, String), String> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {raw:?}"))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Local(String),
    #[error("{0}")]
    Usage(String),
    #[error("cannot reach server: {0}")]
    Network(String),
    #[error("server returned {status}: {body}")]
    Server { status: StatusCode, body: String },
    #[error("job {job_id} failed: {reason}")]
    JobFailed { job_id: String, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Local(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Network(_) => 3,
            CliError::Server { .. } => 4,
            CliError::JobFailed { .. } => 5,
        }
    }
}

impl From<reqwest::Error> for CliError {
    fn from(err: reqwest::Error) -> Self {
        CliError::Network(err.to_string())
    }
}

fn local(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Local(format!("{context}: {e}"))
}

/// Runs one invocation; stdout carries the result, stderr the diagnostics.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.offline {
        return run_offline(&cli);
    }
    match &cli.command {
        Command::Run {
            corpus,
            mb,
            out,
            options,
        } => run_pipeline(std::slice::from_ref(corpus), Some(mb), out, (*options).into()),
        Command::Upload { path, overwrite } => {
            let client = Remote::new(&cli.server)?;
            let report = client.upload(path, *overwrite)?;
            print_json(&json!(report));
            Ok(())
        }
        Command::Consolidate { ids, all, options } => {
            let client = Remote::new(&cli.server)?;
            let selection = match (all, ids.is_empty()) {
                (true, _) => json!("all"),
                (false, false) => json!(ids),
                (false, true) => return Err(CliError::Usage("give document ids or --all".into())),
            };
            let body = json!({
                "document_ids": selection,
                "options": ConsolidationOptions::from(*options),
            });
            let job = client.json(client.http.post(client.url("/jobs")).json(&body))?;
            let job_id = job["job_id"].as_str().unwrap_or_default().to_string();
            if cli.wait {
                let done = client.wait(&job_id, cli.poll_interval)?;
                print_json(&done);
                job_outcome(&done)
            } else {
                print_json(&job);
                Ok(())
            }
        }
        Command::Status { job_id } => {
            let client = Remote::new(&cli.server)?;
            let job = if cli.wait {
                client.wait(job_id, cli.poll_interval)?
            } else {
                client.status(job_id)?
            };
            print_json(&job);
            if cli.wait {
                job_outcome(&job)
            } else {
                Ok(())
            }
        }
        Command::Download { job_id, out } => {
            let client = Remote::new(&cli.server)?;
            if cli.wait {
                job_outcome(&client.wait(job_id, cli.poll_interval)?)?;
            }
            fs::create_dir_all(out).map_err(local(out.display()))?;
            for (name, path) in [
                ("graph.json", format!("/jobs/{job_id}/result")),
                ("features.json", format!("/jobs/{job_id}/features?format=json")),
                ("features.csv", format!("/jobs/{job_id}/features?format=csv")),
            ] {
                let bytes = client.bytes(client.http.get(client.url(&path)))?;
                let target = out.join(name);
                fs::write(&target, bytes).map_err(local(target.display()))?;
            }
            eprintln!("saved job {job_id} results to {}", out.display());
            Ok(())
        }
        Command::Query { graph: Some(_), .. } => run_offline(&cli),
        Command::Query {
            category,
            material,
            fom,
            min_value,
            max_value,
            filters,
            graph: None,
        } => {
            let pairs = filter_pairs(category, material, fom, min_value, max_value, filters);
            // Validate locally so a typo is a usage error, not a server one.
            RecordFilter::from_pairs(pairs.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
            let client = Remote::new(&cli.server)?;
            let records = client.knowledge(&pairs)?;
            print_json(&Value::Array(records));
            Ok(())
        }
    }
}

fn run_offline(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run {
            corpus,
            mb,
            out,
            options,
        } => run_pipeline(std::slice::from_ref(corpus), Some(mb), out, (*options).into()),
        Command::Consolidate { ids, all, options } => {
            if *all || ids.is_empty() {
                return Err(CliError::Usage(
                    "offline consolidate takes corpus paths (files or directories)".into(),
                ));
            }
            let paths: Vec<PathBuf> = ids.iter().map(PathBuf::from).collect();
            run_pipeline(&paths, cli.mb.as_ref(), &cli.output, (*options).into())
        }
        Command::Upload { path, .. } => {
            let (_, report) = read_corpus(path)?;
            print_json(&json!(report));
            Ok(())
        }
        Command::Status { .. } | Command::Download { .. } => Err(CliError::Usage(
            "status and download need a server; drop --offline".into(),
        )),
        Command::Query {
            category,
            material,
            fom,
            min_value,
            max_value,
            filters,
            graph,
        } => {
            let pairs = filter_pairs(category, material, fom, min_value, max_value, filters);
            let filter = RecordFilter::from_pairs(pairs).map_err(|e| CliError::Usage(e.to_string()))?;
            let path = graph.clone().unwrap_or_else(|| cli.output.join("graph.json"));
            let bytes = fs::read(&path).map_err(local(path.display()))?;
            let graph = KnowledgeGraph::from_json_slice(&bytes)
                .map_err(|e| CliError::Local(format!("{}: {e}", path.display())))?;
            let records = query_records(&graph, &filter);
            print_json(&json!(records));
            Ok(())
        }
    }
}

fn filter_pairs(
    category: &Option<String>,
    material: &Option<String>,
    fom: &Option<String>,
    min_value: &Option<String>,
    max_value: &Option<String>,
    extra: &[(String, String)],
) -> Vec<(String, String)> {
    let named = [
        ("category", category),
        ("material", material),
        ("fom", fom),
        ("min_value", min_value),
        ("max_value", max_value),
    ];
    named
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .chain(extra.iter().cloned())
        .collect()
}

fn job_outcome(job: &Value) -> Result<(), CliError> {
    if job["state"] == "failed" {
        return Err(CliError::JobFailed {
            job_id: job["job_id"].as_str().unwrap_or_default().to_string(),
            reason: job["error"].as_str().unwrap_or("unknown error").to_string(),
        });
    }
    Ok(())
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

/// Reads a corpus: a document file, a zip, or a directory holding either.
pub fn read_corpus(path: &Path) -> Result<(Vec<AnnotatedDocument>, IngestReport), CliError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(local(path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("json") || e.eq_ignore_ascii_case("zip"))
            })
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut documents = Vec::new();
    let mut report = IngestReport::default();
    for file in files {
        let bytes = fs::read(&file).map_err(local(file.display()))?;
        let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (docs, part) =
            parse_upload(&bytes, name).map_err(|e| CliError::Local(format!("{}: {e}", file.display())))?;
        documents.extend(docs);
        report.accepted.extend(part.accepted);
        report.rejected.extend(part.rejected);
        report.empty_documents.extend(part.empty_documents);
    }
    Ok((documents, report))
}

fn run_pipeline(
    corpus: &[PathBuf],
    mb: Option<&PathBuf>,
    out: &Path,
    options: ConsolidationOptions,
) -> Result<(), CliError> {
    let mb = match mb {
        Some(path) => MaterialBase::load(path).map_err(|e| CliError::Local(format!("{}: {e}", path.display())))?,
        None => MaterialBase::shipped(),
    };
    let mut documents = Vec::new();
    for path in corpus {
        let (docs, report) = read_corpus(path)?;
        for rejection in &report.rejected {
            eprintln!("warning: skipped {}: {}", rejection.filename, rejection.reason);
        }
        documents.extend(docs);
    }
    let output = PipelineOutput::build(&documents, &mb, options);
    output.write_to(out).map_err(local(out.display()))?;
    eprintln!(
        "{} documents, {} measurements, {} skips -> {}",
        output.graph.documents.len(),
        output.graph.measurements.len(),
        output.graph.skips.len(),
        out.display()
    );
    Ok(())
}

struct Remote {
    http: Client,
    base: String,
}

impl Remote {
    fn new(server: &str) -> Result<Self, CliError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| CliError::Local(e.to_string()))?;
        Ok(Self {
            http,
            base: server.trim_end_matches('/').to_string(),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, request: reqwest::blocking::RequestBuilder) -> Result<Response, CliError> {
        let response = request.send()?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body = response.text().unwrap_or_default();
        Err(CliError::Server { status, body })
    }

    fn json(&self, request: reqwest::blocking::RequestBuilder) -> Result<Value, CliError> {
        let response = self.send(request)?;
        let status = response.status();
        response.json().map_err(|e| CliError::Server {
            status,
            body: format!("unreadable response: {e}"),
        })
    }

    fn bytes(&self, request: reqwest::blocking::RequestBuilder) -> Result<Vec<u8>, CliError> {
        Ok(self.send(request)?.bytes()?.to_vec())
    }

    fn upload(&self, path: &Path, overwrite: bool) -> Result<Value, CliError> {
        let bytes = fs::read(path).map_err(local(path.display()))?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("upload")
            .to_string();
        let form = multipart::Form::new().part("file", multipart::Part::bytes(bytes).file_name(name));
        let request = self
            .http
            .post(self.url("/documents"))
            .query(&[("overwrite", overwrite)])
            .multipart(form);
        let response = self.send(request)?;
        if response.status() == StatusCode::MULTI_STATUS {
            eprintln!("warning: some files were rejected");
        }
        response.json().map_err(CliError::from)
    }

    fn status(&self, job_id: &str) -> Result<Value, CliError> {
        self.json(self.http.get(self.url(&format!("/jobs/{job_id}"))))
    }

    fn wait(&self, job_id: &str, interval: Duration) -> Result<Value, CliError> {
        loop {
            let job = self.status(job_id)?;
            if matches!(job["state"].as_str(), Some("succeeded" | "failed")) {
                return Ok(job);
            }
            std::thread::sleep(interval);
        }
    }

    fn knowledge(&self, pairs: &[(String, String)]) -> Result<Vec<Value>, CliError> {
        const PAGE: usize = 1000;
        let mut records = Vec::new();
        loop {
            let mut query = pairs.to_vec();
            query.push(("offset".into(), records.len().to_string()));
            query.push(("limit".into(), PAGE.to_string()));
            let response = self.send(self.http.get(self.url("/knowledge")).query(&query))?;
            let total = response
                .headers()
                .get("x-total-count")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<usize>().ok())
                .unwrap_or(0);
            let batch: Vec<Value> = response.json()?;
            let fetched = batch.len();
            records.extend(batch);
            if fetched == 0 || records.len() >= total {
                return Ok(records);
            }
        }
    }
}
