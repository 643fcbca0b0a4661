//! `chartext`: run the statement-to-chart pipeline, or any stage of it,
//! from the command line.

mod exit;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use chartext_core::config::{BackendKind, Config};
use chartext_core::llm::{
    backend_from_config, run_pipeline, write_fixture_pack, GranularityOption, PipelineError, PipelineOptions,
    PipelineOutput, PipelineTrace, PromptPack, ScriptedBackend, Stage,
};
use chartext_core::quantity::parse_quantity;
use chartext_core::recommend::{characterize, reconcile, rule_recommend, ChartChoice};
use chartext_core::render::{render_svg, ChartSpec, Theme};
use chartext_core::table::AnnotatedTable;
use clap::{Args, Parser, Subcommand, ValueEnum};

use exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "chartext", version, about = "Turn a statement in a document into annotated tables and charts")]
struct Cli {
    /// TOML configuration file. PORT, DATA_DIR and BACKEND_* override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write tables, specs, charts and the trace.
    Run(RunArgs),
    /// Parse a numeric phrase and print the quantity as JSON.
    ParseQuantity {
        phrase: String,
    },
    /// Recommend a chart for a table JSON file.
    Recommend {
        table: PathBuf,
        /// A proposed ChartChoice to reconcile against the rules.
        #[arg(long)]
        suggestion: Option<PathBuf>,
    },
    /// Render a chart spec JSON file to SVG.
    Render {
        spec: PathBuf,
        #[arg(long)]
        theme: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline against scripted responses and write a fixture pack.
    RecordFixtures(RecordArgs),
    /// Print a published JSON schema.
    Schema {
        #[arg(value_enum)]
        name: SchemaName,
    },
}

#[derive(Debug, Args)]
struct StatementArgs {
    /// Document used as the context.
    #[arg(long)]
    doc: PathBuf,
    /// Statement text.
    #[arg(long, conflicts_with = "span", required_unless_present = "span")]
    statement: Option<String>,
    /// Statement as a byte span of the document, `offset:length`.
    #[arg(long)]
    span: Option<Span>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    input: StatementArgs,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Fixture pack for the mock backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value = "fine")]
    granularity: GranularityOption,
    #[arg(long)]
    out: PathBuf,
    /// Prompt pack directory overriding the built-in templates.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    theme: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    #[command(flatten)]
    input: StatementArgs,
    /// JSON object mapping stage names to response lists.
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value = "both")]
    granularity: GranularityOption,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemaName {
    AnnotatedTable,
    ChartSpec,
    ChartChoice,
    Trace,
}

impl SchemaName {
    fn text(self) -> &'static str {
        match self {
            SchemaName::AnnotatedTable => include_str!("../schemas/annotated_table.schema.json"),
            SchemaName::ChartSpec => include_str!("../schemas/chart_spec.schema.json"),
            SchemaName::ChartChoice => include_str!("../schemas/chart_choice.schema.json"),
            SchemaName::Trace => include_str!("../schemas/trace.schema.json"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    offset: usize,
    length: usize,
}

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (o, l) = s.split_once(':').ok_or("expected offset:length")?;
        let offset = o.trim().parse().map_err(|_| format!("bad offset {o:?}"))?;
        let length = l.trim().parse().map_err(|_| format!("bad length {l:?}"))?;
        Ok(Span { offset, length })
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| CliError::Input(e.to_string()))?,
        None => Config::default(),
    };
    config
        .apply_env(|name| std::env::var(name).ok())
        .map_err(|e| CliError::Input(e.to_string()))?;

    match cli.command {
        Command::Run(args) => run(args, config),
        Command::ParseQuantity { phrase } => {
            let q = parse_quantity(&phrase).map_err(|e| CliError::Input(e.to_string()))?;
            println!("{}", pretty(&q));
            Ok(())
        }
        Command::Recommend { table, suggestion } => {
            let table = AnnotatedTable::from_json(&read(&table)?).map_err(|e| CliError::Input(e.to_string()))?;
            let rules = &config.recommender;
            let profile = characterize(&table, rules).map_err(|_| CliError::NoData)?;
            let suggestion: Option<ChartChoice> = match suggestion {
                Some(path) => Some(serde_json::from_str(&read(&path)?).map_err(|e| CliError::Input(e.to_string()))?),
                None => None,
            };
            let choice = reconcile(suggestion.as_ref(), &rule_recommend(&profile, rules), &profile, rules);
            println!("{}", pretty(&choice));
            Ok(())
        }
        Command::Render { spec, theme, out } => {
            let spec: ChartSpec = serde_json::from_str(&read(&spec)?).map_err(|e| CliError::Input(e.to_string()))?;
            let svg = render_svg(&spec, &load_theme(theme.as_deref())?).map_err(|e| CliError::Render(e.to_string()))?;
            match out {
                Some(path) => write(&path, &svg),
                None => {
                    print!("{svg}");
                    Ok(())
                }
            }
        }
        Command::RecordFixtures(args) => record(args, config),
        Command::Schema { name } => {
            print!("{}", name.text());
            Ok(())
        }
    }
}

fn run(args: RunArgs, mut config: Config) -> Result<(), CliError> {
    if let Some(b) = args.backend {
        config.backend.kind = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Live => BackendKind::Live,
        };
    }
    if args.fixtures.is_some() {
        config.backend.fixtures = args.fixtures.clone();
    }
    if config.backend.kind == BackendKind::Mock && config.backend.fixtures.is_none() {
        return Err(CliError::Input("the mock backend needs --fixtures".into()));
    }
    let (statement, context) = read_statement(&args.input)?;
    let backend = backend_from_config(&config.backend).map_err(|e| CliError::Input(e.to_string()))?;
    let options = PipelineOptions {
        granularity: args.granularity,
        prompts: load_prompts(args.prompts.as_deref())?,
        theme: load_theme(args.theme.as_deref())?,
        config,
    };
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    match run_pipeline(&statement, &context, &backend, &options) {
        Ok(output) => {
            let (tables, charts) = write_outputs(&args.out, &output, args.granularity)?;
            println!("wrote {tables} table(s) and {charts} chart(s) to {}", args.out.display());
            Ok(())
        }
        Err(PipelineError { error, trace }) => {
            write_trace(&args.out, &trace)?;
            Err(CliError::Stage(error))
        }
    }
}

fn record(args: RecordArgs, config: Config) -> Result<(), CliError> {
    let (statement, context) = read_statement(&args.input)?;
    let script: serde_json::Value =
        serde_json::from_str(&read(&args.script)?).map_err(|e| CliError::Input(format!("script: {e}")))?;
    let backend = ScriptedBackend::from_script(&script).map_err(|e| CliError::Input(e.to_string()))?;
    let options = PipelineOptions {
        granularity: args.granularity,
        prompts: load_prompts(args.prompts.as_deref())?,
        config,
        ..PipelineOptions::default()
    };
    let output = run_pipeline(&statement, &context, &backend, &options).map_err(|e| CliError::Stage(e.error))?;
    for stage in Stage::MODEL_STAGES {
        let left = backend.remaining(stage);
        if left > 0 {
            eprintln!("warning: {left} unused script response(s) for {stage}");
        }
    }
    let fixtures = output.trace.to_fixtures();
    write_fixture_pack(&args.out, &fixtures).map_err(|e| CliError::Io(e.to_string()))?;
    println!("wrote {} fixture(s) to {}", fixtures.len(), args.out.display());
    Ok(())
}

/// Writes per-topic artifacts, one subdirectory per level when both
/// granularities ran. Returns the table and chart counts.
fn write_outputs(out: &Path, output: &PipelineOutput, granularity: GranularityOption) -> Result<(usize, usize), CliError> {
    let (mut tables, mut charts) = (0, 0);
    for level in &output.outputs {
        let dir = match granularity {
            GranularityOption::Both => out.join(level.granularity.to_string()),
            _ => out.to_path_buf(),
        };
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (k, topic) in level.topics.iter().enumerate() {
            write(&dir.join(format!("table-{k}.json")), &topic.table.to_json())?;
            tables += 1;
            if let (Some(spec), Some(svg)) = (&topic.spec, &topic.svg) {
                write(&dir.join(format!("spec-{k}.json")), &pretty(spec))?;
                write(&dir.join(format!("chart-{k}.svg")), svg)?;
                charts += 1;
            }
        }
    }
    write_trace(out, &output.trace)?;
    Ok((tables, charts))
}

fn write_trace(out: &Path, trace: &PipelineTrace) -> Result<(), CliError> {
    write(&out.join("trace.json"), &trace.to_json())
}

fn read_statement(input: &StatementArgs) -> Result<(String, String), CliError> {
    let context = read(&input.doc)?;
    let statement = match (&input.statement, input.span) {
        (Some(text), _) => text.clone(),
        (None, Some(Span { offset, length })) => offset
            .checked_add(length)
            .and_then(|end| context.get(offset..end))
            .ok_or_else(|| {
                CliError::Input(format!(
                    "span {offset}:{length} is outside the document ({} bytes) or splits a character",
                    context.len()
                ))
            })?
            .to_string(),
        (None, None) => return Err(CliError::Input("give --statement or --span".into())),
    };
    Ok((statement, context))
}

fn load_prompts(dir: Option<&Path>) -> Result<PromptPack, CliError> {
    dir.map_or_else(|| Ok(PromptPack::builtin()), |d| PromptPack::load(d).map_err(|e| CliError::Input(e.to_string())))
}

fn load_theme(path: Option<&Path>) -> Result<Theme, CliError> {
    path.map_or_else(|| Ok(Theme::default()), |p| Theme::load(p).map_err(|e| CliError::Input(e.to_string())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_parse() {
        assert_eq!("39:265".parse::<Span>(), Ok(Span { offset: 39, length: 265 }));
        assert!("39".parse::<Span>().is_err());
        assert!("a:1".parse::<Span>().is_err());
    }

    #[test]
    fn published_schemas_are_json() {
        for name in SchemaName::value_variants() {
            let v: serde_json::Value = serde_json::from_str(name.text()).unwrap();
            assert!(v.get("$schema").is_some());
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
