use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::backend::{CompletionBackend, Stage};
use super::prompts::PromptPack;
use super::stages::{validate_quotes, Session};
use super::{PipelineError, PipelineTrace, StageError, StageErrorKind};
use crate::config::Config;
use crate::recommend::{characterize, reconcile, rule_recommend, ChartChoice, TableProfile};
use crate::render::{build_spec, render_svg, ChartSpec, Theme};
use crate::table::AnnotatedTable;
use crate::topic::{Granularity, KeyMessage, Topic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GranularityOption {
    #[default]
    Fine,
    Coarse,
    Both,
}

impl GranularityOption {
    pub fn levels(self) -> &'static [Granularity] {
        match self {
            GranularityOption::Fine => &[Granularity::Fine],
            GranularityOption::Coarse => &[Granularity::Coarse],
            GranularityOption::Both => &[Granularity::Fine, Granularity::Coarse],
        }
    }
}

impl FromStr for GranularityOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fine" => Ok(GranularityOption::Fine),
            "coarse" => Ok(GranularityOption::Coarse),
            "both" => Ok(GranularityOption::Both),
            other => Err(format!("unknown granularity {other:?} (expected fine, coarse or both)")),
        }
    }
}

impl fmt::Display for GranularityOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GranularityOption::Fine => "fine",
            GranularityOption::Coarse => "coarse",
            GranularityOption::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub granularity: GranularityOption,
    pub config: Config,
    pub prompts: PromptPack,
    pub theme: Theme,
}

/// How a topic's chart type was settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDecision {
    pub topic: String,
    pub profile: TableProfile,
    pub rule_choice: ChartChoice,
    pub llm_choice: Option<ChartChoice>,
    /// Why the model's suggestion was unusable, if it was.
    pub llm_error: Option<String>,
    pub choice: ChartChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicOutput {
    pub topic: Topic,
    pub table: AnnotatedTable,
    /// `None` when the table has nothing to chart.
    pub choice: Option<ChartChoice>,
    pub spec: Option<ChartSpec>,
    pub svg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityOutput {
    pub granularity: Granularity,
    pub topics: Vec<TopicOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub messages: Vec<KeyMessage>,
    pub outputs: Vec<GranularityOutput>,
    pub trace: PipelineTrace,
}

impl PipelineOutput {
    pub fn level(&self, granularity: Granularity) -> Option<&GranularityOutput> {
        self.outputs.iter().find(|o| o.granularity == granularity)
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicOutput> {
        self.outputs.iter().flat_map(|o| &o.topics)
    }

    pub fn tables(&self) -> impl Iterator<Item = &AnnotatedTable> {
        self.topics().map(|t| &t.table)
    }

    pub fn charts(&self) -> impl Iterator<Item = (&ChartSpec, &str)> {
        self.topics().filter_map(|t| Some((t.spec.as_ref()?, t.svg.as_deref()?)))
    }
}

/// Statement and context in, tables and charts out. Stages run in order,
/// topic by topic, so the trace order is deterministic.
pub fn run_pipeline(
    statement: &str,
    context: &str,
    backend: &dyn CompletionBackend,
    options: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let mut session = Session::new(backend, &options.prompts, &options.config);
    match drive(&mut session, statement, context, options) {
        Ok((messages, outputs)) => Ok(PipelineOutput {
            messages,
            outputs,
            trace: session.into_trace(),
        }),
        Err(error) => Err(PipelineError {
            error,
            trace: session.into_trace(),
        }),
    }
}

type Driven = (Vec<KeyMessage>, Vec<GranularityOutput>);

fn drive(session: &mut Session<'_>, statement: &str, context: &str, options: &PipelineOptions) -> Result<Driven, StageError> {
    let messages = session.extract_key_messages(statement, context)?;
    let mut outputs = Vec::new();
    for &granularity in options.granularity.levels() {
        let topics = session.cluster_topics(&messages, granularity)?;
        let mut results = Vec::with_capacity(topics.len());
        for topic in topics {
            results.push(run_topic(session, topic, context, options)?);
        }
        outputs.push(GranularityOutput {
            granularity,
            topics: results,
        });
    }
    if !outputs.iter().flat_map(|o| &o.topics).any(|t| t.svg.is_some()) {
        return Err(StageError::new(Stage::Recommend, None, StageErrorKind::NoData));
    }
    Ok((messages, outputs))
}

fn run_topic(
    session: &mut Session<'_>,
    topic: Topic,
    context: &str,
    options: &PipelineOptions,
) -> Result<TopicOutput, StageError> {
    let id = topic.id.clone();
    let tag = |stage, kind| StageError::new(stage, Some(&id), kind);

    let schema = session.create_schema(&topic)?;
    let table = session.populate_table(&schema, context)?;
    let failures = validate_quotes(&table, context);
    if !failures.is_empty() {
        return Err(tag(
            Stage::ValidateQuotes,
            StageErrorKind::GroundingFailure(format!("{} ungrounded quote(s)", failures.len())),
        ));
    }
    let table = session.infer_values(&table, context)?;
    if !table.has_numeric_value() {
        tracing::info!(topic = %id, "no numeric values, skipping chart");
        return Ok(TopicOutput {
            topic,
            table,
            choice: None,
            spec: None,
            svg: None,
        });
    }
    let topic = session.classify_sentiment(&topic, &table)?;

    let rules = &options.config.recommender;
    let profile = characterize(&table, rules).map_err(|_| tag(Stage::Recommend, StageErrorKind::NoData))?;
    let rule_choice = rule_recommend(&profile, rules);
    let (llm_choice, llm_error) = match session.suggest_chart(&table) {
        Ok(choice) => (Some(choice), None),
        Err(StageError {
            kind: StageErrorKind::InvalidBinding(reason),
            ..
        }) => (None, Some(reason)),
        Err(e) => return Err(e),
    };
    let choice = reconcile(llm_choice.as_ref(), &rule_choice, &profile, rules);
    session.trace_mut().decisions.push(super::ChartDecision {
        topic: id.clone(),
        profile,
        rule_choice,
        llm_choice,
        llm_error,
        choice: choice.clone(),
    });

    let spec = build_spec(&table, &choice, &topic).map_err(|e| tag(Stage::Render, e.into()))?;
    let svg = render_svg(&spec, &options.theme).map_err(|e| tag(Stage::Render, e.into()))?;
    Ok(TopicOutput {
        topic,
        table,
        choice: Some(choice),
        spec: Some(spec),
        svg: Some(svg),
    })
}
