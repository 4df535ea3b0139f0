use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use spt_core::eval::{declaration_curve, default_grid};
use spt_core::relations::{
    entail_score, entailment_matrix, paraphrase_decision, parse_relations, parse_score_matrix, parse_similarity_triples, EXACT_MAX_NODES,
};
use spt_core::spt::normalize_phrase;
use spt_core::{Choice, Config, EntailmentGraph, PhraseExemplars, SegmentPhraseTable, SolveMode};

use crate::output::{self, csv_row};
use crate::{usage, Common, Mode};

#[derive(Debug, Args)]
pub struct RelationsArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Tab-separated pairs `x y gold` (or triples `x y z choice` for simrel).
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    /// Table whose exemplars define the phrases' visual similarity.
    #[arg(long, value_name = "PATH", conflicts_with = "scores", required_unless_present = "scores")]
    table: Option<PathBuf>,
    /// Precomputed entailment scores: `N`, then `N` rows of `N` numbers.
    #[arg(long, value_name = "PATH", requires = "phrases")]
    scores: Option<PathBuf>,
    /// One phrase per line naming the rows of `--scores`.
    #[arg(long, value_name = "PATH", requires = "scores")]
    phrases: Option<PathBuf>,
    /// Also solve the transitivity-constrained entailment graph (entail mode).
    #[arg(long)]
    graph: bool,
    /// Per-item scores and decisions (CSV).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Declaration-rate curve (default: `<out>.curve.csv`).
    #[arg(long, value_name = "PATH")]
    curve: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

enum Source {
    Exemplars(HashMap<String, PhraseExemplars>),
    Matrix { index: HashMap<String, usize>, scores: Vec<Vec<f64>> },
}

impl Source {
    fn load(args: &RelationsArgs, needed: &[String]) -> anyhow::Result<Self> {
        if let (Some(scores), Some(phrases)) = (&args.scores, &args.phrases) {
            let m = parse_score_matrix(&output::read_to_string(scores)?).with_context(|| format!("parsing {}", scores.display()))?;
            let names: Vec<String> = output::read_to_string(phrases)?.lines().map(normalize_phrase).filter(|p| !p.is_empty()).collect();
            if names.len() != m.len() {
                return Err(usage(format!("{} phrases for a {}-row score matrix", names.len(), m.len())));
            }
            let index = names.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
            return Ok(Self::Matrix { index, scores: m });
        }
        let path = args.table.as_ref().expect("clap requires --table or --scores");
        let table = SegmentPhraseTable::load(path).with_context(|| format!("loading {}", path.display()))?;
        let map = needed
            .iter()
            .map(|p| Ok((p.clone(), PhraseExemplars::from_table(&table, p)?)))
            .collect::<anyhow::Result<_>>()?;
        Ok(Self::Exemplars(map))
    }

    fn entail(&self, x: &str, y: &str) -> anyhow::Result<f64> {
        match self {
            Self::Exemplars(m) => Ok(entail_score(&m[x], &m[y])?),
            Self::Matrix { index, scores } => {
                let at = |p: &str| index.get(p).copied().ok_or_else(|| usage(format!("phrase {p:?} is not in the phrase list")));
                Ok(scores[at(x)?][at(y)?])
            }
        }
    }

    fn matrix(&self, nodes: &[String]) -> anyhow::Result<Vec<Vec<f64>>> {
        match self {
            Self::Exemplars(m) => {
                let ex: Vec<PhraseExemplars> = nodes.iter().map(|p| m[p].clone()).collect();
                Ok(entailment_matrix(&ex)?)
            }
            Self::Matrix { .. } => nodes
                .iter()
                .map(|x| nodes.iter().map(|y| if x == y { Ok(0.0) } else { self.entail(x, y) }).collect())
                .collect(),
        }
    }
}

/// Distinct phrases in order of first appearance.
fn distinct<'a>(phrases: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in phrases {
        if !out.contains(p) {
            out.push(p.clone());
        }
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn run(args: &RelationsArgs) -> anyhow::Result<()> {
    args.common.install_pool()?;
    let cfg = args.common.config()?;
    if args.graph && args.mode != Mode::Entail {
        return Err(usage("--graph applies to --mode entail only"));
    }
    let text = output::read_to_string(&args.dataset)?;
    let (csv, scored) = match args.mode {
        Mode::Entail | Mode::Paraphrase => pairs(args, &cfg, &text)?,
        Mode::Simrel => triples(args, &text)?,
    };
    output::write(&args.out, csv)?;

    let curve = declaration_curve(&scored, &default_grid())?;
    let mut out = csv_row(&["fraction", "correct"]);
    for (f, c) in curve {
        out.push_str(&csv_row(&[fmt(f), c.to_string()]));
    }
    let path = args.curve.clone().unwrap_or_else(|| output::sibling(&args.out, ".curve.csv"));
    output::write(&path, out)?;
    Ok(())
}

type Rows = (String, Vec<(f64, bool)>);

fn pairs(args: &RelationsArgs, cfg: &Config, text: &str) -> anyhow::Result<Rows> {
    let data = parse_relations(text)?;
    let needed = distinct(data.iter().flat_map(|r| [&r.x, &r.y]));
    let source = Source::load(args, &needed)?;
    let scores = data
        .par_iter()
        .map(|r| Ok((source.entail(&r.x, &r.y)?, source.entail(&r.y, &r.x)?)))
        .collect::<anyhow::Result<Vec<(f64, f64)>>>()?;

    let graph = if args.graph {
        let mode = if needed.len() <= EXACT_MAX_NODES { SolveMode::Exact } else { SolveMode::Greedy };
        let g = EntailmentGraph::solve(needed.clone(), source.matrix(&needed)?, cfg.ilp_lambda, mode)?;
        Some(g)
    } else {
        None
    };
    let node = |p: &str| needed.iter().position(|q| q == p).expect("every dataset phrase is a node");

    let mut csv = match (args.mode, &graph) {
        (Mode::Entail, Some(_)) => csv_row(&["x", "y", "gold", "score", "decision", "graph_decision"]),
        (Mode::Entail, None) => csv_row(&["x", "y", "gold", "score", "decision"]),
        _ => csv_row(&["x", "y", "gold", "entail_xy", "entail_yx", "decision"]),
    };
    let mut scored = Vec::with_capacity(data.len());
    for (r, &(e_xy, e_yx)) in data.iter().zip(&scores) {
        let gold = r.gold.to_string();
        match args.mode {
            Mode::Entail => {
                let decision = e_xy > cfg.entail_threshold;
                let mut row = vec![r.x.clone(), r.y.clone(), gold, fmt(e_xy), decision.to_string()];
                if let Some(g) = &graph {
                    row.push(g.decisions[node(&r.x)][node(&r.y)].to_string());
                }
                csv.push_str(&csv_row(&row));
                scored.push((e_xy - cfg.entail_threshold, r.gold.positive()));
            }
            _ => {
                let decision = paraphrase_decision(e_xy, e_yx, cfg.paraphrase_tau);
                csv.push_str(&csv_row(&[r.x.clone(), r.y.clone(), gold, fmt(e_xy), fmt(e_yx), decision.to_string()]));
                scored.push((cfg.paraphrase_tau - (e_xy - e_yx).abs(), r.gold.positive()));
            }
        }
    }
    Ok((csv, scored))
}

fn triples(args: &RelationsArgs, text: &str) -> anyhow::Result<Rows> {
    let data = parse_similarity_triples(text)?;
    let needed = distinct(data.iter().flat_map(|t| [&t.x, &t.y, &t.z]));
    let source = Source::load(args, &needed)?;
    let scores = data
        .par_iter()
        .map(|t| Ok((source.entail(&t.x, &t.y)?, source.entail(&t.x, &t.z)?)))
        .collect::<anyhow::Result<Vec<(f64, f64)>>>()?;
    let mut csv = csv_row(&["x", "y", "z", "gold", "score_y", "score_z", "choice"]);
    let mut scored = Vec::with_capacity(data.len());
    for (t, &(sy, sz)) in data.iter().zip(&scores) {
        let choice = if sz > sy { Choice::Z } else { Choice::Y };
        let name = |c: Choice| if c == Choice::Y { t.y.clone() } else { t.z.clone() };
        csv.push_str(&csv_row(&[t.x.clone(), t.y.clone(), t.z.clone(), name(t.gold), fmt(sy), fmt(sz), name(choice)]));
        scored.push((sy - sz, t.gold == Choice::Y));
    }
    Ok((csv, scored))
}
