use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::json;
use spt_core::imaging;
use spt_core::linguistics::{load_embeddings, parse_detections, semantic_segment};
use spt_core::{SegmentPhraseTable, SemanticOutcome};

use crate::output;
use crate::Common;

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Image to segment (binary PGM or PPM).
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    /// Lines of `"phrase" x0 y0 x1 y1 score`.
    #[arg(long, value_name = "PATH")]
    detections: PathBuf,
    /// Table written by `spt train`.
    #[arg(long, value_name = "PATH")]
    table: PathBuf,
    /// Word vectors: a `vocab_size dim` header, then `word v1 .. vD`.
    #[arg(long, value_name = "PATH")]
    embeddings: PathBuf,
    /// Output mask (PGM, 0 background, 255 foreground).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// JSON report of per-mask scores (default: `<out>.json`).
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub fn run(args: &SegmentArgs) -> anyhow::Result<()> {
    args.common.install_pool()?;
    let cfg = args.common.config()?;
    let image = imaging::load_image(&args.image)?;
    let detections = parse_detections(&output::read_to_string(&args.detections)?)?;
    let table = SegmentPhraseTable::load(&args.table).with_context(|| format!("loading {}", args.table.display()))?;
    let embeddings = load_embeddings(&args.embeddings)?;

    let outcome = semantic_segment(&image, &detections, &table, &embeddings, &cfg.semantic())?;
    let mask = outcome.pixel_mask(image.width(), image.height())?;
    output::write(&args.out, mask.to_pgm())?;

    let masks = match &outcome {
        SemanticOutcome::Empty => Vec::new(),
        SemanticOutcome::Segmented { reports, .. } => reports.clone(),
    };
    let report = json!({
        "image": args.image.file_name().map(|n| n.to_string_lossy().into_owned()),
        "detections": detections.len(),
        "empty": matches!(outcome, SemanticOutcome::Empty),
        "foreground_pixels": mask.count(),
        "masks": masks,
    });
    let path = args.report.clone().unwrap_or_else(|| output::sibling(&args.out, ".json"));
    output::write(&path, format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(())
}
