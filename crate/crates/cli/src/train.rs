use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde_json::json;
use spt_core::imaging::{self, Image, SuperpixelMap};
use spt_core::latent::{self, em_learn, ModelMetadata, TrainingInstance};
use spt_core::relations::superpixel_mask_descriptor;
use spt_core::{ExemplarMask, PhraseKey, SegmentPhraseTable};

use crate::manifest::{self, Entry};
use crate::output;
use crate::Common;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest of `[phrase #component]` sections and `image x0 y0 x1 y1` lines.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Table file to write; superpixel maps go to `<out>.superpixels/`.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

struct Prepared {
    image: Image,
    map: SuperpixelMap,
    instance: TrainingInstance,
}

fn prepare(entry: &Entry, target: usize) -> anyhow::Result<Prepared> {
    let image = imaging::load_image(&entry.path)?;
    let map = imaging::compute_superpixels(&image, target.min(image.pixel_count()))?;
    let graph = imaging::extract_features(&image, &map)?;
    let instance = TrainingInstance::new(graph, &map, entry.bbox).with_context(|| format!("box of {}", entry.id))?;
    Ok(Prepared { image, map, instance })
}

fn slug(phrase: &str) -> String {
    phrase.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    args.common.install_pool()?;
    let cfg = args.common.config()?;
    let sections = manifest::load(&args.manifest)?;
    let sidecar_dir = output::sibling(&args.out, ".superpixels");
    let sidecar_rel = Path::new(sidecar_dir.file_name().expect("table path has a file name"));

    let mut table = SegmentPhraseTable::new(cfg.k_exemplars);
    for section in sections.iter().filter(|s| !s.entries.is_empty()) {
        let prepared = section
            .entries
            .par_iter()
            .map(|e| prepare(e, cfg.superpixel_target))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let instances: Vec<TrainingInstance> = prepared.iter().map(|p| p.instance.clone()).collect();
        let metadata = ModelMetadata {
            phrase: section.phrase.clone(),
            component_id: section.component,
            instances: 0,
        };
        let outcome = em_learn(&instances, &cfg.em(), metadata).with_context(|| format!("training [{} #{}]", section.phrase, section.component))?;

        let exemplars = prepared
            .par_iter()
            .zip(&outcome.labelings)
            .zip(&section.entries)
            .enumerate()
            .map(|(i, ((p, x), entry))| -> anyhow::Result<Option<(String, String, ExemplarMask)>> {
                if x.count_foreground() == 0 {
                    return Ok(None);
                }
                let score = latent::foreground_confidence(&outcome.model, &p.instance.graph, x)?;
                let descriptor = superpixel_mask_descriptor(&p.image, &p.map, x.as_slice())?;
                let file = format!("{}_{}_{}.txt", slug(&section.phrase), section.component, i);
                let sidecar = sidecar_rel.join(&file).to_string_lossy().replace('\\', "/");
                let ex = ExemplarMask {
                    image_id: entry.id.clone(),
                    sidecar,
                    score,
                    labels: x.0.clone(),
                    descriptor,
                };
                Ok(Some((file, p.map.to_sidecar(), ex)))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        for (file, text, ex) in exemplars.into_iter().flatten() {
            output::write(&sidecar_dir.join(file), text)?;
            table.add_exemplar(&section.phrase, ex)?;
        }

        let key = PhraseKey::new(&section.phrase, section.component)?;
        let version = table.insert(key, outcome.model.clone());
        let log = json!({
            "phrase": section.phrase,
            "component": section.component,
            "version": version,
            "instances": instances.len(),
            "iterations": outcome.iterations(),
            "energies": outcome.energies,
            "final_energy": outcome.energies.last(),
            "converged": outcome.converged,
            "seed_shrink": outcome.seed_shrink,
        });
        println!("{log}");
    }
    table.save(&args.out).with_context(|| format!("saving {}", args.out.display()))?;
    Ok(())
}
