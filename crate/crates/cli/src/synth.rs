use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use spt_core::eval::{make_scene, SceneConfig, Shape, SyntheticScene};

use crate::output;
use crate::{usage, Common};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory to populate.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Training scenes per phrase.
    #[arg(long, default_value_t = 5)]
    scenes: usize,
    /// Side length of every scene in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Standard deviation of the pixel noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[command(flatten)]
    common: Common,
}

/// Phrase, file stem and shape of each synthetic class.
const CLASSES: [(&str, &str, Shape); 3] = [
    ("bright ellipse", "ellipse", Shape::Ellipse),
    ("bright disc", "disc", Shape::Ellipse),
    ("bright box", "box", Shape::Rect),
];

const EMBEDDINGS: &str = "\
4 4
bright 1 0 0 0
ellipse 0 1 0.2 0
disc 0 0.9 0.4 0
box 0 0 0 1
";

const ENTAILMENT: &str = "\
bright disc\tbright ellipse\tentails
bright ellipse\tbright box\tnot-entails
bright box\tbright disc\tnot-entails
";

const PARAPHRASE: &str = "\
bright disc\tbright ellipse\tparaphrase
bright ellipse\tbright box\tnot-paraphrase
";

const SIMILARITY: &str = "\
bright disc\tbright ellipse\tbright box\tbright ellipse
bright box\tbright ellipse\tbright box\tbright box
";

fn fmt_box(s: &SyntheticScene) -> String {
    let b = s.bbox;
    format!("{} {} {} {}", b.x0, b.y0, b.x1, b.y1)
}

pub fn run(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = args.common.config()?;
    if args.scenes == 0 {
        return Err(usage("--scenes must be positive"));
    }
    let scene = |shape: Shape, index: u64| {
        make_scene(&SceneConfig {
            width: args.size,
            height: args.size,
            shape,
            noise: args.noise,
            seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(index),
            ..SceneConfig::default()
        })
    };

    let mut manifest = String::new();
    let mut index = 0u64;
    for (phrase, stem, shape) in CLASSES {
        let _ = writeln!(manifest, "[{phrase} #0]");
        for i in 0..args.scenes {
            let s = scene(shape, index)?;
            index += 1;
            let name = format!("{stem}_{i}.pgm");
            output::write(&args.out.join("images").join(&name), s.image.to_pnm())?;
            output::write(&args.out.join("gt").join(&name), s.gt_mask.to_pgm())?;
            let _ = writeln!(manifest, "images/{name} {}", fmt_box(&s));
        }
    }
    output::write(&args.out.join("manifest.txt"), manifest)?;

    let test = scene(Shape::Ellipse, u64::MAX / 2)?;
    output::write(&args.out.join("test").join("scene.pgm"), test.image.to_pnm())?;
    output::write(&args.out.join("test").join("gt.pgm"), test.gt_mask.to_pgm())?;
    let detections = format!("\"bright ellipse\" {b} 0.9\n\"bright disc\" {b} 0.7\n\"bright box\" {b} 0.3\n", b = fmt_box(&test));
    output::write(&args.out.join("test").join("detections.txt"), detections)?;

    output::write(&args.out.join("embeddings.txt"), EMBEDDINGS)?;
    output::write(&args.out.join("entailment.tsv"), ENTAILMENT)?;
    output::write(&args.out.join("paraphrase.tsv"), PARAPHRASE)?;
    output::write(&args.out.join("similarity.tsv"), SIMILARITY)?;
    Ok(())
}
