//! Acceptance criteria A1 to A11. Each criterion prints one PASS or FAIL
//! line; the process exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spt_core::eval::{declaration_curve, make_scene, seg_metrics, SceneConfig, Shape, Texture};
use spt_core::gmm::GaussianMixture;
use spt_core::imaging::{compute_superpixels, extract_features, Image, PixelMask, SuperpixelMap};
use spt_core::latent::{em_learn, segment_with_model, EmConfig, LatentError, ModelMetadata, SegmentationModel, TrainingInstance};
use spt_core::linguistics::{fuse_and_cut, message_pass, EmbeddingTable, WeightedMask};
use spt_core::mrf::{brute_force_infer, energy, min_cut_infer, MrfProblem, PairwiseTerm};
use spt_core::relations::{entail_score, is_paraphrase, is_transitive, objective, paraphrase_decision, solve_entailment_graph, PhraseExemplars, SolveMode};
use spt_core::spt::{ExemplarMask, PhraseKey, SegmentPhraseTable, TableError};

const A1_TOL: f64 = 1e-9;
const A1_BUDGET: Duration = Duration::from_secs(30);
const A2_MIN_JACCARD: f64 = 0.90;
const A2_MIN_PRECISION: f64 = 0.95;
const A2_BUDGET: Duration = Duration::from_secs(120);
const A3_TOL: f64 = 1e-6;
const A6_TOL: f64 = 1e-9;
const A6_BUDGET: Duration = Duration::from_secs(60);
const A9_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_problem(rng: &mut ChaCha8Rng) -> MrfProblem {
    let n = rng.random_range(1..=14);
    let unary = (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.35) {
                edges.push(PairwiseTerm {
                    i,
                    j,
                    weight: rng.random_range(0.0..5.0),
                });
            }
        }
    }
    MrfProblem::new(unary, edges).unwrap()
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let p = random_problem(&mut rng);
        let cut = energy(&p, &min_cut_infer(&p).map_err(|e| e.to_string())?).unwrap();
        let brute = energy(&p, &brute_force_infer(&p).map_err(|e| e.to_string())?).unwrap();
        worst = worst.max((cut - brute).abs());
        ensure((cut - brute).abs() <= A1_TOL, || format!("case {case}: min-cut energy {cut} vs exhaustive {brute}"))?;
    }
    let t = start.elapsed();
    ensure(t < A1_BUDGET, || format!("took {t:?}"))?;
    Ok(format!("500 problems, max |ΔE| = {worst:.1e}, {t:.2?}"))
}

fn instance(img: &Image, bbox: spt_core::BoundingBox, target: usize) -> (SuperpixelMap, TrainingInstance) {
    let map = compute_superpixels(img, target).unwrap();
    let graph = extract_features(img, &map).unwrap();
    let inst = TrainingInstance::new(graph, &map, bbox).unwrap();
    (map, inst)
}

fn meta(phrase: &str) -> ModelMetadata {
    ModelMetadata {
        phrase: phrase.into(),
        component_id: 0,
        instances: 0,
    }
}

fn a2() -> Outcome {
    let start = Instant::now();
    let scene = |seed| {
        make_scene(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap()
    };
    let train: Vec<TrainingInstance> = (0..5).map(|s| instance(&scene(s).image, scene(s).bbox, 200).1).collect();
    let out = em_learn(&train, &EmConfig::default(), meta("bright ellipse")).map_err(|e| e.to_string())?;
    let (mut j, mut p) = (0.0, 0.0);
    for seed in 100..105 {
        let s = scene(seed);
        let (map, inst) = instance(&s.image, s.bbox, 200);
        let x = segment_with_model(&out.model, &inst.graph).map_err(|e| e.to_string())?;
        let m = seg_metrics(&map.lift(x.as_slice()).unwrap(), &s.gt_mask).unwrap();
        j += m.jaccard / 5.0;
        p += m.precision / 5.0;
    }
    let t = start.elapsed();
    let detail = format!("mean J = {j:.4}, mean P = {p:.4}, {} EM rounds, {t:.2?}", out.iterations());
    ensure(j >= A2_MIN_JACCARD && p >= A2_MIN_PRECISION && t < A2_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn a3() -> Outcome {
    let shapes = [Shape::Ellipse, Shape::Rect, Shape::Blob];
    let mut rounds = 0;
    let mut longest = 0;
    let mut worst_rise = f64::NEG_INFINITY;
    for run in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let shape = shapes[rng.random_range(0..3)];
        // low-contrast, noisy scenes keep EM iterating past the first round
        let noise = rng.random_range(0.03..0.1);
        let bg = Texture {
            mean: rng.random_range(0.1..0.4),
            stripes: rng.random_range(0.0..0.15),
        };
        let fg = Texture {
            mean: bg.mean + 3.0 * noise + rng.random_range(0.01..0.15),
            stripes: rng.random_range(0.0..0.15),
        };
        let target = rng.random_range(60..=200);
        let instances: Vec<TrainingInstance> = (0..rng.random_range(1..=3))
            .map(|i| {
                let s = make_scene(&SceneConfig {
                    width: 48,
                    height: 48,
                    shape,
                    fg,
                    bg,
                    noise,
                    seed: run * 10 + i,
                })
                .unwrap();
                instance(&s.image, s.bbox, target).1
            })
            .collect();
        let cfg = EmConfig {
            k: rng.random_range(1..=5),
            seed: run,
            seed_shrink: rng.random_range(0.3..0.9),
            ..EmConfig::default()
        };
        let out = match em_learn(&instances, &cfg, meta("run")) {
            Ok(o) => o,
            Err(e @ LatentError::EnergyIncreased { .. }) => return Err(format!("run {run}: {e}")),
            Err(e) => return Err(format!("run {run}: unexpected error {e}")),
        };
        for w in out.energies.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
            ensure(w[1] <= w[0] + A3_TOL, || format!("run {run}: energy rose {} -> {}", w[0], w[1]))?;
        }
        rounds += out.energies.len();
        longest = longest.max(out.energies.len());
    }
    Ok(format!("50 runs, {rounds} E-steps (longest run {longest}), largest change between rounds {worst_rise:.3e}"))
}

fn a4() -> Outcome {
    // 12x12 grid of 4x4 superpixels on a flat image: every edge has
    // boundary 0 and weight 1
    let side = 48;
    let labels = (0..side * side).map(|p| (p / side / 4) * 12 + (p % side) / 4).collect();
    let map = SuperpixelMap::from_labels(side, side, labels).unwrap();
    let img = Image::filled(side, side, 0.5).unwrap();
    let graph = extract_features(&img, &map).unwrap();
    ensure(graph.boundary_prob.iter().all(|&b| b == 0.0), || "flat image has a non-zero boundary".into())?;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| (0..144).map(|i| (r0..r1).contains(&(i / 12)) && (c0..c1).contains(&(i % 12))).collect::<Vec<bool>>();
    // two in-context phrases cover the two halves of the object; the
    // out-of-context one fires on a small patch elsewhere
    let a = block(2, 10, 0, 3);
    let b = block(2, 10, 3, 6);
    let c = block(5, 7, 9, 10);

    let mut t = EmbeddingTable::new(3);
    let cin = 0.9f64;
    let s = (1.0 - cin * cin).sqrt();
    let y = (0.05 - 0.05 * cin) / s;
    t.insert("rearing", vec![1.0, 0.0, 0.0]).unwrap();
    t.insert("jumping", vec![cin, s, 0.0]).unwrap();
    t.insert("cap", vec![0.05, y, (1.0 - 0.0025 - y * y).sqrt()]).unwrap();
    let psi_in = t.psi("rearing", "jumping").unwrap();
    let psi_out = t.psi("rearing", "cap").unwrap().max(t.psi("jumping", "cap").unwrap());
    ensure((psi_in - 0.9).abs() < 1e-12 && psi_out <= 0.05 + 1e-12, || format!("ψ(in,in) = {psi_in}, ψ(in,out) = {psi_out}"))?;

    let masks = vec![
        WeightedMask { phrase: "rearing".into(), mask: a.clone(), score: 1.0 },
        WeightedMask { phrase: "jumping".into(), mask: b.clone(), score: 1.0 },
        WeightedMask { phrase: "cap".into(), mask: c, score: 1.0 },
    ];
    let post = message_pass(&masks, &t).map_err(|e| e.to_string())?;
    ensure(post[2].score < post[0].score && post[2].score < post[1].score, || format!("post scores {:?}", post.iter().map(|m| m.score).collect::<Vec<_>>()))?;

    let truth: Vec<bool> = a.iter().zip(&b).map(|(p, q)| *p || *q).collect();
    let gt = map.lift(&truth).unwrap();
    let jaccard = |ms: &[WeightedMask]| -> Result<f64, String> {
        let x = fuse_and_cut(ms, &graph, 0.05).map_err(|e| e.to_string())?;
        Ok(seg_metrics(&map.lift(x.as_slice()).unwrap(), &gt).unwrap().jaccard)
    };
    let (without, with) = (jaccard(&masks)?, jaccard(&post)?);
    let detail = format!(
        "post scores ({:.3}, {:.3}, {:.3}); J without = {without:.4}, with = {with:.4}",
        post[0].score, post[1].score, post[2].score
    );
    ensure(with > without, || detail.clone())?;
    Ok(detail)
}

fn random_exemplars(rng: &mut ChaCha8Rng, phrase: &str) -> PhraseExemplars {
    let n = rng.random_range(1..=10);
    let d = (0..n).map(|_| (0..60).map(|_| rng.random_range(0.0..1.0f64).powi(2)).collect()).collect();
    PhraseExemplars::new(phrase, d).unwrap()
}

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let x = random_exemplars(&mut rng, "x");
        let y = random_exemplars(&mut rng, "y");
        let (xy, yx) = (entail_score(&x, &y).unwrap(), entail_score(&y, &x).unwrap());
        ensure(xy + yx == 0.0, || format!("case {case}: {xy} + {yx} != 0"))?;
        ensure(entail_score(&x, &x).unwrap() == 0.0, || format!("case {case}: entail(x, x) != 0"))?;
    }
    Ok("100 pairs antisymmetric and zero on the diagonal, exactly".into())
}

/// Best objective over all transitive assignments, by enumeration.
fn enumerate_best(scores: &[Vec<f64>], lambda: f64) -> f64 {
    let n = scores.len();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y))).collect();
    let bit = |x: usize, y: usize| edges.iter().position(|&e| e == (x, y)).unwrap();
    let mut triples = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if x != y && y != z && x != z {
                    triples.push(((1u32 << bit(x, y)) | (1u32 << bit(y, z)), 1u32 << bit(x, z)));
                }
            }
        }
    }
    let gains: Vec<f64> = edges.iter().map(|&(x, y)| scores[x][y] - lambda).collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..1 << edges.len() {
        if triples.iter().any(|&(both, implied)| mask & both == both && mask & implied == 0) {
            continue;
        }
        let v: f64 = (0..edges.len()).filter(|&k| mask >> k & 1 == 1).map(|k| gains[k]).sum();
        best = best.max(v);
    }
    best
}

fn a6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    for (n, count) in [(4, 200), (5, 50)] {
        for case in 0..count {
            let scores: Vec<Vec<f64>> = (0..n).map(|x| (0..n).map(|y| if x == y { 0.0 } else { rng.random_range(-1.0..1.0) }).collect()).collect();
            let lambda = rng.random_range(0.0..0.3);
            let w = solve_entailment_graph(&scores, lambda, SolveMode::Exact).map_err(|e| e.to_string())?;
            ensure(is_transitive(&w), || format!("N={n} case {case}: infeasible output"))?;
            let (got, want) = (objective(&scores, &w, lambda), enumerate_best(&scores, lambda));
            ensure((got - want).abs() <= A6_TOL, || format!("N={n} case {case}: objective {got} vs enumeration {want}"))?;
            checked += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < A6_BUDGET, || format!("took {t:?}"))?;
    Ok(format!("{checked} instances optimal and transitive, {t:.2?}"))
}

fn a7() -> Outcome {
    let mut s = vec![vec![0.0; 3]; 3];
    for (x, y, v) in [(0, 1, 0.9), (1, 2, 0.8), (0, 2, -0.05)] {
        s[x][y] = v;
        s[y][x] = -v;
    }
    let w = solve_entailment_graph(&s, 0.1, SolveMode::Exact).map_err(|e| e.to_string())?;
    let obj = objective(&s, &w, 0.1);
    ensure(w[0][1] && w[1][2] && w[0][2], || format!("decisions {w:?}"))?;
    Ok(format!("W_ab, W_bc and closure W_ac selected, objective {obj:.2}"))
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let x = random_exemplars(&mut rng, "x");
        let y = random_exemplars(&mut rng, "y");
        let tau = rng.random_range(1e-4..0.2);
        ensure(is_paraphrase(&x, &y, tau).unwrap() == is_paraphrase(&y, &x, tau).unwrap(), || format!("case {case}: asymmetric at τ = {tau}"))?;
        let e = entail_score(&x, &y).unwrap();
        let boundary = (2.0 * e).abs();
        ensure(boundary == 0.0 || is_paraphrase(&x, &y, boundary).unwrap(), || format!("case {case}: boundary τ = 2|e| rejected"))?;
    }
    ensure(paraphrase_decision(0.2, -0.2, 0.4), || "entail 0.2 at τ 0.4 rejected".into())?;
    ensure(!paraphrase_decision(0.3, -0.3, 0.5), || "entail 0.3 at τ 0.5 accepted".into())?;
    Ok("100 pairs symmetric; τ = 2|entail| accepted".into())
}

fn a9() -> Outcome {
    let mask = |cols: usize| PixelMask::new(10, 10, (0..100).map(|p| p % 10 < cols).collect()).unwrap();
    let m = seg_metrics(&mask(6), &mask(5)).unwrap();
    ensure((m.precision - 0.9).abs() <= A9_TOL && (m.jaccard - 0.8333).abs() <= 1e-4 && (m.jaccard - 50.0 / 60.0).abs() <= A9_TOL, || format!("{m:?}"))?;
    let curve = declaration_curve(&[(0.9, true), (0.5, false), (0.3, true), (0.1, true)], &[0.5]).unwrap();
    ensure(curve == vec![(0.5, 1)], || format!("curve {curve:?}"))?;
    Ok(format!("P = {:.4}, J = {:.4}, curve at 0.5 = {}", m.precision, m.jaccard, curve[0].1))
}

fn random_table(rng: &mut ChaCha8Rng) -> SegmentPhraseTable {
    let words = ["horse", "jumping", "rearing", "dog", "running", "red", "cap"];
    let phrase = |rng: &mut ChaCha8Rng| (0..rng.random_range(1..=2)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ");
    let mixture = |rng: &mut ChaCha8Rng, k: usize, d: usize| {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        GaussianMixture::new(
            w.iter().map(|v| v / total).collect(),
            (0..k).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect(),
            (0..k).map(|_| (0..d).map(|_| rng.random_range(1e-3..2.0)).collect()).collect(),
        )
        .unwrap()
    };
    let mut t = SegmentPhraseTable::new(rng.random_range(1..=10));
    for _ in 0..rng.random_range(0..6) {
        let p = phrase(rng);
        let c = rng.random_range(0..3);
        let d = rng.random_range(1..=24);
        let (kf, kb) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let m = SegmentationModel::new(mixture(rng, kf, d), mixture(rng, kb, d), rng.random_range(0.0..1.0), ModelMetadata { phrase: p.clone(), component_id: c, instances: rng.random_range(1..9) }).unwrap();
        t.insert(PhraseKey::new(&p, c).unwrap(), m);
    }
    for i in 0..rng.random_range(0..15) {
        let p = phrase(rng);
        let n = rng.random_range(0..300);
        let ex = ExemplarMask {
            image_id: format!("img{i}.pgm"),
            sidecar: format!("sp/{i}.txt"),
            score: rng.random_range(-10.0..10.0),
            labels: (0..n).map(|_| rng.random_bool(0.4)).collect(),
            descriptor: (0..60).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        t.add_exemplar(&p, ex).unwrap();
    }
    t
}

fn a10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut sample = None;
    for case in 0..20 {
        let t = random_table(&mut rng);
        let path = dir.path().join(format!("t{case}.spt"));
        t.save(&path).map_err(|e| e.to_string())?;
        let back = SegmentPhraseTable::load(&path).map_err(|e| e.to_string())?;
        ensure(back == t, || format!("case {case}: round trip differs"))?;
        if !t.is_empty() {
            sample = Some(fs::read(&path).unwrap());
        }
    }
    let good = sample.ok_or("no non-empty table generated")?;
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        SegmentPhraseTable::from_bytes(&b)
    };
    let mid = good.len() / 2;
    ensure(matches!(corrupt(&|b| b[mid] ^= 0x10), Err(TableError::Checksum { .. })), || "bit flip not reported as checksum error".into())?;
    ensure(matches!(corrupt(&|b| b.truncate(b.len() - 7)), Err(TableError::Truncated { .. })), || "truncation not reported".into())?;
    ensure(matches!(corrupt(&|b| b[0] = b'X'), Err(TableError::VersionMismatch { .. })), || "bad magic not reported".into())?;
    ensure(matches!(corrupt(&|b| b[8] = 9), Err(TableError::VersionMismatch { version: 9, .. })), || "bad version not reported".into())?;
    Ok("20 tables deep-equal after save/load; checksum, truncation, magic and version errors raised".into())
}

fn spt(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spt")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("spt {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(&p, root, out);
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
}

fn pipeline(root: &Path, jobs: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    spt(&["synth", "--out", &p(""), "--seed", "7"])?;
    let log = spt(&["train", "--manifest", &p("manifest.txt"), "--out", &p("out/table.spt"), "--seed", "7", "--jobs", jobs])?;
    fs::write(root.join("out/train.log"), log).unwrap();
    spt(&[
        "segment", "--image", &p("test/scene.pgm"), "--detections", &p("test/detections.txt"), "--table", &p("out/table.spt"),
        "--embeddings", &p("embeddings.txt"), "--out", &p("out/mask.pgm"), "--seed", "7", "--jobs", jobs,
    ])?;
    for (mode, data, extra) in [("entail", "entailment.tsv", Some("--graph")), ("paraphrase", "paraphrase.tsv", None), ("simrel", "similarity.tsv", None)] {
        let (out, data, table) = (p(&format!("out/{mode}.csv")), p(data), p("out/table.spt"));
        let mut args = vec!["relations", "--mode", mode, "--dataset", &data, "--table", &table, "--out", &out, "--jobs", jobs];
        args.extend(extra);
        spt(&args)?;
    }
    let mut files = BTreeMap::new();
    collect(&root.join("out"), root, &mut files);
    Ok(files)
}

fn a11() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(d1.path(), "1")?;
    let second = pipeline(d2.path(), "4")?;
    ensure(first.keys().eq(second.keys()), || "different artifact sets".into())?;
    for (path, bytes) in &first {
        ensure(&second[path] == bytes, || format!("{} differs between runs", path.display()))?;
    }
    let bytes: usize = first.values().map(Vec::len).sum();
    Ok(format!("{} artifacts ({bytes} bytes) identical across reruns with 1 and 4 workers", first.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("A1 min-cut exactness", a1),
        ("A2 latent-EM recovery", a2),
        ("A3 EM monotonicity", a3),
        ("A4 linguistic-constraint gain", a4),
        ("A5 entailment antisymmetry", a5),
        ("A6 ILP exactness", a6),
        ("A7 transitivity closure", a7),
        ("A8 paraphrase symmetry", a8),
        ("A9 metric correctness", a9),
        ("A10 table round trip", a10),
        ("A11 determinism", a11),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
