//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero only when a criterion could not be evaluated at all.
//!
//! Trained models are cached under the cargo target directory, keyed by a
//! digest of dataset and configuration; training is deterministic, so a
//! cached model is the model a fresh run would produce. Set
//! `MEGAN_ACCEPTANCE_FRESH=1` to retrain.

mod support;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use megan_core::concepts::{self, ConceptCluster, MiningConfig};
use megan_core::graph::{Dataset, Split};
use megan_core::hdbscan::{canonical, hdbscan};
use megan_core::io;
use megan_core::model::{Megan, ModelConfig};
use megan_core::prototype::{self, GaConfig, Prototype};
use megan_core::synthetic::{self, GeneratorConfig, Motif, MotifEffect};
use megan_core::training::{self, Metrics, PositiveView, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{clustering, contrastive, gradcheck, motifs};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Desk-scale settings for one synthetic benchmark.
struct Setup {
    name: &'static str,
    generator: GeneratorConfig,
    train: TrainConfig,
    mining: MiningConfig,
    ga: GaConfig,
}

fn model_config(data: &Dataset) -> ModelConfig {
    ModelConfig {
        hidden_dim: 32,
        projection_dim: 64,
        head_hidden: vec![32],
        ..ModelConfig::for_task(data.task_kind, data.node_dim(), data.edge_dim(), data.output_dim())
    }
}

fn ga() -> GaConfig {
    GaConfig {
        epsilon: 0.95,
        ..GaConfig::default()
    }
}

fn ba_setup() -> Setup {
    Setup {
        name: "ba2motifs",
        generator: GeneratorConfig::ba2motifs(1000, 1),
        train: TrainConfig {
            epochs: 80,
            tau: 0.5,
            positive_view: PositiveView::Subgraph,
            ..TrainConfig::default()
        },
        mining: MiningConfig::default(),
        ga: ga(),
    }
}

fn rb_setup() -> Setup {
    Setup {
        name: "rbmotifs",
        generator: GeneratorConfig::rbmotifs(3000, 1),
        train: TrainConfig {
            epochs: 60,
            tau: 0.5,
            threshold: 0.15,
            positive_view: PositiveView::Subgraph,
            ..TrainConfig::default()
        },
        mining: MiningConfig {
            activity_threshold: 0.5,
            ..MiningConfig::default()
        },
        ga: ga(),
    }
}

/// A trained model with its mined and prototyped concepts.
struct Run {
    data: Dataset,
    model: Megan,
    metrics: Metrics,
    concepts: Vec<ConceptCluster>,
    prototypes: Vec<Prototype>,
    train_seconds: Option<f64>,
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn run(setup: &Setup) -> megan_core::Result<Run> {
    let data = if setup.generator.motif_probabilities.is_empty() {
        synthetic::generate_ba2motifs(&setup.generator)?
    } else {
        synthetic::generate_rbmotifs(&setup.generator)?
    };
    let config = model_config(&data);
    let key = io::sha256_hex(
        format!(
            "{}|{}|{}",
            io::dataset_digest(&data),
            serde_json::to_string(&config).unwrap(),
            serde_json::to_string(&setup.train).unwrap()
        )
        .as_bytes(),
    );
    let dir = cache_dir().join(format!("{}-{}", setup.name, &key[..16]));
    let fresh = std::env::var_os("MEGAN_ACCEPTANCE_FRESH").is_some();
    let (model, train_seconds) = if !fresh && dir.join("model.bin").exists() {
        (Megan::load(&dir, "model")?, None)
    } else {
        let start = Instant::now();
        let mut model = Megan::new(config)?;
        training::train(&mut model, &data, &setup.train)?;
        let seconds = start.elapsed().as_secs_f64();
        std::fs::create_dir_all(&dir).map_err(|e| megan_core::Error::Checkpoint(e.to_string()))?;
        model.save(&dir, "model")?;
        (model, Some(seconds))
    };
    let metrics = training::evaluate(&model, &data, Split::Test)?;
    let concepts = concepts::mine(&model, &data, &setup.mining)?;
    let prototypes = concepts
        .iter()
        .map(|c| prototype::evolve(c, &model, &data, &setup.ga).map(|e| e.prototype()))
        .collect::<megan_core::Result<Vec<_>>>()?;
    Ok(Run {
        data,
        model,
        metrics,
        concepts,
        prototypes,
        train_seconds,
    })
}

fn timing(run: &Run) -> String {
    match run.train_seconds {
        Some(s) => format!("trained in {:.1} min", s / 60.0),
        None => "cached model".to_string(),
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn criterion_1() -> Outcome {
    let mut failures = Vec::new();
    let mut checks = 0;
    for seed in 0..8u64 {
        for (name, f) in gradcheck::OPERATION_GROUPS {
            checks += 1;
            if let Err(e) = f(seed) {
                failures.push(format!("{name} seed {seed}: {e}"));
            }
        }
    }
    for seed in 0..3u64 {
        for view in [PositiveView::Pooled, PositiveView::Subgraph] {
            checks += 1;
            if let Err(e) = gradcheck::full_model_check(seed, view) {
                failures.push(format!("full model {view:?} seed {seed}: {e}"));
            }
        }
    }
    let detail = match failures.first() {
        None => format!("{checks} operation-group and full-model checks within tolerance"),
        Some(first) => format!("{} of {checks} failed, first: {first}", failures.len()),
    };
    Outcome::new(failures.is_empty(), detail)
}

fn criterion_2(run: &Run) -> Outcome {
    let m = &run.metrics;
    let pass = m.accuracy.is_some_and(|a| a >= 0.95)
        && m.node_auc.is_some_and(|a| a >= 0.90)
        && m.edge_auc.is_some_and(|a| a >= 0.90);
    Outcome::new(
        pass,
        format!(
            "accuracy {} node AUC {} edge AUC {} on {} test graphs ({})",
            fmt(m.accuracy),
            fmt(m.node_auc),
            fmt(m.edge_auc),
            m.count,
            timing(run)
        ),
    )
}

/// Share of members whose graph carries each planted motif.
fn motif_shares(concept: &ConceptCluster, data: &Dataset) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in &concept.members {
        for name in &data.items[m.item].motifs {
            *counts.entry(name.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, n)| (k, n as f64 / concept.size as f64))
        .collect()
}

fn criterion_3(run: &Run) -> Outcome {
    let mut covered = BTreeMap::from([("house".to_string(), 0), ("cycle".to_string(), 0)]);
    let mut impure = Vec::new();
    for c in &run.concepts {
        let shares = motif_shares(c, &run.data);
        let (best, share) = shares
            .iter()
            .filter(|(k, _)| covered.contains_key(*k))
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.clone(), *v))
            .unwrap_or_default();
        if share >= 0.9 {
            *covered.get_mut(&best).unwrap() += 1;
        } else {
            impure.push(format!("channel {} concept {} ({best} {share:.2})", c.channel, c.index));
        }
    }
    let pass = !run.concepts.is_empty() && impure.is_empty() && covered.values().all(|&n| n > 0);
    let mut detail = format!(
        "{} concepts: {} house, {} cycle",
        run.concepts.len(),
        covered["house"],
        covered["cycle"]
    );
    if !impure.is_empty() {
        let _ = write!(detail, "; below 90%: {}", impure.join(", "));
    }
    Outcome::new(pass, detail)
}

fn criterion_4(run: &Run) -> Outcome {
    let m = &run.metrics;
    let pass = m.r_squared.is_some_and(|r| r >= 0.90)
        && m.node_auc.is_some_and(|a| a >= 0.95)
        && m.edge_auc.is_some_and(|a| a >= 0.90);
    Outcome::new(
        pass,
        format!(
            "R2 {} node AUC {} edge AUC {} on {} test graphs ({})",
            fmt(m.r_squared),
            fmt(m.node_auc),
            fmt(m.edge_auc),
            m.count,
            timing(run)
        ),
    )
}

fn effect(name: &str) -> f64 {
    name.split('+')
        .map(|n| match synthetic::motif_by_name(n).map(|m| m.effect) {
            Some(MotifEffect::Value(v)) => v,
            _ => f64::NAN,
        })
        .sum()
}

fn criterion_5(run: &Run) -> Outcome {
    let labelled: Vec<(String, f64, &ConceptCluster)> = run
        .concepts
        .iter()
        .map(|c| {
            let (label, share) = concepts::dominant_motif(c, &run.data);
            (label, share, c)
        })
        .collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for motif in synthetic::rbmotifs_motifs() {
        let truth = effect(&motif.name);
        let best = labelled
            .iter()
            .filter(|(l, s, _)| *l == motif.name && *s >= 0.7)
            .min_by(|a, b| (a.2.contribution_mean - truth).abs().total_cmp(&(b.2.contribution_mean - truth).abs()));
        match best {
            Some((_, _, c)) if (c.contribution_mean - truth).abs() <= 0.3 => {
                parts.push(format!("{} {:+.2} (true {truth:+})", motif.name, c.contribution_mean))
            }
            Some((_, _, c)) => {
                pass = false;
                parts.push(format!("{} {:+.2} off (true {truth:+})", motif.name, c.contribution_mean));
            }
            None => {
                pass = false;
                parts.push(format!("{} missing", motif.name));
            }
        }
    }
    let multi_present = run
        .data
        .items
        .iter()
        .any(|it| (0..2).any(|k| concepts::motif_label(it, k).contains('+')));
    let multi: Vec<String> = labelled
        .iter()
        .filter(|(l, s, c)| l.contains('+') && *s >= 0.7 && (c.contribution_mean - effect(l)).abs() <= 0.5)
        .map(|(l, _, c)| format!("{l} {:+.2}", c.contribution_mean))
        .collect();
    if multi_present && multi.is_empty() {
        pass = false;
        parts.push("no additive multi-motif concept".into());
    } else {
        parts.extend(multi);
    }
    Outcome::new(pass, parts.join("; "))
}

/// For each motif, the largest concept dominated by it must evolve a
/// prototype that is the motif plus at most two nodes.
fn prototype_recovery(run: &Run, motifs_: &[Motif], dominant: impl Fn(&ConceptCluster) -> Option<String>) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut tally = (0, 0);
    let node_dim = run.model.config().node_dim;
    let edge_dim = run.model.config().edge_dim;
    let judged: Vec<(Option<String>, bool, usize)> = run
        .concepts
        .iter()
        .zip(&run.prototypes)
        .map(|(c, p)| {
            let label = dominant(c);
            let ok = label.as_deref().and_then(synthetic::motif_by_name).is_some_and(|m| {
                p.feasible && p.graph.to_graph(node_dim, edge_dim).is_ok_and(|g| motifs::recovers(&g, &m, 2))
            });
            (label, ok, p.graph.node_count)
        })
        .collect();
    for (label, ok, _) in &judged {
        if label.as_deref().is_some_and(|l| motifs_.iter().any(|m| m.name == l)) {
            tally.1 += 1;
            tally.0 += usize::from(*ok);
        }
    }
    for motif in motifs_ {
        let largest = judged
            .iter()
            .zip(&run.concepts)
            .filter(|((l, _, _), _)| l.as_deref() == Some(motif.name.as_str()))
            .max_by_key(|(_, c)| c.size);
        match largest {
            Some(((_, ok, n), c)) => {
                pass &= *ok;
                parts.push(format!(
                    "{} {} ({} nodes, concept of {})",
                    motif.name,
                    if *ok { "recovered" } else { "not recovered" },
                    n,
                    c.size
                ));
            }
            None => {
                pass = false;
                parts.push(format!("{} has no concept", motif.name));
            }
        }
    }
    parts.push(format!("{}/{} single-motif concepts recovered overall", tally.0, tally.1));
    (pass, parts.join("; "))
}

fn criterion_6(ba: &Run, rb: &Run) -> Outcome {
    let (ba_pass, ba_detail) = prototype_recovery(ba, &synthetic::ba2motifs_motifs(), |c| {
        motif_shares(c, &ba.data)
            .into_iter()
            .find(|(_, s)| *s >= 0.9)
            .map(|(k, _)| k)
    });
    let (rb_pass, rb_detail) = prototype_recovery(rb, &synthetic::rbmotifs_motifs(), |c| {
        let (label, share) = concepts::dominant_motif(c, &rb.data);
        (share >= 0.7).then_some(label)
    });
    Outcome::new(ba_pass && rb_pass, format!("BA2Motifs: {ba_detail} | RbMotifs: {rb_detail}"))
}

fn criterion_7() -> Outcome {
    let mut mismatches = Vec::new();
    let mut instances = 0;
    for seed in 0..40u64 {
        let centers = 1 + (seed % 3) as usize;
        let per = 8 + (seed * 7 % 25) as usize;
        let spread = 0.02 + 0.3 * ((seed * 13 % 17) as f64 / 17.0);
        let (mcs, ms) = (3 + (seed % 5) as usize, 2 + (seed % 4) as usize);
        let p = clustering::blobs(centers, per, 5, spread, seed);
        instances += 1;
        if hdbscan(&p, mcs, ms) != clustering::oracle(&p, mcs, ms) {
            mismatches.push(format!("oracle seed {seed}"));
        }
    }
    for seed in 0..10u64 {
        let p = clustering::blobs(3, 30, 6, 0.05 + 0.02 * seed as f64, 100 + seed);
        let base = hdbscan(&p, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..p.nrows()).collect();
            perm.shuffle(&mut rng);
            let labels = hdbscan(&p.select(ndarray::Axis(0), &perm), 5, 4);
            let mut back = vec![None; perm.len()];
            for (new, &old) in perm.iter().enumerate() {
                back[old] = labels[new];
            }
            if canonical(&back) != base {
                mismatches.push(format!("shuffle seed {seed}"));
                break;
            }
        }
    }
    Outcome::new(
        mismatches.is_empty(),
        format!(
            "{instances} planted-blob instances against the oracle, 10 instances x 20 shuffles{}",
            if mismatches.is_empty() { String::new() } else { format!("; mismatches: {}", mismatches.join(", ")) }
        ),
    )
}

fn criterion_8() -> Outcome {
    let value = contrastive::orthogonal_negatives();
    let hand = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
    let mut pass = (value - hand).abs() < 1e-6 && (value - contrastive::ORTHOGONAL_NEGATIVES).abs() < 1e-4;
    let mut failures = 0;
    for seed in 0..50u64 {
        let batch = 2 + (seed % 5) as usize;
        let tau = 0.05 + 0.04 * seed as f64;
        if contrastive::decreasing_in_positive_cosine(seed, batch, tau).is_err() {
            failures += 1;
        }
    }
    pass &= failures == 0;
    Outcome::new(
        pass,
        format!("orthogonal-negatives loss {value:.6} (hand {hand:.6}); monotone in 50 of {} sweeps", 50 - failures),
    )
}

fn criterion_9() -> Outcome {
    let rb = synthetic::generate_rbmotifs(&GeneratorConfig::rbmotifs(25, 2)).unwrap();
    let path = std::path::Path::new("roundtrip.json");
    let text = io::dataset_to_string(&rb);
    let back = io::dataset_from_str(&text, path);
    let roundtrip = back.as_ref().is_ok_and(|b| *b == rb && io::dataset_to_string(b) == text);

    // a generic file with feature widths unrelated to the synthetic tasks
    let generic = r#"{"task_kind":"regression","items":[
{"id":"m0","node_count":3,"edges":[[0,1],[1,2]],"node_features":[[1,0,0,2],[0,1,0,1],[0,0,1,0]],"edge_features":[[1,0],[0,1]],"target":[0.5]},
{"id":"m1","node_count":2,"edges":[[0,1]],"node_features":[[0,1,1,0],[1,1,0,0]],"edge_features":[[0.5,0.5]],"target":[-1.25]}
],"split":{"m0":"train","m1":"test"}}"#;
    let ingested = io::dataset_from_str(generic, path).is_ok_and(|d| {
        d.node_dim() == 4 && d.edge_dim() == 2 && d.items[0].graph.edge_count() == 4 && io::dataset_from_str(&io::dataset_to_string(&d), path).is_ok_and(|e| e == d)
    });
    Outcome::new(
        roundtrip && ingested,
        format!(
            "Mutagenicity/AqSolDB results are out of scope at desk scale; dataset round trip {}, generic 4x2-feature file {}",
            if roundtrip { "exact" } else { "broken" },
            if ingested { "ingested and round-tripped" } else { "rejected" }
        ),
    )
}

fn report(n: usize, title: &str, outcome: &Outcome, start: Instant) -> bool {
    println!(
        "criterion {n} {}: {title}: {} [{:.1}s]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
    outcome.pass
}

fn main() {
    let started = Instant::now();
    let mut results = Vec::new();

    let t = Instant::now();
    results.push(report(1, "gradient correctness", &criterion_1(), t));

    let t = Instant::now();
    let ba = match run(&ba_setup()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("BA2Motifs pipeline failed: {e}");
            std::process::exit(1);
        }
    };
    results.push(report(2, "BA2Motifs accuracy and explanation AUC", &criterion_2(&ba), t));
    let t = Instant::now();
    results.push(report(3, "BA2Motifs concept purity", &criterion_3(&ba), t));

    let t = Instant::now();
    let rb = match run(&rb_setup()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("RbMotifs pipeline failed: {e}");
            std::process::exit(1);
        }
    };
    results.push(report(4, "RbMotifs regression and explanation AUC", &criterion_4(&rb), t));
    let t = Instant::now();
    results.push(report(5, "RbMotifs concept contributions", &criterion_5(&rb), t));
    let t = Instant::now();
    results.push(report(6, "prototype recovery", &criterion_6(&ba, &rb), t));

    let t = Instant::now();
    results.push(report(7, "clustering oracle equivalence", &criterion_7(), t));
    let t = Instant::now();
    results.push(report(8, "contrastive loss sanity", &criterion_8(), t));
    let t = Instant::now();
    results.push(report(9, "real-world results (scope) and dataset ingestion", &criterion_9(), t));

    let passed = results.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1} min",
        results.len(),
        started.elapsed().as_secs_f64() / 60.0
    );
}
