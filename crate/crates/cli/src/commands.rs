use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use sevec::facets::{dominant_cluster_fraction, spherical_kmeans};
use sevec::features::{load_feature_set, save_feature_set, FeatureSet};
use sevec::net::{load_network, save_network, Aggregation, Network, SaliencyRegistry};
use sevec::perturb::{perturbation_study, PerturbConfig};
use sevec::pointing::{
    accuracy_curve, group_boxes, localization_accuracy, read_boxes, CurveSet, PointingCase, PointingRegistry,
};
use sevec::retrieval::{retrieve_by_sevec, retrieve_by_unit, Hit};
use sevec::sevec::{binarize, compute_sevec, cosine_distance, diversity, in_vicinity, SemanticVector};
use sevec::stats::pearson;
use sevec::store::{classify_nearest_sevec, explain_with_concepts, relevance_matrix, ConceptStore, Verdict};
use sevec::synthetic::{concept_fixture, tap_features, ConceptFixtureConfig};
use sevec::tensor::{read_tensor, write_tensor, Tensor};

use crate::summary::RunSummary;
use crate::{Command, Common};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::ComputeSevec {
            features,
            concept,
            name,
            common,
        } => compute_sevec_cmd(&features, &concept, &name, &common),
        Command::Retrieve {
            features,
            store,
            concept,
            unit,
            n,
            common,
        } => retrieve(&features, store.as_deref(), concept.as_deref(), unit, n, &common),
        Command::Vicinity {
            features,
            store,
            concept,
            r,
            common,
        } => vicinity(&features, &store, &concept, r, &common),
        Command::Partition { features, store, common } => partition(&features, &store, &common),
        Command::Saliency {
            network,
            input,
            target,
            method,
            semantic,
            threshold,
            layer,
            aggregation,
            common,
        } => saliency(
            &SaliencyArgs {
                network,
                input,
                target,
                method,
                semantic,
                threshold,
                layer,
                aggregation,
            },
            &common,
        ),
        Command::Eval {
            boxes,
            maps,
            containment,
            m,
            common,
        } => eval(&boxes, &maps, containment, m, &common),
        Command::Perturb {
            network,
            features,
            store,
            threshold,
            common,
        } => perturb(&network, &features, &store, threshold, &common),
        Command::Diversity {
            features,
            store,
            concept,
            scores,
            common,
        } => diversity_cmd(&features, store.as_deref(), &concept, scores.as_deref(), &common),
        Command::Relevance { store, common } => relevance(&store, &common),
        Command::Facets {
            features,
            concept,
            k,
            common,
        } => facets(&features, &concept, k, &common),
        Command::Explain {
            features,
            sample,
            store,
            threshold,
            common,
        } => explain(&features, &sample, &store, threshold, &common),
        Command::MakeFixture { common } => make_fixture(&common),
    }
}

fn prepare_out(common: &Common) -> Result<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))
}

fn features_from(path: &Path) -> Result<FeatureSet> {
    load_feature_set(path).with_context(|| format!("loading features {}", path.display()))
}

fn store_from(path: &Path) -> Result<ConceptStore> {
    ConceptStore::load(path).with_context(|| format!("loading store {}", path.display()))
}

/// The concept vector of one label, with the ids of that label's all-zero rows.
fn sevec_for_label(fs: &FeatureSet, label: &str) -> Result<(SemanticVector, Vec<String>)> {
    let subset = fs.select_label(label)?;
    let b = binarize(&subset)?;
    Ok((compute_sevec(&b.matrix, label)?, b.dropped))
}

fn labels_or_all(fs: &FeatureSet, requested: &[String]) -> Result<Vec<String>> {
    if !requested.is_empty() {
        return Ok(requested.to_vec());
    }
    let all = fs.distinct_labels();
    if all.is_empty() {
        bail!("feature set has no labels");
    }
    Ok(all)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn compute_sevec_cmd(features: &Path, concepts: &[String], name: &str, common: &Common) -> Result<()> {
    let fs = features_from(features)?;
    let labels = labels_or_all(&fs, concepts)?;
    prepare_out(common)?;
    let manifest = common.out.join(format!("{name}.manifest"));
    let mut store = if manifest.exists() {
        store_from(&manifest)?
    } else {
        ConceptStore::new(fs.dim())
    };

    let mut summary = RunSummary::new("compute-sevec", common.seed);
    summary
        .param("features", features.display())
        .param("concepts", labels.join(","))
        .param("name", name)
        .param("out", common.out.display());
    let mut report = String::new();
    for label in &labels {
        let (v, dropped) = sevec_for_label(&fs, label)?;
        let top: Vec<String> = v
            .top_rate_units(10)
            .iter()
            .map(|(u, r)| format!("{u}:{r:.3}"))
            .collect();
        let _ = writeln!(
            report,
            "{label}: M = {}, n = {}, dropped = {}, top rate units = {}",
            v.sample_count,
            v.dim(),
            dropped.len(),
            top.join(" ")
        );
        summary
            .param(&format!("{label}.samples"), v.sample_count)
            .param(&format!("{label}.dropped"), dropped.len())
            .param(&format!("{label}.top_rate_units"), top.join(" "));
        store.insert(v)?;
    }
    let path = store.save(&common.out, name)?;
    summary.param("store", path.display());
    summary.write(&common.out)?;
    print!("{report}");
    Ok(())
}

fn write_hits(path: &Path, hits: &[Hit], score_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["rank", "sample_id", score_column])?;
    for (rank, h) in hits.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), h.sample_id.clone(), format!("{:.6}", h.score)])?;
    }
    w.flush()?;
    Ok(())
}

fn retrieve(
    features: &Path,
    store: Option<&Path>,
    concept: Option<&str>,
    unit: Option<usize>,
    n: usize,
    common: &Common,
) -> Result<()> {
    let fs = features_from(features)?;
    let mut summary = RunSummary::new("retrieve", common.seed);
    summary.param("features", features.display()).param("n", n);
    let (hits, column) = match (unit, store, concept) {
        (Some(u), _, _) => {
            summary.param("unit", u);
            (retrieve_by_unit(&fs, u, n)?, "activation")
        }
        (None, Some(store), Some(concept)) => {
            summary
                .param("store", store.display())
                .param("concept", concept);
            let store = store_from(store)?;
            (retrieve_by_sevec(&fs, store.require(concept)?, n)?, "cosine")
        }
        _ => bail!("either --unit or both --store and --concept are required"),
    };
    prepare_out(common)?;
    write_hits(&common.out.join("retrieve.csv"), &hits, column)?;
    summary.param("returned", hits.len());
    summary.write(&common.out)?;
    println!("{} samples written to retrieve.csv", hits.len());
    Ok(())
}

fn vicinity(features: &Path, store: &Path, concept: &str, r: f32, common: &Common) -> Result<()> {
    let fs = features_from(features)?;
    let store_ = store_from(store)?;
    let v = store_.require(concept)?;
    let mut rows = Vec::new();
    for i in 0..fs.len() {
        let row = fs.row(i);
        // a zero representation has no direction and is never in a vicinity
        if row.iter().all(|&x| x == 0.0) {
            continue;
        }
        if in_vicinity(row, v, r)? {
            rows.push((fs.sample_id(i).to_string(), cosine_distance(row, &v.direction)?));
        }
    }
    prepare_out(common)?;
    let path = common.out.join("vicinity.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["sample_id", "distance"])?;
    for (id, d) in &rows {
        w.write_record([id.clone(), format!("{d:.6}")])?;
    }
    w.flush()?;
    let mut summary = RunSummary::new("vicinity", common.seed);
    summary
        .param("features", features.display())
        .param("store", store.display())
        .param("concept", concept)
        .param("r", r)
        .param("inside", rows.len());
    summary.write(&common.out)?;
    println!("{} of {} samples within distance {r}", rows.len(), fs.len());
    Ok(())
}

fn partition(features: &Path, store: &Path, common: &Common) -> Result<()> {
    let fs = features_from(features)?;
    let store_ = store_from(store)?;
    prepare_out(common)?;
    let path = common.out.join("partition.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["sample_id", "concept", "cosine"])?;
    let mut skipped = 0;
    for i in 0..fs.len() {
        if fs.row(i).iter().all(|&x| x == 0.0) {
            skipped += 1;
            continue;
        }
        let (name, score) = classify_nearest_sevec(fs.row(i), &store_)?;
        w.write_record([fs.sample_id(i).to_string(), name, format!("{score:.6}")])?;
    }
    w.flush()?;
    let mut summary = RunSummary::new("partition", common.seed);
    summary
        .param("features", features.display())
        .param("store", store.display())
        .param("assigned", fs.len() - skipped)
        .param("skipped_zero_rows", skipped);
    summary.write(&common.out)?;
    Ok(())
}

struct SaliencyArgs {
    network: PathBuf,
    input: PathBuf,
    target: String,
    method: String,
    semantic: Option<String>,
    threshold: f32,
    layer: Option<String>,
    aggregation: String,
}

fn resolve_target(net: &Network, target: &str) -> Result<usize> {
    net.class_index(target)
        .ok_or_else(|| anyhow!("unknown target class '{target}'"))
}

fn saliency(args: &SaliencyArgs, common: &Common) -> Result<()> {
    let net = load_network(&args.network).with_context(|| format!("loading network {}", args.network.display()))?;
    let input = read_tensor(&args.input)?;
    let target = resolve_target(&net, &args.target)?;
    let aggregation: Aggregation = args.aggregation.parse()?;
    let registry = SaliencyRegistry::with_builtin();
    let method = registry.get(&args.method)?;

    let mut summary = RunSummary::new("saliency", common.seed);
    summary
        .param("network", args.network.display())
        .param("input", args.input.display())
        .param("target", &args.target)
        .param("method", method.name())
        .param("aggregation", &args.aggregation);

    let mask = match &args.semantic {
        Some(spec) => {
            // split on the last colon so store paths may contain colons
            let (store_path, concept) = spec
                .rsplit_once(':')
                .ok_or_else(|| anyhow!("--semantic expects STORE:CONCEPT, got '{spec}'"))?;
            let store = store_from(Path::new(store_path))?;
            let mask = net.semantic_mask(store.require(concept)?, args.threshold, args.layer.as_deref())?;
            summary
                .param("semantic", spec)
                .param("threshold", args.threshold)
                .param("layer", &net.layers()[mask.layer].name)
                .param("mask_popcount", mask.mask.popcount())
                .param("mask_width", mask.mask.len());
            println!("mask popcount = {} of {}", mask.mask.popcount(), mask.mask.len());
            Some(mask)
        }
        None => None,
    };

    let (_, trace) = net.forward(&input)?;
    let map = method.compute(&net, &trace, target, mask.as_ref(), aggregation)?;
    prepare_out(common)?;
    write_tensor(&map.raw, common.out.join("raw.stf"))?;
    write_tensor(&map.aggregate, common.out.join("map.stf"))?;
    sevec::net::write_pgm(&map.aggregate, common.out.join("map.pgm"))?;
    summary.write(&common.out)?;
    Ok(())
}

fn eval(boxes: &Path, maps: &[String], containment: f64, m: f64, common: &Common) -> Result<()> {
    let records = read_boxes(boxes)?;
    let grouped = group_boxes(&records);
    if grouped.is_empty() {
        bail!("no boxes in {}", boxes.display());
    }
    let registry = PointingRegistry::with_builtin(containment);
    let original = registry.get("original")?;
    let generalized = registry.get("generalized")?;
    let center = registry.get("center")?;

    let mut curves = CurveSet::default();
    let mut rows = Vec::new();
    let mut center_acc = None;
    for spec in maps {
        let (method, dir) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--maps expects METHOD=DIR, got '{spec}'"))?;
        let mut cases = Vec::with_capacity(grouped.len());
        for ((image, class), bbs) in &grouped {
            let path = Path::new(dir).join(format!("{image}.{class}.stf"));
            let map = read_tensor(&path).with_context(|| format!("reading map {}", path.display()))?;
            cases.push(PointingCase::new(format!("{image}.{class}"), &map, bbs.clone())?);
        }
        curves.push(method, accuracy_curve(&cases, generalized)?);
        // the center baseline ignores map values, so any method's cases do
        if center_acc.is_none() {
            center_acc = Some(localization_accuracy(&cases, center, m)?);
        }
        rows.push((
            method.to_string(),
            localization_accuracy(&cases, original, m)?,
            localization_accuracy(&cases, generalized, m)?,
        ));
    }

    prepare_out(common)?;
    curves.write_csv(common.out.join("curves.csv"))?;
    curves.write_differences_csv(common.out.join("differences.csv"))?;
    let center_acc = center_acc.expect("at least one map set");
    let path = common.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["method", "original", "generalized", "center"])?;
    for (method, o, g) in &rows {
        w.write_record([method.clone(), format!("{o:.6}"), format!("{g:.6}"), format!("{center_acc:.6}")])?;
    }
    w.flush()?;

    let mut summary = RunSummary::new("eval", common.seed);
    summary
        .param("boxes", boxes.display())
        .param("maps", maps.join(" "))
        .param("containment", containment)
        .param("m", m)
        .param("cases", grouped.len())
        .param("center", format!("{center_acc:.6}"));
    for (method, o, g) in &rows {
        summary
            .param(&format!("{method}.original"), format!("{o:.6}"))
            .param(&format!("{method}.generalized"), format!("{g:.6}"));
    }
    summary.write(&common.out)?;
    Ok(())
}

fn perturb(network: &Path, features: &Path, store: &Path, threshold: f32, common: &Common) -> Result<()> {
    let net = load_network(network).with_context(|| format!("loading network {}", network.display()))?;
    let fs = features_from(features)?;
    let store_ = store_from(store)?;
    let config = PerturbConfig {
        threshold,
        seed: common.seed,
    };
    let report = perturbation_study(&net, &fs, &store_, &config)?;
    prepare_out(common)?;
    write_file(&common.out.join("perturb.txt"), &report.to_text())?;
    write_file(&common.out.join("perturb.kv"), &report.to_key_values())?;
    let mut summary = RunSummary::new("perturb", common.seed);
    summary
        .param("network", network.display())
        .param("features", features.display())
        .param("store", store.display())
        .param("threshold", threshold)
        .param("samples", report.sample_count);
    for (mode, d) in &report.modes {
        summary.param(mode, d);
    }
    summary.write(&common.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["concept", "score"] {
        bail!("{}: expected header concept,score", path.display());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let score: f64 = rec[1]
            .trim()
            .parse()
            .with_context(|| format!("{}: bad score '{}'", path.display(), &rec[1]))?;
        out.push((rec[0].trim().to_string(), score));
    }
    Ok(out)
}

fn diversity_cmd(
    features: &Path,
    store: Option<&Path>,
    concepts: &[String],
    scores: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let fs = features_from(features)?;
    let store_ = store.map(store_from).transpose()?;
    let scores = scores.map(read_scores).transpose()?;
    let labels = match &scores {
        Some(s) if concepts.is_empty() => s.iter().map(|(c, _)| c.clone()).collect(),
        _ => labels_or_all(&fs, concepts)?,
    };

    let mut values = Vec::with_capacity(labels.len());
    for label in &labels {
        let b = binarize(&fs.select_label(label)?)?;
        let v = match &store_ {
            Some(s) => s.require(label)?.clone(),
            None => compute_sevec(&b.matrix, label)?,
        };
        values.push((label.clone(), b.matrix.len(), diversity(&b.matrix, &v)?));
    }

    prepare_out(common)?;
    let path = common.out.join("diversity.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["concept", "samples", "diversity"])?;
    for (c, n, d) in &values {
        w.write_record([c.clone(), n.to_string(), format!("{d:.6}")])?;
    }
    w.flush()?;

    let mut summary = RunSummary::new("diversity", common.seed);
    summary
        .param("features", features.display())
        .param("concepts", labels.join(","));
    if let Some(s) = store {
        summary.param("store", s.display());
    }
    if let Some(scores) = &scores {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, _, d) in &values {
            let score = scores
                .iter()
                .find(|(sc, _)| sc == c)
                .ok_or_else(|| anyhow!("no score for concept '{c}'"))?
                .1;
            x.push(*d);
            y.push(score);
        }
        let corr = pearson(&x, &y)?;
        summary.param("pearson_r", corr.r).param("pearson_p", corr.p);
        println!("pearson r = {:.6}, p = {:.6}", corr.r, corr.p);
    }
    summary.write(&common.out)?;
    Ok(())
}

fn relevance(store: &Path, common: &Common) -> Result<()> {
    let store_ = store_from(store)?;
    let matrix = relevance_matrix(&store_)?;
    prepare_out(common)?;
    matrix.save(&common.out, "relevance")?;
    let names: Vec<&str> = store_.names().collect();
    let path = common.out.join("relevance.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["concept".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for (i, a) in names.iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend((0..names.len()).map(|j| format!("{:.6}", matrix.get(i, j))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut summary = RunSummary::new("relevance", common.seed);
    summary
        .param("store", store.display())
        .param("concepts", names.join(","));
    summary.write(&common.out)?;
    Ok(())
}

fn facets(features: &Path, concept: &str, k: usize, common: &Common) -> Result<()> {
    let fs = features_from(features)?;
    let b = binarize(&fs.select_label(concept)?)?;
    let clustering = spherical_kmeans(&b.matrix, k, common.seed)?;
    prepare_out(common)?;
    let path = common.out.join("facets.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["sample_id", "cluster"])?;
    for (id, c) in b.matrix.sample_ids().iter().zip(&clustering.assignments) {
        w.write_record([id.clone(), c.to_string()])?;
    }
    w.flush()?;
    let flat: Vec<f32> = clustering.centroids.iter().flatten().copied().collect();
    write_tensor(
        &Tensor::from_f32(vec![k, b.matrix.dim()], flat)?,
        common.out.join("centroids.stf"),
    )?;
    let mut summary = RunSummary::new("facets", common.seed);
    summary
        .param("features", features.display())
        .param("concept", concept)
        .param("k", k)
        .param("samples", b.matrix.len())
        .param("dropped", b.dropped.len())
        .param("iterations", clustering.iterations)
        .param("objective", format!("{:.6}", clustering.objective()))
        .param(
            "dominant_fraction",
            format!("{:.6}", dominant_cluster_fraction(&clustering.assignments)),
        );
    summary.write(&common.out)?;
    Ok(())
}

fn explain(features: &Path, sample: &str, stores: &[String], cutoff: f32, common: &Common) -> Result<()> {
    let fs = features_from(features)?;
    let row = fs
        .sample_ids()
        .iter()
        .position(|id| id == sample)
        .ok_or_else(|| anyhow!("unknown sample '{sample}'"))?;
    let mut loaded = Vec::with_capacity(stores.len());
    for spec in stores {
        let (role, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--store expects ROLE=STORE, got '{spec}'"))?;
        loaded.push((role.to_string(), store_from(Path::new(path))?));
    }
    let refs: Vec<(&str, &ConceptStore)> = loaded.iter().map(|(r, s)| (r.as_str(), s)).collect();
    let explanations = explain_with_concepts(fs.row(row), &refs, cutoff)?;

    let mut text = String::new();
    let mut summary = RunSummary::new("explain", common.seed);
    summary
        .param("features", features.display())
        .param("sample", sample)
        .param("stores", stores.join(" "))
        .param("threshold", cutoff);
    for e in &explanations {
        let line = match &e.verdict {
            Verdict::Concept { name, score } => format!("{name} ({score:.3})"),
            Verdict::Abstain { best, score } => format!("abstain (best {best}, {score:.3})"),
        };
        let _ = writeln!(text, "{}: {line}", e.role);
        summary.param(&e.role, line);
    }
    prepare_out(common)?;
    write_file(&common.out.join("explain.txt"), &text)?;
    summary.write(&common.out)?;
    print!("{text}");
    Ok(())
}

fn make_fixture(common: &Common) -> Result<()> {
    let cfg = ConceptFixtureConfig::default();
    let fixture = concept_fixture(&cfg, common.seed)?;
    prepare_out(common)?;
    let network = save_network(&fixture.net, &common.out, "network")?;
    save_feature_set(&tap_features(&fixture.net, &fixture.train)?, &common.out, "train")?;
    save_feature_set(&tap_features(&fixture.net, &fixture.test)?, &common.out, "test")?;
    // one test input per class
    for c in 0..cfg.classes {
        let i = (0..fixture.test.len())
            .find(|&i| fixture.test.label(i) == c)
            .expect("every class has test samples");
        write_tensor(&fixture.test.tensor(i), common.out.join(format!("input_c{c}.stf")))?;
    }
    let mut summary = RunSummary::new("make-fixture", common.seed);
    summary
        .param("network", network.display())
        .param("classes", cfg.classes)
        .param("hidden", cfg.hidden)
        .param("train_samples", fixture.train.len())
        .param("test_samples", fixture.test.len())
        .param("train_accuracy", format!("{:.6}", fixture.report.train_accuracy));
    summary.write(&common.out)?;
    Ok(())
}
