use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pdsm::alignment::{resample_segmentation, segment_posteriorgram};
use pdsm::attribution::{
    attribute, AttributionConfig, AttributionRecord, BaselineMode, BaselineProfile,
};
use pdsm::discretize::{pdsm_detailed, PdsmConfig, Preset, Threshold};
use pdsm::evaluation::{
    curves_csv, faithfulness, fmt_real, global_importance, normalize_continuous_map, rank_phonemes,
    sweep_k, FaithfulnessReport, ReportMetadata, SweepSample,
};
use pdsm::interchange::npy::{self, Precision};
use pdsm::interchange::{
    DatasetManifest, LoadedManifest, ManifestEntry, MethodId, PhonemeSegmentation, Posteriorgram,
    SaliencyMap, Split, MANIFEST_VERSION,
};
use pdsm::model::train::{accuracy, load_examples, train, TrainConfig};
use pdsm::model::{ToyClassifier, NUM_CLASSES};
use pdsm::synthgen::{gen_fake_phoneme_dataset, gen_noise_dataset, SynthConfig};
use pdsm::{rng, Error, Matrix, Result};

use super::stage::Stage;
use super::*;

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Attribute(a) => attribute_cmd(cli, a),
        Command::Discretize(a) => discretize_cmd(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::SweepK(a) => sweep_cmd(cli, a),
        Command::GlobalImportance(a) => importance_cmd(cli, a),
        Command::Rank(a) => rank_cmd(cli, a),
        Command::Report(a) => report_cmd(cli, a),
    }
}

// -- helpers ---------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    manifest_format: u32,
    command: &'a str,
    seed: u64,
    config: C,
    /// SHA-256 of the input files, keyed by role.
    inputs: BTreeMap<&'static str, String>,
}

fn json_text(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &json_text(value))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn finish(
    cli: &Cli,
    stage: Stage,
    command: &str,
    config: impl Serialize,
    inputs: BTreeMap<&'static str, String>,
) -> Result<()> {
    let manifest = RunManifest {
        tool: "pdsm",
        version: env!("CARGO_PKG_VERSION"),
        manifest_format: MANIFEST_VERSION,
        command,
        seed: cli.seed,
        config,
        inputs,
    };
    write_json(&stage.path().join("run_manifest.json"), &manifest)?;
    stage.commit()
}

fn load_dataset(dir: &Path) -> Result<LoadedManifest> {
    DatasetManifest::load(dir.join("manifest.json"))
}

fn check_class(class: usize) -> Result<()> {
    if class >= NUM_CLASSES {
        return Err(Error::validation(format!(
            "target class {class} out of range (0..{NUM_CLASSES})"
        )));
    }
    Ok(())
}

fn select_entries<'a>(
    loaded: &'a LoadedManifest,
    f: &SampleFilter,
) -> Result<Vec<&'a ManifestEntry>> {
    check_class(f.target_class)?;
    let split = match f.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut v: Vec<&ManifestEntry> = loaded
        .manifest
        .usable(Some(split))
        .filter(|e| f.all_labels || e.label.class_index() == f.target_class)
        .collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if let Some(n) = f.limit {
        v.truncate(n);
    }
    if v.is_empty() {
        return Err(Error::validation(
            "no samples match the split and label filter",
        ));
    }
    Ok(v)
}

const SILENCE_LABELS: [&str; 3] = ["<>", "sil", "sp"];

fn pdsm_config(p: &PdsmArgs, k: usize, vocab: &[String]) -> Result<PdsmConfig> {
    let mut c = Preset::from(p.preset).config(k);
    if let Some(pool) = p.pool {
        c.pool = pool.into();
    }
    if let Some(q) = p.quantile {
        c.threshold = Threshold::Quantile(q);
    }
    if p.exclude_silence {
        c.skip_phonemes = vocab
            .iter()
            .enumerate()
            .filter(|(_, l)| SILENCE_LABELS.contains(&l.as_str()))
            .map(|(i, _)| i)
            .collect();
        if c.skip_phonemes.is_empty() {
            return Err(Error::validation(
                "--exclude-silence: vocabulary has no silence label (<>, sil, sp)",
            ));
        }
    }
    c.validate()?;
    Ok(c)
}

fn map_path(maps: &Path, method: MethodId, sample_id: &str) -> std::path::PathBuf {
    maps.join(method.as_str()).join(format!("{sample_id}.npy"))
}

/// Segmentation of an entry's posteriorgram on the spectrogram's time axis.
fn entry_segmentation(
    loaded: &LoadedManifest,
    e: &ManifestEntry,
    frames: usize,
) -> Result<PhonemeSegmentation> {
    if e.posteriorgram.is_none() {
        return Err(Error::validation(format!(
            "sample {} has no posteriorgram",
            e.sample_id
        )));
    }
    let ppg = loaded.load_posteriorgram(e)?;
    resample_segmentation(&segment_posteriorgram(&ppg)?, frames)
}

fn load_map_input(
    input: &MapInput,
) -> Result<(Matrix, Posteriorgram, BTreeMap<&'static str, String>)> {
    let map = npy::load_matrix(&input.map)?;
    let ppg = npy::load_matrix(&input.ppg)?;
    let mut inputs = BTreeMap::from([
        ("map", sha256_file(&input.map)?),
        ("posteriorgram", sha256_file(&input.ppg)?),
    ]);
    let vocab = match &input.manifest {
        Some(p) => {
            inputs.insert("dataset_manifest", sha256_file(p)?);
            DatasetManifest::load(p)?.manifest.vocab
        }
        None => Vec::new(),
    };
    Ok((map, Posteriorgram::new(ppg, vocab)?, inputs))
}

// -- commands --------------------------------------------------------------

fn gen_synth(cli: &Cli, a: &GenSynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = a.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = a.freq_bins {
        cfg.freq_bins = v;
    }
    if let Some(v) = a.snr_db {
        cfg.snr_db = v;
    }
    if let Some(v) = a.corruption_kind {
        cfg.corruption.kind = v.into();
    }
    if let Some(v) = a.corruption_gain {
        cfg.corruption.corruption_gain = v;
    }
    if let Some(v) = a.n_corrupt {
        cfg.corruption.n_corrupt_segments = v;
    }
    cfg.seed = cli.seed;
    cfg.validate()?;

    let stage = Stage::new(&cli.out_dir)?;
    let dataset = match a.task {
        Task::Noise => gen_noise_dataset(&cfg)?,
        Task::Fakephoneme => gen_fake_phoneme_dataset(&cfg)?,
    };
    dataset.write(stage.path())?;
    #[derive(Serialize)]
    struct Config {
        task: Task,
        generator: SynthConfig,
    }
    finish(
        cli,
        stage,
        "gen-synth",
        Config {
            task: a.task,
            generator: cfg,
        },
        BTreeMap::new(),
    )
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig {
        seed: cli.seed,
        ..TrainConfig::default()
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = v.into();
    }
    cfg.validate()?;
    let loaded = load_dataset(&a.data)?;
    let train_set = load_examples(&loaded, Split::Train)?;
    let test_set = load_examples(&loaded, Split::Test)?;

    let stage = Stage::new(&cli.out_dir)?;
    let (model, log) = train(&train_set, &cfg)?;
    model.save(stage.path().join("model"))?;
    write_text(&stage.path().join("train_log.csv"), &log.to_csv())?;
    #[derive(Serialize)]
    struct Metrics {
        model_sha256: String,
        train_accuracy: f64,
        test_accuracy: Option<f64>,
        train_samples: usize,
        test_samples: usize,
    }
    let metrics = Metrics {
        model_sha256: model.hash(),
        train_accuracy: accuracy(&model, &train_set)?,
        test_accuracy: if test_set.is_empty() {
            None
        } else {
            Some(accuracy(&model, &test_set)?)
        },
        train_samples: train_set.len(),
        test_samples: test_set.len(),
    };
    write_json(&stage.path().join("metrics.json"), &metrics)?;
    let inputs = BTreeMap::from([(
        "dataset_manifest",
        sha256_file(&loaded.root.join("manifest.json"))?,
    )]);
    finish(cli, stage, "train", (a, cfg), inputs)
}

/// Attribution settings readable from `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttributionSettings {
    ig_steps: usize,
    gradshap_samples: usize,
    noise_sigma: Option<f64>,
    baseline: BaselineMode,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        let d = AttributionConfig::new(MethodId::Ig);
        AttributionSettings {
            ig_steps: d.ig_steps,
            gradshap_samples: d.gradshap_samples,
            noise_sigma: d.noise_sigma,
            baseline: d.baseline,
        }
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<MethodId>> {
    let mut out: Vec<MethodId> = Vec::new();
    for n in names {
        let batch = if n == "all" {
            MethodId::ALL.to_vec()
        } else {
            vec![MethodId::from_str(n)?]
        };
        for m in batch {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

fn attribute_cmd(cli: &Cli, a: &AttributeArgs) -> Result<()> {
    let methods = parse_methods(&a.methods)?;
    let mut s: AttributionSettings = match &a.config {
        Some(p) => read_json(p)?,
        None => AttributionSettings::default(),
    };
    if let Some(v) = a.ig_steps {
        s.ig_steps = v;
    }
    if let Some(v) = a.gradshap_samples {
        s.gradshap_samples = v;
    }
    if a.noise_sigma.is_some() {
        s.noise_sigma = a.noise_sigma;
    }
    if let Some(v) = a.baseline {
        s.baseline = v.into();
    }
    let config_for = |method, seed| AttributionConfig {
        method,
        ig_steps: s.ig_steps,
        baseline: s.baseline,
        gradshap_samples: s.gradshap_samples,
        noise_sigma: s.noise_sigma,
        seed,
    };
    config_for(MethodId::Ig, 0).validate()?;

    let model = ToyClassifier::load(&a.model)?;
    let loaded = load_dataset(&a.data)?;
    let entries = select_entries(&loaded, &a.filter)?;
    let profile = match s.baseline {
        BaselineMode::Zero => {
            BaselineProfile::zeros(loaded.load_spectrogram(entries[0])?.data().rows())
        }
        BaselineMode::DatasetMean => {
            let train: Vec<Matrix> = loaded
                .manifest
                .usable(Some(Split::Train))
                .map(|e| Ok(loaded.load_spectrogram(e)?.into_data()))
                .collect::<Result<_>>()?;
            BaselineProfile::dataset_mean(&train)?
        }
    };

    let stage = Stage::new(&cli.out_dir)?;
    for m in &methods {
        let dir = stage.path().join(m.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let model_hash = model.hash();
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let x = loaded.load_spectrogram(e)?.into_data();
        let seed = rng::child_seed(cli.seed, &e.sample_id, 0);
        for &m in &methods {
            let cfg = config_for(m, seed);
            let map = attribute(&model, &x, a.filter.target_class, &cfg, &profile)?;
            let path = map_path(stage.path(), m, &e.sample_id);
            npy::save_matrix(&map.data, &path, Precision::F64)?;
            let record = AttributionRecord {
                sample_id: e.sample_id.clone(),
                method: m,
                target_class: a.filter.target_class,
                config: cfg,
                seed,
                model_sha256: model_hash.clone(),
            };
            write_json(&path.with_extension("json"), &record)?;
        }
        Ok(())
    })?;
    let inputs = BTreeMap::from([
        (
            "dataset_manifest",
            sha256_file(&loaded.root.join("manifest.json"))?,
        ),
        ("model", model_hash),
    ]);
    finish(cli, stage, "attribute", (a, s), inputs)
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    index: usize,
    phoneme: usize,
    label: &'a str,
    start: usize,
    end: usize,
    energy: f64,
    selected: bool,
}

fn discretize_cmd(cli: &Cli, a: &DiscretizeArgs) -> Result<()> {
    let (map, ppg, inputs) = load_map_input(&a.input)?;
    let cfg = pdsm_config(&a.pdsm, a.k, ppg.vocab())?;
    if a.k == 0 {
        log::warn!("--k 0 selects no phonemes; the mask is all zeros");
    }
    let out = pdsm_detailed(&map, &ppg, &cfg)?;
    let stage = Stage::new(&cli.out_dir)?;
    npy::save_matrix(
        &out.mask.data,
        stage.path().join("mask.npy"),
        Precision::F32,
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a PdsmConfig,
        frames: usize,
        on_frames: usize,
        mask_fraction: f64,
        selected: &'a [usize],
        segments: Vec<SegmentReport<'a>>,
    }
    let segments = out
        .segmentation
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| SegmentReport {
            index: i,
            phoneme: s.phoneme,
            label: &ppg.vocab()[s.phoneme],
            start: s.start,
            end: s.end,
            energy: out.energies.0[i],
            selected: out.mask.selected.contains(&i),
        })
        .collect();
    let summary = Summary {
        config: &cfg,
        frames: map.cols(),
        on_frames: out.mask.on_frames(),
        mask_fraction: out.mask.fraction(),
        selected: &out.mask.selected,
        segments,
    };
    write_json(&stage.path().join("discretize.json"), &summary)?;
    finish(cli, stage, "discretize", (a, &cfg), inputs)
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    check_class(a.target_class)?;
    let model = ToyClassifier::load(&a.model)?;
    let x = npy::load_matrix(&a.input)?;
    let mut mask = npy::load_matrix(&a.mask)?;
    if a.continuous {
        mask = normalize_continuous_map(&mask);
    }
    let ff = faithfulness(&model, &x, &mask, a.target_class)?;
    let p = model.forward(&x)?[a.target_class];
    let stage = Stage::new(&cli.out_dir)?;
    #[derive(Serialize)]
    struct Out {
        target_class: usize,
        probability: f64,
        masked_probability: f64,
        ff: f64,
        mask_mean: f64,
    }
    let out = Out {
        target_class: a.target_class,
        probability: p,
        masked_probability: p - ff,
        ff,
        mask_mean: mask.sum() / mask.as_slice().len() as f64,
    };
    write_json(&stage.path().join("evaluate.json"), &out)?;
    let inputs = BTreeMap::from([
        ("model", model.hash()),
        ("input", sha256_file(&a.input)?),
        ("mask", sha256_file(&a.mask)?),
    ]);
    finish(cli, stage, "evaluate", a, inputs)?;
    println!("{}", fmt_real(ff));
    Ok(())
}

fn methods_in(maps: &Path) -> Result<Vec<MethodId>> {
    let found: Vec<MethodId> = MethodId::ALL
        .into_iter()
        .filter(|m| maps.join(m.as_str()).is_dir())
        .collect();
    if found.is_empty() {
        return Err(Error::validation(format!(
            "no saliency maps under {}",
            maps.display()
        )));
    }
    Ok(found)
}

fn sweep_cmd(cli: &Cli, a: &SweepArgs) -> Result<()> {
    if a.k_min > a.k_max {
        return Err(Error::validation("k range is empty (--k-min > --k-max)"));
    }
    if a.random_seeds == 0 {
        return Err(Error::validation("--random-seeds must be at least 1"));
    }
    let model = ToyClassifier::load(&a.model)?;
    let loaded = load_dataset(&a.data)?;
    let entries = select_entries(&loaded, &a.filter)?;
    let cfg = pdsm_config(&a.pdsm, 0, &loaded.manifest.vocab)?;
    let methods = methods_in(&a.maps)?;
    let samples: Vec<SweepSample> = entries
        .par_iter()
        .map(|e| {
            let x = loaded.load_spectrogram(e)?.into_data();
            let segmentation = entry_segmentation(&loaded, e, x.cols())?;
            let maps = methods
                .iter()
                .map(|&m| {
                    let data = npy::load_matrix(map_path(&a.maps, m, &e.sample_id))?;
                    SaliencyMap::new(data, m, a.filter.target_class)
                })
                .collect::<Result<_>>()?;
            Ok(SweepSample {
                sample_id: e.sample_id.clone(),
                input: x,
                segmentation,
                maps,
            })
        })
        .collect::<Result<_>>()?;
    let k_values: Vec<usize> = (a.k_min..=a.k_max).collect();
    let seeds: Vec<u64> = (0..a.random_seeds as u64)
        .map(|i| rng::child_seed(cli.seed, "random-baseline", i))
        .collect();
    let report = sweep_k(
        &model,
        &samples,
        &cfg,
        &k_values,
        &seeds,
        a.filter.target_class,
    )?;

    let stage = Stage::new(&cli.out_dir)?;
    write_text(&stage.path().join("faithfulness.csv"), &report.to_csv())?;
    write_text(&stage.path().join("aggregate.csv"), &report.aggregate_csv())?;
    write_text(&stage.path().join("curves.csv"), &curves_csv(&report))?;
    write_json(&stage.path().join("sweep.json"), &report.table())?;
    let inputs = BTreeMap::from([
        (
            "dataset_manifest",
            sha256_file(&loaded.root.join("manifest.json"))?,
        ),
        ("model", model.hash()),
    ]);
    finish(cli, stage, "sweep-k", (a, &cfg), inputs)
}

fn importance_cmd(cli: &Cli, a: &ImportanceArgs) -> Result<()> {
    let method = MethodId::from_str(&a.method)?;
    let loaded = load_dataset(&a.data)?;
    let entries = select_entries(&loaded, &a.filter)?;
    let cfg = pdsm_config(&a.pdsm, 0, &loaded.manifest.vocab)?;
    let items: Vec<(Matrix, PhonemeSegmentation)> = entries
        .par_iter()
        .map(|e| {
            let map = npy::load_matrix(map_path(&a.maps, method, &e.sample_id))?;
            let seg = entry_segmentation(&loaded, e, map.cols())?;
            Ok((map, seg))
        })
        .collect::<Result<_>>()?;
    let table = global_importance(
        items.iter().map(|(m, s)| (m, s)),
        &loaded.manifest.vocab,
        &cfg,
    )?;
    let stage = Stage::new(&cli.out_dir)?;
    write_text(&stage.path().join("importance.csv"), &table.to_csv())?;
    let inputs = BTreeMap::from([(
        "dataset_manifest",
        sha256_file(&loaded.root.join("manifest.json"))?,
    )]);
    finish(cli, stage, "global-importance", (a, &cfg), inputs)
}

fn rank_cmd(cli: &Cli, a: &RankArgs) -> Result<()> {
    let (map, ppg, inputs) = load_map_input(&a.input)?;
    let cfg = pdsm_config(&a.pdsm, 0, ppg.vocab())?;
    let ranked = rank_phonemes(&map, &ppg, &cfg, a.top)?;
    #[derive(Serialize)]
    struct Out<'a> {
        top: usize,
        config: &'a PdsmConfig,
        phonemes: Vec<pdsm::evaluation::RankedPhoneme>,
    }
    let stage = Stage::new(&cli.out_dir)?;
    write_json(
        &stage.path().join("rank.json"),
        &Out {
            top: a.top,
            config: &cfg,
            phonemes: ranked,
        },
    )?;
    finish(cli, stage, "rank", (a, &cfg), inputs)
}

fn report_cmd(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let csv_path = a.sweep.join("faithfulness.csv");
    let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let rows = FaithfulnessReport::rows_from_csv(&text)?;
    #[derive(Deserialize)]
    struct SweepFile {
        metadata: ReportMetadata,
    }
    let meta: SweepFile = read_json(&a.sweep.join("sweep.json"))?;
    let report = FaithfulnessReport {
        metadata: meta.metadata,
        rows,
    };
    let table = report.table();
    let mut csv = String::from("method,pdsm,continuous,random\n");
    for (m, s) in &table.methods {
        csv.push_str(&format!(
            "{m},{},{},{}\n",
            fmt_real(s.pdsm),
            fmt_real(s.continuous),
            fmt_real(s.random)
        ));
    }
    let stage = Stage::new(&cli.out_dir)?;
    write_json(&stage.path().join("table.json"), &table)?;
    write_text(&stage.path().join("table.csv"), &csv)?;
    let inputs = BTreeMap::from([("faithfulness_csv", sha256_file(&csv_path)?)]);
    finish(cli, stage, "report", a, inputs)
}
