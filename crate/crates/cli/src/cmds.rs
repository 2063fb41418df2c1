//! The five subcommands: verification suites, closed-form embeddings, the
//! dimensionality-reduction pipeline, LM training, and the mode comparison.

use std::path::Path;

use lapformer_core::block::AttentionMode;
use lapformer_core::dimred::{
    cluster_ratio, emit_scatter, load_idx, make_blobs, run_pipeline, LabeledDataset,
    PipelineConfig,
};
use lapformer_core::lm::{
    compare_modes, run_metrics_jsonl, train, LmConfig, LrSchedule, TrainConfig,
};
use lapformer_core::verify::{run_suite, Suite};
use lapformer_core::{constrained_embedding, closed_form_embedding, knn_graph, sym_eig, Matrix};

use crate::settings::{
    mode_name, parse, parse_mode, parse_schedule, parse_seeds, schedule_name, seeds_string,
    Settings,
};
use crate::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Core(lapformer_core::Error::Io(e)))
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Core(lapformer_core::Error::Io(e)))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt17(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- verify --

pub struct VerifySettings {
    pub suite: String,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            suite: "all".into(),
        }
    }
}

impl Settings for VerifySettings {
    fn keys(&self) -> &'static [&'static str] {
        &["suite"]
    }
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "suite" => self.suite = value.to_string(),
            _ => unreachable!(),
        }
        Ok(())
    }
    fn get(&self, key: &str) -> String {
        match key {
            "suite" => self.suite.clone(),
            _ => unreachable!(),
        }
    }
}

pub fn run_verify(settings: &VerifySettings, out: Option<&Path>) -> Result<u8, CliError> {
    let suite: Suite = settings
        .suite
        .parse()
        .map_err(CliError::Usage)?;
    let results = run_suite(suite);
    let mut failed: Vec<&str> = Vec::new();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {name} max_residual={res:.3e}  {details}",
            name = r.name,
            res = r.max_residual,
            details = r.details
        );
        if !r.passed {
            failed.push(&r.name);
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "suite": settings.suite,
            "checks": results.len(),
            "failed": failed,
        })
    );
    if let Some(out) = out {
        ensure_out_dir(out)?;
        write_out(
            &out.join("verify.json"),
            &serde_json::to_string_pretty(&results).expect("serializable"),
        )?;
        write_out(&out.join("config.resolved"), &settings.echo())?;
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}

// ------------------------------------------------------------- eigenmaps --

pub struct EigenmapsSettings {
    pub data: String,
    pub k: usize,
    pub q: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for EigenmapsSettings {
    fn default() -> Self {
        EigenmapsSettings {
            data: String::new(),
            k: 5,
            q: 2,
            beta: 0.5,
            seed: 0,
        }
    }
}

impl Settings for EigenmapsSettings {
    fn keys(&self) -> &'static [&'static str] {
        &["data", "k", "q", "beta", "seed"]
    }
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data" => self.data = value.to_string(),
            "k" => self.k = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => unreachable!(),
        }
        Ok(())
    }
    fn get(&self, key: &str) -> String {
        match key {
            "data" => self.data.clone(),
            "k" => self.k.to_string(),
            "q" => self.q.to_string(),
            "beta" => self.beta.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!(),
        }
    }
}

/// Numeric CSV (no header): one point per row.
fn load_csv_matrix(path: &Path) -> Result<Matrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(lapformer_core::Error::Io(e)))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CliError::Core(lapformer_core::Error::Format(format!(
                "{}:{}: {e}",
                path.display(),
                lineno + 1
            )))
        })?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(CliError::Core)
}

pub fn run_eigenmaps(settings: &EigenmapsSettings, out: &Path) -> Result<u8, CliError> {
    if settings.data.is_empty() {
        return Err(CliError::Usage("eigenmaps needs --data <csv>".into()));
    }
    let points = load_csv_matrix(Path::new(&settings.data))?;
    let graph = knn_graph(&points, settings.k).map_err(CliError::Core)?;
    let spectrum = sym_eig(&graph.laplacian).map_err(CliError::Core)?;

    // On rank failures, surface the spectrum so the user can see how many
    // zero modes (graph components) ate the requested dimensions.
    let diag = |e: lapformer_core::Error| {
        eprintln!("Laplacian spectrum: {:?}", spectrum.values);
        CliError::Core(e)
    };
    let constrained = constrained_embedding(&graph.laplacian, settings.q).map_err(diag)?;
    let closed =
        closed_form_embedding(&graph.laplacian, settings.q, settings.beta).map_err(|e| {
            eprintln!("Laplacian spectrum: {:?}", spectrum.values);
            CliError::Core(e)
        })?;

    ensure_out_dir(out)?;
    write_out(&out.join("closed_form.csv"), &matrix_csv(&closed))?;
    write_out(&out.join("constrained.csv"), &matrix_csv(&constrained))?;
    write_out(
        &out.join("eigenvalues.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "spectrum": spectrum.values,
            "zero_threshold": lapformer_core::objective::ZERO_EIGENVALUE_TOL,
            "q": settings.q,
            "beta": settings.beta,
        }))
        .expect("serializable"),
    )?;
    write_out(&out.join("config.resolved"), &settings.echo())?;
    println!(
        "eigenmaps: {} points, spectrum head {:?}",
        points.rows(),
        &spectrum.values[..spectrum.values.len().min(4)]
    );
    Ok(0)
}

// ---------------------------------------------------------------- dimred --

pub struct DimredSettings {
    pub images: String,
    pub labels: String,
    pub synthetic: String,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub separation: f64,
    pub limit: usize,
    pub q: usize,
    pub kappa: f64,
    pub eta: f64,
    pub beta: f64,
    pub n_blocks: usize,
    pub seed: u64,
    pub mode: AttentionMode,
    pub all_steps: bool,
}

impl Default for DimredSettings {
    fn default() -> Self {
        DimredSettings {
            images: String::new(),
            labels: String::new(),
            synthetic: String::new(),
            n: 300,
            d: 50,
            classes: 3,
            separation: 8.0,
            limit: 1000,
            q: 128,
            kappa: 30.0,
            eta: 0.4,
            beta: 1.0,
            n_blocks: 8,
            seed: 0,
            mode: AttentionMode::Diffusion,
            all_steps: false,
        }
    }
}

impl Settings for DimredSettings {
    fn keys(&self) -> &'static [&'static str] {
        &[
            "images", "labels", "synthetic", "n", "d", "classes", "separation", "limit", "q",
            "kappa", "eta", "beta", "n_blocks", "seed", "mode", "all_steps",
        ]
    }
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "images" => self.images = value.to_string(),
            "labels" => self.labels = value.to_string(),
            "synthetic" => self.synthetic = value.to_string(),
            "n" => self.n = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "limit" => self.limit = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "n_blocks" => self.n_blocks = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse_mode(key, value)?,
            "all_steps" => self.all_steps = parse(key, value)?,
            _ => unreachable!(),
        }
        Ok(())
    }
    fn get(&self, key: &str) -> String {
        match key {
            "images" => self.images.clone(),
            "labels" => self.labels.clone(),
            "synthetic" => self.synthetic.clone(),
            "n" => self.n.to_string(),
            "d" => self.d.to_string(),
            "classes" => self.classes.to_string(),
            "separation" => self.separation.to_string(),
            "limit" => self.limit.to_string(),
            "q" => self.q.to_string(),
            "kappa" => self.kappa.to_string(),
            "eta" => self.eta.to_string(),
            "beta" => self.beta.to_string(),
            "n_blocks" => self.n_blocks.to_string(),
            "seed" => self.seed.to_string(),
            "mode" => mode_name(self.mode).to_string(),
            "all_steps" => self.all_steps.to_string(),
            _ => unreachable!(),
        }
    }
}

fn dimred_dataset(settings: &DimredSettings) -> Result<LabeledDataset, CliError> {
    let have_idx = !settings.images.is_empty() || !settings.labels.is_empty();
    if have_idx {
        if settings.images.is_empty() || settings.labels.is_empty() {
            return Err(CliError::Usage(
                "dimred needs both --images and --labels for IDX input".into(),
            ));
        }
        return load_idx(&settings.images, &settings.labels, settings.limit)
            .map_err(CliError::Core);
    }
    match settings.synthetic.as_str() {
        "blobs" => make_blobs(
            settings.n,
            settings.d,
            settings.classes,
            settings.separation,
            settings.seed,
        )
        .map_err(CliError::Core),
        "" => Err(CliError::Usage(
            "dimred needs --images/--labels or --synthetic blobs".into(),
        )),
        other => Err(CliError::Usage(format!(
            "unknown synthetic dataset {other:?}; only \"blobs\" is available"
        ))),
    }
}

pub fn run_dimred(settings: &DimredSettings, out: &Path) -> Result<u8, CliError> {
    let dataset = dimred_dataset(settings)?;
    let config = PipelineConfig {
        q: settings.q,
        kappa: settings.kappa,
        eta: settings.eta,
        beta: settings.beta,
        n_blocks: settings.n_blocks,
        seed: settings.seed,
        mode: settings.mode,
    };
    let trace = run_pipeline(&dataset, &config).map_err(CliError::Core)?;

    let mut ratios = Vec::with_capacity(trace.states.len());
    for (step, state) in trace.states.iter().enumerate() {
        let ratio = cluster_ratio(state, &dataset.labels).map_err(CliError::Core)?;
        ratios.push(serde_json::json!({ "step": step, "cluster_ratio": ratio }));
    }

    ensure_out_dir(out)?;
    emit_scatter(
        &trace,
        &dataset.labels,
        out.join("scatter.csv"),
        settings.all_steps,
    )
    .map_err(CliError::Core)?;
    write_out(
        &out.join("cluster_ratio.json"),
        &serde_json::to_string_pretty(&ratios).expect("serializable"),
    )?;
    write_out(&out.join("config.resolved"), &settings.echo())?;
    let first = &ratios[0]["cluster_ratio"];
    let last = &ratios[ratios.len() - 1]["cluster_ratio"];
    println!(
        "dimred: {} points from {}, cluster ratio {first} -> {last} over {} blocks",
        dataset.features.rows(),
        dataset.source,
        settings.n_blocks
    );
    Ok(0)
}

// -------------------------------------------------------- train / compare --

pub struct TrainSettings {
    pub corpus: String,
    pub mode: AttentionMode,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub block_size: usize,
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub dropout: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub eval_interval: usize,
    pub eval_iters: usize,
    pub lr_schedule: LrSchedule,
    pub grad_clip: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let lm = LmConfig::desk_scale(AttentionMode::Diffusion, 0);
        let tc = TrainConfig::default();
        TrainSettings {
            corpus: String::new(),
            mode: lm.attention_mode,
            seed: lm.seed,
            seeds: vec![1, 2, 3],
            block_size: lm.block_size,
            n_layer: lm.n_layer,
            n_head: lm.n_head,
            n_embd: lm.n_embd,
            dropout: lm.dropout,
            max_iters: tc.max_iters,
            batch_size: tc.batch_size,
            learning_rate: tc.learning_rate,
            weight_decay: tc.weight_decay,
            eval_interval: tc.eval_interval,
            eval_iters: tc.eval_iters,
            lr_schedule: tc.lr_schedule,
            grad_clip: tc.grad_clip,
        }
    }
}

impl Settings for TrainSettings {
    fn keys(&self) -> &'static [&'static str] {
        &[
            "corpus", "mode", "seed", "seeds", "block_size", "n_layer", "n_head", "n_embd",
            "dropout", "max_iters", "batch_size", "learning_rate", "weight_decay",
            "eval_interval", "eval_iters", "lr_schedule", "grad_clip",
        ]
    }
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "corpus" => self.corpus = value.to_string(),
            "mode" => self.mode = parse_mode(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = parse_seeds(key, value)?,
            "block_size" => self.block_size = parse(key, value)?,
            "n_layer" => self.n_layer = parse(key, value)?,
            "n_head" => self.n_head = parse(key, value)?,
            "n_embd" => self.n_embd = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_iters" => self.eval_iters = parse(key, value)?,
            "lr_schedule" => self.lr_schedule = parse_schedule(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            _ => unreachable!(),
        }
        Ok(())
    }
    fn get(&self, key: &str) -> String {
        match key {
            "corpus" => self.corpus.clone(),
            "mode" => mode_name(self.mode).to_string(),
            "seed" => self.seed.to_string(),
            "seeds" => seeds_string(&self.seeds),
            "block_size" => self.block_size.to_string(),
            "n_layer" => self.n_layer.to_string(),
            "n_head" => self.n_head.to_string(),
            "n_embd" => self.n_embd.to_string(),
            "dropout" => self.dropout.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_iters" => self.eval_iters.to_string(),
            "lr_schedule" => schedule_name(self.lr_schedule).to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            _ => unreachable!(),
        }
    }
}

impl TrainSettings {
    fn lm_config(&self, mode: AttentionMode, seed: u64) -> LmConfig {
        LmConfig {
            vocab_size: 0,
            block_size: self.block_size,
            n_layer: self.n_layer,
            n_head: self.n_head,
            n_embd: self.n_embd,
            attention_mode: mode,
            dropout: self.dropout,
            seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_iters: self.max_iters,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            eval_interval: self.eval_interval,
            eval_iters: self.eval_iters,
            optimizer: lapformer_core::lm::OptimizerKind::AdamW,
            lr_schedule: self.lr_schedule,
            grad_clip: self.grad_clip,
        }
    }

    fn read_corpus(&self) -> Result<String, CliError> {
        if self.corpus.is_empty() {
            return Err(CliError::Usage("need --corpus <utf-8 text file>".into()));
        }
        std::fs::read_to_string(&self.corpus).map_err(|e| CliError::Core(lapformer_core::Error::Io(e)))
    }
}

pub fn run_train(settings: &TrainSettings, out: &Path) -> Result<u8, CliError> {
    let corpus = settings.read_corpus()?;
    let run = train(
        &settings.lm_config(settings.mode, settings.seed),
        &settings.train_config(),
        &corpus,
    )
    .map_err(CliError::Core)?;

    ensure_out_dir(out)?;
    write_out(
        &out.join("metrics.jsonl"),
        &run_metrics_jsonl(&run, settings.mode, settings.seed),
    )?;
    write_out(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&run).expect("serializable"),
    )?;
    write_out(&out.join("config.resolved"), &settings.echo())?;
    let last = run.records.last().expect("records nonempty");
    println!(
        "train-lm [{}] seed {}: iter {} train {:.4} val {:.4} ({:.1}s)",
        mode_name(settings.mode),
        settings.seed,
        last.iter,
        last.train_loss,
        last.val_loss,
        run.wall_time_secs
    );
    Ok(0)
}

pub fn run_compare(settings: &TrainSettings, out: &Path) -> Result<u8, CliError> {
    let corpus = settings.read_corpus()?;
    let report = compare_modes(
        &settings.lm_config(settings.mode, 0),
        &settings.train_config(),
        &corpus,
        &settings.seeds,
    )
    .map_err(CliError::Core)?;

    ensure_out_dir(out)?;
    write_out(&out.join("metrics.jsonl"), &report.metrics_jsonl())?;
    write_out(&out.join("difference.csv"), &report.difference_csv())?;
    write_out(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    write_out(&out.join("config.resolved"), &settings.echo())?;
    let diff = report
        .final_val_difference_median()
        .expect("medians nonempty");
    println!(
        "compare-lm over seeds {:?}: median final (standard - diffusion) val-loss difference = {:+.6} (positive = diffusion ahead)",
        settings.seeds, diff
    );
    Ok(0)
}
