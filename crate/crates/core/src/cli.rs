//! `dynvocab` subcommands: gen-data, train, decode, score.
//!
//! Settings resolve in order: defaults, `--config` file, `--set` pairs,
//! then dedicated flags. The resolved view is echoed to a run log.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::biasing::DynamicVocabulary;
use crate::decoding::{decode_utterance, format_hypothesis, DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::evaluation::score_biased;
use crate::kv;
use crate::losses::TrainConfig;
use crate::model::{checkpoint, Arch, BiasList, Model, ModelConfig};
use crate::synth::{gen_corpus, read_manifest, read_pairs, read_vocabulary, CorpusPaths, SynthConfig};
use crate::train::{train, Example};

#[derive(Parser, Debug)]
#[command(name = "dynvocab", version, about = "Dynamic-vocabulary contextual biasing on a synthetic ASR task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic training and evaluation corpus.
    GenData(GenDataArgs),
    /// Train a model and write per-epoch checkpoints.
    Train(TrainArgs),
    /// Decode a manifest, optionally with a bias list.
    Decode(DecodeArgs),
    /// Score hypotheses against references as WER (U-WER/B-WER).
    Score(ScoreArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. --set d=32.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every named random stream.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Primary decoder: attention or rnnt.
    #[arg(long)]
    pub mode: Option<Arch>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on the first N utterances only.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// DVM1 checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// One phrase per line; omit to decode without biasing.
    #[arg(long)]
    pub bias_list: Option<PathBuf>,
    /// Hypothesis TSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// attention, ctc or rnnt; defaults to the model's decoder.
    #[arg(long)]
    pub mode: Option<DecodeMode>,
    #[arg(long)]
    pub nbest: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// TSV of utt_id and reference text.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Hypothesis TSV as written by decode.
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub bias_list: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Every tunable setting of a run.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub synth: SynthConfig,
    decode_mode_set: bool,
}

impl RunConfig {
    /// Applies one key to whichever section owns it. `seed` sets every
    /// stream's seed at once.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        if key == "seed" {
            let s: u64 = kv::value(key, raw)?;
            self.model.seed = s;
            self.train.seed = s;
            self.synth.seed = s;
            return Ok(());
        }
        if key == "decode_mode" {
            self.decode_mode_set = true;
        }
        let known = self.model.set(key, raw)? || self.train.set(key, raw)? || self.decode.set(key, raw)? || self.synth.set(key, raw)?;
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown configuration key {key:?}")))
        }
    }

    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &common.config {
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in kv::parse(&body)? {
                cfg.set(&k, &v)?;
            }
        }
        for item in &common.set {
            let (k, v) = kv::parse_pair(item)?;
            cfg.set(&k, &v)?;
        }
        if let Some(seed) = common.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        Ok(cfg)
    }

    pub fn echo(&self) -> String {
        let mut w = kv::Writer::default();
        self.model.write_kv(&mut w);
        self.train.write_kv(&mut w);
        self.decode.write_kv(&mut w);
        self.synth.write_kv(&mut w);
        w.finish()
    }
}

struct RunLog {
    file: fs::File,
    path: PathBuf,
}

impl RunLog {
    fn create(path: PathBuf, command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<Self> {
        let mut log = Self {
            file: fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            path,
        };
        let mut head = kv::Writer::default();
        head.put("command", command);
        for (k, v) in extra {
            head.put(k, v);
        }
        log.line(format!("{}{}", head.finish(), cfg.echo()).trim_end())?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}").map_err(|e| Error::io(&self.path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn gen_data(args: &GenDataArgs) -> Result<CorpusPaths> {
    let cfg = RunConfig::resolve(&args.common)?;
    ensure_dir(&args.out)?;
    let paths = gen_corpus(&cfg.synth, &args.out)?;
    RunLog::create(args.out.join("run.log"), "gen-data", &cfg, &[("out", args.out.display().to_string())])?;
    Ok(paths)
}

/// Loads the training manifest of a gen-data directory.
pub fn load_examples(data: &Path, model: &Model, limit: Option<usize>) -> Result<Vec<Example>> {
    let paths = CorpusPaths { root: data.to_path_buf() };
    let mut entries = read_manifest(&paths.train())?;
    if let Some(n) = limit {
        entries.truncate(n);
    }
    entries.iter().map(|e| Example::from_manifest(e, data, model)).collect()
}

pub fn train_cmd(args: &TrainArgs) -> Result<PathBuf> {
    let mut cfg = RunConfig::resolve(&args.common)?;
    if let Some(a) = args.mode {
        cfg.model.arch = a;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let paths = CorpusPaths { root: args.data.clone() };
    let vocab = read_vocabulary(&paths.vocab())?;
    cfg.model.vocab_size = vocab.len();
    let first = read_manifest(&paths.train())?
        .first()
        .ok_or_else(|| Error::Config(format!("{} is empty", paths.train().display())))?
        .load(&args.data)?;
    cfg.model.feat_dim = first.frames.cols();
    let model = Model::new(cfg.model.clone(), vocab)?;
    let examples = load_examples(&args.data, &model, args.limit)?;
    ensure_dir(&args.out)?;
    let mut log = RunLog::create(
        args.out.join("run.log"),
        "train",
        &cfg,
        &[
            ("data", args.data.display().to_string()),
            ("utterances", examples.len().to_string()),
            ("parameters", model.num_parameters().to_string()),
        ],
    )?;
    let lambda = cfg.train.lambda;
    let mut log_err = None;
    let result = train(model, &examples, &cfg.train, &args.out, |s| {
        let line = s.log_line(lambda);
        eprintln!("{line}");
        if let Err(e) = log.line(&line) {
            log_err.get_or_insert(e);
        }
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    result?;
    Ok(crate::train::final_checkpoint(&args.out))
}

/// Decodes every manifest entry into hypothesis TSV lines.
pub fn decode_manifest(model: &Model, manifest: &Path, bias: Option<&BiasList>, cfg: &DecodeConfig) -> Result<String> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let empty = BiasList::empty();
    let dv = DynamicVocabulary::new(&model.vocab, bias.unwrap_or(&empty));
    let mut out = String::new();
    for entry in read_manifest(manifest)? {
        let feats = entry.load(dir)?;
        let hyps = decode_utterance(model, &feats, bias, cfg)?;
        for (rank, h) in hyps.iter().take(cfg.nbest).enumerate() {
            let rank = (cfg.nbest > 1).then_some(rank + 1);
            out.push_str(&format_hypothesis(&entry.utt_id, rank, h, &dv)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn decode_cmd(args: &DecodeArgs) -> Result<String> {
    let mut cfg = RunConfig::resolve(&args.common)?;
    let model = checkpoint::load(&args.model)?;
    let d = &mut cfg.decode;
    if let Some(v) = args.mu {
        d.mu = v;
    }
    if let Some(v) = args.gamma {
        d.gamma = v;
    }
    if let Some(v) = args.beam {
        d.beam = v;
    }
    if let Some(v) = args.nbest {
        d.nbest = v;
    }
    if let Some(v) = args.max_len {
        d.max_len = v;
    }
    match args.mode {
        Some(m) => d.mode = m,
        None if !cfg.decode_mode_set && model.config.arch == Arch::Transducer => d.mode = DecodeMode::Rnnt,
        None => {}
    }
    cfg.model = model.config.clone();
    let bias = match &args.bias_list {
        Some(p) => {
            let body = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(BiasList::parse(&body, &model.vocab).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let tsv = decode_manifest(&model, &args.manifest, bias.as_ref(), &cfg.decode)?;
    if let Some(out) = &args.out {
        fs::write(out, &tsv).map_err(|e| Error::io(out, e))?;
        let mut extra = vec![
            ("model", args.model.display().to_string()),
            ("manifest", args.manifest.display().to_string()),
        ];
        if let Some(b) = &args.bias_list {
            extra.push(("bias_list", b.display().to_string()));
        }
        RunLog::create(with_suffix(out, ".log"), "decode", &cfg, &extra)?;
    }
    Ok(tsv)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Best hypothesis text per utterance from decode output.
pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, String)>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let (utt, text) = match f.len() {
            4 => (f[0], f[1]),
            5 if f[1] == "1" => (f[0], f[2]),
            5 => continue,
            _ => return Err(Error::format("hypothesis", path, format!("line {}: expected 4 or 5 fields", i + 1))),
        };
        out.push((utt.to_string(), text.to_string()));
    }
    Ok(out)
}

pub fn score_cmd(args: &ScoreArgs) -> Result<String> {
    let refs = read_pairs(&args.reference, "reference")?;
    let hyps = read_hypotheses(&args.hyp)?;
    let ref_ids: BTreeSet<&str> = refs.iter().map(|r| r.0.as_str()).collect();
    let hyp_ids: BTreeSet<&str> = hyps.iter().map(|h| h.0.as_str()).collect();
    let missing: Vec<&str> = ref_ids.difference(&hyp_ids).copied().collect();
    let extra: Vec<&str> = hyp_ids.difference(&ref_ids).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Validation(format!(
            "utterance ids differ; missing hypotheses: [{}]; unknown hypotheses: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let phrases: Vec<Vec<String>> = match &args.bias_list {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::io(p, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect(),
        None => Vec::new(),
    };
    let by_id: std::collections::HashMap<&str, &str> = hyps.iter().map(|(u, t)| (u.as_str(), t.as_str())).collect();
    let ref_texts: Vec<&str> = refs.iter().map(|r| r.1.as_str()).collect();
    let hyp_texts: Vec<&str> = refs.iter().map(|r| by_id[r.0.as_str()]).collect();
    let report = score_biased(&ref_texts, &hyp_texts, &phrases).report();
    if let Some(out) = &args.out {
        fs::write(out, &report).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::GenData(a) => gen_data(a).map(|p| eprintln!("wrote corpus to {}", p.root.display())),
        Command::Train(a) => train_cmd(a).map(|p| eprintln!("wrote {}", p.display())),
        Command::Decode(a) => decode_cmd(a).map(|tsv| {
            if a.out.is_none() {
                print!("{tsv}");
            }
        }),
        Command::Score(a) => score_cmd(a).map(|r| print!("{r}")),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
