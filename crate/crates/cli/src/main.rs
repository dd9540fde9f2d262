use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use gcd_core::chart::{count_parse_trees, sac_measure, SacEngine};
use gcd_core::condition::{Conditioner, DEFAULT_BUDGET};
use gcd_core::decode::{oracle_invariance_check, DecodeConfig, Decoder, ToyLm};
use gcd_core::grammar::{Builtin, Cfg, TermId};
use gcd_core::pda::compile_rtn;
use gcd_core::perf::{
    envelope, fit_affine, from_jsonl, proxy, record_chart_run, record_decode_run, to_jsonl, BitsetEngine,
    EnvelopeConfig, FitResult, ProxyWeights, TnnModel, TraceRecord,
};
use gcd_core::reach::Engine;
use gcd_core::rewrite::{enumerate_family, select_min, CostKey, DEFAULT_MEMBER_CAP};
use gcd_core::selftest::{format_report, run_criterion, SelftestOptions, CRITERIA};
use gcd_core::token::{admissible_tokens, Vocab};
use gcd_core::counters::CounterVector;

#[derive(Parser)]
#[command(name = "gcd", version, about = "Grammar-constrained decoding laboratory")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a grammar to a pushdown automaton.
    Compile {
        #[arg(long)]
        grammar: String,
        /// Write the automaton as JSON (`-` for stdout).
        #[arg(long)]
        dump_pda: Option<String>,
    },
    /// Print the admissible next symbols after a prefix.
    Mask {
        #[arg(long)]
        grammar: String,
        /// Terminal string, e.g. "aab" or "a a b".
        #[arg(long, default_value = "")]
        prefix: String,
        /// Print admissible tokens of this vocabulary instead of terminals.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Sample or beam-search a constrained sequence.
    Generate {
        #[arg(long)]
        grammar: String,
        /// Model file, or `random:SEED`.
        #[arg(long)]
        lm: String,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        /// JSON Lines trace (`-` for stdout).
        #[arg(long)]
        trace: Option<String>,
        /// Record wall-clock phase times in the trace.
        #[arg(long)]
        timings: bool,
    },
    /// Per-step structure growth of a parse.
    Sac {
        #[arg(long)]
        grammar: String,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = EngineArg::Chart)]
        engine: EngineArg,
        /// CSV output (`-` for stdout, the default).
        #[arg(long, default_value = "-")]
        csv: String,
    },
    /// Exact number of parse trees of a string.
    Parses {
        #[arg(long)]
        grammar: String,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Compare hard masking with exact conditioning at a prefix.
    Condition {
        #[arg(long)]
        grammar: String,
        #[arg(long)]
        lm: String,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Space-separated token names.
        #[arg(long, default_value = "")]
        prefix: String,
        /// Maximum sequence length, eos included.
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        /// Refuse when `|V|^(horizon - |prefix|)` exceeds this.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long, default_value = "-")]
        report: String,
    },
    /// Search a bounded rewrite family for the cheapest grammar.
    Optimize {
        #[arg(long)]
        grammar: String,
        #[arg(long, default_value_t = 2)]
        budget: usize,
        /// One terminal string per line.
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "sac,kappa,tokenizer")]
        priority: String,
        #[arg(long, default_value_t = DEFAULT_MEMBER_CAP)]
        member_cap: usize,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        table: Option<String>,
    },
    /// Record a per-step counter and timing trace.
    Bench {
        #[arg(long)]
        grammar: String,
        /// Terminal string, for the chart and bitset modes.
        #[arg(long, conflicts_with = "input_file")]
        input: Option<String>,
        #[arg(long)]
        input_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BenchMode::Chart)]
        mode: BenchMode,
        /// Model for `--mode decode`, or `random:SEED`.
        #[arg(long)]
        lm: Option<String>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value = "-")]
        trace: String,
    },
    /// Fit `T_mask = a·S + b` to a trace.
    Fit {
        #[arg(long)]
        trace: PathBuf,
        /// Proxy weights, `name=value,...`.
        #[arg(long, default_value = "chart_packed_nodes")]
        weights: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Predict per-step latency from a fit.
    Envelope {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        grammar: String,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Synthetic neural step time: `const:X` or `linear:A,B`.
        #[arg(long, default_value = "const:1e6")]
        vnn: String,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value = "chart_packed_nodes")]
        weights: String,
        #[arg(long, default_value_t = 0.0)]
        t_sync: f64,
        #[arg(long, default_value_t = 1.0)]
        c_sel: f64,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Compare admissible masks of two grammars on all live prefixes.
    Invariance {
        #[arg(long)]
        g1: String,
        #[arg(long)]
        g2: String,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Directory with G1.cfg..G4.cfg replacing the built-ins.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Comma-separated criterion numbers.
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        timings: bool,
    },
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Terminal string.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Chart,
    Fast,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Chart,
    Bitset,
    Decode,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    inputs: BTreeMap<String, String>,
    seed: u64,
    version: &'static str,
    start_ms: u128,
    end_ms: u128,
}

struct Run {
    manifest: RunManifest,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    fn read(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    fn grammar(&mut self, reference: &str) -> Result<Cfg> {
        let text = match reference.strip_prefix("builtin:") {
            Some(name) => {
                let b: Builtin = name.parse()?;
                self.manifest
                    .inputs
                    .insert(reference.to_string(), sha256_hex(b.source().as_bytes()));
                b.source().to_string()
            }
            None => self.read(Path::new(reference))?,
        };
        Ok(gcd_core::grammar::parse_grammar(&text).with_context(|| format!("grammar {reference}"))?)
    }

    fn vocab(&mut self, path: Option<&Path>, g: &Cfg) -> Result<Vocab> {
        match path {
            Some(p) => {
                let text = self.read(p)?;
                Ok(Vocab::from_json(&text).with_context(|| format!("vocabulary {}", p.display()))?)
            }
            None => Ok(Vocab::singleton(g)),
        }
    }

    fn lm(&mut self, source: &str, vocab: &Vocab) -> Result<ToyLm> {
        if let Some(seed) = source.strip_prefix("random:") {
            let seed: u64 = seed.parse().map_err(|_| anyhow!("bad model seed `{seed}`"))?;
            self.manifest.inputs.insert(source.to_string(), String::new());
            return Ok(ToyLm::random(seed, vocab.len()));
        }
        let text = self.read(Path::new(source))?;
        Ok(ToyLm::from_json(&text, vocab).with_context(|| format!("model {source}"))?)
    }

    fn input(&mut self, g: &Cfg, args: &InputArgs) -> Result<Vec<TermId>> {
        let text = match (&args.input, &args.input_file) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => self.read(p)?,
            (None, None) => bail!("--input or --input-file is required"),
        };
        Ok(g.parse_terminal_string(&text)?)
    }
}

fn write_out(path: &str, content: &str) -> Result<()> {
    if path == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(content.as_bytes())?;
        out.flush()?;
    } else {
        fs::write(path, content).with_context(|| format!("cannot write {path}"))?;
    }
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn name_of(c: &Command) -> &'static str {
    match c {
        Command::Compile { .. } => "compile",
        Command::Mask { .. } => "mask",
        Command::Generate { .. } => "generate",
        Command::Sac { .. } => "sac",
        Command::Parses { .. } => "parses",
        Command::Condition { .. } => "condition",
        Command::Optimize { .. } => "optimize",
        Command::Bench { .. } => "bench",
        Command::Fit { .. } => "fit",
        Command::Envelope { .. } => "envelope",
        Command::Invariance { .. } => "invariance",
        Command::Selftest { .. } => "selftest",
    }
}

/// `Ok(false)` is a clean run whose result is negative (mismatch, failed
/// criterion); it maps to exit code 1 like a domain error.
fn dispatch(cli: Cli, run: &mut Run) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Compile { grammar, dump_pda } => {
            let g = run.grammar(&grammar)?;
            let npda = compile_rtn(&g);
            if let Some(path) = &dump_pda {
                write_out(path, &json(&npda.dump(&g)))?;
            }
            if dump_pda.as_deref() != Some("-") {
                println!("states {}", npda.num_states());
                println!("stack_symbols {}", npda.stack_alphabet().len());
                println!("transitions {}", npda.transitions().len());
                println!("kappa {}", g.kappa());
            }
        }
        Command::Mask { grammar, prefix, vocab } => {
            let g = run.grammar(&grammar)?.reduce()?;
            let u = g.parse_terminal_string(&prefix)?;
            let engine = Engine::new(compile_rtn(&g));
            let s = engine.run(&u);
            if !s.is_live() {
                eprintln!("prefix `{prefix}` is not viable");
            }
            match vocab {
                Some(p) => {
                    let v = run.vocab(Some(&p), &g)?;
                    let bound = v.bind(&g)?;
                    for y in admissible_tokens(&engine, &s, &bound).iter() {
                        println!("{}", v.name(y));
                    }
                }
                None => {
                    let n = engine.next_terminals(&s);
                    for t in n.terminals {
                        println!("{}", g.terminal_name(t));
                    }
                    if n.eos {
                        println!("{}", gcd_core::token::EOS_NAME);
                    }
                }
            }
        }
        Command::Generate {
            grammar,
            lm,
            vocab,
            beam,
            max_len,
            trace,
            timings,
        } => {
            let g = run.grammar(&grammar)?;
            let v = run.vocab(vocab.as_deref(), &g)?;
            let lm = run.lm(&lm, &v)?;
            let d = Decoder::new(&g, &v)?;
            let cfg = DecodeConfig {
                beam,
                max_len,
                seed,
                timings,
            };
            if beam == 1 {
                let s = d.sample(&lm, &cfg)?;
                println!("{}", v.format_tokens(&s.tokens));
                if !s.terminated {
                    eprintln!("length limit reached before eos");
                }
                if let Some(path) = trace {
                    let lines: String = s
                        .trace
                        .iter()
                        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
                        .collect();
                    write_out(&path, &lines)?;
                }
            } else {
                let r = d.beam(&lm, &cfg)?;
                for h in &r.hypotheses {
                    println!("{:.6}\t{}\t{}", h.log_prob, h.terminated, v.format_tokens(&h.tokens));
                }
                if let Some(path) = trace {
                    let lines: String = r
                        .steps
                        .iter()
                        .map(|s| serde_json::to_string(s).expect("serializable") + "\n")
                        .collect();
                    write_out(&path, &lines)?;
                }
            }
        }
        Command::Sac {
            grammar,
            input,
            engine,
            csv,
        } => {
            let g = run.grammar(&grammar)?;
            let w = run.input(&g, &input)?;
            let kind = match engine {
                EngineArg::Chart => SacEngine::PackedChart,
                EngineArg::Fast => SacEngine::RegularFastPath,
            };
            let s = sac_measure(&g, &w, kind)?;
            write_out(&csv, &s.to_csv())?;
            if csv != "-" {
                println!("steps {}", s.steps.len());
                println!("cum_symbol {}", s.cumulative_symbol());
                println!("cum_packed {}", s.cumulative_packed());
                println!("accepted {}", s.accepted);
            }
        }
        Command::Parses { grammar, input } => {
            let g = run.grammar(&grammar)?;
            let w = run.input(&g, &input)?;
            println!("{}", count_parse_trees(&g, &w)?);
        }
        Command::Condition {
            grammar,
            lm,
            vocab,
            prefix,
            horizon,
            budget,
            report,
        } => {
            let g = run.grammar(&grammar)?;
            let v = run.vocab(vocab.as_deref(), &g)?;
            let lm = run.lm(&lm, &v)?;
            let d = Decoder::new(&g, &v)?;
            let p = v.parse_tokens(&prefix)?;
            let r = if lm.is_exact() {
                Conditioner::<num_rational::BigRational>::new(&lm, &d, horizon)
                    .with_budget(budget)
                    .distortion(&p)?
            } else {
                Conditioner::<f64>::new(&lm, &d, horizon)
                    .with_budget(budget)
                    .distortion(&p)?
            };
            write_out(&report, &json(&r))?;
            if r.violation {
                eprintln!("bound violated");
                return Ok(false);
            }
        }
        Command::Optimize {
            grammar,
            budget,
            workload,
            priority,
            member_cap,
            out,
            table,
        } => {
            let g = run.grammar(&grammar)?;
            let text = run.read(&workload)?;
            let w = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| g.parse_terminal_string(l))
                .collect::<Result<Vec<_>, _>>()?;
            let prio = priority
                .split(',')
                .map(|k| k.parse::<CostKey>().map_err(|e| anyhow!(e)))
                .collect::<Result<Vec<_>>>()?;
            let fam = enumerate_family(&g, budget, member_cap)?;
            if fam.partial {
                eprintln!("member cap {member_cap} reached; family is partial");
            }
            let sel = select_min(&fam, &w, &prio, None)?;
            let best = &fam.members[sel.winner];
            write_out(
                &out,
                &format!(
                    "# selected from {} members by measured proxies (priority {priority}), not intrinsic cost\n{}",
                    fam.members.len(),
                    best.grammar
                ),
            )?;
            if let Some(path) = table {
                let mut csv = String::from("member,hash,kappa,sac,tokenizer,size,rewrites,winner\n");
                for (i, (m, c)) in fam.members.iter().zip(&sel.costs).enumerate() {
                    csv.push_str(&format!(
                        "{i},{},{},{},{},{},{},{}\n",
                        m.hash,
                        c.kappa,
                        c.sac,
                        c.tokenizer,
                        m.grammar.size(),
                        m.path.len(),
                        i == sel.winner
                    ));
                }
                write_out(&path, &csv)?;
            }
        }
        Command::Bench {
            grammar,
            input,
            input_file,
            mode,
            lm,
            vocab,
            max_len,
            trace,
        } => {
            let g = run.grammar(&grammar)?;
            let input = InputArgs { input, input_file };
            let records: Vec<TraceRecord> = match mode {
                BenchMode::Chart => {
                    let w = run.input(&g, &input)?;
                    record_chart_run(&g, &w)?
                }
                BenchMode::Bitset => {
                    let w = run.input(&g, &input)?;
                    let be = BitsetEngine::new(Engine::for_grammar(&g)?);
                    let mut s = be.engine().init();
                    let mut out = Vec::new();
                    for (i, &a) in w.iter().enumerate() {
                        let mut c = CounterVector::default();
                        let clock = std::time::Instant::now();
                        let next = be.engine().step_terminal_counted(&s, a, &mut c);
                        let t_update_ns = clock.elapsed().as_nanos() as u64;
                        let clock = std::time::Instant::now();
                        be.scan(&next, &mut c);
                        let t_mask_ns = clock.elapsed().as_nanos() as u64;
                        let (n, e) = gcd_core::perf::representation_size(&next);
                        out.push(TraceRecord {
                            t: i + 1,
                            counters: c,
                            t_update_ns,
                            t_mask_ns,
                            m_nodes: Some(n),
                            m_edges: Some(e),
                        });
                        s = next;
                    }
                    out
                }
                BenchMode::Decode => {
                    let v = run.vocab(vocab.as_deref(), &g)?;
                    let source = lm.ok_or_else(|| anyhow!("--mode decode needs --lm"))?;
                    let lm = run.lm(&source, &v)?;
                    let d = Decoder::new(&g, &v)?;
                    let cfg = DecodeConfig {
                        max_len,
                        seed,
                        ..Default::default()
                    };
                    record_decode_run(&d, &lm, &cfg)?.1
                }
            };
            write_out(&trace, &to_jsonl(&records))?;
        }
        Command::Fit { trace, weights, out } => {
            let text = run.read(&trace)?;
            let records = from_jsonl(&text)?;
            let w = ProxyWeights::parse(&weights)?;
            let s = proxy(&records.iter().map(|r| r.counters).collect::<Vec<_>>(), &w);
            let pairs: Vec<(f64, f64)> = s
                .into_iter()
                .zip(&records)
                .map(|(s, r)| (s, r.t_mask_ns as f64))
                .collect();
            let f = fit_affine(&pairs)?;
            write_out(&out, &json(&f))?;
            eprintln!("R2 {:.4}, max relative error {:.4} over {} samples", f.r2, f.max_rel_error, f.samples);
        }
        Command::Envelope {
            fit,
            grammar,
            input,
            vocab,
            vnn,
            beam,
            weights,
            t_sync,
            c_sel,
            out,
        } => {
            let fit: FitResult = serde_json::from_str(&run.read(&fit)?).context("fit file")?;
            let g = run.grammar(&grammar)?;
            let w = run.input(&g, &input)?;
            let v = run.vocab(vocab.as_deref(), &g)?;
            let bound = v.bind(&g)?;
            let weights = ProxyWeights::parse(&weights)?;
            let trace = record_chart_run(&g, &w)?;
            let s = proxy(&trace.iter().map(|r| r.counters).collect::<Vec<_>>(), &weights);
            let engine = Engine::for_grammar(&g)?;
            let mut state = engine.init();
            let mut k = Vec::with_capacity(w.len());
            for &a in &w {
                state = engine.step_terminal(&state, a);
                k.push(admissible_tokens(&engine, &state, &bound).count());
            }
            let cfg = EnvelopeConfig {
                vocab_size: v.len(),
                beam,
                tnn: vnn.parse::<TnnModel>()?,
                t_sync,
                c_sel,
            };
            let e = envelope(&cfg, &s, &k, &fit);
            #[derive(Serialize)]
            struct Labeled<'a> {
                note: &'static str,
                #[serde(flatten)]
                envelope: &'a gcd_core::perf::LatencyEnvelope,
            }
            write_out(
                &out,
                &json(&Labeled {
                    note: "T_NN is synthetic; T_mask is predicted from the fit",
                    envelope: &e,
                }),
            )?;
            match e.crossover {
                Some(t) => eprintln!("masking overtakes T_NN at t = {t}"),
                None => eprintln!("no crossover within {} steps", w.len()),
            }
        }
        Command::Invariance { g1, g2, depth, vocab } => {
            let a = run.grammar(&g1)?;
            let b = run.grammar(&g2)?;
            let v = run.vocab(vocab.as_deref(), &a)?;
            let r = oracle_invariance_check(&a, &b, &v, depth)?;
            match r.mismatch {
                None => println!("no mismatch ({} prefixes, depth {depth})", r.prefixes_checked),
                Some(m) => {
                    println!(
                        "mismatch at `{}`: only {g1} [{}], only {g2} [{}]",
                        m.witness(),
                        m.only_left.join(" "),
                        m.only_right.join(" ")
                    );
                    return Ok(false);
                }
            }
        }
        Command::Selftest { fixtures, only, timings } => {
            let mut opts = SelftestOptions {
                seed,
                ..Default::default()
            };
            if let Some(dir) = fixtures {
                for (i, b) in Builtin::ALL.iter().enumerate() {
                    let p = dir.join(format!("{}.cfg", b.name()));
                    if p.exists() {
                        opts.sources[i] = (p.display().to_string(), run.read(&p)?);
                    }
                }
            }
            let ids: Vec<u8> = match only {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u8>()
                            .ok()
                            .filter(|i| CRITERIA.iter().any(|c| c.0 == *i))
                            .ok_or_else(|| anyhow!("unknown criterion `{s}`"))
                    })
                    .collect::<Result<_>>()?,
                None => CRITERIA.iter().map(|c| c.0).collect(),
            };
            let results: Vec<_> = ids.iter().map(|&i| run_criterion(i, &opts)).collect();
            print!("{}", format_report(&results, timings));
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let mut run = Run {
        manifest: RunManifest {
            subcommand: name_of(&cli.command),
            inputs: BTreeMap::new(),
            seed: cli.seed,
            version: env!("CARGO_PKG_VERSION"),
            start_ms: now_ms(),
            end_ms: 0,
        },
    };
    let outcome = dispatch(cli, &mut run);
    run.manifest.end_ms = now_ms();
    eprintln!("manifest {}", serde_json::to_string(&run.manifest).expect("serializable"));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
