//! Counter traces, proxies, affine time fits, latency envelopes, and the
//! bitset-scan engine variant.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{ChartError, PackedChart};
use crate::counters::CounterVector;
use crate::decode::{DecodeConfig, DecodeError, Decoder, Sample, ToyLm};
use crate::grammar::{Cfg, TermId};
use crate::pda::{Input, StateId};
use crate::reach::{Engine, EngineState};

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("unknown counter `{0}`")]
    UnknownCounter(String),
    #[error("weight for `{name}` is {value}; weights must be finite and nonnegative")]
    BadWeight { name: String, value: f64 },
    #[error("at least one weight must be positive")]
    ZeroWeights,
    #[error("cannot parse weights `{0}` (expected name=value,...)")]
    WeightSyntax(String),
    #[error("fit needs at least 8 samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate design: {distinct} distinct proxy values (need at least 4)")]
    Degenerate { distinct: usize },
    #[error("non-finite sample ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("cannot parse T_NN model `{0}` (expected const:X or linear:A,B)")]
    TnnSyntax(String),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// One step of an instrumented run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub counters: CounterVector,
    pub t_update_ns: u64,
    pub t_mask_ns: u64,
    /// Live-configuration size as nodes and as edges of the engine state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_nodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_edges: Option<u64>,
}

fn ns(since: Instant) -> u64 {
    since.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

/// Runs the packed chart over `w`. The chart update is the whole masking
/// cost of a chart engine, so both time fields carry the step time.
pub fn record_chart_run(g: &Cfg, w: &[TermId]) -> Result<Vec<TraceRecord>, PerfError> {
    let mut chart = PackedChart::new(g)?;
    let mut out = Vec::with_capacity(w.len());
    for (i, &a) in w.iter().enumerate() {
        let clock = Instant::now();
        let c = chart.step(a);
        let dt = ns(clock);
        out.push(TraceRecord {
            t: i + 1,
            counters: CounterVector {
                chart_symbol_nodes: c.new_symbol,
                chart_packed_nodes: c.new_packed,
                ..Default::default()
            },
            t_update_ns: dt,
            t_mask_ns: dt,
            m_nodes: None,
            m_edges: None,
        });
    }
    Ok(out)
}

/// Samples one constrained sequence with timings on and converts its trace.
pub fn record_decode_run(decoder: &Decoder, lm: &ToyLm, cfg: &DecodeConfig) -> Result<(Sample, Vec<TraceRecord>), PerfError> {
    let cfg = DecodeConfig {
        timings: true,
        ..cfg.clone()
    };
    let sample = decoder.sample(lm, &cfg)?;
    let mut state = decoder.engine().init();
    let mut out = Vec::with_capacity(sample.trace.len());
    for st in &sample.trace {
        if st.token != decoder.vocab().eos() {
            state = crate::token::step_token(decoder.engine(), &state, decoder.vocab(), st.token);
        }
        let (n, e) = representation_size(&state);
        out.push(TraceRecord {
            t: st.t,
            counters: st.counters,
            t_update_ns: st.t_update_ns.unwrap_or(0),
            t_mask_ns: st.t_mask_ns.unwrap_or(0),
            m_nodes: Some(n),
            m_edges: Some(e),
        });
    }
    Ok((sample, out))
}

/// Nodes and edges of the configuration automaton.
pub fn representation_size(s: &EngineState) -> (u64, u64) {
    (s.configs().num_nodes() as u64, s.configs().num_edges() as u64)
}

pub fn to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>, PerfError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PerfError::Trace {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Steps are strictly increasing and cumulative time never decreases or
/// overflows.
pub fn cumulative_time_monotone(trace: &[TraceRecord]) -> bool {
    let mut total: u64 = 0;
    for (i, r) in trace.iter().enumerate() {
        if i > 0 && trace[i - 1].t >= r.t {
            return false;
        }
        match total.checked_add(r.t_update_ns.max(r.t_mask_ns)) {
            Some(next) => total = next,
            None => return false,
        }
    }
    true
}

/// Nonnegative weights over counter names.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProxyWeights(BTreeMap<String, f64>);

impl ProxyWeights {
    pub fn new<I: IntoIterator<Item = (String, f64)>>(weights: I) -> Result<Self, PerfError> {
        let mut map = BTreeMap::new();
        for (name, value) in weights {
            if CounterVector::NAMES.iter().all(|n| *n != name) {
                return Err(PerfError::UnknownCounter(name));
            }
            if !value.is_finite() || value < 0.0 {
                return Err(PerfError::BadWeight { name, value });
            }
            map.insert(name, value);
        }
        if !map.values().any(|&v| v > 0.0) {
            return Err(PerfError::ZeroWeights);
        }
        Ok(ProxyWeights(map))
    }

    pub fn unit(name: &str) -> Result<Self, PerfError> {
        ProxyWeights::new([(name.to_string(), 1.0)])
    }

    /// Parses `name=value,name=value`; a bare name means weight 1.
    pub fn parse(text: &str) -> Result<Self, PerfError> {
        let mut v = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((n, x)) => {
                    let x: f64 = x
                        .trim()
                        .parse()
                        .map_err(|_| PerfError::WeightSyntax(text.to_string()))?;
                    v.push((n.trim().to_string(), x));
                }
                None => v.push((part.to_string(), 1.0)),
            }
        }
        ProxyWeights::new(v)
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    pub fn apply(&self, c: &CounterVector) -> f64 {
        self.0
            .iter()
            .map(|(n, w)| w * c.get(n).expect("validated name") as f64)
            .sum()
    }
}

/// Per-step proxy values `S_t`.
pub fn proxy(series: &[CounterVector], weights: &ProxyWeights) -> Vec<f64> {
    series.iter().map(|c| weights.apply(c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
    pub max_rel_error: f64,
    pub samples: usize,
}

impl FitResult {
    pub fn predict(&self, s: f64) -> f64 {
        self.a * s + self.b
    }
}

/// Least squares for `T = a·S + b` with `a, b ≥ 0`.
pub fn fit_affine(pairs: &[(f64, f64)]) -> Result<FitResult, PerfError> {
    if let Some(&(s, t)) = pairs.iter().find(|(s, t)| !s.is_finite() || !t.is_finite()) {
        return Err(PerfError::NonFinite(s, t));
    }
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 4 {
        return Err(PerfError::Degenerate { distinct: xs.len() });
    }
    if pairs.len() < 8 {
        return Err(PerfError::TooFewSamples(pairs.len()));
    }
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sse = |a: f64, b: f64| pairs.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum::<f64>();
    let ols_a = sxy / sxx;
    let ols_b = my - ols_a * mx;
    let raw_xx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let raw_xy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    // The constrained optimum is the unconstrained one or lies on a face.
    let mut candidates = vec![(0.0, my.max(0.0)), (0.0, 0.0)];
    if raw_xx > 0.0 {
        candidates.push(((raw_xy / raw_xx).max(0.0), 0.0));
    }
    if ols_a >= 0.0 && ols_b >= 0.0 {
        candidates.push((ols_a, ols_b));
    }
    let (a, b) = candidates
        .into_iter()
        .min_by(|x, y| sse(x.0, x.1).total_cmp(&sse(y.0, y.1)))
        .expect("nonempty");
    let sst: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let res = sse(a, b);
    let r2 = if sst > 0.0 { 1.0 - res / sst } else if res == 0.0 { 1.0 } else { 0.0 };
    let max_rel_error = pairs
        .iter()
        .filter(|p| p.1 != 0.0)
        .map(|p| ((a * p.0 + b - p.1) / p.1).abs())
        .fold(0.0, f64::max);
    Ok(FitResult {
        a,
        b,
        r2,
        max_rel_error,
        samples: pairs.len(),
    })
}

/// Ordinary least-squares slope of `ln y` against `ln x`; points with a
/// nonpositive coordinate are skipped.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Synthetic neural step time as a function of `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TnnModel {
    Const { value: f64 },
    Linear { a: f64, b: f64 },
}

impl TnnModel {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            TnnModel::Const { value } => value,
            TnnModel::Linear { a, b } => a * t as f64 + b,
        }
    }
}

impl std::str::FromStr for TnnModel {
    type Err = PerfError;
    fn from_str(s: &str) -> Result<Self, PerfError> {
        let bad = || PerfError::TnnSyntax(s.to_string());
        let num = |x: &str| x.trim().parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
        match s.split_once(':') {
            Some(("const", v)) => Ok(TnnModel::Const {
                value: num(v).ok_or_else(bad)?,
            }),
            Some(("linear", v)) => {
                let (a, b) = v.split_once(',').ok_or_else(bad)?;
                Ok(TnnModel::Linear {
                    a: num(a).ok_or_else(bad)?,
                    b: num(b).ok_or_else(bad)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeConfig {
    pub vocab_size: usize,
    pub beam: usize,
    pub tnn: TnnModel,
    pub t_sync: f64,
    /// Cost per mask slot scanned or selected over.
    pub c_sel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeStep {
    pub t: usize,
    pub t_nn: f64,
    pub t_mask: f64,
    pub t_sel_dense: f64,
    pub t_sel_sparse: f64,
    pub dense: f64,
    pub sparse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyEnvelope {
    pub config: EnvelopeConfig,
    pub fit: FitResult,
    pub steps: Vec<EnvelopeStep>,
    pub dense_total: f64,
    pub sparse_total: f64,
    /// Total predicted masking time over all hypotheses.
    pub symbolic_total: f64,
    /// First step whose masking time exceeds the synthetic neural time.
    pub crossover: Option<usize>,
}

/// Critical-path step time `max{T_NN, T_mask} + T_sync + T_sel`.
pub fn step_time(t_nn: f64, t_mask: f64, t_sync: f64, t_sel: f64) -> f64 {
    t_nn.max(t_mask) + t_sync + t_sel
}

/// Predicts per-step latency from proxy values `s[t-1]` and admissible
/// counts `k[t-1]`. Neural, masking and selection work all scale with the
/// beam width; the dense path selects over `V` slots, the sparse path over
/// `K_t`.
pub fn envelope(cfg: &EnvelopeConfig, s: &[f64], k: &[usize], fit: &FitResult) -> LatencyEnvelope {
    assert_eq!(s.len(), k.len(), "one admissible count per proxy value");
    let b = cfg.beam as f64;
    let mut steps = Vec::with_capacity(s.len());
    let mut crossover = None;
    for (i, (&st, &kt)) in s.iter().zip(k).enumerate() {
        let t = i + 1;
        let t_nn = b * cfg.tnn.at(t);
        let t_mask = b * fit.predict(st);
        let t_sel_dense = b * cfg.vocab_size as f64 * cfg.c_sel;
        let t_sel_sparse = b * kt as f64 * cfg.c_sel;
        if crossover.is_none() && t_mask > t_nn {
            crossover = Some(t);
        }
        steps.push(EnvelopeStep {
            t,
            t_nn,
            t_mask,
            t_sel_dense,
            t_sel_sparse,
            dense: step_time(t_nn, t_mask, cfg.t_sync, t_sel_dense),
            sparse: step_time(t_nn, t_mask, cfg.t_sync, t_sel_sparse),
        });
    }
    LatencyEnvelope {
        config: cfg.clone(),
        fit: *fit,
        dense_total: steps.iter().map(|s| s.dense).sum(),
        sparse_total: steps.iter().map(|s| s.sparse).sum(),
        symbolic_total: steps.iter().map(|s| s.t_mask).sum(),
        crossover,
        steps,
    }
}

/// Engine variant that materializes the active control states as a bitset
/// by scanning every slot once per step.
pub struct BitsetEngine {
    engine: Engine,
}

impl BitsetEngine {
    pub fn new(engine: Engine) -> Self {
        BitsetEngine { engine }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn slots(&self) -> usize {
        self.engine.kappa()
    }

    /// Bitset of control states with at least one live configuration.
    pub fn scan(&self, s: &EngineState, counters: &mut CounterVector) -> Vec<u64> {
        let kappa = self.slots();
        let mut bits = vec![0u64; kappa.div_ceil(64)];
        for q in 0..kappa {
            counters.bitset_slots_scanned += 1;
            if !s.configs().edges_from(q as u32).is_empty() {
                bits[q / 64] |= 1 << (q % 64);
            }
        }
        bits
    }

    pub fn step(&self, s: &EngineState, a: TermId, counters: &mut CounterVector) -> (EngineState, Vec<u64>) {
        let next = self.engine.step_terminal_counted(s, a, counters);
        let bits = self.scan(&next, counters);
        (next, bits)
    }

    /// Terminals read by some active control state.
    pub fn candidate_terminals(&self, bits: &[u64]) -> Vec<TermId> {
        let npda = self.engine.npda();
        let mut out: Vec<TermId> = (0..self.slots())
            .filter(|q| bits[q / 64] >> (q % 64) & 1 == 1)
            .flat_map(|q| npda.terminal_moves(q as StateId))
            .filter_map(|tr| match tr.input {
                Input::Terminal(a) => Some(a),
                Input::Epsilon => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Per-step counters over `w`.
    pub fn run(&self, w: &[TermId]) -> Vec<CounterVector> {
        let mut s = self.engine.init();
        let mut out = Vec::with_capacity(w.len());
        for &a in w {
            let mut c = CounterVector::default();
            s = self.step(&s, a, &mut c).0;
            out.push(c);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeamScaling {
    pub beam: usize,
    pub work: u64,
    pub doubled_work: u64,
    /// `doubled_work / (2 · work)`.
    pub ratio: f64,
}

/// Total engine work of a beam run with width `B` against width `2B`.
pub fn beam_scaling(decoder: &Decoder, lm: &ToyLm, beam: usize, max_len: usize) -> Result<BeamScaling, PerfError> {
    let work = |b: usize| -> Result<u64, PerfError> {
        let r = decoder.beam(
            lm,
            &DecodeConfig {
                beam: b,
                max_len,
                ..Default::default()
            },
        )?;
        Ok(r.total.values().iter().sum())
    };
    let w1 = work(beam)?;
    let w2 = work(2 * beam)?;
    Ok(BeamScaling {
        beam,
        work: w1,
        doubled_work: w2,
        ratio: w2 as f64 / (2.0 * w1 as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, Builtin};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn g4_chart_trace_matches_closed_form() {
        let g = builtin(Builtin::G4);
        let trace = record_chart_run(&g, &[0; 20]).unwrap();
        let w = ProxyWeights::unit("chart_packed_nodes").unwrap();
        let s = proxy(&trace.iter().map(|r| r.counters).collect::<Vec<_>>(), &w);
        for (i, v) in s.iter().enumerate() {
            let t = (i + 1) as f64;
            assert_eq!(*v, t * (t - 1.0) / 2.0);
        }
        let text = to_jsonl(&trace);
        assert_eq!(from_jsonl(&text).unwrap(), trace);
        assert!(cumulative_time_monotone(&trace));
    }

    #[test]
    fn weights_validate() {
        assert!(matches!(ProxyWeights::unit("nope"), Err(PerfError::UnknownCounter(n)) if n == "nope"));
        assert!(matches!(ProxyWeights::parse("chart_packed_nodes=0"), Err(PerfError::ZeroWeights)));
        let w = ProxyWeights::parse("chart_packed_nodes, bitset_slots_scanned=0.5").unwrap();
        let c = CounterVector {
            chart_packed_nodes: 4,
            bitset_slots_scanned: 2,
            engine_edges_touched: 100,
            ..Default::default()
        };
        assert_eq!(w.apply(&c), 5.0);
        let zero_ext = ProxyWeights::parse("chart_packed_nodes, bitset_slots_scanned=0.5, saturation_iterations=0").unwrap();
        assert_eq!(zero_ext.apply(&c), w.apply(&c));
    }

    #[test]
    fn bitset_scans_kappa_slots() {
        for (b, k) in [(Builtin::G1, 8), (Builtin::G2, 15)] {
            let g = builtin(b);
            let be = BitsetEngine::new(Engine::for_grammar(&g).unwrap());
            let w = g.parse_terminal_string("aaabbb").unwrap();
            let series = be.run(&w);
            let s = proxy(&series, &ProxyWeights::unit("bitset_slots_scanned").unwrap());
            assert!(s.iter().all(|&v| v == k as f64));
        }
        let g = builtin(Builtin::G1);
        let be = BitsetEngine::new(Engine::for_grammar(&g).unwrap());
        let mut c = CounterVector::default();
        let bits = be.scan(&be.engine().init(), &mut c);
        let exact = be.engine().next_terminals(&be.engine().init()).terminals;
        let cand = be.candidate_terminals(&bits);
        assert!(exact.iter().all(|t| cand.contains(t)));
    }

    #[test]
    fn fit_recovers_synthetic_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let s = rng.random_range(0.0..100.0f64).round();
                (s, 3.0 * s + 7.0 + noise.sample(&mut rng))
            })
            .collect();
        let f = fit_affine(&pairs).unwrap();
        assert!((f.a - 3.0).abs() < 0.1 && (f.b - 7.0).abs() < 1.0, "{f:?}");
        assert!(f.r2 > 0.999);
    }

    #[test]
    fn fit_refuses_degenerate_input() {
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (5.0, i as f64)).collect();
        assert!(matches!(fit_affine(&flat), Err(PerfError::Degenerate { distinct: 1 })));
        let few: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(fit_affine(&few), Err(PerfError::TooFewSamples(5))));
    }

    #[test]
    fn fit_clamps_to_nonnegative() {
        let falling: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 20.0 - i as f64)).collect();
        let f = fit_affine(&falling).unwrap();
        assert_eq!(f.a, 0.0);
        assert!((f.b - 15.5).abs() < 1e-9);
        let through_neg: Vec<(f64, f64)> = (1..11).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        let f = fit_affine(&through_neg).unwrap();
        assert!(f.b == 0.0 && f.a > 0.0);
    }

    #[test]
    fn envelope_shapes() {
        let fit = FitResult {
            a: 1.0,
            b: 0.0,
            r2: 1.0,
            max_rel_error: 0.0,
            samples: 8,
        };
        let cfg = EnvelopeConfig {
            vocab_size: 3,
            beam: 1,
            tnn: "const:100".parse().unwrap(),
            t_sync: 1.0,
            c_sel: 1.0,
        };
        let s: Vec<f64> = (1..=40).map(|t| (t * (t - 1) / 2) as f64).collect();
        let k = vec![3; 40];
        let e = envelope(&cfg, &s, &k, &fit);
        assert_eq!(e.dense_total, e.sparse_total);
        assert_eq!(e.crossover, Some(15));
        assert_eq!(e.steps[0].dense, step_time(100.0, 0.0, 1.0, 3.0));
        let e2 = envelope(&EnvelopeConfig { beam: 2, ..cfg.clone() }, &s, &k, &fit);
        assert_eq!(e2.symbolic_total, 2.0 * e.symbolic_total);
        let sparse = envelope(&cfg, &s, &vec![1; 40], &fit);
        assert!(sparse.sparse_total < sparse.dense_total);
        assert!("linear:1,2".parse::<TnnModel>().unwrap().at(3) == 5.0);
        assert!("quadratic:1".parse::<TnnModel>().is_err());
    }

    #[test]
    fn beam_doubling_on_sigma_star() {
        use num_rational::BigRational;
        use std::collections::HashMap;
        let g = builtin(Builtin::G3);
        let vocab = crate::token::Vocab::singleton(&g);
        let half = crate::prob::ratio(1, 2);
        let lm = ToyLm::table(3, vec![half.clone(), half, BigRational::from_integer(0.into())], HashMap::new()).unwrap();
        let d = Decoder::new(&g, &vocab).unwrap();
        let r = beam_scaling(&d, &lm, 2, 48).unwrap();
        assert!((r.ratio - 1.0).abs() < 0.05, "{r:?}");
    }
}
