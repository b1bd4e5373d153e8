//! Post-hoc metrics over recorded training traces: cosine similarity of
//! updates against gradient and momentum directions, parameter-normalized
//! update magnitude, parameter-normalized stochasticity, and simple
//! aggregation helpers (IQM, percentile bootstrap).

use crate::optim::MOMENTUM_BETAS;
use crate::ppo::{TraceStep, UpdateRow};
use crate::rng::stream_rng;
use crate::Result;
use rand::Rng;
use std::io::Write;

/// Coordinates with |p| below this are excluded from normalized means.
pub const PARAM_EPS: f64 = 1e-12;

/// One datum of an analysis series. `value` is `None` when the point is
/// undefined (for cosine, a zero-norm argument).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub update_index: u64,
    pub value: Option<f64>,
    pub n_excluded: usize,
}

/// Cosine of the angle between two vectors; `None` when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}

/// Cosine similarity of each applied update against seven reference
/// directions: the gradient and the six momentum timescales. Momenta are
/// rebuilt from the recorded gradients with the optimizer's own EMA rule, so
/// the full trace is consumed even when the output is strided.
pub fn cosine_similarity_series(trace: &[TraceStep], stride: usize) -> Vec<Vec<SeriesPoint>> {
    assert!(stride >= 1);
    let n_channels = 1 + MOMENTUM_BETAS.len();
    let mut out: Vec<Vec<SeriesPoint>> = vec![Vec::new(); n_channels];
    if trace.is_empty() {
        return out;
    }
    let dim = trace[0].grad.len();
    let mut momenta = vec![vec![0.0; dim]; MOMENTUM_BETAS.len()];
    for (t, step) in trace.iter().enumerate() {
        for (beta, m) in MOMENTUM_BETAS.iter().zip(&mut momenta) {
            for (mi, gi) in m.iter_mut().zip(&step.grad) {
                *mi = beta * *mi + (1.0 - beta) * gi;
            }
        }
        if t % stride != 0 {
            continue;
        }
        let refs = std::iter::once(&step.grad).chain(momenta.iter());
        for (channel, r) in refs.enumerate() {
            out[channel].push(SeriesPoint {
                update_index: t as u64,
                value: cosine(&step.record.update, r),
                n_excluded: 0,
            });
        }
    }
    out
}

fn normalized_mean(numer: &[f64], params: &[f64], select: impl Fn(usize) -> bool) -> (Option<f64>, usize) {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for i in 0..numer.len() {
        if !select(i) {
            continue;
        }
        if params[i].abs() < PARAM_EPS {
            excluded += 1;
        } else {
            total += (numer[i] / params[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        (None, excluded)
    } else {
        (Some(total / count as f64), excluded)
    }
}

/// `E_i |u_hat_i / p_i|` per recorded update, using the raw (pre-zero-mean)
/// update and the parameters it was computed from.
pub fn normalized_update_magnitude(trace: &[TraceStep], stride: usize) -> Vec<SeriesPoint> {
    assert!(stride >= 1);
    trace
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(t, step)| {
            let (value, n_excluded) =
                normalized_mean(&step.record.raw_update, &step.params_before, |_| true);
            SeriesPoint { update_index: t as u64, value, n_excluded }
        })
        .collect()
}

/// `E_i |delta_i / p_i|` over actor coordinates per recorded update, where
/// delta is the learned noise weight. Optimizers without one yield zeros.
pub fn normalized_stochasticity(
    trace: &[TraceStep],
    actor_mask: &[bool],
    stride: usize,
) -> Vec<SeriesPoint> {
    assert!(stride >= 1);
    trace
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(t, step)| {
            let (value, n_excluded) = match &step.record.noise_weight {
                Some(delta) => normalized_mean(delta, &step.params_before, |i| actor_mask[i]),
                None => (Some(0.0), 0),
            };
            SeriesPoint { update_index: t as u64, value, n_excluded }
        })
        .collect()
}

/// The per-update dormant fractions already logged by the trainer, as
/// (actor, critic) series.
pub fn dormancy_series(rows: &[UpdateRow]) -> (Vec<SeriesPoint>, Vec<SeriesPoint>) {
    let actor = rows
        .iter()
        .map(|r| SeriesPoint { update_index: r.update_index, value: Some(r.dormancy_actor), n_excluded: 0 })
        .collect();
    let critic = rows
        .iter()
        .map(|r| SeriesPoint { update_index: r.update_index, value: Some(r.dormancy_critic), n_excluded: 0 })
        .collect();
    (actor, critic)
}

/// Interquartile mean: the mean of the middle half after dropping the bottom
/// and top quarter. Falls back to the plain mean below four samples.
pub fn iqm(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let k = sorted.len() / 4;
    let mid = &sorted[k..sorted.len() - k];
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Percentile bootstrap interval for a statistic: `n_resamples` draws with
/// replacement, returning the (alpha/2, 1 - alpha/2) percentiles.
pub fn percentile_bootstrap(
    values: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> (f64, f64) {
    assert!(!values.is_empty() && n_resamples > 0 && alpha > 0.0 && alpha < 1.0);
    let mut rng = stream_rng(seed, "bootstrap", &[]);
    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let resample: Vec<f64> =
                (0..values.len()).map(|_| values[rng.gen_range(0..values.len())]).collect();
            statistic(&resample)
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    let pick = |q: f64| {
        let ix = ((n_resamples - 1) as f64 * q).round() as usize;
        stats[ix]
    };
    (pick(alpha / 2.0), pick(1.0 - alpha / 2.0))
}

/// Writes one series as CSV rows `(update_index, value, n_excluded)`; an
/// undefined value is an empty field.
pub fn write_series_csv(path: &std::path::Path, series: &[SeriesPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "update_index,value,n_excluded")?;
    for p in series {
        match p.value {
            Some(v) => writeln!(f, "{},{},{}", p.update_index, v, p.n_excluded)?,
            None => writeln!(f, "{},,{}", p.update_index, p.n_excluded)?,
        }
    }
    Ok(())
}

const TRACE_MAGIC: &[u8; 8] = b"OPENTRC1";

/// Agent shape stored alongside a trace so `analyze` can rebuild the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TraceHeader {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub width: usize,
    pub n_hidden: usize,
    pub activation: crate::agent::Activation,
}

fn put_vec(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn get_vec(r: &mut &[u8]) -> Result<Vec<f64>> {
    use std::io::Read;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| corrupt("truncated vector length"))?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(|_| corrupt("truncated vector payload"))?;
        out.push(f64::from_le_bytes(b8));
    }
    Ok(out)
}

fn corrupt(what: &str) -> crate::Error {
    crate::Error::Config(format!("corrupt trace file: {what}"))
}

/// Writes one run's update trace as a self-describing binary file.
pub fn save_trace(path: &std::path::Path, header: &TraceHeader, trace: &[TraceStep]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TRACE_MAGIC);
    let head = serde_json::to_vec(header).expect("header serializes");
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    for step in trace {
        put_vec(&mut buf, &step.record.update);
        put_vec(&mut buf, &step.record.raw_update);
        put_vec(&mut buf, &step.grad);
        put_vec(&mut buf, &step.params_before);
        buf.push(u8::from(step.record.noise_weight.is_some()));
        if let Some(nw) = &step.record.noise_weight {
            put_vec(&mut buf, nw);
        }
        buf.push(u8::from(step.record.noise.is_some()));
        if let Some(noise) = &step.record.noise {
            put_vec(&mut buf, noise);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_trace(path: &std::path::Path) -> Result<(TraceHeader, Vec<TraceStep>)> {
    use std::io::Read;
    let bytes = std::fs::read(path)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
    if &magic != TRACE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4).map_err(|_| corrupt("truncated header length"))?;
    let head_len = u32::from_le_bytes(len4) as usize;
    if r.len() < head_len {
        return Err(corrupt("truncated header"));
    }
    let (head_bytes, rest) = r.split_at(head_len);
    let header: TraceHeader =
        serde_json::from_slice(head_bytes).map_err(|_| corrupt("unparsable header"))?;
    let mut r = rest;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| corrupt("truncated step count"))?;
    let n_steps = u64::from_le_bytes(b8) as usize;
    let mut trace = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let update = get_vec(&mut r)?;
        let raw_update = get_vec(&mut r)?;
        let grad = get_vec(&mut r)?;
        let params_before = get_vec(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(|_| corrupt("truncated noise flag"))?;
        let noise_weight = if flag[0] != 0 { Some(get_vec(&mut r)?) } else { None };
        r.read_exact(&mut flag).map_err(|_| corrupt("truncated noise flag"))?;
        let noise = if flag[0] != 0 { Some(get_vec(&mut r)?) } else { None };
        trace.push(TraceStep {
            record: crate::optim::StepRecord { update, raw_update, noise_weight, noise },
            grad,
            params_before,
        });
    }
    if !r.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((header, trace))
}
