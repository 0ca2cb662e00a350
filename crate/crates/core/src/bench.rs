//! Wall-clock benchmark sweep over data sizes.
//!
//! Each repetition is a full simulated run; only handler compute time is
//! booked, so simulated key waits do not inflate the numbers. The field
//! comparison times the sharing computations alone on a Mersenne and a
//! general prime of the same width.

use std::fmt::Write as _;
use std::fs;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::field::{FieldKind, PrimeField};
use crate::random::{RandomSource, SeededRandom};
use crate::scenario::{PhaseKind, ScenarioConfig};
use crate::sim::{BenchPhase, Simulation};
use crate::spss::{
    precompute_round, spss_recover, spss_register, spss_request, HolderShareSet, Password, SpssParams,
};

/// Median and quartiles of a sample, by linear interpolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Summary {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |p: f64| {
            if s.is_empty() {
                return f64::NAN;
            }
            let x = p * (s.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            s[lo] + (s[hi] - s[lo]) * (x - lo as f64)
        };
        Summary {
            median: at(0.5),
            q1: at(0.25),
            q3: at(0.75),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    /// `sweep` for full runs, `compare` for the field comparison.
    pub kind: &'static str,
    pub field: String,
    pub phase: &'static str,
    pub size_bytes: usize,
    pub seconds: Vec<f64>,
    pub summary: Summary,
    /// Transcript ids of the runs behind a sweep row.
    pub transcripts: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Key ledger totals of the last run at each size.
    pub ledger: Vec<(usize, String)>,
}

impl BenchReport {
    pub fn row(&self, kind: &str, field: &str, phase: &str, size: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.field == field && r.phase == phase && r.size_bytes == size)
    }

    pub fn sweep(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.kind == "sweep")
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("kind,field,phase,size_bytes,reps,median_s,q1_s,q3_s,iqr_s,transcripts\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.kind,
                r.field,
                r.phase,
                r.size_bytes,
                r.seconds.len(),
                r.summary.median,
                r.summary.q1,
                r.summary.q3,
                r.summary.iqr(),
                r.transcripts.join(";")
            );
        }
        out
    }

    /// Gnuplot data: one block per row kind and field, one line per size,
    /// median and IQR per phase. Blocks are separated by two blank lines.
    pub fn gnuplot(&self) -> String {
        let mut out = String::new();
        let mut groups: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            if !groups.contains(&(r.kind, r.field.as_str())) {
                groups.push((r.kind, r.field.as_str()));
            }
        }
        for (i, (kind, field)) in groups.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.kind == *kind && r.field == *field).collect();
            let mut phases: Vec<&str> = Vec::new();
            let mut sizes: Vec<usize> = Vec::new();
            for r in &rows {
                if !phases.contains(&r.phase) {
                    phases.push(r.phase);
                }
                if !sizes.contains(&r.size_bytes) {
                    sizes.push(r.size_bytes);
                }
            }
            let _ = write!(out, "# {kind} {field}\n# size_bytes");
            for p in &phases {
                let _ = write!(out, " {p} {p}_iqr");
            }
            out.push('\n');
            for s in sizes {
                let _ = write!(out, "{s}");
                for p in &phases {
                    match rows.iter().find(|r| r.phase == *p && r.size_bytes == s) {
                        Some(r) => {
                            let _ = write!(out, " {:.6} {:.6}", r.summary.median, r.summary.iqr());
                        }
                        None => out.push_str(" NaN NaN"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:<14} {:<15} {:>10} {:>12} {:>12}\n",
            "kind", "field", "phase", "bytes", "median_ms", "iqr_ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<14} {:<15} {:>10} {:>12.3} {:>12.3}",
                r.kind,
                r.field,
                r.phase,
                r.size_bytes,
                r.summary.median * 1e3,
                r.summary.iqr() * 1e3
            );
        }
        for (size, line) in &self.ledger {
            let _ = writeln!(out, "ledger size={size} {line}");
        }
        out
    }

    pub fn write_outputs(&self, cfg: &ScenarioConfig) -> Result<()> {
        if let Some(p) = &cfg.output.bench_csv {
            fs::write(p, self.csv())?;
        }
        if let Some(p) = &cfg.output.bench_dat {
            fs::write(p, self.gnuplot())?;
        }
        Ok(())
    }
}

/// Phases of a sweep run: renewal only when the scenario has a group.
fn sweep_phases(cfg: &ScenarioConfig) -> Result<Vec<PhaseKind>> {
    let mut probe = cfg.clone();
    probe.phases = vec![PhaseKind::Register];
    let has_group = probe.resolve()?.group.is_some();
    let mut phases = vec![PhaseKind::Register];
    if has_group {
        phases.push(PhaseKind::Renew);
    }
    phases.extend([PhaseKind::Reconstruct, PhaseKind::Verify]);
    Ok(phases)
}

pub fn run_bench(cfg: &ScenarioConfig) -> Result<BenchReport> {
    let phases = sweep_phases(cfg)?;
    let field_label = cfg.field.trim().to_string();
    let mut report = BenchReport::default();
    for &size in &cfg.bench.sizes_bytes {
        let mut samples: Vec<(BenchPhase, Vec<f64>)> = BenchPhase::REPORTED.iter().map(|&p| (p, Vec::new())).collect();
        let mut transcripts = Vec::new();
        let mut last_ledger = String::new();
        for rep in 0..cfg.bench.repetitions {
            let mut run = cfg.clone();
            run.seed = cfg.seed.wrapping_add(rep as u64);
            run.data.size_bytes = size;
            run.data.content = None;
            run.phases = phases.clone();
            run.output.store_dir = None;
            let (report, sim) = Simulation::new(run)?.run();
            if report.exit_code != 0 {
                return Err(Error::Protocol(format!(
                    "bench run size={size} rep={rep} did not succeed: {:?}",
                    report.verdicts.iter().map(|v| v.to_string()).collect::<Vec<_>>()
                )));
            }
            for (p, s) in samples.iter_mut() {
                s.push(report.wall.get(p).copied().unwrap_or_default().as_secs_f64());
            }
            transcripts.push(report.transcript_id);
            let t = sim.network().totals();
            last_ledger = format!(
                "generated={} buffered={} consumed={} overhead={}",
                t.generated, t.buffered, t.consumed, t.overhead
            );
        }
        for (p, s) in samples {
            if p == BenchPhase::Renewal && !phases.contains(&PhaseKind::Renew) {
                continue;
            }
            report.rows.push(BenchRow {
                kind: "sweep",
                field: field_label.clone(),
                phase: p.name(),
                size_bytes: size,
                summary: Summary::of(&s),
                seconds: s,
                transcripts: transcripts.clone(),
            });
        }
        report.ledger.push((size, last_ledger));
    }
    if cfg.bench.compare_fields {
        report.rows.extend(compare_fields(cfg)?);
    }
    Ok(report)
}

/// Time registration, precomputation and reconstruction in memory on the
/// configured Mersenne and general fields.
pub fn compare_fields(cfg: &ScenarioConfig) -> Result<Vec<BenchRow>> {
    let mersenne = PrimeField::parse(&cfg.bench.mersenne_field)?;
    let general = PrimeField::parse(&cfg.bench.general_field)?;
    if !matches!(mersenne.kind(), FieldKind::Mersenne(_)) {
        return Err(Error::Config("bench.mersenne_field: not a Mersenne prime".into()));
    }
    if general.kind() != FieldKind::General {
        return Err(Error::Config("bench.general_field: must not be a Mersenne prime".into()));
    }
    let mut rows = Vec::new();
    for &size in &cfg.bench.sizes_bytes {
        for (label, field) in [(&cfg.bench.mersenne_field, &mersenne), (&cfg.bench.general_field, &general)] {
            let params = SpssParams::new(cfg.threshold, cfg.holders, field.clone())?;
            let mut times: [Vec<f64>; 3] = Default::default();
            for rep in 0..cfg.bench.repetitions {
                let t = local_cycle(&params, size, &cfg.data.password, cfg.seed.wrapping_add(rep as u64))?;
                for (slot, d) in times.iter_mut().zip(t) {
                    slot.push(d.as_secs_f64());
                }
            }
            for (phase, s) in ["registration", "communication", "reconstruction"].into_iter().zip(times) {
                rows.push(BenchRow {
                    kind: "compare",
                    field: label.trim().to_string(),
                    phase,
                    size_bytes: size,
                    summary: Summary::of(&s),
                    seconds: s,
                    transcripts: Vec::new(),
                });
            }
        }
    }
    Ok(rows)
}

fn local_cycle(params: &SpssParams, size: usize, password: &str, seed: u64) -> Result<[Duration; 3]> {
    let mut rng = SeededRandom::derive(seed, "bench");
    let data = SeededRandom::derive(seed, "data").next_bytes(size)?;
    let pw = Password::from_bytes(params, password.as_bytes())?;

    let t = Instant::now();
    let reg = spss_register(0, 1, &data, &pw, params, &mut rng)?;
    let registration = t.elapsed();

    let mut holders: Vec<HolderShareSet> = reg
        .fragments
        .into_iter()
        .map(|f| {
            let mut h = HolderShareSet::new(f.holder);
            h.store(f).map(|()| h)
        })
        .collect::<Result<_>>()?;
    let rounds = params.block_count(size) as u64 + 1;
    let mut rngs: Vec<SeededRandom> = (1..=params.holders())
        .map(|i| SeededRandom::derive(seed, &format!("holder{i}")))
        .collect();
    let t = Instant::now();
    for round in 0..rounds {
        precompute_round(params, &mut holders, round, &mut rngs)?;
    }
    let communication = t.elapsed();

    let subset: Vec<u64> = (1..=params.threshold() as u64).collect();
    let ids: Vec<u64> = (0..rounds).collect();
    let t = Instant::now();
    let reqs = spss_request(params, 0, &pw, &subset, &ids, &mut rng)?;
    let mut responses = Vec::new();
    for (h, req) in reqs {
        responses.push(holders[h as usize - 1].respond(params, &req)?);
    }
    let out = spss_recover(params, &responses, &pw)?;
    let reconstruction = t.elapsed();
    if out != data {
        return Err(Error::Protocol("bench reconstruction mismatch".into()));
    }
    Ok([registration, communication, reconstruction])
}

/// Log-log slope of median time against size between two rows.
pub fn scaling_exponent(small: &BenchRow, large: &BenchRow) -> f64 {
    (large.summary.median / small.summary.median).ln() / (large.size_bytes as f64 / small.size_bytes as f64).ln()
}
