//! `compare` and `plot`: align run metrics on a common step grid.
//!
//! Each run contributes the points (end step, episode return). A run's value
//! at grid step `x` is the linear interpolation between the two episodes
//! ending around `x`; outside the run's first and last episode it has none.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use iddqn::agent::EpisodeMetrics;
use iddqn::epm::EpmReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::epm_cmd::{EPM_DIR, VERDICTS_FILE};
use crate::error::{HarnessError, HarnessResult};
use crate::train::{create_dir, write_json, CONFIG_FILE, METRICS_FILE};

#[derive(Clone, Debug, PartialEq)]
pub struct RunSeries {
    pub label: String,
    pub dir: PathBuf,
    pub episodes: Vec<EpisodeMetrics>,
}

impl RunSeries {
    pub fn load(dir: &Path) -> HarnessResult<Self> {
        let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let path = dir.join(METRICS_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut episodes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let m: EpisodeMetrics = serde_json::from_str(line)
                .map_err(|e| HarnessError::Config(format!("{} line {}: {e}", path.display(), n + 1)))?;
            episodes.push(m);
        }
        Ok(Self {
            label: cfg.label(),
            dir: dir.to_path_buf(),
            episodes,
        })
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.episodes.iter().map(|e| (e.end_step as f64, e.cumulative_reward)).collect()
    }
}

/// Linear interpolation of sorted `points` at `x`; `None` outside their range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = points.partition_point(|p| p.0 < x);
    let hi = points[i];
    if hi.0 == x || i == 0 {
        return Some(hi.1);
    }
    let lo = points[i - 1];
    Some(lo.1 + (hi.1 - lo.1) * (x - lo.0) / (hi.0 - lo.0))
}

/// Mean, sample standard deviation and count of the present values.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>, usize) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    let n = v.len();
    if n == 0 {
        return (None, None, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std), n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub label: String,
    pub runs: Vec<PathBuf>,
    pub mean: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
    pub n: Vec<usize>,
    /// `mean` minus the first series' mean (absent for the first series).
    pub diff: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid: Vec<u64>,
    pub series: Vec<SeriesStats>,
}

/// Group runs by label (or keep each run separate) and aggregate them on a
/// grid of multiples of `grid_step`.
pub fn compare(runs: &[RunSeries], grid_step: u64, per_run: bool) -> HarnessResult<Comparison> {
    if grid_step == 0 {
        return Err(HarnessError::Config("grid step must be >= 1".into()));
    }
    let max = runs
        .iter()
        .filter_map(|r| r.episodes.last().map(|e| e.end_step))
        .max()
        .unwrap_or(0);
    let grid: Vec<u64> = (1..=max / grid_step).map(|k| k * grid_step).collect();
    let mut groups: Vec<(String, Vec<&RunSeries>)> = Vec::new();
    if per_run {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for r in runs {
            let k = seen.entry(r.label.clone()).or_insert(0);
            *k += 1;
            groups.push((format!("{}#{}", r.label, k), vec![r]));
        }
    } else {
        for r in runs {
            match groups.iter_mut().find(|(l, _)| *l == r.label) {
                Some((_, members)) => members.push(r),
                None => groups.push((r.label.clone(), vec![r])),
            }
        }
    }
    let mut series: Vec<SeriesStats> = Vec::new();
    for (label, members) in groups {
        let pts: Vec<Vec<(f64, f64)>> = members.iter().map(|r| r.points()).collect();
        let (mut mean, mut std, mut n) = (Vec::new(), Vec::new(), Vec::new());
        for &x in &grid {
            let vals: Vec<Option<f64>> = pts.iter().map(|p| interpolate(p, x as f64)).collect();
            let (m, s, k) = mean_std(&vals);
            mean.push(m);
            std.push(s);
            n.push(k);
        }
        series.push(SeriesStats {
            label,
            runs: members.iter().map(|r| r.dir.clone()).collect(),
            mean,
            std,
            n,
            diff: None,
        });
    }
    if let Some(first) = series.first().map(|s| s.mean.clone()) {
        for s in series.iter_mut().skip(1) {
            s.diff = Some(
                s.mean
                    .iter()
                    .zip(&first)
                    .map(|(a, b)| Some((*a)? - (*b)?))
                    .collect(),
            );
        }
    }
    Ok(Comparison { grid, series })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x}"))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn comparison_tsv(c: &Comparison) -> String {
    let mut s = String::from("step");
    for x in &c.series {
        let _ = write!(s, "\t{0}_mean\t{0}_std\t{0}_n", x.label);
        if x.diff.is_some() {
            let _ = write!(s, "\t{}_diff", x.label);
        }
    }
    s.push('\n');
    for (i, step) in c.grid.iter().enumerate() {
        let _ = write!(s, "{step}");
        for x in &c.series {
            let _ = write!(s, "\t{}\t{}\t{}", cell(x.mean[i]), cell(x.std[i]), x.n[i]);
            if let Some(d) = &x.diff {
                let _ = write!(s, "\t{}", cell(d[i]));
            }
        }
        s.push('\n');
    }
    s
}

fn load_all(dirs: &[PathBuf]) -> HarnessResult<Vec<RunSeries>> {
    dirs.iter().map(|d| RunSeries::load(d)).collect()
}

fn write(path: &Path, text: &str) -> HarnessResult<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(&format!("writing {}", path.display()), e))
}

pub fn cmd_compare(dirs: &[PathBuf], grid_step: u64, per_run: bool, out: &Path) -> HarnessResult<Comparison> {
    if dirs.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two run directories".into()));
    }
    let c = compare(&load_all(dirs)?, grid_step, per_run)?;
    create_dir(out)?;
    write(&out.join("comparison.tsv"), &comparison_tsv(&c))?;
    write_json(&out.join("comparison.json"), &c)?;
    Ok(c)
}

/// Plain-text series: one aggregated file per label, one raw file per run,
/// and one EPM file per run that has verdicts. Returns the files written.
pub fn cmd_plot(dirs: &[PathBuf], grid_step: u64, out: &Path) -> HarnessResult<Vec<PathBuf>> {
    if dirs.is_empty() {
        return Err(HarnessError::Config("plot needs at least one run directory".into()));
    }
    let runs = load_all(dirs)?;
    let c = compare(&runs, grid_step, false)?;
    create_dir(out)?;
    let mut written = Vec::new();
    for s in &c.series {
        let mut t = String::from("step\tmean\tstd\tn\n");
        for (i, step) in c.grid.iter().enumerate() {
            let _ = writeln!(t, "{step}\t{}\t{}\t{}", cell(s.mean[i]), cell(s.std[i]), s.n[i]);
        }
        let p = out.join(format!("series_{}.tsv", sanitize(&s.label)));
        write(&p, &t)?;
        written.push(p);
    }
    for (k, r) in runs.iter().enumerate() {
        let mut t = String::from("end_step\tepisode\tcumulative_reward\tcrashed\tlambda_h\tepsilon\n");
        for e in &r.episodes {
            let _ = writeln!(
                t,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.end_step, e.episode, e.cumulative_reward, e.crashed as u8, e.lambda_h, e.epsilon
            );
        }
        let p = out.join(format!("run_{k:03}_{}.tsv", sanitize(&r.label)));
        write(&p, &t)?;
        written.push(p);
        let vp = r.dir.join(EPM_DIR).join(VERDICTS_FILE);
        if vp.exists() {
            let rep = EpmReport::load(&vp).map_err(HarnessError::input)?;
            let mut t = String::from("onset_step\thorizon\tsum_r_human\tsum_r_agent\tagrees\n");
            for v in &rep.verdicts {
                let _ = writeln!(
                    t,
                    "{}\t{}\t{}\t{}\t{}",
                    v.onset_step, v.horizon, v.sum_r_human, v.sum_r_agent, v.agrees as u8
                );
            }
            let p = out.join(format!("epm_{k:03}_{}.tsv", sanitize(&r.label)));
            write(&p, &t)?;
            written.push(p);
        }
    }
    Ok(written)
}
