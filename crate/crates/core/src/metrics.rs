//! Novelty metrics computed from episode logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodePhase {
    Pre,
    Post,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    /// Global real step count when the episode ended.
    pub end_step: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub length: u32,
    pub phase: EpisodePhase,
    /// Policy updates applied so far.
    pub updates: u64,
}

/// Trailing mean. Element `j` of the result is the mean of
/// `returns[j..j + window]`, i.e. the average ending at index `j + window - 1`.
pub fn moving_average(returns: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving average window must be at least 1".into()));
    }
    if returns.len() < window {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(returns.len() + 1 - window);
    let mut sum: f64 = returns[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..returns.len() {
        sum += returns[i] - returns[i - window];
        out.push(sum / window as f64);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean return of the final `tail_window` episodes.
pub fn asymptotic_performance(post: &[EpisodeRecord], tail_window: usize) -> Result<f64> {
    if tail_window == 0 || post.len() < tail_window {
        return Err(Error::InsufficientData {
            needed: tail_window.max(1),
            available: post.len(),
        });
    }
    let tail: Vec<f64> = post[post.len() - tail_window..].iter().map(|r| r.ret).collect();
    Ok(mean(&tail))
}

/// Moving-average level counted as "adapted". `fraction` is 0.95 by default;
/// for non-positive asymptotes the margin is additive instead.
pub fn adaptive_threshold(asymptote: f64, fraction: f64) -> f64 {
    if asymptote > 0.0 {
        fraction * asymptote
    } else {
        asymptote + (1.0 - fraction) * asymptote.abs()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Efficiency {
    /// Position of the episode within `post`.
    pub episode: usize,
    /// Real steps from injection to the end of that episode.
    pub steps: u64,
}

/// First post-novelty episode whose trailing `window`-episode average reaches
/// the threshold. `None` means the run failed to adapt.
pub fn adaptive_efficiency(
    post: &[EpisodeRecord],
    asymptote: f64,
    injection_step: u64,
    window: usize,
    fraction: f64,
) -> Result<Option<Efficiency>> {
    let threshold = adaptive_threshold(asymptote, fraction);
    let returns: Vec<f64> = post.iter().map(|r| r.ret).collect();
    let ma = moving_average(&returns, window)?;
    Ok(ma.iter().position(|m| *m >= threshold).map(|j| {
        let episode = j + window - 1;
        Efficiency {
            episode,
            steps: post[episode].end_step - injection_step,
        }
    }))
}

/// Policy updates applied between injection and the end of the convergence
/// episode.
pub fn update_efficiency(post: &[EpisodeRecord], convergence_episode: usize, injection_updates: u64) -> u64 {
    post.get(convergence_episode)
        .map_or(0, |r| r.updates.saturating_sub(injection_updates))
}

/// True when the trailing `ma_window` average has varied by less than `tol`
/// over the last `span` episodes.
pub fn returns_stable(returns: &[f64], ma_window: usize, span: usize, tol: f64) -> bool {
    if ma_window == 0 || returns.len() < ma_window + span - 1 {
        return false;
    }
    let tail = &returns[returns.len() + 1 - ma_window - span..];
    let ma = moving_average(tail, ma_window).expect("window is positive");
    let (lo, hi) = ma.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        (lo.min(*m), hi.max(*m))
    });
    hi - lo < tol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pre_novelty_performance: Option<f64>,
    pub asymptotic_adaptive_performance: Option<f64>,
    pub random_baseline_performance: Option<f64>,
    /// Asymptote minus the random baseline.
    pub advantage_over_random: Option<f64>,
    pub adaptive_efficiency_steps: Option<u64>,
    pub update_efficiency_updates: Option<u64>,
    pub failed_to_adapt: bool,
    pub post_real_steps: u64,
    pub post_imagined_steps: u64,
    pub post_policy_updates: u64,
    pub detection_latency_steps: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub tail_window: usize,
    pub ma_window: usize,
    pub fraction: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tail_window: 100,
            ma_window: 10,
            fraction: 0.95,
        }
    }
}

/// Everything the report needs from a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog<'a> {
    pub episodes: &'a [EpisodeRecord],
    pub injection_step: Option<u64>,
    pub injection_updates: u64,
    pub random_baseline: Option<f64>,
    pub detection_step: Option<u64>,
    pub final_step: u64,
    pub final_updates: u64,
    pub post_imagined_steps: u64,
}

pub fn compute_report(log: &RunLog<'_>, cfg: &MetricConfig) -> Result<MetricReport> {
    let pre: Vec<&EpisodeRecord> = log.episodes.iter().filter(|e| e.phase == EpisodePhase::Pre).collect();
    let post: Vec<EpisodeRecord> = log
        .episodes
        .iter()
        .filter(|e| e.phase == EpisodePhase::Post)
        .cloned()
        .collect();
    let pre_perf = (!pre.is_empty()).then(|| {
        let tail = &pre[pre.len().saturating_sub(cfg.tail_window)..];
        tail.iter().map(|e| e.ret).sum::<f64>() / tail.len() as f64
    });
    let mut report = MetricReport {
        pre_novelty_performance: pre_perf,
        asymptotic_adaptive_performance: None,
        random_baseline_performance: log.random_baseline,
        advantage_over_random: None,
        adaptive_efficiency_steps: None,
        update_efficiency_updates: None,
        failed_to_adapt: false,
        post_real_steps: 0,
        post_imagined_steps: log.post_imagined_steps,
        post_policy_updates: 0,
        detection_latency_steps: None,
    };
    let Some(inject) = log.injection_step else {
        return Ok(report);
    };
    report.post_real_steps = log.final_step - inject;
    report.post_policy_updates = log.final_updates - log.injection_updates;
    report.detection_latency_steps = log.detection_step.filter(|d| *d >= inject).map(|d| d - inject);
    let asymptote = match asymptotic_performance(&post, cfg.tail_window) {
        Ok(a) => a,
        Err(Error::InsufficientData { .. }) => {
            report.failed_to_adapt = true;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.asymptotic_adaptive_performance = Some(asymptote);
    if let Some(random) = log.random_baseline {
        report.advantage_over_random = Some(asymptote - random);
        if asymptote <= random {
            report.failed_to_adapt = true;
            return Ok(report);
        }
    }
    match adaptive_efficiency(&post, asymptote, inject, cfg.ma_window, cfg.fraction)? {
        Some(eff) => {
            report.adaptive_efficiency_steps = Some(eff.steps);
            report.update_efficiency_updates = Some(update_efficiency(&post, eff.episode, log.injection_updates));
        }
        None => report.failed_to_adapt = true,
    }
    Ok(report)
}

/// Mean of each metric across runs; `None` entries are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub runs: usize,
    pub failed_to_adapt: usize,
    pub pre_novelty_performance: Option<f64>,
    pub asymptotic_adaptive_performance: Option<f64>,
    pub random_baseline_performance: Option<f64>,
    pub adaptive_efficiency_steps: Option<f64>,
    pub update_efficiency_updates: Option<f64>,
    pub median_adaptive_efficiency_steps: Option<f64>,
    pub median_update_efficiency_updates: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median with failed runs counted as +infinity.
fn median_or_inf(xs: impl Iterator<Item = Option<u64>>) -> Option<f64> {
    let v: Vec<f64> = xs.map(|x| x.map_or(f64::INFINITY, |x| x as f64)).collect();
    median(&v).filter(|m| m.is_finite())
}

pub fn summarize(reports: &[MetricReport]) -> SummaryRow {
    SummaryRow {
        runs: reports.len(),
        failed_to_adapt: reports.iter().filter(|r| r.failed_to_adapt).count(),
        pre_novelty_performance: mean_of(reports.iter().map(|r| r.pre_novelty_performance)),
        asymptotic_adaptive_performance: mean_of(reports.iter().map(|r| r.asymptotic_adaptive_performance)),
        random_baseline_performance: mean_of(reports.iter().map(|r| r.random_baseline_performance)),
        adaptive_efficiency_steps: mean_of(reports.iter().map(|r| r.adaptive_efficiency_steps.map(|x| x as f64))),
        update_efficiency_updates: mean_of(reports.iter().map(|r| r.update_efficiency_updates.map(|x| x as f64))),
        median_adaptive_efficiency_steps: median_or_inf(reports.iter().map(|r| r.adaptive_efficiency_steps)),
        median_update_efficiency_updates: median_or_inf(reports.iter().map(|r| r.update_efficiency_updates)),
    }
}
