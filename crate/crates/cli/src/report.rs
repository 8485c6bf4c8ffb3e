//! Human-readable renderings of the analyzer and harness results.

use std::fmt::Write;

use precond_ope::analyzer::{Condition, ConvergenceVerdict, InstanceReport, Prediction, TransitionReport};
use precond_ope::harness::CampaignResult;

use crate::SimulateOutputHead;

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| short(x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Six decimals with trailing zeros dropped.
fn short(x: f64) -> String {
    if x.is_infinite() {
        return "∞".into();
    }
    let s = format!("{x:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn verdict_word(p: Prediction) -> &'static str {
    match p {
        Prediction::ConvergesForAllTheta0 => "converges",
        Prediction::Diverges => "diverges",
        Prediction::NoFixedPoint => "no fixed point",
        Prediction::Marginal => "marginal",
    }
}

/// One line: TD stability with its α interval, then the FQI verdict.
pub fn summary(r: &InstanceReport) -> String {
    let td = if r.td_stability.marginal {
        "TD: marginal".to_string()
    } else if r.td_stability.stable {
        let eps = r.td.alpha_interval.map_or(f64::INFINITY, |(_, e)| e);
        format!("TD: stable (α ∈ (0, {}))", short(eps))
    } else if !r.consistent {
        "TD: no fixed point".to_string()
    } else {
        "TD: diverges".to_string()
    };
    let fqi = format!(
        "FQI: {} (ρ≈{:.6})",
        verdict_word(r.fqi.prediction),
        r.fqi.spectral_radius
    );
    let mut line = format!("{td}; {fqi}");
    if r.trivial_fixed_point {
        line.push_str("; fixed point exists trivially, θ=0");
    }
    line
}

fn conditions(out: &mut String, conds: &[Condition]) {
    for c in conds {
        let _ = writeln!(out, "    - {}: {}  [{}]", c.name, yes(c.holds), c.citation);
    }
}

fn verdict(out: &mut String, label: &str, v: &ConvergenceVerdict) {
    let _ = writeln!(
        out,
        "{label}: {} (ρ(H) = {:.6})  [{}]",
        verdict_word(v.prediction),
        v.spectral_radius,
        v.fired_rule
    );
    conditions(out, &v.conditions);
    if let Some(limit) = &v.predicted_limit {
        let particular: Vec<f64> = limit.particular.iter().copied().collect();
        let _ = writeln!(out, "    limit from θ0 = 0: {}", list(&particular));
    }
}

pub fn analyze_text(r: &InstanceReport, alpha: f64, t: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", summary(r));
    let _ = writeln!(
        out,
        "instance: h = {}, d = {}, γ = {}, rank(Φ) = {}",
        r.h, r.d, r.gamma, r.feature_rank
    );
    let _ = writeln!(out, "target system consistent: {}", yes(r.consistent));
    let _ = writeln!(out, "target system nonsingular: {}", yes(r.nonsingular));
    let _ = writeln!(out, "rank invariance: {}  [rank invariance condition]", yes(r.rank_invariance.holds));
    for (form, holds) in &r.rank_invariance.forms {
        let _ = writeln!(out, "    - {form}: {}", yes(*holds));
    }
    if !r.zero_mass_pairs.is_empty() {
        let _ = writeln!(out, "zero-mass pairs (no visits, only reached): {:?}", r.zero_mass_pairs);
    }
    let _ = writeln!(out, "TD stable: {}", yes(r.td_stability.stable));
    conditions(&mut out, &r.td_stability.conditions);
    if r.td_stability.m_matrix_relaxation {
        let _ = writeln!(out, "    A is an M-matrix; nonnegative stability used");
    }
    verdict(&mut out, &format!("TD at α = {alpha}"), &r.td);
    verdict(&mut out, "FQI", &r.fqi);
    verdict(&mut out, &format!("PFQI at α = {alpha}, t = {t}"), &r.pfqi);
    let specs: Vec<String> = r.fqi.specializations.iter().map(|s| format!("{s:?}")).collect();
    let _ = write!(
        out,
        "specializations: {}",
        if specs.is_empty() { "none".to_string() } else { specs.join(", ") }
    );
    out
}

pub fn simulate_text(s: &SimulateOutputHead) -> String {
    let mut out = s.algorithm.name().to_string();
    if let Some(a) = s.alpha {
        let _ = write!(out, " α = {a}");
    }
    if let Some(t) = s.t {
        let _ = write!(out, " t = {t}");
    }
    let _ = write!(
        out,
        ": {:?} after {} iterations, residual {:.6e}\nlast: {}",
        s.status,
        s.iterations,
        s.final_residual,
        list(s.last)
    );
    if let Some(limit) = s.limit {
        let _ = write!(out, "\nlimit: {}", list(limit));
    }
    out
}

pub fn campaign_text(c: &CampaignResult) -> String {
    let mut out = String::new();
    for r in &c.regimes {
        let _ = writeln!(out, "{} (seed {}, {} instances)", r.regime, r.seed, r.instances);
        for (theorem, t) in &r.tallies {
            let _ = writeln!(
                out,
                "  {theorem}: {}/{} passed, {} marginal, {} inconclusive, {} failed, {} errors",
                t.passed, t.tested, t.marginal, t.inconclusive, t.failed, t.errors
            );
        }
    }
    for f in c.failures() {
        let _ = writeln!(out, "FAILURE {} {} seed {}: {}", f.theorem, f.regime, f.seed, f.detail);
    }
    let all = c.overall();
    let _ = write!(
        out,
        "overall: {}/{} passed, {} non-marginal failures, {:.2}% marginal or inconclusive",
        all.passed,
        all.tested,
        all.non_marginal_failures(),
        100.0 * all.excluded_fraction()
    );
    out
}

pub fn transitions_text(r: &TransitionReport) -> String {
    let mut out = String::new();
    match r.td_epsilon {
        Some(e) => {
            let _ = writeln!(out, "TD: stable, α ∈ (0, {})", short(e));
        }
        None => {
            let _ = writeln!(out, "TD: not stable");
        }
    }
    for (t, eps) in &r.epsilon_t {
        let shown = eps.map_or("none".to_string(), short);
        let _ = writeln!(out, "  t = {t}: largest converging α ≈ {shown}");
    }
    for (alpha, threshold) in &r.t_threshold {
        let _ = match threshold {
            Some(t) => writeln!(out, "  α = {alpha:.6e}: converges for every grid t >= {t}"),
            None => writeln!(out, "  α = {alpha:.6e}: diverges at the largest grid t"),
        };
    }
    let _ = write!(out, "cross-checks:");
    if r.cross_checks.is_empty() {
        let _ = write!(out, " none applicable");
    }
    for c in &r.cross_checks {
        let _ = write!(out, "\n    - {}: {}  [{}]", c.name, yes(c.holds), c.citation);
    }
    out
}
