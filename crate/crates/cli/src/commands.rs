//! Subcommands. Each returns a report rendered in all three output forms.

use std::fmt::Write as _;

use evagg::eta::eta;
use evagg::evaluate::{compare_rules, cross_validate_c, decide, heatmap, max_regret_of, ComparisonReport};
use evagg::refine::{hyperrectangle_region, identified_set_rule, meta_ellipsoid_region, refined_max_regret, solve_refined_minimax};
use evagg::weights::{solve_minimax_regret, SolverConfig};
use evagg::{Error, StudyPool, TargetSpec, WeightVector};
use serde_json::{json, Value};

use crate::config::{Format, RegionKind, Resolved};

pub struct Report {
    pub json: Value,
    pub csv: String,
    pub text: String,
    pub default_format: Format,
}

impl Report {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("report is valid JSON");
                s.push('\n');
                s
            }
            Format::Csv => self.csv.clone(),
            Format::Text => self.text.clone(),
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn weight_rows(w: &WeightVector, pool: &StudyPool) -> Vec<Value> {
    pool.studies().iter().zip(w.as_slice()).map(|(s, w)| json!({ "id": s.id, "weight": w })).collect()
}

fn weights_csv(out: &mut String, rows: &[(String, &WeightVector)], pool: &StudyPool) {
    let single = rows.len() == 1;
    out.push_str(if single { "id,weight\n" } else { "target,id,weight\n" });
    for (name, w) in rows {
        for (s, v) in pool.studies().iter().zip(w.as_slice()) {
            if !single {
                let _ = write!(out, "{name},");
            }
            let _ = writeln!(out, "{},{}", s.id, num(*v));
        }
    }
}

fn weights_text(out: &mut String, w: &WeightVector, pool: &StudyPool) {
    let width = pool.studies().iter().map(|s| s.id.len()).max().unwrap_or(2).max(2);
    for (s, v) in pool.studies().iter().zip(w.as_slice()) {
        let _ = writeln!(out, "  {:<width$}  {:>10.6}", s.id, v);
    }
}

pub fn solve(r: &Resolved) -> Result<Report, Error> {
    let space = r.space()?;
    let cfg = &r.config.solver;
    r.first_target()?;
    let mut json_targets = Vec::new();
    let mut solved = Vec::new();
    let mut text = String::new();
    for t in &r.targets {
        let s = solve_minimax_regret(&r.pool, &t.spec, &space, cfg)?;
        let d = decide(&r.pool, &t.spec, &s.weights, s.profile, "minimax");
        json_targets.push(json!({
            "name": t.name,
            "x0": t.raw,
            "cost": t.spec.cost,
            "aggregate": d.aggregate,
            "adopt": d.adopt,
            "profile": d.profile,
            "weights": weight_rows(&s.weights, &r.pool),
        }));
        let _ = writeln!(
            text,
            "{}: aggregate {:.6} (cost {}) -> {}; b {:.6} s {:.6} max regret {:.6}",
            t.name,
            d.aggregate,
            t.spec.cost,
            if d.adopt { "adopt" } else { "reject" },
            d.profile.bias,
            d.profile.sd,
            d.profile.max_regret
        );
        weights_text(&mut text, &s.weights, &r.pool);
        solved.push((t.name.clone(), s.weights));
    }
    let mut csv = String::new();
    let rows: Vec<(String, &WeightVector)> = solved.iter().map(|(n, w)| (n.clone(), w)).collect();
    weights_csv(&mut csv, &rows, &r.pool);
    Ok(Report { json: json!({ "command": "solve", "targets": json_targets }), csv, text, default_format: Format::Json })
}

pub fn compare(r: &Resolved) -> Result<Report, Error> {
    let space = r.space()?;
    if r.config.rules.is_empty() {
        return Err(Error::Input("rules list is empty".into()));
    }
    r.first_target()?;
    let mut reports: Vec<(String, ComparisonReport)> = Vec::new();
    for t in &r.targets {
        let prior = if r.config.rules.contains(&evagg::evaluate::Rule::Hb) { r.hb_prior(&t.spec, &space)? } else { None };
        let rep = compare_rules(&r.pool, &t.spec, &space, &r.config.solver, &r.config.rules, prior.as_ref())?;
        reports.push((t.name.clone(), rep));
    }
    let mut csv = String::from("target,rule,estimate,bias_over_sd,max_regret,ratio,adopt,heavy_ids,error\n");
    let mut text = String::new();
    for (name, rep) in &reports {
        let _ = writeln!(text, "{name}");
        let _ = writeln!(text, "  {:<8} {:>10} {:>8} {:>10} {:>8} {:>6}  heavy ids", "rule", "estimate", "b/s", "max regret", "ratio", "adopt");
        for rr in &rep.rules {
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            let adopt = rr.decision.as_ref().map(|d| d.adopt.to_string()).unwrap_or_default();
            let regret = rr.decision.as_ref().map(|d| d.profile.max_regret);
            let _ = writeln!(
                csv,
                "{name},{},{},{},{},{},{},{},{}",
                rr.rule,
                opt(rr.estimate),
                opt(rr.bias_over_sd),
                opt(regret),
                opt(rr.ratio),
                adopt,
                rr.heavy_ids.join(";"),
                rr.error.as_deref().unwrap_or("").replace(',', ";")
            );
            match &rr.error {
                Some(e) => {
                    let _ = writeln!(text, "  {:<8} error: {e}", rr.rule);
                }
                None => {
                    let _ = writeln!(
                        text,
                        "  {:<8} {:>10.6} {:>8.4} {:>10.6} {:>8.4} {:>6}  {}",
                        rr.rule,
                        rr.estimate.unwrap_or(f64::NAN),
                        rr.bias_over_sd.unwrap_or(f64::NAN),
                        regret.unwrap_or(f64::NAN),
                        rr.ratio.unwrap_or(f64::NAN),
                        adopt,
                        rr.heavy_ids.join(", ")
                    );
                }
            }
        }
    }
    let json_targets: Vec<Value> = reports.iter().map(|(n, rep)| json!({ "name": n, "rules": rep.rules })).collect();
    Ok(Report { json: json!({ "command": "compare", "targets": json_targets }), csv, text, default_format: Format::Json })
}

pub fn refine(r: &Resolved) -> Result<Report, Error> {
    let space = r.space()?;
    let spec = r.config.refine.as_ref().ok_or_else(|| Error::Input("config has no [refine] section".into()))?;
    r.first_target()?;
    let cfg = &r.config.solver;
    let mut json_targets = Vec::new();
    let mut csv = String::from("target,id,refined_weight,minimax_weight\n");
    let mut text = String::new();
    for t in &r.targets {
        let region = match spec.region {
            RegionKind::HyperRectangle => hyperrectangle_region(&r.pool, &t.spec, &space, spec.alpha)?,
            RegionKind::MetaEllipsoid => meta_ellipsoid_region(&r.pool, &space, spec.alpha)?,
        };
        let unrefined = solve_minimax_regret(&r.pool, &t.spec, &space, cfg)?;
        let refined = solve_refined_minimax(&r.pool, &t.spec, &region, Some(&space), cfg)?;
        let minimax_over_region = refined_max_regret(&unrefined.weights, &region, &r.pool, &t.spec)?;
        let full = max_regret_of(&refined.weights, &r.pool, &t.spec, &space)?;
        let d = decide(&r.pool, &t.spec, &refined.weights, full, "refined");
        json_targets.push(json!({
            "name": t.name,
            "alpha": spec.alpha,
            "aggregate": d.aggregate,
            "adopt": d.adopt,
            "refined_max_regret": refined.refined_max_regret,
            "minimax_weights_refined_max_regret": minimax_over_region,
            "unrefined_max_regret": unrefined.profile.max_regret,
            "weights": weight_rows(&refined.weights, &r.pool),
            "minimax_weights": weight_rows(&unrefined.weights, &r.pool),
        }));
        for ((s, w), m) in r.pool.studies().iter().zip(refined.weights.as_slice()).zip(unrefined.weights.as_slice()) {
            let _ = writeln!(csv, "{},{},{},{}", t.name, s.id, num(*w), num(*m));
        }
        let _ = writeln!(
            text,
            "{}: refined aggregate {:.6} -> {}; refined max regret {:.6} (minimax weights over region {:.6}, unrefined minimax {:.6})",
            t.name,
            d.aggregate,
            if d.adopt { "adopt" } else { "reject" },
            refined.refined_max_regret,
            minimax_over_region,
            unrefined.profile.max_regret
        );
        weights_text(&mut text, &refined.weights, &r.pool);
    }
    Ok(Report { json: json!({ "command": "refine", "targets": json_targets }), csv, text, default_format: Format::Json })
}

pub fn identify(r: &Resolved) -> Result<Report, Error> {
    let space = r.space()?;
    r.first_target()?;
    let mut json_targets = Vec::new();
    let mut csv = String::from("target,lower,upper,adopt,randomized_fraction\n");
    let mut text = String::new();
    for t in &r.targets {
        let d = identified_set_rule(&r.pool, &space, &t.spec)?;
        let frac = d.randomized_fraction.map(num).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", t.name, num(d.lower), num(d.upper), d.adopt, frac);
        let _ = writeln!(
            text,
            "{}: identified set [{:.6}, {:.6}] (cost {}) -> {}",
            t.name,
            d.lower,
            d.upper,
            t.spec.cost,
            if d.adopt { "adopt" } else { "reject" }
        );
        json_targets.push(json!({ "name": t.name, "cost": t.spec.cost, "identified_set": d }));
    }
    Ok(Report { json: json!({ "command": "identify", "targets": json_targets }), csv, text, default_format: Format::Json })
}

pub fn cv(r: &Resolved) -> Result<Report, Error> {
    let grid = r.config.cv.values()?;
    let res = cross_validate_c(&r.pool, &grid, &r.config.solver)?;
    let mut csv = String::from("c,score\n");
    let mut text = format!("best C = {}\n", res.best_c);
    for p in &res.grid {
        let _ = writeln!(csv, "{},{}", num(p.c), p.score.map(num).unwrap_or_default());
        match p.score {
            Some(s) => {
                let _ = writeln!(text, "  C {:>12.6}  score {:>10.6}", p.c, s);
            }
            None => {
                let _ = writeln!(text, "  C {:>12.6}  failed: {}", p.c, p.error.as_deref().unwrap_or(""));
            }
        }
    }
    Ok(Report { json: json!({ "command": "cv", "result": res }), csv, text, default_format: Format::Json })
}

pub fn heatmap_cmd(r: &Resolved) -> Result<Report, Error> {
    let space = r.space()?;
    let spec = r.config.heatmap.as_ref().ok_or_else(|| Error::Input("config has no [heatmap] section".into()))?;
    if spec.axes.len() != 2 {
        return Err(Error::Input(format!("heatmap needs exactly two axes, got {}", spec.axes.len())));
    }
    let (ax, ay) = (&spec.axes[0], &spec.axes[1]);
    let ix = r.raw_pool.covariate_index(&ax.covariate).ok_or_else(|| Error::Input(format!("unknown covariate '{}'", ax.covariate)))?;
    let iy = r.raw_pool.covariate_index(&ay.covariate).ok_or_else(|| Error::Input(format!("unknown covariate '{}'", ay.covariate)))?;
    if ix == iy {
        return Err(Error::Input("heatmap axes must name different covariates".into()));
    }
    let base = r.first_target()?;
    let mut cells = Vec::new();
    for &x in &ax.values() {
        for &y in &ay.values() {
            let mut raw = base.raw.clone();
            raw[ix] = x;
            raw[iy] = y;
            cells.push((x, y, TargetSpec::new(r.standardizer.apply(&raw), base.spec.cost)));
        }
    }
    let out = heatmap(&r.pool, &cells, &space, &r.config.solver)?;
    let mut csv = format!("{},{},estimate\n", ax.covariate, ay.covariate);
    let mut text = format!("{:>10} {:>10} {:>12}\n", ax.covariate, ay.covariate, "estimate");
    for c in &out {
        let _ = writeln!(csv, "{},{},{}", num(c.x), num(c.y), num(c.estimate));
        let _ = writeln!(text, "{:>10.4} {:>10.4} {:>12.6}", c.x, c.y, c.estimate);
    }
    let rows: Vec<Value> = out.iter().map(|c| json!({ ax.covariate.clone(): c.x, ay.covariate.clone(): c.y, "estimate": c.estimate })).collect();
    Ok(Report { json: json!({ "command": "heatmap", "cells": rows }), csv, text, default_format: Format::Csv })
}

/// Exact eta and its maximizer at the nodes 0, spacing, ..., a_max.
pub fn eta_cmd(cfg: &SolverConfig) -> Result<Report, Error> {
    cfg.check()?;
    let n = (cfg.eta_a_max / cfg.eta_spacing).round() as usize;
    let mut csv = String::from("a,eta,t_star\n");
    let mut text = format!("{:>8} {:>12} {:>12}\n", "a", "eta", "t_star");
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let a = (i as f64 * cfg.eta_spacing).min(cfg.eta_a_max);
        let e = eta(a)?;
        let _ = writeln!(csv, "{},{},{}", num(a), num(e.value), num(e.t_star));
        let _ = writeln!(text, "{:>8.4} {:>12.8} {:>12.8}", a, e.value, e.t_star);
        rows.push(json!({ "a": a, "eta": e.value, "t_star": e.t_star }));
    }
    Ok(Report { json: json!({ "command": "eta", "rows": rows }), csv, text, default_format: Format::Csv })
}
