use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use privbound::bounds::{allocate_epsilon, bounds_report, Variant};
use privbound::io::{MechanismFile, ProblemFile, Units};
use privbound::mechanisms::{
    compose_multiuser, decompose_transform, evaluate, evaluate_composed, materialize, per_component_transform,
    Mechanism,
};
use privbound::model::{validate, Problem};
use privbound::oracle::{sandwich, search, OracleConfig};

use crate::fmt::{in_units, sig};
use crate::UsageError;

/// Tolerance for leakage equalities and feasibility in reports.
const CHECK_TOL: f64 = 1e-9;

const SWEEP_HEADER: [&str; 6] = ["epsilon", "upper", "lower_frl", "lower_sfrl", "lower", "mech_objective"];

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<(ProblemFile, Problem)> {
    let f = ProblemFile::parse(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    let p = f.problem().with_context(|| format!("in {}", path.display()))?;
    Ok((f, p))
}

fn emit(v: Value, units: Units) -> Result<()> {
    let mut v = in_units(v, units);
    v["units"] = json!(units);
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(&v)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn component_stats(p: &Problem) -> Result<Value> {
    let a = validate(p)?;
    Ok(p.components()
        .iter()
        .zip(&a.stats)
        .map(|(c, s)| {
            let mut v = serde_json::to_value(s).expect("stats serialize");
            v["name"] = json!(c.name());
            v["shape"] = json!([c.nx(), c.ny()]);
            v
        })
        .collect())
}

pub fn bounds(file: &Path, units: Option<Units>) -> Result<()> {
    let (f, p) = load(file)?;
    let units = units.unwrap_or(f.options.log_display);
    let a = validate(&p)?;
    let components = component_stats(&p)?;
    let v = if a.trivial {
        json!({
            "epsilon": p.epsilon(),
            "regime": {"trivial": true, "deterministic": a.deterministic, "perfect_privacy": p.epsilon() == 0.0},
            "total_mi": a.total_mi,
            "value": p.full_disclosure_utility(),
            "components": components,
        })
    } else {
        let r = bounds_report(&p, &a)?;
        let mut v = serde_json::to_value(&r)?;
        v["total_mi"] = json!(a.total_mi);
        v["components"] = components;
        if let Some(exact) = r.deterministic_exact {
            v["deterministic"] = json!({
                "exact": exact,
                "gap_to_lower_frl": exact - r.lower_frl,
                "gap_to_upper": r.upper - exact,
            });
        }
        v
    };
    emit(v, units)
}

pub fn mechanize(file: &Path, out: &Path, variant: Variant, units: Option<Units>) -> Result<()> {
    let (f, p) = load(file)?;
    let units = units.unwrap_or(f.options.log_display);
    let a = validate(&p)?;
    a.require_nontrivial()?;
    let r = bounds_report(&p, &a)?;
    let alloc = allocate_epsilon(&p, &a, variant)?;
    let m = compose_multiuser(&p, &alloc)?;
    let rep = evaluate_composed(&p, &m)?;
    if (rep.leakage - alloc.total()).abs() > CHECK_TOL {
        bail!("constructed leakage {} differs from the allocated budget {}", rep.leakage, alloc.total());
    }
    if alloc.overflow > 0.0 {
        eprintln!(
            "warning: component {} can take at most {} of the budget; {} is left unused, so leakage is below ε",
            alloc.target.unwrap_or(0),
            alloc.total(),
            alloc.overflow
        );
    }
    let m = Mechanism::Composed(m);
    fs::write(out, MechanismFile::new(&p, &m).to_json()).with_context(|| format!("writing {}", out.display()))?;
    let bound = match variant {
        Variant::Frl => r.lower_frl,
        Variant::Esfrl => r.lower_sfrl,
    };
    emit(
        json!({
            "epsilon": p.epsilon(),
            "variant": variant,
            "allocation": alloc,
            "lower_bound": bound,
            "upper": r.upper,
            "mechanism": rep,
            "written": out.display().to_string(),
        }),
        units,
    )
}

pub fn verify(file: &Path, mechanism: &Path, decompose: bool, units: Option<Units>) -> Result<()> {
    let (f, p) = load(file)?;
    let units = units.unwrap_or(f.options.log_display);
    let m = MechanismFile::parse(&read(mechanism)?)
        .and_then(|mf| mf.mechanism(&p))
        .with_context(|| format!("in {}", mechanism.display()))?;
    let rep = evaluate(&p, &m)?;
    let mut v = json!({
        "epsilon": p.epsilon(),
        "feasible": rep.leakage <= p.epsilon() + CHECK_TOL,
        "mechanism": rep,
    });
    if decompose {
        let k = match &m {
            Mechanism::Composed(c) => materialize(&p, c)?,
            Mechanism::Monolithic(k) => k.clone(),
        };
        let dec = decompose_transform(&p, &k)?;
        let t1 = per_component_transform(&p, &k)?;
        v["decomposition"] = json!({"passes": dec.checks.passes(CHECK_TOL), "checks": dec.checks});
        v["per_component"] = json!({
            "passes": t1.checks.passes(CHECK_TOL),
            "card_u": t1.mechanism.card_u(),
            "checks": t1.checks,
        });
    }
    emit(v, units)
}

pub fn oracle(file: &Path, cfg: &OracleConfig, out: Option<&Path>, units: Option<Units>) -> Result<()> {
    let (f, p) = load(file)?;
    let units = units.unwrap_or(f.options.log_display);
    let a = validate(&p)?;
    let res = search(&p, cfg)?;
    let mut v = json!({
        "epsilon": p.epsilon(),
        "config": cfg,
        "best_objective": res.best_objective,
        "leakage_at_best": res.leakage_at_best,
        "best_restart": res.best_restart,
        "trace": res.trace,
    });
    if a.trivial {
        v["trivial_value"] = json!(p.full_disclosure_utility());
    } else {
        let s = sandwich(&p, res.best_objective)?;
        v["sandwich"] = json!({"holds": s.holds(), "table": s});
    }
    if let Some(out) = out {
        fs::write(out, MechanismFile::new(&p, &res.best).to_json())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    emit(v, units)
}

/// Parses `from:to:step` into grid points `from + k·step ≤ to`.
fn grid(spec: &str) -> Result<Vec<f64>, UsageError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [from, to, step] = parts[..] else {
        return Err(UsageError(format!("--eps expects from:to:step, got {spec:?}")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| UsageError(format!("--eps: {s:?} is not a number")));
    let (from, to, step) = (num(from)?, num(to)?, num(step)?);
    if !(from >= 0.0 && from.is_finite() && to.is_finite()) {
        return Err(UsageError(format!("--eps: from must be finite and non-negative, got {from}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(UsageError(format!("--eps: step must be positive, got {step}")));
    }
    if to < from {
        return Err(UsageError(format!("--eps: empty grid, {to} < {from}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| from + k as f64 * step).collect())
}

fn sweep_row(p: &Problem, eps: f64) -> Result<[f64; 6]> {
    let p = p.with_epsilon(eps)?;
    let a = validate(&p)?;
    if a.trivial {
        let v = p.full_disclosure_utility();
        return Ok([eps, v, v, v, v, v]);
    }
    let r = bounds_report(&p, &a)?;
    let mech = evaluate_composed(&p, &compose_multiuser(&p, r.dominant_allocation())?)?.objective;
    Ok([eps, r.upper, r.lower_frl, r.lower_sfrl, r.lower, mech])
}

pub fn sweep(file: &Path, spec: &str, csv: Option<&Path>) -> Result<()> {
    let points = grid(spec)?;
    let (_, p) = load(file)?;
    let rows: Vec<[f64; 6]> = points.par_iter().map(|&e| sweep_row(&p, e)).collect::<Result<_>>()?;
    let sink: Box<dyn Write> = match csv {
        Some(path) => Box::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        w.write_record(row.iter().map(|v| sig(*v, 12)))?;
    }
    match w.flush() {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
