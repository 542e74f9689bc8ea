use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use jetmarch::field::MaierSteinField;
use jetmarch::fit::{fit_power_law, FitReport};
use jetmarch::io::{heatmap_ppm, write_polyline_csv, write_scalar_fields_csv, write_solution_csv};
use jetmarch::linalg::norm;
use jetmarch::march::{solve as march_solve, Method, RunSummary, SolutionField, SolverConfig, StopMode};
use jetmarch::post::{bouchet_reygner, divergence_field, init_level, trace_map as trace, wkb_prefactor, EscapeOptions};
use jetmarch::stencil::{StencilBank, StencilKind};
use jetmarch::tpt::{solve_tpt, Disk, TptReport, TptSetup};
use jetmarch::GridSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, StencilFamily};

pub type CmdResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Writes through a temporary sibling and renames, so a file is either
/// absent or complete.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> CmdResult) -> CmdResult {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    write_atomic(path, |b| {
        serde_json::to_writer_pretty(&mut *b, value)?;
        b.push(b'\n');
        Ok(())
    })
}

fn prepare(out: &Path) -> Result<PathBuf, std::io::Error> {
    fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

fn grid_of(cfg: &RunConfig) -> jetmarch::Result<GridSpec> {
    GridSpec::new(cfg.grid.x, cfg.grid.y, cfg.grid.n)
}

fn u_heatmap(path: &Path, sol: &SolutionField) -> CmdResult {
    let values: Vec<f64> = (0..sol.grid.len()).map(|i| sol.u(i)).collect();
    let valid: Vec<bool> = (0..sol.grid.len()).map(|i| sol.is_accepted(i)).collect();
    write_atomic(path, |b| {
        b.extend(heatmap_ppm(&sol.grid, &values, &valid));
        Ok(())
    })
}

fn write_solution(dir: &Path, sol: &SolutionField, heatmap: bool) -> CmdResult {
    write_atomic(&dir.join("solution.csv"), |b| Ok(write_solution_csv(sol, b)?))?;
    if heatmap {
        u_heatmap(&dir.join("u.ppm"), sol)?;
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let field = cfg.field.build();
    let sol = march_solve(field.as_ref(), grid_of(cfg)?, cfg.solver)?;
    write_solution(&dir, &sol, cfg.output.heatmap)?;
    let summary = sol.summary(field.as_ref());
    write_json(&dir.join("summary.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let err = s
        .errors
        .as_ref()
        .map(|e| format!(", sup error {:.3e}, rms {:.3e}", e.u_sup, e.u_rms))
        .unwrap_or_default();
    println!(
        "{} on {} N={}: {} accepted, {:?}, {:.2} s{err}",
        s.method.as_str(),
        s.field,
        s.n,
        s.stats.accepted,
        s.termination,
        s.stats.runtime_s
    );
}

#[derive(Serialize)]
struct SweepRow {
    method: Method,
    n: usize,
    status: String,
    summary: Option<RunSummary>,
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let runs_dir = prepare(&dir.join("runs"))?;
    let jobs: Vec<(Method, usize)> =
        cfg.sweep.methods.iter().flat_map(|&m| cfg.sweep.sizes.iter().map(move |&n| (m, n))).collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(method, n)| {
            let field = cfg.field.build();
            let run = GridSpec::new(cfg.grid.x, cfg.grid.y, n)
                .and_then(|g| march_solve(field.as_ref(), g, SolverConfig { method, ..cfg.solver }));
            let row = match run {
                Ok(sol) => SweepRow { method, n, status: "ok".into(), summary: Some(sol.summary(field.as_ref())) },
                Err(e) => SweepRow { method, n, status: e.to_string(), summary: None },
            };
            let name = format!("{}_{n}.json", method.as_str());
            if let Err(e) = write_json(&runs_dir.join(name), &row) {
                eprintln!("warning: could not write run file: {e}");
            }
            row
        })
        .collect();

    write_atomic(&dir.join("sweep.csv"), |b| {
        writeln!(b, "method,n,h,status,u_sup,u_rms,grad_sup,grad_rms,accepted,fail_safe_calls,fail_safe_exhausted")?;
        for r in &rows {
            match &r.summary {
                Some(s) => {
                    let e = s.errors.as_ref();
                    let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
                    writeln!(
                        b,
                        "{},{},{},ok,{},{},{},{},{},{},{}",
                        r.method.as_str(),
                        r.n,
                        s.h,
                        f(e.map(|e| e.u_sup)),
                        f(e.map(|e| e.u_rms)),
                        f(e.map(|e| e.grad_sup)),
                        f(e.map(|e| e.grad_rms)),
                        s.stats.accepted,
                        s.stats.fail_safe_calls,
                        s.stats.fail_safe_exhausted
                    )?;
                }
                None => writeln!(b, "{},{},,\"{}\",,,,,,,", r.method.as_str(), r.n, r.status.replace('"', "'"))?,
            }
        }
        Ok(())
    })?;

    let mut fits = Vec::new();
    for &method in &cfg.sweep.methods {
        let ok: Vec<(usize, &jetmarch::march::ErrorReport)> = rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.summary.as_ref().and_then(|s| s.errors.as_ref()).map(|e| (r.n, e)))
            .collect();
        if ok.len() < 2 {
            continue;
        }
        let ns: Vec<f64> = ok.iter().map(|(n, _)| *n as f64).collect();
        let col = |f: fn(&jetmarch::march::ErrorReport) -> f64| ok.iter().map(|(_, e)| f(e)).collect::<Vec<_>>();
        let fit = FitReport {
            method: method.as_str().to_string(),
            sizes: ok.iter().map(|(n, _)| *n).collect(),
            u_sup: fit_power_law(&ns, &col(|e| e.u_sup))?,
            u_rms: fit_power_law(&ns, &col(|e| e.u_rms))?,
            grad_sup: fit_power_law(&ns, &col(|e| e.grad_sup))?,
            grad_rms: fit_power_law(&ns, &col(|e| e.grad_rms))?,
        };
        println!(
            "{:<16} sup U {}   rms U {}   sup ∇U {}   rms ∇U {}",
            fit.method, fit.u_sup, fit.u_rms, fit.grad_sup, fit.grad_rms
        );
        fits.push(fit);
    }
    write_json(&dir.join("fits.json"), &fits)?;

    let failed: Vec<String> =
        rows.iter().filter(|r| r.summary.is_none()).map(|r| format!("{} N={}: {}", r.method.as_str(), r.n, r.status)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("{} of {} runs failed:\n  {}", failed.len(), rows.len(), failed.join("\n  ")).into())
    }
}

#[derive(Serialize)]
struct PrefactorPeak {
    x: f64,
    y: f64,
    c: f64,
}

#[derive(Serialize)]
struct MaierSteinReport {
    beta: f64,
    n: usize,
    u_saddle: f64,
    prefactor_argmax: Option<PrefactorPeak>,
    escape: jetmarch::post::EscapeEstimate,
    /// `ε → E[τ]` keyed by the decimal form of `ε`.
    tau_by_eps: BTreeMap<String, f64>,
    tpt: Vec<TptReport>,
    summary: RunSummary,
}

fn tpt_setup(n: usize, cfg: &RunConfig) -> TptSetup {
    let mut s = TptSetup::maier_stein(n);
    s.scheme = cfg.tpt.scheme;
    s.a = Disk { radius: cfg.tpt.radius, ..s.a };
    s.b = Disk { radius: cfg.tpt.radius, ..s.b };
    s
}

pub fn maier_stein(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let ms = &cfg.maier_stein;
    let field = MaierSteinField::new(ms.beta);
    let grid = GridSpec::new([-2.0, 0.0], [-1.0, 1.0], ms.n)?;
    let saddle = field.saddle();
    let solver = SolverConfig { stop: StopMode::TargetReached { target: saddle, margin: 2 }, ..cfg.solver };
    let sol = march_solve(&field, grid, solver)?;
    write_solution(&dir, &sol, cfg.output.heatmap)?;

    let div = divergence_field(&sol, &field);
    let c = wkb_prefactor(&sol, &div, init_level(&sol));
    write_atomic(&dir.join("prefactor.csv"), |b| {
        Ok(write_scalar_fields_csv(&grid, &[("f", &div.f, Some(&div.valid)), ("C", &c.c, Some(&c.valid))], b)?)
    })?;
    if cfg.output.heatmap {
        let log_c: Vec<f64> = c.c.iter().map(|v| v.ln()).collect();
        write_atomic(&dir.join("log_c.ppm"), |b| {
            b.extend(heatmap_ppm(&grid, &log_c, &c.valid));
            Ok(())
        })?;
    }

    // For β > 4 the MAP leaves the axis and ∇U jumps across it at the
    // saddle; the Hessian is taken one cell into the upper half.
    let h = grid.h;
    let opts = EscapeOptions {
        saddle,
        hessian_at: (ms.beta > 4.0).then_some([saddle[0] - h, saddle[1] + h]),
        trace_target: None,
        trace_step: None,
    };
    let escape = bouchet_reygner(&sol, &field, &div, &opts, &ms.eps)?;
    let target = opts.hessian_at.unwrap_or([saddle[0] - h, saddle[1]]);
    let map = trace(&sol, &field, target, None)?;
    write_atomic(&dir.join("map.csv"), |b| Ok(write_polyline_csv(&map, b)?))?;

    let tpt: Vec<TptReport> = if ms.tpt {
        let setup = tpt_setup(cfg.tpt.n, cfg);
        ms.eps
            .iter()
            .map(|&e| solve_tpt(&field, &setup, e).map(|s| s.report))
            .collect::<jetmarch::Result<_>>()?
    } else {
        vec![]
    };

    write_atomic(&dir.join("tau.csv"), |b| {
        writeln!(b, "eps,tau_br,tau_br_scaled,tau_tpt,tau_tpt_scaled")?;
        for (k, &(e, tau)) in escape.tau.iter().enumerate() {
            let scale = (-escape.u_saddle / e).exp();
            let (t, ts) = match tpt.get(k) {
                Some(r) => (r.mean_transition_time.to_string(), (r.mean_transition_time * scale).to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(b, "{e},{tau},{},{t},{ts}", tau * scale)?;
        }
        Ok(())
    })?;

    let peak = c.argmax().map(|(i, v)| {
        let p = grid.point(i);
        PrefactorPeak { x: p[0], y: p[1], c: v }
    });
    println!("U(saddle) = {:.6}, Bouchet-Reygner prefactor {:.5}", escape.u_saddle, escape.prefactor);
    if let Some(p) = &peak {
        println!("max C = {:.4e} at ({:.4}, {:.4})", p.c, p.x, p.y);
    }
    for (k, (e, tau)) in escape.tau.iter().enumerate() {
        let tpt_col = tpt.get(k).map(|r| format!("   TPT {:.4e}", r.mean_transition_time)).unwrap_or_default();
        println!("ε = {e:<6} E[τ] = {tau:.4e}{tpt_col}");
    }
    let report = MaierSteinReport {
        beta: ms.beta,
        n: ms.n,
        u_saddle: escape.u_saddle,
        prefactor_argmax: peak,
        tau_by_eps: escape.tau.iter().map(|(e, t)| (e.to_string(), *t)).collect(),
        escape,
        tpt,
        summary: sol.summary(&field),
    };
    write_json(&dir.join("escape.json"), &report)?;
    Ok(())
}

pub fn tpt(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let field = MaierSteinField::new(cfg.tpt.beta);
    let setup = tpt_setup(cfg.tpt.n, cfg);
    let mut reports = Vec::new();
    for &eps in &cfg.tpt.eps {
        let s = solve_tpt(&field, &setup, eps)?;
        let g = s.current.grid;
        let jr: Vec<f64> = s.current.jr.iter().map(|v| norm(*v)).collect();
        write_atomic(&dir.join(format!("tpt_eps{eps}.csv")), |b| {
            Ok(write_scalar_fields_csv(
                &g,
                &[
                    ("mu", &s.measure.mu, None),
                    ("q_plus", &s.committors.q_plus, None),
                    ("q_minus", &s.committors.q_minus, None),
                    ("jr_norm", &jr, Some(&s.current.valid)),
                ],
                b,
            )?)
        })?;
        let r = s.report;
        println!(
            "ε = {eps:<6} 1/k_AB = {:.4e}   ν = {:.4e} (discrete {:.4e})   ρ_A = {:.4}",
            r.mean_transition_time, r.nu, r.nu_discrete, r.rho_a
        );
        reports.push(r);
    }
    write_json(&dir.join("tpt.json"), &reports)?;
    Ok(())
}

pub fn stencil_dump(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let s = &cfg.solver;
    let kind = match cfg.stencil.kind {
        StencilFamily::Oblong => StencilKind::Oblong { k_cutoff: s.k_cutoff, d_gap: s.d_gap },
        StencilFamily::Asr => StencilKind::Asr { alpha: s.asr_alpha },
    };
    let bank = StencilBank::new(s.n_bins, kind)?;
    let bins: Vec<usize> = if cfg.stencil.bins.is_empty() { (0..bank.n_bins()).collect() } else { cfg.stencil.bins.clone() };
    if let Some(b) = bins.iter().find(|&&b| b >= bank.n_bins()) {
        return Err(format!("bin {b} out of range (n_bins = {})", bank.n_bins()).into());
    }
    write_atomic(&dir.join("stencils.csv"), |b| {
        writeln!(b, "bin,theta,dx,dy")?;
        for &k in &bins {
            let st = &bank.stencils[k];
            for o in &st.offsets {
                writeln!(b, "{k},{},{},{}", st.theta, o[0], o[1])?;
            }
        }
        Ok(())
    })?;
    for &k in &bins {
        println!("bin {k}: θ = {:.4}, {} offsets", bank.stencils[k].theta, bank.stencils[k].offsets.len());
    }
    Ok(())
}

pub fn trace_map(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = prepare(out)?;
    let field = cfg.field.build();
    let target = cfg.trace.target;
    let solver = SolverConfig { stop: StopMode::TargetReached { target, margin: 2 }, ..cfg.solver };
    let sol = march_solve(field.as_ref(), grid_of(cfg)?, solver)?;
    let map = trace(&sol, field.as_ref(), target, cfg.trace.step)?;
    write_atomic(&dir.join("map.csv"), |b| Ok(write_polyline_csv(&map, b)?))?;
    let start = map.points[0];
    println!(
        "MAP to ({}, {}): {} points, length {:.5}, starts at ({:.4}, {:.4}), max |y| {:.4}",
        target[0],
        target[1],
        map.points.len(),
        map.length(),
        start[0],
        start[1],
        map.max_abs_y()
    );
    Ok(())
}
