//! Command implementations behind the `ccpi` binary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ccpi::config::{BuiltProblem, ProblemConfig};
use ccpi::dual::{trend_report, write_sweep};
use ccpi::fdm::{self, FdmParams, Field, Grid2D, VectorField};
use ccpi::io::{fmt, write_table, write_trajectories, Meta};
use ccpi::pathint::{evaluate_probe, pi_control, PathIntegralPolicy};
use ccpi::risk::LOW_ESS;
use ccpi::rng::sub_seed;
use ccpi::sim::{sample_controlled, RolloutOptions};
use ccpi::{dual_ascent, sweep_delta, DualParams, DualState, Error, ProblemSpec, Result};
use sha2::{Digest, Sha256};

/// Sample counts and grid sizes applied before `--set` overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    fn overrides(self) -> [String; 2] {
        match self {
            Scale::Desk => ["solver.samples=20000".into(), "solver.grid=48".into()],
            Scale::Paper => ["solver.samples=100000".into(), "solver.grid=96".into()],
        }
    }
}

/// Everything a command needs: the built problem, its hash and the output settings.
#[derive(Debug, Clone)]
pub struct Context {
    pub problem: BuiltProblem,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dump: bool,
}

impl Context {
    /// Loads `config` (a path or a preset name), applies the scale preset and
    /// the `key=value` overrides in order.
    pub fn load(
        config: &str,
        scale: Option<Scale>,
        overrides: &[String],
        seed: u64,
        out_dir: PathBuf,
        dump: bool,
    ) -> Result<Self> {
        let path = Path::new(config);
        let mut cfg = if path.exists() {
            ProblemConfig::from_path(path)?
        } else {
            ProblemConfig::preset(config)?
        };
        if let Some(s) = scale {
            for o in s.overrides() {
                cfg.set(&o)?;
            }
        }
        for o in overrides {
            cfg.set(o)?;
        }
        let problem = cfg.build()?;
        let config_hash = hex(&Sha256::digest(cfg.canonical_toml().as_bytes())[..8]);
        std::fs::create_dir_all(&out_dir)?;
        Ok(Self {
            problem,
            config_hash,
            seed,
            out_dir,
            dump,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.problem.spec
    }

    pub fn meta(&self) -> Meta {
        Meta {
            tool: format!("ccpi {}", env!("CARGO_PKG_VERSION")),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    pub fn dual_params(&self) -> DualParams {
        let s = &self.problem.solver;
        DualParams {
            epsilon: s.epsilon,
            learning_rate: s.learning_rate,
            eta_init: s.eta_init,
            samples: s.samples,
            dt: s.dt,
            seed: self.seed,
            max_iters: s.max_iters,
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    /// Configured probes, or the interior points of a 3×3 lattice over the middle half of the bounding box.
    pub fn probes(&self) -> Vec<Vec<f64>> {
        if let Some(p) = &self.problem.solver.probes {
            return p.clone();
        }
        let safe = self.spec().safe();
        let (lo, hi) = safe.bounding_box();
        let mut out = Vec::new();
        for j in 1..=3 {
            for i in 1..=3 {
                let mut x = self.spec().initial_state().to_vec();
                x[0] = lo[0] + (hi[0] - lo[0]) * i as f64 / 4.0;
                x[1] = lo[1] + (hi[1] - lo[1]) * j as f64 / 4.0;
                if safe.contains(&x) {
                    out.push(x);
                }
            }
        }
        out
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dual ascent end to end. Writes `dual_trace.csv`, `solve_result.csv` and,
/// when `solver.policy_grid > 0`, `policy_grid.csv`.
pub fn cmd_solve(ctx: &Context) -> Result<DualState> {
    let spec = ctx.spec();
    let meta = ctx.meta();
    let params = ctx.dual_params();
    let (state, failure) = match dual_ascent(spec, &params) {
        Ok(s) => (s, None),
        Err(Error::MaxItersExceeded(s)) => {
            let e = Error::MaxItersExceeded(s.clone());
            (*s, Some(e))
        }
        Err(e) => return Err(e),
    };
    state.write_trace(ctx.create("dual_trace.csv")?, Some(&meta))?;
    let header: Vec<String> = ["eta", "p_fail", "std_error", "mode", "converged", "iterations"]
        .map(String::from)
        .to_vec();
    let row = vec![
        fmt(state.eta),
        fmt(state.pfail),
        fmt(state.std_error),
        state.mode.as_str().to_string(),
        state.converged.to_string(),
        state.iteration.to_string(),
    ];
    write_table(ctx.create("solve_result.csv")?, Some(&meta), &header, [row])?;
    println!(
        "eta*={} p_fail={} std_error={} mode={} converged={}",
        fmt(state.eta),
        fmt(state.pfail),
        fmt(state.std_error),
        state.mode.as_str(),
        state.converged
    );

    let n = ctx.problem.solver.policy_grid;
    if n > 0 && spec.safe().axes() >= 2 {
        write_policy_grid(ctx, state.eta, n)?;
    }
    if ctx.dump {
        let trajs = sample_controlled(
            spec,
            &ccpi::sim::ZeroPolicy(spec.model().control_dim()),
            100,
            RolloutOptions::recorded(ctx.problem.solver.dt),
            sub_seed(ctx.seed, u64::MAX),
        )?;
        write_trajectories(
            ctx.create("uncontrolled_paths.csv")?,
            Some(&meta),
            spec.state_dim(),
            &trajs,
            ctx.problem.solver.dump_row_cap,
        )?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(state),
    }
}

fn write_policy_grid(ctx: &Context, eta: f64, n: usize) -> Result<()> {
    let spec = ctx.spec();
    let s = &ctx.problem.solver;
    let (lo, hi) = spec.safe().bounding_box();
    let t0 = spec.safe().t0();
    let m = spec.model().control_dim();
    let mut header = vec!["x0".to_string(), "x1".to_string()];
    header.extend((0..m).map(|c| format!("u{c}")));
    header.extend((0..m).map(|c| format!("u{c}_se")));
    let mut rows = Vec::new();
    let mut k = 0u64;
    for j in 0..n {
        for i in 0..n {
            let mut x = spec.initial_state().to_vec();
            let frac = |q: usize| if n == 1 { 0.5 } else { q as f64 / (n - 1) as f64 };
            x[0] = lo[0] + (hi[0] - lo[0]) * frac(i);
            x[1] = lo[1] + (hi[1] - lo[1]) * frac(j);
            if !spec.safe().contains(&x) {
                continue;
            }
            let est = pi_control(spec, eta, (&x, t0), s.control_samples, s.dt, sub_seed(ctx.seed, 1 << 32 | k))?;
            k += 1;
            let mut r = vec![fmt(x[0]), fmt(x[1])];
            r.extend(est.u.iter().map(|v| fmt(*v)));
            r.extend(est.std_error.iter().map(|v| fmt(*v)));
            rows.push(r);
        }
    }
    write_table(ctx.create("policy_grid.csv")?, Some(&ctx.meta()), &header, rows)
}

/// `Δ` sweep; writes `sweep.csv` and returns the trend summary line.
pub fn cmd_sweep(ctx: &Context, deltas: &[f64]) -> Result<String> {
    if deltas.is_empty() {
        return Err(Error::Config {
            field: "--deltas".into(),
            message: "empty list".into(),
        });
    }
    let params = ctx.dual_params();
    let rows = sweep_delta(ctx.spec(), deltas, &params)?;
    write_sweep(ctx.create("sweep.csv")?, Some(&ctx.meta()), &rows, &params)?;
    let rep = trend_report(&rows, &params);
    let line = format!(
        "trend: eta_violations={} p_fail_violations={} {}",
        rep.eta_violations,
        rep.pfail_violations,
        if rep.ok() { "ok" } else { "violated" }
    );
    println!("{line}");
    Ok(line)
}

/// FDM vs path-integral at one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub eta: f64,
    pub x: Vec<f64>,
    pub j_fdm: f64,
    pub j_pi: f64,
    pub j_se: f64,
    pub u_fdm: Vec<f64>,
    pub u_pi: Vec<f64>,
    pub u_se: Vec<f64>,
    /// `|u_order4 − u_order2|` per component.
    pub u_diff_err: Vec<f64>,
    pub ess: f64,
}

impl CompareRow {
    pub fn value_ok(&self) -> bool {
        (self.j_pi - self.j_fdm).abs() <= 3.0 * self.j_se + 0.02 * self.j_fdm.abs() + 0.01
    }

    pub fn control_ok(&self) -> bool {
        (0..self.u_pi.len()).all(|c| (self.u_pi[c] - self.u_fdm[c]).abs() <= 3.0 * self.u_se[c] + self.u_diff_err[c])
    }

    pub fn wide(&self) -> bool {
        self.ess < LOW_ESS
    }
}

/// Value field and gridded policy for one `η` at the given stencil order.
pub fn fdm_solution(spec: &ProblemSpec, eta: f64, grid: &Grid2D, order: usize, rtol: f64) -> Result<(Field, VectorField)> {
    let xi = fdm::solve_xi_pde(spec, eta, grid, &FdmParams::new(order, rtol), &[])?;
    fdm::value_and_policy_from_xi(&xi, spec, order)
}

/// Compares the grid solution with path-integral estimates at `probes` for each `η`.
pub fn compare(
    spec: &ProblemSpec,
    etas: &[f64],
    probes: &[Vec<f64>],
    grid_nodes: usize,
    rtol: f64,
    samples: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<CompareRow>> {
    let grid = Grid2D::for_safe_set(spec.safe(), grid_nodes, grid_nodes)?;
    let t0 = spec.safe().t0();
    let mut rows = Vec::new();
    for (e, &eta) in etas.iter().enumerate() {
        let (j4, u4) = fdm_solution(spec, eta, &grid, 4, rtol)?;
        let (_, u2) = fdm_solution(spec, eta, &grid, 2, rtol)?;
        for (i, x) in probes.iter().enumerate() {
            let pr = evaluate_probe(spec, eta, (x, t0), samples, dt, sub_seed(sub_seed(seed, e as u64), i as u64))?;
            let a = u4.sample(x, t0)?;
            let b = u2.sample(x, t0)?;
            rows.push(CompareRow {
                eta,
                x: x.clone(),
                j_fdm: j4.interpolate(0, x)?,
                j_pi: pr.j,
                j_se: pr.j_std_error,
                u_diff_err: a.iter().zip(&b).map(|(p, q)| (p - q).abs()).collect(),
                u_fdm: a,
                u_pi: pr.control.u,
                u_se: pr.control.std_error,
                ess: pr.control.effective_sample_size,
            });
        }
    }
    Ok(rows)
}

/// Writes `compare.csv` and returns one summary line per `η`.
pub fn cmd_compare(ctx: &Context, etas: &[f64]) -> Result<Vec<String>> {
    if etas.is_empty() {
        return Err(Error::Config {
            field: "--etas".into(),
            message: "empty list".into(),
        });
    }
    if ctx.spec().state_dim() != 2 {
        return Err(Error::Config {
            field: "model.state_dim".into(),
            message: "compare needs a 2-dimensional model".into(),
        });
    }
    let s = &ctx.problem.solver;
    let probes = ctx.probes();
    let rows = compare(ctx.spec(), etas, &probes, s.grid, s.rtol, s.samples, s.dt, ctx.seed)?;
    let header: Vec<String> = [
        "eta", "x0", "x1", "J_fdm", "J_pi", "J_se", "J_sigma", "value_ok", "u0_fdm", "u1_fdm", "u0_pi", "u1_pi",
        "u0_se", "u1_se", "u0_diff_err", "u1_diff_err", "control_ok", "ess", "wide_error_bars",
    ]
    .map(String::from)
    .to_vec();
    let body = rows.iter().map(|r| {
        let sigma = if r.j_se > 0.0 { (r.j_pi - r.j_fdm).abs() / r.j_se } else { f64::NAN };
        let mut v = vec![fmt(r.eta), fmt(r.x[0]), fmt(r.x[1]), fmt(r.j_fdm), fmt(r.j_pi), fmt(r.j_se), fmt(sigma)];
        v.push(r.value_ok().to_string());
        v.extend(r.u_fdm.iter().chain(&r.u_pi).chain(&r.u_se).chain(&r.u_diff_err).map(|x| fmt(*x)));
        v.push(r.control_ok().to_string());
        v.push(fmt(r.ess));
        v.push(r.wide().to_string());
        v
    });
    write_table(ctx.create("compare.csv")?, Some(&ctx.meta()), &header, body)?;
    let mut lines = Vec::new();
    for &eta in etas {
        let sel: Vec<&CompareRow> = rows.iter().filter(|r| r.eta == eta).collect();
        let vok = sel.iter().filter(|r| r.value_ok()).count();
        let uok = sel.iter().filter(|r| r.control_ok()).count();
        let wide = sel.iter().filter(|r| r.wide()).count();
        let pass = sel.len() > 0 && vok + 1 >= sel.len() && uok + 1 >= sel.len();
        let line = format!(
            "eta={} value {vok}/{n} control {uok}/{n} wide {wide} {}",
            fmt(eta),
            if pass { "PASS" } else { "FAIL" },
            n = sel.len()
        );
        println!("{line}");
        lines.push(line);
    }
    Ok(lines)
}

/// `count` closed-loop rollouts under the path-integral policy. Runs the dual
/// ascent first when `eta` is not given. Writes `rollouts.csv` (one row per
/// rollout) and, with `--dump`, `trajectories.csv`.
pub fn cmd_rollout(ctx: &Context, eta: Option<f64>, count: usize) -> Result<f64> {
    let spec = ctx.spec();
    let s = &ctx.problem.solver;
    let eta = match eta {
        Some(e) if !(e >= 0.0) => return Err(Error::Config { field: "--eta".into(), message: "must be nonnegative".into() }),
        Some(e) => e,
        None => match dual_ascent(spec, &ctx.dual_params()) {
            Ok(st) => st.eta,
            Err(Error::MaxItersExceeded(st)) => st.eta,
            Err(e) => return Err(e),
        },
    };
    let policy = PathIntegralPolicy {
        spec: spec.clone(),
        eta,
        samples: s.control_samples,
        dt: s.dt,
        seed: sub_seed(ctx.seed, 7),
    };
    let opts = if ctx.dump { RolloutOptions::recorded(s.dt) } else { RolloutOptions::new(s.dt) };
    let trajs = if count == 0 { Vec::new() } else { sample_controlled(spec, &policy, count, opts, ctx.seed)? };
    let n = spec.state_dim();
    let mut header = vec!["id".to_string(), "eta".to_string(), "exit_time".to_string()];
    header.extend((0..n).map(|i| format!("x{i}_final")));
    header.push("exit_class".into());
    let rows = trajs.iter().enumerate().map(|(id, tr)| {
        let mut r = vec![id.to_string(), fmt(eta), fmt(tr.exit_time)];
        r.extend(tr.final_state.iter().map(|v| fmt(*v)));
        r.push(if tr.exited_via_boundary { "boundary" } else { "horizon" }.into());
        r
    });
    write_table(ctx.create("rollouts.csv")?, Some(&ctx.meta()), &header, rows)?;
    if ctx.dump {
        write_trajectories(ctx.create("trajectories.csv")?, Some(&ctx.meta()), n, &trajs, s.dump_row_cap)?;
    }
    let frac = if count == 0 {
        0.0
    } else {
        trajs.iter().filter(|t| t.exited_via_boundary).count() as f64 / count as f64
    };
    println!("eta={} rollouts={count} boundary_fraction={}", fmt(eta), fmt(frac));
    Ok(frac)
}

/// Exit code for an error: 2 for configuration and usage problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } => 2,
        _ => 1,
    }
}

/// Machine-readable error description written to stderr.
pub fn error_json(e: &Error) -> String {
    let mut obj = serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
    });
    match e {
        Error::Config { field, .. } | Error::InvalidParameter { field, .. } => {
            obj["field"] = serde_json::Value::String(field.clone());
        }
        Error::MaxItersExceeded(s) => {
            obj["best_eta"] = serde_json::json!(s.eta);
            obj["best_p_fail"] = serde_json::json!(s.pfail);
        }
        _ => {}
    }
    obj.to_string()
}
