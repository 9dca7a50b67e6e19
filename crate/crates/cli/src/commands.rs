use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use zpt_core::diagnostics::{self, ScanConfig, ScanTest, TrapStatus};
use zpt_core::enhance::{self, ArtRegKind, EnhancedTest};
use zpt_core::io;
use zpt_core::mc::McConfig;
use zpt_core::model::{self, CovarianceModel, DesignMatrix};
use zpt_core::testkit::{self, CurveMethod, CurvePoint, PowerCurve, TestSpec};

use crate::config::{RawConfig, RunConfig, TestChoice};
use crate::output::{slug, with_cleanup, Artifacts};
use crate::svg::{Chart, Series};
use crate::{EXIT_CHECKS_FAILED, EXIT_E_IN_SPAN, EXIT_OK, EXIT_TRAP};

#[derive(Debug, Parser)]
#[command(name = "zptrap", version, about = "Exact invariant tests for error correlation and the zero-power trap")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build lattice weights, report lambda_max and the Perron vector, write Matrix Market.
    Lattice,
    /// Certify the zero-power trap for the configured test. Exit 2 = trapped, 3 = e in span(X).
    Diagnose,
    /// Exact critical value of the configured test.
    Critval,
    /// Power curve of the configured test.
    Power,
    /// Power envelope together with the configured test.
    Envelope,
    /// Power-enhanced versions of the configured test for each epsilon.
    Enhance,
    /// Random-design prevalence scan.
    Scan,
    /// All seven curves of the Queen 4x4 comparison plus a checks file. Exit 4 on failed checks.
    ReproduceFig1,
}

/// Flag overrides; each one replaces the corresponding key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// sar or ar1
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// AR(1) sample size
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// lattice shape such as 4x4
    #[arg(long, global = true)]
    pub lattice: Option<String>,
    /// queen or rook
    #[arg(long, global = true)]
    pub criterion: Option<String>,
    /// binary or row
    #[arg(long, global = true)]
    pub normalization: Option<String>,
    /// weights file (.mtx or edge list)
    #[arg(long, global = true)]
    pub weights: Option<String>,
    /// design CSV, or `intercept`
    #[arg(long, global = true)]
    pub design: Option<String>,
    /// co, lbi, poi or ee
    #[arg(long, global = true)]
    pub test: Option<String>,
    /// POI alternative as a fraction of a
    #[arg(long = "rho-bar", global = true)]
    pub rho_bar: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    /// comma-separated epsilons; empty skips enhancement
    #[arg(long, global = true)]
    pub eps: Option<String>,
    #[arg(long = "grid-n", global = true)]
    pub grid_n: Option<String>,
    /// largest grid point as a fraction of a
    #[arg(long = "grid-max", global = true)]
    pub grid_max: Option<String>,
    #[arg(long = "mc-reps", global = true)]
    pub mc_reps: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// regressors per random design (scan)
    #[arg(long, global = true)]
    pub k: Option<String>,
    /// number of random designs (scan)
    #[arg(long, global = true)]
    pub reps: Option<String>,
}

impl Overrides {
    pub fn raw_config(&self) -> Result<RawConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        let pairs = [
            ("model", &self.model),
            ("n", &self.n),
            ("lattice", &self.lattice),
            ("criterion", &self.criterion),
            ("normalization", &self.normalization),
            ("weights", &self.weights),
            ("design", &self.design),
            ("test", &self.test),
            ("rho_bar", &self.rho_bar),
            ("alpha", &self.alpha),
            ("eps", &self.eps),
            ("grid_n", &self.grid_n),
            ("grid_max", &self.grid_max),
            ("mc_reps", &self.mc_reps),
            ("seed", &self.seed),
            ("out", &self.out),
            ("k", &self.k),
            ("reps", &self.reps),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                raw.set(key, v.clone())?;
            }
        }
        Ok(raw)
    }
}

struct Context {
    cfg: RunConfig,
    model: CovarianceModel,
    design: DesignMatrix,
}

impl Context {
    fn new(cfg: RunConfig) -> Result<Self> {
        let model = cfg.build_model()?;
        let design = cfg.build_design(model.n())?;
        Ok(Self { cfg, model, design })
    }

    fn preamble(&self) -> Vec<String> {
        let mut v = vec![
            format!("tool = zptrap {}", env!("CARGO_PKG_VERSION")),
            format!("config_fingerprint = {}", self.cfg.fingerprint()),
            format!("model_fingerprint = {}", model::fingerprint(&self.model, &self.design)),
        ];
        v.extend(self.cfg.lines().into_iter().map(|l| format!("config: {l}")));
        v
    }

    fn spec(&self) -> Result<TestSpec> {
        let x = &self.design;
        Ok(match self.cfg.test {
            TestChoice::CliffOrd => {
                let w = self
                    .model
                    .weights()
                    .ok_or_else(|| anyhow!("the Cliff-Ord test needs a weights matrix; use --test lbi for ar1"))?;
                testkit::b_cliff_ord(w, x)?
            }
            TestChoice::Lbi => testkit::b_lbi(&self.model, x)?,
            TestChoice::Poi { fraction } => testkit::b_poi(&self.model, x, fraction * self.model.upper())?,
            TestChoice::Ee => testkit::b_ee(self.model.limit_vector(), x)?,
        })
    }

    fn grid(&self) -> Result<Vec<f64>> {
        Ok(testkit::densified_grid(self.model.upper(), self.cfg.grid_n, self.cfg.grid_max)?)
    }

    fn artifacts(&self) -> Result<Artifacts> {
        Artifacts::new(&self.cfg.out, self.preamble())
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let raw = cli.overrides.raw_config()?;
    let cfg = RunConfig::resolve(&raw)?;
    match cli.command {
        Command::Lattice => cmd_lattice(cfg),
        Command::Diagnose => cmd_diagnose(&Context::new(cfg)?),
        Command::Critval => cmd_critval(&Context::new(cfg)?),
        Command::Power => cmd_power(&Context::new(cfg)?),
        Command::Envelope => cmd_envelope(&Context::new(cfg)?),
        Command::Enhance => cmd_enhance(&Context::new(cfg)?),
        Command::Scan => cmd_scan(&Context::new(cfg)?),
        Command::ReproduceFig1 => cmd_reproduce_fig1(cfg),
    }
}

fn curve_csv(curve: &PowerCurve, preamble: &[String]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf, preamble)?;
    Ok(buf)
}

fn chart(title: &str, curves: &[&PowerCurve], upper: f64, alpha: f64, preamble: &[String]) -> String {
    let series = curves
        .iter()
        .map(|c| Series {
            label: c.label.clone(),
            points: c.points.iter().map(|p| (p.rho / upper, p.power)).collect(),
            dashed: matches!(c.method, CurveMethod::MonteCarlo(_)),
        })
        .collect();
    Chart {
        title: title.to_string(),
        x_label: "rho / a".into(),
        y_label: "rejection probability".into(),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        series,
        reference: Some((alpha, format!("alpha = {alpha}"))),
        provenance: preamble.to_vec(),
    }
    .render()
}

fn write_curves(art: &mut Artifacts, prefix: &str, curves: &[&PowerCurve]) -> Result<()> {
    for c in curves {
        let bytes = curve_csv(c, art.preamble())?;
        art.write(&format!("{prefix}{}.csv", slug(&c.label)), &bytes)?;
    }
    Ok(())
}

fn cmd_lattice(cfg: RunConfig) -> Result<u8> {
    let model = cfg.build_model()?;
    let w = model.weights().ok_or_else(|| anyhow!("lattice needs a SAR model"))?;
    println!("n = {}", w.n());
    println!("lambda_max = {}", w.spectral_radius());
    println!("a = {}", model.upper());
    println!("symmetric = {}", w.is_symmetric());
    let perron: Vec<String> = w.perron_vector().iter().map(|v| format!("{v:.10}")).collect();
    println!("perron_vector = {}", perron.join(","));
    let design = DesignMatrix::intercept(model.n())?;
    let ctx = Context { cfg, model, design };
    let mut art = ctx.artifacts()?;
    with_cleanup(&mut art, |art| {
        let mut buf = Vec::new();
        let comments: Vec<String> = art.preamble().to_vec();
        io::write_matrix_market(&mut buf, ctx.model.weights().unwrap().entries(), &comments)?;
        let path = art.write("weights.mtx", &buf)?;
        println!("wrote {}", path.display());
        Ok(EXIT_OK)
    })
}

fn cmd_diagnose(ctx: &Context) -> Result<u8> {
    let spec = ctx.spec()?;
    let v = diagnostics::diagnose(&spec, ctx.cfg.alpha, ctx.model.limit_vector(), &ctx.design)?;
    println!("test = {}", spec.label());
    println!("alpha = {}", v.alpha);
    println!("status = {:?}", v.status);
    println!("t_at_e = {}", v.t_at_e);
    println!("kappa_alpha = {}", v.kappa_alpha);
    println!("alpha_star = {}", v.alpha_star);
    Ok(match v.status {
        TrapStatus::TrapCertified => {
            println!("note: power tends to zero as rho -> a; trapped for every level below alpha_star");
            EXIT_TRAP
        }
        TrapStatus::EInSpanX => {
            println!("note: e lies in span(X); the trap condition does not apply");
            EXIT_E_IN_SPAN
        }
        TrapStatus::NotApplicableEeForm => {
            println!("note: NotApplicable_EEform, tests of the form C e e' C' have limiting power one");
            EXIT_OK
        }
        TrapStatus::Inconclusive => {
            println!("note: no trap at the given alpha (T_B(e) >= kappa(alpha))");
            EXIT_OK
        }
    })
}

fn cmd_critval(ctx: &Context) -> Result<u8> {
    let spec = ctx.spec()?;
    let cv = testkit::critical_value(&spec, ctx.cfg.alpha)?;
    println!("test = {}", spec.label());
    println!("alpha = {}", cv.alpha);
    println!("kappa = {}", cv.c);
    println!("achieved_size = {}", cv.achieved_size);
    println!("solver_tol = {}", cv.solver_tol);
    println!("lambda_min = {}", spec.eig_min());
    println!("lambda_max = {}", spec.eig_max());
    Ok(EXIT_OK)
}

fn cmd_power(ctx: &Context) -> Result<u8> {
    let spec = ctx.spec()?;
    let grid = ctx.grid()?;
    let curve = testkit::level_curve(&spec, ctx.cfg.alpha, &ctx.model, &grid)?;
    let mut art = ctx.artifacts()?;
    with_cleanup(&mut art, |art| {
        write_curves(art, "power_", &[&curve])?;
        let svg = chart("Power function", &[&curve], ctx.model.upper(), ctx.cfg.alpha, art.preamble());
        art.write("power.svg", svg.as_bytes())?;
        if let Some(last) = curve.last() {
            println!("{}: power at rho = {} is {}", curve.label, last.rho, last.power);
        }
        Ok(EXIT_OK)
    })
}

fn cmd_envelope(ctx: &Context) -> Result<u8> {
    let spec = ctx.spec()?;
    let grid = ctx.grid()?;
    let env = testkit::power_envelope(&ctx.model, &ctx.design, ctx.cfg.alpha, &grid)?;
    let curve = testkit::level_curve(&spec, ctx.cfg.alpha, &ctx.model, &grid)?;
    let excess = env.points.iter().zip(&curve.points).map(|(e, p)| p.power - e.power).fold(f64::NEG_INFINITY, f64::max);
    let mut art = ctx.artifacts()?;
    with_cleanup(&mut art, |art| {
        write_curves(art, "envelope_", &[&env, &curve])?;
        let svg = chart("Power envelope", &[&env, &curve], ctx.model.upper(), ctx.cfg.alpha, art.preamble());
        art.write("envelope.svg", svg.as_bytes())?;
        println!("max excess of {} over the envelope = {excess:.3e}", curve.label);
        Ok(EXIT_OK)
    })
}

fn enhanced_curves(
    tests: &[EnhancedTest],
    model: &CovarianceModel,
    grid: &[f64],
    mc: McConfig,
    labels: &[String],
    alpha: f64,
) -> Result<Vec<PowerCurve>> {
    let mut curves: Vec<PowerCurve> = labels
        .iter()
        .map(|l| PowerCurve { label: l.clone(), alpha, method: CurveMethod::MonteCarlo(mc), points: Vec::new() })
        .collect();
    for &rho in grid {
        for (curve, est) in curves.iter_mut().zip(enhance::enhanced_powers(tests, model, rho, mc)?) {
            curve.points.push(CurvePoint { rho, power: est.p, se: Some(est.se) });
        }
    }
    Ok(curves)
}

fn build_enhanced(base: &TestSpec, ee: &TestSpec, alpha: f64, eps: &[f64], mc_reps: usize, seed: u64) -> Result<Vec<EnhancedTest>> {
    eps.iter()
        .enumerate()
        .map(|(i, &e)| Ok(enhance::enhanced_critical(base, ee, alpha, e, McConfig::new(mc_reps, seed.wrapping_add(i as u64)))?))
        .collect()
}

fn cmd_enhance(ctx: &Context) -> Result<u8> {
    let eps = ctx.cfg.checked_eps()?;
    if eps.is_empty() {
        println!("note: empty epsilon list, enhancement skipped");
        return Ok(EXIT_OK);
    }
    let base = ctx.spec()?;
    let ee = testkit::b_ee(ctx.model.limit_vector(), &ctx.design)?;
    let grid = ctx.grid()?;
    let alpha = ctx.cfg.alpha;
    let tests = build_enhanced(&base, &ee, alpha, eps, ctx.cfg.mc_reps, ctx.cfg.seed)?;
    let base_curve = testkit::level_curve(&base, alpha, &ctx.model, &grid)?;
    let labels: Vec<String> = tests.iter().map(|t| format!("phi* eps={}", t.epsilon)).collect();
    let mc = McConfig::new(ctx.cfg.mc_reps, ctx.cfg.seed);
    let curves = enhanced_curves(&tests, &ctx.model, &grid, mc, &labels, alpha)?;
    let fingerprint = model::fingerprint(&ctx.model, &ctx.design);
    let mut art = ctx.artifacts()?;
    with_cleanup(&mut art, |art| {
        let mut all: Vec<&PowerCurve> = vec![&base_curve];
        all.extend(curves.iter());
        write_curves(art, "enhance_", &all)?;
        for t in &tests {
            art.write_commented(&format!("enhanced_eps_{}.txt", t.epsilon), &t.to_key_value(&fingerprint))?;
            println!(
                "eps = {}: base_cutoff = {} ee_cutoff = {} size = {} (se {})",
                t.epsilon, t.base_cutoff, t.ee_cutoff, t.validation_size.p, t.validation_size.se
            );
        }
        let svg = chart("Power-enhanced tests", &all, ctx.model.upper(), alpha, art.preamble());
        art.write("enhance.svg", svg.as_bytes())?;
        for c in &curves {
            if let Some(last) = c.last() {
                println!("{}: power at rho = {} is {}", c.label, last.rho, last.power);
            }
        }
        Ok(EXIT_OK)
    })
}

fn cmd_scan(ctx: &Context) -> Result<u8> {
    let test = match ctx.cfg.test {
        TestChoice::CliffOrd => ScanTest::CliffOrd,
        TestChoice::Lbi => ScanTest::Lbi,
        TestChoice::Poi { fraction } => ScanTest::Poi { rho_bar: fraction * ctx.model.upper() },
        TestChoice::Ee => bail!("scan supports co, lbi and poi"),
    };
    let report = diagnostics::design_scan(
        &ctx.model,
        test,
        ScanConfig { alpha: ctx.cfg.alpha, k: ctx.cfg.scan_k, reps: ctx.cfg.scan_reps, seed: ctx.cfg.seed },
    )?;
    let mut art = ctx.artifacts()?;
    with_cleanup(&mut art, |art| {
        let mut buf = Vec::new();
        report.write_csv(&mut buf, art.preamble())?;
        art.write("scan.csv", &buf)?;
        art.write_commented("scan_summary.txt", &report.summary())?;
        print!("{}", report.summary());
        Ok(EXIT_OK)
    })
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.to_string(), pass, detail }
}

/// Queen 4x4 binary lattice, intercept design, alpha = .05 and eps in {.002, .006, .01}.
/// Grid size, grid end, Monte Carlo replications, seed and output directory come from the
/// configuration.
fn cmd_reproduce_fig1(cfg: RunConfig) -> Result<u8> {
    let mut raw = RawConfig::default();
    raw.set("grid_n", cfg.grid_n.to_string())?;
    raw.set("grid_max", cfg.grid_max.to_string())?;
    raw.set("mc_reps", cfg.mc_reps.to_string())?;
    raw.set("seed", cfg.seed.to_string())?;
    raw.set("out", cfg.out.display().to_string())?;
    let ctx = Context::new(RunConfig::resolve(&raw)?)?;
    let (model, x) = (&ctx.model, &ctx.design);
    let a = model.upper();
    let alpha = 0.05;
    let eps = [0.002, 0.006, 0.01];
    let mut grid: Vec<f64> = (1..=10).map(|i| 0.02 * a * i as f64).collect();
    grid.extend(ctx.grid()?);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * a);
    let mc = McConfig::new(ctx.cfg.mc_reps, ctx.cfg.seed);

    let co = testkit::b_cliff_ord(model.weights().unwrap(), x)?;
    let ee = testkit::b_ee(model.limit_vector(), x)?;
    let art_test = enhance::artificial_regressor_test(model, x, ArtRegKind::CliffOrd, alpha)?;
    let lam = enhance::lambda_matrix(model)?;
    let limit = enhance::artreg_limiting_power(&art_test, &lam)?;
    let tests = build_enhanced(&co, &ee, alpha, &eps, ctx.cfg.mc_reps, ctx.cfg.seed)?;

    let mut env = testkit::power_envelope(model, x, alpha, &grid)?;
    env.label = "Envelope".into();
    let mut co_curve = testkit::level_curve(&co, alpha, model, &grid)?;
    co_curve.label = "CO".into();
    let mut ee_curve = testkit::level_curve(&ee, alpha, model, &grid)?;
    ee_curve.label = "Sol. 1".into();
    let mut art_curve = testkit::power_curve(&art_test.spec, art_test.kappa_bar.c, model, &grid)?;
    art_curve.label = "CO Sol. 2".into();
    art_curve.alpha = alpha;
    let labels: Vec<String> = eps.iter().map(|e| format!("CO Sol. 3 eps={e}")).collect();
    let star_curves = enhanced_curves(&tests, model, &grid, mc, &labels, alpha)?;

    let mut checks = Vec::new();
    let verdict = diagnostics::diagnose(&co, alpha, model.limit_vector(), x)?;
    checks.push(check(
        "Cliff-Ord trap certified",
        verdict.status == TrapStatus::TrapCertified,
        format!("T(e) = {:.6}, kappa = {:.6}, alpha* = {:.6}", verdict.t_at_e, verdict.kappa_alpha, verdict.alpha_star),
    ));
    let kappa_co = testkit::critical_value(&co, alpha)?.c;
    let co_999 = testkit::power(&co, kappa_co, model, 0.999 * a)?;
    checks.push(check("CO power at 0.999a <= 0.01", co_999 <= 0.01, format!("{co_999:.5}")));
    let co_last = co_curve.last().map_or(f64::NAN, |p| p.power);
    checks.push(check("CO curve terminal value <= 0.01", co_last <= 0.01, format!("{co_last:.5}")));
    let kappa_ee = testkit::critical_value(&ee, alpha)?.c;
    let ee_999 = testkit::power(&ee, kappa_ee, model, 0.999 * a)?;
    checks.push(check("EE power at 0.999a >= 0.99", ee_999 >= 0.99, format!("{ee_999:.5}")));
    checks.push(check("CO Sol. 2 limiting power = 0.619 +- 0.02", (limit - 0.619).abs() <= 0.02, format!("{limit:.5}")));
    let near = art_test.power(model, a * (1.0 - 1e-4))?;
    checks.push(check(
        "CO Sol. 2 power at a(1-1e-4) within 0.01 of the limit",
        (near - limit).abs() <= 0.01,
        format!("{near:.5}"),
    ));
    let art_last = art_curve.last().map_or(f64::NAN, |p| p.power);
    checks.push(check("CO Sol. 2 terminal value = 0.619 +- 0.02", (art_last - 0.619).abs() <= 0.02, format!("{art_last:.5}")));
    for t in &tests {
        let ok = (t.achieved_size.p - alpha).abs() <= 3.0 * t.achieved_size.se
            && (t.validation_size.p - alpha).abs() <= 3.0 * t.validation_size.se;
        checks.push(check(
            &format!("phi* eps={} size within 3 SE of alpha", t.epsilon),
            ok,
            format!("{:.5} / {:.5} (se {:.1e})", t.achieved_size.p, t.validation_size.p, t.validation_size.se),
        ));
        let p = enhance::enhanced_power(t, model, 0.999 * a, mc)?;
        checks.push(check(&format!("phi* eps={} power at 0.999a >= 0.99", t.epsilon), p.p >= 0.99, format!("{:.4}", p.p)));
    }
    for c in &star_curves {
        let last = c.last().map_or(f64::NAN, |p| p.power);
        checks.push(check(&format!("{} terminal value >= 0.99", c.label), last >= 0.99, format!("{last:.4}")));
    }
    let profile_grid = testkit::uniform_grid(a, 29, 0.7);
    let profile = enhance::approximation_profile(&co, alpha, &tests, model, &profile_grid, mc)?;
    let gaps: Vec<String> = profile.rows.iter().map(|r| format!("eps={}: {:.5}", r.epsilon, r.sup_gap)).collect();
    checks.push(check(
        "sup-gap to CO over [0, 0.7a] non-increasing as eps decreases",
        profile.monotone,
        gaps.join(", "),
    ));
    let mut excess = f64::NEG_INFINITY;
    for c in [&co_curve, &ee_curve, &art_curve] {
        for (p, e) in c.points.iter().zip(&env.points) {
            excess = excess.max(p.power - e.power);
        }
    }
    for c in &star_curves {
        for (p, e) in c.points.iter().zip(&env.points) {
            excess = excess.max(p.power - e.power - 3.0 * p.se.unwrap_or(0.0));
        }
    }
    checks.push(check("envelope dominates every curve", excess <= 1e-6, format!("max excess {excess:.2e}")));
    let gap_small = co_curve
        .points
        .iter()
        .zip(&env.points)
        .filter(|(p, _)| p.rho <= 0.2 * a)
        .map(|(p, e)| e.power - p.power)
        .fold(0.0f64, f64::max);
    checks.push(check("envelope - CO <= 0.02 for rho <= 0.2a", gap_small <= 0.02, format!("{gap_small:.2e}")));
    let art_gap = art_curve
        .points
        .iter()
        .zip(&env.points)
        .filter(|(p, _)| p.rho <= 0.2 * a)
        .map(|(p, e)| e.power - p.power)
        .fold(0.0f64, f64::max);
    checks.push(check("envelope - CO Sol. 2 <= 0.02 for rho <= 0.2a", art_gap <= 0.02, format!("{art_gap:.2e}")));

    let fingerprint = model::fingerprint(model, x);
    let mut art = ctx.artifacts()?;
    let failures: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
    with_cleanup(&mut art, |art| {
        let mut all: Vec<&PowerCurve> = vec![&env, &co_curve, &ee_curve, &art_curve];
        all.extend(star_curves.iter());
        write_curves(art, "fig1_", &all)?;
        let svg = chart("Queen 4x4 lattice, intercept only", &all, a, alpha, art.preamble());
        art.write("fig1.svg", svg.as_bytes())?;
        for t in &tests {
            art.write_commented(&format!("enhanced_eps_{}.txt", t.epsilon), &t.to_key_value(&fingerprint))?;
        }
        art.write_commented("artreg.txt", &art_test.to_key_value(&fingerprint))?;
        let mut text = String::new();
        for c in &checks {
            let _ = writeln!(text, "{} | {} | {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        art.write_commented("checks.txt", &text)?;
        art.write_commented("profile.csv", &profile.to_csv())?;
        print!("{text}");
        Ok(())
    })?;
    if failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed checks:");
        for f in failures {
            eprintln!("  {}", f.name);
        }
        Ok(EXIT_CHECKS_FAILED)
    }
}
