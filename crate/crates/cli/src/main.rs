mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bkt_core::density::{a_report, prop21_constants, MultiscaleCover};
use bkt_core::duality::{duality_check, DualityOptions};
use bkt_core::ensemble::{check_properties, run_renormalization, weights_to_density_mixture, RenormConfig};
use bkt_core::fields::{batch_means, gff_laplace_exact, iv_mcmc, villain_estimate, Estimate, GffSampler};
use bkt_core::green::{claim_green_lower, d5_from_d6, empirical_d6, GreenOperator, GreenOptions, PeriodicGreen};
use bkt_core::lattice::{Graph, Kind, LatticeDomain};
use bkt_core::spinwave::{assemble_spinwave, spinwave_for_member, ComponentGeometry};
use bkt_core::verify::{config_hash, run_suite, Profile, Status, Suite, VERSION};
use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use config::{invalid, ConfigError, DomainSpec, RunConfig, SCHEMA};

#[derive(Parser, Debug)]
#[command(name = "bkt", version, about = "Lattice field laboratory: samplers, Green functions, charge expansions and checks", after_help = SCHEMA)]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// paper | test-scaled
    #[arg(long, global = true)]
    profile: Option<String>,
    /// M for the test-scaled profile (2, 4 or 8).
    #[arg(long = "m-test", global = true)]
    m_test: Option<u64>,
    /// free | periodic | zero
    #[arg(long, global = true)]
    kind: Option<String>,
    #[arg(long = "L", global = true)]
    l: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// MC estimates as CSV (model, L, beta, observable, estimate, se, n).
    Sample {
        /// gff | iv | villain
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        /// Site for villain observables, "a,b".
        #[arg(long)]
        x: Option<String>,
    },
    /// Free-box Green lower bound sweep as CSV (L, y0, y1, lhs, bound, eqGreenId2).
    Green {
        /// Comma-separated box sides.
        #[arg(long)]
        sides: Option<String>,
        #[arg(long = "cg-tol")]
        cg_tol: Option<f64>,
        #[arg(long = "dense-cutoff")]
        dense_cutoff: Option<usize>,
    },
    /// Multiscale covers and A(ϱ) for a density.
    Cover {
        /// Density as a JSON map {"a,b": charge}.
        #[arg(long)]
        density: Option<String>,
    },
    /// Weight expansion and renormalized ensembles, summarised.
    Expand {
        /// Weight as JSON, e.g. {"type":"fejer","N":2}.
        #[arg(long)]
        weights: Option<String>,
        /// Dump up to this many terms (capped at 10^6).
        #[arg(long)]
        dump: Option<usize>,
    },
    /// Spin wave for a neutral density.
    Spinwave {
        #[arg(long)]
        density: Option<String>,
    },
    /// Villain E[cos θ_x] against its integer-valued dual.
    Duality {
        /// Site "x0,x1".
        #[arg(long)]
        x: Option<String>,
        #[arg(long = "k-cut")]
        k_cut: Option<usize>,
        #[arg(long = "m-cut")]
        m_cut: Option<usize>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
    },
    /// Check suites; exit 1 if any pass/fail check fails.
    Verify {
        /// identities | bounds | duality | all
        #[arg(long)]
        suite: Option<String>,
        /// Keep per-check wall-clock times in the report.
        #[arg(long)]
        timings: bool,
    },
}

enum Failure {
    Config(ConfigError),
    Core(bkt_core::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<bkt_core::Error> for Failure {
    fn from(e: bkt_core::Error) -> Self {
        Failure::Core(e)
    }
}

struct Output {
    command: &'static str,
    ext: &'static str,
    body: String,
    failed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            if let Err(e) = emit(&o) {
                eprintln!("error: writing output: {e}");
                return ExitCode::from(2);
            }
            if o.failed {
                eprintln!("{}: check failed", o.command);
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

static OUT: std::sync::OnceLock<Option<PathBuf>> = std::sync::OnceLock::new();

fn emit(o: &Output) -> std::io::Result<()> {
    let target = match OUT.get().cloned().flatten() {
        Some(p) => Some(p),
        None => std::env::var_os("BKT_OUT_DIR").map(|d| PathBuf::from(d).join(format!("{}.{}", o.command, o.ext))),
    };
    match target {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&p, &o.body)
        }
        None => {
            print!("{}", o.body);
            Ok(())
        }
    }
}

fn parse_json_arg<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, ConfigError> {
    serde_json::from_str(s).map_err(|e| invalid(format!("--{what}: line {} column {}: {e}", e.line(), e.column())))
}

fn parse_site(what: &str, s: &str) -> Result<[usize; 2], ConfigError> {
    config::parse_pair(s).map(|(a, b)| [a, b]).ok_or_else(|| invalid(format!("--{what} expects \"a,b\", got {s:?}")))
}

fn run(cli: Cli) -> Result<Output, Failure> {
    let _ = OUT.set(cli.out.clone());
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(invalid("--threads must be ≥ 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| invalid(format!("--threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.profile.is_some() {
        cfg.profile = cli.profile.clone();
    }
    if cli.m_test.is_some() {
        cfg.m_test = cli.m_test;
    }
    if cli.beta.is_some() {
        cfg.beta = cli.beta;
    }
    if cli.kind.is_some() || cli.l.is_some() {
        let kind = match cli.kind.as_deref() {
            Some(k) => parse_json_arg::<Kind>("kind", &format!("{k:?}"))?,
            None => cfg.domain.as_ref().map(|d| d.kind).unwrap_or(Kind::Free),
        };
        let l = cli.l.or(cfg.domain.as_ref().map(|d| d.l)).ok_or_else(|| invalid("--kind needs --L"))?;
        cfg.domain = Some(DomainSpec { kind, l });
    }
    match cli.cmd {
        Cmd::Sample { model, steps, chains, burn_in, x } => {
            cfg.model = model.or(cfg.model);
            cfg.steps = steps.or(cfg.steps);
            cfg.chains = chains.or(cfg.chains);
            cfg.burn_in = burn_in.or(cfg.burn_in);
            if let Some(x) = x {
                cfg.x = Some(parse_site("x", &x)?);
            }
            sample(&cfg)
        }
        Cmd::Green { sides, cg_tol, dense_cutoff } => {
            if let Some(s) = sides {
                let v: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse()).collect();
                cfg.sides = Some(v.map_err(|_| invalid(format!("--sides expects integers, got {s:?}")))?);
            }
            cfg.cg_tol = cg_tol.or(cfg.cg_tol);
            cfg.dense_cutoff = dense_cutoff.or(cfg.dense_cutoff);
            green(&cfg)
        }
        Cmd::Cover { density } => {
            if let Some(d) = density {
                cfg.density = Some(parse_json_arg("density", &d)?);
            }
            cover(&cfg)
        }
        Cmd::Expand { weights, dump } => {
            if let Some(w) = weights {
                cfg.weights = Some(parse_json_arg("weights", &w)?);
            }
            cfg.dump = dump.or(cfg.dump);
            expand(&cfg)
        }
        Cmd::Spinwave { density } => {
            if let Some(d) = density {
                cfg.density = Some(parse_json_arg("density", &d)?);
            }
            spinwave(&cfg)
        }
        Cmd::Duality { x, k_cut, m_cut, nodes, steps, chains, burn_in } => {
            if let Some(x) = x {
                cfg.x = Some(parse_site("x", &x)?);
            }
            cfg.k_cut = k_cut.or(cfg.k_cut);
            cfg.m_cut = m_cut.or(cfg.m_cut);
            cfg.nodes = nodes.or(cfg.nodes);
            cfg.steps = steps.or(cfg.steps);
            cfg.chains = chains.or(cfg.chains);
            cfg.burn_in = burn_in.or(cfg.burn_in);
            duality(&cfg)
        }
        Cmd::Verify { suite, timings } => {
            cfg.suite = suite.or(cfg.suite);
            verify(&cfg, timings)
        }
    }
}

fn header(cfg: &RunConfig, command: &str) -> (String, Map<String, Value>) {
    let config = serde_json::to_value(cfg).expect("config serializes");
    let hash = config_hash(&json!({"command": command, "config": config}));
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("version".into(), json!(VERSION));
    m.insert("config_hash".into(), json!(hash));
    m.insert("profile".into(), json!(cfg.profile_name()));
    m.insert("config".into(), config);
    (hash, m)
}

/// JSON envelope: command, version, config_hash, profile, config, then the payload keys.
fn json_output(cfg: &RunConfig, command: &'static str, payload: Value, failed: bool) -> Output {
    let (_, mut m) = header(cfg, command);
    if let Value::Object(p) = payload {
        m.extend(p);
    }
    let mut body = serde_json::to_string_pretty(&Value::Object(m)).expect("json");
    body.push('\n');
    Output { command, ext: "json", body, failed }
}

/// CSV with a leading `#` line carrying version, config hash and profile.
fn csv_output(cfg: &RunConfig, command: &'static str, columns: &[&str], rows: Vec<Vec<String>>, failed: bool) -> Output {
    let (hash, _) = header(cfg, command);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).expect("csv");
    for r in rows {
        w.write_record(&r).expect("csv");
    }
    let data = String::from_utf8(w.into_inner().expect("csv")).expect("utf8");
    let body = format!("# bkt {VERSION} config_hash={hash} profile={}\n{data}", cfg.profile_name());
    Output { command, ext: "csv", body, failed }
}

/// Shortest round-trip form; exponent notation outside [1e-4, 1e15).
fn num(x: f64) -> String {
    if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn sample(cfg: &RunConfig) -> Result<Output, Failure> {
    let dom = cfg.domain()?;
    let beta = cfg.beta()?;
    let model = cfg.model.clone().unwrap_or_else(|| "gff".into());
    let seed = cfg.seed.unwrap_or(0);
    let chains = cfg.chains.unwrap_or(8).max(1);
    let v = cfg.v.unwrap_or(0);
    let n = dom.n();
    if v >= n {
        return Err(invalid(format!("v = {v} is not a vertex")).into());
    }
    // dipole ½(δ_first − δ_last)
    let mut f = vec![0.0; n];
    f[0] = 0.5;
    f[n - 1] = -0.5;
    let mut rows: Vec<(&str, Estimate)> = Vec::new();
    match model.as_str() {
        "gff" => {
            let s = GffSampler::new(&dom, beta, v)?;
            let steps = cfg.steps.unwrap_or(100_000);
            rows.push(("laplace_dipole", bkt_core::fields::gff_laplace_mc(&s, &f, steps, seed)));
            let op = GreenOperator::new(&dom)?;
            rows.push(("laplace_dipole_exact", Estimate::exact(gff_laplace_exact(&op, &f, beta)?)));
        }
        "iv" => {
            let sweeps = cfg.steps.unwrap_or(4000);
            let burn = cfg.burn_in.unwrap_or(sweeps / 10);
            let xs = iv_mcmc(&dom, beta, v, seed, chains, sweeps, burn, |m| m.iter().zip(&f).map(|(a, b)| *a as f64 * b).sum::<f64>().exp());
            rows.push(("laplace_dipole", batch_means(&xs)));
            let op = GreenOperator::new(&dom)?;
            rows.push(("laplace_dipole_upper_bound", Estimate::exact(gff_laplace_exact(&op, &f, beta)?)));
        }
        "villain" => {
            if dom.kind() != Kind::Zero {
                return Err(invalid("villain sampling needs a zero-boundary domain").into());
            }
            let [a, b] = cfg.x.unwrap_or([dom.side() / 2, dom.side() / 2]);
            if a >= dom.side() || b >= dom.side() {
                return Err(invalid("x outside the box").into());
            }
            let sweeps = cfg.steps.unwrap_or(4000);
            let burn = cfg.burn_in.unwrap_or(sweeps / 10);
            let e = villain_estimate(&dom, beta, cfg.m_cut.unwrap_or(5), dom.index(a, b), seed, chains, sweeps, burn)?;
            rows.push(("cos_theta_x", e.cos));
            rows.push(("sin_theta_x", e.sin));
        }
        m => return Err(invalid(format!("unknown model {m:?}")).into()),
    }
    let l = dom.side().to_string();
    let out_rows = rows
        .into_iter()
        .map(|(obs, e)| vec![model.clone(), l.clone(), num(beta), obs.to_string(), num(e.mean), num(e.se), e.n.to_string()])
        .collect();
    Ok(csv_output(cfg, "sample", &["model", "L", "beta", "observable", "estimate", "se", "n"], out_rows, false))
}

/// Sides used for the empirical log-growth constant.
const D6_SIDES: [usize; 5] = [8, 16, 32, 64, 128];

fn green(cfg: &RunConfig) -> Result<Output, Failure> {
    let sides = cfg.sides.clone().unwrap_or_else(|| vec![4, 8, 16, 32]);
    let mut opt = GreenOptions::default();
    if let Some(t) = cfg.cg_tol {
        opt.cg_tol = t;
    }
    if let Some(c) = cfg.dense_cutoff {
        opt.dense_cutoff = c;
    }
    let d5 = d5_from_d6(empirical_d6(&D6_SIDES)?);
    let mut rows = Vec::new();
    let mut failed = false;
    for &l in &sides {
        let dom = LatticeDomain::new(Kind::Free, l).map_err(|e| invalid(format!("sides: {e}")))?;
        let op = GreenOperator::with_options(&dom, opt)?;
        let torus = PeriodicGreen::new(2 * l)?;
        for y0 in 0..l {
            for y1 in 0..l - 1 {
                let r = claim_green_lower(l, (y0, y1), d5, &op, &torus)?;
                failed |= r.lhs < r.bound - 1e-12;
                rows.push(vec![l.to_string(), y0.to_string(), y1.to_string(), num(r.lhs), num(r.bound), num(r.green_id2)]);
            }
        }
    }
    Ok(csv_output(cfg, "green", &["L", "y0", "y1", "lhs", "bound", "eqGreenId2"], rows, failed))
}

fn cover(cfg: &RunConfig) -> Result<Output, Failure> {
    let dom = cfg.domain()?;
    let rho = cfg.density(&dom)?;
    let cc = cfg.cover()?;
    let mc = MultiscaleCover::build(&rho, &dom, &cc)?;
    let rep = a_report(&mc, prop21_constants(&cc).d1);
    let scales: Vec<Value> = mc
        .scales
        .iter()
        .map(|s| json!({"k": s.k, "size": s.squares.len(), "separated": s.separated.len(), "certified": s.certified}))
        .collect();
    let failed = !(rep.lower_holds && rep.upper_holds);
    Ok(json_output(
        cfg,
        "cover",
        json!({"d": mc.d, "n": mc.n, "A": mc.a, "scales": scales, "doubling_conflicts": mc.doubling_conflicts, "bounds": rep}),
        failed,
    ))
}

/// Cap on dumped terms.
const DUMP_CAP: usize = 1_000_000;

fn expand(cfg: &RunConfig) -> Result<Output, Failure> {
    let dom = cfg.domain()?;
    let w = cfg.weights.as_ref().ok_or_else(|| invalid("missing weights"))?.build()?;
    let cc = cfg.cover()?;
    let weights = vec![w; dom.n()];
    let dump = cfg.dump.unwrap_or(0).min(DUMP_CAP);
    let rcfg = RenormConfig::new(cc);
    let (mut terms, mut members, mut neutral, mut charged, mut multi_charged, mut prop_fail) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut max_k, mut max_c, mut abs_mass) = (0.0f64, 0.0f64, 0.0f64);
    let mut claim43 = 0u64;
    let mut dumped = Vec::new();
    let site_terms = weights_to_density_mixture(&weights)?;
    for st in &site_terms {
        let (ts, stats) = run_renormalization(&dom, &st.sites, &rcfg)?;
        claim43 += stats.claim43_violations;
        for t in ts {
            terms += 1;
            let c = st.xi * t.c;
            max_c = max_c.max(c.abs());
            abs_mass += c.abs() * t.members.iter().map(|m| 1.0 + m.k.abs()).product::<f64>();
            let nc = t.members.iter().filter(|m| !m.rho.is_neutral()).count() as u64;
            members += t.members.len() as u64;
            charged += nc;
            neutral += t.members.len() as u64 - nc;
            multi_charged += (nc > 1) as u64;
            max_k = t.members.iter().fold(max_k, |a, m| a.max(m.k.abs()));
            let p = check_properties(&t.members, &dom, &cc);
            prop_fail += !(p.at_most_one_charged && p.separation && p.splitting) as u64;
            if dumped.len() < dump {
                let ms: Vec<Value> = t.members.iter().map(|m| json!({"density": m.rho.entries(), "K": m.k, "d": m.d})).collect();
                dumped.push(json!({"c": c, "members": ms}));
            }
        }
    }
    let mut payload = json!({
        "site_terms": site_terms.len(),
        "terms": terms,
        "max_abs_K": max_k,
        "max_abs_c": max_c,
        "abs_mass": abs_mass,
        "members": members,
        "neutral_members": neutral,
        "charged_members": charged,
        "ensembles_with_several_charged": multi_charged,
        "property_failures": prop_fail,
        "claim43_violations": claim43,
    });
    if dump > 0 {
        payload["dump"] = Value::Array(dumped);
    }
    Ok(json_output(cfg, "expand", payload, prop_fail > 0 || claim43 > 0))
}

fn spinwave(cfg: &RunConfig) -> Result<Output, Failure> {
    let dom = cfg.domain()?;
    let rho = cfg.density(&dom)?;
    let beta = cfg.beta()?;
    let cc = cfg.cover()?;
    if !rho.is_neutral() {
        return Err(invalid("spin waves need a neutral density").into());
    }
    let (sw, rep, fallback) = match spinwave_for_member(0, std::slice::from_ref(&rho), beta, &dom, &cc) {
        Ok((sw, rep, _)) => (sw, rep, None),
        Err(bkt_core::Error::PropertyViolation(msg)) => {
            let mc = MultiscaleCover::build(&rho, &dom, &cc)?;
            let (sw, rep) = assemble_spinwave(&rho, beta, &dom, &mc, &ComponentGeometry::empty(&dom, cc))?;
            (sw, rep, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    let failed = !rep.bound_holds || !rep.structural.all();
    Ok(json_output(cfg, "spinwave", json!({"spin_wave": sw, "report": rep, "geometry_fallback": fallback}), failed))
}

fn duality(cfg: &RunConfig) -> Result<Output, Failure> {
    let l = cfg.domain.as_ref().map(|d| d.l).ok_or_else(|| invalid("missing --L"))?;
    let beta = cfg.beta()?;
    let [x0, x1] = cfg.x.unwrap_or([0, 0]);
    let d = DualityOptions::default();
    let opt = DualityOptions {
        k_cut: cfg.k_cut.unwrap_or(d.k_cut),
        m_cut: cfg.m_cut.unwrap_or(d.m_cut),
        nodes: cfg.nodes.unwrap_or(d.nodes),
        seed: cfg.seed.unwrap_or(d.seed),
        chains: cfg.chains.unwrap_or(d.chains),
        sweeps: cfg.steps.unwrap_or(d.sweeps),
        burn: cfg.burn_in.unwrap_or(d.burn),
    };
    if x0 >= l || x1 >= l {
        return Err(invalid(format!("x = ({x0},{x1}) outside the L={l} box")).into());
    }
    let r = duality_check(l, beta, (x0, x1), &opt)?;
    let failed = !r.pass;
    Ok(json_output(cfg, "duality", serde_json::to_value(&r).expect("json"), failed))
}

fn verify(cfg: &RunConfig, timings: bool) -> Result<Output, Failure> {
    let suite: Suite = parse_json_arg("suite", &format!("{:?}", cfg.suite.as_deref().unwrap_or("all")))?;
    let profile: Profile = parse_json_arg("profile", &format!("{:?}", cfg.profile_name()))?;
    let seed = cfg.seed.unwrap_or(0);
    let mut reports = run_suite(suite, profile, seed)?;
    if !timings {
        reports = reports.iter().map(|r| r.without_runtime()).collect();
    }
    for r in &reports {
        eprintln!("{:<12} {:<48} margin={:.3e}", format!("{:?}", r.status).to_uppercase(), r.id, r.margin);
    }
    let count = |s: Status| reports.iter().filter(|r| r.status == s).count();
    let (pass, fail, report_only) = (count(Status::Pass), count(Status::Fail), count(Status::ReportOnly));
    let payload = json!({
        "suite": suite,
        "seed": seed,
        "passed": fail == 0,
        "counts": {"pass": pass, "fail": fail, "report_only": report_only},
        "reports": reports,
    });
    Ok(json_output(cfg, "verify", payload, fail > 0))
}
