//! The five commands. Each returns a report; the binary prints it and
//! maps failures to exit codes.

use std::fmt;
use std::fs;
use std::path::Path;

use deepfosls::admissible::{batch_loss, batch_loss_grad, continuous_loss_ref, mc_consistency};
use deepfosls::admissible::{McReport, TripleField, TripleNets};
use deepfosls::hnn::{chi_hidden_layers, chi_hidden_neurons, in_simplex, simplex_chi_net, Simplex};
use deepfosls::netcore::checkpoint;
use deepfosls::optim::{train as train_loop, LogRecord};
use deepfosls::oracle::{fd_gradient, psor_1d, Grid1D, PsorOptions, PsorSolution};
use deepfosls::problems::{l2_error_mc, triple_error_mc, Problem};
use deepfosls::stats::pairwise_sum;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{write_table, LogWriter};
use crate::{CliError, TrainConfig};

const NET_NAMES: [&str; 3] = ["v", "psi", "eta"];

fn checkpoint_path(out: &Path, name: &str) -> std::path::PathBuf {
    out.join("checkpoints").join(format!("{name}.json"))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Rows written to `train_log.csv`, header excluded.
    pub rows: usize,
    pub last: Option<LogRecord>,
}

/// Train from scratch and write the log, checkpoints and slice into `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut resolved = cfg.clone();
    resolved.output_dir = out.to_path_buf();
    fs::write(out.join("config.json"), resolved.to_json())?;

    let problem = cfg.problem()?;
    let lift = cfg.lift();
    let nets = cfg.init_nets(problem.domain().dim())?;
    let mut log = LogWriter::create(out)?;
    let mut io_err = None;
    let mut rows = 0;
    let result = train_loop(problem.as_ref(), &lift, nets, &cfg.settings(), |r| {
        rows += 1;
        if io_err.is_none() {
            io_err = log.row(r).err();
        }
    });
    log.finish()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = match result {
        Ok(o) => o,
        Err(deepfosls::Error::NonFinite { iteration, term }) => {
            let diag = serde_json::json!({ "iteration": iteration, "term": term });
            fs::write(out.join("diagnostic.json"), diag.to_string())?;
            return Err(CliError::Numeric { iteration, term });
        }
        Err(e) => return Err(e.into()),
    };
    let nets = &outcome.nets;
    for (name, net) in NET_NAMES.iter().zip([&nets.v, &nets.psi, &nets.eta]) {
        checkpoint::save(checkpoint_path(out, name), name, net)?;
    }
    write_slice(cfg, problem.as_ref(), nets, &out.join("slice_data.csv"))?;
    Ok(TrainReport {
        rows,
        last: outcome.history.last().copied(),
    })
}

/// Read the three checkpoints written by [`train`].
pub fn load_nets(out: &Path) -> Result<TripleNets, CliError> {
    let mut nets = Vec::with_capacity(3);
    for name in NET_NAMES {
        let path = checkpoint_path(out, name);
        let (stored, net) = checkpoint::load(&path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if stored != name {
            return Err(CliError::Config(format!(
                "{} holds network `{stored}`",
                path.display()
            )));
        }
        nets.push(net);
    }
    let eta = nets.pop().expect("three nets");
    let psi = nets.pop().expect("three nets");
    let v = nets.pop().expect("three nets");
    Ok(TripleNets::new(v, psi, eta)?)
}

/// Sample `u` on the configured slice. Points outside the domain get NaN.
pub fn write_slice(
    cfg: &TrainConfig,
    problem: &dyn Problem,
    nets: &TripleNets,
    path: &Path,
) -> Result<(), CliError> {
    let dom = problem.domain();
    let d = dom.dim();
    let s = &cfg.slice;
    let (lo, hi) = dom.bounding_box();
    let base = if s.fixed.is_empty() { vec![0.0; d] } else { s.fixed.clone() };
    let res = s.resolution;
    let grid = |axis: usize, k: usize| lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (res - 1) as f64;
    let count = res.pow(s.axes.len() as u32);
    let lift = cfg.lift();

    let mut points = Vec::with_capacity(count);
    for idx in 0..count {
        let mut x = base.clone();
        let (k0, k1) = (idx / res, idx % res);
        match s.axes[..] {
            [a] => x[a] = grid(a, idx),
            [a, b] => {
                x[a] = grid(a, k0);
                x[b] = grid(b, k1);
            }
            _ => unreachable!("validated slice"),
        }
        points.push(x);
    }
    let inside: Vec<f64> = points
        .iter()
        .filter(|x| dom.in_closure(x))
        .flatten()
        .copied()
        .collect();
    let mut lifted = nets.lift_batch(problem, &lift, &inside, d)?.into_iter();
    let exact = problem.has_exact();

    let mut rows = Vec::with_capacity(count);
    for x in &points {
        let mut row: Vec<f64> = s.axes.iter().map(|&a| x[a]).collect();
        let (u, ue) = if dom.in_closure(x) {
            let ev = lifted.next().expect("one lift per inside point");
            let ue = problem.exact(x).map_or(f64::NAN, |e| e.u);
            (ev.u, ue)
        } else {
            (f64::NAN, f64::NAN)
        };
        row.push(u);
        row.push(problem.obstacle(x).0);
        if exact {
            row.push(ue);
        }
        rows.push(row);
    }
    let mut header: Vec<String> = s.axes.iter().map(|a| format!("x{a}")).collect();
    header.extend(["u".to_string(), "g".to_string()]);
    if exact {
        header.push("u_exact".into());
    }
    write_table(path, &header.join(","), &rows)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Monte-Carlo estimate of the continuous loss and its standard error.
    pub loss: f64,
    pub loss_se: f64,
    pub l2_error: Option<f64>,
    pub relative_l2_error: Option<f64>,
    pub triple_error: Option<f64>,
    /// L² distance to a fine projected-SOR solution (1D problems with zero
    /// boundary obstacle only).
    pub psor_l2_error: Option<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        writeln!(f, "loss            {:.6e} +- {:.1e}", self.loss, self.loss_se)?;
        writeln!(f, "l2 error        {}", show(self.l2_error))?;
        writeln!(f, "relative l2     {}", show(self.relative_l2_error))?;
        writeln!(f, "triple error    {}", show(self.triple_error))?;
        write!(f, "l2 vs psor      {}", show(self.psor_l2_error))
    }
}

/// Evaluate trained checkpoints in `out` on the eval sample.
pub fn eval(cfg: &TrainConfig, out: &Path) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    if cfg.eval_points < 10_000 {
        return Err(CliError::Config(format!(
            "eval needs eval_points >= 10000, got {}",
            cfg.eval_points
        )));
    }
    let problem = cfg.problem()?;
    let nets = load_nets(out)?;
    if nets.dim() != problem.domain().dim() {
        return Err(CliError::Config(format!(
            "checkpoints take {} inputs, {} is {}-dimensional",
            nets.dim(),
            cfg.benchmark,
            problem.domain().dim()
        )));
    }
    let report = evaluate(cfg, problem.as_ref(), &nets)?;
    fs::write(
        out.join("eval.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

pub fn evaluate(
    cfg: &TrainConfig,
    problem: &dyn Problem,
    nets: &TripleNets,
) -> Result<EvalReport, CliError> {
    let lift = cfg.lift();
    let (n, seed) = (cfg.eval_points, cfg.seeds.eval);
    let (loss, loss_se) = continuous_loss_ref(problem, &lift, nets, n, seed)?;
    let (mut l2_error, mut relative_l2_error, mut triple_error) = (None, None, None);
    if problem.has_exact() {
        let e = l2_error_mc(problem, &lift, nets, n, seed)?;
        let norm = l2_norm_mc(problem, |x| problem.exact(x).map_or(0.0, |p| p.u), n, seed);
        l2_error = Some(e);
        relative_l2_error = Some(e / norm);
        triple_error = Some(triple_error_mc(problem, &lift, nets, n, seed)?.total);
    }
    let psor_l2_error = match psor_reference(problem)? {
        Some(sol) => Some(l2_distance_mc(problem, nets, &lift, |x| sol.interpolate(x[0]), n, seed)?),
        None => None,
    };
    Ok(EvalReport {
        loss,
        loss_se,
        l2_error,
        relative_l2_error,
        triple_error,
        psor_l2_error,
    })
}

fn l2_norm_mc(problem: &dyn Problem, f: impl Fn(&[f64]) -> f64, n: usize, seed: u64) -> f64 {
    let dom = problem.domain();
    let pts = dom.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), n);
    let sq: Vec<f64> = pts.iter().map(|x| f(x).powi(2)).collect();
    (dom.volume() / n as f64 * pairwise_sum(&sq)).sqrt()
}

/// `‖u_Θ - r‖` over the eval sample for a reference function `r`.
pub fn l2_distance_mc(
    problem: &dyn Problem,
    nets: &TripleNets,
    lift: &deepfosls::admissible::LiftConfig,
    reference: impl Fn(&[f64]) -> f64,
    n: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let dom = problem.domain();
    let pts = dom.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), n);
    let evs = nets.lift_batch(problem, lift, pts.coords(), pts.dim())?;
    let sq: Vec<f64> = pts
        .iter()
        .zip(&evs)
        .map(|(x, ev)| (ev.u - reference(x)).powi(2))
        .collect();
    Ok((dom.volume() / n as f64 * pairwise_sum(&sq)).sqrt())
}

/// Cells of the reference grid.
pub const PSOR_CELLS: usize = 1000;

/// Projected-SOR solution on a uniform grid for 1D problems whose obstacle
/// is non-positive at both endpoints; `None` otherwise.
pub fn psor_reference(problem: &dyn Problem) -> Result<Option<PsorSolution>, CliError> {
    let dom = problem.domain();
    if dom.dim() != 1 {
        return Ok(None);
    }
    let (lo, hi) = dom.bounding_box();
    let (a, b) = (lo[0], hi[0]);
    if problem.obstacle(&[a]).0 > 0.0 || problem.obstacle(&[b]).0 > 0.0 {
        return Ok(None);
    }
    let grid = Grid1D::new(a, b, PSOR_CELLS - 1)?;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / PSOR_CELLS as f64).sin());
    let opts = PsorOptions {
        omega,
        tol: 1e-13,
        ..PsorOptions::default()
    };
    let sol = psor_1d(&grid, |x| problem.source(&[x]), |x| problem.obstacle(&[x]).0, opts)?;
    Ok(Some(sol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum NetCheck {
    Checked {
        max_rel_err: f64,
        coords: usize,
        total: usize,
    },
    /// Step activations have no classical gradient.
    SkippedSte,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub nets: Vec<(String, NetCheck)>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.nets
            .iter()
            .filter_map(|(_, c)| match c {
                NetCheck::Checked { max_rel_err, .. } => Some(*max_rel_err),
                NetCheck::SkippedSte => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tol
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in &self.nets {
            match c {
                NetCheck::Checked {
                    max_rel_err,
                    coords,
                    total,
                } => writeln!(
                    f,
                    "{name:<4} max rel err {max_rel_err:.3e} ({coords} of {total} parameters)"
                )?,
                NetCheck::SkippedSte => writeln!(f, "{name:<4} skipped (STE)")?,
            }
        }
        let verdict = if self.passed() { "ok" } else { "FAILED" };
        write!(f, "tolerance {:.0e}: {verdict}", self.tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub points: usize,
    pub step: f64,
    pub tol: f64,
    /// Largest number of parameters checked per network.
    pub max_coords: usize,
    /// Perturb the analytic gradient, to exercise the failure path.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 32,
            step: 1e-5,
            tol: 1e-4,
            max_coords: 500,
            corrupt: false,
        }
    }
}

/// Compare `batch_loss_grad` with central differences at the initial
/// parameters.
pub fn gradcheck(cfg: &TrainConfig, opts: GradcheckOptions) -> Result<GradcheckReport, CliError> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let lift = cfg.lift();
    let nets = cfg.init_nets(problem.domain().dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.sampling);
    let pts = problem.domain().sample_uniform(&mut rng, opts.points);
    let mut lg = batch_loss_grad(problem.as_ref(), &lift, &nets, &pts)?;
    if opts.corrupt {
        lg.v[0] += 1e-2 * lg.v.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    }
    let steps = [cfg.nets.v.has_step(), cfg.nets.psi.has_step(), cfg.nets.eta.has_step()];
    let mut out = Vec::with_capacity(3);
    for which in 0..3 {
        let name = NET_NAMES[which].to_string();
        if steps[which] {
            out.push((name, NetCheck::SkippedSte));
            continue;
        }
        let analytic = [&lg.v, &lg.psi, &lg.eta][which];
        let total = analytic.len();
        let mut idx: Vec<usize> = if total <= opts.max_coords {
            (0..total).collect()
        } else {
            index::sample(&mut rng, total, opts.max_coords).into_vec()
        };
        idx.sort_unstable();
        let mut work = nets.clone();
        let theta0: Vec<f64> = idx.iter().map(|&i| params_of(&nets, which)[i]).collect();
        let fd = fd_gradient(
            |sub| {
                let p = params_of_mut(&mut work, which);
                for (&i, &s) in idx.iter().zip(sub) {
                    p[i] = s;
                }
                batch_loss(problem.as_ref(), &lift, &work, &pts).unwrap_or(f64::NAN)
            },
            &theta0,
            opts.step,
        )?;
        let picked: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
        let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
        let err = picked
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        out.push((
            name,
            NetCheck::Checked {
                max_rel_err: if err.is_nan() { f64::INFINITY } else { err },
                coords: idx.len(),
                total,
            },
        ));
    }
    Ok(GradcheckReport { nets: out, tol: opts.tol })
}

fn params_of(nets: &TripleNets, which: usize) -> &[f64] {
    match which {
        0 => nets.v.params().as_slice(),
        1 => nets.psi.params().as_slice(),
        _ => nets.eta.params().as_slice(),
    }
}

fn params_of_mut(nets: &mut TripleNets, which: usize) -> &mut [f64] {
    match which {
        0 => nets.v.params_mut(),
        1 => nets.psi.params_mut(),
        _ => nets.eta.params_mut(),
    }
}

/// Accepted range of the fitted slope.
pub const MC_SLOPE_BAND: (f64, f64) = (-0.6, -0.4);

#[derive(Debug, Clone, PartialEq)]
pub struct MccheckReport {
    pub mc: McReport,
}

impl MccheckReport {
    pub fn passed(&self) -> bool {
        match self.mc.slope {
            None => true,
            Some(s) => (MC_SLOPE_BAND.0..=MC_SLOPE_BAND.1).contains(&s),
        }
    }
}

impl fmt::Display for MccheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.mc;
        writeln!(f, "{:>8} {:>14} {:>12}", "N", "mean", "std")?;
        for i in 0..m.sizes.len() {
            writeln!(f, "{:>8} {:>14.6e} {:>12.4e}", m.sizes[i], m.means[i], m.stds[i])?;
        }
        match m.slope {
            None => write!(f, "zero variance: integrand is deterministic (exact)"),
            Some(s) => {
                let verdict = if self.passed() { "ok" } else { "FAILED" };
                write!(
                    f,
                    "slope {s:.4} (band [{}, {}]): {verdict}",
                    MC_SLOPE_BAND.0, MC_SLOPE_BAND.1
                )
            }
        }
    }
}

/// Spread of the batch loss at the initial parameters.
pub fn mccheck(cfg: &TrainConfig, sizes: &[usize], repeats: usize) -> Result<MccheckReport, CliError> {
    cfg.validate()?;
    if sizes.len() < 3 {
        return Err(CliError::Config(format!(
            "mccheck needs at least 3 batch sizes, got {}",
            sizes.len()
        )));
    }
    let problem = cfg.problem()?;
    let nets = cfg.init_nets(problem.domain().dim())?;
    let mc = mc_consistency(
        problem.as_ref(),
        &cfg.lift(),
        &nets,
        sizes,
        repeats,
        cfg.seeds.sampling,
    )?;
    Ok(MccheckReport { mc })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiReport {
    pub dim: usize,
    pub points: usize,
    pub agreement: f64,
    /// Disagreements farther than the band from every facet.
    pub off_band_mismatches: usize,
    pub hidden_layers: usize,
    pub hidden_neurons: usize,
    pub expected_layers: usize,
    pub expected_neurons: usize,
}

/// Facet band in which a disagreement is put down to rounding.
pub const CHI_BAND: f64 = 1e-9;
pub const CHI_AGREEMENT: f64 = 0.999;

impl ChiReport {
    pub fn passed(&self) -> bool {
        self.agreement >= CHI_AGREEMENT
            && self.off_band_mismatches == 0
            && self.hidden_layers == self.expected_layers
            && self.hidden_neurons == self.expected_neurons
    }
}

impl fmt::Display for ChiReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dimension        {}", self.dim)?;
        writeln!(
            f,
            "agreement        {:.4}% of {} points",
            100.0 * self.agreement,
            self.points
        )?;
        writeln!(f, "off-band misses  {}", self.off_band_mismatches)?;
        writeln!(
            f,
            "hidden layers    {} (expected {})",
            self.hidden_layers, self.expected_layers
        )?;
        writeln!(
            f,
            "hidden neurons   {} (expected {})",
            self.hidden_neurons, self.expected_neurons
        )?;
        write!(f, "{}", if self.passed() { "ok" } else { "FAILED" })
    }
}

/// Random simplex with vertices in `[-1, 1]^d`, rejecting nearly flat ones.
pub fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Simplex {
    let factorial: f64 = (1..=d).map(|k| k as f64).product();
    loop {
        let verts: Vec<Vec<f64>> = (0..=d)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        if let Ok(s) = Simplex::new(verts) {
            if s.volume() * factorial > 1e-2 {
                return s;
            }
        }
    }
}

/// Compare the constructed characteristic network of a random simplex with
/// the barycentric test on points around it.
pub fn chidemo(d: usize, seed: u64, points: usize) -> Result<ChiReport, CliError> {
    if d < 1 {
        return Err(CliError::Config("chidemo needs d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_simplex(&mut rng, d);
    let net = simplex_chi_net(&s)?;
    let facets: Vec<(Vec<f64>, f64)> = (0..=d).map(|i| s.facet(i)).collect();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in s.vertices() {
        for j in 0..d {
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    for j in 0..d {
        let pad = 0.5 * (hi[j] - lo[j]);
        lo[j] -= pad;
        hi[j] += pad;
    }
    let (mut agree, mut off_band) = (0, 0);
    for _ in 0..points {
        let x: Vec<f64> = (0..d).map(|j| rng.random_range(lo[j]..hi[j])).collect();
        let want = if in_simplex(&s, &x)? { 1.0 } else { 0.0 };
        if net.eval(&x)?[0] == want {
            agree += 1;
        } else {
            let near = facets.iter().any(|(n, c)| {
                (n.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + c).abs() <= CHI_BAND
            });
            if !near {
                off_band += 1;
            }
        }
    }
    Ok(ChiReport {
        dim: d,
        points,
        agreement: agree as f64 / points as f64,
        off_band_mismatches: off_band,
        hidden_layers: net.hidden_layers(),
        hidden_neurons: net.hidden_neurons(),
        expected_layers: chi_hidden_layers(d),
        expected_neurons: chi_hidden_neurons(d),
    })
}
