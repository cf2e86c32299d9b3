//! Scenario files: JSON, `"schema": 1`.
//!
//! Parsing collects every unknown field and every semantic problem before
//! anything numeric runs, so one pass over a broken file reports all of it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use selmut::analysis::VERDICT_TOL;
use selmut::kernel::{blend_toward, directed_kernel, gaussian_grid_kernel, identity_kernel, uniform_kernel};
use selmut::measure::Atom;
use selmut::vitals::build_profile;
use selmut::{
    AtomicMeasure, CarryingProfile, IntegratorConfig, Logistic, MutationKernel, Ricker, StrategySpace, Tabulated,
    Vitals,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub space: SpaceSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analyses: AnalysesSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceSpec {
    Atoms(Vec<AtomSpec>),
    /// `n` atoms `q1..qn` at integer positions.
    Labeled { n: usize },
    Grid1d { lo: f64, hi: f64, n: usize },
    Grid2d { lo: [f64; 2], hi: [f64; 2], n: [usize; 2] },
}

#[derive(Debug, Clone, Deserialize)]
pub struct AtomSpec {
    pub id: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Ricker { kappa: Vec<f64>, eta: Vec<f64>, theta: f64 },
    Logistic { r: Vec<f64>, d: Vec<f64>, a: Vec<f64> },
    /// CSV with columns `s,atom_id,B,D`.
    Tabulated { csv: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Identity,
    Uniform,
    Directed {
        target: String,
        /// Defaults to the fittest atoms of the model.
        #[serde(default)]
        optimal: Option<Vec<String>>,
        inner: f64,
        outer: f64,
    },
    Gaussian { sigma: f64 },
    Rows(Vec<Vec<f64>>),
    /// Headerless N x N CSV.
    Csv { path: PathBuf },
    Blend { base: Box<KernelSpec>, target: Box<KernelSpec>, eps: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpec {
    Weights(Vec<f64>),
    Uniform { total: f64 },
    Dirac { atom: String, mass: f64 },
    /// Random positive weights scaled to `total`; driven by `--seed`.
    Random { total: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AnalysesSpec {
    #[serde(default)]
    pub permanence: bool,
    #[serde(default)]
    pub persistence: Option<PersistenceSpec>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSpec>,
    #[serde(default)]
    pub ass: Option<AssSpec>,
    #[serde(default)]
    pub ratio: Option<RatioSpec>,
    #[serde(default)]
    pub integral_representation: bool,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumSpec>,
    #[serde(default)]
    pub continuation: Option<ContinuationSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PersistenceSpec {
    pub set: Vec<String>,
    pub eps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovSpec {
    Total,
    Volterra {
        target: String,
        #[serde(default)]
        optimal: Option<Vec<String>>,
        /// Chosen automatically when absent.
        #[serde(default)]
        c: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AssSpec {
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RatioSpec {
    pub u: Vec<String>,
    pub v: Vec<String>,
    pub xi: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EquilibriumSpec {
    /// Starting weights; the scenario's initial measure when absent.
    #[serde(default)]
    pub x_init: Option<Vec<f64>>,
    #[serde(default)]
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ContinuationSpec {
    #[serde(default)]
    pub base: KernelSpec,
    #[serde(default = "uniform_spec")]
    pub target: KernelSpec,
    pub eps: Vec<f64>,
    /// Starting weights; `k_max` on the unique fittest atom when absent.
    #[serde(default)]
    pub x_init: Option<Vec<f64>>,
    #[serde(default)]
    pub newton_tol: Option<f64>,
}

fn uniform_spec() -> KernelSpec {
    KernelSpec::Uniform
}

/// Parses scenario JSON, reporting syntax errors and all unknown fields.
pub fn parse(text: &str) -> Result<Scenario, Vec<String>> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    // serde_ignored marks `Option` layers with `?`; drop them from the path.
    let parsed: Result<Scenario, _> =
        serde_ignored::deserialize(de, |path| unknown.push(path.to_string().replace(".?", "").replace("?.", "")));
    let mut errors: Vec<String> = unknown.into_iter().map(|p| format!("unknown field `{p}`")).collect();
    match parsed {
        Ok(s) if errors.is_empty() => Ok(s),
        Ok(_) => Err(errors),
        Err(e) => {
            errors.push(format!("malformed scenario: {e}"));
            Err(errors)
        }
    }
}

pub fn parse_value(value: &serde_json::Value) -> Result<Scenario, Vec<String>> {
    parse(&value.to_string())
}

pub fn load(path: &Path) -> Result<(Scenario, serde_json::Value), Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| vec![format!("malformed JSON in {}: {e}", path.display())])?;
    Ok((parse(&text)?, value))
}

#[derive(Debug, Clone)]
pub enum LyapunovPlan {
    Total,
    Volterra { target: usize, optimal: Vec<usize>, c: Option<f64> },
}

#[derive(Debug, Clone)]
pub struct EquilibriumPlan {
    pub x_init: AtomicMeasure,
    pub newton_tol: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationPlan {
    pub base: MutationKernel,
    pub target: MutationKernel,
    pub eps: Vec<f64>,
    pub x_init: AtomicMeasure,
    pub newton_tol: f64,
}

/// Requested analyses with atom ids resolved to indices.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    pub permanence: bool,
    pub persistence: Option<(Vec<usize>, f64)>,
    pub lyapunov: Option<LyapunovPlan>,
    pub ass: Option<f64>,
    pub ratio: Option<(Vec<usize>, Vec<usize>, f64)>,
    pub integral_representation: bool,
    pub equilibrium: Option<EquilibriumPlan>,
    pub continuation: Option<ContinuationPlan>,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Built {
    pub name: String,
    pub space: Arc<StrategySpace>,
    pub model: Vitals,
    pub profile: CarryingProfile,
    pub kernel: MutationKernel,
    pub initial: AtomicMeasure,
    pub integrator: IntegratorConfig,
    pub plan: Plan,
}

struct Ctx<'a> {
    base_dir: &'a Path,
    errors: Vec<String>,
}

impl Ctx<'_> {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

fn atom_index(ctx: &mut Ctx, space: &StrategySpace, id: &str, what: &str) -> Option<usize> {
    let idx = space.index_of(id);
    if idx.is_none() {
        ctx.err(format!("{what}: unknown atom id `{id}`"));
    }
    idx
}

fn atom_set(ctx: &mut Ctx, space: &StrategySpace, ids: &[String], what: &str) -> Option<Vec<usize>> {
    if ids.is_empty() {
        ctx.err(format!("{what}: atom list is empty"));
        return None;
    }
    let resolved: Vec<Option<usize>> = ids.iter().map(|id| atom_index(ctx, space, id, what)).collect();
    resolved.into_iter().collect()
}

fn weights_measure(ctx: &mut Ctx, space: &Arc<StrategySpace>, w: &[f64], what: &str) -> Option<AtomicMeasure> {
    if w.len() != space.len() {
        ctx.err(format!("{what}: {} weights for {} atoms", w.len(), space.len()));
        return None;
    }
    AtomicMeasure::new(space.clone(), w.to_vec()).map_err(|e| ctx.err(format!("{what}: {e}"))).ok()
}

impl Scenario {
    /// Validates everything and constructs the numeric objects. `base_dir`
    /// anchors relative file paths; `seed` drives random initial measures.
    pub fn build(&self, base_dir: &Path, seed: u64) -> Result<Built, Vec<String>> {
        let mut ctx = Ctx { base_dir, errors: Vec::new() };
        if self.schema != SCHEMA_VERSION {
            ctx.err(format!("schema: expected {SCHEMA_VERSION}, got {}", self.schema));
        }

        let Some(space) = self.build_space(&mut ctx) else {
            return Err(ctx.errors);
        };
        let model = self.build_model(&mut ctx, &space);
        let profile = model.as_ref().and_then(|m| {
            build_profile(m, &space, None).map_err(|e| ctx.err(format!("model: {e}"))).ok()
        });
        let kernel = build_kernel(&mut ctx, &self.kernel, &space, profile.as_ref(), "kernel");
        let initial = self.build_initial(&mut ctx, &space, seed);
        if let Err(e) = self.integrator.validate() {
            ctx.err(format!("integrator: {e}"));
        }
        let plan = self.build_plan(&mut ctx, &space, profile.as_ref(), kernel.as_ref(), initial.as_ref());

        match (model, profile, kernel, initial) {
            (Some(model), Some(profile), Some(kernel), Some(initial)) if ctx.errors.is_empty() => Ok(Built {
                name: self.name.clone().unwrap_or_else(|| "scenario".into()),
                space,
                model,
                profile,
                kernel,
                initial,
                integrator: self.integrator,
                plan,
            }),
            _ => Err(ctx.errors),
        }
    }

    fn build_space(&self, ctx: &mut Ctx) -> Option<Arc<StrategySpace>> {
        let built = match &self.space {
            SpaceSpec::Atoms(atoms) => StrategySpace::new(
                atoms.iter().map(|a| Atom { id: a.id.clone(), coords: a.coords.clone() }).collect(),
            ),
            SpaceSpec::Labeled { n } => StrategySpace::labeled(*n),
            SpaceSpec::Grid1d { lo, hi, n } => StrategySpace::grid_1d(*lo, *hi, *n),
            SpaceSpec::Grid2d { lo, hi, n } => {
                StrategySpace::grid_2d((lo[0], lo[1]), (hi[0], hi[1]), (n[0], n[1]))
            }
        };
        built.map(Arc::new).map_err(|e| ctx.err(format!("space: {e}"))).ok()
    }

    fn build_model(&self, ctx: &mut Ctx, space: &StrategySpace) -> Option<Vitals> {
        let n = space.len();
        let check_len = |ctx: &mut Ctx, name: &str, len: usize| {
            if len != n {
                ctx.err(format!("model: `{name}` has {len} entries for {n} atoms"));
            }
        };
        let model = match &self.model {
            ModelSpec::Ricker { kappa, eta, theta } => {
                check_len(ctx, "kappa", kappa.len());
                check_len(ctx, "eta", eta.len());
                Ricker::new(kappa.clone(), eta.clone(), *theta).map(Vitals::Ricker)
            }
            ModelSpec::Logistic { r, d, a } => {
                check_len(ctx, "r", r.len());
                check_len(ctx, "d", d.len());
                check_len(ctx, "a", a.len());
                Logistic::new(r.clone(), d.clone(), a.clone()).map(Vitals::Logistic)
            }
            ModelSpec::Tabulated { csv } => Tabulated::from_csv_path(ctx.resolve(csv), space).map(Vitals::Tabulated),
        };
        match model {
            Ok(m) if selmut::RateModel::n_atoms(&m) == n => Some(m),
            Ok(_) => None,
            Err(e) => {
                ctx.err(format!("model: {e}"));
                None
            }
        }
    }

    fn build_initial(&self, ctx: &mut Ctx, space: &Arc<StrategySpace>, seed: u64) -> Option<AtomicMeasure> {
        let positive_total = |ctx: &mut Ctx, total: f64| {
            let ok = total.is_finite() && total >= 0.0;
            if !ok {
                ctx.err(format!("initial: total must be finite and nonnegative, got {total}"));
            }
            ok
        };
        match &self.initial {
            InitialSpec::Weights(w) => weights_measure(ctx, space, w, "initial"),
            InitialSpec::Uniform { total } => {
                positive_total(ctx, *total).then(|| {
                    let n = space.len();
                    AtomicMeasure::new(space.clone(), vec![total / n as f64; n]).expect("nonnegative")
                })
            }
            InitialSpec::Dirac { atom, mass } => {
                let q = atom_index(ctx, space, atom, "initial");
                let ok = positive_total(ctx, *mass);
                q.filter(|_| ok).map(|q| AtomicMeasure::dirac(space.clone(), q, *mass).expect("valid"))
            }
            InitialSpec::Random { total } => positive_total(ctx, *total).then(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let raw: Vec<f64> = (0..space.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                AtomicMeasure::new(space.clone(), raw.into_iter().map(|w| w * total / sum).collect())
                    .expect("nonnegative")
            }),
        }
    }

    fn build_plan(
        &self,
        ctx: &mut Ctx,
        space: &Arc<StrategySpace>,
        profile: Option<&CarryingProfile>,
        kernel: Option<&MutationKernel>,
        initial: Option<&AtomicMeasure>,
    ) -> Plan {
        let a = &self.analyses;
        let mut plan = Plan { permanence: a.permanence, ..Default::default() };

        if let Some(p) = &a.persistence {
            if !(p.eps > 0.0 && p.eps.is_finite()) {
                ctx.err(format!("analyses.persistence: eps must be positive, got {}", p.eps));
            }
            if let Some(set) = atom_set(ctx, space, &p.set, "analyses.persistence") {
                plan.persistence = Some((set, p.eps));
            }
        }

        if let Some(l) = &a.lyapunov {
            plan.lyapunov = match l {
                LyapunovSpec::Total => Some(LyapunovPlan::Total),
                LyapunovSpec::Volterra { target, optimal, c } => {
                    let t = atom_index(ctx, space, target, "analyses.lyapunov");
                    let opt = match optimal {
                        Some(ids) => atom_set(ctx, space, ids, "analyses.lyapunov"),
                        None => profile.map(|p| p.optimal.clone()),
                    };
                    if let Some(c) = c {
                        if !(*c > 0.0) {
                            ctx.err(format!("analyses.lyapunov: c must be positive, got {c}"));
                        }
                    }
                    match (t, opt) {
                        (Some(t), Some(opt)) => {
                            if !opt.contains(&t) {
                                ctx.err("analyses.lyapunov: target must belong to the optimal set");
                            }
                            Some(LyapunovPlan::Volterra { target: t, optimal: opt, c: *c })
                        }
                        _ => None,
                    }
                }
            };
        }

        if let Some(ass) = &a.ass {
            let tol = ass.tol.unwrap_or(VERDICT_TOL);
            if !(tol > 0.0) {
                ctx.err(format!("analyses.ass: tol must be positive, got {tol}"));
            }
            plan.ass = Some(tol);
        }

        if let Some(r) = &a.ratio {
            if !(r.xi > 0.0 && r.xi.is_finite()) {
                ctx.err(format!("analyses.ratio: xi must be positive, got {}", r.xi));
            }
            let u = atom_set(ctx, space, &r.u, "analyses.ratio.u");
            let v = atom_set(ctx, space, &r.v, "analyses.ratio.v");
            if let (Some(u), Some(v)) = (u, v) {
                if let Some(init) = initial {
                    if v.iter().map(|&q| init.weights()[q]).sum::<f64>() <= 0.0 {
                        ctx.err("analyses.ratio: initial mass on V must be positive");
                    }
                }
                plan.ratio = Some((u, v, r.xi));
            }
        }

        if a.integral_representation {
            if let Some(k) = kernel {
                if !k.is_identity() {
                    ctx.err(
                        "analyses.integral_representation: precondition violated: \
                         the integral representation needs the identity kernel (pure selection)",
                    );
                }
            }
            plan.integral_representation = true;
        }

        let newton_tol = |ctx: &mut Ctx, tol: Option<f64>, what: &str| {
            let tol = tol.unwrap_or(DEFAULT_NEWTON_TOL);
            if !(tol > 0.0) {
                ctx.err(format!("{what}: newton_tol must be positive, got {tol}"));
            }
            tol
        };

        if let Some(e) = &a.equilibrium {
            let tol = newton_tol(ctx, e.newton_tol, "analyses.equilibrium");
            let x = match &e.x_init {
                Some(w) => weights_measure(ctx, space, w, "analyses.equilibrium.x_init"),
                None => initial.cloned(),
            };
            plan.equilibrium = x.map(|x_init| EquilibriumPlan { x_init, newton_tol: tol });
        }

        if let Some(c) = &a.continuation {
            let tol = newton_tol(ctx, c.newton_tol, "analyses.continuation");
            if c.eps.is_empty() {
                ctx.err("analyses.continuation: eps list is empty");
            }
            if c.eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
                ctx.err("analyses.continuation: eps values must lie in [0, 1]");
            }
            if c.eps.windows(2).any(|w| w[1] >= w[0]) {
                ctx.err("analyses.continuation: eps values must be strictly decreasing");
            }
            let base = build_kernel(ctx, &c.base, space, profile, "analyses.continuation.base");
            let target = build_kernel(ctx, &c.target, space, profile, "analyses.continuation.target");
            let x = match (&c.x_init, profile) {
                (Some(w), _) => weights_measure(ctx, space, w, "analyses.continuation.x_init"),
                (None, Some(p)) => match p.unique_optimum() {
                    Some(q) if p.k_max > 0.0 => Some(AtomicMeasure::dirac(space.clone(), q, p.k_max).expect("valid")),
                    _ => {
                        ctx.err("analyses.continuation: no unique fittest atom; give x_init explicitly");
                        None
                    }
                },
                (None, None) => None,
            };
            if let (Some(base), Some(target), Some(x_init)) = (base, target, x) {
                plan.continuation = Some(ContinuationPlan { base, target, eps: c.eps.clone(), x_init, newton_tol: tol });
            }
        }
        plan
    }
}

fn build_kernel(
    ctx: &mut Ctx,
    spec: &KernelSpec,
    space: &Arc<StrategySpace>,
    profile: Option<&CarryingProfile>,
    what: &str,
) -> Option<MutationKernel> {
    let n = space.len();
    let built = match spec {
        KernelSpec::Identity => Ok(identity_kernel(space.clone())),
        KernelSpec::Uniform => Ok(uniform_kernel(space.clone())),
        KernelSpec::Directed { target, optimal, inner, outer } => {
            let t = atom_index(ctx, space, target, what);
            let opt = match optimal {
                Some(ids) => atom_set(ctx, space, ids, what),
                None => profile.map(|p| p.optimal.clone()),
            };
            match (t, opt) {
                (Some(t), Some(opt)) => directed_kernel(space.clone(), t, &opt, *inner, *outer),
                _ => return None,
            }
        }
        KernelSpec::Gaussian { sigma } => gaussian_grid_kernel(space.clone(), *sigma),
        KernelSpec::Rows(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                ctx.err(format!("{what}: kernel must be {n} x {n} to match the space"));
                return None;
            }
            MutationKernel::from_rows(space.clone(), rows.clone())
        }
        KernelSpec::Csv { path } => match std::fs::File::open(ctx.resolve(path)) {
            Ok(f) => MutationKernel::from_csv(space.clone(), f),
            Err(e) => {
                ctx.err(format!("{what}: cannot open {}: {e}", path.display()));
                return None;
            }
        },
        KernelSpec::Blend { base, target, eps } => {
            let b = build_kernel(ctx, base, space, profile, &format!("{what}.base"));
            let t = build_kernel(ctx, target, space, profile, &format!("{what}.target"));
            match (b, t) {
                (Some(b), Some(t)) => blend_toward(&b, &t, *eps),
                _ => return None,
            }
        }
    };
    built.map_err(|e| ctx.err(format!("{what}: {e}"))).ok()
}
