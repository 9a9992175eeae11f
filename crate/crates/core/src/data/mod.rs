//! Dataset factory: coefficient tables, sample construction for every plan,
//! noise augmentation, n-shot subsampling, and binary persistence.

pub mod io;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pde::{
    evolve_linear, mean_project, residual, solve_darcy, solve_steady, CoefficientSet, SystemTag,
    TimeSpec,
};
use crate::seeds::{self, stream};
use crate::spectral::{GridSpec, ScalarField2D};
use sampling::{
    calibrate_psi, sample_diffusion, sample_permeability, sample_source, sample_velocity,
    taper_dirichlet, RangeSpec, SourceSpec,
};

/// One training record.
#[derive(Debug, Clone)]
pub struct PdeSample {
    pub system: SystemTag,
    /// Source `f` for steady systems, initial condition `u0` for
    /// time-dependent ones.
    pub source: ScalarField2D,
    pub coeffs: CoefficientSet,
    pub solution: Option<ScalarField2D>,
}

impl PdeSample {
    pub fn has_solution(&self) -> bool {
        self.solution.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn seed_stream(self) -> u64 {
        match self {
            Split::Train => stream::SPLIT_TRAIN,
            Split::Val => stream::SPLIT_VAL,
            Split::Test => stream::SPLIT_TEST,
        }
    }
}

/// Downstream coefficient-range level relative to the pre-training ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodLevel {
    Id,
    SlightOod,
    MediumOod,
    HighOod,
}

impl OodLevel {
    pub fn name(self) -> &'static str {
        match self {
            OodLevel::Id => "id",
            OodLevel::SlightOod => "slight-ood",
            OodLevel::MediumOod => "medium-ood",
            OodLevel::HighOod => "high-ood",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "id" => OodLevel::Id,
            "slight-ood" => OodLevel::SlightOod,
            "medium-ood" => OodLevel::MediumOod,
            "high-ood" => OodLevel::HighOod,
            _ => return Err(CoreError::Config(format!("unknown ood level '{s}'"))),
        })
    }

    pub const ALL: [OodLevel; 4] = [OodLevel::Id, OodLevel::SlightOod, OodLevel::MediumOod, OodLevel::HighOod];
}

/// Which corpus to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetPlan {
    /// Equal thirds Poisson / Advection-Diffusion / Helmholtz, full solutions,
    /// pre-training coefficient ranges.
    Expensive,
    /// The same streams without solutions.
    Synthetic,
    /// Per operator, 1/3 with solutions (pre-training ranges) and 2/3
    /// synthetic, the latter split evenly between the in-distribution range
    /// and the widened range.
    Extended,
    /// A single downstream system at one OOD level, always with solutions.
    Downstream { system: SystemTag, ood: OodLevel },
}

impl DatasetPlan {
    pub fn name(&self) -> String {
        match self {
            DatasetPlan::Expensive => "expensive".into(),
            DatasetPlan::Synthetic => "synthetic".into(),
            DatasetPlan::Extended => "extended".into(),
            DatasetPlan::Downstream { system, ood } => {
                format!("downstream:{}:{}", system.name(), ood.name())
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expensive" => return Ok(DatasetPlan::Expensive),
            "synthetic" => return Ok(DatasetPlan::Synthetic),
            "extended" => return Ok(DatasetPlan::Extended),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("downstream:") {
            let mut parts = rest.splitn(2, ':');
            let system = SystemTag::parse(parts.next().unwrap_or(""))?;
            let ood = OodLevel::parse(parts.next().unwrap_or("id"))?;
            if system.is_time_dependent() && ood != OodLevel::Id {
                return Err(CoreError::Config(format!(
                    "{} has a single downstream range; use ood level 'id'",
                    system.name()
                )));
            }
            return Ok(DatasetPlan::Downstream { system, ood });
        }
        Err(CoreError::Config(format!("unknown plan '{s}'")))
    }
}

/// Samples per split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Desk-scale defaults (the full-scale runs use 2^15 / 2^12 / 2^12).
    pub fn desk() -> Self {
        SplitSizes { train: 1 << 10, val: 1 << 8, test: 1 << 8 }
    }

    pub fn of(self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Provenance record written into every dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub split: Split,
    pub n_samples: usize,
    pub ranges: serde_json::Value,
    pub channels: Vec<String>,
    pub noise_sigma: Option<f64>,
    pub n_shot: Option<usize>,
}

/// Semantic roles of the eight model input channels, in slot order.
pub const CHANNEL_ROLES: [&str; 8] = ["source", "d11", "d12", "d22", "vx", "vy", "omega", "r"];

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<PdeSample>,
    pub split: Split,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn grid(&self) -> GridSpec {
        self.manifest.grid
    }
}

/// Coefficient ranges one sample draws from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CoefficientRanges {
    pub d_eigen: Option<RangeSpec>,
    pub psi: Option<RangeSpec>,
    pub omega: Option<RangeSpec>,
    pub r: Option<RangeSpec>,
    pub v_mag: Option<RangeSpec>,
}

fn rr(lo: f64, hi: f64) -> RangeSpec {
    RangeSpec { lo, hi }
}

/// Pre-training ranges (expensive and synthetic rows).
pub fn pretrain_ranges(system: SystemTag) -> CoefficientRanges {
    match system {
        SystemTag::Poisson => CoefficientRanges { d_eigen: Some(rr(1.0, 5.0)), ..Default::default() },
        SystemTag::AdvectionDiffusion => CoefficientRanges {
            d_eigen: Some(rr(1.0, 5.0)),
            psi: Some(rr(0.2, 1.0)),
            ..Default::default()
        },
        SystemTag::Helmholtz => CoefficientRanges { omega: Some(rr(1.0, 10.0)), ..Default::default() },
        _ => unreachable!("pre-training uses steady systems only"),
    }
}

/// Widened ranges used by the synthetic portion of the extended corpus.
pub fn extended_wide_ranges(system: SystemTag) -> CoefficientRanges {
    match system {
        SystemTag::Poisson => CoefficientRanges { d_eigen: Some(rr(15.0, 20.0)), ..Default::default() },
        SystemTag::AdvectionDiffusion => CoefficientRanges {
            d_eigen: Some(rr(1.0, 5.0)),
            psi: Some(rr(4.0, 5.0)),
            ..Default::default()
        },
        SystemTag::Helmholtz => CoefficientRanges { omega: Some(rr(1.0, 15.0)), ..Default::default() },
        _ => unreachable!(),
    }
}

/// Downstream ranges per system and OOD level. The advection-diffusion
/// diffusion tensor keeps the pre-training range; its OOD axis is the ratio.
pub fn downstream_ranges(system: SystemTag, ood: OodLevel) -> Result<CoefficientRanges> {
    use OodLevel::*;
    Ok(match system {
        SystemTag::Poisson => {
            let d = match ood {
                Id => rr(1.0, 2.5),
                SlightOod => rr(2.5, 7.5),
                MediumOod => rr(7.5, 12.5),
                HighOod => rr(15.0, 20.0),
            };
            CoefficientRanges { d_eigen: Some(d), ..Default::default() }
        }
        SystemTag::AdvectionDiffusion => {
            let psi = match ood {
                Id => rr(0.2, 0.4),
                SlightOod => rr(0.4, 1.6),
                MediumOod => rr(2.0, 3.0),
                HighOod => rr(4.0, 5.0),
            };
            CoefficientRanges { d_eigen: Some(rr(1.0, 5.0)), psi: Some(psi), ..Default::default() }
        }
        SystemTag::Helmholtz => {
            let omega = match ood {
                Id => rr(1.0, 5.0),
                SlightOod => rr(2.0, 12.0),
                MediumOod => rr(10.0, 13.0),
                HighOod => rr(12.0, 15.0),
            };
            CoefficientRanges { omega: Some(omega), ..Default::default() }
        }
        SystemTag::ReactionDiffusion => {
            require_id(system, ood)?;
            CoefficientRanges { d_eigen: Some(rr(5.0, 10.0)), r: Some(rr(-1.0, 1.0)), ..Default::default() }
        }
        SystemTag::ReactionAdvectionDiffusion => {
            require_id(system, ood)?;
            CoefficientRanges {
                d_eigen: Some(rr(5.0, 10.0)),
                r: Some(rr(-1.0, 1.0)),
                v_mag: Some(rr(0.1, 1.0)),
                ..Default::default()
            }
        }
        SystemTag::Darcy => {
            require_id(system, ood)?;
            CoefficientRanges::default()
        }
    })
}

fn require_id(system: SystemTag, ood: OodLevel) -> Result<()> {
    if ood != OodLevel::Id {
        return Err(CoreError::Config(format!(
            "{} has a single downstream range; use ood level 'id'",
            system.name()
        )));
    }
    Ok(())
}

const SPARSITY_RANGE: RangeSpec = RangeSpec { lo: 0.2, hi: 0.8 };

/// Time horizon for generated time-dependent solutions.
pub fn generation_timespec() -> TimeSpec {
    TimeSpec { t_end: 1.0, dt: 1e-3 }
}

/// Build one sample. `with_solution` controls only whether the solve runs and
/// its result is stored; the random stream is identical either way, so the
/// expensive and synthetic corpora share (system, source, coefficient)
/// streams seed-for-seed.
fn build_sample(
    system: SystemTag,
    ranges: &CoefficientRanges,
    grid: &GridSpec,
    sample_seed: u64,
    with_solution: bool,
) -> Result<PdeSample> {
    let mut rng = seeds::rng_for(seeds::derive(sample_seed, stream::SAMPLE));
    // frozen draw order: sparsity, source amplitudes + keep mask, coefficients
    let sparsity = SPARSITY_RANGE.sample(&mut rng);
    let spec = SourceSpec::with_sparsity(sparsity)?;
    let raw = sample_source(&spec, &mut rng, grid)?;

    match system {
        SystemTag::Poisson => {
            let d = sample_diffusion(ranges.d_eigen.as_ref().unwrap(), &mut rng)?;
            let f = mean_project(&raw);
            let coeffs = CoefficientSet { d: Some(d), ..Default::default() };
            let solution =
                if with_solution { Some(solve_steady(system, &f, &coeffs)?) } else { None };
            Ok(PdeSample { system, source: f, coeffs, solution })
        }
        SystemTag::AdvectionDiffusion => {
            let d = sample_diffusion(ranges.d_eigen.as_ref().unwrap(), &mut rng)?;
            let psi_target = ranges.psi.as_ref().unwrap().sample(&mut rng);
            let f = mean_project(&raw);
            let cal = calibrate_psi(&f, &d, psi_target, &mut rng)?;
            let coeffs = CoefficientSet {
                d: Some(d),
                v: Some(cal.v),
                psi: Some(cal.psi_achieved),
                ..Default::default()
            };
            let solution = if with_solution { Some(cal.u) } else { None };
            Ok(PdeSample { system, source: f, coeffs, solution })
        }
        SystemTag::Helmholtz => {
            let omega = ranges.omega.as_ref().unwrap().sample(&mut rng);
            let coeffs = CoefficientSet { omega: Some(omega), ..Default::default() };
            let solution =
                if with_solution { Some(solve_steady(system, &raw, &coeffs)?) } else { None };
            Ok(PdeSample { system, source: raw, coeffs, solution })
        }
        SystemTag::ReactionDiffusion | SystemTag::ReactionAdvectionDiffusion => {
            let d = sample_diffusion(ranges.d_eigen.as_ref().unwrap(), &mut rng)?;
            let r = ranges.r.as_ref().unwrap().sample(&mut rng);
            let v = if system == SystemTag::ReactionAdvectionDiffusion {
                Some(sample_velocity(ranges.v_mag.as_ref().unwrap(), &mut rng))
            } else {
                None
            };
            let coeffs = CoefficientSet { d: Some(d), v, r: Some(r), ..Default::default() };
            let f = ScalarField2D::zeros(*grid);
            let solution = if with_solution {
                Some(evolve_linear(system, &raw, &f, &coeffs, &TimeSpec::default())?)
            } else {
                None
            };
            Ok(PdeSample { system, source: raw, coeffs, solution })
        }
        SystemTag::Darcy => {
            let u0 = taper_dirichlet(&raw);
            let k = sample_permeability(grid, &mut rng)?;
            let coeffs = CoefficientSet { k_field: Some(k.clone()), ..Default::default() };
            let f = ScalarField2D::zeros(*grid);
            let solution = if with_solution {
                Some(solve_darcy(&u0, &k, &f, &generation_timespec())?)
            } else {
                None
            };
            Ok(PdeSample { system, source: u0, coeffs, solution })
        }
    }
}

const PRETRAIN_MIX: [SystemTag; 3] =
    [SystemTag::Poisson, SystemTag::AdvectionDiffusion, SystemTag::Helmholtz];

/// Recipe for sample `idx` of a plan: system, ranges, and solution presence.
fn sample_recipe(plan: &DatasetPlan, idx: usize) -> (SystemTag, CoefficientRanges, bool) {
    match plan {
        DatasetPlan::Expensive => {
            let system = PRETRAIN_MIX[idx % 3];
            (system, pretrain_ranges(system), true)
        }
        DatasetPlan::Synthetic => {
            let system = PRETRAIN_MIX[idx % 3];
            (system, pretrain_ranges(system), false)
        }
        DatasetPlan::Extended => {
            let system = PRETRAIN_MIX[idx % 3];
            // within each operator: 1/3 with solutions on the pre-training
            // ranges, then synthetic alternating narrow/wide ranges
            match (idx / 3) % 3 {
                0 => (system, pretrain_ranges(system), true),
                1 => (system, pretrain_ranges(system), false),
                _ => (system, extended_wide_ranges(system), false),
            }
        }
        DatasetPlan::Downstream { system, ood } => {
            (*system, downstream_ranges(*system, *ood).expect("validated at parse"), true)
        }
    }
}

/// Build one split of a plan. Every sample derives an independent sub-seed
/// from `(seed, split, index)`, so construction order (or parallelism) cannot
/// change the result.
pub fn build_dataset(
    plan: &DatasetPlan,
    grid: &GridSpec,
    sizes: &SplitSizes,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if let DatasetPlan::Downstream { system, ood } = plan {
        downstream_ranges(*system, *ood)?;
    }
    let n = sizes.of(split);
    let split_seed = seeds::derive(seed, split.seed_stream());

    use rayon::prelude::*;
    let samples: Vec<PdeSample> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let (system, ranges, with_solution) = sample_recipe(plan, idx);
            build_sample(system, &ranges, grid, seeds::derive(split_seed, idx as u64), with_solution)
        })
        .collect::<Result<Vec<_>>>()?;

    let ranges_doc = plan_ranges_doc(plan);
    Ok(Dataset {
        samples,
        split,
        manifest: Manifest {
            plan: plan.name(),
            seed,
            grid: *grid,
            split,
            n_samples: n,
            ranges: ranges_doc,
            channels: CHANNEL_ROLES.iter().map(|s| s.to_string()).collect(),
            noise_sigma: None,
            n_shot: None,
        },
    })
}

fn plan_ranges_doc(plan: &DatasetPlan) -> serde_json::Value {
    let doc = |sys: SystemTag, r: &CoefficientRanges| {
        serde_json::json!({ "system": sys.name(), "ranges": r })
    };
    match plan {
        DatasetPlan::Expensive | DatasetPlan::Synthetic => serde_json::Value::Array(
            PRETRAIN_MIX.iter().map(|&s| doc(s, &pretrain_ranges(s))).collect(),
        ),
        DatasetPlan::Extended => serde_json::Value::Array(
            PRETRAIN_MIX
                .iter()
                .flat_map(|&s| [doc(s, &pretrain_ranges(s)), doc(s, &extended_wide_ranges(s))])
                .collect(),
        ),
        DatasetPlan::Downstream { system, ood } => {
            doc(*system, &downstream_ranges(*system, *ood).expect("validated"))
        }
    }
}

/// Build train, val, and test splits.
pub fn build_all_splits(
    plan: &DatasetPlan,
    grid: &GridSpec,
    sizes: &SplitSizes,
    seed: u64,
) -> Result<[Dataset; 3]> {
    Ok([
        build_dataset(plan, grid, sizes, seed, Split::Train)?,
        build_dataset(plan, grid, sizes, seed, Split::Val)?,
        build_dataset(plan, grid, sizes, seed, Split::Test)?,
    ])
}

/// Additive white Gaussian noise on the solutions of a training split:
/// `u + sigma * std(u) * eps`. Sources and coefficients are untouched, and
/// validation/test splits pass through clean (evaluation always compares
/// against clean ground truth).
pub fn add_noise(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if sigma < 0.0 {
        return Err(CoreError::Config("sigma must be nonnegative".into()));
    }
    let mut out = ds.clone();
    if ds.split != Split::Train || sigma == 0.0 {
        return Ok(out);
    }
    if ds.samples.iter().any(|s| !s.has_solution()) {
        return Err(CoreError::Precondition("add_noise requires solutions on every sample".into()));
    }
    let noise_seed = seeds::derive(seed, stream::NOISE);
    for (idx, sample) in out.samples.iter_mut().enumerate() {
        let mut rng = seeds::rng_for(seeds::derive(noise_seed, idx as u64));
        let u = sample.solution.as_mut().unwrap();
        let n = u.grid.points() as f64;
        let mean = u.values.sum() / n;
        let var = u.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        use rand_distr::StandardNormal;
        use rand::Rng;
        u.values.mapv_inplace(|v| v + sigma * std * rng.sample::<f64, _>(StandardNormal));
    }
    out.manifest.noise_sigma = Some(sigma);
    Ok(out)
}

/// Uniform without-replacement subsample of a training split: a seeded
/// permutation truncated to `n`, so subsets are nested across `n` for a
/// fixed seed.
pub fn subsample_nshot(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if ds.split != Split::Train {
        return Err(CoreError::Config("n-shot subsampling applies to the train split".into()));
    }
    if n > ds.samples.len() {
        return Err(CoreError::Config(format!(
            "n-shot {} exceeds train split size {}",
            n,
            ds.samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.samples.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut seeds::rng_for(seeds::derive(seed, stream::SUBSAMPLE)));
    order.truncate(n);
    let samples = order.iter().map(|&i| ds.samples[i].clone()).collect();
    let mut manifest = ds.manifest.clone();
    manifest.n_samples = n;
    manifest.n_shot = Some(n);
    Ok(Dataset { samples, split: ds.split, manifest })
}

/// Residual of every with-solution steady sample (generation-time QA).
pub fn residual_check(ds: &Dataset) -> Result<Vec<f64>> {
    ds.samples
        .iter()
        .filter(|s| s.system.is_steady() && s.has_solution())
        .map(|s| {
            residual(s.system, s.solution.as_ref().unwrap(), &s.coeffs, &s.source)
                .map(|r| r.linf())
        })
        .collect()
}
