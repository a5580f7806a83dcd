//! Assembly of an `n`-run design: replicated locally D-optimal points, the
//! two location-scale correction points, and a MaxPro augmentation. The
//! `bayes` and `surrogate` regimes pool per-sample designs over prior
//! representatives and reduce them with support points.

use serde::{Deserialize, Serialize};

use crate::design::{Design, Role};
use crate::doe::{d_optimal_design, find_extrema, SearchConfig};
use crate::error::{Error, Result};
use crate::linalg::dist;
use crate::model::{ComputerModel, Interval};
use crate::par;
use crate::reduce::{prior_representatives, support_points_with, PriorSpec, SupportConfig};
use crate::rng::{derive_seed, stream};
use crate::spacefill::{augment, AugmentPlan, Criterion};
use crate::surrogate::{sample_realization, GpSurrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignRequest {
    /// Total run budget.
    pub n: usize,
    /// Replicates of each D-optimal point (a confidence weight when pooling
    /// over prior samples).
    pub r: usize,
    /// Number of prior representatives.
    pub m: usize,
    pub include_location_scale: bool,
    /// Allowed unit-scale levels per input for the space-filling runs.
    pub levels: Option<Vec<Vec<f64>>>,
    /// Merge radius, unit coordinates.
    pub rho: f64,
    pub criterion: Criterion,
    /// Sobol anchors per surrogate realization.
    pub anchors: usize,
    pub search: SearchConfig,
}

impl Default for DesignRequest {
    fn default() -> Self {
        Self {
            n: 8,
            r: 2,
            m: 20,
            include_location_scale: true,
            levels: None,
            rho: 0.05,
            criterion: Criterion::Maxpro,
            anchors: 256,
            search: SearchConfig::default(),
        }
    }
}

impl DesignRequest {
    /// Runs reserved before augmentation.
    pub fn required(&self, q: usize) -> usize {
        q * self.r + if self.include_location_scale { 2 } else { 0 }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be >= 1".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be >= 0, got {}", self.rho)));
        }
        let required = self.required(q);
        if self.n < required {
            return Err(Error::BudgetInfeasible { n: self.n, required });
        }
        Ok(())
    }
}

/// What one prior sample contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub eta: Vec<f64>,
    pub seed: u64,
    pub dopt: Vec<Vec<f64>>,
    pub log_det: Option<f64>,
    pub x_max: Option<Vec<f64>>,
    pub f_max: Option<f64>,
    pub x_min: Option<Vec<f64>>,
    pub f_min: Option<f64>,
}

/// Design plus the metadata needed to reproduce and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustDesign {
    pub regime: String,
    pub design: Design,
    pub samples: Vec<SampleRecord>,
    /// Extremum runs that were snapped onto a D-optimal location.
    pub snapped_extrema: usize,
}

fn per_sample(model: &ComputerModel, eta: &[f64], req: &DesignRequest, i: usize) -> Result<SampleRecord> {
    let seed = derive_seed(req.search.seed, i as u64);
    let search = req.search.with_seed(seed);
    let mut rec = SampleRecord {
        eta: eta.to_vec(),
        seed,
        dopt: vec![],
        log_det: None,
        x_max: None,
        f_max: None,
        x_min: None,
        f_min: None,
    };
    if req.r > 0 {
        let d = d_optimal_design(model, eta, model.q(), &search)?;
        rec.dopt = d.points;
        rec.log_det = Some(d.log_det);
    }
    if req.include_location_scale {
        let e = find_extrema(model, eta, &search)?;
        rec.x_max = Some(e.x_max);
        rec.f_max = Some(e.f_max);
        rec.x_min = Some(e.x_min);
        rec.f_min = Some(e.f_min);
    }
    Ok(rec)
}

fn reduce_to(points: Vec<Vec<f64>>, k: usize, seed: u64, p: usize) -> Result<Vec<Vec<f64>>> {
    support_points_with(&points, k, seed, &SupportConfig::unit_cube(p))
}

// Joins DOPT and extremum contributions, then augments to n.
fn assemble(
    regime: &str,
    p: usize,
    q: usize,
    samples: Vec<SampleRecord>,
    req: &DesignRequest,
    pooled: bool,
) -> Result<RobustDesign> {
    let mut design = Design::new(p);
    if req.r > 0 {
        if pooled {
            let cands: Vec<Vec<f64>> = samples
                .iter()
                .flat_map(|s| s.dopt.iter().flat_map(|x| std::iter::repeat_n(x.clone(), req.r)))
                .collect();
            let reduced = reduce_to(cands, q * req.r, derive_seed(req.search.seed, stream::REDUCE), p)?;
            for x in reduced {
                design.push(x, Role::Dopt);
            }
            design = merge_replicates(&design, req.rho);
        } else {
            for x in &samples[0].dopt {
                let g = design.push(x.clone(), Role::Dopt);
                for _ in 1..req.r {
                    design.push_in_group(x.clone(), Role::Dopt, g);
                }
            }
        }
    }
    let mut snapped = 0;
    if req.include_location_scale {
        let maxima: Vec<Vec<f64>> = samples.iter().filter_map(|s| s.x_max.clone()).collect();
        let minima: Vec<Vec<f64>> = samples.iter().filter_map(|s| s.x_min.clone()).collect();
        let reduce_seed = derive_seed(req.search.seed, stream::REDUCE);
        let x_max = reduce_to(maxima, 1, derive_seed(reduce_seed, 1), p)?.remove(0);
        let x_min = reduce_to(minima, 1, derive_seed(reduce_seed, 2), p)?.remove(0);
        for (x, role) in [(x_max, Role::ExtremumMax), (x_min, Role::ExtremumMin)] {
            let near = design
                .points
                .iter()
                .filter(|d| d.role == Role::Dopt)
                .map(|d| (dist(&d.x, &x), d.x.clone(), d.group))
                .filter(|(d, _, _)| *d < req.rho)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match near {
                Some((_, loc, group)) => {
                    design.push_in_group(loc, role, group);
                    snapped += 1;
                }
                None => {
                    design.push(x, role);
                }
            }
        }
    }
    let mut plan = AugmentPlan::new(design, req.n - req.required(q), derive_seed(req.search.seed, stream::AUGMENT));
    plan.levels = req.levels.clone();
    plan.criterion = req.criterion;
    let mut design = augment(p, &plan)?;
    design.normalize_groups();
    debug_assert_eq!(design.len(), req.n);
    Ok(RobustDesign {
        regime: regime.to_string(),
        design,
        samples,
        snapped_extrema: snapped,
    })
}

fn check_eta(model: &ComputerModel, eta: &[f64]) -> Result<()> {
    if eta.len() != model.q() {
        return Err(Error::Dimension {
            expected: model.q(),
            got: eta.len(),
        });
    }
    Ok(())
}

/// Design for a point estimate `eta0` of the calibration parameters.
pub fn robust_design_local(model: &ComputerModel, eta0: &[f64], req: &DesignRequest) -> Result<RobustDesign> {
    check_eta(model, eta0)?;
    req.validate(model.q())?;
    let rec = per_sample(model, eta0, req, 0)?;
    assemble("local", model.p(), model.q(), vec![rec], req, false)
}

fn representatives(prior: &PriorSpec, eta_bounds: &[Interval], req: &DesignRequest) -> Result<Vec<Vec<f64>>> {
    if prior.dim() != eta_bounds.len() {
        return Err(Error::Dimension {
            expected: eta_bounds.len(),
            got: prior.dim(),
        });
    }
    let reps = prior_representatives(prior, req.m, derive_seed(req.search.seed, stream::PRIOR))?;
    Ok(reps
        .into_iter()
        .map(|e| e.iter().zip(eta_bounds).map(|(v, b)| b.clamp(*v)).collect())
        .collect())
}

/// Design pooled over `m` support-point representatives of `prior`.
pub fn robust_design_bayes(model: &ComputerModel, prior: &PriorSpec, req: &DesignRequest) -> Result<RobustDesign> {
    prior.validate()?;
    req.validate(model.q())?;
    let reps = representatives(prior, model.eta_bounds(), req)?;
    let samples: Vec<SampleRecord> = par::map_range(reps.len(), |i| per_sample(model, &reps[i], req, i))
        .into_iter()
        .collect::<Result<_>>()?;
    assemble("bayes", model.p(), model.q(), samples, req, true)
}

/// A GP emulator of `f(x; eta)` trained on unit-scaled `(x, eta)` inputs.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub gp: GpSurrogate,
    pub x_bounds: Vec<Interval>,
    pub eta_bounds: Vec<Interval>,
}

impl SurrogateModel {
    pub fn new(gp: GpSurrogate, x_bounds: Vec<Interval>, eta_bounds: Vec<Interval>) -> Result<Self> {
        let d = x_bounds.len() + eta_bounds.len();
        if gp.dims() != d {
            return Err(Error::Dimension {
                expected: d,
                got: gp.dims(),
            });
        }
        Ok(Self { gp, x_bounds, eta_bounds })
    }

    pub fn to_unit(&self, x: &[f64], eta: &[f64]) -> Vec<f64> {
        self.x_bounds
            .iter()
            .zip(x)
            .chain(self.eta_bounds.iter().zip(eta))
            .map(|(b, v)| b.to_unit(*v))
            .collect()
    }

    /// Posterior mean as a computer model.
    pub fn mean_model(&self) -> Result<ComputerModel> {
        let s = self.clone();
        ComputerModel::from_fn(
            "gp-mean",
            self.x_bounds.clone(),
            self.eta_bounds.clone(),
            std::sync::Arc::new(move |x, eta| s.gp.posterior_mean(&s.to_unit(x, eta))),
        )
    }

    /// One posterior sample path on the slice at `eta` (physical), as a
    /// computer model.
    pub fn realization_model(&self, eta: &[f64], anchors: usize, seed: u64) -> Result<ComputerModel> {
        let slice: Vec<f64> = self.eta_bounds.iter().zip(eta).map(|(b, v)| b.to_unit(*v)).collect();
        let path = sample_realization(&self.gp, &slice, anchors, seed)?;
        let s = self.clone();
        ComputerModel::from_fn(
            "gp-realization",
            self.x_bounds.clone(),
            self.eta_bounds.clone(),
            std::sync::Arc::new(move |x, e| path.eval(&s.to_unit(x, e))),
        )
    }
}

/// As [`robust_design_bayes`], with each prior representative paired with
/// an independent realization of the emulator.
pub fn robust_design_surrogate(
    surrogate: &SurrogateModel,
    prior: &PriorSpec,
    req: &DesignRequest,
) -> Result<RobustDesign> {
    prior.validate()?;
    let q = surrogate.eta_bounds.len();
    let p = surrogate.x_bounds.len();
    req.validate(q)?;
    let reps = representatives(prior, &surrogate.eta_bounds, req)?;
    let real_seed = derive_seed(req.search.seed, stream::REALIZATION);
    let samples: Vec<SampleRecord> = par::map_range(reps.len(), |i| {
        let model = surrogate.realization_model(&reps[i], req.anchors, derive_seed(real_seed, i as u64))?;
        per_sample(&model, &reps[i], req, i)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    assemble("surrogate", p, q, samples, req, true)
}

/// Single-linkage merge of same-role runs closer than `rho`; each cluster
/// moves to its centroid and shares one replicate group.
pub fn merge_replicates(design: &Design, rho: f64) -> Design {
    let n = design.len();
    let mut out = design.clone();
    if rho <= 0.0 || n < 2 {
        return out;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let pts = &design.points;
    for i in 0..n {
        for j in 0..i {
            let linked = pts[i].role == pts[j].role && (pts[i].group == pts[j].group || dist(&pts[i].x, &pts[j].x) < rho);
            if linked {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    for root in 0..n {
        let members: Vec<usize> = (0..n).filter(|&i| roots[i] == root).collect();
        if members.len() < 2 {
            continue;
        }
        let group = members.iter().map(|&i| pts[i].group).min().unwrap_or(0);
        let mut centroid = vec![0.0; design.p];
        for &i in &members {
            for (c, v) in centroid.iter_mut().zip(&pts[i].x) {
                *c += v / members.len() as f64;
            }
        }
        for &i in &members {
            out.points[i].x = centroid.clone();
            out.points[i].group = group;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dopt(xs: &[[f64; 2]]) -> Design {
        let mut d = Design::new(2);
        for x in xs {
            d.push(x.to_vec(), Role::Dopt);
        }
        d
    }

    #[test]
    fn merge_pair() {
        let d = dopt(&[[0.5, 0.5], [0.51, 0.5]]);
        let m = merge_replicates(&d, 0.05);
        assert_eq!(m.points[0].x, m.points[1].x);
        assert_eq!(m.points[0].group, m.points[1].group);
        assert!((m.points[0].x[0] - 0.505).abs() < 1e-15);
    }

    #[test]
    fn merge_chain_single_linkage() {
        let d = dopt(&[[0.0, 0.0], [0.04, 0.0], [0.08, 0.0]]);
        let m = merge_replicates(&d, 0.05);
        let g = m.points[0].group;
        assert!(m.points.iter().all(|p| p.group == g && (p.x[0] - 0.04).abs() < 1e-15));
    }

    #[test]
    fn merge_zero_radius_and_roles() {
        let d = dopt(&[[0.0, 0.0], [0.01, 0.0]]);
        assert_eq!(merge_replicates(&d, 0.0), d);
        let mut e = dopt(&[[0.0, 0.0]]);
        e.push(vec![0.01, 0.0], Role::ExtremumMax);
        assert_eq!(merge_replicates(&e, 0.05), e);
    }

    #[test]
    fn budget() {
        let model = ComputerModel::toy();
        let req = DesignRequest { n: 3, ..DesignRequest::default() };
        let err = robust_design_local(&model, &[0.5], &req).unwrap_err();
        assert!(err.to_string().starts_with("budget infeasible"));
    }
}
