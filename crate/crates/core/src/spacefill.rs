//! MaxPro space-filling criterion and greedy augmentation.
//!
//! `psi(D) = { C(n,2)^-1 sum_{i<j} prod_l (x_il - x_jl)^-2 }^(1/p)`. A pair
//! sharing any coordinate makes the criterion `+inf`.
//!
//! Augmentation adds one point at a time. Each step minimizes the part of the
//! criterion that involves the new point, which is the criterion of the union
//! up to a constant. Pairs inside the fixed design are excluded, so existing
//! replicates (which collide by construction) do not poison the search.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::design::{Design, Role};
use crate::error::{Error, Result};
use crate::linalg::dist;
use crate::optim::{nelder_mead, NelderMead};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Maxpro,
    Maximin,
}

/// MaxPro criterion of a point set in `[0,1]^p`.
pub fn maxpro_criterion(points: &[Vec<f64>], p: usize) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "the MaxPro criterion needs at least two points".into(),
        ));
    }
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: bad.len(),
        });
    }
    let n = points.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let prod: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .product();
            if prod == 0.0 {
                return Ok(f64::INFINITY);
            }
            sum += 1.0 / prod;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((sum / pairs).powf(1.0 / p as f64))
}

/// Smallest pairwise Euclidean distance.
pub fn maximin_criterion(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(dist(&points[i], &points[j]));
        }
    }
    best
}

/// `sum_s prod_l (s_l - z_l)^-2`: the criterion terms a new point `z` adds.
pub fn maxpro_increment(others: &[Vec<f64>], z: &[f64]) -> f64 {
    let mut sum = 0.0;
    for s in others {
        let prod: f64 = s.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).product();
        if prod == 0.0 {
            return f64::INFINITY;
        }
        sum += 1.0 / prod;
    }
    sum
}

fn step_objective(criterion: Criterion, others: &[Vec<f64>], z: &[f64]) -> f64 {
    match criterion {
        Criterion::Maxpro => {
            let v = maxpro_increment(others, z);
            if v.is_finite() {
                v.ln()
            } else {
                f64::INFINITY
            }
        }
        Criterion::Maximin => -others.iter().map(|s| dist(s, z)).fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub existing: Design,
    pub n_add: usize,
    /// Allowed values per dimension; each list sorted, inside `[0,1]`, with
    /// at least two entries.
    pub levels: Option<Vec<Vec<f64>>>,
    pub criterion: Criterion,
    pub seed: u64,
    /// Random candidates scored per greedy step (continuous case).
    pub candidates: usize,
    /// Best candidates polished by Nelder-Mead per step.
    pub multistarts: usize,
}

impl AugmentPlan {
    pub fn new(existing: Design, n_add: usize, seed: u64) -> Self {
        Self {
            existing,
            n_add,
            levels: None,
            criterion: Criterion::Maxpro,
            seed,
            candidates: 2048,
            multistarts: 10,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.existing.p != p && !self.existing.is_empty() {
            return Err(Error::Dimension {
                expected: p,
                got: self.existing.p,
            });
        }
        if !self.existing.in_unit_cube() {
            return Err(Error::InvalidArgument("existing design leaves [0,1]^p".into()));
        }
        if let Some(levels) = &self.levels {
            if levels.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: levels.len(),
                });
            }
            for (d, l) in levels.iter().enumerate() {
                let ok = l.len() >= 2
                    && l.iter().all(|v| (0.0..=1.0).contains(v))
                    && l.windows(2).all(|w| w[0] < w[1]);
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "levels for dimension {d} must be strictly increasing, inside [0,1], with at least two entries"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn continuous_step(p: usize, others: &[Vec<f64>], plan: &AugmentPlan, step: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(plan.seed, step as u64));
    let cands: Vec<Vec<f64>> = (0..plan.candidates.max(1))
        .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
        .collect();
    let scores = par::map_slice(&cands, |z| step_objective(plan.criterion, others, z));
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let starts: Vec<usize> = order.into_iter().take(plan.multistarts.max(1)).collect();
    let (lo, hi) = (vec![0.0; p], vec![1.0; p]);
    let nm = NelderMead {
        max_iter: 300,
        step: 0.02,
        ftol: 1e-12,
        xtol: 1e-9,
    };
    let polished = par::map_slice(&starts, |&s| {
        let (x, v) = nelder_mead(|z| step_objective(plan.criterion, others, z), &cands[s], &lo, &hi, &nm);
        if v <= scores[s] {
            (x, v)
        } else {
            (cands[s].clone(), scores[s])
        }
    });
    let vals: Vec<f64> = polished.iter().map(|r| r.1).collect();
    let best = par::argmin(&vals).unwrap_or(0);
    polished[best].0.clone()
}

fn discrete_step(levels: &[Vec<f64>], others: &[Vec<f64>], plan: &AugmentPlan, step: usize) -> Result<Vec<f64>> {
    // a dimension whose every level is already taken makes a collision unavoidable
    if plan.criterion == Criterion::Maxpro {
        for (d, l) in levels.iter().enumerate() {
            if l.iter().all(|v| others.iter().any(|s| s[d] == *v)) {
                return Err(Error::InfeasibleLevels { dim: d });
            }
        }
    }
    let total: f64 = levels.iter().map(|l| l.len() as f64).product();
    let cands: Vec<Vec<f64>> = if total <= 200_000.0 {
        let mut out = vec![vec![]];
        for l in levels {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    l.iter().map(move |v| {
                        let mut c: Vec<f64> = prefix.clone();
                        c.push(*v);
                        c
                    })
                })
                .collect();
        }
        out
    } else {
        let mut rng = rng_from_seed(derive_seed(plan.seed, step as u64));
        (0..50_000)
            .map(|_| levels.iter().map(|l| l[rng.random_range(0..l.len())]).collect())
            .collect()
    };
    let scores = par::map_slice(&cands, |z| step_objective(plan.criterion, others, z));
    let best = par::argmin(&scores).expect("non-empty candidate set");
    if !scores[best].is_finite() {
        // sampled candidates may all collide even though a free combination exists
        let free: Vec<f64> = levels
            .iter()
            .enumerate()
            .map(|(d, l)| *l.iter().find(|v| others.iter().all(|s| s[d] != **v)).expect("checked above"))
            .collect();
        return Ok(free);
    }
    Ok(cands[best].clone())
}

/// Greedily appends `plan.n_add` SPACEFILL runs to `plan.existing`.
pub fn augment(p: usize, plan: &AugmentPlan) -> Result<Design> {
    plan.validate(p)?;
    let mut design = plan.existing.clone();
    design.p = p;
    if plan.n_add == 0 {
        return Ok(design);
    }
    if design.is_empty() && plan.levels.is_none() && plan.criterion == Criterion::Maxpro {
        for x in maxpro_design(plan.n_add, p, plan.seed)? {
            design.push(x, Role::Spacefill);
        }
        return Ok(design);
    }
    let mut others = design.locations();
    for step in 0..plan.n_add {
        let z = if others.is_empty() {
            vec![0.5; p]
        } else {
            match &plan.levels {
                Some(levels) => discrete_step(levels, &others, plan, step)?,
                None => continuous_step(p, &others, plan, step),
            }
        };
        others.push(z.clone());
        design.push(z, Role::Spacefill);
    }
    Ok(design)
}

fn point_objective(points: &[Vec<f64>], i: usize, z: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (j, s) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let prod: f64 = s.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).product();
        if prod == 0.0 {
            return f64::INFINITY;
        }
        sum += 1.0 / prod;
    }
    sum.ln()
}

/// An `n`-run MaxPro design in `[0,1]^p`: best of several Latin-hypercube
/// starts improved by column swaps, then a continuous per-point polish.
pub fn maxpro_design(n: usize, p: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Ok(vec![]);
    }
    if n == 1 {
        return Ok(vec![vec![0.5; p]]);
    }
    const STARTS: usize = 4;
    let runs = par::map_range(STARTS, |s| {
        let mut rng = rng_from_seed(derive_seed(seed, s as u64));
        let mut cols: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                perm.into_iter().map(|k| (k as f64 + 0.5) / n as f64).collect()
            })
            .collect();
        let rows = |cols: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
        };
        let mut best = maxpro_criterion(&rows(&cols), p).unwrap_or(f64::INFINITY);
        for _ in 0..(200 * n).min(4000) {
            let l = rng.random_range(0..p);
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            cols[l].swap(a, b);
            let v = maxpro_criterion(&rows(&cols), p).unwrap_or(f64::INFINITY);
            if v < best {
                best = v;
            } else {
                cols[l].swap(a, b);
            }
        }
        let mut pts = rows(&cols);
        let (lo, hi) = (vec![0.0; p], vec![1.0; p]);
        let nm = NelderMead {
            max_iter: 200,
            step: 0.5 / n as f64,
            ftol: 1e-12,
            xtol: 1e-9,
        };
        for _ in 0..3 {
            for i in 0..n {
                let start = pts[i].clone();
                let f0 = point_objective(&pts, i, &start);
                let (z, v) = nelder_mead(|z| point_objective(&pts, i, z), &start, &lo, &hi, &nm);
                if v < f0 {
                    pts[i] = z;
                }
            }
        }
        let v = maxpro_criterion(&pts, p).unwrap_or(f64::INFINITY);
        (pts, v)
    });
    let vals: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let best = par::argmin(&vals).unwrap_or(0);
    Ok(runs[best].0.clone())
}
