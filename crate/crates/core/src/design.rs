use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Why a run is in the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Dopt,
    ExtremumMax,
    ExtremumMin,
    Spacefill,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Dopt => "DOPT",
            Role::ExtremumMax => "EXTREMUM_MAX",
            Role::ExtremumMin => "EXTREMUM_MIN",
            Role::Spacefill => "SPACEFILL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "DOPT" => Role::Dopt,
            "EXTREMUM_MAX" => Role::ExtremumMax,
            "EXTREMUM_MIN" => Role::ExtremumMin,
            "SPACEFILL" => Role::Spacefill,
            _ => return None,
        })
    }

    pub fn is_extremum(self) -> bool {
        matches!(self, Role::ExtremumMax | Role::ExtremumMin)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One run: unit-cube location, role and replicate group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x: Vec<f64>,
    pub role: Role,
    pub group: usize,
}

/// Ordered runs in `[0,1]^p`. Runs sharing `group` are replicates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Design {
    pub p: usize,
    pub points: Vec<DesignPoint>,
}

impl Design {
    pub fn new(p: usize) -> Self {
        Self { p, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends a run in a fresh replicate group and returns the group id.
    pub fn push(&mut self, x: Vec<f64>, role: Role) -> usize {
        let group = self.next_group();
        self.points.push(DesignPoint { x, role, group });
        group
    }

    pub fn push_in_group(&mut self, x: Vec<f64>, role: Role, group: usize) {
        self.points.push(DesignPoint { x, role, group });
    }

    pub fn next_group(&self) -> usize {
        self.points.iter().map(|p| p.group + 1).max().unwrap_or(0)
    }

    pub fn locations(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.x.clone()).collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.points.iter().filter(|p| p.role == role).count()
    }

    pub fn role_counts(&self) -> BTreeMap<Role, usize> {
        let mut m = BTreeMap::new();
        for p in &self.points {
            *m.entry(p.role).or_insert(0) += 1;
        }
        m
    }

    /// Renumbers groups `0, 1, ...` in order of first appearance.
    pub fn normalize_groups(&mut self) {
        let mut map = BTreeMap::new();
        for p in &mut self.points {
            let next = map.len();
            p.group = *map.entry(p.group).or_insert(next);
        }
    }

    pub fn in_unit_cube(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.x.len() == self.p && p.x.iter().all(|v| (0.0..=1.0).contains(v)))
    }
}
