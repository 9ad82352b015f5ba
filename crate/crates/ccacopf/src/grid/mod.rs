//! Static grid model: buses, branches, generators, and the bus admittance
//! matrix. Everything is stored in per-unit on the case MVA base; bus ids
//! are remapped to contiguous 0-based indices at parse time.

mod parse;
mod ybus;

pub use parse::{parse_case, parse_case_verbose, CaseWarning};
pub use ybus::build_admittance;

use crate::scalar::Scalar;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("case validation failed: {0}")]
    Validation(String),
    #[error("branch {from}-{to} has zero series impedance")]
    SingularBranch { from: i64, to: i64 },
}

/// Role a bus plays in the power-flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

/// A network node. `p_net_nom`/`q_net_nom` are the nominal net loads
/// (demand minus renewable injection) — the quantities that become random
/// in the chance-constrained problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Bus<T: Scalar> {
    /// Contiguous 0-based index used everywhere internally.
    pub id: usize,
    /// Bus number in the source file, retained for reporting.
    pub ext_id: i64,
    pub kind: BusKind,
    pub vmin: T,
    pub vmax: T,
    pub p_net_nom: T,
    pub q_net_nom: T,
    /// Shunt conductance/susceptance (per-unit at V = 1).
    pub gs: T,
    pub bs: T,
    /// Voltage magnitude setpoint for slack/generator buses.
    pub vset: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Generator<T: Scalar> {
    /// Internal index of the bus this unit sits on.
    pub bus: usize,
    pub pmin: T,
    pub pmax: T,
    pub qmin: T,
    pub qmax: T,
    /// Cost polynomial in per-unit power: cost($/h) = c0 + c1·P + c2·P².
    pub c0: T,
    pub c1: T,
    pub c2: T,
    /// Voltage setpoint from the source file.
    pub vg: T,
    /// Scheduled active output, used as the fixed P of PV buses when the
    /// oracle solves power flow.
    pub pg: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Branch<T: Scalar> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
    /// Total line-charging susceptance (half is lumped at each end).
    pub b_sh: T,
    /// Apparent-power limit; `None` means the branch is unconstrained.
    pub s_max: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetworkCase<T: Scalar> {
    pub name: String,
    pub base_mva: T,
    pub buses: Vec<Bus<T>>,
    pub generators: Vec<Generator<T>>,
    pub branches: Vec<Branch<T>>,
}

impl<T: Scalar> NetworkCase<T> {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Indices into `generators` of the units at `bus`.
    pub fn gens_at(&self, bus: usize) -> Vec<usize> {
        self.generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.bus == bus)
            .map(|(i, _)| i)
            .collect()
    }

    /// Branches carrying an apparent-power limit, in file order.
    pub fn limited_branches(&self) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, br)| br.s_max.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Canonical JSON dump: fixed key order (struct order), full float
    /// precision, trailing newline. Stable across runs, so it doubles as
    /// the fingerprint preimage.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("case serializes");
        s.push('\n');
        s
    }

    pub fn from_canonical_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Validation(format!("bad case JSON: {e}")))
    }

    pub fn fingerprint(&self) -> String {
        crate::util::fingerprint(self.to_canonical_json().as_bytes())
    }

    /// Total generation cost in $/h for per-unit setpoints `p_gen`
    /// (aligned with `generators`).
    pub fn generation_cost(&self, p_gen: &[T]) -> T {
        self.generators
            .iter()
            .zip(p_gen)
            .map(|(g, &p)| g.c0 + g.c1 * p + g.c2 * p * p)
            .sum()
    }
}

/// Real and imaginary parts of the bus admittance matrix Y = g + jb.
///
/// Dense storage: the systems considered here are small enough that the
/// n² footprint is irrelevant, and dense rows make the neighborhood
/// queries of the surrogate trivial.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix<T: Scalar> {
    pub g: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Scalar> AdmittanceMatrix<T> {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Buses electrically coupled to `i` (nonzero off-diagonal Y entry).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&j| j != i && (self.g[(i, j)] != T::zero() || self.b[(i, j)] != T::zero()))
            .collect()
    }
}
