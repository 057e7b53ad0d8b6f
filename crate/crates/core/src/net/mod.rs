//! Per-unit network model.
//!
//! Buses are stored in file order and addressed by their position (the
//! internal index); the original MATPOWER bus number is kept in [`Bus::id`]
//! for reporting. Out-of-service branches and generators are dropped when a
//! case is built.

mod matpower;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use matpower::{parse_matpower_case, write_matpower_case};

pub const CASE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaseError {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("loading factor must be positive, got {0}")]
    InvalidFactor(f64),
    #[error("invalid case JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    PQ,
    PV,
    ThetaV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Bus number in the source file.
    pub id: u32,
    pub kind: BusKind,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Internal index of the from bus.
    pub from: usize,
    /// Internal index of the to bus.
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_charging: f64,
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub phase_shift: f64,
    /// Apparent power limit; 0 means unlimited.
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Internal index of the bus the unit is connected to.
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Voltage magnitude setpoint from the case file.
    pub v_set: f64,
    /// Quadratic cost coefficient, $/h per p.u.².
    pub cost_a: f64,
    /// Linear cost coefficient, $/h per p.u.
    pub cost_b: f64,
    /// Constant cost, $/h.
    pub cost_c: f64,
}

impl Generator {
    pub fn cost(&self, pg: f64) -> f64 {
        self.cost_a * pg * pg + self.cost_b * pg + self.cost_c
    }

    pub fn marginal_cost(&self, pg: f64) -> f64 {
        2.0 * self.cost_a * pg + self.cost_b
    }
}

/// A validated network. All electrical quantities are per-unit on
/// `base_mva`. Immutable once built; share it freely between solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Internal index of the reference bus.
    pub slack: usize,
}

#[derive(Serialize, Deserialize)]
struct CaseDump {
    schema_version: u32,
    case: NetworkCase,
}

impl NetworkCase {
    /// The IEEE 30-bus case as distributed with MATPOWER.
    pub fn ieee30() -> Self {
        parse_matpower_case(include_str!("../../data/case30.m")).expect("bundled case30 parses")
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus_id(&self) -> u32 {
        self.buses[self.slack].id
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Internal indices of PQ buses in ascending order.
    pub fn pq_buses(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].kind == BusKind::PQ).collect()
    }

    /// The generator that absorbs the active-power imbalance: the first unit
    /// connected to the slack bus.
    pub fn slack_generator(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.bus == self.slack)
            .expect("validated case has a generator at the slack bus")
    }

    /// Generators grouped by bus.
    pub fn generators_at(&self) -> Vec<Vec<usize>> {
        let mut at = vec![Vec::new(); self.buses.len()];
        for (k, g) in self.generators.iter().enumerate() {
            at[g.bus].push(k);
        }
        at
    }

    pub fn total_cost(&self, pg: &[f64]) -> f64 {
        self.generators.iter().zip(pg).map(|(g, &p)| g.cost(p)).sum()
    }

    /// Copy with every bus demand (`pd`, `qd`) multiplied by `factor`.
    pub fn scale_loading(&self, factor: f64) -> Result<NetworkCase, CaseError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(CaseError::InvalidFactor(factor));
        }
        let mut out = self.clone();
        for b in &mut out.buses {
            b.pd *= factor;
            b.qd *= factor;
        }
        Ok(out)
    }

    /// Canonical JSON dump (`{"schema_version": 1, "case": {...}}`).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CaseDump {
            schema_version: CASE_SCHEMA_VERSION,
            case: self.clone(),
        })
        .expect("case serializes")
    }

    pub fn from_json(text: &str) -> Result<NetworkCase, CaseError> {
        let dump: CaseDump = serde_json::from_str(text).map_err(|e| CaseError::Json(e.to_string()))?;
        if dump.schema_version != CASE_SCHEMA_VERSION {
            return Err(CaseError::Json(format!(
                "unsupported schema_version {}",
                dump.schema_version
            )));
        }
        dump.case.validate()?;
        Ok(dump.case)
    }

    /// Hex SHA-256 of the canonical JSON dump; used as a cache key.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check the structural invariants of the model.
    pub fn validate(&self) -> Result<(), CaseError> {
        let fail = |m: String| Err(CaseError::Validation(m));
        if !(self.base_mva > 0.0) || !self.base_mva.is_finite() {
            return fail(format!("baseMVA must be positive, got {}", self.base_mva));
        }
        let nb = self.buses.len();
        if nb == 0 {
            return fail("case has no buses".into());
        }
        let mut ids = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if ids.insert(b.id, i).is_some() {
                return fail(format!("duplicate bus number {}", b.id));
            }
            if !(b.vmin <= b.vmax) {
                return fail(format!("bus {}: vmin {} exceeds vmax {}", b.id, b.vmin, b.vmax));
            }
            for v in [b.pd, b.qd, b.gs, b.bs, b.vmin, b.vmax] {
                if !v.is_finite() {
                    return fail(format!("bus {}: non-finite data", b.id));
                }
            }
        }
        let slacks: Vec<usize> = (0..nb).filter(|&i| self.buses[i].kind == BusKind::ThetaV).collect();
        if slacks.len() != 1 {
            return fail(format!("expected exactly one reference bus, found {}", slacks.len()));
        }
        if self.slack != slacks[0] {
            return fail("slack index does not point at the reference bus".into());
        }
        let mut has_gen = vec![false; nb];
        for (k, g) in self.generators.iter().enumerate() {
            if g.bus >= nb {
                return fail(format!("generator {} references a missing bus", k + 1));
            }
            has_gen[g.bus] = true;
            if !(g.pmin <= g.pmax) || !(g.qmin <= g.qmax) {
                return fail(format!("generator at bus {}: inverted limits", self.buses[g.bus].id));
            }
            if !(g.cost_a >= 0.0) {
                return fail(format!("generator at bus {}: negative quadratic cost", self.buses[g.bus].id));
            }
            for v in [g.pmin, g.pmax, g.qmin, g.qmax, g.v_set, g.cost_a, g.cost_b, g.cost_c] {
                if !v.is_finite() {
                    return fail(format!("generator at bus {}: non-finite data", self.buses[g.bus].id));
                }
            }
        }
        for (i, b) in self.buses.iter().enumerate() {
            let expects_gen = b.kind != BusKind::PQ;
            if expects_gen != has_gen[i] {
                return fail(format!(
                    "bus {} is {:?} but has {} in-service generator",
                    b.id,
                    b.kind,
                    if has_gen[i] { "an" } else { "no" }
                ));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= nb || br.to >= nb {
                return fail(format!("branch {} references a missing bus", k + 1));
            }
            if br.x == 0.0 || !br.x.is_finite() {
                return fail(format!("branch {}: reactance must be nonzero", k + 1));
            }
            if !(br.tap_ratio > 0.0) || !br.tap_ratio.is_finite() {
                return fail(format!("branch {}: tap ratio must be positive", k + 1));
            }
            if !(br.s_max >= 0.0) {
                return fail(format!("branch {}: negative flow limit", k + 1));
            }
            for v in [br.r, br.b_charging, br.phase_shift, br.s_max] {
                if !v.is_finite() {
                    return fail(format!("branch {}: non-finite data", k + 1));
                }
            }
        }
        Ok(())
    }
}
