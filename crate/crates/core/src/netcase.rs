//! Static network data: buses, branches, machines, renewables, and the bus
//! admittance matrix.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal synchronous speed, rad/s.
pub const OMEGA0: f64 = 2.0 * PI * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v_set: Option<f64>,
    pub p_load: f64,
    pub q_load: f64,
    /// Shunt conductance/susceptance at V = 1 pu.
    pub g_sh: f64,
    pub b_sh: f64,
    pub has_renewable: bool,
    pub p_ren: f64,
    pub q_ren: f64,
}

impl Bus {
    pub fn is_load(&self) -> bool {
        self.p_load != 0.0 || self.q_load != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_sh: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub bus: usize,
    /// Scheduled active power (pu), used by the power flow for PV buses.
    pub p_set: f64,
    pub m: f64,
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_prime: f64,
    pub t_d0_prime: f64,
    pub t_ch: f64,
    pub r_d: f64,
}

/// Placement rule for renewable plants. Totals are in per-unit and split
/// uniformly across the matched buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenewableRule {
    EveryLoadBus {
        total_p_pu: f64,
        #[serde(default)]
        total_q_pu: f64,
    },
    Threshold {
        p_min_pu: f64,
        total_p_pu: f64,
        #[serde(default)]
        total_q_pu: f64,
    },
}

impl RenewableRule {
    fn matches(&self, bus: &Bus) -> bool {
        match *self {
            RenewableRule::EveryLoadBus { .. } => bus.p_load > 0.0,
            RenewableRule::Threshold { p_min_pu, .. } => bus.p_load > 0.0 && bus.p_load >= p_min_pu,
        }
    }

    fn totals(&self) -> (f64, f64) {
        match *self {
            RenewableRule::EveryLoadBus { total_p_pu, total_q_pu } => (total_p_pu, total_q_pu),
            RenewableRule::Threshold { total_p_pu, total_q_pu, .. } => (total_p_pu, total_q_pu),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<GeneratorParams>,
    pub omega0: f64,
    pub renewable_rule: Option<RenewableRule>,
    /// Rescale PV schedules by the renewable share of demand after attaching
    /// renewables, so the slack machine is not left to absorb the surplus.
    pub redispatch: bool,
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Zero-based bus index of a one-based bus id.
    pub fn bus_index(&self, id: usize) -> usize {
        id - 1
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated case has a slack bus")
    }

    /// Bus index of every generator, in generator order.
    pub fn generator_buses(&self) -> Vec<usize> {
        self.generators.iter().map(|g| g.bus - 1).collect()
    }

    pub fn load_buses(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].is_load()).collect()
    }

    pub fn renewable_buses(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].has_renewable).collect()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses.iter().fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    pub fn total_renewable(&self) -> (f64, f64) {
        self.buses.iter().fold((0.0, 0.0), |(p, q), b| (p + b.p_ren, q + b.q_ren))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return bad("case has no buses".into());
        }
        for (k, bus) in self.buses.iter().enumerate() {
            if bus.id != k + 1 {
                return bad(format!("bus ids must be contiguous 1..N, found {} at position {}", bus.id, k + 1));
            }
            if let Some(v) = bus.v_set {
                if !(v > 0.0) {
                    return bad(format!("bus {} has non-positive v_set {}", bus.id, v));
                }
            }
            if bus.kind != BusKind::Pq && bus.v_set.is_none() {
                return bad(format!("bus {} is {:?} but has no v_set", bus.id, bus.kind));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return bad(format!("expected exactly one slack bus, found {slacks}"));
        }
        let n = self.buses.len();
        for br in &self.branches {
            if br.from == 0 || br.from > n || br.to == 0 || br.to > n {
                return bad(format!("branch {}-{} references a missing bus", br.from, br.to));
            }
            if br.from == br.to {
                return bad(format!("branch {}-{} is a self loop", br.from, br.to));
            }
            if !(br.tap > 0.0) {
                return bad(format!("branch {}-{} has non-positive tap", br.from, br.to));
            }
        }
        if self.generators.is_empty() {
            return bad("case has no generators".into());
        }
        let mut seen = vec![false; n];
        for g in &self.generators {
            if g.bus == 0 || g.bus > n {
                return bad(format!("generator references missing bus {}", g.bus));
            }
            if seen[g.bus - 1] {
                return bad(format!("more than one generator on bus {}", g.bus));
            }
            seen[g.bus - 1] = true;
            if self.buses[g.bus - 1].kind == BusKind::Pq {
                return bad(format!("generator on bus {} which is PQ", g.bus));
            }
            let params = [
                ("m", g.m),
                ("d", g.d),
                ("x_d", g.x_d),
                ("x_q", g.x_q),
                ("x_d_prime", g.x_d_prime),
                ("t_d0_prime", g.t_d0_prime),
                ("t_ch", g.t_ch),
                ("r_d", g.r_d),
            ];
            for (name, value) in params {
                if !(value > 0.0) || !value.is_finite() {
                    return bad(format!("generator on bus {} has non-positive {name} = {value}", g.bus));
                }
            }
            if g.x_d < g.x_d_prime {
                return bad(format!("generator on bus {} has x_d < x_d_prime", g.bus));
            }
        }
        for (k, bus) in self.buses.iter().enumerate() {
            if bus.kind != BusKind::Pq && !seen[k] {
                return bad(format!("bus {} is {:?} but carries no generator", bus.id, bus.kind));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File schema (powers in MW/MVAr on base_mva, impedances in pu)

#[derive(Debug, Serialize, Deserialize)]
struct CaseFile {
    name: String,
    base_mva: f64,
    buses: Vec<BusRecord>,
    branches: Vec<BranchRecord>,
    generators: Vec<GeneratorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    renewable_rule: Option<RenewableRule>,
    #[serde(default)]
    redispatch: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusRecord {
    id: usize,
    kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_set: Option<f64>,
    #[serde(default)]
    p_load: f64,
    #[serde(default)]
    q_load: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    g_sh: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    b_sh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_ren: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_ren: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchRecord {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b_sh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tap: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorRecord {
    bus: usize,
    p_set: f64,
    m: f64,
    d: f64,
    x_d: f64,
    x_q: f64,
    x_d_prime: f64,
    t_d0_prime: f64,
    #[serde(default = "default_t_ch")]
    t_ch: f64,
    #[serde(default = "default_r_d")]
    r_d: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn default_t_ch() -> f64 {
    0.2
}

fn default_r_d() -> f64 {
    0.02
}

impl CaseFile {
    fn into_case(self) -> NetworkCase {
        let base = self.base_mva;
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                v_set: b.v_set,
                p_load: b.p_load / base,
                q_load: b.q_load / base,
                g_sh: b.g_sh / base,
                b_sh: b.b_sh / base,
                has_renewable: b.p_ren.is_some() || b.q_ren.is_some(),
                p_ren: b.p_ren.unwrap_or(0.0) / base,
                q_ren: b.q_ren.unwrap_or(0.0) / base,
            })
            .collect();
        let branches = self
            .branches
            .into_iter()
            .map(|br| Branch {
                from: br.from,
                to: br.to,
                r: br.r,
                x: br.x,
                b_sh: br.b_sh,
                tap: match br.tap {
                    Some(t) if t != 0.0 => t,
                    _ => 1.0,
                },
            })
            .collect();
        let generators = self
            .generators
            .into_iter()
            .map(|g| GeneratorParams {
                bus: g.bus,
                p_set: g.p_set / base,
                m: g.m,
                d: g.d,
                x_d: g.x_d,
                x_q: g.x_q,
                x_d_prime: g.x_d_prime,
                t_d0_prime: g.t_d0_prime,
                t_ch: g.t_ch,
                r_d: g.r_d,
            })
            .collect();
        NetworkCase {
            name: self.name,
            base_mva: base,
            buses,
            branches,
            generators,
            omega0: OMEGA0,
            renewable_rule: self.renewable_rule,
            redispatch: self.redispatch,
        }
    }

    fn from_case(case: &NetworkCase) -> Self {
        let base = case.base_mva;
        CaseFile {
            name: case.name.clone(),
            base_mva: base,
            buses: case
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    v_set: b.v_set,
                    p_load: b.p_load * base,
                    q_load: b.q_load * base,
                    g_sh: b.g_sh * base,
                    b_sh: b.b_sh * base,
                    p_ren: b.has_renewable.then_some(b.p_ren * base),
                    q_ren: b.has_renewable.then_some(b.q_ren * base),
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|br| BranchRecord {
                    from: br.from,
                    to: br.to,
                    r: br.r,
                    x: br.x,
                    b_sh: br.b_sh,
                    tap: (br.tap != 1.0).then_some(br.tap),
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorRecord {
                    bus: g.bus,
                    p_set: g.p_set * base,
                    m: g.m,
                    d: g.d,
                    x_d: g.x_d,
                    x_q: g.x_q,
                    x_d_prime: g.x_d_prime,
                    t_d0_prime: g.t_d0_prime,
                    t_ch: g.t_ch,
                    r_d: g.r_d,
                })
                .collect(),
            renewable_rule: case.renewable_rule.clone(),
            redispatch: case.redispatch,
        }
    }
}

/// Parse and validate a case from its JSON text.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let file: CaseFile = serde_json::from_str(text)?;
    let case = file.into_case();
    case.validate()?;
    Ok(case)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_case(&text)
}

pub fn case_to_json(case: &NetworkCase) -> String {
    serde_json::to_string_pretty(&CaseFile::from_case(case)).expect("case serializes")
}

pub fn save_case(case: &NetworkCase, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), case_to_json(case)).map_err(|e| Error::io(path.as_ref(), e))
}

/// The shipped IEEE test systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Ieee9,
    Ieee14,
    Ieee39,
    Ieee57,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::Ieee9, CaseId::Ieee14, CaseId::Ieee39, CaseId::Ieee57];

    pub fn json(self) -> &'static str {
        match self {
            CaseId::Ieee9 => include_str!("../cases/ieee9.json"),
            CaseId::Ieee14 => include_str!("../cases/ieee14.json"),
            CaseId::Ieee39 => include_str!("../cases/ieee39.json"),
            CaseId::Ieee57 => include_str!("../cases/ieee57.json"),
        }
    }

    pub fn load(self) -> NetworkCase {
        parse_case(self.json()).expect("shipped fixture is valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Ieee9 => "ieee9",
            CaseId::Ieee14 => "ieee14",
            CaseId::Ieee39 => "ieee39",
            CaseId::Ieee57 => "ieee57",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Validation(format!("unknown case '{s}'")))
    }
}

/// Resolve either a shipped case id or a path to a case file.
pub fn resolve_case(spec: &str) -> Result<NetworkCase> {
    match spec.parse::<CaseId>() {
        Ok(id) => Ok(id.load()),
        Err(_) if std::path::Path::new(spec).exists() => load_case(spec),
        Err(_) => Err(Error::Validation(format!(
            "'{spec}' is neither a shipped case ({}) nor an existing file",
            CaseId::ALL.iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// Renewables

#[derive(Debug, Clone)]
pub struct RenewableAttachment {
    pub case: NetworkCase,
    /// Bus indices that received a renewable plant.
    pub matched: Vec<usize>,
}

impl RenewableAttachment {
    /// True when the rule matched no bus and the case came back unchanged.
    pub fn is_empty(&self) -> bool {
        self.matched.is_empty()
    }
}

/// Attach renewable plants per `rule`, splitting its totals uniformly.
pub fn attach_renewables(case: &NetworkCase, rule: &RenewableRule) -> RenewableAttachment {
    let matched: Vec<usize> = (0..case.buses.len()).filter(|&i| rule.matches(&case.buses[i])).collect();
    let mut out = case.clone();
    if matched.is_empty() {
        log::warn!("renewable rule matched no bus on {}", case.name);
        return RenewableAttachment { case: out, matched };
    }
    let (p_tot, q_tot) = rule.totals();
    let share = matched.len() as f64;
    for &i in &matched {
        let bus = &mut out.buses[i];
        bus.has_renewable = true;
        bus.p_ren = p_tot / share;
        bus.q_ren = q_tot / share;
    }
    RenewableAttachment { case: out, matched }
}

/// Scale PV generator schedules by (ΣP_L − ΣP_R)/ΣP_L. The slack machine keeps
/// absorbing losses and any residual mismatch.
pub fn redispatch(case: &NetworkCase) -> NetworkCase {
    let (p_load, _) = case.total_load();
    let (p_ren, _) = case.total_renewable();
    let mut out = case.clone();
    if p_load <= 0.0 {
        return out;
    }
    let factor = (p_load - p_ren) / p_load;
    for g in &mut out.generators {
        if case.buses[g.bus - 1].kind == BusKind::Pv {
            g.p_set *= factor;
        }
    }
    out
}

/// Apply the case's own renewable rule and, if requested, redispatch.
pub fn prepare_case(case: &NetworkCase) -> NetworkCase {
    let mut out = match &case.renewable_rule {
        Some(rule) if case.renewable_buses().is_empty() => attach_renewables(case, rule).case,
        _ => case.clone(),
    };
    if out.redispatch {
        out = redispatch(&out);
    }
    out
}

// ---------------------------------------------------------------------------
// Admittance

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Nonzero off-diagonal pattern per row, used for sparse power sums.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        (0..n).map(|i| (0..n).filter(|&j| j != i && (self.g[(i, j)] != 0.0 || self.b[(i, j)] != 0.0)).collect()).collect()
    }
}

/// Standard pi-model stamping with off-nominal taps on the from side.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_buses();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in &case.branches {
        if br.x == 0.0 {
            return Err(Error::ZeroReactance { from: br.from, to: br.to });
        }
        let (f, t) = (br.from - 1, br.to - 1);
        let z2 = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / z2, -br.x / z2);
        let tap = br.tap;
        let half = br.b_sh / 2.0;

        g[(f, f)] += gs / (tap * tap);
        b[(f, f)] += (bs + half) / (tap * tap);
        g[(t, t)] += gs;
        b[(t, t)] += bs + half;
        g[(f, t)] -= gs / tap;
        b[(f, t)] -= bs / tap;
        g[(t, f)] -= gs / tap;
        b[(t, f)] -= bs / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        g[(i, i)] += bus.g_sh;
        b[(i, i)] += bus.b_sh;
    }
    Ok(AdmittanceMatrix { g, b })
}
