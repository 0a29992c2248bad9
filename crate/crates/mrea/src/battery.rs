//! Physical battery abstraction: state-of-charge dynamics, ramp limits,
//! composed efficiencies, and the grid-side power mapping.

use serde::{Deserialize, Serialize};

use crate::{MreaError, Result};

/// Battery parameters. Energies in MWh, ramp rates in MW, `h` in hours.
///
/// `eta_pseudo` is a planning-side knob that filters out low-margin cycles.
/// It is composed into the solver efficiencies but is not a physical loss:
/// revenue evaluation always resets it to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub b_min: f64,
    pub b_max: f64,
    pub b0: f64,
    /// Maximum discharge rate, MW (nonpositive).
    pub delta_min: f64,
    /// Maximum charge rate, MW (nonnegative).
    pub delta_max: f64,
    /// Sampling period in hours.
    #[serde(default = "default_h")]
    pub h: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    #[serde(default = "default_eta")]
    pub eta_conv: f64,
    #[serde(default = "default_eta")]
    pub eta_pseudo: f64,
    /// Rated cycle life, informational.
    #[serde(default = "default_cycle_life")]
    pub cycle_life: u32,
    /// Calendar life in years, informational.
    #[serde(default = "default_calendar_life")]
    pub calendar_life: f64,
    /// Capital cost in currency per kWh, informational.
    #[serde(default = "default_capital_cost")]
    pub capital_cost: f64,
}

fn default_h() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    1.0
}
fn default_cycle_life() -> u32 {
    7200
}
fn default_calendar_life() -> f64 {
    10.0
}
fn default_capital_cost() -> f64 {
    100.0
}

impl Default for BatteryParams {
    /// Reference 1 MWh system: 0.1..1.0 MWh usable window, +/-0.5 MW ramp,
    /// 95% charge/discharge/converter efficiencies, hourly intervals.
    fn default() -> Self {
        BatteryParams {
            b_min: 0.1,
            b_max: 1.0,
            b0: 0.5,
            delta_min: -0.5,
            delta_max: 0.5,
            h: 1.0,
            eta_ch: 0.95,
            eta_dis: 0.95,
            eta_conv: 0.95,
            eta_pseudo: 1.0,
            cycle_life: 7200,
            calendar_life: 10.0,
            capital_cost: 100.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let ok_eta = |e: f64| e > 0.0 && e <= 1.0;
        if !(0.0 <= self.b_min && self.b_min < self.b_max) {
            return Err(MreaError::InvalidParams(format!(
                "capacity window [{}, {}] invalid",
                self.b_min, self.b_max
            )));
        }
        if !(self.b_min <= self.b0 && self.b0 <= self.b_max) {
            return Err(MreaError::InvalidParams(format!(
                "b0 = {} outside [{}, {}]",
                self.b0, self.b_min, self.b_max
            )));
        }
        if !(self.delta_min <= 0.0 && 0.0 <= self.delta_max) {
            return Err(MreaError::InvalidParams(format!(
                "ramp rates [{}, {}] must straddle 0",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.h > 0.0) {
            return Err(MreaError::InvalidParams(format!("h = {} not positive", self.h)));
        }
        if ![self.eta_ch, self.eta_dis, self.eta_conv, self.eta_pseudo]
            .iter()
            .all(|&e| ok_eta(e))
        {
            return Err(MreaError::InvalidParams(
                "efficiencies must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Per-interval energy bounds X_min = delta_min*h, X_max = delta_max*h.
    pub fn ramp_bounds(&self) -> RampBounds {
        RampBounds {
            x_min: self.delta_min * self.h,
            x_max: self.delta_max * self.h,
        }
    }

    /// Composed planning efficiencies
    /// (eta_ch*, eta_dis*) = (eta_ch, eta_dis) * eta_conv * eta_pseudo.
    pub fn compose_efficiencies(&self) -> (f64, f64) {
        (
            self.eta_ch * self.eta_conv * self.eta_pseudo,
            self.eta_dis * self.eta_conv * self.eta_pseudo,
        )
    }

    /// Composed physical efficiencies, i.e. with eta_pseudo forced to 1.
    /// All revenue evaluation goes through these.
    pub fn physical_efficiencies(&self) -> (f64, f64) {
        (self.eta_ch * self.eta_conv, self.eta_dis * self.eta_conv)
    }

    pub fn usable_capacity(&self) -> f64 {
        self.b_max - self.b_min
    }

    /// Relative SOC feasibility tolerance, absorbs LP round-off.
    pub fn soc_tolerance(&self) -> f64 {
        1e-9 * self.b_max
    }

    pub fn with_eta_pseudo(&self, eta_pseudo: f64) -> BatteryParams {
        BatteryParams {
            eta_pseudo,
            ..self.clone()
        }
    }

    pub fn with_b0(&self, b0: f64) -> BatteryParams {
        BatteryParams { b0, ..self.clone() }
    }
}

/// Per-interval energy-change bounds in MWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampBounds {
    pub x_min: f64,
    pub x_max: f64,
}

impl RampBounds {
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.x_min - tol <= x && x <= self.x_max + tol
    }
}

/// SOC levels b_0..b_N, length N+1 including the initial charge.
#[derive(Debug, Clone, PartialEq)]
pub struct SocTrajectory {
    pub b: Vec<f64>,
}

impl SocTrajectory {
    pub fn final_soc(&self) -> f64 {
        *self.b.last().expect("trajectory holds at least b0")
    }

    /// Total absolute SOC movement, MWh.
    pub fn throughput(&self) -> f64 {
        self.b.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Cumulative SOC from b0 under energy changes `x`; errors if any level
/// leaves [b_min, b_max] by more than the SOC tolerance.
pub fn soc_propagate(params: &BatteryParams, x: &[f64]) -> Result<SocTrajectory> {
    let tol = params.soc_tolerance();
    let mut b = Vec::with_capacity(x.len() + 1);
    b.push(params.b0);
    let mut level = params.b0;
    for (i, &xi) in x.iter().enumerate() {
        level += xi;
        if level < params.b_min - tol || level > params.b_max + tol {
            return Err(MreaError::InfeasibleSoc {
                step: i + 1,
                value: level,
                lo: params.b_min,
                hi: params.b_max,
            });
        }
        b.push(level);
    }
    Ok(SocTrajectory { b })
}

/// Grid-side power for an SOC change `x_i`:
/// max(0, x_i)/(h*eta_ch*) - eta_dis* * max(0, -x_i)/h.
/// Positive means the battery draws from the grid.
pub fn grid_power(params: &BatteryParams, x_i: f64) -> Result<f64> {
    let bounds = params.ramp_bounds();
    let tol = 1e-9 * (bounds.x_max - bounds.x_min).max(1.0);
    if !bounds.contains(x_i, tol) {
        return Err(MreaError::RampViolation {
            value: x_i,
            lo: bounds.x_min,
            hi: bounds.x_max,
        });
    }
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    Ok(x_i.max(0.0) / (params.h * eta_ch) - eta_dis * (-x_i).max(0.0) / params.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_eta() -> BatteryParams {
        BatteryParams {
            eta_ch: 1.0,
            eta_dis: 1.0,
            eta_conv: 1.0,
            eta_pseudo: 1.0,
            ..BatteryParams::default()
        }
    }

    #[test]
    fn composed_efficiencies_reference_battery() {
        let p = BatteryParams::default();
        let (ch, dis) = p.compose_efficiencies();
        assert!((ch - 0.9025).abs() < 1e-12);
        assert!((dis - 0.9025).abs() < 1e-12);
    }

    #[test]
    fn composed_efficiencies_identity() {
        let (ch, dis) = unit_eta().compose_efficiencies();
        assert_eq!((ch, dis), (1.0, 1.0));
    }

    #[test]
    fn composed_efficiencies_with_pseudo() {
        let p = BatteryParams::default().with_eta_pseudo(0.7);
        let (ch, dis) = p.compose_efficiencies();
        assert!((ch - 0.631750).abs() < 1e-9);
        assert!((dis - 0.631750).abs() < 1e-9);
        // physical efficiencies ignore the pseudo term
        let (pch, pdis) = p.physical_efficiencies();
        assert!((pch - 0.9025).abs() < 1e-12);
        assert!((pdis - 0.9025).abs() < 1e-12);
    }

    #[test]
    fn soc_propagate_full_swing() {
        let p = BatteryParams::default();
        let t = soc_propagate(&p, &[0.5, -0.5]).unwrap();
        assert_eq!(t.b, vec![0.5, 1.0, 0.5]);
        assert_eq!(t.final_soc(), 0.5);
    }

    #[test]
    fn soc_propagate_overflow_rejected() {
        let p = BatteryParams::default();
        let err = soc_propagate(&p, &[0.6]).unwrap_err();
        match err {
            MreaError::InfeasibleSoc { step, value, .. } => {
                assert_eq!(step, 1);
                assert!((value - 1.1).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn soc_propagate_empty_dispatch() {
        let p = BatteryParams::default().with_b0(0.1);
        let t = soc_propagate(&p, &[]).unwrap();
        assert_eq!(t.b, vec![0.1]);
    }

    #[test]
    fn soc_propagate_tolerates_solver_roundoff() {
        let p = BatteryParams::default();
        let eps = 0.1 * p.soc_tolerance();
        assert!(soc_propagate(&p, &[0.5 + eps]).is_ok());
    }

    #[test]
    fn grid_power_examples() {
        let p = BatteryParams::default();
        assert_eq!(grid_power(&p, 0.0).unwrap(), 0.0);
        assert!((grid_power(&unit_eta(), 0.5).unwrap() - 0.5).abs() < 1e-12);
        // discharging 0.5 MWh delivers 0.5 * 0.9025 MW to the grid
        assert!((grid_power(&p, -0.5).unwrap() + 0.45125).abs() < 1e-12);
    }

    #[test]
    fn grid_power_ramp_violation() {
        let p = BatteryParams::default();
        assert!(matches!(
            grid_power(&p, 0.7),
            Err(MreaError::RampViolation { .. })
        ));
    }

    #[test]
    fn validate_rejects_bad_window() {
        let mut p = BatteryParams::default();
        p.b0 = 2.0;
        assert!(p.validate().is_err());
        p = BatteryParams::default();
        p.eta_ch = 0.0;
        assert!(p.validate().is_err());
        p = BatteryParams::default();
        p.delta_min = 0.2;
        assert!(p.validate().is_err());
    }

    proptest! {
        // final SOC is linear in the dispatch: b_N = b0 + sum(x)
        #[test]
        fn soc_propagate_linearity(x in proptest::collection::vec(-0.05f64..0.05, 1..20)) {
            let p = BatteryParams::default();
            let t = soc_propagate(&p, &x).unwrap();
            let expect = p.b0 + x.iter().sum::<f64>();
            prop_assert!((t.final_soc() - expect).abs() < 1e-9);
        }

        // grid_power is monotone nondecreasing and passes through the origin
        #[test]
        fn grid_power_monotone(a in -0.5f64..0.5, b in -0.5f64..0.5) {
            let p = BatteryParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(grid_power(&p, lo).unwrap() <= grid_power(&p, hi).unwrap() + 1e-12);
        }

        // lossless battery maps energy to power as x/h exactly
        #[test]
        fn grid_power_lossless(x in -0.5f64..0.5, h in 0.25f64..4.0) {
            let mut p = unit_eta();
            p.h = h;
            p.delta_min = -0.5 / h;
            p.delta_max = 0.5 / h;
            prop_assert!((grid_power(&p, x).unwrap() - x / h).abs() < 1e-12);
        }

        // halving eta_pseudo halves both composed efficiencies
        #[test]
        fn compose_multiplicative(ep in 0.1f64..1.0) {
            let p = BatteryParams::default().with_eta_pseudo(ep);
            let q = p.with_eta_pseudo(ep / 2.0);
            let (pch, pdis) = p.compose_efficiencies();
            let (qch, qdis) = q.compose_efficiencies();
            prop_assert!((qch - pch / 2.0).abs() < 1e-12);
            prop_assert!((qdis - pdis / 2.0).abs() < 1e-12);
        }
    }
}
