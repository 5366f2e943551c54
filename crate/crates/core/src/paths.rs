//! Parametric degradation paths and their first-crossing times.
//!
//! Every family is a closed-form function of time. Crossing times are found
//! analytically where the family can be inverted (linear, log-logistic,
//! Device-B, coating) and by bracketed bisection otherwise (Paris law,
//! cumulative exposure).

use crate::data::{CovariateHistory, Direction, FailureThreshold};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearPath {
    pub intercept: f64,
    pub slope: f64,
}

/// Crack growth under the Paris law with stress intensity `x·√(π·D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParisPath {
    pub theta1: f64,
    pub theta2: f64,
    pub initial: f64,
    pub stress: f64,
}

impl ParisPath {
    fn rate(&self) -> f64 {
        self.theta1 * (self.stress * PI.sqrt()).powf(self.theta2)
    }

    /// Finite time at which the path diverges, when `theta2 > 2`.
    pub fn blow_up_time(&self) -> Option<f64> {
        let c = 1.0 - self.theta2 / 2.0;
        if c < 0.0 {
            Some(-self.initial.powf(c) / (c * self.rate()))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLogisticPath {
    pub asymptote: f64,
    pub scale: f64,
    pub shape: f64,
}

/// Power-drop path of the Device-B RF amplifier with an Arrhenius rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceBPath {
    pub beta1: f64,
    pub beta2: f64,
    pub activation: f64,
    pub baseline_x: f64,
    pub x: f64,
}

impl DeviceBPath {
    fn rate(&self) -> f64 {
        (self.beta1 + self.activation * (self.baseline_x - self.x)).exp()
    }
}

/// Log-logistic path in location-scale form with a multiplicative unit effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoatingPath {
    pub asymptote: f64,
    pub mu: f64,
    pub coef: Vec<f64>,
    pub gamma: f64,
    pub w: f64,
    pub covariates: Vec<f64>,
}

impl CoatingPath {
    pub fn location(&self) -> f64 {
        self.mu + self.coef.iter().zip(&self.covariates).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Parametric covariate effect `f_l(x; β_l)` integrated over a covariate history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectFunction {
    /// `coef · x`
    Linear { coef: f64 },
    /// `scale · x^exponent`, for nonnegative `x`
    Power { scale: f64, exponent: f64 },
    /// `scale · exp(rate · x)`
    Exponential { scale: f64, rate: f64 },
}

impl EffectFunction {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            EffectFunction::Linear { coef } => coef * x,
            EffectFunction::Power { scale, exponent } => scale * x.max(0.0).powf(exponent),
            EffectFunction::Exponential { scale, rate } => scale * (rate * x).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulativeExposurePath {
    pub beta0: f64,
    pub effects: Vec<EffectFunction>,
    pub histories: Vec<CovariateHistory>,
    /// Constant realization of the unit's functional random effect.
    pub unit_shift: f64,
}

impl CumulativeExposurePath {
    /// Time up to which every history is defined.
    pub fn coverage_end(&self) -> f64 {
        self.histories
            .iter()
            .map(|h| *h.times.last().expect("validated history"))
            .fold(f64::INFINITY, f64::min)
    }

    fn cumulative_effect(effect: &EffectFunction, h: &CovariateHistory, t: f64) -> Result<f64> {
        let (first, last) = (h.times[0], *h.times.last().expect("validated history"));
        if first > 0.0 || last < t {
            return Err(Error::Domain(format!(
                "history {}/{} covers [{first}, {last}], not [0, {t}]",
                h.unit_id, h.name
            )));
        }
        let interp = |s: f64| -> f64 {
            let k = h.times.partition_point(|&x| x <= s);
            if k == 0 {
                return h.values[0];
            }
            if k == h.times.len() {
                return h.values[k - 1];
            }
            let (t0, t1) = (h.times[k - 1], h.times[k]);
            h.values[k - 1] + (s - t0) / (t1 - t0) * (h.values[k] - h.values[k - 1])
        };
        // trapezoid over the grid nodes inside (0, t), with the interval ends interpolated
        let mut nodes = vec![0.0];
        nodes.extend(h.times.iter().copied().filter(|&s| s > 0.0 && s < t));
        nodes.push(t);
        let mut total = 0.0;
        let mut prev_t = nodes[0];
        let mut prev_f = effect.apply(interp(prev_t));
        for &s in &nodes[1..] {
            let f = effect.apply(interp(s));
            total += 0.5 * (s - prev_t) * (f + prev_f);
            prev_t = s;
            prev_f = f;
        }
        Ok(total)
    }
}

/// A degradation path `D(t)` from one of the supported families.
///
/// Serializes as `{"family": "paris", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PathModel {
    Linear(LinearPath),
    Paris(ParisPath),
    LogLogistic(LogLogisticPath),
    DeviceB(DeviceBPath),
    Coating(CoatingPath),
    CumulativeExposure(CumulativeExposurePath),
}

impl PathModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Domain(msg.to_string()));
        match self {
            PathModel::Linear(p) if !(p.intercept.is_finite() && p.slope.is_finite()) => bad("linear: non-finite parameters"),
            PathModel::Paris(p) if !(p.theta1 > 0.0) => bad("paris: theta1 must be positive"),
            PathModel::Paris(p) if !(p.initial > 0.0) => bad("paris: initial size must be positive"),
            PathModel::Paris(p) if !(p.stress > 0.0) => bad("paris: stress must be positive"),
            PathModel::LogLogistic(p) if !(p.scale > 0.0 && p.shape > 0.0) => bad("log-logistic: scale and shape must be positive"),
            PathModel::Coating(p) if !(p.asymptote < 0.0) => bad("coating: asymptote must be negative"),
            PathModel::Coating(p) if !(p.gamma > 0.0) => bad("coating: gamma must be positive"),
            PathModel::Coating(p) if p.coef.len() != p.covariates.len() => bad("coating: coefficient/covariate length mismatch"),
            PathModel::CumulativeExposure(p) if p.effects.len() != p.histories.len() => {
                bad("cumulative exposure: one history per effect required")
            }
            _ => Ok(()),
        }
    }

    /// `D(t)`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("evaluation time {t} must be nonnegative")));
        }
        Ok(match self {
            PathModel::Linear(p) => p.intercept + p.slope * t,
            PathModel::Paris(p) => {
                let c = 1.0 - p.theta2 / 2.0;
                if c == 0.0 {
                    p.initial * (p.rate() * t).exp()
                } else {
                    let base = p.initial.powf(c) + c * p.rate() * t;
                    if base <= 0.0 {
                        return Err(Error::Singularity { blow_up_time: p.blow_up_time().unwrap_or(0.0) });
                    }
                    base.powf(1.0 / c)
                }
            }
            PathModel::LogLogistic(p) => {
                if t == 0.0 {
                    0.0
                } else {
                    p.asymptote / (1.0 + (t / p.scale).powf(-1.0 / p.shape))
                }
            }
            PathModel::DeviceB(p) => p.beta2.exp() * (-(p.rate() * t)).exp_m1(),
            PathModel::Coating(p) => {
                if t == 0.0 {
                    0.0
                } else {
                    let z = (t.ln() - p.location()) / p.gamma;
                    p.asymptote * p.w.exp() / (1.0 + (-z).exp())
                }
            }
            PathModel::CumulativeExposure(p) => {
                let mut total = p.beta0 + p.unit_shift;
                for (f, h) in p.effects.iter().zip(&p.histories) {
                    total += CumulativeExposurePath::cumulative_effect(f, h, t)?;
                }
                total
            }
        })
    }

    /// First time the path reaches the threshold, `min{t ≥ 0 : D(t) reaches D₀}`,
    /// or `None` when the path's supremum stays short of it.
    pub fn first_crossing_time(&self, threshold: &FailureThreshold) -> Result<Option<f64>> {
        self.validate()?;
        let s = match threshold.direction {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        };
        let level = s * threshold.value;
        let wrong_direction = || Error::Domain("path does not move toward the threshold direction".into());
        match self {
            PathModel::Linear(p) => {
                if !(s * p.slope > 0.0) {
                    return Err(Error::Domain("linear path slope must move toward the threshold".into()));
                }
                Ok(Some(((threshold.value - p.intercept) / p.slope).max(0.0)))
            }
            PathModel::LogLogistic(p) => {
                let top = s * p.asymptote;
                if !(top > 0.0) {
                    return Err(wrong_direction());
                }
                if level <= 0.0 {
                    return Ok(Some(0.0));
                }
                if level >= top {
                    return Ok(None);
                }
                Ok(Some(p.scale * (top / level - 1.0).powf(-p.shape)))
            }
            PathModel::DeviceB(p) => {
                if s > 0.0 {
                    return Err(wrong_direction());
                }
                let top = p.beta2.exp();
                if level <= 0.0 {
                    return Ok(Some(0.0));
                }
                if level >= top {
                    return Ok(None);
                }
                Ok(Some(-(-level / top).ln_1p() / p.rate()))
            }
            PathModel::Coating(p) => {
                if s > 0.0 {
                    return Err(wrong_direction());
                }
                let top = -p.asymptote * p.w.exp();
                if level <= 0.0 {
                    return Ok(Some(0.0));
                }
                if level >= top {
                    return Ok(None);
                }
                let z = -(top / level - 1.0).ln();
                Ok(Some((p.location() + p.gamma * z).exp()))
            }
            PathModel::Paris(_) => {
                if s < 0.0 {
                    return Err(wrong_direction());
                }
                self.bisect_crossing(s, level, f64::INFINITY)
            }
            PathModel::CumulativeExposure(p) => self.bisect_crossing(s, level, p.coverage_end()),
        }
    }

    /// Signed path value; finite-time divergence counts as +∞.
    fn signed_value(&self, s: f64, t: f64) -> Result<f64> {
        match self.evaluate(t) {
            Ok(v) => Ok(s * v),
            Err(Error::Singularity { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    fn bisect_crossing(&self, s: f64, level: f64, t_max: f64) -> Result<Option<f64>> {
        if self.signed_value(s, 0.0)? >= level {
            return Ok(Some(0.0));
        }
        let mut lo = 0.0;
        let mut hi = 1.0f64.min(t_max);
        let mut doublings = 0;
        while self.signed_value(s, hi)? < level {
            if hi >= t_max || doublings > 1100 {
                return Ok(None);
            }
            lo = hi;
            hi = (2.0 * hi).min(t_max);
            doublings += 1;
        }
        // well past the 1e-10 relative target: steep Paris paths need it
        while hi - lo > 4.0 * f64::EPSILON * hi {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.signed_value(s, mid)? >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(0.5 * (lo + hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paris(theta2: f64) -> PathModel {
        PathModel::Paris(ParisPath { theta1: 0.01, theta2, initial: 9.0, stress: 1.0 })
    }

    #[test]
    fn paris_exponential_branch() {
        let v = paris(2.0).evaluate(10.0).unwrap();
        assert_relative_eq!(v, 9.0 * (0.01 * PI * 10.0).exp(), max_relative = 1e-14);
        assert_relative_eq!(v, 12.322, epsilon = 5e-4);
    }

    #[test]
    fn paris_theta2_zero_is_linear() {
        let p = PathModel::Paris(ParisPath { theta1: 0.3, theta2: 0.0, initial: 2.0, stress: 1.7 });
        for t in [0.0, 1.0, 4.5] {
            assert_relative_eq!(p.evaluate(t).unwrap(), 2.0 + 0.3 * t, max_relative = 1e-13);
        }
    }

    #[test]
    fn paris_blow_up_is_reported() {
        let p = ParisPath { theta1: 0.01, theta2: 4.0, initial: 9.0, stress: 1.0 };
        let tb = p.blow_up_time().unwrap();
        match PathModel::Paris(p).evaluate(tb * 1.01) {
            Err(Error::Singularity { blow_up_time }) => assert_relative_eq!(blow_up_time, tb),
            other => panic!("expected singularity, got {other:?}"),
        }
        // the crossing of any finite level happens before the blow-up
        let t = PathModel::Paris(p).first_crossing_time(&FailureThreshold::increasing(1e6)).unwrap().unwrap();
        assert!(t < tb);
    }

    #[test]
    fn paris_continuity_at_two() {
        let t = 7.0;
        let exact = paris(2.0).evaluate(t).unwrap();
        for d in [1e-6, -1e-6] {
            assert_relative_eq!(paris(2.0 + d).evaluate(t).unwrap(), exact, max_relative = 1e-4);
        }
    }

    #[test]
    fn log_logistic_half_asymptote() {
        let p = PathModel::LogLogistic(LogLogisticPath { asymptote: -0.8, scale: 40.0, shape: 0.6 });
        assert_relative_eq!(p.evaluate(40.0).unwrap(), -0.4, max_relative = 1e-14);
        assert_eq!(p.evaluate(0.0).unwrap(), 0.0);
    }

    #[test]
    fn device_b_limits() {
        let p = PathModel::DeviceB(DeviceBPath { beta1: -6.0, beta2: 0.2, activation: 0.6, baseline_x: 24.8, x: 26.0 });
        assert_eq!(p.evaluate(0.0).unwrap(), 0.0);
        assert_relative_eq!(p.evaluate(1e9).unwrap(), -(0.2f64).exp(), max_relative = 1e-12);
        assert_eq!(p.first_crossing_time(&FailureThreshold::decreasing(-1.5)).unwrap(), None);
        let t = p.first_crossing_time(&FailureThreshold::decreasing(-0.5)).unwrap().unwrap();
        assert_relative_eq!(p.evaluate(t).unwrap(), -0.5, max_relative = 1e-12);
    }

    #[test]
    fn cumulative_exposure_constant_history() {
        let h = CovariateHistory::new("A", "uv", vec![0.0, 10.0, 20.0, 30.0], vec![2.5; 4]).unwrap();
        let f = EffectFunction::Power { scale: 0.1, exponent: 1.5 };
        let p = PathModel::CumulativeExposure(CumulativeExposurePath {
            beta0: 0.3,
            effects: vec![f],
            histories: vec![h],
            unit_shift: 0.0,
        });
        for t in [0.0, 5.0, 17.3, 30.0] {
            assert_relative_eq!(p.evaluate(t).unwrap(), 0.3 + t * f.apply(2.5), max_relative = 1e-13);
        }
        assert!(p.evaluate(31.0).is_err());
        let tc = p.first_crossing_time(&FailureThreshold::increasing(2.0)).unwrap().unwrap();
        assert_relative_eq!(p.evaluate(tc).unwrap(), 2.0, max_relative = 1e-8);
        assert_eq!(p.first_crossing_time(&FailureThreshold::increasing(100.0)).unwrap(), None);
    }

    #[test]
    fn cumulative_exposure_trapezoid_on_ramp() {
        // x(s) = s on the grid, f linear: exact integral t²/2
        let h = CovariateHistory::new("A", "x", vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = PathModel::CumulativeExposure(CumulativeExposurePath {
            beta0: 0.0,
            effects: vec![EffectFunction::Linear { coef: 1.0 }],
            histories: vec![h],
            unit_shift: 0.5,
        });
        assert_relative_eq!(p.evaluate(2.5).unwrap(), 0.5 + 3.125, max_relative = 1e-13);
    }

    #[test]
    fn linear_crossing() {
        let p = PathModel::Linear(LinearPath { intercept: 0.0, slope: 2.0 });
        assert_eq!(p.first_crossing_time(&FailureThreshold::increasing(1.0)).unwrap(), Some(0.5));
        let flat = PathModel::Linear(LinearPath { intercept: 0.0, slope: 0.0 });
        assert!(matches!(flat.first_crossing_time(&FailureThreshold::increasing(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn paris_crossing_inverts_evaluate() {
        let t = paris(2.0).first_crossing_time(&FailureThreshold::increasing(12.322)).unwrap().unwrap();
        assert!((t - 10.0).abs() < 1e-3, "{t}");
        let level = paris(2.0).evaluate(10.0).unwrap();
        let t = paris(2.0).first_crossing_time(&FailureThreshold::increasing(level)).unwrap().unwrap();
        assert!((t - 10.0).abs() < 1e-6, "{t}");
    }

    #[test]
    fn json_model_block() {
        let p = paris(2.5);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"family":"paris","params":{"theta1":0.01,"theta2":2.5,"initial":9.0,"stress":1.0}}"#);
        let back: PathModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    /// Families sampled with valid parameters, oriented so that `direction`
    /// is the way the path moves.
    fn arb_path() -> impl Strategy<Value = (PathModel, Direction)> {
        prop_oneof![
            (-5.0..5.0f64, 0.01..5.0f64).prop_map(|(a, b)| (PathModel::Linear(LinearPath { intercept: a, slope: b }), Direction::Increasing)),
            (1e-4..0.05f64, 0.0..4.0f64, 1.0..20.0f64, 0.5..2.0f64).prop_map(|(t1, t2, d0, x)| {
                (PathModel::Paris(ParisPath { theta1: t1, theta2: t2, initial: d0, stress: x }), Direction::Increasing)
            }),
            (-3.0..3.0f64, 0.1..100.0f64, 0.1..3.0f64).prop_filter("nonzero", |(a, _, _)| a.abs() > 0.05).prop_map(|(a, nu, k)| {
                let dir = if a > 0.0 { Direction::Increasing } else { Direction::Decreasing };
                (PathModel::LogLogistic(LogLogisticPath { asymptote: a, scale: nu, shape: k }), dir)
            }),
            (-9.0..-3.0f64, -1.0..1.0f64, 0.0..1.0f64, 20.0..30.0f64).prop_map(|(b1, b2, a, x)| {
                (PathModel::DeviceB(DeviceBPath { beta1: b1, beta2: b2, activation: a, baseline_x: 24.8, x }), Direction::Decreasing)
            }),
            (-2.0..-0.1f64, 0.0..6.0f64, 0.1..2.0f64, -0.5..0.5f64, -1.0..1.0f64, 0.0..1.0f64).prop_map(|(a, mu, g, w, b, x)| {
                (PathModel::Coating(CoatingPath { asymptote: a, mu, coef: vec![b], gamma: g, w, covariates: vec![x] }), Direction::Decreasing)
            }),
        ]
    }

    proptest! {
        #[test]
        fn paths_are_monotone((path, dir) in arb_path(), t1 in 0.0..200.0f64, dt in 0.0..200.0f64) {
            let s = if dir == Direction::Increasing { 1.0 } else { -1.0 };
            let t2 = t1 + dt;
            match (path.evaluate(t1), path.evaluate(t2)) {
                (Ok(a), Ok(b)) => prop_assert!(s * b >= s * a - 1e-12 * a.abs().max(1.0)),
                (Ok(_), Err(Error::Singularity { .. })) => {}
                (Err(Error::Singularity { .. }), Err(Error::Singularity { .. })) => {}
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }

        #[test]
        fn crossing_is_consistent((path, dir) in arb_path(), frac in 0.05..0.95f64, t_ref in 0.5..150.0f64) {
            // choose a threshold the path certainly reaches: its value at t_ref, shrunk toward D(0)
            let d0 = path.evaluate(0.0).unwrap();
            let target = match path.evaluate(t_ref) { Ok(v) => v, Err(_) => return Ok(()) };
            let level = d0 + frac * (target - d0);
            if (level - d0).abs() < 1e-9 { return Ok(()); }
            let th = FailureThreshold { value: level, direction: dir };
            let t = path.first_crossing_time(&th).unwrap().expect("reachable level");
            let v = path.evaluate(t).unwrap();
            prop_assert!((v - level).abs() <= 1e-8 * level.abs().max(1e-12) + 1e-13, "t={} v={} level={}", t, v, level);
        }
    }
}
