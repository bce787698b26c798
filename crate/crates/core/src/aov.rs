//! The Age-of-View metric: timeliness, completeness, consistency,
//! min-max normalization, the weighted AoV, and the period objective.
//!
//! Raw timeliness and consistency are normalized against a running
//! min/max window maintained over all views scored so far in the
//! episode. Views scored within one slot are added to the window as a
//! batch before any of them is normalized, so every score of a slot —
//! including counterfactual re-scorings for credit assignment — sees the
//! same window.

use serde::{Deserialize, Serialize};

use crate::views::View;
use crate::{Error, Result};

/// AoV weighting factors; must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub timeliness: f64,
    pub completeness: f64,
    pub consistency: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            timeliness: 0.3,
            completeness: 0.4,
            consistency: 0.3,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let sum = self.timeliness + self.completeness + self.consistency;
        if self.timeliness < 0.0 || self.completeness < 0.0 || self.consistency < 0.0 {
            return Err(Error::InvalidInput("AoV weights must be >= 0".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "AoV weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Scored quality of one view at one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view_id: u32,
    /// Raw timeliness, seconds.
    pub theta: f64,
    /// Completeness in [0, 1].
    pub chi: f64,
    /// Raw consistency, seconds^2.
    pub xi: f64,
    pub theta_hat: f64,
    pub xi_hat: f64,
    pub aov: f64,
}

/// Timeliness: sum over delivered required cells of inter-arrival +
/// queuing + transmission time. Failed cells contribute nothing, so an
/// all-failed view has theta = 0; the completeness term carries the
/// penalty.
pub fn timeliness(view: &View) -> f64 {
    view.deliveries()
        .filter(|(_, d)| d.success)
        .map(|(_, d)| d.inter_arrival_s + d.wait_s + d.transmission_s.unwrap_or(0.0))
        .fold(0.0, |acc, t| acc + t)
}

/// Completeness: delivered cells over required cells.
pub fn completeness(view: &View) -> Result<f64> {
    let required = view.required_count();
    if required == 0 {
        return Err(Error::InvalidInput("view with zero required cells".into()));
    }
    let received = view.deliveries().filter(|(_, d)| d.success).count();
    Ok(received as f64 / required as f64)
}

/// Consistency: quadratic spread of delivered cells' (queuing +
/// transmission) times around their mean. Zero or one delivered cell
/// yields 0 by definition.
pub fn consistency(view: &View) -> f64 {
    let times: Vec<f64> = view
        .deliveries()
        .filter(|(_, d)| d.success)
        .map(|(_, d)| d.wait_s + d.transmission_s.unwrap_or(0.0))
        .collect();
    if times.is_empty() {
        return 0.0;
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.iter().map(|t| (t - mean) * (t - mean)).sum()
}

/// Min-max scaling of `v` over a tracked window; a degenerate window
/// (max == min, or empty) maps to 0.
pub fn normalize(values: &[f64], v: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scale(min, max, v)
}

fn scale(min: f64, max: f64, v: f64) -> f64 {
    if !(max > min) {
        return 0.0;
    }
    (v - min) / (max - min)
}

/// Running min/max window over the raw timeliness and consistency of all
/// views scored so far in the episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormWindow {
    theta_bounds: Option<(f64, f64)>,
    xi_bounds: Option<(f64, f64)>,
}

impl NormWindow {
    pub fn include(&mut self, theta: f64, xi: f64) {
        self.theta_bounds = widen(self.theta_bounds, theta);
        self.xi_bounds = widen(self.xi_bounds, xi);
    }

    pub fn normalize_theta(&self, theta: f64) -> f64 {
        match self.theta_bounds {
            Some((min, max)) => scale(min, max, theta),
            None => 0.0,
        }
    }

    pub fn normalize_xi(&self, xi: f64) -> f64 {
        match self.xi_bounds {
            Some((min, max)) => scale(min, max, xi),
            None => 0.0,
        }
    }
}

fn widen(bounds: Option<(f64, f64)>, v: f64) -> Option<(f64, f64)> {
    Some(match bounds {
        None => (v, v),
        Some((min, max)) => (min.min(v), max.max(v)),
    })
}

/// Weighted Age of View from normalized inputs; in [0, 1], lower is
/// better.
pub fn aov(theta_hat: f64, chi: f64, xi_hat: f64, weights: &Weights) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [("theta_hat", theta_hat), ("chi", chi), ("xi_hat", xi_hat)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!(
                "{name} = {v} outside [0, 1]"
            )));
        }
    }
    Ok(weights.timeliness * theta_hat
        + weights.completeness * (1.0 - chi)
        + weights.consistency * xi_hat)
}

/// Scores a batch of views (one slot's worth): raw metrics first extend
/// the window, then every view is normalized against the updated window.
pub fn score_views_batch(
    views: &[&View],
    window: &mut NormWindow,
    weights: &Weights,
) -> Result<Vec<ViewScore>> {
    let raw: Vec<(f64, f64, f64)> = views
        .iter()
        .map(|v| Ok((timeliness(v), completeness(v)?, consistency(v))))
        .collect::<Result<_>>()?;
    for &(theta, _, xi) in &raw {
        window.include(theta, xi);
    }
    score_raw(views, &raw, window, weights)
}

/// Scores views against a frozen window without updating it; used for
/// counterfactual re-scoring.
pub fn score_views_frozen(
    views: &[&View],
    window: &NormWindow,
    weights: &Weights,
) -> Result<Vec<ViewScore>> {
    let raw: Vec<(f64, f64, f64)> = views
        .iter()
        .map(|v| Ok((timeliness(v), completeness(v)?, consistency(v))))
        .collect::<Result<_>>()?;
    score_raw(views, &raw, window, weights)
}

fn score_raw(
    views: &[&View],
    raw: &[(f64, f64, f64)],
    window: &NormWindow,
    weights: &Weights,
) -> Result<Vec<ViewScore>> {
    views
        .iter()
        .zip(raw)
        .map(|(view, &(theta, chi, xi))| {
            // Out-of-window values can arise in counterfactual scoring;
            // clamp into the scaler's range.
            let theta_hat = window.normalize_theta(theta).clamp(0.0, 1.0);
            let xi_hat = window.normalize_xi(xi).clamp(0.0, 1.0);
            Ok(ViewScore {
                view_id: view.id,
                theta,
                chi,
                xi,
                theta_hat,
                xi_hat,
                aov: aov(theta_hat, chi, xi_hat, weights)?,
            })
        })
        .collect()
}

/// Period objective: average over slots of the slot's mean AoV. Slots
/// with no required views are skipped unless `include_empty_slots`, in
/// which case they contribute 0 and count toward the average.
pub fn objective(per_slot_aov: &[Vec<f64>], include_empty_slots: bool) -> f64 {
    let mut total = 0.0;
    let mut slots = 0usize;
    for slot in per_slot_aov {
        if slot.is_empty() {
            if include_empty_slots {
                slots += 1;
            }
            continue;
        }
        total += slot.iter().sum::<f64>() / slot.len() as f64;
        slots += 1;
    }
    if slots == 0 {
        0.0
    } else {
        total / slots as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::views::Delivery;
    use std::collections::BTreeSet;

    fn view_with(outcomes: &[(u32, u32, bool, f64, f64, f64)]) -> View {
        let required: BTreeSet<(u32, u32)> =
            outcomes.iter().map(|&(i, j, ..)| (i, j)).collect();
        let mut view = View::new(0, required).unwrap();
        for &(i, j, success, int, wai, tra) in outcomes {
            view.record_delivery(
                i,
                j,
                Delivery {
                    success,
                    inter_arrival_s: int,
                    wait_s: wai,
                    transmission_s: Some(tra),
                },
            )
            .unwrap();
        }
        view
    }

    #[test]
    fn timeliness_single_cell() {
        let v = view_with(&[(0, 0, true, 1.0, 0.25, 0.1)]);
        assert!((timeliness(&v) - 1.35).abs() < 1e-12);
    }

    #[test]
    fn timeliness_skips_failed_cells() {
        let v = view_with(&[(0, 0, true, 1.0, 0.25, 0.1), (1, 0, false, 9.0, 9.0, 9.0)]);
        assert!((timeliness(&v) - 1.35).abs() < 1e-12);
    }

    #[test]
    fn timeliness_all_failed_is_zero() {
        let v = view_with(&[(0, 0, false, 1.0, 0.25, 0.1)]);
        assert_eq!(timeliness(&v), 0.0);
    }

    #[test]
    fn completeness_ratios() {
        let full = view_with(&[
            (0, 0, true, 1.0, 0.1, 0.1),
            (1, 0, true, 1.0, 0.1, 0.1),
            (2, 0, true, 1.0, 0.1, 0.1),
            (3, 0, true, 1.0, 0.1, 0.1),
        ]);
        assert_eq!(completeness(&full).unwrap(), 1.0);
        let quarter = view_with(&[
            (0, 0, true, 1.0, 0.1, 0.1),
            (1, 0, false, 1.0, 0.1, 0.1),
            (2, 0, false, 1.0, 0.1, 0.1),
            (3, 0, false, 1.0, 0.1, 0.1),
        ]);
        assert_eq!(completeness(&quarter).unwrap(), 0.25);
        let none = view_with(&[
            (0, 0, false, 1.0, 0.1, 0.1),
            (1, 0, false, 1.0, 0.1, 0.1),
            (2, 0, false, 1.0, 0.1, 0.1),
            (3, 0, false, 1.0, 0.1, 0.1),
        ]);
        assert_eq!(completeness(&none).unwrap(), 0.0);
    }

    #[test]
    fn consistency_identical_times_is_zero() {
        let v = view_with(&[(0, 0, true, 1.0, 0.2, 0.1), (1, 0, true, 1.0, 0.25, 0.05)]);
        assert!(consistency(&v).abs() < 1e-15);
    }

    #[test]
    fn consistency_hand_value() {
        let v = view_with(&[(0, 0, true, 1.0, 0.1, 0.1), (1, 0, true, 1.0, 0.2, 0.2)]);
        assert!((consistency(&v) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn consistency_degenerate_cases() {
        let single = view_with(&[(0, 0, true, 1.0, 0.3, 0.1)]);
        assert_eq!(consistency(&single), 0.0);
        let empty = view_with(&[(0, 0, false, 1.0, 0.3, 0.1)]);
        assert_eq!(consistency(&empty), 0.0);
    }

    #[test]
    fn consistency_translation_invariant() {
        let a = view_with(&[(0, 0, true, 1.0, 0.1, 0.1), (1, 0, true, 1.0, 0.3, 0.2)]);
        let b = view_with(&[(0, 0, true, 9.0, 1.1, 0.1), (1, 0, true, 9.0, 1.3, 0.2)]);
        assert!((consistency(&a) - consistency(&b)).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[1.0, 3.0], 3.0), 1.0);
        assert_eq!(normalize(&[2.0, 2.0], 2.0), 0.0);
        assert_eq!(normalize(&[0.0, 4.0], 1.0), 0.25);
    }

    #[test]
    fn aov_extremes_and_midpoint() {
        let w = Weights::default();
        assert_eq!(aov(0.0, 1.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(aov(1.0, 0.0, 1.0, &w).unwrap(), 1.0);
        assert!((aov(0.5, 0.5, 0.5, &w).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aov_rejects_bad_weights() {
        let w = Weights {
            timeliness: 0.5,
            completeness: 0.5,
            consistency: 0.5,
        };
        assert!(aov(0.5, 0.5, 0.5, &w).is_err());
    }

    #[test]
    fn objective_examples() {
        assert!((objective(&[vec![0.4]], false) - 0.4).abs() < 1e-15);
        assert!((objective(&[vec![0.2], vec![0.4, 0.6]], false) - 0.35).abs() < 1e-12);
        assert_eq!(objective(&[vec![0.0], vec![0.0]], false), 0.0);
    }

    #[test]
    fn objective_empty_slot_handling() {
        let slots = vec![vec![0.4], vec![]];
        assert!((objective(&slots, false) - 0.4).abs() < 1e-15);
        assert!((objective(&slots, true) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn batch_scoring_shares_one_window() {
        let w = Weights::default();
        let mut window = NormWindow::default();
        let a = view_with(&[(0, 0, true, 1.0, 0.1, 0.1)]); // theta 1.2
        let b = view_with(&[(0, 0, true, 2.0, 0.3, 0.1)]); // theta 2.4
        let scores = score_views_batch(&[&a, &b], &mut window, &w).unwrap();
        // Window spans [1.2, 2.4] for both views of the batch.
        assert_eq!(scores[0].theta_hat, 0.0);
        assert_eq!(scores[1].theta_hat, 1.0);
    }

    #[test]
    fn frozen_scoring_does_not_move_window() {
        let w = Weights::default();
        let mut window = NormWindow::default();
        let a = view_with(&[(0, 0, true, 1.0, 0.1, 0.1)]);
        let b = view_with(&[(0, 0, true, 2.0, 0.3, 0.1)]);
        score_views_batch(&[&a, &b], &mut window, &w).unwrap();
        let before = window;
        let wild = view_with(&[(0, 0, true, 50.0, 9.0, 1.0)]);
        let s = score_views_frozen(&[&wild], &window, &w).unwrap();
        assert_eq!(window, before);
        // Out-of-window raw value clamps to 1.
        assert_eq!(s[0].theta_hat, 1.0);
    }
}
