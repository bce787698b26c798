//! View requirement matrices, the per-slot required-view schedule,
//! random view generation, and per-item delivery bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Delivery outcome of one required (vehicle, category) cell within a
/// slot. Times are retained for audit even when the attempt failed;
/// `transmission_s` is absent when the item was undeliverable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub success: bool,
    pub inter_arrival_s: f64,
    pub wait_s: f64,
    pub transmission_s: Option<f64>,
}

/// A view: the set of (vehicle, category) cells an application needs
/// fused at the RSU, plus this slot's delivery outcomes for those cells.
/// The requirement is static for a run; outcomes are reset every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub id: u32,
    required: BTreeSet<(u32, u32)>,
    deliveries: BTreeMap<(u32, u32), Delivery>,
}

impl View {
    pub fn new(id: u32, required: BTreeSet<(u32, u32)>) -> Result<Self> {
        if required.is_empty() {
            return Err(Error::InvalidInput(format!(
                "view {id} requires at least one cell"
            )));
        }
        Ok(View {
            id,
            required,
            deliveries: BTreeMap::new(),
        })
    }

    pub fn required_cells(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.required.iter().copied()
    }

    pub fn requires(&self, vehicle: u32, category: u32) -> bool {
        self.required.contains(&(vehicle, category))
    }

    pub fn required_count(&self) -> usize {
        self.required.len()
    }

    /// Categories this view requires of `vehicle`.
    pub fn required_categories(&self, vehicle: u32) -> impl Iterator<Item = u32> + '_ {
        self.required
            .range((vehicle, 0)..=(vehicle, u32::MAX))
            .map(|&(_, j)| j)
    }

    /// Records the delivery outcome for a required cell; re-recording
    /// within the slot overwrites. Recording a non-required cell is a
    /// contract violation.
    pub fn record_delivery(&mut self, vehicle: u32, category: u32, outcome: Delivery) -> Result<()> {
        if !self.requires(vehicle, category) {
            return Err(Error::InvalidInput(format!(
                "view {} does not require cell ({vehicle}, {category})",
                self.id
            )));
        }
        self.deliveries.insert((vehicle, category), outcome);
        Ok(())
    }

    pub fn deliveries(&self) -> impl Iterator<Item = (&(u32, u32), &Delivery)> {
        self.deliveries.iter()
    }

    pub fn delivery(&self, vehicle: u32, category: u32) -> Option<&Delivery> {
        self.deliveries.get(&(vehicle, category))
    }

    /// Clears the slot's outcomes; the requirement is untouched.
    pub fn reset_deliveries(&mut self) {
        self.deliveries.clear();
    }

    /// Copy of this view with every delivery by `vehicle` marked failed,
    /// used for counterfactual re-scoring.
    pub fn without_vehicle(&self, vehicle: u32) -> View {
        let mut counterfactual = self.clone();
        for ((v, _), outcome) in counterfactual.deliveries.iter_mut() {
            if *v == vehicle {
                outcome.success = false;
            }
        }
        counterfactual
    }
}

/// Which views the RSU requires at each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSchedule {
    /// Sorted view ids per slot.
    pub per_slot: Vec<Vec<u32>>,
}

impl ViewSchedule {
    pub fn scheduled(&self, slot: u32) -> &[u32] {
        &self.per_slot[slot as usize]
    }
}

/// Generates `n_views` random requirement matrices whose expected total
/// required data size matches `target_mean_size_bits`, plus a schedule
/// assigning each slot a non-empty random subset.
///
/// Cell counts use randomized rounding of target / mean-item-size, so the
/// expectation matches the target exactly whenever it is feasible.
pub fn generate_views(
    n_views: u32,
    target_mean_size_bits: f64,
    n_vehicles: u32,
    n_categories: u32,
    mean_item_size_bits: f64,
    horizon_slots: u32,
    rng: &mut impl Rng,
) -> Result<(Vec<View>, ViewSchedule)> {
    if n_views == 0 {
        return Err(Error::InvalidInput("cannot schedule zero views".into()));
    }
    if !(mean_item_size_bits > 0.0) {
        return Err(Error::InvalidInput("mean item size must be > 0".into()));
    }
    let max_cells = (n_vehicles as usize) * (n_categories as usize);
    let ideal = target_mean_size_bits / mean_item_size_bits;
    if ideal < 0.5 || ideal > max_cells as f64 + 0.5 {
        return Err(Error::Infeasible(format!(
            "target view size of {ideal:.2} cells outside the feasible [1, {max_cells}] range"
        )));
    }

    let mut views = Vec::with_capacity(n_views as usize);
    for id in 0..n_views {
        let base = ideal.floor() as usize;
        let n_cells = (base + usize::from(rng.random_bool(ideal.fract())))
            .clamp(1, max_cells);
        let mut cells = BTreeSet::new();
        while cells.len() < n_cells {
            cells.insert((
                rng.random_range(0..n_vehicles),
                rng.random_range(0..n_categories),
            ));
        }
        views.push(View::new(id, cells)?);
    }

    let per_slot = (0..horizon_slots)
        .map(|_| {
            let k = rng.random_range(1..=n_views);
            let mut ids = BTreeSet::new();
            while (ids.len() as u32) < k {
                ids.insert(rng.random_range(0..n_views));
            }
            ids.into_iter().collect()
        })
        .collect();

    Ok((views, ViewSchedule { per_slot }))
}

/// Expected total required data of one view, bits.
pub fn expected_view_size_bits(view: &View, mean_item_size_bits: f64) -> f64 {
    view.required_count() as f64 * mean_item_size_bits
}

/// Writes views as `view_id,vehicle_id,category_j` rows.
pub fn export_views_csv(path: impl AsRef<Path>, views: &[View]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(["view_id", "vehicle_id", "category_j"])?;
    for view in views {
        for (vehicle, category) in view.required_cells() {
            writer.write_record([
                view.id.to_string(),
                vehicle.to_string(),
                category.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads views from the CSV layout written by [`export_views_csv`].
pub fn import_views_csv(path: impl AsRef<Path>) -> Result<Vec<View>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut cells: BTreeMap<u32, BTreeSet<(u32, u32)>> = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        let err = || Error::Ingest {
            line,
            message: format!("malformed view row {record:?}"),
        };
        if record.len() != 3 {
            return Err(err());
        }
        let view_id: u32 = record[0].parse().map_err(|_| err())?;
        let vehicle: u32 = record[1].parse().map_err(|_| err())?;
        let category: u32 = record[2].parse().map_err(|_| err())?;
        cells.entry(view_id).or_default().insert((vehicle, category));
    }
    cells
        .into_iter()
        .map(|(id, required)| View::new(id, required))
        .collect()
}
