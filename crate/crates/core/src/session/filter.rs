use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Project, SessionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFilter {
    pub model_id: String,
    pub min: f64,
    pub max: f64,
}

impl AxisFilter {
    pub fn contains(&self, value: f64) -> bool {
        self.min <= value && value <= self.max
    }
}

/// Active predicates. Kinds combine by logical AND.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSet {
    pub axis_filters: Vec<AxisFilter>,
    pub category_filter: Option<BTreeSet<String>>,
    /// Polygon vertices, implicitly closed.
    pub lasso: Option<Vec<[f64; 2]>>,
    /// Select among probe sentences instead of corpus records.
    pub probe_only: bool,
}

impl FilterSet {
    pub fn is_empty(&self) -> bool {
        self.axis_filters.is_empty() && self.category_filter.is_none() && self.lasso.is_none() && !self.probe_only
    }

    /// Sets the interval for one model, replacing any previous one.
    pub fn set_axis_filter(&mut self, model_id: impl Into<String>, min: f64, max: f64) {
        let model_id = model_id.into();
        self.axis_filters.retain(|f| f.model_id != model_id);
        self.axis_filters.push(AxisFilter { model_id, min, max });
    }

    pub fn clear_axis_filter(&mut self, model_id: &str) {
        self.axis_filters.retain(|f| f.model_id != model_id);
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let mut seen = BTreeSet::new();
        for f in &self.axis_filters {
            if !(f.min.is_finite() && f.max.is_finite()) || f.min > f.max {
                return Err(SessionError::InvalidFilter(format!(
                    "axis filter on {} has min {} > max {} or a non-finite bound",
                    f.model_id, f.min, f.max
                )));
            }
            if !seen.insert(f.model_id.as_str()) {
                return Err(SessionError::InvalidFilter(format!("more than one axis filter on {}", f.model_id)));
            }
        }
        if let Some(polygon) = &self.lasso {
            if polygon.len() < 3 {
                return Err(SessionError::InvalidFilter(format!("lasso needs at least 3 vertices, got {}", polygon.len())));
            }
            if polygon.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
                return Err(SessionError::InvalidFilter("lasso has a non-finite vertex".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Matching ids in corpus (or probe) order.
    pub ids: Vec<String>,
    /// Sorted labels of the predicates that produced the selection.
    pub provenance: Vec<String>,
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross != 0.0 {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Even-odd ray casting; points on an edge or vertex count as inside.
pub fn point_in_polygon(point: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if on_segment(point, a, b) {
            return true;
        }
        if (a[1] > point[1]) != (b[1] > point[1]) {
            let x = a[0] + (point[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if point[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Resolves a filter set against a project. Pure: the result depends only on
/// the arguments.
pub fn apply_filters(project: &Project, filters: &FilterSet) -> Result<Selection, SessionError> {
    filters.validate()?;
    for f in &filters.axis_filters {
        if !project.scores.contains_model(&f.model_id) {
            return Err(SessionError::UnscoredModel(f.model_id.clone()));
        }
    }
    let embedding = match &filters.lasso {
        Some(_) => Some(project.active_embedding().ok_or(SessionError::NoActiveEmbedding)?),
        None => None,
    };

    let mut provenance: Vec<String> = filters.axis_filters.iter().map(|f| format!("axis:{}", f.model_id)).collect();
    if filters.category_filter.is_some() {
        provenance.push("category".into());
    }
    if filters.lasso.is_some() {
        provenance.push("lasso".into());
    }
    if filters.probe_only {
        provenance.push("probe_only".into());
    }
    provenance.sort();

    let ids = if filters.probe_only {
        project
            .probes
            .iter()
            .filter(|probe| {
                filters.category_filter.is_none()
                    && filters.lasso.is_none()
                    && filters.axis_filters.iter().all(|f| probe.pll(&f.model_id).is_some_and(|v| f.contains(v)))
            })
            .map(|p| p.id.clone())
            .collect()
    } else {
        project
            .corpus
            .records()
            .par_iter()
            .filter(|r| {
                let axes = filters
                    .axis_filters
                    .iter()
                    .all(|f| project.scores.pll(&r.id, &f.model_id).is_some_and(|v| f.contains(v)));
                let category = filters.category_filter.as_ref().is_none_or(|set| set.contains(&r.category));
                let lasso = match (&filters.lasso, embedding) {
                    (Some(polygon), Some(e)) => e.point(&r.id).is_some_and(|p| point_in_polygon(p, polygon)),
                    _ => true,
                };
                axes && category && lasso
            })
            .map(|r| r.id.clone())
            .collect()
    };
    Ok(Selection { ids, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    #[test]
    fn unit_square() {
        assert!(point_in_polygon([0.5, 0.5], &SQUARE));
        assert!(!point_in_polygon([1.5, 0.5], &SQUARE));
        assert!(point_in_polygon([1.0, 0.5], &SQUARE));
        assert!(point_in_polygon([0.0, 0.0], &SQUARE));
        assert!(point_in_polygon([0.5, 1.0], &SQUARE));
    }

    #[test]
    fn zero_area_polygon_keeps_only_boundary() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(point_in_polygon([0.5, 0.5], &line));
        assert!(!point_in_polygon([0.5, 0.6], &line));
        assert!(!point_in_polygon([3.0, 3.0], &line));
    }

    #[test]
    fn concave_polygon() {
        let u = [[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [2.0, 3.0], [2.0, 1.0], [1.0, 1.0], [1.0, 3.0], [0.0, 3.0]];
        assert!(point_in_polygon([0.5, 2.0], &u));
        assert!(!point_in_polygon([1.5, 2.0], &u));
        assert!(point_in_polygon([1.5, 0.5], &u));
    }

    #[test]
    fn validation() {
        let mut f = FilterSet::default();
        f.set_axis_filter("m", -4.0, -5.0);
        assert!(f.validate().is_err());
        f.set_axis_filter("m", -5.0, -4.0);
        assert_eq!(f.axis_filters.len(), 1);
        assert!(f.validate().is_ok());
        f.lasso = Some(vec![[0.0, 0.0], [1.0, 1.0]]);
        assert!(f.validate().is_err());
    }

    fn convex_polygon(k: usize, phase: f64, radius: f64, center: [f64; 2]) -> Vec<[f64; 2]> {
        (0..k)
            .map(|i| {
                let t = phase + i as f64 * std::f64::consts::TAU / k as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect()
    }

    /// Inside iff on the left of (or on) every counter-clockwise edge.
    fn half_plane_oracle(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
        (0..poly.len()).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        })
    }

    proptest! {
        #[test]
        fn convex_matches_half_planes(
            k in 3usize..9,
            phase in 0.0f64..std::f64::consts::TAU,
            radius in 0.1f64..5.0,
            cx in -3.0f64..3.0,
            cy in -3.0f64..3.0,
            points in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 500),
        ) {
            let poly = convex_polygon(k, phase, radius, [cx, cy]);
            for (x, y) in points {
                let p = [x, y];
                let cross_min = (0..poly.len()).map(|i| {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])).abs()
                }).fold(f64::INFINITY, f64::min);
                // Points within rounding distance of an edge line are ambiguous.
                if cross_min <= 1e-9 {
                    continue;
                }
                prop_assert_eq!(point_in_polygon(p, &poly), half_plane_oracle(p, &poly));
            }
        }
    }
}
