use super::nsga::{Fitness, Objectives};

/// Exact hypervolume dominated by `points` and bounded by `reference`, all
/// three objectives treated as costs. Points that do not strictly improve on
/// the reference in every objective contribute nothing.
pub fn hypervolume_costs(points: &[[f64; 3]], reference: [f64; 3]) -> f64 {
    let mut pts: Vec<[f64; 3]> = points
        .iter()
        .copied()
        .filter(|p| (0..3).all(|k| p[k] < reference[k]))
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut volume = 0.0;
    for i in 0..pts.len() {
        let next = if i + 1 < pts.len() { pts[i + 1][0] } else { reference[0] };
        let depth = next - pts[i][0];
        if depth > 0.0 {
            volume += depth * area_2d(&pts[..=i], [reference[1], reference[2]]);
        }
    }
    volume
}

/// Area dominated in the last two coordinates.
fn area_2d(points: &[[f64; 3]], reference: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[1], p[2]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut ceiling = reference[1];
    for p in &pts {
        if p[1] >= ceiling {
            continue;
        }
        area += (reference[0] - p[0]) * (ceiling - p[1]);
        ceiling = p[1];
    }
    area
}

/// Reference point with zero accuracy and costs 10% above the largest seen
/// in `sets`.
pub fn reference_point<'a>(sets: impl IntoIterator<Item = &'a [Objectives]>) -> Objectives {
    let mut reference = Objectives {
        accuracy: 0.0,
        mult_adds: 0,
        params: 0,
    };
    for o in sets.into_iter().flatten() {
        reference.mult_adds = reference.mult_adds.max(o.mult_adds);
        reference.params = reference.params.max(o.params);
    }
    reference.mult_adds = (reference.mult_adds as f64 * 1.1).ceil() as u64;
    reference.params = (reference.params as f64 * 1.1).ceil() as u64;
    reference
}

/// Hypervolume of search objectives: accuracy above the reference times
/// the cost savings below it.
pub fn hypervolume(points: &[Objectives], reference: &Objectives) -> f64 {
    let costs: Vec<[f64; 3]> = points.iter().map(|p| [p.cost(0), p.cost(1), p.cost(2)]).collect();
    hypervolume_costs(&costs, [reference.cost(0), reference.cost(1), reference.cost(2)])
}
